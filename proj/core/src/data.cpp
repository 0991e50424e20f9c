#include "minidetr/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "minidetr/errors.hpp"
#include "minidetr/image_io.hpp"
#include "minidetr/rng.hpp"

namespace minidetr {

using nlohmann::json;

namespace {

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError(path + ": cannot open file");
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw ValidationError(path + ": JSON parse error: " + e.what());
    }
    return j;
}

void validate_box(const Box& b, const std::string& where) {
    if (!box_in_unit_square(b) || b.w <= 0.0 || b.h <= 0.0) {
        std::ostringstream os;
        os << where << ": box (" << b.cx << ", " << b.cy << ", " << b.w << ", " << b.h
           << ") outside [0,1] or degenerate";
        throw ValidationError(os.str());
    }
}

}  // namespace

// ------------------------------------------------------------------- coco

Dataset load_coco_annotations(const std::string& annotation_file, const std::string& image_dir) {
    json j = load_json_file(annotation_file);
    if (!j.is_object() || !j.contains("images") || !j.contains("annotations") || !j.contains("categories")) {
        throw ValidationError(annotation_file + ": expected object with images/annotations/categories");
    }

    // dense remap in ascending original category id
    std::map<int, std::string> cats;
    for (size_t i = 0; i < j["categories"].size(); ++i) {
        const json& c = j["categories"][i];
        if (!c.contains("id") || !c.contains("name")) {
            throw ValidationError(annotation_file + ": malformed category record " + std::to_string(i));
        }
        cats[c["id"].get<int>()] = c["name"].get<std::string>();
    }
    std::map<int, int> cat_remap;
    DatasetManifest manifest;
    manifest.source = "coco-json";
    manifest.name = annotation_file;
    for (const auto& [orig_id, name] : cats) {
        cat_remap[orig_id] = static_cast<int>(manifest.class_names.size());
        manifest.class_names.push_back(name);
    }

    struct ImgMeta {
        std::string file_name;
        double w = 0.0, h = 0.0;
        int index = -1;
    };
    std::map<int, ImgMeta> metas;
    Dataset ds;
    for (size_t i = 0; i < j["images"].size(); ++i) {
        const json& im = j["images"][i];
        if (!im.contains("id") || !im.contains("file_name") || !im.contains("width") || !im.contains("height")) {
            throw ValidationError(annotation_file + ": malformed image record " + std::to_string(i));
        }
        ImgMeta m;
        m.file_name = im["file_name"].get<std::string>();
        m.w = im["width"].get<double>();
        m.h = im["height"].get<double>();
        if (m.w <= 0 || m.h <= 0) {
            throw ValidationError(annotation_file + ": non-positive extent in image record " + std::to_string(i));
        }
        m.index = static_cast<int>(ds.samples.size());
        int id = im["id"].get<int>();
        metas[id] = m;
        AnnotatedSample s;
        s.image_id = id;
        std::string path = image_dir.empty() ? m.file_name : image_dir + "/" + m.file_name;
        s.image = image_read(path);
        ds.samples.push_back(std::move(s));
    }

    for (size_t i = 0; i < j["annotations"].size(); ++i) {
        const json& a = j["annotations"][i];
        if (!a.contains("image_id") || !a.contains("category_id") || !a.contains("bbox") ||
            !a["bbox"].is_array() || a["bbox"].size() != 4) {
            throw ValidationError(annotation_file + ": malformed annotation record " + std::to_string(i));
        }
        int image_id = a["image_id"].get<int>();
        auto mit = metas.find(image_id);
        if (mit == metas.end()) {
            throw ValidationError(annotation_file + ": annotation record " + std::to_string(i) +
                                  " references unknown image id " + std::to_string(image_id));
        }
        int cat = a["category_id"].get<int>();
        auto cit = cat_remap.find(cat);
        if (cit == cat_remap.end()) {
            throw ValidationError(annotation_file + ": annotation record " + std::to_string(i) +
                                  " references unknown category id " + std::to_string(cat));
        }
        double x = a["bbox"][0].get<double>(), y = a["bbox"][1].get<double>();
        double w = a["bbox"][2].get<double>(), h = a["bbox"][3].get<double>();
        const ImgMeta& m = mit->second;
        // normalize, clipping annotation slop at the image border
        double x0 = std::clamp(x / m.w, 0.0, 1.0), y0 = std::clamp(y / m.h, 0.0, 1.0);
        double x1 = std::clamp((x + w) / m.w, 0.0, 1.0), y1 = std::clamp((y + h) / m.h, 0.0, 1.0);
        if (x1 <= x0 || y1 <= y0) {
            throw ValidationError(annotation_file + ": annotation record " + std::to_string(i) +
                                  " has a degenerate box");
        }
        GroundTruth gt;
        gt.image_id = image_id;
        gt.class_id = cit->second;
        gt.box = Box::from_corners(x0, y0, x1, y1);
        validate_box(gt.box, annotation_file + ": annotation record " + std::to_string(i));
        ds.samples[m.index].gts.push_back(gt);
    }

    manifest.sample_count = static_cast<int>(ds.samples.size());
    ds.manifest = manifest;
    return ds;
}

// -------------------------------------------------------------- synthetic

namespace {

// Painter-order rasterizers; colors overwrite whatever is beneath.
void draw_rect(Image& img, int x0, int y0, int x1, int y1, const double rgb[3]) {
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = rgb[c];
}

void draw_circle(Image& img, int cx, int cy, int r, const double rgb[3]) {
    for (int y = cy - r; y <= cy + r; ++y)
        for (int x = cx - r; x <= cx + r; ++x) {
            double dx = x - cx, dy = y - cy;
            if (dx * dx + dy * dy <= static_cast<double>(r) * r) {
                for (int c = 0; c < 3; ++c) img.at(y, x, c) = rgb[c];
            }
        }
}

void draw_triangle(Image& img, int x0, int y0, int x1, int y1, const double rgb[3]) {
    // isoceles: apex at top-center, base along the bottom edge
    double apex_x = (x0 + x1) / 2.0;
    int h = y1 - y0;
    for (int y = y0; y <= y1; ++y) {
        double t = h == 0 ? 1.0 : static_cast<double>(y - y0) / h;
        double half = t * (x1 - x0) / 2.0;
        int xa = static_cast<int>(std::ceil(apex_x - half));
        int xb = static_cast<int>(std::floor(apex_x + half));
        for (int x = xa; x <= xb; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = rgb[c];
    }
}

}  // namespace

Dataset generate_synthetic_shapes(int n, int max_objects, int image_size, unsigned long long seed) {
    if (n <= 0) throw ValidationError("generate_synthetic_shapes: n must be > 0");
    if (max_objects <= 0) throw ValidationError("generate_synthetic_shapes: max_objects must be > 0");
    if (image_size < 32) throw ValidationError("generate_synthetic_shapes: image_size must be >= 32");
    Rng rng(seed);
    Dataset ds;
    ds.manifest.name = "synthetic-shapes";
    ds.manifest.source = "synthetic";
    ds.manifest.seed = seed;
    ds.manifest.class_names = {"rectangle", "circle", "triangle"};
    ds.manifest.sample_count = n;
    const int S = image_size;
    const int min_px = std::max(12, S * 24 / 128);
    const int max_px = std::max(min_px + 4, S * 52 / 128);

    for (int i = 0; i < n; ++i) {
        AnnotatedSample sample;
        sample.image_id = i;
        Image img(S, S);
        double bg_level = rng.uniform(0.05, 0.11);
        double bg[3] = {bg_level, bg_level, bg_level};
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x)
                for (int c = 0; c < 3; ++c) img.at(y, x, c) = std::clamp(bg[c] + rng.uniform(-0.02, 0.02), 0.0, 1.0);

        int want = 1 + static_cast<int>(rng.uniform_index(static_cast<size_t>(max_objects)));
        for (int obj = 0; obj < want; ++obj) {
            bool placed = false;
            for (int attempt = 0; attempt < 20 && !placed; ++attempt) {
                int cls = static_cast<int>(rng.uniform_index(3));
                int w_px = min_px + static_cast<int>(rng.uniform_index(static_cast<size_t>(max_px - min_px + 1)));
                int h_px = min_px + static_cast<int>(rng.uniform_index(static_cast<size_t>(max_px - min_px + 1)));
                if (cls == 1) {  // circle: square box, odd diameter so the center pixel is exact
                    if (w_px % 2 == 0) ++w_px;
                    h_px = w_px;
                }
                int x0 = 2 + static_cast<int>(rng.uniform_index(static_cast<size_t>(S - w_px - 4)));
                int y0 = 2 + static_cast<int>(rng.uniform_index(static_cast<size_t>(S - h_px - 4)));
                int x1 = x0 + w_px - 1, y1 = y0 + h_px - 1;
                Box cand = Box::from_corners(static_cast<double>(x0) / S, static_cast<double>(y0) / S,
                                             static_cast<double>(x1 + 1) / S, static_cast<double>(y1 + 1) / S);
                bool clash = false;
                for (const GroundTruth& g : sample.gts) {
                    if (iou(cand, g.box) > 0.2) {
                        clash = true;
                        break;
                    }
                }
                if (clash) continue;
                // class-keyed tints keep classes separable even after heavy
                // downsampling; jitter stops the net from keying on one value
                static const double kClassTint[3][3] = {
                    {0.85, 0.20, 0.20}, {0.20, 0.80, 0.25}, {0.25, 0.35, 0.90}};
                double rgb[3];
                for (int c = 0; c < 3; ++c)
                    rgb[c] = std::clamp(kClassTint[cls][c] + rng.uniform(-0.1, 0.1), 0.0, 1.0);
                if (cls == 0) {
                    draw_rect(img, x0, y0, x1, y1, rgb);
                } else if (cls == 1) {
                    int r = w_px / 2;
                    draw_circle(img, x0 + r, y0 + r, r, rgb);
                } else {
                    draw_triangle(img, x0, y0, x1, y1, rgb);
                }
                GroundTruth gt;
                gt.image_id = i;
                gt.class_id = cls;
                gt.box = cand;
                sample.gts.push_back(gt);
                placed = true;
            }
        }
        if (sample.gts.empty()) {
            // extremely unlikely fallback: a centered rectangle keeps the
            // 1..max_objects contract
            int w_px = min_px, h_px = min_px;
            int x0 = (S - w_px) / 2, y0 = (S - h_px) / 2;
            double rgb[3] = {0.9, 0.9, 0.9};
            draw_rect(img, x0, y0, x0 + w_px - 1, y0 + h_px - 1, rgb);
            GroundTruth gt;
            gt.image_id = i;
            gt.class_id = 0;
            gt.box = Box::from_corners(static_cast<double>(x0) / S, static_cast<double>(y0) / S,
                                       static_cast<double>(x0 + w_px) / S, static_cast<double>(y0 + h_px) / S);
            sample.gts.push_back(gt);
        }
        sample.image = std::move(img);
        ds.samples.push_back(std::move(sample));
    }
    return ds;
}

// ------------------------------------------------------------- detections

std::vector<Detection> import_external_detections(const std::string& path) {
    json j = load_json_file(path);
    if (!j.is_array()) throw ValidationError(path + ": expected a JSON array of detection records");
    std::vector<Detection> dets;
    dets.reserve(j.size());
    for (size_t i = 0; i < j.size(); ++i) {
        const json& r = j[i];
        std::string where = path + ": record " + std::to_string(i);
        if (!r.is_object() || !r.contains("image_id") || !r.contains("class_id") || !r.contains("score") ||
            !r.contains("bbox") || !r["bbox"].is_array() || r["bbox"].size() != 4) {
            throw ValidationError(where + ": expected {image_id, class_id, score, bbox[4], query_id?}");
        }
        Detection d;
        d.image_id = r["image_id"].get<int>();
        d.class_id = r["class_id"].get<int>();
        d.score = r["score"].get<double>();
        d.box = Box{r["bbox"][0].get<double>(), r["bbox"][1].get<double>(), r["bbox"][2].get<double>(),
                    r["bbox"][3].get<double>()};
        if (r.contains("query_id")) d.query_id = r["query_id"].get<int>();
        if (d.class_id < 0) throw ValidationError(where + ": negative class_id");
        if (d.score < 0.0 || d.score > 1.0) {
            throw ValidationError(where + ": score " + std::to_string(d.score) + " outside [0,1]");
        }
        validate_box(d.box, where);
        dets.push_back(d);
    }
    return dets;
}

void export_detections(const std::vector<Detection>& dets, const std::string& path) {
    json arr = json::array();
    for (const Detection& d : dets) {
        json r;
        r["image_id"] = d.image_id;
        r["class_id"] = d.class_id;
        r["score"] = d.score;
        r["bbox"] = {d.box.cx, d.box.cy, d.box.w, d.box.h};
        if (d.query_id >= 0) r["query_id"] = d.query_id;
        arr.push_back(std::move(r));
    }
    std::ofstream out(path);
    if (!out) throw RuntimeFailure(path + ": cannot open for writing");
    out << arr.dump(2) << "\n";
}

// --------------------------------------------------------------- manifest

std::string manifest_to_json(const DatasetManifest& m) {
    json j;
    j["name"] = m.name;
    j["sample_count"] = m.sample_count;
    j["class_names"] = m.class_names;
    j["source"] = m.source;
    j["seed"] = m.seed;
    return j.dump(2);
}

DatasetManifest manifest_from_json(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("manifest: JSON parse error: ") + e.what());
    }
    DatasetManifest m;
    m.name = j.at("name").get<std::string>();
    m.sample_count = j.at("sample_count").get<int>();
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    m.source = j.at("source").get<std::string>();
    m.seed = j.at("seed").get<unsigned long long>();
    return m;
}

}  // namespace minidetr
