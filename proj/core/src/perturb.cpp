#include "minidetr/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "minidetr/errors.hpp"
#include "minidetr/rng.hpp"

namespace minidetr {

namespace {

void require_grid_fits(const Image& img) {
    if (img.height < kOcclusionGrid || img.width < kOcclusionGrid) {
        throw ValidationError("occlusion: image smaller than the 10x10 patch grid");
    }
}

void require_ratio(double ratio) {
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw ValidationError("occlusion: ratio must lie in [0,1]");
}

void zero_patch(Image& img, int patch_index) {
    PatchRect r = patch_rect(patch_index, img.height, img.width);
    for (int y = r.y0; y < r.y1; ++y)
        for (int x = r.x0; x < r.x1; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = 0.0;
}

// replicate-border pixel read
double at_clamped(const Image& img, int y, int x, int c) {
    y = std::clamp(y, 0, img.height - 1);
    x = std::clamp(x, 0, img.width - 1);
    return img.at(y, x, c);
}

// single-channel field helpers (corruption patterns)
struct Field {
    int h = 0, w = 0;
    std::vector<double> v;
    Field(int h_, int w_) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, 0.0) {}
    double& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
    double at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
};

Field box_blur(const Field& f, int radius) {
    Field out(f.h, f.w);
    double inv = 1.0 / ((2 * radius + 1) * (2 * radius + 1));
    for (int y = 0; y < f.h; ++y) {
        for (int x = 0; x < f.w; ++x) {
            double s = 0.0;
            for (int dy = -radius; dy <= radius; ++dy) {
                int yy = std::clamp(y + dy, 0, f.h - 1);
                for (int dx = -radius; dx <= radius; ++dx) {
                    s += f.at(yy, std::clamp(x + dx, 0, f.w - 1));
                }
            }
            out.at(y, x) = s * inv;
        }
    }
    return out;
}

// seeded noise field, box-blurred and rescaled to span [0,1]
Field smooth_noise(int h, int w, Rng& rng, int radius) {
    Field f(h, w);
    for (double& x : f.v) x = rng.uniform();
    Field s = box_blur(f, radius);
    auto [lo, hi] = std::minmax_element(s.v.begin(), s.v.end());
    double span = *hi - *lo;
    if (span <= 0.0) span = 1.0;
    for (double& x : s.v) x = (x - *lo) / span;
    return s;
}

Image convolve_kernel(const Image& img, const std::vector<double>& k, int kh, int kw) {
    Image out(img.height, img.width);
    int cy = kh / 2, cx = kw / 2;
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                double s = 0.0;
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx)
                        s += k[static_cast<size_t>(ky) * kw + kx] *
                             at_clamped(img, y + ky - cy, x + kx - cx, c);
                out.at(y, x, c) = s;
            }
        }
    }
    return out;
}

Image disk_blur(const Image& img, int radius) {
    int side = 2 * radius + 1;
    std::vector<double> k(static_cast<size_t>(side) * side, 0.0);
    double total = 0.0;
    for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
            if (dy * dy + dx * dx <= radius * radius) {
                k[static_cast<size_t>(dy + radius) * side + (dx + radius)] = 1.0;
                total += 1.0;
            }
    for (double& x : k) x /= total;
    return convolve_kernel(img, k, side, side);
}

Image corrupt_gaussian(const Image& img, double sigma, Rng& rng) {
    Image out = img;
    for (double& v : out.pixels) v += sigma * rng.normal();
    return out;
}

Image corrupt_shot(const Image& img, double photons, Rng& rng) {
    Image out = img;
    for (double& v : out.pixels) v = static_cast<double>(rng.poisson(v * photons)) / photons;
    return out;
}

Image corrupt_impulse(const Image& img, double p, Rng& rng) {
    Image out = img;
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            // two draws per pixel, unconditionally, so severities share the
            // same stream and corrupted pixel sets nest as p grows
            double u = rng.uniform();
            double salt = rng.uniform() < 0.5 ? 0.0 : 1.0;
            if (u < p)
                for (int c = 0; c < 3; ++c) out.at(y, x, c) = salt;
        }
    }
    return out;
}

Image corrupt_glass(const Image& img, int passes, Rng& rng) {
    Image out = img;
    for (int pass = 0; pass < passes; ++pass) {
        for (int y = 0; y < img.height; ++y) {
            for (int x = 0; x < img.width; ++x) {
                int dy = static_cast<int>(rng.uniform_index(3)) - 1;
                int dx = static_cast<int>(rng.uniform_index(3)) - 1;
                int yy = std::clamp(y + dy, 0, img.height - 1);
                int xx = std::clamp(x + dx, 0, img.width - 1);
                for (int c = 0; c < 3; ++c) std::swap(out.at(y, x, c), out.at(yy, xx, c));
            }
        }
    }
    return out;
}

Image corrupt_motion(const Image& img, int length) {
    std::vector<double> k(static_cast<size_t>(length), 1.0 / length);
    return convolve_kernel(img, k, 1, length);
}

Image corrupt_zoom(const Image& img, double max_zoom) {
    const int steps = 7;
    Image out(img.height, img.width);
    double cy = (img.height - 1) / 2.0, cx = (img.width - 1) / 2.0;
    for (int i = 0; i < steps; ++i) {
        double z = 1.0 + (max_zoom - 1.0) * i / (steps - 1);
        for (int y = 0; y < img.height; ++y) {
            int sy = std::clamp(static_cast<int>(std::llround(cy + (y - cy) / z)), 0, img.height - 1);
            for (int x = 0; x < img.width; ++x) {
                int sx = std::clamp(static_cast<int>(std::llround(cx + (x - cx) / z)), 0, img.width - 1);
                for (int c = 0; c < 3; ++c) out.at(y, x, c) += img.at(sy, sx, c) / steps;
            }
        }
    }
    return out;
}

Image corrupt_snow(const Image& img, double density, Rng& rng) {
    Image out = img;
    long long flakes = std::llround(density * img.height * img.width);
    const int streak = 5;
    for (long long i = 0; i < flakes; ++i) {
        int y = static_cast<int>(rng.uniform_index(img.height));
        int x = static_cast<int>(rng.uniform_index(img.width));
        for (int s = 0; s < streak; ++s) {
            int yy = y + s, xx = x + s;  // down-right streak
            if (yy >= img.height || xx >= img.width) break;
            for (int c = 0; c < 3; ++c) out.at(yy, xx, c) = 0.2 * out.at(yy, xx, c) + 0.8;
        }
    }
    return out;
}

Image corrupt_frost(const Image& img, double amount, Rng& rng) {
    Field p = smooth_noise(img.height, img.width, rng, 4);
    Image out = img;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double bright = 0.45 + 0.55 * p.at(y, x);
            for (int c = 0; c < 3; ++c)
                out.at(y, x, c) = (1.0 - amount) * out.at(y, x, c) + amount * bright;
        }
    return out;
}

Image corrupt_fog(const Image& img, double thickness, Rng& rng) {
    Field p = smooth_noise(img.height, img.width, rng, 6);
    Image out = img;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double t = thickness * (0.35 + 0.65 * p.at(y, x));
            for (int c = 0; c < 3; ++c) out.at(y, x, c) += t * (0.95 - out.at(y, x, c));
        }
    return out;
}

Image corrupt_brightness(const Image& img, double shift) {
    Image out = img;
    for (double& v : out.pixels) v += shift;
    return out;
}

Image corrupt_contrast(const Image& img, double factor) {
    Image out = img;
    for (double& v : out.pixels) v = 0.5 + (v - 0.5) * factor;
    return out;
}

Image corrupt_elastic(const Image& img, double magnitude, Rng& rng) {
    Field fy(img.height, img.width), fx(img.height, img.width);
    for (double& v : fy.v) v = rng.uniform(-1.0, 1.0);
    for (double& v : fx.v) v = rng.uniform(-1.0, 1.0);
    fy = box_blur(fy, 6);
    fx = box_blur(fx, 6);
    // rescale the smoothed fields so the largest displacement is `magnitude`
    double peak = 1e-12;
    for (double v : fy.v) peak = std::max(peak, std::fabs(v));
    for (double v : fx.v) peak = std::max(peak, std::fabs(v));
    Image out(img.height, img.width);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            int sy = std::clamp(y + static_cast<int>(std::llround(magnitude * fy.at(y, x) / peak)), 0,
                                img.height - 1);
            int sx = std::clamp(x + static_cast<int>(std::llround(magnitude * fx.at(y, x) / peak)), 0,
                                img.width - 1);
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(sy, sx, c);
        }
    }
    return out;
}

Image corrupt_pixelate(const Image& img, int block) {
    Image out(img.height, img.width);
    for (int by = 0; by < img.height; by += block) {
        int y1 = std::min(by + block, img.height);
        for (int bx = 0; bx < img.width; bx += block) {
            int x1 = std::min(bx + block, img.width);
            double n = static_cast<double>(y1 - by) * (x1 - bx);
            for (int c = 0; c < 3; ++c) {
                double s = 0.0;
                for (int y = by; y < y1; ++y)
                    for (int x = bx; x < x1; ++x) s += img.at(y, x, c);
                double mean = s / n;
                for (int y = by; y < y1; ++y)
                    for (int x = bx; x < x1; ++x) out.at(y, x, c) = mean;
            }
        }
    }
    return out;
}

// 8x8 block DCT with a frequency-weighted quantizer; coarser steps at higher
// strength produce the familiar blocking artifacts without a codec dependency
Image corrupt_jpeg_blocking(const Image& img, double strength) {
    constexpr int B = 8;
    double T[B][B];
    const double pi = 3.14159265358979323846;
    for (int u = 0; u < B; ++u) {
        double cu = u == 0 ? std::sqrt(1.0 / B) : std::sqrt(2.0 / B);
        for (int k = 0; k < B; ++k) T[u][k] = cu * std::cos((2 * k + 1) * u * pi / (2.0 * B));
    }
    Image out(img.height, img.width);
    double blockbuf[B][B], tmp[B][B], coef[B][B];
    for (int by = 0; by < img.height; by += B) {
        for (int bx = 0; bx < img.width; bx += B) {
            for (int c = 0; c < 3; ++c) {
                for (int y = 0; y < B; ++y)
                    for (int x = 0; x < B; ++x) blockbuf[y][x] = at_clamped(img, by + y, bx + x, c);
                // coef = T * block * T^t
                for (int u = 0; u < B; ++u)
                    for (int x = 0; x < B; ++x) {
                        double s = 0.0;
                        for (int y = 0; y < B; ++y) s += T[u][y] * blockbuf[y][x];
                        tmp[u][x] = s;
                    }
                for (int u = 0; u < B; ++u)
                    for (int v = 0; v < B; ++v) {
                        double s = 0.0;
                        for (int x = 0; x < B; ++x) s += tmp[u][x] * T[v][x];
                        double step = strength * (1.0 + u + v) / 255.0;
                        coef[u][v] = step > 0.0 ? std::round(s / step) * step : s;
                    }
                // block = T^t * coef * T
                for (int y = 0; y < B; ++y)
                    for (int v = 0; v < B; ++v) {
                        double s = 0.0;
                        for (int u = 0; u < B; ++u) s += T[u][y] * coef[u][v];
                        tmp[y][v] = s;
                    }
                for (int y = 0; y < B; ++y) {
                    if (by + y >= img.height) break;
                    for (int x = 0; x < B; ++x) {
                        if (bx + x >= img.width) break;
                        double s = 0.0;
                        for (int v = 0; v < B; ++v) s += tmp[y][v] * T[v][x];
                        out.at(by + y, bx + x, c) = s;
                    }
                }
            }
        }
    }
    return out;
}

}  // namespace

PatchRect patch_rect(int index, int height, int width) {
    if (index < 0 || index >= kOcclusionPatches) throw ValidationError("patch index outside the 10x10 grid");
    int py = index / kOcclusionGrid, px = index % kOcclusionGrid;
    int ph = height / kOcclusionGrid, pw = width / kOcclusionGrid;
    PatchRect r;
    r.y0 = py * ph;
    r.y1 = py == kOcclusionGrid - 1 ? height : (py + 1) * ph;
    r.x0 = px * pw;
    r.x1 = px == kOcclusionGrid - 1 ? width : (px + 1) * pw;
    return r;
}

std::array<char, kOcclusionPatches> patches_in_region(const Box& region, int height, int width) {
    if (!(region.w > 0.0 && region.h > 0.0)) throw ValidationError("occlusion region is empty");
    if (!box_in_unit_square(region)) throw ValidationError("occlusion region outside the unit square");
    double rx0 = region.x0(), ry0 = region.y0(), rx1 = region.x1(), ry1 = region.y1();
    std::array<char, kOcclusionPatches> mask{};
    for (int i = 0; i < kOcclusionPatches; ++i) {
        PatchRect r = patch_rect(i, height, width);
        double px0 = static_cast<double>(r.x0) / width, px1 = static_cast<double>(r.x1) / width;
        double py0 = static_cast<double>(r.y0) / height, py1 = static_cast<double>(r.y1) / height;
        bool overlap = std::min(px1, rx1) > std::max(px0, rx0) && std::min(py1, ry1) > std::max(py0, ry0);
        mask[i] = overlap ? 1 : 0;
    }
    return mask;
}

Image random_occlude(const Image& image, const OcclusionSpec& spec) {
    require_grid_fits(image);
    require_ratio(spec.ratio);
    if (spec.mode != OcclusionMode::Random) throw ValidationError("random_occlude: spec.mode must be random");
    int count = static_cast<int>(std::llround(spec.ratio * kOcclusionPatches));
    Image out = image;
    Rng rng(spec.seed);
    std::vector<size_t> order = rng.permutation(kOcclusionPatches);
    for (int i = 0; i < count; ++i) zero_patch(out, static_cast<int>(order[i]));
    return out;
}

SaliencyMap saliency_map(const Image& image, Detector* model, const std::optional<Box>& region,
                         SaliencyMethod method) {
    require_grid_fits(image);
    SaliencyMap smap;
    if (region) {
        smap.in_region = patches_in_region(*region, image.height, image.width);
    } else {
        smap.in_region.fill(1);
    }

    // per-pixel saliency, accumulated into patches afterwards
    Field pixel_score(image.height, image.width);
    if (method == SaliencyMethod::EdgeEnergy) {
        for (int y = 1; y < image.height - 1; ++y)
            for (int x = 1; x < image.width - 1; ++x)
                for (int c = 0; c < 3; ++c) {
                    double gx = (image.at(y, x + 1, c) - image.at(y, x - 1, c)) / 2.0;
                    double gy = (image.at(y + 1, x, c) - image.at(y - 1, x, c)) / 2.0;
                    pixel_score.at(y, x) += gx * gx + gy * gy;
                }
    } else {
        if (!model) throw ValidationError("saliency: attention method requires a model");
        DetectorOutput out = model->forward(image, true);
        // top-confidence query: highest best-real-class probability, smallest id on ties
        int best_q = 0;
        double best_conf = -1.0;
        int q_count = out.class_logits.dim(0), classes = out.class_logits.dim(1) - 1;
        for (int q = 0; q < q_count; ++q) {
            double mx = out.class_logits(q, 0);
            for (int c = 1; c < classes + 1; ++c) mx = std::max(mx, out.class_logits(q, c));
            double denom = 0.0;
            for (int c = 0; c < classes + 1; ++c) denom += std::exp(out.class_logits(q, c) - mx);
            double conf = 0.0;
            for (int c = 0; c < classes; ++c)
                conf = std::max(conf, std::exp(out.class_logits(q, c) - mx) / denom);
            if (conf > best_conf) {
                best_conf = conf;
                best_q = q;
            }
        }
        // head-averaged cross-attention row of the last decoder layer, spread
        // uniformly over each token's stride x stride pixel footprint
        int last_layer = model->config().dec_layers - 1;
        int heads = 0;
        std::vector<double> token_mass(static_cast<size_t>(out.feat_h) * out.feat_w, 0.0);
        for (const AttentionRecord& r : out.attention) {
            if (r.stage != AttentionStage::DecoderCross || r.layer != last_layer) continue;
            ++heads;
            for (int t = 0; t < out.feat_h * out.feat_w; ++t) token_mass[t] += r.weights(best_q, t);
        }
        if (heads == 0) throw RuntimeFailure("saliency: no cross-attention records in forward output");
        for (double& m : token_mass) m /= heads;
        double per_pixel = 1.0 / (out.stride * out.stride);
        for (int ty = 0; ty < out.feat_h; ++ty)
            for (int tx = 0; tx < out.feat_w; ++tx) {
                double m = token_mass[static_cast<size_t>(ty) * out.feat_w + tx] * per_pixel;
                for (int y = ty * out.stride; y < (ty + 1) * out.stride; ++y)
                    for (int x = tx * out.stride; x < (tx + 1) * out.stride; ++x)
                        pixel_score.at(y, x) = m;
            }
    }

    for (int i = 0; i < kOcclusionPatches; ++i) {
        if (!smap.in_region[i]) continue;
        PatchRect r = patch_rect(i, image.height, image.width);
        double s = 0.0;
        for (int y = r.y0; y < r.y1; ++y)
            for (int x = r.x0; x < r.x1; ++x) s += pixel_score.at(y, x);
        smap.scores[i] = s;
    }
    return smap;
}

Image salient_occlude(const Image& image, const OcclusionSpec& spec, const SaliencyMap& smap) {
    require_grid_fits(image);
    require_ratio(spec.ratio);
    if (spec.mode != OcclusionMode::Salient) throw ValidationError("salient_occlude: spec.mode must be salient");
    std::vector<int> candidates;
    for (int i = 0; i < kOcclusionPatches; ++i)
        if (smap.in_region[i]) candidates.push_back(i);
    if (candidates.empty()) throw ValidationError("salient_occlude: empty region");
    int count = static_cast<int>(std::llround(spec.ratio * candidates.size()));
    std::stable_sort(candidates.begin(), candidates.end(),
                     [&](int a, int b) { return smap.scores[a] > smap.scores[b]; });
    Image out = image;
    for (int i = 0; i < count; ++i) zero_patch(out, candidates[i]);
    return out;
}

Image make_default_sticker(int side, unsigned long long seed) {
    if (side <= 0) throw ValidationError("sticker side must be positive");
    Rng rng(seed);
    Image patch(side, side);
    for (double& v : patch.pixels) v = rng.uniform();
    return patch;
}

Image apply_sticker(const Image& image, const StickerSpec& spec) {
    if (spec.patch.empty()) throw ValidationError("sticker patch is empty");
    if (image.empty()) throw ValidationError("sticker target image is empty");
    int ph = spec.patch.height, pw = spec.patch.width;
    Rng rng(spec.seed);

    // scale is drawn before location so replay only depends on the seed
    double scale;
    if (spec.scale) {
        scale = *spec.scale;
        if (!(scale > 0.0)) throw ValidationError("sticker scale must be positive");
    } else {
        double side = rng.uniform(0.1, 0.3) * std::min(image.height, image.width);
        scale = side / std::max(ph, pw);
    }
    int sh = std::max(1, static_cast<int>(std::llround(ph * scale)));
    int sw = std::max(1, static_cast<int>(std::llround(pw * scale)));
    if (sh > image.height || sw > image.width) {
        throw ValidationError("sticker does not fit inside the image at the requested scale");
    }

    int x0, y0;
    if (spec.location) {
        x0 = spec.location->first;
        y0 = spec.location->second;
        if (x0 < 0 || y0 < 0 || x0 + sw > image.width || y0 + sh > image.height) {
            throw ValidationError("sticker placement extends outside the image");
        }
    } else {
        x0 = static_cast<int>(rng.uniform_index(image.width - sw + 1));
        y0 = static_cast<int>(rng.uniform_index(image.height - sh + 1));
    }

    Image out = image;
    for (int dy = 0; dy < sh; ++dy) {
        int sy = std::min(ph - 1, static_cast<int>((dy + 0.5) * ph / sh));
        for (int dx = 0; dx < sw; ++dx) {
            int sx = std::min(pw - 1, static_cast<int>((dx + 0.5) * pw / sw));
            for (int c = 0; c < 3; ++c) out.at(y0 + dy, x0 + dx, c) = spec.patch.at(sy, sx, c);
        }
    }
    clamp_pixels(out);
    return out;
}

const char* corruption_family_name(CorruptionFamily f) {
    switch (f) {
        case CorruptionFamily::GaussianNoise: return "gaussian-noise";
        case CorruptionFamily::ShotNoise: return "shot-noise";
        case CorruptionFamily::ImpulseNoise: return "impulse-noise";
        case CorruptionFamily::DefocusBlur: return "defocus-blur";
        case CorruptionFamily::GlassBlur: return "glass-blur";
        case CorruptionFamily::MotionBlur: return "motion-blur";
        case CorruptionFamily::ZoomBlur: return "zoom-blur";
        case CorruptionFamily::Snow: return "snow";
        case CorruptionFamily::Frost: return "frost";
        case CorruptionFamily::Fog: return "fog";
        case CorruptionFamily::Brightness: return "brightness";
        case CorruptionFamily::Contrast: return "contrast";
        case CorruptionFamily::Elastic: return "elastic";
        case CorruptionFamily::Pixelate: return "pixelate";
        case CorruptionFamily::JpegBlocking: return "jpeg-like-blocking";
    }
    throw ValidationError("unknown corruption family");
}

CorruptionFamily corruption_family_from_name(const std::string& name) {
    for (int i = 0; i < kCorruptionFamilies; ++i) {
        auto f = static_cast<CorruptionFamily>(i);
        if (name == corruption_family_name(f)) return f;
    }
    throw ValidationError("unknown corruption family: " + name);
}

CorruptionTable CorruptionTable::defaults() {
    CorruptionTable t;
    auto row = [&](CorruptionFamily f, std::array<double, 5> v) { t.level[static_cast<int>(f)] = v; };
    row(CorruptionFamily::GaussianNoise, {0.04, 0.08, 0.13, 0.19, 0.26});
    row(CorruptionFamily::ShotNoise, {600, 250, 100, 40, 15});
    row(CorruptionFamily::ImpulseNoise, {0.01, 0.03, 0.06, 0.11, 0.18});
    row(CorruptionFamily::DefocusBlur, {1, 2, 3, 5, 7});
    row(CorruptionFamily::GlassBlur, {1, 2, 4, 7, 11});
    row(CorruptionFamily::MotionBlur, {3, 5, 9, 13, 19});
    row(CorruptionFamily::ZoomBlur, {1.06, 1.12, 1.20, 1.31, 1.45});
    row(CorruptionFamily::Snow, {0.002, 0.006, 0.015, 0.030, 0.055});
    row(CorruptionFamily::Frost, {0.10, 0.20, 0.32, 0.46, 0.62});
    row(CorruptionFamily::Fog, {0.15, 0.30, 0.45, 0.60, 0.75});
    row(CorruptionFamily::Brightness, {0.08, 0.14, 0.22, 0.30, 0.40});
    row(CorruptionFamily::Contrast, {0.75, 0.60, 0.45, 0.30, 0.15});
    row(CorruptionFamily::Elastic, {1.5, 2.5, 4.0, 6.0, 9.0});
    row(CorruptionFamily::Pixelate, {2, 3, 5, 8, 13});
    row(CorruptionFamily::JpegBlocking, {12, 24, 40, 64, 96});
    return t;
}

Image corrupt(const Image& image, const CorruptionSpec& spec, const CorruptionTable& table) {
    if (spec.severity < 1 || spec.severity > kCorruptionSeverities) {
        throw ValidationError("corruption severity must lie in 1..5");
    }
    int fi = static_cast<int>(spec.family);
    if (fi < 0 || fi >= kCorruptionFamilies) throw ValidationError("unknown corruption family");
    double level = table.at(spec.family, spec.severity);
    Rng rng(spec.seed);
    Image out;
    switch (spec.family) {
        case CorruptionFamily::GaussianNoise: out = corrupt_gaussian(image, level, rng); break;
        case CorruptionFamily::ShotNoise: out = corrupt_shot(image, level, rng); break;
        case CorruptionFamily::ImpulseNoise: out = corrupt_impulse(image, level, rng); break;
        case CorruptionFamily::DefocusBlur: out = disk_blur(image, static_cast<int>(level)); break;
        case CorruptionFamily::GlassBlur: out = corrupt_glass(image, static_cast<int>(level), rng); break;
        case CorruptionFamily::MotionBlur: out = corrupt_motion(image, static_cast<int>(level)); break;
        case CorruptionFamily::ZoomBlur: out = corrupt_zoom(image, level); break;
        case CorruptionFamily::Snow: out = corrupt_snow(image, level, rng); break;
        case CorruptionFamily::Frost: out = corrupt_frost(image, level, rng); break;
        case CorruptionFamily::Fog: out = corrupt_fog(image, level, rng); break;
        case CorruptionFamily::Brightness: out = corrupt_brightness(image, level); break;
        case CorruptionFamily::Contrast: out = corrupt_contrast(image, level); break;
        case CorruptionFamily::Elastic: out = corrupt_elastic(image, level, rng); break;
        case CorruptionFamily::Pixelate: out = corrupt_pixelate(image, static_cast<int>(level)); break;
        case CorruptionFamily::JpegBlocking: out = corrupt_jpeg_blocking(image, level); break;
    }
    clamp_pixels(out);
    return out;
}

}  // namespace minidetr
