#include "experiments.hpp"

#include <atomic>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <thread>

#include "minidetr/analytics.hpp"
#include "minidetr/checkpoint.hpp"
#include "minidetr/errors.hpp"
#include "minidetr/eval.hpp"
#include "minidetr/image_io.hpp"
#include "minidetr/perturb.hpp"
#include "minidetr/report.hpp"

namespace minidetr::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// ------------------------------------------------------------------ helpers

namespace {

// splitmix64 finalizer: derives stable per-item seeds from a base seed so
// every image/draw gets an independent, reproducible stream
unsigned long long mix_seed(unsigned long long a, unsigned long long b) {
    unsigned long long z = a + 0x9E3779B97F4A7C15ull * (b + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

json get_or(const json& j, const std::string& key, const json& fallback) {
    return j.contains(key) ? j.at(key) : fallback;
}

void require(bool ok, const std::string& msg) {
    if (!ok) throw ValidationError(msg);
}

struct ArtifactWriter {
    fs::path dir;
    std::vector<std::string> names;

    void write(const std::string& name, const std::string& content) {
        write_text_file((dir / name).string(), content);
        names.push_back(name);
    }
    void note(const std::string& name) { names.push_back(name); }
};

json finish_manifest(const std::string& kind, const json& params, ArtifactWriter& art) {
    json manifest;
    manifest["kind"] = kind;
    manifest["params"] = params;
    manifest["artifacts"] = art.names;
    std::string text = manifest.dump(2) + "\n";
    write_text_file((art.dir / "manifest.json").string(), text);
    return manifest;
}

ModelConfig model_config_from_params(const json& j) {
    // partial configs are fine: unspecified fields keep their defaults
    json merged = json::parse(config_to_json(ModelConfig{}));
    merged.update(j);
    return config_from_json(merged.dump());
}

json model_config_to_params(const ModelConfig& cfg) {
    return json::parse(config_to_json(cfg));
}

EvalOptions eval_options_from_params(const json& params) {
    EvalOptions opt;
    if (params.contains("eval")) {
        const json& e = params.at("eval");
        if (e.contains("iou_thresholds"))
            opt.iou_thresholds = e.at("iou_thresholds").get<std::vector<double>>();
        opt.apply_low_overlap_filter = get_or(e, "ignore_low_overlap", opt.apply_low_overlap_filter);
        opt.low_overlap_threshold = get_or(e, "low_overlap_threshold", opt.low_overlap_threshold);
    }
    return opt;
}

std::vector<GroundTruth> all_gts(const std::vector<AnnotatedSample>& samples) {
    std::vector<GroundTruth> gts;
    for (const auto& s : samples) gts.insert(gts.end(), s.gts.begin(), s.gts.end());
    return gts;
}

// runs the detector over (possibly perturbed) images and evaluates the pooled
// detections; `transform` may be null for clean images
MetricReport run_and_evaluate(Detector& model, const std::vector<AnnotatedSample>& samples,
                              const std::function<Image(const Image&, int)>& transform,
                              const EvalOptions& opt, const std::vector<std::string>& class_names,
                              int threads) {
    auto detect_one = [&](int i) -> json {
        const AnnotatedSample& s = samples[i];
        DetectorOutput out =
            transform ? model.forward(transform(s.image, i)) : model.forward(s.image);
        json rows = json::array();
        for (const Detection& d : detections_from_output(out, s.image_id)) {
            rows.push_back({d.image_id, d.class_id, d.score,
                            {d.box.cx, d.box.cy, d.box.w, d.box.h}, d.query_id});
        }
        return rows;
    };
    std::vector<json> per_image =
        parallel_map_json(static_cast<int>(samples.size()), threads, detect_one);
    std::vector<Detection> dets;
    for (const json& rows : per_image) {
        for (const json& r : rows) {
            Detection d;
            d.image_id = r[0];
            d.class_id = r[1];
            d.score = r[2];
            d.box = Box{r[3][0], r[3][1], r[3][2], r[3][3]};
            d.query_id = r[4];
            dets.push_back(d);
        }
    }
    return evaluate(dets, all_gts(samples), opt, class_names);
}

std::string opt_metric(const std::optional<double>& v) {
    return v ? format_double(*v) : "n/a";
}

int default_threads(const json& params) {
    if (params.contains("threads")) return params.at("threads").get<int>();
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

// union of an image's gt boxes, used as the salient-occlusion target region
std::optional<Box> gt_union_box(const AnnotatedSample& s) {
    if (s.gts.empty()) return std::nullopt;
    double x0 = 1.0, y0 = 1.0, x1 = 0.0, y1 = 0.0;
    for (const GroundTruth& g : s.gts) {
        x0 = std::min(x0, g.box.x0());
        y0 = std::min(y0, g.box.y0());
        x1 = std::max(x1, g.box.x1());
        y1 = std::max(y1, g.box.y1());
    }
    return Box::from_corners(std::clamp(x0, 0.0, 1.0), std::clamp(y0, 0.0, 1.0),
                             std::clamp(x1, 0.0, 1.0), std::clamp(y1, 0.0, 1.0));
}

}  // namespace

// --------------------------------------------------------------- public api

std::vector<json> parallel_map_json(int n, int threads, const std::function<json(int)>& fn) {
    std::vector<json> results(static_cast<size_t>(std::max(0, n)));
    if (n <= 0) return results;
    threads = std::clamp(threads, 1, n);
    if (threads == 1) {
        for (int i = 0; i < n; ++i) results[static_cast<size_t>(i)] = fn(i);
        return results;
    }
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errors(static_cast<size_t>(threads));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(threads));
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1))
                    results[static_cast<size_t>(i)] = fn(i);
            } catch (...) {
                errors[static_cast<size_t>(t)] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return results;
}

Dataset load_dataset_params(const json& params) {
    require(params.contains("dataset"), "experiment params missing \"dataset\"");
    const json& d = params.at("dataset");
    std::string source = get_or(d, "source", "synthetic");
    if (source == "synthetic") {
        return generate_synthetic_shapes(get_or(d, "count", 500), get_or(d, "max_objects", 3),
                                         get_or(d, "image_size", 128),
                                         d.at("seed").get<unsigned long long>());
    }
    if (source == "coco") {
        require(d.contains("annotations"), "coco dataset params missing \"annotations\"");
        return load_coco_annotations(d.at("annotations").get<std::string>(),
                                     get_or(d, "images", ""));
    }
    throw ValidationError("unknown dataset source \"" + source + "\"");
}

json train_config_to_json(const TrainConfig& cfg) {
    json j;
    j["epochs"] = cfg.epochs;
    j["learning_rate"] = cfg.learning_rate;
    j["batch_size"] = cfg.batch_size;
    j["seed"] = cfg.seed;
    j["query_drop_p"] = cfg.query_drop_p;
    j["gradient_record"] = cfg.gradient_record;
    j["target_map50"] = cfg.target_map50;
    j["eval_every"] = cfg.eval_every;
    j["optimizer"] = {{"kind", cfg.optimizer.kind},
                      {"beta1", cfg.optimizer.beta1},
                      {"beta2", cfg.optimizer.beta2},
                      {"eps", cfg.optimizer.eps},
                      {"momentum", cfg.optimizer.momentum}};
    j["loss_weights"] = {{"w_class", cfg.loss_weights.w_class},
                         {"w_l1", cfg.loss_weights.w_l1},
                         {"w_iou", cfg.loss_weights.w_iou},
                         {"lambda_noobj", cfg.loss_weights.lambda_noobj}};
    return j;
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig cfg;
    cfg.epochs = get_or(j, "epochs", cfg.epochs);
    cfg.learning_rate = get_or(j, "learning_rate", cfg.learning_rate);
    cfg.batch_size = get_or(j, "batch_size", cfg.batch_size);
    cfg.seed = get_or(j, "seed", cfg.seed).get<unsigned long long>();
    cfg.query_drop_p = get_or(j, "query_drop_p", cfg.query_drop_p);
    cfg.gradient_record = get_or(j, "gradient_record", cfg.gradient_record);
    cfg.target_map50 = get_or(j, "target_map50", cfg.target_map50);
    cfg.eval_every = get_or(j, "eval_every", cfg.eval_every);
    if (j.contains("optimizer")) {
        const json& o = j.at("optimizer");
        cfg.optimizer.kind = get_or(o, "kind", cfg.optimizer.kind);
        cfg.optimizer.beta1 = get_or(o, "beta1", cfg.optimizer.beta1);
        cfg.optimizer.beta2 = get_or(o, "beta2", cfg.optimizer.beta2);
        cfg.optimizer.eps = get_or(o, "eps", cfg.optimizer.eps);
        cfg.optimizer.momentum = get_or(o, "momentum", cfg.optimizer.momentum);
    }
    if (j.contains("loss_weights")) {
        const json& w = j.at("loss_weights");
        cfg.loss_weights.w_class = get_or(w, "w_class", cfg.loss_weights.w_class);
        cfg.loss_weights.w_l1 = get_or(w, "w_l1", cfg.loss_weights.w_l1);
        cfg.loss_weights.w_iou = get_or(w, "w_iou", cfg.loss_weights.w_iou);
        cfg.loss_weights.lambda_noobj = get_or(w, "lambda_noobj", cfg.loss_weights.lambda_noobj);
    }
    return cfg;
}

// ------------------------------------------------------------------ runners

namespace {

json run_train(const json& params, const fs::path& out_dir) {
    Dataset ds = load_dataset_params(params);
    auto [train_set, test_set] = split_dataset(ds, get_or(params, "test_fraction", 0.2));
    ModelConfig mc = model_config_from_params(get_or(params, "model", json::object()));
    TrainConfig tc = train_config_from_json(get_or(params, "train", json::object()));

    Detector model(mc);
    TrainResult result = train(model, train_set, test_set, tc);

    ArtifactWriter art{out_dir, {}};
    save_checkpoint(model, (out_dir / "checkpoint.ckpt").string());
    art.note("checkpoint.ckpt");
    art.write("loss_curve.csv", loss_curve_to_csv(result.curve));

    std::vector<double> epochs_x(result.curve.train_loss.size());
    for (size_t i = 0; i < epochs_x.size(); ++i) epochs_x[i] = static_cast<double>(i);
    art.write("loss_curve.svg",
              svg_line_chart({{"train", epochs_x, result.curve.train_loss},
                              {"test", epochs_x, result.curve.test_loss}},
                             "Training and test loss", "epoch", "loss"));

    if (result.gradients) {
        std::string csv = csv_row({"query_id", "mean_grad_norm"});
        for (size_t qI = 0; qI < result.gradients->mean_norm.size(); ++qI)
            csv += csv_row({std::to_string(qI), format_double(result.gradients->mean_norm[qI])});
        art.write("gradient_flow.csv", csv);
    }

    std::string map_csv = csv_row({"epoch", "map50"});
    for (const auto& [epoch, m50] : result.map50_history)
        map_csv += csv_row({std::to_string(epoch), format_double(m50)});
    art.write("map50_history.csv", map_csv);

    json summary;
    summary["epochs_run"] = result.epochs_run;
    summary["reached_target"] = result.reached_target;
    if (!result.map50_history.empty()) summary["final_map50"] = result.map50_history.back().second;
    art.write("train_summary.json", summary.dump(2) + "\n");

    return finish_manifest("train", params, art);
}

json run_occlusion_sweep(const json& params, const fs::path& out_dir) {
    Dataset ds = load_dataset_params(params);
    std::string split = get_or(params, "split", "test");
    std::vector<AnnotatedSample> samples;
    if (split == "all") {
        samples = ds.samples;
    } else {
        auto [train_set, test_set] = split_dataset(ds, get_or(params, "test_fraction", 0.2));
        samples = split == "train" ? train_set : test_set;
    }
    require(!samples.empty(), "occlusion sweep has no samples to evaluate");

    std::vector<double> ratios = get_or(params, "ratios", json{0.2, 0.4, 0.6, 0.8});
    for (double r : ratios)
        require(r >= 0.0 && r <= 1.0, "occlusion ratio " + format_double(r) + " outside [0,1]");
    std::string mode_name = get_or(params, "mode", "random");
    require(mode_name == "random" || mode_name == "salient",
            "occlusion mode must be \"random\" or \"salient\", got \"" + mode_name + "\"");
    bool salient = mode_name == "salient";
    std::string method_name = get_or(params, "saliency", "attention");
    require(method_name == "attention" || method_name == "edge-energy",
            "saliency must be \"attention\" or \"edge-energy\", got \"" + method_name + "\"");
    SaliencyMethod method =
        method_name == "attention" ? SaliencyMethod::Attention : SaliencyMethod::EdgeEnergy;
    int draws = get_or(params, "draws", 4);
    require(draws >= 1, "draws must be >= 1");
    unsigned long long seed = get_or(params, "seed", 0).get<unsigned long long>();
    EvalOptions opt = eval_options_from_params(params);
    int threads = default_threads(params);

    require(params.contains("checkpoint") || params.contains("detections"),
            "occlusion sweep needs a \"checkpoint\" or a \"detections\" file list");

    std::string csv = csv_row({"source", "mode", "ratio", "map", "map50"});
    std::vector<Series> chart;

    // salient mode ranks the full grid by default so random and salient zero
    // the same patch count at equal ratio; region_gt restricts the budget and
    // the ranking to each image's ground-truth union box instead
    bool region_gt = get_or(params, "region_gt", false);

    if (params.contains("checkpoint")) {
        Detector model = load_checkpoint(params.at("checkpoint").get<std::string>());
        // saliency is computed per image once; it does not depend on the draw
        std::vector<SaliencyMap> smaps;
        if (salient) {
            for (const AnnotatedSample& s : samples)
                smaps.push_back(saliency_map(s.image, &model,
                                             region_gt ? gt_union_box(s) : std::nullopt, method));
        }
        Series line{"model (" + mode_name + ")", {}, {}};
        for (double ratio : ratios) {
            double map_acc = 0.0, map50_acc = 0.0;
            for (int draw = 0; draw < draws; ++draw) {
                auto transform = [&](const Image& img, int i) {
                    OcclusionSpec spec;
                    spec.mode = salient ? OcclusionMode::Salient : OcclusionMode::Random;
                    spec.ratio = ratio;
                    spec.seed = mix_seed(seed + static_cast<unsigned long long>(draw),
                                         static_cast<unsigned long long>(i));
                    if (salient) {
                        if (region_gt) spec.region = gt_union_box(samples[static_cast<size_t>(i)]);
                        return salient_occlude(img, spec, smaps[static_cast<size_t>(i)]);
                    }
                    return random_occlude(img, spec);
                };
                MetricReport rep =
                    run_and_evaluate(model, samples, transform, opt, ds.manifest.class_names, threads);
                map_acc += rep.map.value_or(0.0);
                map50_acc += rep.map50.value_or(0.0);
            }
            double map_mean = map_acc / draws, map50_mean = map50_acc / draws;
            csv += csv_row({"model", mode_name, format_double(ratio), format_double(map_mean),
                            format_double(map50_mean)});
            line.x.push_back(ratio);
            line.y.push_back(map_mean);
        }
        chart.push_back(line);
    }

    if (params.contains("detections")) {
        // external detections are fixed artifacts: each file is evaluated
        // as-is against the ground truth, one row per (file, ratio) pairing
        const json& files = params.at("detections");
        require(files.is_array() && files.size() == ratios.size(),
                "\"detections\" must list one file per ratio");
        std::vector<GroundTruth> gts = all_gts(samples);
        Series line{"external", {}, {}};
        for (size_t k = 0; k < ratios.size(); ++k) {
            std::vector<Detection> dets =
                import_external_detections(files[k].get<std::string>());
            MetricReport rep = evaluate(dets, gts, opt, ds.manifest.class_names);
            csv += csv_row({files[k].get<std::string>(), mode_name, format_double(ratios[k]),
                            opt_metric(rep.map), opt_metric(rep.map50)});
            line.x.push_back(ratios[k]);
            line.y.push_back(rep.map.value_or(0.0));
        }
        chart.push_back(line);
    }

    ArtifactWriter art{out_dir, {}};
    art.write("occlusion_sweep.csv", csv);
    art.write("occlusion_sweep.svg",
              svg_line_chart(chart, "mAP under " + mode_name + " occlusion", "occlusion ratio", "mAP"));
    return finish_manifest("occlusion-sweep", params, art);
}

json run_sticker_eval(const json& params, const fs::path& out_dir) {
    Dataset ds = load_dataset_params(params);
    std::string split = get_or(params, "split", "test");
    std::vector<AnnotatedSample> samples;
    if (split == "all") {
        samples = ds.samples;
    } else {
        auto [train_set, test_set] = split_dataset(ds, get_or(params, "test_fraction", 0.2));
        samples = split == "train" ? train_set : test_set;
    }
    require(!samples.empty(), "sticker eval has no samples");
    require(params.contains("checkpoint"), "sticker eval needs a \"checkpoint\"");
    Detector model = load_checkpoint(params.at("checkpoint").get<std::string>());

    unsigned long long seed = get_or(params, "seed", 0).get<unsigned long long>();
    json sticker_params = get_or(params, "sticker", json::object());
    Image patch;
    if (sticker_params.contains("patch_file")) {
        patch = image_read(sticker_params.at("patch_file").get<std::string>());
    } else {
        patch = make_default_sticker(get_or(sticker_params, "side", 24), seed);
    }
    // evaluator options are shared verbatim between the clean and attacked
    // passes; the low-overlap ignore rule defaults on for this protocol
    EvalOptions opt = eval_options_from_params(params);
    if (!params.contains("eval") || !params.at("eval").contains("ignore_low_overlap"))
        opt.apply_low_overlap_filter = true;
    int threads = default_threads(params);

    auto attack = [&](const Image& img, int i) {
        StickerSpec spec;
        spec.patch = patch;
        if (sticker_params.contains("scale")) spec.scale = sticker_params.at("scale").get<double>();
        if (sticker_params.contains("location")) {
            spec.location = std::make_pair(sticker_params.at("location")[0].get<int>(),
                                           sticker_params.at("location")[1].get<int>());
        }
        spec.seed = mix_seed(seed, static_cast<unsigned long long>(i));
        return apply_sticker(img, spec);
    };

    MetricReport clean =
        run_and_evaluate(model, samples, nullptr, opt, ds.manifest.class_names, threads);
    MetricReport attacked =
        run_and_evaluate(model, samples, attack, opt, ds.manifest.class_names, threads);

    ArtifactWriter art{out_dir, {}};
    std::string csv = csv_row({"condition", "map", "map50", "detections", "ignore_rule"});
    csv += csv_row({"clean", opt_metric(clean.map), opt_metric(clean.map50),
                    std::to_string(clean.detection_count),
                    clean.low_overlap_filter_applied ? "on" : "off"});
    csv += csv_row({"sticker", opt_metric(attacked.map), opt_metric(attacked.map50),
                    std::to_string(attacked.detection_count),
                    attacked.low_overlap_filter_applied ? "on" : "off"});
    art.write("sticker_eval.csv", csv);

    // cross-attention heatmaps for the first few attacked images, highest
    // scoring query of each, last decoder layer, head 0
    int heatmaps = get_or(params, "heatmaps", 3);
    for (int i = 0; i < heatmaps && i < static_cast<int>(samples.size()); ++i) {
        Image attacked_img = attack(samples[static_cast<size_t>(i)].image, i);
        DetectorOutput out = model.forward(attacked_img, true);
        std::vector<Detection> dets = detections_from_output(out, i);
        int best_q = 0;
        double best_s = -1.0;
        for (const Detection& d : dets)
            if (d.score > best_s) {
                best_s = d.score;
                best_q = d.query_id;
            }
        Heatmap hm = extract_decoder_cross_attention(out, best_q, model.config().dec_layers - 1, 0);
        art.write("sticker_heatmap_" + std::to_string(i) + ".svg",
                  svg_heatmap(hm, "Cross-attention, image " + std::to_string(i) + ", query " +
                                      std::to_string(best_q)));
    }
    return finish_manifest("sticker-eval", params, art);
}

json run_corruption_benchmark(const json& params, const fs::path& out_dir) {
    Dataset ds = load_dataset_params(params);
    std::string split = get_or(params, "split", "test");
    std::vector<AnnotatedSample> samples;
    if (split == "all") {
        samples = ds.samples;
    } else {
        auto [train_set, test_set] = split_dataset(ds, get_or(params, "test_fraction", 0.2));
        samples = split == "train" ? train_set : test_set;
    }
    int limit = get_or(params, "limit", 0);
    if (limit > 0 && static_cast<int>(samples.size()) > limit)
        samples.resize(static_cast<size_t>(limit));
    require(!samples.empty(), "corruption benchmark has no samples");
    require(params.contains("checkpoint"), "corruption benchmark needs a \"checkpoint\"");
    Detector model = load_checkpoint(params.at("checkpoint").get<std::string>());

    unsigned long long seed = get_or(params, "seed", 0).get<unsigned long long>();
    EvalOptions opt = eval_options_from_params(params);
    int threads = default_threads(params);

    std::vector<CorruptionFamily> families;
    if (params.contains("families")) {
        for (const json& name : params.at("families"))
            families.push_back(corruption_family_from_name(name.get<std::string>()));
    } else {
        for (int f = 0; f < kCorruptionFamilies; ++f)
            families.push_back(static_cast<CorruptionFamily>(f));
    }

    MetricReport clean =
        run_and_evaluate(model, samples, nullptr, opt, ds.manifest.class_names, threads);

    ArtifactWriter art{out_dir, {}};
    std::string csv = csv_row({"family", "clean", "sev1", "sev2", "sev3", "sev4", "sev5"});
    for (CorruptionFamily family : families) {
        std::vector<double> maps;
        for (int severity = 1; severity <= kCorruptionSeverities; ++severity) {
            auto transform = [&](const Image& img, int i) {
                CorruptionSpec spec;
                spec.family = family;
                spec.severity = severity;
                spec.seed = mix_seed(mix_seed(seed, static_cast<unsigned long long>(family) * 8 +
                                                        static_cast<unsigned long long>(severity)),
                                     static_cast<unsigned long long>(i));
                return corrupt(img, spec);
            };
            MetricReport rep =
                run_and_evaluate(model, samples, transform, opt, ds.manifest.class_names, threads);
            maps.push_back(rep.map.value_or(0.0));
        }
        std::vector<std::string> row{corruption_family_name(family),
                                     format_double(clean.map.value_or(0.0))};
        for (double m : maps) row.push_back(format_double(m));
        csv += csv_row(row);

        std::vector<double> sev{1, 2, 3, 4, 5};
        art.write(std::string("corruption_") + corruption_family_name(family) + ".svg",
                  svg_line_chart({{corruption_family_name(family), sev, maps}},
                                 std::string("mAP vs severity: ") + corruption_family_name(family),
                                 "severity", "mAP"));
    }
    art.write("corruption_grid.csv", csv);

    // encoder self-attention at a named pixel, one heatmap per severity of a
    // chosen family, probed on the first sample
    if (params.contains("attention_pixel")) {
        const json& px = params.at("attention_pixel");
        int py = px[0].get<int>(), pxx = px[1].get<int>();
        CorruptionFamily fam = corruption_family_from_name(
            get_or(params, "attention_family", "gaussian-noise").get<std::string>());
        const AnnotatedSample& probe = samples.front();
        int last_enc = model.config().enc_layers - 1;
        for (int severity = 0; severity <= kCorruptionSeverities; ++severity) {
            Image img = probe.image;
            if (severity > 0) {
                CorruptionSpec spec;
                spec.family = fam;
                spec.severity = severity;
                spec.seed = mix_seed(mix_seed(seed, static_cast<unsigned long long>(fam) * 8 +
                                                        static_cast<unsigned long long>(severity)),
                                     0ull);
                img = corrupt(img, spec);
            }
            DetectorOutput out = model.forward(img, true);
            Heatmap hm = extract_encoder_attention(out, {py, pxx}, last_enc, 0);
            std::string title = severity == 0
                                    ? "Encoder attention, clean"
                                    : "Encoder attention, severity " + std::to_string(severity);
            art.write("attention_sev" + std::to_string(severity) + ".svg", svg_heatmap(hm, title));
        }
    }
    return finish_manifest("corruption-benchmark", params, art);
}

json run_query_analysis(const json& params, const fs::path& out_dir) {
    Dataset ds = load_dataset_params(params);
    std::string split = get_or(params, "split", "test");
    std::vector<AnnotatedSample> samples;
    if (split == "all") {
        samples = ds.samples;
    } else {
        auto [train_set, test_set] = split_dataset(ds, get_or(params, "test_fraction", 0.2));
        samples = split == "train" ? train_set : test_set;
    }
    require(!samples.empty(), "query analysis has no samples");
    require(params.contains("checkpoint"), "query analysis needs a \"checkpoint\"");
    Detector model = load_checkpoint(params.at("checkpoint").get<std::string>());
    double threshold = get_or(params, "threshold", 0.8);
    int threads = default_threads(params);

    auto detect_one = [&](int i) -> json {
        const AnnotatedSample& s = samples[static_cast<size_t>(i)];
        json rows = json::array();
        for (const Detection& d : detections_from_output(model.forward(s.image), s.image_id))
            rows.push_back({d.image_id, d.class_id, d.score,
                            {d.box.cx, d.box.cy, d.box.w, d.box.h}, d.query_id});
        return rows;
    };
    std::vector<json> per_image =
        parallel_map_json(static_cast<int>(samples.size()), threads, detect_one);
    std::vector<Detection> dets;
    for (const json& rows : per_image)
        for (const json& r : rows) {
            Detection d;
            d.image_id = r[0];
            d.class_id = r[1];
            d.score = r[2];
            d.box = Box{r[3][0], r[3][1], r[3][2], r[3][3]};
            d.query_id = r[4];
            dets.push_back(d);
        }

    QueryStats stats = query_frequency(dets, threshold, model.config().num_queries);
    ArtifactWriter art{out_dir, {}};

    std::string freq_csv = csv_row({"query_id", "detections"});
    std::vector<double> freq_vals;
    std::vector<std::string> freq_labels;
    for (size_t qI = 0; qI < stats.freq.size(); ++qI) {
        freq_csv += csv_row({std::to_string(qI), std::to_string(stats.freq[qI])});
        freq_vals.push_back(static_cast<double>(stats.freq[qI]));
        freq_labels.push_back(std::to_string(qI));
    }
    art.write("query_frequency.csv", freq_csv);
    art.write("query_frequency.svg",
              svg_bar_chart(freq_vals, freq_labels, "Detections per query", "count"));

    std::vector<ClassContributionEntry> contrib = class_contribution(dets, stats);
    std::string contrib_csv = csv_row({"class_id", "class_name", "total", "from_main_query", "share"});
    std::vector<double> contrib_vals;
    std::vector<std::string> contrib_labels;
    for (const auto& e : contrib) {
        std::string cname = e.class_id < static_cast<int>(ds.manifest.class_names.size())
                                ? ds.manifest.class_names[static_cast<size_t>(e.class_id)]
                                : std::to_string(e.class_id);
        contrib_csv += csv_row({std::to_string(e.class_id), cname, std::to_string(e.total),
                                std::to_string(e.from_main), format_double(e.share)});
        contrib_vals.push_back(e.share);
        contrib_labels.push_back(cname);
    }
    art.write("class_contribution.csv", contrib_csv);
    art.write("class_contribution.svg",
              svg_bar_chart(contrib_vals, contrib_labels,
                            "Main query share of detections per class", "share"));

    std::vector<ScatterPoint> scatter = box_scatter(dets, stats.main_query_id, threshold);
    std::string scatter_csv = csv_row({"cx", "cy", "area"});
    std::vector<PlotPoint> pts;
    for (const ScatterPoint& p : scatter) {
        scatter_csv += csv_row({format_double(p.cx), format_double(p.cy), format_double(p.area)});
        pts.push_back({p.cx, p.cy, p.area});
    }
    art.write("box_scatter.csv", scatter_csv);
    art.write("box_scatter.svg",
              svg_scatter(pts, "Box centers of query " + std::to_string(stats.main_query_id),
                          "cx", "cy"));

    EvalOptions opt = eval_options_from_params(params);
    auto [with_all, without_main] =
        mask_query_eval(dets, all_gts(samples), stats.main_query_id, threshold, opt);
    std::string mask_csv = csv_row({"condition", "map", "map50", "detections"});
    mask_csv += csv_row({"all queries", opt_metric(with_all.map), opt_metric(with_all.map50),
                         std::to_string(with_all.detection_count)});
    mask_csv += csv_row({"query " + std::to_string(stats.main_query_id) + " masked",
                         opt_metric(without_main.map), opt_metric(without_main.map50),
                         std::to_string(without_main.detection_count)});
    art.write("masking_report.csv", mask_csv);

    json summary;
    summary["total_detections"] = stats.total;
    summary["main_query_id"] = stats.main_query_id;
    summary["main_share"] = stats.main_share;
    summary["threshold"] = threshold;
    art.write("query_summary.json", summary.dump(2) + "\n");
    return finish_manifest("query-analysis", params, art);
}

json run_query_drop_ab(const json& params, const fs::path& out_dir) {
    Dataset ds = load_dataset_params(params);
    auto [train_set, test_set] = split_dataset(ds, get_or(params, "test_fraction", 0.2));
    ModelConfig mc = model_config_from_params(get_or(params, "model", json::object()));
    TrainConfig base = train_config_from_json(get_or(params, "train", json::object()));
    TrainConfig drop = base;
    base.query_drop_p = get_or(params, "base_p", 0.0);
    drop.query_drop_p = get_or(params, "drop_p", 0.15);

    AbReport report = ab_compare(mc, train_set, test_set, base, drop);

    ArtifactWriter art{out_dir, {}};
    art.write("ab_base.csv", loss_curve_to_csv(report.base));
    art.write("ab_drop.csv", loss_curve_to_csv(report.drop));

    std::vector<double> epochs_x(report.base.train_loss.size());
    for (size_t i = 0; i < epochs_x.size(); ++i) epochs_x[i] = static_cast<double>(i);
    art.write("ab_compare.svg",
              svg_line_chart({{"baseline train", epochs_x, report.base.train_loss},
                              {"baseline test", epochs_x, report.base.test_loss},
                              {"query-drop train", epochs_x, report.drop.train_loss},
                              {"query-drop test", epochs_x, report.drop.test_loss}},
                             "Query drop A/B", "epoch", "loss"));

    json summary;
    summary["base_p"] = base.query_drop_p;
    summary["drop_p"] = drop.query_drop_p;
    summary["base_final_test_loss"] = report.final_test_loss_base;
    summary["drop_final_test_loss"] = report.final_test_loss_drop;
    summary["delta"] = report.delta;
    art.write("ab_summary.json", summary.dump(2) + "\n");
    return finish_manifest("query-drop-ab", params, art);
}

json run_perturb(const json& params, const fs::path& out_dir) {
    require(params.contains("input"), "perturb needs an \"input\" image path");
    Image img = image_read(params.at("input").get<std::string>());
    std::string op = get_or(params, "op", "");
    unsigned long long seed = get_or(params, "seed", 0).get<unsigned long long>();

    Image result;
    if (op == "random-occlude") {
        OcclusionSpec spec;
        spec.ratio = get_or(params, "ratio", 0.2);
        spec.seed = seed;
        result = random_occlude(img, spec);
    } else if (op == "salient-occlude") {
        OcclusionSpec spec;
        spec.mode = OcclusionMode::Salient;
        spec.ratio = get_or(params, "ratio", 0.2);
        spec.seed = seed;
        SaliencyMap smap;
        if (params.contains("checkpoint")) {
            Detector model = load_checkpoint(params.at("checkpoint").get<std::string>());
            smap = saliency_map(img, &model, std::nullopt, SaliencyMethod::Attention);
        } else {
            smap = saliency_map(img, nullptr, std::nullopt, SaliencyMethod::EdgeEnergy);
        }
        result = salient_occlude(img, spec, smap);
    } else if (op == "sticker") {
        StickerSpec spec;
        spec.patch = params.contains("patch_file")
                         ? image_read(params.at("patch_file").get<std::string>())
                         : make_default_sticker(get_or(params, "side", 24), seed);
        if (params.contains("scale")) spec.scale = params.at("scale").get<double>();
        if (params.contains("location"))
            spec.location = std::make_pair(params.at("location")[0].get<int>(),
                                           params.at("location")[1].get<int>());
        spec.seed = seed;
        result = apply_sticker(img, spec);
    } else if (op == "corrupt") {
        CorruptionSpec spec;
        spec.family = corruption_family_from_name(get_or(params, "family", "gaussian-noise"));
        spec.severity = get_or(params, "severity", 3);
        spec.seed = seed;
        result = corrupt(img, spec);
    } else {
        throw ValidationError("unknown perturb op \"" + op +
                              "\" (expected random-occlude, salient-occlude, sticker, corrupt)");
    }

    std::string name = get_or(params, "output", "perturbed.ppm");
    ArtifactWriter art{out_dir, {}};
    image_write(result, (out_dir / name).string());
    art.note(name);
    return finish_manifest("perturb", params, art);
}

json run_evaluate(const json& params, const fs::path& out_dir) {
    require(params.contains("detections"), "evaluate needs a \"detections\" file");
    std::vector<Detection> dets =
        import_external_detections(params.at("detections").get<std::string>());
    Dataset ds = load_dataset_params(params);
    std::string split = get_or(params, "split", "all");
    std::vector<AnnotatedSample> samples;
    if (split == "all") {
        samples = ds.samples;
    } else {
        auto [train_set, test_set] = split_dataset(ds, get_or(params, "test_fraction", 0.2));
        samples = split == "train" ? train_set : test_set;
    }
    EvalOptions opt = eval_options_from_params(params);
    MetricReport rep = evaluate(dets, all_gts(samples), opt, ds.manifest.class_names);

    ArtifactWriter art{out_dir, {}};
    art.write("metric_report.json", metric_report_to_json(rep) + "\n");
    art.write("metric_report.csv", metric_report_to_csv(rep));
    return finish_manifest("evaluate", params, art);
}

}  // namespace

json run_experiment(const json& params, const fs::path& out_dir) {
    require(params.is_object(), "experiment params must be a JSON object");
    require(params.contains("kind"), "experiment params missing \"kind\"");
    std::string kind = params.at("kind").get<std::string>();
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw RuntimeFailure("cannot create output directory " + out_dir.string());

    if (kind == "train") return run_train(params, out_dir);
    if (kind == "occlusion-sweep") return run_occlusion_sweep(params, out_dir);
    if (kind == "sticker-eval") return run_sticker_eval(params, out_dir);
    if (kind == "corruption-benchmark") return run_corruption_benchmark(params, out_dir);
    if (kind == "query-analysis") return run_query_analysis(params, out_dir);
    if (kind == "query-drop-ab") return run_query_drop_ab(params, out_dir);
    if (kind == "perturb") return run_perturb(params, out_dir);
    if (kind == "evaluate") return run_evaluate(params, out_dir);
    throw ValidationError("unknown experiment kind \"" + kind + "\"");
}

json replay_manifest(const fs::path& manifest_path, const fs::path& out_dir) {
    json manifest;
    try {
        manifest = json::parse(read_text_file(manifest_path.string()));
    } catch (const json::exception& e) {
        throw ValidationError("manifest " + manifest_path.string() + " is not valid JSON: " +
                              e.what());
    }
    require(manifest.contains("params") && manifest.contains("kind"),
            "manifest " + manifest_path.string() + " missing \"kind\"/\"params\"");
    json params = manifest.at("params");
    params["kind"] = manifest.at("kind");
    return run_experiment(params, out_dir);
}

}  // namespace minidetr::cli
