#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "experiments.hpp"
#include "json.hpp"
#include "minidetr/errors.hpp"
#include "minidetr/report.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace minidetr;
using namespace minidetr::cli;

namespace {

// default output directory: --out flag, else MINIDETR_OUT, else cwd
fs::path resolve_out(const std::string& flag_value) {
    if (!flag_value.empty()) return flag_value;
    if (const char* env = std::getenv("MINIDETR_OUT")) return env;
    return ".";
}

json load_config_file(const std::string& path) {
    try {
        return json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        throw ValidationError("config file " + path + " is not valid JSON: " + e.what());
    }
}

struct DatasetFlags {
    std::string source = "synthetic";
    int count = 500;
    int max_objects = 3;
    int image_size = 128;
    unsigned long long seed = 2024;
    std::string annotations, images;

    void attach(CLI::App* cmd) {
        cmd->add_option("--dataset-source", source, "synthetic or coco")->capture_default_str();
        cmd->add_option("--dataset-count", count, "synthetic sample count")->capture_default_str();
        cmd->add_option("--dataset-max-objects", max_objects, "synthetic objects per image")
            ->capture_default_str();
        cmd->add_option("--dataset-image-size", image_size, "synthetic image side")
            ->capture_default_str();
        cmd->add_option("--dataset-seed", seed, "synthetic generator seed")->capture_default_str();
        cmd->add_option("--annotations", annotations, "COCO annotation JSON path");
        cmd->add_option("--images", images, "COCO image directory");
    }

    json to_json() const {
        json d;
        d["source"] = source;
        if (source == "synthetic") {
            d["count"] = count;
            d["max_objects"] = max_objects;
            d["image_size"] = image_size;
            d["seed"] = seed;
        } else {
            d["annotations"] = annotations;
            if (!images.empty()) d["images"] = images;
        }
        return d;
    }
};

int dispatch(const json& params, const fs::path& out_dir) {
    json manifest = run_experiment(params, out_dir);
    std::cout << "wrote " << manifest.at("artifacts").size() << " artifacts + manifest.json to "
              << out_dir.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mini-DETR experiment driver: training, robustness sweeps, query analytics"};
    app.require_subcommand(1);

    std::string out_flag;
    app.add_option("--out", out_flag, "output directory (default: $MINIDETR_OUT or cwd)");

    // ------------------------------------------------------------- train
    auto* train_cmd = app.add_subcommand("train", "train a detector and write checkpoint + curves");
    std::string train_config_path;
    DatasetFlags train_ds;
    int epochs = 100, batch_size = 8;
    double lr = 3e-4, drop_p = 0.0, target_map50 = -1.0, test_fraction = 0.2;
    unsigned long long train_seed = 0, model_seed = 0;
    int eval_every = 1;
    bool grad_record = false;
    train_cmd->add_option("--config", train_config_path, "JSON config; flags override its values");
    train_ds.attach(train_cmd);
    train_cmd->add_option("--epochs", epochs)->capture_default_str();
    train_cmd->add_option("--lr", lr)->capture_default_str();
    train_cmd->add_option("--batch-size", batch_size)->capture_default_str();
    train_cmd->add_option("--seed", train_seed, "training seed")->capture_default_str();
    train_cmd->add_option("--model-seed", model_seed, "weight init seed")->capture_default_str();
    train_cmd->add_option("--query-drop-p", drop_p)->capture_default_str();
    train_cmd->add_option("--target-map50", target_map50, "early-stop threshold, <0 disables")
        ->capture_default_str();
    train_cmd->add_option("--eval-every", eval_every)->capture_default_str();
    train_cmd->add_option("--test-fraction", test_fraction)->capture_default_str();
    train_cmd->add_flag("--gradient-record", grad_record, "record per-query gradient norms");

    // -------------------------------------------------- occlusion-sweep
    auto* occl_cmd = app.add_subcommand("occlusion-sweep", "mAP vs occlusion ratio table + chart");
    std::string occl_checkpoint, occl_mode = "random", occl_saliency = "attention",
                occl_split = "test";
    std::vector<std::string> occl_detections;
    std::vector<double> occl_ratios{0.2, 0.4, 0.6, 0.8};
    int occl_draws = 4;
    unsigned long long occl_seed = 0;
    bool occl_ignore = false;
    DatasetFlags occl_ds;
    occl_ds.attach(occl_cmd);
    occl_cmd->add_option("--checkpoint", occl_checkpoint, "trained model to occlude and re-run");
    occl_cmd->add_option("--detections", occl_detections,
                         "external detection files, one per ratio, evaluated as-is");
    occl_cmd->add_option("--ratios", occl_ratios, "occlusion ratios in [0,1]")->capture_default_str();
    occl_cmd->add_option("--mode", occl_mode, "random or salient")->capture_default_str();
    occl_cmd->add_option("--saliency", occl_saliency, "attention or edge-energy")
        ->capture_default_str();
    occl_cmd->add_option("--draws", occl_draws, "seeded draws averaged per ratio")
        ->capture_default_str();
    occl_cmd->add_option("--seed", occl_seed)->capture_default_str();
    occl_cmd->add_option("--split", occl_split, "test, train or all")->capture_default_str();
    occl_cmd->add_flag("--ignore-low-overlap", occl_ignore, "apply the 50% low-overlap ignore rule");
    bool occl_region_gt = false;
    occl_cmd->add_flag("--region-gt", occl_region_gt,
                       "restrict salient occlusion to each image's ground-truth union box");

    // ------------------------------------------------------ sticker-eval
    auto* stick_cmd = app.add_subcommand("sticker-eval", "clean vs sticker-attacked mAP + heatmaps");
    std::string stick_checkpoint, stick_patch, stick_split = "test";
    int stick_side = 24, stick_heatmaps = 3;
    double stick_scale = -1.0;
    std::vector<int> stick_location;
    unsigned long long stick_seed = 0;
    DatasetFlags stick_ds;
    stick_ds.attach(stick_cmd);
    stick_cmd->add_option("--checkpoint", stick_checkpoint)->required();
    stick_cmd->add_option("--patch-file", stick_patch, "PPM sticker; default: seeded checker patch");
    stick_cmd->add_option("--side", stick_side, "default sticker side in pixels")
        ->capture_default_str();
    stick_cmd->add_option("--scale", stick_scale, "fixed target-side fraction; <0 draws per image");
    stick_cmd->add_option("--location", stick_location, "fixed x y placement")->expected(2);
    stick_cmd->add_option("--heatmaps", stick_heatmaps, "attacked-image heatmap count")
        ->capture_default_str();
    stick_cmd->add_option("--seed", stick_seed)->capture_default_str();
    stick_cmd->add_option("--split", stick_split)->capture_default_str();

    // ---------------------------------------------- corruption-benchmark
    auto* corr_cmd = app.add_subcommand("corruption-benchmark",
                                        "15-family x 5-severity mAP grid + per-family charts");
    std::string corr_checkpoint, corr_split = "test", corr_att_family = "gaussian-noise";
    std::vector<std::string> corr_families;
    std::vector<int> corr_pixel;
    int corr_limit = 0;
    unsigned long long corr_seed = 0;
    DatasetFlags corr_ds;
    corr_ds.attach(corr_cmd);
    corr_cmd->add_option("--checkpoint", corr_checkpoint)->required();
    corr_cmd->add_option("--families", corr_families, "subset of corruption family names");
    corr_cmd->add_option("--limit", corr_limit, "cap on evaluated images, 0 = all")
        ->capture_default_str();
    corr_cmd->add_option("--attention-pixel", corr_pixel, "y x pixel for encoder-attention series")
        ->expected(2);
    corr_cmd->add_option("--attention-family", corr_att_family, "family for the attention series")
        ->capture_default_str();
    corr_cmd->add_option("--seed", corr_seed)->capture_default_str();
    corr_cmd->add_option("--split", corr_split)->capture_default_str();

    // ------------------------------------------------------ query-analysis
    auto* query_cmd = app.add_subcommand("query-analysis",
                                         "per-query frequency, class shares, scatter, masking");
    std::string query_checkpoint, query_split = "test";
    double query_threshold = 0.8;
    DatasetFlags query_ds;
    query_ds.attach(query_cmd);
    query_cmd->add_option("--checkpoint", query_checkpoint)->required();
    query_cmd->add_option("--threshold", query_threshold, "confidence threshold (strict >)")
        ->capture_default_str();
    query_cmd->add_option("--split", query_split)->capture_default_str();

    // ------------------------------------------------------ query-drop-ab
    auto* ab_cmd = app.add_subcommand("query-drop-ab",
                                      "train twice, with and without query drop, overlay curves");
    std::string ab_config_path;
    double ab_base_p = 0.0, ab_drop_p = 0.15, ab_lr = 3e-4, ab_test_fraction = 0.2;
    int ab_epochs = 20, ab_batch = 8;
    unsigned long long ab_seed = 0, ab_model_seed = 0;
    DatasetFlags ab_ds;
    ab_cmd->add_option("--config", ab_config_path, "JSON config; flags override its values");
    ab_ds.attach(ab_cmd);
    ab_cmd->add_option("--base-p", ab_base_p)->capture_default_str();
    ab_cmd->add_option("--drop-p", ab_drop_p)->capture_default_str();
    ab_cmd->add_option("--epochs", ab_epochs)->capture_default_str();
    ab_cmd->add_option("--lr", ab_lr)->capture_default_str();
    ab_cmd->add_option("--batch-size", ab_batch)->capture_default_str();
    ab_cmd->add_option("--seed", ab_seed)->capture_default_str();
    ab_cmd->add_option("--model-seed", ab_model_seed)->capture_default_str();
    ab_cmd->add_option("--test-fraction", ab_test_fraction)->capture_default_str();

    // ------------------------------------------------------------ perturb
    auto* pert_cmd = app.add_subcommand("perturb", "apply one perturbation to one image file");
    std::string pert_input, pert_output = "perturbed.ppm", pert_op, pert_family = "gaussian-noise",
                pert_patch, pert_checkpoint;
    double pert_ratio = 0.2, pert_scale = -1.0;
    int pert_severity = 3, pert_side = 24;
    std::vector<int> pert_location;
    unsigned long long pert_seed = 0;
    pert_cmd->add_option("--input", pert_input, "PPM image to perturb")->required();
    pert_cmd->add_option("--op", pert_op, "random-occlude, salient-occlude, sticker or corrupt")
        ->required();
    pert_cmd->add_option("--output", pert_output, "output file name inside --out")
        ->capture_default_str();
    pert_cmd->add_option("--ratio", pert_ratio, "occlusion ratio")->capture_default_str();
    pert_cmd->add_option("--family", pert_family, "corruption family")->capture_default_str();
    pert_cmd->add_option("--severity", pert_severity, "corruption severity 1..5")
        ->capture_default_str();
    pert_cmd->add_option("--patch-file", pert_patch, "sticker patch PPM");
    pert_cmd->add_option("--side", pert_side, "default sticker side")->capture_default_str();
    pert_cmd->add_option("--scale", pert_scale, "sticker scale; <0 draws from the seed");
    pert_cmd->add_option("--location", pert_location, "sticker x y placement")->expected(2);
    pert_cmd->add_option("--checkpoint", pert_checkpoint,
                         "model for attention saliency (salient-occlude)");
    pert_cmd->add_option("--seed", pert_seed)->capture_default_str();

    // ----------------------------------------------------------- evaluate
    auto* eval_cmd = app.add_subcommand("evaluate", "score a detections file against ground truth");
    std::string eval_detections, eval_split = "all";
    bool eval_ignore = false;
    DatasetFlags eval_ds;
    eval_ds.attach(eval_cmd);
    eval_cmd->add_option("--detections", eval_detections, "detections interchange JSON")->required();
    eval_cmd->add_option("--split", eval_split)->capture_default_str();
    eval_cmd->add_flag("--ignore-low-overlap", eval_ignore, "apply the 50% low-overlap ignore rule");

    // ------------------------------------------------------------- replay
    auto* replay_cmd = app.add_subcommand("replay", "re-run an emitted manifest bit-for-bit");
    std::string replay_path;
    replay_cmd->add_option("manifest", replay_path, "manifest.json from a previous run")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    fs::path out_dir = resolve_out(out_flag);
    try {
        if (*train_cmd) {
            json params = train_config_path.empty() ? json::object()
                                                    : load_config_file(train_config_path);
            params["kind"] = "train";
            if (!params.contains("dataset") || train_cmd->count("--dataset-source") ||
                train_cmd->count("--dataset-seed") || train_cmd->count("--dataset-count") ||
                train_cmd->count("--annotations"))
                params["dataset"] = train_ds.to_json();
            json& t = params["train"];
            if (t.is_null()) t = json::object();
            auto set_if = [&](const char* flag, const char* key, const json& v) {
                if (train_cmd->count(flag) || !t.contains(key)) t[key] = v;
            };
            set_if("--epochs", "epochs", epochs);
            set_if("--lr", "learning_rate", lr);
            set_if("--batch-size", "batch_size", batch_size);
            set_if("--seed", "seed", train_seed);
            set_if("--query-drop-p", "query_drop_p", drop_p);
            set_if("--target-map50", "target_map50", target_map50);
            set_if("--eval-every", "eval_every", eval_every);
            set_if("--gradient-record", "gradient_record", grad_record);
            if (!params.contains("model")) params["model"] = json::object();
            if (train_cmd->count("--model-seed") || !params["model"].contains("seed"))
                params["model"]["seed"] = model_seed;
            if (train_cmd->count("--test-fraction") || !params.contains("test_fraction"))
                params["test_fraction"] = test_fraction;
            return dispatch(params, out_dir);
        }
        if (*occl_cmd) {
            json params;
            params["kind"] = "occlusion-sweep";
            params["dataset"] = occl_ds.to_json();
            if (!occl_checkpoint.empty()) params["checkpoint"] = occl_checkpoint;
            if (!occl_detections.empty()) params["detections"] = occl_detections;
            params["ratios"] = occl_ratios;
            params["mode"] = occl_mode;
            params["saliency"] = occl_saliency;
            params["draws"] = occl_draws;
            params["seed"] = occl_seed;
            params["split"] = occl_split;
            if (occl_region_gt) params["region_gt"] = true;
            if (occl_ignore) params["eval"] = {{"ignore_low_overlap", true}};
            return dispatch(params, out_dir);
        }
        if (*stick_cmd) {
            json params;
            params["kind"] = "sticker-eval";
            params["dataset"] = stick_ds.to_json();
            params["checkpoint"] = stick_checkpoint;
            json sticker;
            if (!stick_patch.empty()) sticker["patch_file"] = stick_patch;
            sticker["side"] = stick_side;
            if (stick_scale >= 0.0) sticker["scale"] = stick_scale;
            if (!stick_location.empty()) sticker["location"] = stick_location;
            params["sticker"] = sticker;
            params["heatmaps"] = stick_heatmaps;
            params["seed"] = stick_seed;
            params["split"] = stick_split;
            return dispatch(params, out_dir);
        }
        if (*corr_cmd) {
            json params;
            params["kind"] = "corruption-benchmark";
            params["dataset"] = corr_ds.to_json();
            params["checkpoint"] = corr_checkpoint;
            if (!corr_families.empty()) params["families"] = corr_families;
            if (corr_limit > 0) params["limit"] = corr_limit;
            if (!corr_pixel.empty()) {
                params["attention_pixel"] = corr_pixel;
                params["attention_family"] = corr_att_family;
            }
            params["seed"] = corr_seed;
            params["split"] = corr_split;
            return dispatch(params, out_dir);
        }
        if (*query_cmd) {
            json params;
            params["kind"] = "query-analysis";
            params["dataset"] = query_ds.to_json();
            params["checkpoint"] = query_checkpoint;
            params["threshold"] = query_threshold;
            params["split"] = query_split;
            return dispatch(params, out_dir);
        }
        if (*ab_cmd) {
            json params = ab_config_path.empty() ? json::object() : load_config_file(ab_config_path);
            params["kind"] = "query-drop-ab";
            if (!params.contains("dataset") || ab_cmd->count("--dataset-seed") ||
                ab_cmd->count("--dataset-source"))
                params["dataset"] = ab_ds.to_json();
            json& t = params["train"];
            if (t.is_null()) t = json::object();
            auto set_if = [&](const char* flag, const char* key, const json& v) {
                if (ab_cmd->count(flag) || !t.contains(key)) t[key] = v;
            };
            set_if("--epochs", "epochs", ab_epochs);
            set_if("--lr", "learning_rate", ab_lr);
            set_if("--batch-size", "batch_size", ab_batch);
            set_if("--seed", "seed", ab_seed);
            if (ab_cmd->count("--base-p") || !params.contains("base_p")) params["base_p"] = ab_base_p;
            if (ab_cmd->count("--drop-p") || !params.contains("drop_p")) params["drop_p"] = ab_drop_p;
            if (!params.contains("model")) params["model"] = json::object();
            if (ab_cmd->count("--model-seed") || !params["model"].contains("seed"))
                params["model"]["seed"] = ab_model_seed;
            if (ab_cmd->count("--test-fraction") || !params.contains("test_fraction"))
                params["test_fraction"] = ab_test_fraction;
            return dispatch(params, out_dir);
        }
        if (*pert_cmd) {
            json params;
            params["kind"] = "perturb";
            params["input"] = pert_input;
            params["output"] = pert_output;
            params["op"] = pert_op;
            params["ratio"] = pert_ratio;
            params["family"] = pert_family;
            params["severity"] = pert_severity;
            params["side"] = pert_side;
            if (!pert_patch.empty()) params["patch_file"] = pert_patch;
            if (pert_scale >= 0.0) params["scale"] = pert_scale;
            if (!pert_location.empty()) params["location"] = pert_location;
            if (!pert_checkpoint.empty()) params["checkpoint"] = pert_checkpoint;
            params["seed"] = pert_seed;
            return dispatch(params, out_dir);
        }
        if (*eval_cmd) {
            json params;
            params["kind"] = "evaluate";
            params["dataset"] = eval_ds.to_json();
            params["detections"] = eval_detections;
            params["split"] = eval_split;
            if (eval_ignore) params["eval"] = {{"ignore_low_overlap", true}};
            return dispatch(params, out_dir);
        }
        if (*replay_cmd) {
            json manifest = replay_manifest(replay_path, out_dir);
            std::cout << "replayed " << manifest.at("kind").get<std::string>() << " into "
                      << out_dir.string() << "\n";
            return 0;
        }
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const RuntimeFailure& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
