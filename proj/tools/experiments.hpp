#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "minidetr/data.hpp"
#include "minidetr/trainer.hpp"

namespace minidetr::cli {

// Executes one experiment described entirely by `params` (which must carry a
// "kind" field), writes its artifacts plus a manifest.json into `out_dir`,
// and returns the manifest. Every runner is deterministic in its parameters,
// so replaying a manifest reproduces all artifacts byte-for-byte.
nlohmann::json run_experiment(const nlohmann::json& params, const std::filesystem::path& out_dir);

// Re-runs the experiment recorded in a manifest file into `out_dir`.
nlohmann::json replay_manifest(const std::filesystem::path& manifest_path,
                               const std::filesystem::path& out_dir);

// dataset loader shared by the runners: {"source":"synthetic",...} or
// {"source":"coco","annotations":...,"images":...}
Dataset load_dataset_params(const nlohmann::json& params);

// TrainConfig <-> json (manifest serialization)
nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

// index-ordered parallel map over [0, n) with a bounded worker pool; the
// reduction order is fixed by index, so thread count never changes results
std::vector<nlohmann::json> parallel_map_json(
    int n, int threads, const std::function<nlohmann::json(int)>& fn);

}  // namespace minidetr::cli
