#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "minidetr/analytics.hpp"
#include "minidetr/data.hpp"
#include "minidetr/matching.hpp"
#include "minidetr/model.hpp"
#include "minidetr/rng.hpp"

namespace minidetr {

struct OptimizerConfig {
    std::string kind = "adam";  // "adam" or "sgd"
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double momentum = 0.0;  // sgd only
};

// observes each optimizer iteration after gradient averaging, before the
// update: (step index, kept-query mask, query embeddings with final grads)
using StepHook = std::function<void(int, const std::vector<char>&, const Tensor&)>;

struct TrainConfig {
    int epochs = 100;
    double learning_rate = 3e-4;
    OptimizerConfig optimizer;
    int batch_size = 8;
    unsigned long long seed = 0;
    double query_drop_p = 0.0;  // in [0,1); dropped queries leave matching/loss for one iteration
    MatchWeights loss_weights;
    bool gradient_record = false;
    double target_map50 = -1.0;  // >= 0: stop once test mAP50 reaches it
    int eval_every = 1;          // epochs between test mAP evaluations
    StepHook step_hook;          // optional instrumentation
};

void validate_train_config(const TrainConfig& cfg);

struct LossCurve {
    std::vector<double> train_loss;  // one entry per epoch actually run
    std::vector<double> test_loss;
};

struct TrainResult {
    LossCurve curve;
    std::optional<GradientFlowRecord> gradients;
    std::vector<std::pair<int, double>> map50_history;  // (epoch, test mAP50) at eval points
    int epochs_run = 0;
    bool reached_target = false;
};

// Each query is retained independently with probability 1-p; an empty draw
// force-retains one uniformly chosen query. p == 0 returns all-kept without
// consuming any randomness. The trainer draws one mask per optimizer
// iteration; dropped queries are excluded from matching and loss, and their
// embedding rows receive an exactly-zero applied gradient for that iteration.
std::vector<char> random_query_drop(int num_queries, double p, Rng& rng);

// deterministic 80/20 split by sample index: first 80% train, rest test
std::pair<std::vector<AnnotatedSample>, std::vector<AnnotatedSample>> split_dataset(
    const Dataset& dataset, double test_fraction = 0.2);

// Deterministic training loop: given (model seed, dataset, config) every
// parameter bit of the result is reproducible. Aborts with RuntimeFailure if
// the loss turns non-finite.
TrainResult train(Detector& model, const std::vector<AnnotatedSample>& train_set,
                  const std::vector<AnnotatedSample>& test_set, const TrainConfig& cfg);

// mean set loss over a sample list (matching included, no gradients, no drop)
double dataset_loss(Detector& model, const std::vector<AnnotatedSample>& samples,
                    const MatchWeights& weights);

// test-set mAP evaluation helper shared by the trainer and the CLI
MetricReport evaluate_model(Detector& model, const std::vector<AnnotatedSample>& samples,
                            const EvalOptions& options = {},
                            const std::vector<std::string>& class_names = {});

struct AbReport {
    LossCurve base, drop;
    double final_test_loss_base = 0.0;
    double final_test_loss_drop = 0.0;
    double delta = 0.0;  // drop - base; sign is reported, not asserted
};

// trains two fresh models from the same ModelConfig; configs must be
// identical except query_drop_p
AbReport ab_compare(const ModelConfig& model_cfg, const std::vector<AnnotatedSample>& train_set,
                    const std::vector<AnnotatedSample>& test_set, const TrainConfig& base,
                    const TrainConfig& drop);

std::string loss_curve_to_csv(const LossCurve& curve);

}  // namespace minidetr
