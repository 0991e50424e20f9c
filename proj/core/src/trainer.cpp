#include "minidetr/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "minidetr/errors.hpp"
#include "minidetr/report.hpp"

namespace minidetr {

namespace {

// Adam/SGD over the model's named parameters, state kept in creation order
class Optimizer {
public:
    Optimizer(Detector& model, const TrainConfig& cfg) : model_(model), cfg_(cfg) {
        for (auto& [name, t] : model.parameters()) {
            m_.emplace_back(t.size(), 0.0);
            v_.emplace_back(t.size(), 0.0);
        }
    }

    // applies the update from the accumulated gradients scaled by `grad_scale`
    void step(double grad_scale) {
        ++t_;
        const OptimizerConfig& opt = cfg_.optimizer;
        auto params = model_.parameters();
        if (opt.kind == "adam") {
            double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(t_));
            double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(t_));
            for (size_t pi = 0; pi < params.size(); ++pi) {
                Tensor& p = params[pi].second;
                std::vector<double>& value = p.value();
                const std::vector<double>& grad = p.impl()->grad;
                std::vector<double>& m = m_[pi];
                std::vector<double>& v = v_[pi];
                for (size_t i = 0; i < value.size(); ++i) {
                    double g = grad[i] * grad_scale;
                    m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g;
                    v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g * g;
                    value[i] -= cfg_.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + opt.eps);
                }
            }
        } else {  // sgd
            for (size_t pi = 0; pi < params.size(); ++pi) {
                Tensor& p = params[pi].second;
                std::vector<double>& value = p.value();
                const std::vector<double>& grad = p.impl()->grad;
                std::vector<double>& m = m_[pi];
                for (size_t i = 0; i < value.size(); ++i) {
                    double g = grad[i] * grad_scale;
                    m[i] = opt.momentum * m[i] + g;
                    value[i] -= cfg_.learning_rate * m[i];
                }
            }
        }
    }

private:
    Detector& model_;
    const TrainConfig& cfg_;
    std::vector<std::vector<double>> m_, v_;
    long long t_ = 0;
};

void zero_param_grads(Detector& model) {
    for (auto& [name, t] : model.parameters()) t.zero_grad();
}

// forward + matching + loss for one sample; `kept` (when not all-true)
// restricts matching and loss to the retained queries
Tensor sample_loss(Detector& model, const AnnotatedSample& sample, const MatchWeights& weights,
                   const std::vector<char>* kept) {
    DetectorOutput out = model.forward(sample.image);
    Tensor logits = out.class_logits;
    Tensor boxes = out.boxes;
    if (kept) {
        std::vector<int> rows;
        for (size_t q = 0; q < kept->size(); ++q)
            if ((*kept)[q]) rows.push_back(static_cast<int>(q));
        if (rows.size() < kept->size()) {
            logits = gather_rows(logits, rows);
            boxes = gather_rows(boxes, rows);
        }
    }
    Assignment assignment = hungarian(match_cost(logits, boxes, sample.gts, weights));
    return set_loss(logits, boxes, sample.gts, assignment, weights);
}

}  // namespace

void validate_train_config(const TrainConfig& cfg) {
    if (cfg.epochs <= 0) throw ValidationError("train config: epochs must be positive");
    if (!(cfg.learning_rate >= 0.0)) throw ValidationError("train config: learning rate must be >= 0");
    if (cfg.batch_size <= 0) throw ValidationError("train config: batch size must be positive");
    if (!(cfg.query_drop_p >= 0.0 && cfg.query_drop_p < 1.0)) {
        throw ValidationError("train config: query_drop_p must lie in [0,1)");
    }
    if (cfg.optimizer.kind != "adam" && cfg.optimizer.kind != "sgd") {
        throw ValidationError("train config: optimizer must be adam or sgd");
    }
    if (cfg.eval_every <= 0) throw ValidationError("train config: eval_every must be positive");
}

std::vector<char> random_query_drop(int num_queries, double p, Rng& rng) {
    if (num_queries <= 0) throw ValidationError("query drop: need at least one query");
    if (!(p >= 0.0 && p < 1.0)) throw ValidationError("query drop: p must lie in [0,1)");
    std::vector<char> kept(num_queries, 1);
    if (p == 0.0) return kept;  // consumes no randomness: identical to the feature being absent
    bool any = false;
    for (int q = 0; q < num_queries; ++q) {
        kept[q] = rng.uniform() >= p ? 1 : 0;
        any |= kept[q] != 0;
    }
    if (!any) kept[rng.uniform_index(num_queries)] = 1;
    return kept;
}

std::pair<std::vector<AnnotatedSample>, std::vector<AnnotatedSample>> split_dataset(
    const Dataset& dataset, double test_fraction) {
    if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
        throw ValidationError("split: test fraction must lie in [0,1)");
    }
    size_t n = dataset.samples.size();
    size_t n_test = static_cast<size_t>(std::llround(test_fraction * n));
    size_t n_train = n - n_test;
    std::vector<AnnotatedSample> train(dataset.samples.begin(), dataset.samples.begin() + n_train);
    std::vector<AnnotatedSample> test(dataset.samples.begin() + n_train, dataset.samples.end());
    return {std::move(train), std::move(test)};
}

double dataset_loss(Detector& model, const std::vector<AnnotatedSample>& samples,
                    const MatchWeights& weights) {
    if (samples.empty()) return 0.0;
    double total = 0.0;
    for (const AnnotatedSample& s : samples) {
        // no active tape: values only, nothing recorded
        total += sample_loss(model, s, weights, nullptr).value()[0];
    }
    return total / samples.size();
}

MetricReport evaluate_model(Detector& model, const std::vector<AnnotatedSample>& samples,
                            const EvalOptions& options, const std::vector<std::string>& class_names) {
    std::vector<Detection> dets;
    std::vector<GroundTruth> gts;
    for (const AnnotatedSample& s : samples) {
        DetectorOutput out = model.forward(s.image);
        auto sample_dets = detections_from_output(out, s.image_id);
        dets.insert(dets.end(), sample_dets.begin(), sample_dets.end());
        gts.insert(gts.end(), s.gts.begin(), s.gts.end());
    }
    return evaluate(dets, gts, options, class_names);
}

TrainResult train(Detector& model, const std::vector<AnnotatedSample>& train_set,
                  const std::vector<AnnotatedSample>& test_set, const TrainConfig& cfg) {
    validate_train_config(cfg);
    if (train_set.empty()) throw ValidationError("train: empty training set");

    Rng order_rng(cfg.seed);
    // separate stream so drop draws never disturb the shuffle sequence
    Rng drop_rng(cfg.seed ^ 0x9E3779B97F4A7C15ull);
    Optimizer optimizer(model, cfg);
    QueryGradientRecorder recorder(model.config().num_queries);

    TrainResult result;
    int q_count = model.config().num_queries;

    int step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::vector<size_t> order = order_rng.permutation(train_set.size());
        double epoch_loss = 0.0;
        size_t cursor = 0;
        while (cursor < order.size()) {
            size_t batch_end = std::min(cursor + static_cast<size_t>(cfg.batch_size), order.size());
            int batch_count = static_cast<int>(batch_end - cursor);
            // one drop mask per optimizer iteration
            std::vector<char> kept(q_count, 1);
            const std::vector<char>* kept_ptr = nullptr;
            if (cfg.query_drop_p > 0.0) {
                kept = random_query_drop(q_count, cfg.query_drop_p, drop_rng);
                kept_ptr = &kept;
            }
            zero_param_grads(model);
            for (size_t bi = cursor; bi < batch_end; ++bi) {
                const AnnotatedSample& sample = train_set[order[bi]];
                Tape tape;
                Tape::Scope scope(tape);
                Tensor loss = sample_loss(model, sample, cfg.loss_weights, kept_ptr);
                double value = loss.value()[0];
                if (!std::isfinite(value)) {
                    throw RuntimeFailure("training diverged: non-finite loss at epoch " +
                                         std::to_string(epoch) + ", sample " +
                                         std::to_string(order[bi]));
                }
                epoch_loss += value;
                tape.backward(loss);
            }
            double grad_scale = 1.0 / batch_count;
            Tensor emb = model.query_embeddings();
            if (kept_ptr) {
                // dropped queries receive an exactly-zero applied gradient this
                // iteration: residual mass from serving as attention context for
                // kept queries is cleared before recording and stepping
                int d = emb.dim(1);
                std::vector<double>& grad = emb.impl()->grad;
                for (int q = 0; q < q_count; ++q) {
                    if (kept[q]) continue;
                    std::fill(grad.begin() + static_cast<size_t>(q) * d,
                              grad.begin() + static_cast<size_t>(q + 1) * d, 0.0);
                }
            }
            if (cfg.gradient_record) {
                // record the averaged batch gradient the optimizer is about to apply
                Tensor scaled = Tensor::zeros(emb.shape(), true);
                for (size_t i = 0; i < emb.size(); ++i)
                    scaled.impl()->grad[i] = emb.impl()->grad[i] * grad_scale;
                recorder.record(scaled);
            }
            if (cfg.step_hook) cfg.step_hook(step, kept, emb);
            optimizer.step(grad_scale);
            cursor = batch_end;
            ++step;
        }
        result.curve.train_loss.push_back(epoch_loss / train_set.size());
        result.curve.test_loss.push_back(dataset_loss(model, test_set, cfg.loss_weights));
        result.epochs_run = epoch + 1;
        if (!std::isfinite(result.curve.test_loss.back())) {
            throw RuntimeFailure("training diverged: non-finite test loss at epoch " +
                                 std::to_string(epoch));
        }

        if (cfg.target_map50 >= 0.0 && !test_set.empty() &&
            (epoch % cfg.eval_every == cfg.eval_every - 1 || epoch == cfg.epochs - 1)) {
            MetricReport report = evaluate_model(model, test_set);
            double map50 = report.map50.value_or(0.0);
            result.map50_history.emplace_back(epoch, map50);
            if (map50 >= cfg.target_map50) {
                result.reached_target = true;
                break;
            }
        }
    }
    if (cfg.gradient_record) result.gradients = recorder.finalize();
    return result;
}

AbReport ab_compare(const ModelConfig& model_cfg, const std::vector<AnnotatedSample>& train_set,
                    const std::vector<AnnotatedSample>& test_set, const TrainConfig& base,
                    const TrainConfig& drop) {
    TrainConfig aligned = drop;
    aligned.query_drop_p = base.query_drop_p;
    auto same = [](const TrainConfig& a, const TrainConfig& b) {
        return a.epochs == b.epochs && a.learning_rate == b.learning_rate &&
               a.optimizer.kind == b.optimizer.kind && a.optimizer.beta1 == b.optimizer.beta1 &&
               a.optimizer.beta2 == b.optimizer.beta2 && a.optimizer.eps == b.optimizer.eps &&
               a.optimizer.momentum == b.optimizer.momentum && a.batch_size == b.batch_size &&
               a.seed == b.seed && a.loss_weights.w_class == b.loss_weights.w_class &&
               a.loss_weights.w_l1 == b.loss_weights.w_l1 &&
               a.loss_weights.w_iou == b.loss_weights.w_iou &&
               a.loss_weights.lambda_noobj == b.loss_weights.lambda_noobj &&
               a.gradient_record == b.gradient_record && a.target_map50 == b.target_map50 &&
               a.eval_every == b.eval_every;
    };
    if (!same(base, aligned)) {
        throw ValidationError("ab_compare: configs must be identical except query_drop_p");
    }

    AbReport report;
    {
        Detector model(model_cfg);
        report.base = train(model, train_set, test_set, base).curve;
    }
    {
        Detector model(model_cfg);
        report.drop = train(model, train_set, test_set, drop).curve;
    }
    report.final_test_loss_base = report.base.test_loss.empty() ? 0.0 : report.base.test_loss.back();
    report.final_test_loss_drop = report.drop.test_loss.empty() ? 0.0 : report.drop.test_loss.back();
    report.delta = report.final_test_loss_drop - report.final_test_loss_base;
    return report;
}

std::string loss_curve_to_csv(const LossCurve& curve) {
    std::string out = "epoch,train_loss,test_loss\n";
    for (size_t e = 0; e < curve.train_loss.size(); ++e) {
        out += csv_row({std::to_string(e), format_double(curve.train_loss[e]),
                        format_double(curve.test_loss[e])});
    }
    return out;
}

}  // namespace minidetr
