#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "minidetr/image.hpp"
#include "minidetr/tensor.hpp"

namespace minidetr {

struct ModelConfig {
    int d_model = 64;
    int num_heads = 4;
    int enc_layers = 2;
    int dec_layers = 2;
    int num_queries = 16;
    int num_classes = 3;  // class index num_classes = "no-object"
    std::vector<int> backbone_channels = {8, 16, 32, 64};
    std::optional<int> cross_attention_window;  // feature-map patch radius (Chebyshev)
    unsigned long long seed = 0;

    int total_stride() const { return 1 << static_cast<int>(backbone_channels.size()); }
};

// throws ValidationError on invariant violations (divisibility, ranges)
void validate_config(const ModelConfig& cfg);

enum class AttentionStage { EncoderSelf, DecoderSelf, DecoderCross };
const char* attention_stage_name(AttentionStage s);

struct AttentionRecord {
    AttentionStage stage;
    int layer = 0;
    int head = 0;
    Tensor weights;  // [rows, keys], detached; every row sums to 1
};

struct DetectorOutput {
    Tensor class_logits;  // [Q, C+1]
    Tensor boxes;         // [Q, 4] (cx, cy, w, h), sigmoid-bounded
    std::vector<AttentionRecord> attention;
    int feat_h = 0, feat_w = 0, stride = 1;
};

struct Heatmap {
    int h = 0, w = 0;
    std::vector<double> values;
    double at(int y, int x) const { return values[static_cast<size_t>(y) * w + x]; }
};

// fixed 2D sinusoidal encoding, rows indexed y*w + x; d_model % 4 == 0
Tensor positional_encoding(int h, int w, int d_model);

// token (ty,tx) admitted iff Chebyshev distance to the reference token
// (floor(cy*h), floor(cx*w), clamped) is <= window; row-major h*w mask
std::vector<char> windowed_cross_attention_mask(double cx, double cy, int window, int h, int w);

struct MhaWeights {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

// Scaled dot-product attention (scale 1/sqrt(d_head)), per-head softmax over
// keys, heads concatenated then projected. `key_mask`, when non-null, admits
// keys per query row ([n_q*n_k] row-major). `records`, when non-null,
// receives one detached [n_q, n_k] weight record per head.
Tensor multi_head_attention(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                            const MhaWeights& w, int head_count,
                            const std::vector<char>* key_mask = nullptr,
                            std::vector<Tensor>* records = nullptr);

class Detector {
public:
    explicit Detector(ModelConfig cfg);

    DetectorOutput forward(const Image& image, bool record_attention = false);

    const ModelConfig& config() const { return cfg_; }
    // named parameters in fixed creation order (checkpoint/optimizer order)
    std::vector<std::pair<std::string, Tensor>>& parameters() { return params_; }
    const std::vector<std::pair<std::string, Tensor>>& parameters() const { return params_; }
    Tensor query_embeddings() const { return queries_; }
    Tensor parameter(const std::string& name) const;  // throws if unknown

private:
    struct EncLayer {
        MhaWeights attn;
        Tensor ln1_g, ln1_b;
        Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
        Tensor ln2_g, ln2_b;
    };
    struct DecLayer {
        MhaWeights self_attn;
        Tensor ln1_g, ln1_b;
        MhaWeights cross_attn;
        Tensor ln2_g, ln2_b;
        Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
        Tensor ln3_g, ln3_b;
    };

    Tensor add_param(const std::string& name, Tensor t);
    Tensor make_xavier(const std::string& name, int fan_in, int fan_out, const Shape& shape);
    MhaWeights make_mha(const std::string& prefix);

    ModelConfig cfg_;
    std::vector<std::pair<std::string, Tensor>> params_;
    class Rng* init_rng_ = nullptr;  // only alive during construction

    std::vector<Tensor> conv_kernels_, conv_biases_;
    Tensor proj_w_, proj_b_;
    std::vector<EncLayer> enc_;
    std::vector<DecLayer> dec_;
    Tensor queries_;
    Tensor class_w_, class_b_;
    Tensor box_w1_, box_b1_, box_w2_, box_b2_, box_w3_, box_b3_;
};

// attention-map extraction (requires record_attention at forward time)
Heatmap extract_encoder_attention(const DetectorOutput& out, std::pair<int, int> pixel, int layer,
                                  int head);
Heatmap extract_decoder_cross_attention(const DetectorOutput& out, int query_id, int layer, int head);

}  // namespace minidetr
