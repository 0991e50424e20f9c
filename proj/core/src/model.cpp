#include "minidetr/model.hpp"

#include <algorithm>
#include <cmath>

#include "minidetr/errors.hpp"
#include "minidetr/rng.hpp"

namespace minidetr {

void validate_config(const ModelConfig& cfg) {
    if (cfg.d_model <= 0 || cfg.num_heads <= 0 || cfg.d_model % cfg.num_heads != 0) {
        throw ValidationError("config: d_model (" + std::to_string(cfg.d_model) +
                              ") must be positive and divisible by num_heads (" +
                              std::to_string(cfg.num_heads) + ")");
    }
    if (cfg.d_model % 4 != 0) {
        throw ValidationError("config: d_model must be divisible by 4 for the 2D positional encoding");
    }
    if (cfg.enc_layers < 1 || cfg.dec_layers < 1) {
        throw ValidationError("config: need at least one encoder and one decoder layer");
    }
    if (cfg.num_queries < 1) throw ValidationError("config: num_queries must be >= 1");
    if (cfg.num_classes < 1) throw ValidationError("config: num_classes must be >= 1");
    if (cfg.backbone_channels.empty()) throw ValidationError("config: backbone_channels is empty");
    for (int c : cfg.backbone_channels) {
        if (c <= 0) throw ValidationError("config: non-positive backbone channel count");
    }
    if (cfg.cross_attention_window && *cfg.cross_attention_window < 1) {
        throw ValidationError("config: cross_attention_window must be >= 1 when set");
    }
}

const char* attention_stage_name(AttentionStage s) {
    switch (s) {
        case AttentionStage::EncoderSelf: return "encoder-self";
        case AttentionStage::DecoderSelf: return "decoder-self";
        case AttentionStage::DecoderCross: return "decoder-cross";
    }
    return "?";
}

Tensor positional_encoding(int h, int w, int d_model) {
    if (d_model % 4 != 0) {
        throw ValidationError("positional_encoding: d_model " + std::to_string(d_model) +
                              " not divisible by 4");
    }
    int quarter = d_model / 4;
    Tensor pe = Tensor::zeros({h * w, d_model});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            int row = y * w + x;
            for (int i = 0; i < quarter; ++i) {
                double freq = std::pow(10000.0, -static_cast<double>(i) / quarter);
                pe(row, i) = std::sin(x * freq);
                pe(row, quarter + i) = std::cos(x * freq);
                pe(row, 2 * quarter + i) = std::sin(y * freq);
                pe(row, 3 * quarter + i) = std::cos(y * freq);
            }
        }
    }
    return pe;
}

std::vector<char> windowed_cross_attention_mask(double cx, double cy, int window, int h, int w) {
    int ry = std::clamp(static_cast<int>(std::floor(cy * h)), 0, h - 1);
    int rx = std::clamp(static_cast<int>(std::floor(cx * w)), 0, w - 1);
    std::vector<char> keep(static_cast<size_t>(h) * w, 0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            int cheb = std::max(std::abs(y - ry), std::abs(x - rx));
            keep[static_cast<size_t>(y) * w + x] = cheb <= window ? 1 : 0;
        }
    }
    return keep;
}

Tensor multi_head_attention(const Tensor& q_in, const Tensor& k_in, const Tensor& v_in,
                            const MhaWeights& w, int head_count, const std::vector<char>* key_mask,
                            std::vector<Tensor>* records) {
    if (q_in.ndim() != 2 || k_in.ndim() != 2 || v_in.ndim() != 2 || q_in.dim(1) != k_in.dim(1) ||
        k_in.shape() != v_in.shape()) {
        throw ValidationError("multi_head_attention: bad operand shapes " + shape_str(q_in.shape()) + ", " +
                              shape_str(k_in.shape()) + ", " + shape_str(v_in.shape()));
    }
    int d = q_in.dim(1);
    if (d % head_count != 0) {
        throw ValidationError("multi_head_attention: d_model " + std::to_string(d) +
                              " not divisible by head count " + std::to_string(head_count));
    }
    int dh = d / head_count;
    int nq = q_in.dim(0), nk = k_in.dim(0);
    if (key_mask && key_mask->size() != static_cast<size_t>(nq) * nk) {
        throw ValidationError("multi_head_attention: key mask size mismatch");
    }
    Tensor q = add(matmul(q_in, w.wq), w.bq);
    Tensor k = add(matmul(k_in, w.wk), w.bk);
    Tensor v = add(matmul(v_in, w.wv), w.bv);
    double scaling = 1.0 / std::sqrt(static_cast<double>(dh));

    std::vector<Tensor> heads;
    heads.reserve(head_count);
    std::vector<char> all_keep;
    if (!key_mask) all_keep.assign(static_cast<size_t>(nq) * nk, 1);
    const std::vector<char>& keep = key_mask ? *key_mask : all_keep;
    for (int hI = 0; hI < head_count; ++hI) {
        Tensor qh = slice_cols(q, hI * dh, (hI + 1) * dh);
        Tensor kh = slice_cols(k, hI * dh, (hI + 1) * dh);
        Tensor vh = slice_cols(v, hI * dh, (hI + 1) * dh);
        Tensor scores = scale(matmul(qh, transpose(kh)), scaling);
        Tensor weights = masked_softmax(scores, keep, 1);
        if (records) {
            Tensor snap = Tensor::zeros({nq, nk});
            snap.value() = weights.value();
            records->push_back(snap);
        }
        heads.push_back(matmul(weights, vh));
    }
    Tensor cat = head_count == 1 ? heads[0] : concat_cols(heads);
    return add(matmul(cat, w.wo), w.bo);
}

// ---------------------------------------------------------------- detector

Tensor Detector::add_param(const std::string& name, Tensor t) {
    t.impl()->requires_grad = true;
    params_.emplace_back(name, t);
    return t;
}

Tensor Detector::make_xavier(const std::string& name, int fan_in, int fan_out, const Shape& shape) {
    double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t = Tensor::zeros(shape);
    for (double& v : t.value()) v = init_rng_->uniform(-a, a);
    return add_param(name, t);
}

MhaWeights Detector::make_mha(const std::string& prefix) {
    int d = cfg_.d_model;
    MhaWeights w;
    w.wq = make_xavier(prefix + ".wq", d, d, {d, d});
    w.bq = add_param(prefix + ".bq", Tensor::zeros({d}));
    w.wk = make_xavier(prefix + ".wk", d, d, {d, d});
    w.bk = add_param(prefix + ".bk", Tensor::zeros({d}));
    w.wv = make_xavier(prefix + ".wv", d, d, {d, d});
    w.bv = add_param(prefix + ".bv", Tensor::zeros({d}));
    w.wo = make_xavier(prefix + ".wo", d, d, {d, d});
    w.bo = add_param(prefix + ".bo", Tensor::zeros({d}));
    return w;
}

Detector::Detector(ModelConfig cfg) : cfg_(std::move(cfg)) {
    validate_config(cfg_);
    Rng rng(cfg_.seed);
    init_rng_ = &rng;
    int d = cfg_.d_model;

    int cin = 3;
    for (size_t i = 0; i < cfg_.backbone_channels.size(); ++i) {
        int cout = cfg_.backbone_channels[i];
        std::string name = "backbone." + std::to_string(i);
        conv_kernels_.push_back(
            make_xavier(name + ".kernel", cin * 9, cout * 9, {cout, cin, 3, 3}));
        conv_biases_.push_back(add_param(name + ".bias", Tensor::zeros({cout, 1, 1})));
        cin = cout;
    }
    proj_w_ = make_xavier("proj.w", cin, d, {cin, d});
    proj_b_ = add_param("proj.b", Tensor::zeros({d}));

    auto make_ln = [&](const std::string& name, Tensor& g, Tensor& b) {
        g = add_param(name + ".gamma", Tensor::full({d}, 1.0));
        b = add_param(name + ".beta", Tensor::zeros({d}));
    };
    int ffn_hidden = 2 * d;
    for (int l = 0; l < cfg_.enc_layers; ++l) {
        std::string p = "encoder." + std::to_string(l);
        EncLayer el;
        el.attn = make_mha(p + ".self");
        make_ln(p + ".ln1", el.ln1_g, el.ln1_b);
        el.ffn_w1 = make_xavier(p + ".ffn.w1", d, ffn_hidden, {d, ffn_hidden});
        el.ffn_b1 = add_param(p + ".ffn.b1", Tensor::zeros({ffn_hidden}));
        el.ffn_w2 = make_xavier(p + ".ffn.w2", ffn_hidden, d, {ffn_hidden, d});
        el.ffn_b2 = add_param(p + ".ffn.b2", Tensor::zeros({d}));
        make_ln(p + ".ln2", el.ln2_g, el.ln2_b);
        enc_.push_back(std::move(el));
    }
    for (int l = 0; l < cfg_.dec_layers; ++l) {
        std::string p = "decoder." + std::to_string(l);
        DecLayer dl;
        dl.self_attn = make_mha(p + ".self");
        make_ln(p + ".ln1", dl.ln1_g, dl.ln1_b);
        dl.cross_attn = make_mha(p + ".cross");
        make_ln(p + ".ln2", dl.ln2_g, dl.ln2_b);
        dl.ffn_w1 = make_xavier(p + ".ffn.w1", d, ffn_hidden, {d, ffn_hidden});
        dl.ffn_b1 = add_param(p + ".ffn.b1", Tensor::zeros({ffn_hidden}));
        dl.ffn_w2 = make_xavier(p + ".ffn.w2", ffn_hidden, d, {ffn_hidden, d});
        dl.ffn_b2 = add_param(p + ".ffn.b2", Tensor::zeros({d}));
        make_ln(p + ".ln3", dl.ln3_g, dl.ln3_b);
        dec_.push_back(std::move(dl));
    }

    Tensor q = Tensor::zeros({cfg_.num_queries, d});
    for (double& v : q.value()) v = rng.uniform(-0.5, 0.5);
    queries_ = add_param("queries", q);

    int ncls = cfg_.num_classes + 1;
    class_w_ = make_xavier("head.class.w", d, ncls, {d, ncls});
    class_b_ = add_param("head.class.b", Tensor::zeros({ncls}));
    box_w1_ = make_xavier("head.box.w1", d, d, {d, d});
    box_b1_ = add_param("head.box.b1", Tensor::zeros({d}));
    box_w2_ = make_xavier("head.box.w2", d, d, {d, d});
    box_b2_ = add_param("head.box.b2", Tensor::zeros({d}));
    box_w3_ = make_xavier("head.box.w3", d, 4, {d, 4});
    box_b3_ = add_param("head.box.b3", Tensor::zeros({4}));
    init_rng_ = nullptr;
}

Tensor Detector::parameter(const std::string& name) const {
    for (const auto& [n, t] : params_)
        if (n == name) return t;
    throw ValidationError("unknown parameter: " + name);
}

DetectorOutput Detector::forward(const Image& image, bool record_attention) {
    int stride = cfg_.total_stride();
    if (image.height <= 0 || image.width <= 0 || image.height % stride != 0 ||
        image.width % stride != 0) {
        throw ValidationError("forward: image " + std::to_string(image.width) + "x" +
                              std::to_string(image.height) + " not divisible by backbone stride " +
                              std::to_string(stride));
    }
    int fh = image.height / stride, fw = image.width / stride;

    DetectorOutput out;
    out.feat_h = fh;
    out.feat_w = fw;
    out.stride = stride;
    std::vector<Tensor> head_records;
    auto flush_records = [&](AttentionStage stage, int layer) {
        for (size_t h = 0; h < head_records.size(); ++h) {
            out.attention.push_back(AttentionRecord{stage, layer, static_cast<int>(h), head_records[h]});
        }
        head_records.clear();
    };
    std::vector<Tensor>* rec = record_attention ? &head_records : nullptr;

    // backbone
    Tensor x = image_to_tensor(image);
    for (size_t i = 0; i < conv_kernels_.size(); ++i) {
        x = relu(add(conv2d(x, conv_kernels_[i], 2, 1), conv_biases_[i]));
    }
    // tokens [N, C] -> project -> + positional encoding
    int n = fh * fw;
    Tensor tokens = transpose(reshape(x, {x.dim(0), n}));
    Tensor mem = add(add(matmul(tokens, proj_w_), proj_b_), positional_encoding(fh, fw, cfg_.d_model));

    // encoder (post-norm)
    for (int l = 0; l < cfg_.enc_layers; ++l) {
        const EncLayer& el = enc_[l];
        Tensor att = multi_head_attention(mem, mem, mem, el.attn, cfg_.num_heads, nullptr, rec);
        if (record_attention) flush_records(AttentionStage::EncoderSelf, l);
        mem = layernorm(add(mem, att), el.ln1_g, el.ln1_b, 1e-5);
        Tensor ff = add(matmul(relu(add(matmul(mem, el.ffn_w1), el.ffn_b1)), el.ffn_w2), el.ffn_b2);
        mem = layernorm(add(mem, ff), el.ln2_g, el.ln2_b, 1e-5);
    }

    auto box_head = [&](const Tensor& in) {
        Tensor h1 = relu(add(matmul(in, box_w1_), box_b1_));
        Tensor h2 = relu(add(matmul(h1, box_w2_), box_b2_));
        return sigmoid(add(matmul(h2, box_w3_), box_b3_));
    };

    // decoder: object queries attend to the encoded memory
    int q = cfg_.num_queries;
    Tensor dx = queries_;
    std::vector<char> window_keep;
    for (int l = 0; l < cfg_.dec_layers; ++l) {
        const DecLayer& dl = dec_[l];
        if (cfg_.cross_attention_window) {
            int win = *cfg_.cross_attention_window;
            window_keep.assign(static_cast<size_t>(q) * n, 0);
            std::vector<std::pair<double, double>> refs(q, {0.5, 0.5});  // layer 0: map center
            if (l > 0) {
                Tape::Suspend suspend;  // reference boxes are not differentiated through
                Tensor ref_boxes = box_head(dx);
                for (int i = 0; i < q; ++i) refs[i] = {ref_boxes(i, 0), ref_boxes(i, 1)};
            }
            for (int i = 0; i < q; ++i) {
                auto keep = windowed_cross_attention_mask(refs[i].first, refs[i].second, win, fh, fw);
                std::copy(keep.begin(), keep.end(), window_keep.begin() + static_cast<size_t>(i) * n);
            }
        }
        Tensor sa = multi_head_attention(dx, dx, dx, dl.self_attn, cfg_.num_heads, nullptr, rec);
        if (record_attention) flush_records(AttentionStage::DecoderSelf, l);
        dx = layernorm(add(dx, sa), dl.ln1_g, dl.ln1_b, 1e-5);
        Tensor ca = multi_head_attention(dx, mem, mem, dl.cross_attn, cfg_.num_heads,
                                         cfg_.cross_attention_window ? &window_keep : nullptr, rec);
        if (record_attention) flush_records(AttentionStage::DecoderCross, l);
        dx = layernorm(add(dx, ca), dl.ln2_g, dl.ln2_b, 1e-5);
        Tensor ff = add(matmul(relu(add(matmul(dx, dl.ffn_w1), dl.ffn_b1)), dl.ffn_w2), dl.ffn_b2);
        dx = layernorm(add(dx, ff), dl.ln3_g, dl.ln3_b, 1e-5);
    }

    out.class_logits = add(matmul(dx, class_w_), class_b_);
    out.boxes = box_head(dx);
    return out;
}

// --------------------------------------------------------------- heatmaps

namespace {

const AttentionRecord& find_record(const DetectorOutput& out, AttentionStage stage, int layer, int head) {
    if (out.attention.empty()) {
        throw ValidationError("attention extraction: forward ran without record_attention");
    }
    for (const AttentionRecord& r : out.attention) {
        if (r.stage == stage && r.layer == layer && r.head == head) return r;
    }
    throw ValidationError(std::string("attention extraction: no record for stage ") +
                          attention_stage_name(stage) + " layer " + std::to_string(layer) + " head " +
                          std::to_string(head));
}

Heatmap row_to_heatmap(const Tensor& weights, int row, int fh, int fw) {
    Heatmap hm;
    hm.h = fh;
    hm.w = fw;
    hm.values.resize(static_cast<size_t>(fh) * fw);
    for (int i = 0; i < fh * fw; ++i) hm.values[i] = weights(row, i);
    return hm;
}

}  // namespace

Heatmap extract_encoder_attention(const DetectorOutput& out, std::pair<int, int> pixel, int layer,
                                  int head) {
    const AttentionRecord& r = find_record(out, AttentionStage::EncoderSelf, layer, head);
    int py = pixel.first, px = pixel.second;
    int fy = py / out.stride, fx = px / out.stride;
    if (py < 0 || px < 0 || fy >= out.feat_h || fx >= out.feat_w) {
        throw ValidationError("extract_encoder_attention: pixel (" + std::to_string(py) + ", " +
                              std::to_string(px) + ") outside the image");
    }
    return row_to_heatmap(r.weights, fy * out.feat_w + fx, out.feat_h, out.feat_w);
}

Heatmap extract_decoder_cross_attention(const DetectorOutput& out, int query_id, int layer, int head) {
    const AttentionRecord& r = find_record(out, AttentionStage::DecoderCross, layer, head);
    if (query_id < 0 || query_id >= r.weights.dim(0)) {
        throw ValidationError("extract_decoder_cross_attention: query id " + std::to_string(query_id) +
                              " out of range");
    }
    return row_to_heatmap(r.weights, query_id, out.feat_h, out.feat_w);
}

}  // namespace minidetr
