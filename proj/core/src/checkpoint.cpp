#include "minidetr/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>

#include "json.hpp"
#include "minidetr/errors.hpp"

namespace minidetr {

namespace {

constexpr char kMagic[4] = {'M', 'D', 'T', 'C'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& out, uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 4);
}

void put_u64(std::ostream& out, uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 8);
}

void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<uint64_t>(v)); }

uint32_t get_u32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw ValidationError(path + ": truncated checkpoint");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

uint64_t get_u64(std::istream& in, const std::string& path) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw ValidationError(path + ": truncated checkpoint");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

double get_f64(std::istream& in, const std::string& path) {
    return std::bit_cast<double>(get_u64(in, path));
}

std::string get_bytes(std::istream& in, size_t n, const std::string& path) {
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    if (!in) throw ValidationError(path + ": truncated checkpoint");
    return s;
}

}  // namespace

std::string config_to_json(const ModelConfig& cfg) {
    nlohmann::json j;
    j["d_model"] = cfg.d_model;
    j["num_heads"] = cfg.num_heads;
    j["enc_layers"] = cfg.enc_layers;
    j["dec_layers"] = cfg.dec_layers;
    j["num_queries"] = cfg.num_queries;
    j["num_classes"] = cfg.num_classes;
    j["backbone_channels"] = cfg.backbone_channels;
    if (cfg.cross_attention_window) {
        j["cross_attention_window"] = *cfg.cross_attention_window;
    } else {
        j["cross_attention_window"] = nullptr;
    }
    j["seed"] = cfg.seed;
    return j.dump();
}

ModelConfig config_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(std::string("model config: JSON parse error: ") + e.what());
    }
    ModelConfig cfg;
    cfg.d_model = j.at("d_model").get<int>();
    cfg.num_heads = j.at("num_heads").get<int>();
    cfg.enc_layers = j.at("enc_layers").get<int>();
    cfg.dec_layers = j.at("dec_layers").get<int>();
    cfg.num_queries = j.at("num_queries").get<int>();
    cfg.num_classes = j.at("num_classes").get<int>();
    cfg.backbone_channels = j.at("backbone_channels").get<std::vector<int>>();
    if (j.contains("cross_attention_window") && !j["cross_attention_window"].is_null()) {
        cfg.cross_attention_window = j["cross_attention_window"].get<int>();
    }
    cfg.seed = j.at("seed").get<unsigned long long>();
    validate_config(cfg);
    return cfg;
}

void save_checkpoint(const Detector& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw RuntimeFailure(path + ": cannot open for writing");
    out.write(kMagic, 4);
    put_u32(out, kVersion);
    std::string cfg = config_to_json(model.config());
    put_u64(out, cfg.size());
    out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    const auto& params = model.parameters();
    put_u64(out, params.size());
    for (const auto& [name, t] : params) {
        put_u64(out, name.size());
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u64(out, t.shape().size());
        for (int d : t.shape()) put_u64(out, static_cast<uint64_t>(d));
        for (double v : t.value()) put_f64(out, v);
    }
    if (!out) throw RuntimeFailure(path + ": write failed");
}

Detector load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError(path + ": cannot open checkpoint");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::string(magic, 4) != std::string(kMagic, 4)) {
        throw ValidationError(path + ": not a model checkpoint (bad magic)");
    }
    uint32_t version = get_u32(in, path);
    if (version != kVersion) {
        throw ValidationError(path + ": unsupported checkpoint version " + std::to_string(version));
    }
    uint64_t cfg_len = get_u64(in, path);
    ModelConfig cfg = config_from_json(get_bytes(in, cfg_len, path));
    Detector model(cfg);
    auto& params = model.parameters();
    uint64_t count = get_u64(in, path);
    if (count != params.size()) {
        throw ValidationError(path + ": checkpoint has " + std::to_string(count) + " tensors, model needs " +
                              std::to_string(params.size()));
    }
    for (auto& [name, t] : params) {
        uint64_t name_len = get_u64(in, path);
        std::string got = get_bytes(in, name_len, path);
        if (got != name) {
            throw ValidationError(path + ": tensor name mismatch: expected " + name + ", found " + got);
        }
        uint64_t ndim = get_u64(in, path);
        Shape shape(ndim);
        for (uint64_t i = 0; i < ndim; ++i) shape[i] = static_cast<int>(get_u64(in, path));
        if (shape != t.shape()) {
            throw ValidationError(path + ": shape mismatch for " + name + ": expected " +
                                  shape_str(t.shape()) + ", found " + shape_str(shape));
        }
        for (double& v : t.value()) v = get_f64(in, path);
    }
    return model;
}

}  // namespace minidetr
