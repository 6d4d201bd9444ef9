#include "thermoformer/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "thermoformer/common.hpp"

namespace thermoformer {

using ad::Graph;
using ad::Tensor;

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kMaskValue = -1e9;
constexpr char kCheckpointMagic[8] = {'T', 'F', 'M', 'C', 'K', 'P', 'T', '1'};

}  // namespace

void ModelConfig::validate() const {
    if (hidden_dim == 0 || n_heads == 0 || ffn_dim == 0) {
        throw config_error("hidden_dim, n_heads and ffn_dim must be positive");
    }
    if (hidden_dim % n_heads != 0) {
        throw config_error("hidden_dim " + std::to_string(hidden_dim) +
                           " must be divisible by n_heads " + std::to_string(n_heads));
    }
    if (head_dim() % 2 != 0) {
        throw config_error("head dimension " + std::to_string(head_dim()) +
                           " must be even for rotary pairs");
    }
    if (n_layers_past == 0 || n_layers_future == 0) {
        throw config_error("both stacks need at least one layer");
    }
    if (context_hours < 2) {
        throw config_error("context_hours must be at least 2, got " +
                           std::to_string(context_hours));
    }
    if (!(rope_base > 1.0)) {
        throw config_error("rope_base must be > 1");
    }
    if (dropout != 0.0) {
        throw config_error("dropout is reserved and must be 0");
    }
    if (input_dim == 0 || static_dim == 0) {
        throw config_error("input_dim and static_dim must be positive");
    }
}

nlohmann::json ModelConfig::to_json() const {
    return nlohmann::json{{"hidden_dim", hidden_dim},
                          {"n_heads", n_heads},
                          {"ffn_dim", ffn_dim},
                          {"n_layers_past", n_layers_past},
                          {"n_layers_future", n_layers_future},
                          {"context_hours", context_hours},
                          {"rope_base", rope_base},
                          {"dropout", dropout},
                          {"input_dim", input_dim},
                          {"static_dim", static_dim},
                          {"with_future_weather", with_future_weather}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    cfg.n_heads = j.at("n_heads").get<std::size_t>();
    cfg.ffn_dim = j.at("ffn_dim").get<std::size_t>();
    cfg.n_layers_past = j.at("n_layers_past").get<std::size_t>();
    cfg.n_layers_future = j.at("n_layers_future").get<std::size_t>();
    cfg.context_hours = j.at("context_hours").get<std::size_t>();
    cfg.rope_base = j.at("rope_base").get<double>();
    cfg.dropout = j.at("dropout").get<double>();
    cfg.input_dim = j.at("input_dim").get<std::size_t>();
    cfg.static_dim = j.at("static_dim").get<std::size_t>();
    cfg.with_future_weather = j.at("with_future_weather").get<bool>();
    cfg.validate();
    return cfg;
}

std::size_t param_count(const ModelConfig& cfg) {
    std::size_t h = cfg.hidden_dim;
    std::size_t per_block = 4 * h * h + 2 * h * cfg.ffn_dim + 9 * h + cfg.ffn_dim;
    std::size_t projections = cfg.input_dim * h + h    // past
                              + cfg.static_dim * h + h  // statics
                              + cfg.future_dim() * h + h;  // future covariates
    std::size_t head = h + 1;
    return projections + (cfg.n_layers_past + cfg.n_layers_future) * per_block + head;
}

std::vector<std::pair<std::string, Tensor*>> ModelParams::named() {
    std::vector<std::pair<std::string, Tensor*>> out;
    auto push = [&](std::string name, Tensor& t) { out.emplace_back(std::move(name), &t); };
    push("past_proj.w", past_w);
    push("past_proj.b", past_b);
    push("static_proj.w", static_w);
    push("static_proj.b", static_b);
    push("future_proj.w", future_w);
    push("future_proj.b", future_b);
    auto push_blocks = [&](std::vector<Block>& blocks, const std::string& stack) {
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            std::string p = stack + "." + std::to_string(i) + ".";
            Block& b = blocks[i];
            push(p + "ln1.gain", b.ln1_gain);
            push(p + "ln1.bias", b.ln1_bias);
            push(p + "attn.wq", b.wq);
            push(p + "attn.bq", b.bq);
            push(p + "attn.wk", b.wk);
            push(p + "attn.bk", b.bk);
            push(p + "attn.wv", b.wv);
            push(p + "attn.bv", b.bv);
            push(p + "attn.wo", b.wo);
            push(p + "attn.bo", b.bo);
            push(p + "ln2.gain", b.ln2_gain);
            push(p + "ln2.bias", b.ln2_bias);
            push(p + "ffn.w1", b.ffn_w1);
            push(p + "ffn.b1", b.ffn_b1);
            push(p + "ffn.w2", b.ffn_w2);
            push(p + "ffn.b2", b.ffn_b2);
        }
    };
    push_blocks(past_blocks, "past");
    push_blocks(future_blocks, "future");
    push("head.w", head_w);
    push("head.b", head_b);
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named() const {
    auto mutable_named = const_cast<ModelParams*>(this)->named();
    std::vector<std::pair<std::string, const Tensor*>> out;
    out.reserve(mutable_named.size());
    for (auto& [name, t] : mutable_named) {
        out.emplace_back(std::move(name), t);
    }
    return out;
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(derive_seed(seed, "model_init"));
    auto xavier = [&rng](std::size_t rows, std::size_t cols) {
        double limit = std::sqrt(6.0 / double(rows + cols));
        std::uniform_real_distribution<double> dist(-limit, limit);
        std::vector<double> data(rows * cols);
        for (double& v : data) v = dist(rng);
        return Tensor({rows, cols}, std::move(data), true);
    };
    auto zeros = [](std::size_t n) { return Tensor::zeros({n}, true); };
    auto ones = [](std::size_t n) { return Tensor::full({n}, 1.0, true); };

    std::size_t h = cfg.hidden_dim;
    ModelParams p;
    p.past_w = xavier(cfg.input_dim, h);
    p.past_b = zeros(h);
    p.static_w = xavier(cfg.static_dim, h);
    p.static_b = zeros(h);
    p.future_w = xavier(cfg.future_dim(), h);
    p.future_b = zeros(h);
    auto make_blocks = [&](std::size_t count) {
        std::vector<ModelParams::Block> blocks(count);
        for (auto& b : blocks) {
            b.ln1_gain = ones(h);
            b.ln1_bias = zeros(h);
            b.wq = xavier(h, h);
            b.bq = zeros(h);
            b.wk = xavier(h, h);
            b.bk = zeros(h);
            b.wv = xavier(h, h);
            b.bv = zeros(h);
            b.wo = xavier(h, h);
            b.bo = zeros(h);
            b.ln2_gain = ones(h);
            b.ln2_bias = zeros(h);
            b.ffn_w1 = xavier(h, cfg.ffn_dim);
            b.ffn_b1 = zeros(cfg.ffn_dim);
            b.ffn_w2 = xavier(cfg.ffn_dim, h);
            b.ffn_b2 = zeros(h);
        }
        return blocks;
    };
    p.past_blocks = make_blocks(cfg.n_layers_past);
    p.future_blocks = make_blocks(cfg.n_layers_future);
    p.head_w = xavier(h, 1);
    p.head_b = Tensor::zeros({1}, true);

    std::size_t total = 0;
    for (auto& [name, t] : p.named()) {
        (void)name;
        total += t->numel();
    }
    if (total != param_count(cfg)) {
        throw config_error("parameter layout does not match the closed-form count");
    }
    return p;
}

ad::Tensor rope_rotate(Graph& g, const Tensor& x, double base, std::size_t start_pos) {
    if (x.rank() != 2) {
        throw config_error("rope_rotate expects a 2-D tensor, got " + format_shape(x.shape()));
    }
    if (!(base > 1.0)) {
        throw config_error("rope_rotate: base must be > 1");
    }
    std::size_t rows = x.shape()[0];
    std::size_t d = x.shape()[1];
    if (d % 2 != 0) {
        throw config_error("rope_rotate: feature dimension " + std::to_string(d) +
                           " must be even");
    }

    std::vector<double> cos_data(rows * d);
    std::vector<double> sin_data(rows * d);
    for (std::size_t r = 0; r < rows; ++r) {
        double pos = double(start_pos + r);
        for (std::size_t i = 0; i < d / 2; ++i) {
            double theta = pos * std::pow(base, -2.0 * double(i) / double(d));
            cos_data[r * d + 2 * i] = std::cos(theta);
            cos_data[r * d + 2 * i + 1] = cos_data[r * d + 2 * i];
            sin_data[r * d + 2 * i] = std::sin(theta);
            sin_data[r * d + 2 * i + 1] = sin_data[r * d + 2 * i];
        }
    }
    Tensor cos_t({rows, d}, std::move(cos_data));
    Tensor sin_t({rows, d}, std::move(sin_data));

    // (x0, x1, x2, x3, ...) -> (-x1, x0, -x3, x2, ...) via a pairwise reshape.
    Tensor pairs = g.reshape(x, {rows * d / 2, 2});
    Tensor even = g.slice(pairs, 1, 0, 1);
    Tensor odd = g.slice(pairs, 1, 1, 2);
    Tensor neg_odd = g.mul(odd, Tensor::scalar(-1.0));
    Tensor swapped = g.reshape(g.concat({neg_odd, even}, 1), {rows, d});

    return g.add(g.mul(x, cos_t), g.mul(swapped, sin_t));
}

ad::Tensor attention_block(Graph& g, const Tensor& x, const ModelParams::Block& blk,
                           const ModelConfig& cfg, const std::string& layer_tag) {
    std::size_t rows = x.shape()[0];
    std::size_t hd = cfg.head_dim();

    Tensor normed = g.layer_norm(x, blk.ln1_gain, blk.ln1_bias, kLayerNormEps);
    Tensor q = g.add(g.matmul(normed, blk.wq), blk.bq);
    Tensor k = g.add(g.matmul(normed, blk.wk), blk.bk);
    Tensor v = g.add(g.matmul(normed, blk.wv), blk.bv);

    std::vector<double> mask_data(rows * rows, 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = i + 1; j < rows; ++j) {
            mask_data[i * rows + j] = kMaskValue;
        }
    }
    Tensor mask({rows, rows}, std::move(mask_data));
    Tensor scale = Tensor::scalar(1.0 / std::sqrt(double(hd)));

    std::vector<Tensor> heads;
    heads.reserve(cfg.n_heads);
    for (std::size_t head = 0; head < cfg.n_heads; ++head) {
        Tensor qh = rope_rotate(g, g.slice(q, 1, head * hd, (head + 1) * hd), cfg.rope_base);
        Tensor kh = rope_rotate(g, g.slice(k, 1, head * hd, (head + 1) * hd), cfg.rope_base);
        Tensor vh = g.slice(v, 1, head * hd, (head + 1) * hd);
        Tensor scores = g.mul(g.matmul(qh, g.transpose(kh)), scale);
        Tensor attn = g.softmax(g.add(scores, mask), 1);
        heads.push_back(g.matmul(attn, vh));
    }
    Tensor merged = cfg.n_heads == 1 ? heads.front() : g.concat(heads, 1);
    Tensor after_attn = g.add(x, g.add(g.matmul(merged, blk.wo), blk.bo));

    Tensor normed2 = g.layer_norm(after_attn, blk.ln2_gain, blk.ln2_bias, kLayerNormEps);
    Tensor hidden = g.gelu(g.add(g.matmul(normed2, blk.ffn_w1), blk.ffn_b1));
    Tensor out = g.add(after_attn, g.add(g.matmul(hidden, blk.ffn_w2), blk.ffn_b2));

    if (!out.all_finite()) {
        throw numeric_error("non-finite activation leaving block " + layer_tag);
    }
    return out;
}

ad::Tensor forward_delta(Graph& g, const ModelConfig& cfg, const ModelParams& params,
                         const WindowSample& sample, ForwardTrace* trace) {
    cfg.validate();
    std::size_t n = cfg.context_hours;
    if (sample.past.rank() != 2 || sample.past.shape()[0] != n ||
        sample.past.shape()[1] != cfg.input_dim) {
        throw config_error("past window shape " + format_shape(sample.past.shape()) +
                           " does not match config [" + std::to_string(n) + "x" +
                           std::to_string(cfg.input_dim) + "]");
    }
    if (sample.static_feats.numel() != cfg.static_dim) {
        throw config_error("static feature length " + std::to_string(sample.static_feats.numel()) +
                           " does not match config " + std::to_string(cfg.static_dim));
    }
    if (sample.future.numel() != cfg.future_dim()) {
        throw config_error("future covariate length " + std::to_string(sample.future.numel()) +
                           " does not match config " + std::to_string(cfg.future_dim()));
    }

    Tensor x = g.add(g.matmul(sample.past, params.past_w), params.past_b);
    for (std::size_t i = 0; i < params.past_blocks.size(); ++i) {
        x = attention_block(g, x, params.past_blocks[i], cfg, "past." + std::to_string(i));
    }
    Tensor h_last = g.slice(x, 0, n - 1, n);  // [1 x hidden]

    Tensor st = g.reshape(sample.static_feats, {1, cfg.static_dim});
    Tensor static_embed = g.add(g.matmul(st, params.static_w), params.static_b);
    Tensor fused = g.add(h_last, static_embed);

    Tensor fu = g.reshape(sample.future, {1, cfg.future_dim()});
    Tensor future_embed = g.add(g.matmul(fu, params.future_w), params.future_b);

    Tensor seq = g.concat({fused, future_embed}, 0);  // [2 x hidden]
    for (std::size_t i = 0; i < params.future_blocks.size(); ++i) {
        seq = attention_block(g, seq, params.future_blocks[i], cfg, "future." + std::to_string(i));
    }
    Tensor last = g.slice(seq, 0, 1, 2);

    Tensor delta = g.reshape(g.add(g.matmul(last, params.head_w), params.head_b), {1});
    if (trace != nullptr) {
        trace->h_last = h_last;
        trace->fused = fused;
    }
    return delta;
}

double predict_temperature(const ModelConfig& cfg, const ModelParams& params,
                           const WindowSample& sample) {
    Graph g(false);
    return sample.t_prev + forward_delta(g, cfg, params, sample).value();
}

std::vector<double> rollout(const ModelConfig& cfg, const ModelParams& params,
                            const Standardizer& std_, const TimeSeriesRecord& record,
                            const BuildingStatic& statics, std::size_t start,
                            std::size_t horizon) {
    cfg.validate();
    std::size_t n = cfg.context_hours;
    if (horizon == 0) {
        throw config_error("rollout horizon must be positive");
    }
    if (start < n) {
        throw config_error("rollout start " + std::to_string(start) +
                           " leaves no room for a context of " + std::to_string(n));
    }
    if (start + horizon > record.size()) {
        throw config_error("rollout start " + std::to_string(start) + " + horizon " +
                           std::to_string(horizon) + " exceeds record length " +
                           std::to_string(record.size()));
    }

    TimeSeriesRecord working = record;
    std::vector<double> out;
    out.reserve(horizon);
    for (std::size_t k = 0; k < horizon; ++k) {
        std::size_t t = start + k;
        WindowSample w =
            assemble_window_at(working, statics, std_, n, t, cfg.with_future_weather);
        double predicted = predict_temperature(cfg, params, w);
        if (!std::isfinite(predicted)) {
            throw numeric_error("rollout produced a non-finite temperature at step " +
                                std::to_string(k));
        }
        out.push_back(predicted);
        working.t_in[t] = predicted;  // fed back into subsequent windows
    }
    return out;
}

namespace {

void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t read_u32(std::istream& in, const char* what) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) {
        throw data_error(std::string("checkpoint truncated while reading ") + what);
    }
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelConfig& cfg, const ModelParams& params,
                     const Standardizer& std_, const nlohmann::json& meta) {
    cfg.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw data_error("cannot write checkpoint " + path);
    }
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);

    nlohmann::json header;
    header["format"] = 1;
    header["config"] = cfg.to_json();
    header["standardizer"] = nlohmann::json::parse(std_.to_json());
    header["meta"] = meta;
    std::string header_text = header.dump();
    write_u32(out, static_cast<std::uint32_t>(header_text.size()));
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));

    auto named = params.named();
    write_u32(out, static_cast<std::uint32_t>(named.size()));
    for (const auto& [name, tensor] : named) {
        write_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        tensor->write(out);
    }
    if (!out) {
        throw data_error("write failed for checkpoint " + path);
    }
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw data_error("cannot open checkpoint " + path);
    }
    char magic[sizeof kCheckpointMagic];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
        throw data_error(path + " is not a model checkpoint (bad magic)");
    }

    std::uint32_t header_len = read_u32(in, "header length");
    std::string header_text(header_len, '\0');
    in.read(header_text.data(), header_len);
    if (!in) {
        throw data_error("checkpoint truncated while reading the header");
    }

    Checkpoint ckpt;
    try {
        nlohmann::json header = nlohmann::json::parse(header_text);
        ckpt.config = ModelConfig::from_json(header.at("config"));
        ckpt.standardizer = Standardizer::from_json(header.at("standardizer").dump());
        ckpt.meta = header.value("meta", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        throw data_error(path + ": malformed checkpoint header: " + e.what());
    } catch (const config_error& e) {
        throw data_error(path + ": invalid model config in checkpoint: " + e.what());
    }

    ckpt.params = init_params(ckpt.config, 0);
    auto named = ckpt.params.named();
    std::uint32_t count = read_u32(in, "tensor count");
    if (count != named.size()) {
        throw data_error(path + ": checkpoint holds " + std::to_string(count) +
                         " tensors, model needs " + std::to_string(named.size()));
    }
    for (auto& [expected_name, slot] : named) {
        std::uint32_t name_len = read_u32(in, "tensor name length");
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (!in) {
            throw data_error("checkpoint truncated while reading a tensor name");
        }
        if (name != expected_name) {
            throw data_error(path + ": expected tensor '" + expected_name + "', found '" + name +
                             "'");
        }
        Tensor loaded = Tensor::read(in);
        if (loaded.shape() != slot->shape()) {
            throw data_error(path + ": tensor '" + name + "' has shape " +
                             format_shape(loaded.shape()) + ", expected " +
                             format_shape(slot->shape()));
        }
        loaded.set_requires_grad(true);
        *slot = loaded;
    }
    if (in.peek() != std::ifstream::traits_type::eof()) {
        throw data_error(path + ": trailing bytes after the last tensor");
    }
    return ckpt;
}

}  // namespace thermoformer
