#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "thermoformer/features.hpp"
#include "thermoformer/tensor.hpp"

namespace thermoformer {

// Decoder-only single-step forecaster. The past window (raw + derivative
// channels) runs through causal self-attention blocks with rotary position
// encoding; the last hidden row is fused additively with a projection of the
// building statics, a projected future-covariate token is appended, one more
// causal stack mixes the two, and a linear head emits the predicted
// temperature change for the next hour.
struct ModelConfig {
    std::size_t hidden_dim = 64;
    std::size_t n_heads = 4;
    std::size_t ffn_dim = 128;
    std::size_t n_layers_past = 2;
    std::size_t n_layers_future = 1;
    std::size_t context_hours = 24;  // rows in the past window
    double rope_base = 10000.0;
    double dropout = 0.0;  // reserved; only 0 is supported
    std::size_t input_dim = 2 * kRawChannels;
    std::size_t static_dim = kStaticDim;
    bool with_future_weather = false;

    std::size_t future_dim() const { return kCalendarFutureDim + (with_future_weather ? 2 : 0); }
    std::size_t head_dim() const { return hidden_dim / n_heads; }
    void validate() const;  // config_error on violated invariants

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
};

// Closed-form parameter count for a config (matches init_params exactly).
std::size_t param_count(const ModelConfig& cfg);

struct ModelParams {
    struct Block {
        ad::Tensor ln1_gain, ln1_bias;
        ad::Tensor wq, bq, wk, bk, wv, bv, wo, bo;
        ad::Tensor ln2_gain, ln2_bias;
        ad::Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    };

    ad::Tensor past_w, past_b;      // input projection
    ad::Tensor static_w, static_b;  // statics projection (additive fusion)
    ad::Tensor future_w, future_b;  // future-covariate projection
    std::vector<Block> past_blocks;
    std::vector<Block> future_blocks;
    ad::Tensor head_w, head_b;  // hidden -> delta-T

    // Stable enumeration used by the optimizer, serialization and init.
    std::vector<std::pair<std::string, ad::Tensor*>> named();
    std::vector<std::pair<std::string, const ad::Tensor*>> named() const;
};

// Xavier-uniform weights, zero biases, unit layer-norm gains; deterministic
// in `seed`.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

// Rotates feature pairs (2i, 2i+1) of each row p by angle
// (start_pos + p) * base^(-2i / d). x is [rows x d]; odd d -> config_error.
ad::Tensor rope_rotate(ad::Graph& g, const ad::Tensor& x, double base, std::size_t start_pos = 0);

// One pre-norm block: x + attn(LN(x)) then y + ffn(LN(y)); causal mask, rotary
// positions on queries and keys, GELU feed-forward. `layer_tag` names the
// block in numeric-fault errors.
ad::Tensor attention_block(ad::Graph& g, const ad::Tensor& x, const ModelParams::Block& blk,
                           const ModelConfig& cfg, const std::string& layer_tag);

// Intermediate activations exposed for inspection and tests.
struct ForwardTrace {
    ad::Tensor h_last;  // last row after the past stack, before fusion
    ad::Tensor fused;   // h_last + projected statics
};

// Predicted standard-free temperature change (°C) for the sample, shape [1].
ad::Tensor forward_delta(ad::Graph& g, const ModelConfig& cfg, const ModelParams& params,
                         const WindowSample& sample, ForwardTrace* trace = nullptr);

// t_prev + forward_delta on a non-recording graph.
double predict_temperature(const ModelConfig& cfg, const ModelParams& params,
                           const WindowSample& sample);

// Multi-step forecast: starting at target index `start` of `record`, predict
// `horizon` consecutive hourly temperatures, feeding each prediction back into
// the indoor-temperature series (window derivatives are recomputed from the
// fed-back values). Requires start >= n and start + horizon <= record length.
std::vector<double> rollout(const ModelConfig& cfg, const ModelParams& params,
                            const Standardizer& std, const TimeSeriesRecord& record,
                            const BuildingStatic& statics, std::size_t start, std::size_t horizon);

// Checkpoint: magic "TFMCKPT1", u32 JSON length, JSON (config, standardizer,
// meta), u32 tensor count, then (u32 name length, name, tensor) per parameter.
struct Checkpoint {
    ModelConfig config;
    ModelParams params;
    Standardizer standardizer;
    nlohmann::json meta;
};

void save_checkpoint(const std::string& path, const ModelConfig& cfg, const ModelParams& params,
                     const Standardizer& std, const nlohmann::json& meta);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace thermoformer
