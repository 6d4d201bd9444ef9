#pragma once

// Command-line surface: one binary with the subcommands
//   simulate | train | evaluate | transfer | sweep
// driven by a JSON run configuration plus --key.path=value overrides.
//
// All randomness flows from the single root seed; each component draws its
// own stream via a keyed derivation, so any command replays bit-identically
// from the resolved-config snapshot it writes next to its outputs.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
// 3 numeric fault.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "thermoformer/model.hpp"

namespace thermoformer {

struct DataSection {
    std::string out_dir = "data";
    std::map<std::string, std::size_t> counts = {{"hot_humid", 2}};
    std::vector<int> modes = {1, 2, 3, 4, 5};
    std::size_t hours = 1440;
};

struct TrainSection {
    std::string dataset_dir = "data";
    std::string out_dir = "run";
    std::vector<std::string> buildings;  // empty: every building in the dataset
    double lr = 0.003125;
    double weight_decay = 0.01;
    std::size_t batch_size = 256;
    std::size_t max_epochs = 100;
    int early_stop_patience = 10;
    double plateau_factor = 0.25;
    int plateau_patience = 3;
    double clip_norm = 1.0;
};

struct SplitSection {
    int test_mode = 1;
    double val_fraction = 0.10;
};

struct EvalSection {
    std::string checkpoint = "run/model.ckpt";
    std::string dataset_dir = "data";
    std::string out_dir = "eval";
    std::vector<std::string> baselines;  // subset of {persistence, linear_ar}
};

struct TransferSection {
    std::map<std::string, std::string> checkpoints;  // label -> checkpoint path
    std::string dataset_dir = "data";
    std::string out_dir = "transfer";
    bool include_persistence = true;
};

struct SweepSection {
    std::vector<std::size_t> counts = {1, 2, 4, 8};
    std::string dataset_dir = "data";
    std::string out_dir = "sweep";
};

struct RunConfig {
    std::uint64_t seed = 42;
    std::size_t threads = 0;  // 0: decide from THERMOFORMER_THREADS, else 1
    DataSection data;
    ModelConfig model;
    TrainSection train;
    SplitSection split;
    EvalSection evaluate;
    TransferSection transfer;
    SweepSection sweep;

    nlohmann::json to_json() const;
    // Rejects unknown keys at every nesting level and validates values.
    static RunConfig from_json(const nlohmann::json& j);
};

// Parse "key.path=value" into a (json pointer, parsed value) assignment.
// Values are parsed as JSON when possible and fall back to plain strings.
std::pair<std::string, nlohmann::json> parse_override(const std::string& assignment);

// Load the config file (defaults when path is empty), apply overrides in
// order, resolve the thread count against THERMOFORMER_THREADS, validate.
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides);

// Subcommand bodies. Each throws config_error / data_error / numeric_error
// on failure and writes a resolved-config snapshot into its output directory.
void cmd_simulate(const RunConfig& cfg, std::ostream& out);
void cmd_train(const RunConfig& cfg, std::ostream& out);
void cmd_evaluate(const RunConfig& cfg, std::ostream& out);
void cmd_transfer(const RunConfig& cfg, std::ostream& out);
void cmd_sweep(const RunConfig& cfg, std::ostream& out);

// Full argument-vector entry point (no program name). Returns the exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace thermoformer
