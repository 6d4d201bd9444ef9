#include "thermoformer/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "thermoformer/common.hpp"
#include "thermoformer/datagen.hpp"
#include "thermoformer/evaluation.hpp"
#include "thermoformer/training.hpp"

namespace fs = std::filesystem;

namespace thermoformer {

namespace {

// Map sections whose keys are user data rather than configuration schema.
const std::set<std::string> kFreeFormPaths = {"data.counts", "transfer.checkpoints"};

void expect_keys(const nlohmann::json& j, const std::string& path,
                 const std::set<std::string>& allowed) {
    if (!j.is_object()) {
        throw config_error("config: '" + path + "' must be a JSON object");
    }
    for (const auto& [k, v] : j.items()) {
        (void)v;
        if (!allowed.count(k)) {
            throw config_error("config: unknown key '" + (path.empty() ? k : path + "." + k) +
                               "'");
        }
    }
}

template <typename T>
void read_field(const nlohmann::json& j, const char* key, const std::string& path, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw config_error("config: bad value for '" + path + "." + key + "': " + e.what());
    }
}

// Sizes must be plain non-negative integers with a sanity cap; a stray
// negative would otherwise wrap around to an enormous unsigned value.
void read_size(const nlohmann::json& j, const char* key, const std::string& path,
               std::size_t& out, std::size_t max_value) {
    if (!j.contains(key)) return;
    const nlohmann::json& v = j.at(key);
    if (!v.is_number_integer() && !v.is_number_unsigned()) {
        throw config_error("config: '" + path + "." + key + "' must be an integer");
    }
    if (v.is_number_integer() && v.get<std::int64_t>() < 0) {
        throw config_error("config: '" + path + "." + key + "' must not be negative");
    }
    const std::size_t value = v.get<std::size_t>();
    if (value > max_value) {
        throw config_error("config: '" + path + "." + key + "' exceeds the limit " +
                           std::to_string(max_value));
    }
    out = value;
}

// Merge `user` onto the default skeleton, rejecting keys the skeleton does
// not know (free-form map sections excepted).
void deep_merge(nlohmann::json& base, const nlohmann::json& user, const std::string& path) {
    if (!user.is_object()) {
        throw config_error("config: '" + (path.empty() ? std::string("<root>") : path) +
                           "' must be a JSON object");
    }
    for (const auto& [k, v] : user.items()) {
        const std::string here = path.empty() ? k : path + "." + k;
        if (!base.contains(k)) {
            if (kFreeFormPaths.count(path)) {
                base[k] = v;
                continue;
            }
            throw config_error("config: unknown key '" + here + "'");
        }
        if (base.at(k).is_object() && v.is_object() && !kFreeFormPaths.count(here)) {
            deep_merge(base.at(k), v, here);
        } else {
            base[k] = v;
        }
    }
}

std::size_t resolve_threads(std::size_t requested) {
    const char* env = std::getenv("THERMOFORMER_THREADS");
    std::size_t cap = 0;
    if (env != nullptr && *env != '\0') {
        std::size_t value = 0;
        const char* end = env + std::char_traits<char>::length(env);
        auto [ptr, ec] = std::from_chars(env, end, value);
        if (ec != std::errc{} || ptr != end || value == 0) {
            throw config_error("THERMOFORMER_THREADS must be a positive integer, got '" +
                               std::string(env) + "'");
        }
        cap = value;
    }
    if (requested == 0) return cap > 0 ? cap : 1;
    return cap > 0 ? std::min(requested, cap) : requested;
}

void write_text_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot write file '" + path.string() + "'");
    out << content;
    if (!out) throw data_error("failed while writing '" + path.string() + "'");
}

void write_snapshot(const RunConfig& cfg, const fs::path& dir) {
    write_text_file(dir / "resolved_config.json", cfg.to_json().dump(2) + "\n");
}

void ensure_distinct_dirs(const std::string& out_dir, const std::string& dataset_dir) {
    if (fs::weakly_canonical(fs::path(out_dir)) == fs::weakly_canonical(fs::path(dataset_dir))) {
        throw config_error("output directory '" + out_dir +
                           "' must differ from the dataset directory");
    }
}

TrainConfig build_train_config(const RunConfig& cfg) {
    TrainConfig tc;
    tc.lr = cfg.train.lr;
    tc.weight_decay = cfg.train.weight_decay;
    tc.batch_size = cfg.train.batch_size;
    tc.max_epochs = cfg.train.max_epochs;
    tc.early_stop_patience = cfg.train.early_stop_patience;
    tc.plateau_factor = cfg.train.plateau_factor;
    tc.plateau_patience = cfg.train.plateau_patience;
    tc.clip_norm = cfg.train.clip_norm;
    tc.seed = derive_seed(cfg.seed, "train");
    return tc;
}

SplitSpec build_split_spec(const RunConfig& cfg, std::size_t context_hours,
                           std::vector<std::string> train_buildings) {
    SplitSpec sp;
    sp.test_mode = cfg.split.test_mode;
    sp.val_fraction = cfg.split.val_fraction;
    sp.seed = derive_seed(cfg.seed, "split");
    sp.context_hours = context_hours;
    sp.train_buildings = std::move(train_buildings);
    return sp;
}

struct TrainedRun {
    TrainResult result;
    std::string checkpoint_path;
    std::vector<std::string> train_buildings;
};

// Shared by cmd_train and cmd_sweep: split, standardize, train, checkpoint.
TrainedRun train_into(const RunConfig& cfg, const Dataset& ds,
                      const std::vector<std::string>& requested_buildings,
                      const std::string& out_dir, std::ostream& out) {
    cfg.model.validate();
    TrainConfig tc = build_train_config(cfg);
    tc.validate();

    std::vector<std::string> train_buildings = requested_buildings;
    if (train_buildings.empty()) {
        for (const auto& [id, s] : ds.statics) {
            (void)s;
            train_buildings.push_back(id);
        }
    } else {
        for (const std::string& id : train_buildings) {
            if (!ds.statics.count(id)) {
                throw data_error("training building '" + id + "' is not in the dataset");
            }
        }
    }

    SplitSpec sp = build_split_spec(cfg, cfg.model.context_hours, train_buildings);
    Splits splits = make_splits(ds.records, sp);
    for (const std::string& w : splits.warnings) out << "warning: " << w << "\n";

    const std::set<std::string> train_set(train_buildings.begin(), train_buildings.end());
    std::vector<TimeSeriesRecord> train_records;
    std::vector<BuildingStatic> train_statics;
    std::set<std::string> climate_set, statics_seen;
    for (const TimeSeriesRecord& rec : ds.records) {
        if (rec.hvac_mode == sp.test_mode || !train_set.count(rec.building_id)) continue;
        if (rec.size() <= sp.context_hours) continue;
        train_records.push_back(rec);
        climate_set.insert(rec.climate);
        if (statics_seen.insert(rec.building_id).second) {
            train_statics.push_back(ds.statics.at(rec.building_id));
        }
    }
    if (train_records.empty()) {
        throw config_error("training: no usable non-held-out records for the selected buildings");
    }
    Standardizer standardizer = fit_standardizer(train_records, train_statics);

    std::vector<WindowSample> train_w =
        materialize_windows(ds.records, ds.statics, standardizer, sp.context_hours, splits.train,
                            cfg.model.with_future_weather);
    std::vector<WindowSample> val_w =
        materialize_windows(ds.records, ds.statics, standardizer, sp.context_hours,
                            splits.validation, cfg.model.with_future_weather);
    out << "training windows: " << train_w.size() << ", validation windows: " << val_w.size()
        << "\n";

    fs::create_directories(out_dir);
    tc.log_path = (fs::path(out_dir) / "train_log.csv").string();

    ModelParams params = init_params(cfg.model, derive_seed(cfg.seed, "model_init"));
    TrainResult result = train_model(cfg.model, params, standardizer, train_w, val_w, tc);

    nlohmann::json meta = {
        {"best_epoch", result.best_epoch},
        {"best_val", result.best_val},
        {"epochs_run", result.epochs_run},
        {"seed", cfg.seed},
        {"train_buildings", train_buildings},
        {"train_climates", std::vector<std::string>(climate_set.begin(), climate_set.end())},
    };
    const std::string ckpt = (fs::path(out_dir) / "model.ckpt").string();
    save_checkpoint(ckpt, cfg.model, params, standardizer, meta);
    out << "best validation MSE " << result.best_val << " at epoch " << result.best_epoch
        << " (" << result.epochs_run << " epochs run)\n";
    out << "checkpoint: " << ckpt << "\n";
    return TrainedRun{std::move(result), ckpt, std::move(train_buildings)};
}

nlohmann::json pooled_to_json(const EvalReport& rep) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [split, pm] : rep.pooled) {
        j[split] = {{"rmse", pm.rmse},
                    {"mape", pm.mape},
                    {"count", pm.count},
                    {"mape_excluded", pm.mape_excluded}};
    }
    return j;
}

void write_report_files(const EvalReport& rep, const fs::path& dir, const std::string& stem,
                        std::ostream& out) {
    write_text_file(dir / (stem + ".json"), report_to_json(rep) + "\n");
    write_text_file(dir / (stem + ".csv"), report_to_csv(rep));
    for (const std::string& w : rep.warnings) out << "warning: " << w << "\n";
}

// Baseline scored under the same splits and standardizer as the checkpoint.
EvalReport evaluate_baseline(BaselineKind kind, const Checkpoint& ck, const Dataset& ds,
                             const SplitSpec& spec) {
    Splits splits = make_splits(ds.records, spec);
    Predictor predictor;
    if (kind == BaselineKind::persistence) {
        predictor = [](const WindowSample& w) { return w.t_prev; };
    } else {
        std::vector<WindowSample> train_w =
            materialize_windows(ds.records, ds.statics, ck.standardizer, spec.context_hours,
                                splits.train, ck.config.with_future_weather);
        auto model = std::make_shared<LinearModel>(fit_linear_ar(train_w));
        predictor = [model](const WindowSample& w) { return linear_ar_predict(*model, w); };
    }
    return evaluate_with(predictor, ck.standardizer, ds.records, ds.statics, spec, {},
                         ck.config.with_future_weather);
}

}  // namespace

// ---------------------------------------------------------------------------
// RunConfig JSON round trip

nlohmann::json RunConfig::to_json() const {
    nlohmann::json counts = nlohmann::json::object();
    for (const auto& [region, n] : data.counts) counts[region] = n;
    nlohmann::json checkpoints = nlohmann::json::object();
    for (const auto& [label, path] : transfer.checkpoints) checkpoints[label] = path;
    return nlohmann::json{
        {"seed", seed},
        {"threads", threads},
        {"data",
         {{"out_dir", data.out_dir},
          {"counts", counts},
          {"modes", data.modes},
          {"hours", data.hours}}},
        {"model", model.to_json()},
        {"train",
         {{"dataset_dir", train.dataset_dir},
          {"out_dir", train.out_dir},
          {"buildings", train.buildings},
          {"lr", train.lr},
          {"weight_decay", train.weight_decay},
          {"batch_size", train.batch_size},
          {"max_epochs", train.max_epochs},
          {"early_stop_patience", train.early_stop_patience},
          {"plateau_factor", train.plateau_factor},
          {"plateau_patience", train.plateau_patience},
          {"clip_norm", train.clip_norm}}},
        {"split", {{"test_mode", split.test_mode}, {"val_fraction", split.val_fraction}}},
        {"evaluate",
         {{"checkpoint", evaluate.checkpoint},
          {"dataset_dir", evaluate.dataset_dir},
          {"out_dir", evaluate.out_dir},
          {"baselines", evaluate.baselines}}},
        {"transfer",
         {{"checkpoints", checkpoints},
          {"dataset_dir", transfer.dataset_dir},
          {"out_dir", transfer.out_dir},
          {"include_persistence", transfer.include_persistence}}},
        {"sweep",
         {{"counts", sweep.counts}, {"dataset_dir", sweep.dataset_dir},
          {"out_dir", sweep.out_dir}}},
    };
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    RunConfig cfg;
    expect_keys(j, "", {"seed", "threads", "data", "model", "train", "split", "evaluate",
                        "transfer", "sweep"});
    if (j.contains("seed")) {
        const nlohmann::json& s = j.at("seed");
        if (!s.is_number_integer() && !s.is_number_unsigned()) {
            throw config_error("config: 'seed' must be an integer");
        }
        if (s.is_number_integer() && !s.is_number_unsigned() && s.get<std::int64_t>() < 0) {
            throw config_error("config: 'seed' must not be negative");
        }
        cfg.seed = s.get<std::uint64_t>();
    }
    read_size(j, "threads", "", cfg.threads, 4096);

    if (j.contains("data")) {
        const nlohmann::json& d = j.at("data");
        expect_keys(d, "data", {"out_dir", "counts", "modes", "hours"});
        read_field(d, "out_dir", "data", cfg.data.out_dir);
        if (d.contains("counts")) {
            if (!d.at("counts").is_object()) {
                throw config_error("config: 'data.counts' must map climate -> building count");
            }
            cfg.data.counts.clear();
            for (const auto& [region, n] : d.at("counts").items()) {
                std::size_t value = 0;
                nlohmann::json wrap = {{"n", n}};
                read_size(wrap, "n", "data.counts." + region, value, 100000);
                if (!wrap.contains("n")) continue;
                cfg.data.counts[region] = value;
            }
        }
        read_field(d, "modes", "data", cfg.data.modes);
        read_size(d, "hours", "data", cfg.data.hours, 10'000'000);
    }

    if (j.contains("model")) {
        expect_keys(j.at("model"), "model",
                    {"hidden_dim", "n_heads", "ffn_dim", "n_layers_past", "n_layers_future",
                     "context_hours", "rope_base", "dropout", "input_dim", "static_dim",
                     "with_future_weather"});
        nlohmann::json merged = ModelConfig{}.to_json();
        for (const auto& [k, v] : j.at("model").items()) merged[k] = v;
        try {
            cfg.model = ModelConfig::from_json(merged);
        } catch (const nlohmann::json::exception& e) {
            throw config_error(std::string("config: bad 'model' section: ") + e.what());
        }
    }

    if (j.contains("train")) {
        const nlohmann::json& t = j.at("train");
        expect_keys(t, "train",
                    {"dataset_dir", "out_dir", "buildings", "lr", "weight_decay", "batch_size",
                     "max_epochs", "early_stop_patience", "plateau_factor", "plateau_patience",
                     "clip_norm"});
        read_field(t, "dataset_dir", "train", cfg.train.dataset_dir);
        read_field(t, "out_dir", "train", cfg.train.out_dir);
        read_field(t, "buildings", "train", cfg.train.buildings);
        read_field(t, "lr", "train", cfg.train.lr);
        read_field(t, "weight_decay", "train", cfg.train.weight_decay);
        read_size(t, "batch_size", "train", cfg.train.batch_size, 1'000'000);
        read_size(t, "max_epochs", "train", cfg.train.max_epochs, 1'000'000);
        read_field(t, "early_stop_patience", "train", cfg.train.early_stop_patience);
        read_field(t, "plateau_factor", "train", cfg.train.plateau_factor);
        read_field(t, "plateau_patience", "train", cfg.train.plateau_patience);
        read_field(t, "clip_norm", "train", cfg.train.clip_norm);
    }

    if (j.contains("split")) {
        const nlohmann::json& s = j.at("split");
        expect_keys(s, "split", {"test_mode", "val_fraction"});
        read_field(s, "test_mode", "split", cfg.split.test_mode);
        read_field(s, "val_fraction", "split", cfg.split.val_fraction);
    }

    if (j.contains("evaluate")) {
        const nlohmann::json& e = j.at("evaluate");
        expect_keys(e, "evaluate", {"checkpoint", "dataset_dir", "out_dir", "baselines"});
        read_field(e, "checkpoint", "evaluate", cfg.evaluate.checkpoint);
        read_field(e, "dataset_dir", "evaluate", cfg.evaluate.dataset_dir);
        read_field(e, "out_dir", "evaluate", cfg.evaluate.out_dir);
        read_field(e, "baselines", "evaluate", cfg.evaluate.baselines);
    }

    if (j.contains("transfer")) {
        const nlohmann::json& t = j.at("transfer");
        expect_keys(t, "transfer",
                    {"checkpoints", "dataset_dir", "out_dir", "include_persistence"});
        if (t.contains("checkpoints")) {
            if (!t.at("checkpoints").is_object()) {
                throw config_error(
                    "config: 'transfer.checkpoints' must map label -> checkpoint path");
            }
            cfg.transfer.checkpoints.clear();
            for (const auto& [label, path] : t.at("checkpoints").items()) {
                if (!path.is_string()) {
                    throw config_error("config: 'transfer.checkpoints." + label +
                                       "' must be a path string");
                }
                cfg.transfer.checkpoints[label] = path.get<std::string>();
            }
        }
        read_field(t, "dataset_dir", "transfer", cfg.transfer.dataset_dir);
        read_field(t, "out_dir", "transfer", cfg.transfer.out_dir);
        read_field(t, "include_persistence", "transfer", cfg.transfer.include_persistence);
    }

    if (j.contains("sweep")) {
        const nlohmann::json& s = j.at("sweep");
        expect_keys(s, "sweep", {"counts", "dataset_dir", "out_dir"});
        read_field(s, "counts", "sweep", cfg.sweep.counts);
        read_field(s, "dataset_dir", "sweep", cfg.sweep.dataset_dir);
        read_field(s, "out_dir", "sweep", cfg.sweep.out_dir);
    }

    // Cross-field sanity checks that do not depend on the chosen subcommand.
    for (int mode : cfg.data.modes) {
        if (mode < 1 || mode > 5) {
            throw config_error("config: 'data.modes' entries must be in [1,5]");
        }
    }
    if (!(cfg.split.val_fraction > 0.0) || !(cfg.split.val_fraction < 1.0)) {
        throw config_error("config: 'split.val_fraction' must lie in (0,1)");
    }
    if (cfg.split.test_mode < 1 || cfg.split.test_mode > 5) {
        throw config_error("config: 'split.test_mode' must be in [1,5]");
    }
    return cfg;
}

std::pair<std::string, nlohmann::json> parse_override(const std::string& assignment) {
    const std::size_t eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw config_error("override '" + assignment + "' must look like key.path=value");
    }
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    std::string pointer = "/";
    for (char c : key) pointer += (c == '.') ? '/' : c;
    nlohmann::json value;
    try {
        value = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::exception&) {
        value = raw;  // unquoted strings stay strings
    }
    return {pointer, value};
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
    nlohmann::json merged = RunConfig{}.to_json();
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw data_error("cannot open config file '" + path + "'");
        nlohmann::json user;
        try {
            in >> user;
        } catch (const nlohmann::json::exception& e) {
            throw data_error("config file '" + path + "': " + std::string(e.what()));
        }
        deep_merge(merged, user, "");
    }
    for (const std::string& assignment : overrides) {
        auto [pointer, value] = parse_override(assignment);
        const nlohmann::json::json_pointer jp(pointer);
        // The key must already exist unless its parent is a free-form map.
        std::string parent_dotted;
        {
            std::string dotted = pointer.substr(1);
            std::replace(dotted.begin(), dotted.end(), '/', '.');
            const std::size_t last_dot = dotted.rfind('.');
            parent_dotted = last_dot == std::string::npos ? "" : dotted.substr(0, last_dot);
        }
        const bool parent_free_form = kFreeFormPaths.count(parent_dotted) > 0;
        if (!merged.contains(jp)) {
            if (!parent_free_form) {
                std::string dotted = pointer.substr(1);
                std::replace(dotted.begin(), dotted.end(), '/', '.');
                throw config_error("override: unknown config key '" + dotted + "'");
            }
            const nlohmann::json::json_pointer parent = jp.parent_pointer();
            if (!merged.contains(parent) || !merged.at(parent).is_object()) {
                throw config_error("override: cannot set '" + assignment + "'");
            }
        }
        merged[jp] = value;
    }
    RunConfig cfg = RunConfig::from_json(merged);
    cfg.threads = resolve_threads(cfg.threads);
    return cfg;
}

// ---------------------------------------------------------------------------
// Commands

void cmd_simulate(const RunConfig& cfg, std::ostream& out) {
    DatasetSpec spec;
    spec.counts = cfg.data.counts;
    spec.modes = cfg.data.modes;
    spec.hours = cfg.data.hours;
    spec.seed = derive_seed(cfg.seed, "data");
    Dataset ds = generate_dataset(spec, cfg.data.out_dir);
    write_snapshot(cfg, cfg.data.out_dir);
    out << "dataset: " << ds.records.size() << " records, " << ds.statics.size()
        << " buildings -> " << cfg.data.out_dir << "\n";
}

void cmd_train(const RunConfig& cfg, std::ostream& out) {
    ensure_distinct_dirs(cfg.train.out_dir, cfg.train.dataset_dir);
    Dataset ds = load_dataset(cfg.train.dataset_dir);
    train_into(cfg, ds, cfg.train.buildings, cfg.train.out_dir, out);
    write_snapshot(cfg, cfg.train.out_dir);
}

void cmd_evaluate(const RunConfig& cfg, std::ostream& out) {
    ensure_distinct_dirs(cfg.evaluate.out_dir, cfg.evaluate.dataset_dir);
    Checkpoint ck = load_checkpoint(cfg.evaluate.checkpoint);
    Dataset ds = load_dataset(cfg.evaluate.dataset_dir);
    fs::create_directories(cfg.evaluate.out_dir);
    const fs::path dir(cfg.evaluate.out_dir);

    SplitSpec sp = build_split_spec(cfg, ck.config.context_hours, {});
    EvalReport rep = evaluate(ck, ds, sp);
    write_report_files(rep, dir, "report", out);
    nlohmann::json summary = {{"model", pooled_to_json(rep)}};
    if (rep.pooled.count("test")) {
        out << "model pooled test RMSE: " << rep.pooled.at("test").rmse << " degC\n";
    }

    if (!cfg.evaluate.baselines.empty()) {
        // Baselines share the checkpoint's training buildings so their
        // training split matches the model's.
        SplitSpec bsp = sp;
        if (ck.meta.contains("train_buildings")) {
            bsp.train_buildings =
                ck.meta.at("train_buildings").get<std::vector<std::string>>();
        }
        for (const std::string& name : cfg.evaluate.baselines) {
            const BaselineKind kind = baseline_from_string(name);
            EvalReport brep = evaluate_baseline(kind, ck, ds, bsp);
            write_report_files(brep, dir, "report_" + name, out);
            summary[name] = pooled_to_json(brep);
            if (brep.pooled.count("test")) {
                out << name << " pooled test RMSE: " << brep.pooled.at("test").rmse
                    << " degC\n";
            }
        }
    }
    write_text_file(dir / "summary.json", summary.dump(2) + "\n");
    write_snapshot(cfg, dir);
    out << "reports -> " << dir.string() << "\n";
}

void cmd_transfer(const RunConfig& cfg, std::ostream& out) {
    if (cfg.transfer.checkpoints.size() < 2) {
        throw config_error("transfer: need at least two checkpoints, got " +
                           std::to_string(cfg.transfer.checkpoints.size()));
    }
    ensure_distinct_dirs(cfg.transfer.out_dir, cfg.transfer.dataset_dir);
    Dataset ds = load_dataset(cfg.transfer.dataset_dir);

    std::map<std::string, Checkpoint> checkpoints;
    for (const auto& [label, path] : cfg.transfer.checkpoints) {
        Checkpoint ck = load_checkpoint(path);
        std::string key = label;
        if (ck.meta.contains("train_climates")) {
            const auto climates = ck.meta.at("train_climates").get<std::vector<std::string>>();
            if (!climates.empty()) {
                key.clear();
                for (const std::string& c : climates) key += (key.empty() ? "" : "+") + c;
            }
        }
        if (checkpoints.count(key)) {
            throw config_error("transfer: two checkpoints share the climate label '" + key +
                               "'");
        }
        checkpoints.emplace(key, std::move(ck));
    }

    TransferMatrix m = transfer_matrix(checkpoints, ds.records, ds.statics, cfg.split.test_mode,
                                       cfg.transfer.include_persistence);
    fs::create_directories(cfg.transfer.out_dir);
    const fs::path dir(cfg.transfer.out_dir);
    const std::string csv = transfer_to_csv(m);
    write_text_file(dir / "transfer.csv", csv);
    nlohmann::json jm = {{"rows", m.rows}, {"columns", m.columns}};
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& row : m.cells) {
        nlohmann::json jr = nlohmann::json::array();
        for (const auto& cell : row) {
            if (cell) {
                jr.push_back(*cell);
            } else {
                jr.push_back(nullptr);
            }
        }
        cells.push_back(std::move(jr));
    }
    jm["cells"] = std::move(cells);
    write_text_file(dir / "transfer.json", jm.dump(2) + "\n");
    write_snapshot(cfg, dir);
    out << csv;
    out << "transfer matrix -> " << dir.string() << "\n";
}

void cmd_sweep(const RunConfig& cfg, std::ostream& out) {
    ensure_distinct_dirs(cfg.sweep.out_dir, cfg.sweep.dataset_dir);
    Dataset ds = load_dataset(cfg.sweep.dataset_dir);

    std::vector<std::string> all;
    for (const auto& [id, s] : ds.statics) {
        (void)s;
        all.push_back(id);
    }
    std::sort(all.begin(), all.end());
    const auto subsets =
        nested_building_subsets(all, cfg.sweep.counts, derive_seed(cfg.seed, "subsets"));

    fs::create_directories(cfg.sweep.out_dir);
    const fs::path dir(cfg.sweep.out_dir);
    std::ostringstream csv;
    csv << "count,building_id,climate,split,rmse,mape,is_target\n";
    nlohmann::json summary;
    summary["counts"] = cfg.sweep.counts;
    summary["subsets"] = nlohmann::json::object();
    summary["pooled"] = nlohmann::json::object();

    for (std::size_t i = 0; i < subsets.size(); ++i) {
        const std::size_t count = cfg.sweep.counts[i];
        const std::string size_dir = (dir / ("size_" + std::to_string(count))).string();
        out << "--- training on " << count << " building(s)\n";
        RunConfig sub = cfg;
        sub.train.dataset_dir = cfg.sweep.dataset_dir;
        sub.train.out_dir = size_dir;
        TrainedRun run = train_into(sub, ds, subsets[i], size_dir, out);
        write_snapshot(sub, size_dir);

        Checkpoint ck = load_checkpoint(run.checkpoint_path);
        SplitSpec sp = build_split_spec(cfg, ck.config.context_hours, {});
        EvalReport rep = evaluate(ck, ds, sp);
        write_report_files(rep, fs::path(size_dir), "report", out);

        for (const MetricRow& row : rep.rows) {
            if (row.month != 0) continue;
            csv << count << ',' << row.building_id << ',' << row.climate << ',' << row.split
                << ',';
            char buf[40];
            std::snprintf(buf, sizeof(buf), "%.17g", row.rmse);
            csv << buf << ',';
            std::snprintf(buf, sizeof(buf), "%.17g", row.mape);
            csv << buf << ',' << (row.is_target ? 1 : 0) << '\n';
        }
        summary["subsets"][std::to_string(count)] = subsets[i];
        summary["pooled"][std::to_string(count)] = pooled_to_json(rep);
        if (rep.pooled.count("test")) {
            out << "count " << count << ": pooled test RMSE " << rep.pooled.at("test").rmse
                << " degC\n";
        }
    }
    write_text_file(dir / "sweep.csv", csv.str());
    write_text_file(dir / "sweep_summary.json", summary.dump(2) + "\n");
    write_snapshot(cfg, dir);
    out << "sweep results -> " << dir.string() << "\n";
}

// ---------------------------------------------------------------------------
// Entry point

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"physics-informed single-step indoor temperature forecaster"};
    app.name("thermoformer");
    app.allow_extras();
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> sets;
    std::vector<std::string> baseline_flags;
    std::vector<std::string> checkpoint_flags;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON run-configuration file");
        sub->add_option("--set", sets, "config override key.path=value (repeatable)");
        sub->allow_extras();
    };
    CLI::App* sim = app.add_subcommand("simulate", "generate a synthetic building dataset");
    add_common(sim);
    CLI::App* trn = app.add_subcommand("train", "train a forecaster on a dataset");
    add_common(trn);
    CLI::App* evl = app.add_subcommand("evaluate", "evaluate a checkpoint and emit reports");
    add_common(evl);
    evl->add_option("--baseline", baseline_flags,
                    "also score a reference baseline: persistence or linear_ar (repeatable)");
    CLI::App* tra = app.add_subcommand("transfer", "cross-climate zero-shot transfer matrix");
    add_common(tra);
    tra->add_option("--checkpoint", checkpoint_flags,
                    "label=path of a trained checkpoint (repeatable, need at least two)");
    CLI::App* swp = app.add_subcommand("sweep", "train on nested building subsets");
    add_common(swp);

    try {
        std::vector<const char*> argv;
        argv.push_back("thermoformer");
        for (const std::string& a : args) argv.push_back(a.c_str());
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n";
        return 1;
    }

    try {
        CLI::App* active = app.get_subcommands().front();
        std::vector<std::string> overrides = sets;
        for (const std::string& token : app.remaining(true)) {
            if (token.rfind("--", 0) == 0 && token.find('=') != std::string::npos) {
                overrides.push_back(token.substr(2));
            } else {
                throw config_error("unrecognized argument '" + token +
                                   "' (overrides look like --key.path=value)");
            }
        }
        RunConfig cfg = load_run_config(config_path, overrides);
        if (active == evl) {
            for (const std::string& b : baseline_flags) {
                if (std::find(cfg.evaluate.baselines.begin(), cfg.evaluate.baselines.end(), b) ==
                    cfg.evaluate.baselines.end()) {
                    cfg.evaluate.baselines.push_back(b);
                }
            }
        }
        if (active == tra) {
            for (const std::string& spec : checkpoint_flags) {
                const std::size_t eq = spec.find('=');
                if (eq == std::string::npos || eq == 0 || eq + 1 >= spec.size()) {
                    throw config_error("--checkpoint expects label=path, got '" + spec + "'");
                }
                cfg.transfer.checkpoints[spec.substr(0, eq)] = spec.substr(eq + 1);
            }
        }

        if (active == sim) {
            cmd_simulate(cfg, out);
        } else if (active == trn) {
            cmd_train(cfg, out);
        } else if (active == evl) {
            cmd_evaluate(cfg, out);
        } else if (active == tra) {
            cmd_transfer(cfg, out);
        } else {
            cmd_sweep(cfg, out);
        }
        return 0;
    } catch (const config_error& e) {
        err << "config error: " << e.what() << "\n";
        return 1;
    } catch (const data_error& e) {
        err << "data error: " << e.what() << "\n";
        return 2;
    } catch (const numeric_error& e) {
        err << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace thermoformer
