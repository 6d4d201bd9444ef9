#include "thermoformer/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "thermoformer/common.hpp"

namespace thermoformer {

namespace {

constexpr double kMapeGuardCelsius = 0.1;  // |truth| below this is excluded
constexpr double kPivotTolerance = 1e-12;  // relative singularity threshold
constexpr int kMaxRidgeRetries = 8;

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Streaming accumulator shared by every aggregation level so that identical
// inputs produce bitwise-identical metrics.
struct MetricAccumulator {
    double sse = 0.0;
    std::size_t count = 0;
    double ape_sum = 0.0;  // percent terms
    std::size_t ape_count = 0;
    std::size_t excluded = 0;

    void add(double pred, double truth) {
        const double err = pred - truth;
        sse += err * err;
        ++count;
        if (std::abs(truth) < kMapeGuardCelsius) {
            ++excluded;
        } else {
            ape_sum += std::abs(err) / std::abs(truth) * 100.0;
            ++ape_count;
        }
    }

    double rmse_value() const { return std::sqrt(sse / double(count)); }
    double mape_value() const {
        if (ape_count == 0) return std::numeric_limits<double>::quiet_NaN();
        return ape_sum / double(ape_count);
    }
};

}  // namespace

// ---------------------------------------------------------------------------
// Splits

void SplitSpec::validate() const {
    if (test_mode < 1 || test_mode > 5) {
        throw config_error("split spec: test_mode must be in [1,5], got " +
                           std::to_string(test_mode));
    }
    if (!(val_fraction > 0.0) || !(val_fraction < 1.0)) {
        throw config_error("split spec: val_fraction must lie in (0,1)");
    }
    if (context_hours < 2) {
        throw config_error("split spec: context_hours must be at least 2");
    }
    std::unordered_set<std::string> seen;
    for (const std::string& b : train_buildings) {
        if (b.empty()) throw config_error("split spec: empty building id in train_buildings");
        if (!seen.insert(b).second) {
            throw config_error("split spec: duplicate training building '" + b + "'");
        }
    }
}

Splits make_splits(const std::vector<TimeSeriesRecord>& records, const SplitSpec& spec) {
    spec.validate();
    const std::unordered_set<std::string> train_set(spec.train_buildings.begin(),
                                                    spec.train_buildings.end());
    Splits out;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const TimeSeriesRecord& rec = records[i];
        if (rec.size() <= spec.context_hours) {
            out.warnings.push_back("record " + rec.building_id + " mode " +
                                   std::to_string(rec.hvac_mode) + " has " +
                                   std::to_string(rec.size()) +
                                   " rows, too short for any window; skipped");
            continue;
        }
        const std::size_t n_windows = rec.size() - spec.context_hours;
        if (rec.hvac_mode == spec.test_mode) {
            for (std::size_t t = spec.context_hours; t < rec.size(); ++t) {
                out.test.push_back({i, t});
            }
            continue;
        }
        if (!train_set.count(rec.building_id)) continue;  // unused building/mode

        std::size_t n_val = std::size_t(std::llround(spec.val_fraction * double(n_windows)));
        if (n_val == 0) {
            out.warnings.push_back("record " + rec.building_id + " mode " +
                                   std::to_string(rec.hvac_mode) + " has only " +
                                   std::to_string(n_windows) +
                                   " windows; forcing one validation window");
            n_val = 1;
        }
        std::vector<std::size_t> indices(n_windows);
        for (std::size_t k = 0; k < n_windows; ++k) indices[k] = spec.context_hours + k;
        std::mt19937_64 rng(derive_seed(spec.seed, "val:" + rec.building_id + ":mode" +
                                                       std::to_string(rec.hvac_mode)));
        std::shuffle(indices.begin(), indices.end(), rng);
        std::vector<std::size_t> val_idx(indices.begin(), indices.begin() + n_val);
        std::vector<std::size_t> train_idx(indices.begin() + n_val, indices.end());
        std::sort(val_idx.begin(), val_idx.end());
        std::sort(train_idx.begin(), train_idx.end());
        for (std::size_t t : val_idx) out.validation.push_back({i, t});
        for (std::size_t t : train_idx) out.train.push_back({i, t});
    }
    if (out.train.empty() && out.validation.empty() && out.test.empty()) {
        throw config_error("splits: no usable windows in any split");
    }
    if (out.test.empty()) {
        out.warnings.push_back("no records use held-out mode " + std::to_string(spec.test_mode) +
                               "; test split is empty");
    }
    return out;
}

std::vector<WindowSample> materialize_windows(const std::vector<TimeSeriesRecord>& records,
                                              const std::map<std::string, BuildingStatic>& statics,
                                              const Standardizer& standardizer, std::size_t n,
                                              const std::vector<WindowRef>& refs,
                                              bool with_future_weather) {
    std::vector<WindowSample> out;
    out.reserve(refs.size());
    for (const WindowRef& ref : refs) {
        if (ref.record_index >= records.size()) {
            throw config_error("window reference points past the record list");
        }
        const TimeSeriesRecord& rec = records[ref.record_index];
        auto it = statics.find(rec.building_id);
        if (it == statics.end()) {
            throw data_error("no static features for building '" + rec.building_id + "'");
        }
        out.push_back(assemble_window_at(rec, it->second, standardizer, n, ref.target_index,
                                         with_future_weather));
    }
    return out;
}

std::vector<std::vector<std::string>> nested_building_subsets(
    const std::vector<std::string>& all, const std::vector<std::size_t>& sizes,
    std::uint64_t seed) {
    if (all.empty()) throw config_error("building subsets: empty building list");
    if (sizes.empty()) throw config_error("building subsets: no sizes requested");
    std::unordered_set<std::string> unique(all.begin(), all.end());
    if (unique.size() != all.size()) {
        throw config_error("building subsets: duplicate building id");
    }
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        if (sizes[i] == 0) throw config_error("building subsets: size 0 requested");
        if (i > 0 && sizes[i] <= sizes[i - 1]) {
            throw config_error("building subsets: sizes must be strictly increasing");
        }
    }
    if (sizes.back() > all.size()) {
        throw config_error("building subsets: largest size " + std::to_string(sizes.back()) +
                           " exceeds building count " + std::to_string(all.size()));
    }
    std::vector<std::string> shuffled = all;
    std::mt19937_64 rng(derive_seed(seed, "building_subsets"));
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    std::vector<std::vector<std::string>> out;
    out.reserve(sizes.size());
    for (std::size_t size : sizes) {
        std::vector<std::string> subset(shuffled.begin(), shuffled.begin() + size);
        std::sort(subset.begin(), subset.end());
        out.push_back(std::move(subset));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Metrics

double rmse(const std::vector<double>& pred, const std::vector<double>& truth) {
    if (pred.empty()) throw config_error("rmse: empty input");
    if (pred.size() != truth.size()) {
        throw config_error("rmse: length mismatch (" + std::to_string(pred.size()) + " vs " +
                           std::to_string(truth.size()) + ")");
    }
    MetricAccumulator acc;
    for (std::size_t i = 0; i < pred.size(); ++i) acc.add(pred[i], truth[i]);
    return acc.rmse_value();
}

MapeResult mape(const std::vector<double>& pred, const std::vector<double>& truth) {
    if (pred.empty()) throw config_error("mape: empty input");
    if (pred.size() != truth.size()) {
        throw config_error("mape: length mismatch (" + std::to_string(pred.size()) + " vs " +
                           std::to_string(truth.size()) + ")");
    }
    MetricAccumulator acc;
    for (std::size_t i = 0; i < pred.size(); ++i) acc.add(pred[i], truth[i]);
    return MapeResult{acc.mape_value(), acc.excluded};
}

// ---------------------------------------------------------------------------
// Reports

std::string report_to_json(const EvalReport& report) {
    nlohmann::json j;
    j["pooled"] = nlohmann::json::object();
    for (const auto& [split, pm] : report.pooled) {
        j["pooled"][split] = {{"rmse", pm.rmse},
                              {"mape", pm.mape},
                              {"count", pm.count},
                              {"mape_excluded", pm.mape_excluded}};
    }
    j["per_building_mean_rmse"] = nlohmann::json::object();
    for (const auto& [split, v] : report.per_building_mean_rmse) {
        j["per_building_mean_rmse"][split] = v;
    }
    nlohmann::json buildings = nlohmann::json::array();
    for (const MetricRow& row : report.rows) {
        if (row.month != 0) continue;
        nlohmann::json b = {{"building_id", row.building_id}, {"climate", row.climate},
                            {"split", row.split},           {"is_target", row.is_target},
                            {"count", row.count},           {"rmse", row.rmse},
                            {"mape", row.mape},             {"mape_excluded", row.mape_excluded}};
        nlohmann::json months = nlohmann::json::object();
        for (const MetricRow& m : report.rows) {
            if (m.month == 0 || m.building_id != row.building_id || m.split != row.split) continue;
            months[std::to_string(m.month)] = {{"rmse", m.rmse},
                                               {"mape", m.mape},
                                               {"count", m.count},
                                               {"mape_excluded", m.mape_excluded}};
        }
        b["months"] = std::move(months);
        buildings.push_back(std::move(b));
    }
    j["buildings"] = std::move(buildings);
    j["warnings"] = report.warnings;
    return j.dump(2);
}

std::string report_to_csv(const EvalReport& report) {
    std::ostringstream os;
    os << "building_id,climate,split,month,rmse,mape,is_target\n";
    for (const MetricRow& row : report.rows) {
        os << row.building_id << ',' << row.climate << ',' << row.split << ',' << row.month << ','
           << format_double(row.rmse) << ',' << format_double(row.mape) << ','
           << (row.is_target ? 1 : 0) << '\n';
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Evaluation

EvalReport evaluate_with(const Predictor& predict, const Standardizer& standardizer,
                         const std::vector<TimeSeriesRecord>& records,
                         const std::map<std::string, BuildingStatic>& statics,
                         const SplitSpec& spec, const std::vector<std::string>& train_climates,
                         bool with_future_weather) {
    if (!predict) throw config_error("evaluate: null predictor");
    Splits splits = make_splits(records, spec);

    EvalReport report;
    report.warnings = splits.warnings;

    if (!train_climates.empty()) {
        std::set<std::string> seen(train_climates.begin(), train_climates.end());
        std::set<std::string> flagged;
        for (const TimeSeriesRecord& rec : records) {
            if (!seen.count(rec.climate) && flagged.insert(rec.climate).second) {
                report.warnings.push_back("zero-shot evaluation: climate '" + rec.climate +
                                          "' was not seen during training");
            }
        }
    }

    const std::unordered_set<std::string> target_set(spec.train_buildings.begin(),
                                                     spec.train_buildings.end());

    // (split, building, month 0|1..12) -> accumulator; month 0 = whole split.
    std::map<std::tuple<std::string, std::string, unsigned>, MetricAccumulator> cells;
    std::map<std::string, MetricAccumulator> pooled;
    std::map<std::pair<std::string, std::string>, std::string> climates;

    auto run_split = [&](const std::string& name, const std::vector<WindowRef>& refs) {
        for (const WindowRef& ref : refs) {
            const TimeSeriesRecord& rec = records[ref.record_index];
            auto it = statics.find(rec.building_id);
            if (it == statics.end()) {
                throw data_error("no static features for building '" + rec.building_id + "'");
            }
            WindowSample w = assemble_window_at(rec, it->second, standardizer, spec.context_hours,
                                                ref.target_index, with_future_weather);
            const double pred = predict(w);
            const double truth = w.t_prev + w.target_delta;
            if (!std::isfinite(pred)) {
                throw numeric_error("evaluate: non-finite prediction for building '" +
                                    rec.building_id + "' at " + format_iso8601(w.target_time));
            }
            const unsigned month = month_of(w.target_time);
            cells[{name, rec.building_id, 0u}].add(pred, truth);
            cells[{name, rec.building_id, month}].add(pred, truth);
            pooled[name].add(pred, truth);
            climates[{name, rec.building_id}] = rec.climate;
        }
    };
    run_split("validation", splits.validation);
    run_split("test", splits.test);

    // Month-0 building rows first, then monthly rows; both sorted by map key.
    for (int monthly = 0; monthly <= 1; ++monthly) {
        for (const auto& [key, acc] : cells) {
            const auto& [split, building, month] = key;
            if ((month != 0) != (monthly == 1)) continue;
            MetricRow row;
            row.building_id = building;
            row.climate = climates.at({split, building});
            row.split = split;
            row.month = month;
            row.count = acc.count;
            row.rmse = acc.rmse_value();
            row.mape = acc.mape_value();
            row.mape_excluded = acc.excluded;
            row.is_target = target_set.count(building) > 0;
            report.rows.push_back(std::move(row));
        }
    }

    for (const auto& [split, acc] : pooled) {
        report.pooled[split] =
            PooledMetrics{acc.rmse_value(), acc.mape_value(), acc.count, acc.excluded};
        double sum = 0.0;
        std::size_t n_buildings = 0;
        for (const MetricRow& row : report.rows) {
            if (row.split == split && row.month == 0) {
                sum += row.rmse;
                ++n_buildings;
            }
        }
        report.per_building_mean_rmse[split] = sum / double(n_buildings);
    }
    return report;
}

EvalReport evaluate(const Checkpoint& checkpoint, const Dataset& data, SplitSpec spec) {
    spec.context_hours = checkpoint.config.context_hours;
    std::vector<std::string> train_climates;
    if (checkpoint.meta.contains("train_climates")) {
        train_climates = checkpoint.meta.at("train_climates").get<std::vector<std::string>>();
    }
    if (spec.train_buildings.empty() && checkpoint.meta.contains("train_buildings")) {
        spec.train_buildings =
            checkpoint.meta.at("train_buildings").get<std::vector<std::string>>();
    }
    Predictor p = [&checkpoint](const WindowSample& w) {
        return predict_temperature(checkpoint.config, checkpoint.params, w);
    };
    return evaluate_with(p, checkpoint.standardizer, data.records, data.statics, spec,
                         train_climates, checkpoint.config.with_future_weather);
}

// ---------------------------------------------------------------------------
// Baselines

namespace {

std::vector<double> flatten_features(const WindowSample& w) {
    std::vector<double> x;
    x.reserve(w.past.numel() + w.static_feats.numel() + w.future.numel() + 1);
    x.insert(x.end(), w.past.data().begin(), w.past.data().end());
    x.insert(x.end(), w.static_feats.data().begin(), w.static_feats.data().end());
    x.insert(x.end(), w.future.data().begin(), w.future.data().end());
    x.push_back(1.0);  // bias column
    return x;
}

// Gaussian elimination with partial pivoting; nullopt when singular.
std::optional<std::vector<double>> solve_linear_system(std::vector<std::vector<double>> a,
                                                       std::vector<double> b) {
    const std::size_t n = b.size();
    double scale = 0.0;
    for (const auto& row : a) {
        for (double v : row) scale = std::max(scale, std::abs(v));
    }
    const double tol = kPivotTolerance * (scale > 0.0 ? scale : 1.0);
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r) {
            if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
        }
        if (std::abs(a[pivot][col]) <= tol) return std::nullopt;
        std::swap(a[pivot], a[col]);
        std::swap(b[pivot], b[col]);
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a[r][col] / a[col][col];
            if (f == 0.0) continue;
            for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(n, 0.0);
    for (std::size_t i = n; i-- > 0;) {
        double acc = b[i];
        for (std::size_t c = i + 1; c < n; ++c) acc -= a[i][c] * x[c];
        x[i] = acc / a[i][i];
    }
    return x;
}

}  // namespace

BaselineKind baseline_from_string(const std::string& name) {
    if (name == "persistence") return BaselineKind::persistence;
    if (name == "linear_ar") return BaselineKind::linear_ar;
    throw config_error("unknown baseline '" + name + "' (expected persistence or linear_ar)");
}

LinearModel fit_linear_ar(const std::vector<WindowSample>& train, double ridge) {
    if (train.empty()) throw config_error("linear baseline: empty training set");
    if (ridge < 0.0) throw config_error("linear baseline: negative ridge");

    const std::size_t dim = flatten_features(train.front()).size();
    std::vector<std::vector<double>> xtx(dim, std::vector<double>(dim, 0.0));
    std::vector<double> xty(dim, 0.0);
    for (const WindowSample& w : train) {
        const std::vector<double> x = flatten_features(w);
        if (x.size() != dim) {
            throw config_error("linear baseline: inconsistent feature dimensions across windows");
        }
        for (double v : x) {
            if (!std::isfinite(v)) throw numeric_error("linear baseline: non-finite feature");
        }
        if (!std::isfinite(w.target_delta)) {
            throw numeric_error("linear baseline: non-finite target");
        }
        for (std::size_t i = 0; i < dim; ++i) {
            for (std::size_t j = i; j < dim; ++j) xtx[i][j] += x[i] * x[j];
            xty[i] += x[i] * w.target_delta;
        }
    }
    for (std::size_t i = 0; i < dim; ++i) {
        for (std::size_t j = 0; j < i; ++j) xtx[i][j] = xtx[j][i];
    }

    LinearModel model;
    double lambda = ridge;
    for (int attempt = 0; attempt <= kMaxRidgeRetries; ++attempt) {
        std::vector<std::vector<double>> a = xtx;
        for (std::size_t i = 0; i + 1 < dim; ++i) a[i][i] += lambda;  // bias unregularized
        if (auto solution = solve_linear_system(std::move(a), xty)) {
            model.weights = std::move(*solution);
            model.ridge_used = lambda;
            return model;
        }
        const double next = lambda == 0.0 ? 1e-6 : lambda * 10.0;
        model.warnings.push_back("linear baseline: singular normal equations at ridge " +
                                 format_double(lambda) + "; retrying with " +
                                 format_double(next));
        lambda = next;
    }
    throw numeric_error("linear baseline: normal equations remained singular after " +
                        std::to_string(kMaxRidgeRetries) + " ridge increases");
}

double linear_ar_predict(const LinearModel& model, const WindowSample& sample) {
    const std::vector<double> x = flatten_features(sample);
    if (x.size() != model.weights.size()) {
        throw config_error("linear baseline: sample feature dimension " +
                           std::to_string(x.size()) + " does not match fitted dimension " +
                           std::to_string(model.weights.size()));
    }
    double delta = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) delta += model.weights[i] * x[i];
    return sample.t_prev + delta;
}

std::vector<double> baseline_predict(BaselineKind kind, const std::vector<WindowSample>& train,
                                     const std::vector<WindowSample>& eval) {
    std::vector<double> out;
    out.reserve(eval.size());
    switch (kind) {
        case BaselineKind::persistence:
            for (const WindowSample& w : eval) out.push_back(w.t_prev);
            break;
        case BaselineKind::linear_ar: {
            const LinearModel model = fit_linear_ar(train);
            for (const WindowSample& w : eval) out.push_back(linear_ar_predict(model, w));
            break;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Cross-climate transfer

namespace {

// Pooled test RMSE of a predictor over one climate's test-mode windows.
double pooled_test_rmse(const std::vector<TimeSeriesRecord>& records,
                        const std::map<std::string, BuildingStatic>& statics,
                        const Standardizer& standardizer, std::size_t n, int test_mode,
                        bool with_future_weather, const Predictor& predict) {
    MetricAccumulator acc;
    for (const TimeSeriesRecord& rec : records) {
        if (rec.hvac_mode != test_mode || rec.size() <= n) continue;
        auto it = statics.find(rec.building_id);
        if (it == statics.end()) {
            throw data_error("no static features for building '" + rec.building_id + "'");
        }
        for (std::size_t t = n; t < rec.size(); ++t) {
            WindowSample w =
                assemble_window_at(rec, it->second, standardizer, n, t, with_future_weather);
            acc.add(predict(w), w.t_prev + w.target_delta);
        }
    }
    if (acc.count == 0) {
        throw config_error("transfer: no test-mode windows for one of the climates");
    }
    return acc.rmse_value();
}

}  // namespace

TransferMatrix transfer_matrix(const std::map<std::string, Checkpoint>& checkpoints,
                               const std::vector<TimeSeriesRecord>& records,
                               const std::map<std::string, BuildingStatic>& statics,
                               int test_mode, bool include_persistence) {
    std::map<std::string, std::vector<TimeSeriesRecord>> by_climate;
    for (const TimeSeriesRecord& rec : records) by_climate[rec.climate].push_back(rec);
    if (by_climate.size() < 2) {
        throw config_error("transfer: need records from at least two climates, got " +
                           std::to_string(by_climate.size()));
    }

    TransferMatrix m;
    for (const auto& [climate, recs] : by_climate) {
        (void)recs;
        m.columns.push_back(climate);
    }
    // One row per evaluated climate plus one per extra checkpoint label (a
    // model trained on several climates carries a combined label).
    std::set<std::string> row_set(m.columns.begin(), m.columns.end());
    for (const auto& [label, ck] : checkpoints) {
        (void)ck;
        row_set.insert(label);
    }
    m.rows.assign(row_set.begin(), row_set.end());
    if (include_persistence) m.rows.push_back("persistence");

    for (const std::string& row : m.rows) {
        std::vector<std::optional<double>> cells;
        if (row == "persistence") {
            for (const std::string& col : m.columns) {
                // Persistence ignores features, so any standardizer works;
                // fit one from the evaluated records for self-containment.
                std::vector<BuildingStatic> sts;
                std::set<std::string> ids;
                for (const TimeSeriesRecord& rec : by_climate.at(col)) {
                    if (!ids.insert(rec.building_id).second) continue;
                    auto it = statics.find(rec.building_id);
                    if (it == statics.end()) {
                        throw data_error("no static features for building '" + rec.building_id +
                                         "'");
                    }
                    sts.push_back(it->second);
                }
                Standardizer st = fit_standardizer(by_climate.at(col), sts);
                const std::size_t n = checkpoints.empty()
                                          ? ModelConfig{}.context_hours
                                          : checkpoints.begin()->second.config.context_hours;
                cells.push_back(pooled_test_rmse(
                    by_climate.at(col), statics, st, n, test_mode, false,
                    [](const WindowSample& w) { return w.t_prev; }));
            }
        } else if (auto it = checkpoints.find(row); it != checkpoints.end()) {
            const Checkpoint& ck = it->second;
            Predictor p = [&ck](const WindowSample& w) {
                return predict_temperature(ck.config, ck.params, w);
            };
            for (const std::string& col : m.columns) {
                cells.push_back(pooled_test_rmse(by_climate.at(col), statics, ck.standardizer,
                                                 ck.config.context_hours, test_mode,
                                                 ck.config.with_future_weather, p));
            }
        } else {
            cells.assign(m.columns.size(), std::nullopt);  // no model for this climate
        }
        m.cells.push_back(std::move(cells));
    }
    return m;
}

std::string transfer_to_csv(const TransferMatrix& matrix) {
    std::ostringstream os;
    os << "train_climate";
    for (const std::string& col : matrix.columns) os << ",eval_" << col;
    os << '\n';
    for (std::size_t r = 0; r < matrix.rows.size(); ++r) {
        os << matrix.rows[r];
        for (std::size_t c = 0; c < matrix.columns.size(); ++c) {
            os << ',';
            if (matrix.cells[r][c]) os << format_double(*matrix.cells[r][c]);
        }
        os << '\n';
    }
    return os.str();
}

}  // namespace thermoformer
