#pragma once

// Split protocol, error metrics, reference baselines, evaluation reports and
// the cross-climate transfer matrix.
//
// Protocol summary:
//   * every window whose record uses the held-out HVAC mode (default 1) goes
//     to the test split, across ALL buildings;
//   * from the remaining records of the designated training buildings, a
//     seeded random fraction (default 10%) of each record's window indices
//     becomes the validation split, the rest the training split;
//   * splits are disjoint by construction and sampling is deterministic for
//     a given seed.
//
// Reports aggregate RMSE / MAPE per building, per calendar month and pooled
// across all windows of a split, and flag buildings seen during training
// ("target") versus unseen ones.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "thermoformer/datagen.hpp"
#include "thermoformer/features.hpp"
#include "thermoformer/model.hpp"

namespace thermoformer {

// ---------------------------------------------------------------------------
// Splits

struct SplitSpec {
    int test_mode = 1;           // HVAC mode reserved for the test split
    double val_fraction = 0.10;  // share of each training record's windows
    std::uint64_t seed = 0;
    std::size_t context_hours = 24;          // window length n
    std::vector<std::string> train_buildings;  // buildings the model trains on

    void validate() const;  // throws config_error
};

// A window is identified by its source record and target row index.
struct WindowRef {
    std::size_t record_index = 0;
    std::size_t target_index = 0;  // t in [n, record size)

    bool operator==(const WindowRef&) const = default;
    bool operator<(const WindowRef& o) const {
        return record_index != o.record_index ? record_index < o.record_index
                                              : target_index < o.target_index;
    }
};

struct Splits {
    std::vector<WindowRef> train;
    std::vector<WindowRef> validation;
    std::vector<WindowRef> test;
    std::vector<std::string> warnings;
};

// Partition all windows of `records` per the protocol above.
// Throws config_error when the spec is invalid, no test-mode record exists,
// or no training window remains.
Splits make_splits(const std::vector<TimeSeriesRecord>& records, const SplitSpec& spec);

// Assemble the referenced windows into model-ready samples.
std::vector<WindowSample> materialize_windows(const std::vector<TimeSeriesRecord>& records,
                                              const std::map<std::string, BuildingStatic>& statics,
                                              const Standardizer& standardizer, std::size_t n,
                                              const std::vector<WindowRef>& refs,
                                              bool with_future_weather = false);

// Deterministically shuffle `all` once and return the prefixes of the given
// sizes, so that each subset is contained in every larger one.
// Sizes must be strictly increasing and at most all.size().
std::vector<std::vector<std::string>> nested_building_subsets(
    const std::vector<std::string>& all, const std::vector<std::size_t>& sizes,
    std::uint64_t seed);

// ---------------------------------------------------------------------------
// Metrics

// Root mean squared error in °C. Throws config_error on empty or mismatched
// inputs.
double rmse(const std::vector<double>& pred, const std::vector<double>& truth);

struct MapeResult {
    double value = 0.0;         // percent; NaN when every term was excluded
    std::size_t excluded = 0;   // terms dropped by the division guard
};

// Mean absolute percentage error. Terms with |truth| < 0.1 °C are excluded
// from the mean (division guard) and counted in `excluded`.
MapeResult mape(const std::vector<double>& pred, const std::vector<double>& truth);

// ---------------------------------------------------------------------------
// Reports

struct MetricRow {
    std::string building_id;
    std::string climate;
    std::string split;          // "test" or "validation"
    unsigned month = 0;         // 1..12, or 0 for the whole split
    std::size_t count = 0;      // windows aggregated in this row
    double rmse = 0.0;
    double mape = 0.0;          // percent; NaN if all terms excluded
    std::size_t mape_excluded = 0;
    bool is_target = false;     // building seen during training
};

struct PooledMetrics {
    double rmse = 0.0;
    double mape = 0.0;
    std::size_t count = 0;
    std::size_t mape_excluded = 0;
};

struct EvalReport {
    std::vector<MetricRow> rows;  // month-0 building rows followed by monthly rows
    std::map<std::string, PooledMetrics> pooled;            // split -> pooled over windows
    std::map<std::string, double> per_building_mean_rmse;   // split -> mean of building RMSEs
    std::vector<std::string> warnings;
};

std::string report_to_json(const EvalReport& report);
// Flat rows: building_id,climate,split,month,rmse,mape,is_target
std::string report_to_csv(const EvalReport& report);

// ---------------------------------------------------------------------------
// Evaluation

// Maps a window to a predicted absolute indoor temperature for its target hour.
using Predictor = std::function<double(const WindowSample&)>;

// Run `predict` over the validation and test splits and aggregate the report.
// `train_climates`, when nonempty, drives unseen-climate warnings.
EvalReport evaluate_with(const Predictor& predict, const Standardizer& standardizer,
                         const std::vector<TimeSeriesRecord>& records,
                         const std::map<std::string, BuildingStatic>& statics,
                         const SplitSpec& spec,
                         const std::vector<std::string>& train_climates = {},
                         bool with_future_weather = false);

// Evaluate a trained checkpoint on a dataset. Uses the checkpoint's own
// configuration and standardizer; never modifies the checkpoint.
EvalReport evaluate(const Checkpoint& checkpoint, const Dataset& data, SplitSpec spec);

// ---------------------------------------------------------------------------
// Baselines

enum class BaselineKind { persistence, linear_ar };

BaselineKind baseline_from_string(const std::string& name);  // throws config_error

struct LinearModel {
    std::vector<double> weights;  // one per flattened feature, bias last
    double ridge_used = 0.0;
    std::vector<std::string> warnings;
};

// Ridge-regularized least squares from flattened window features
// (past matrix + static features + future covariates + bias) to the
// temperature delta. A singular system retries with a 10x larger ridge,
// recording a warning per retry.
LinearModel fit_linear_ar(const std::vector<WindowSample>& train, double ridge = 1e-3);

double linear_ar_predict(const LinearModel& model, const WindowSample& sample);

// Predicted absolute temperatures for `eval`:
//   persistence: previous observed temperature (zero predicted change);
//   linear_ar:   previous temperature + fitted linear delta.
std::vector<double> baseline_predict(BaselineKind kind,
                                     const std::vector<WindowSample>& train,
                                     const std::vector<WindowSample>& eval);

// ---------------------------------------------------------------------------
// Cross-climate transfer

struct TransferMatrix {
    std::vector<std::string> rows;      // training climates (+ optional "persistence")
    std::vector<std::string> columns;   // evaluation climates
    // cells[r][c]: pooled test RMSE of row r's model on column c's test split;
    // absent when no checkpoint exists for the row climate.
    std::vector<std::vector<std::optional<double>>> cells;
};

// Evaluate every per-climate checkpoint on every climate's test split.
// Records may mix climates; they are grouped by their climate tag. Requires
// at least two climates among the records. When `include_persistence` is set,
// a final row reports the persistence baseline per evaluation climate.
TransferMatrix transfer_matrix(const std::map<std::string, Checkpoint>& checkpoints,
                               const std::vector<TimeSeriesRecord>& records,
                               const std::map<std::string, BuildingStatic>& statics,
                               int test_mode = 1, bool include_persistence = false);

std::string transfer_to_csv(const TransferMatrix& matrix);

}  // namespace thermoformer
