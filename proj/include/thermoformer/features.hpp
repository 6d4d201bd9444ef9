#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "thermoformer/tensor.hpp"

namespace thermoformer {

// Raw observation channels, in the order they appear in CSV files and in the
// past block of a WindowSample.
inline constexpr std::size_t kRawChannels = 5;
inline constexpr std::array<const char*, kRawChannels> kRawChannelNames = {
    "t_in", "t_out", "solar", "q_hvac", "q_occ"};

// Time-invariant physical descriptors of one building.
struct BuildingStatic {
    double floor_area = 0.0;             // m^2
    double aspect_ratio = 0.0;           // length/width
    double wwr = 0.0;                    // window-to-wall ratio, [0, 1]
    double wall_r = 0.0;                 // m^2·K/W
    double roof_r = 0.0;                 // m^2·K/W
    double internal_gain_density = 0.0;  // W/m^2

    void validate() const;  // config_error on violated ranges
    std::array<double, 6> as_array() const {
        return {floor_area, aspect_ratio, wwr, wall_r, roof_r, internal_gain_density};
    }
};

inline constexpr std::size_t kStaticDim = 6;
inline constexpr std::array<const char*, kStaticDim> kStaticNames = {
    "floor_area", "aspect_ratio", "wwr", "wall_r", "roof_r", "internal_gain_density"};

// One building-mode simulation trace at a fixed 1-hour step.
struct TimeSeriesRecord {
    std::string building_id;
    int hvac_mode = 0;  // 1..5
    std::string climate;
    std::vector<std::int64_t> timestamps;  // epoch seconds, strictly increasing, uniform
    std::vector<double> t_in;              // °C
    std::vector<double> t_out;             // °C
    std::vector<double> solar;             // W/m^2
    std::vector<double> q_hvac;            // W, heating positive
    std::vector<double> q_occ;             // W

    std::size_t size() const { return timestamps.size(); }
    void validate() const;  // data_error on any broken invariant
    // Raw channel accessor in kRawChannelNames order.
    const std::vector<double>& channel(std::size_t c) const;
};

// One training example: everything the model may see for target index t, plus
// the label. `past` covers indices t-n..t-1 only.
struct WindowSample {
    ad::Tensor past;          // [n x 2*kRawChannels], standardized raw + derivative channels
    ad::Tensor static_feats;  // [6], standardized
    ad::Tensor future;        // [k], known covariates at the target time
    double t_prev = 0.0;      // °C, physical units
    double target_delta = 0.0;  // °C, physical units (the label)

    std::string building_id;
    int hvac_mode = 0;
    std::string climate;
    std::int64_t target_time = 0;
    std::size_t target_index = 0;
};

// Per-channel standardization statistics, fit on training data only.
struct Standardizer {
    std::vector<double> raw_mean, raw_std;        // [kRawChannels]
    std::vector<double> deriv_mean, deriv_std;    // [kRawChannels]
    std::vector<double> static_mean, static_std;  // [kStaticDim]

    double raw(std::size_t c, double v) const { return (v - raw_mean[c]) / raw_std[c]; }
    double deriv(std::size_t c, double v) const { return (v - deriv_mean[c]) / deriv_std[c]; }
    double stat(std::size_t i, double v) const { return (v - static_mean[i]) / static_std[i]; }

    std::string to_json() const;
    static Standardizer from_json(const std::string& text);
};

// Population mean and std (floored at 1e-8) of one value set.
std::pair<double, double> mean_std(const std::vector<double>& values);

// First derivative at every point: second-order centered differences in the
// interior, one-sided first-order at the two boundary points.
// length < 3 -> data_error, dt <= 0 -> config_error.
std::vector<double> centered_difference(const std::vector<double>& series, double dt);

// Same scheme applied to a window slice [begin, begin+len) of `series`,
// without ever reading outside the slice. Supports len == 2 (two-point slope).
std::vector<double> window_derivative(const std::vector<double>& series, std::size_t begin,
                                      std::size_t len, double dt);

// Calendar covariates at a timestamp:
// [sin/cos of hour-of-day, sin/cos of day-of-year], k = 4.
std::vector<double> build_future_covariates(std::int64_t timestamp);
inline constexpr std::size_t kCalendarFutureDim = 4;

// Fit channel statistics over every point of `records` (raw channels and their
// full-series derivatives) and over the building set for statics.
Standardizer fit_standardizer(const std::vector<TimeSeriesRecord>& records,
                              const std::vector<BuildingStatic>& statics);

// Cut one record into WindowSamples for every target index t in [n, len).
// Derivative channels are computed per window slice so nothing at index >= t
// is ever read; target_delta = t_in[t] - t_in[t-1] is the only use of index t
// (it is the label). When with_future_weather is set, standardized t_out and
// solar at the target time are appended to the future covariates (treated as
// a known forecast).
std::vector<WindowSample> assemble_windows(const TimeSeriesRecord& record,
                                           const BuildingStatic& statics, const Standardizer& std,
                                           std::size_t n, bool with_future_weather = false);

// Single window for one target index t in [n, len). Exactly the sample that
// assemble_windows would produce at that t.
WindowSample assemble_window_at(const TimeSeriesRecord& record, const BuildingStatic& statics,
                                const Standardizer& std, std::size_t n, std::size_t t,
                                bool with_future_weather = false);

// Statics JSON: {"<building_id>": {"floor_area": ..., ...}, ...}
std::map<std::string, BuildingStatic> parse_statics_json(const std::string& text);
std::string statics_to_json(const std::map<std::string, BuildingStatic>& statics);

}  // namespace thermoformer
