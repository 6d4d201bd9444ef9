#include "thermoformer/features.hpp"

#include <cmath>
#include <numbers>

#include <json.hpp>

#include "thermoformer/common.hpp"

namespace thermoformer {

using nlohmann::json;

void BuildingStatic::validate() const {
    auto positive = [](double v, const char* name) {
        if (!(v > 0.0) || !std::isfinite(v))
            throw config_error(std::string("building static ") + name + " must be positive, got " +
                               std::to_string(v));
    };
    positive(floor_area, "floor_area");
    positive(aspect_ratio, "aspect_ratio");
    positive(wall_r, "wall_r");
    positive(roof_r, "roof_r");
    if (!(wwr >= 0.0 && wwr <= 1.0))
        throw config_error("building static wwr must be in [0, 1], got " + std::to_string(wwr));
    if (!(internal_gain_density >= 0.0) || !std::isfinite(internal_gain_density))
        throw config_error("building static internal_gain_density must be >= 0, got " +
                           std::to_string(internal_gain_density));
}

void TimeSeriesRecord::validate() const {
    if (hvac_mode < 1 || hvac_mode > 5)
        throw data_error("record " + building_id + ": hvac_mode must be 1..5, got " +
                         std::to_string(hvac_mode));
    std::size_t n = timestamps.size();
    if (n < 3) throw data_error("record " + building_id + ": needs at least 3 points, has " +
                                std::to_string(n));
    for (std::size_t c = 0; c < kRawChannels; ++c) {
        const auto& ch = channel(c);
        if (ch.size() != n)
            throw data_error("record " + building_id + ": channel " + kRawChannelNames[c] +
                             " length " + std::to_string(ch.size()) + " != " + std::to_string(n));
        for (std::size_t i = 0; i < n; ++i)
            if (!std::isfinite(ch[i]))
                throw data_error("record " + building_id + ": non-finite " + kRawChannelNames[c] +
                                 " at row " + std::to_string(i));
    }
    for (std::size_t i = 1; i < n; ++i) {
        if (timestamps[i] - timestamps[i - 1] != 3600)
            throw data_error("record " + building_id + ": timestamps must increase by 3600 s, got " +
                             std::to_string(timestamps[i] - timestamps[i - 1]) + " at row " +
                             std::to_string(i));
    }
}

const std::vector<double>& TimeSeriesRecord::channel(std::size_t c) const {
    switch (c) {
        case 0: return t_in;
        case 1: return t_out;
        case 2: return solar;
        case 3: return q_hvac;
        case 4: return q_occ;
        default: throw config_error("channel index out of range: " + std::to_string(c));
    }
}

std::pair<double, double> mean_std(const std::vector<double>& values) {
    if (values.empty()) throw config_error("mean_std: empty value set");
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) {
        double d = v - mean;
        var += d * d;
    }
    var /= static_cast<double>(values.size());
    double sd = std::sqrt(var);
    return {mean, std::max(sd, 1e-8)};
}

std::vector<double> centered_difference(const std::vector<double>& series, double dt) {
    if (!(dt > 0.0)) throw config_error("centered_difference: dt must be positive");
    std::size_t n = series.size();
    if (n < 3)
        throw data_error("centered_difference: need at least 3 points, got " + std::to_string(n));
    std::vector<double> d(n);
    d[0] = (series[1] - series[0]) / dt;
    for (std::size_t i = 1; i + 1 < n; ++i) d[i] = (series[i + 1] - series[i - 1]) / (2.0 * dt);
    d[n - 1] = (series[n - 1] - series[n - 2]) / dt;
    return d;
}

std::vector<double> window_derivative(const std::vector<double>& series, std::size_t begin,
                                      std::size_t len, double dt) {
    if (!(dt > 0.0)) throw config_error("window_derivative: dt must be positive");
    if (begin + len > series.size())
        throw config_error("window_derivative: slice [" + std::to_string(begin) + ", " +
                           std::to_string(begin + len) + ") exceeds series length " +
                           std::to_string(series.size()));
    if (len < 2) throw data_error("window_derivative: need at least 2 points");
    std::vector<double> d(len);
    if (len == 2) {
        double slope = (series[begin + 1] - series[begin]) / dt;
        d[0] = d[1] = slope;
        return d;
    }
    d[0] = (series[begin + 1] - series[begin]) / dt;
    for (std::size_t i = 1; i + 1 < len; ++i)
        d[i] = (series[begin + i + 1] - series[begin + i - 1]) / (2.0 * dt);
    d[len - 1] = (series[begin + len - 1] - series[begin + len - 2]) / dt;
    return d;
}

std::vector<double> build_future_covariates(std::int64_t timestamp) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    CivilTime c = civil_from_epoch(timestamp);
    double hour = c.hour + c.minute / 60.0 + c.second / 3600.0;
    double hour_angle = two_pi * hour / 24.0;
    double doy_angle = two_pi * (day_of_year(timestamp) - 1) / 365.0;
    return {std::sin(hour_angle), std::cos(hour_angle), std::sin(doy_angle), std::cos(doy_angle)};
}

Standardizer fit_standardizer(const std::vector<TimeSeriesRecord>& records,
                              const std::vector<BuildingStatic>& statics) {
    if (records.empty()) throw config_error("fit_standardizer: no training records");
    if (statics.empty()) throw config_error("fit_standardizer: no building statics");
    for (const auto& r : records) r.validate();

    Standardizer s;
    s.raw_mean.resize(kRawChannels);
    s.raw_std.resize(kRawChannels);
    s.deriv_mean.resize(kRawChannels);
    s.deriv_std.resize(kRawChannels);
    s.static_mean.resize(kStaticDim);
    s.static_std.resize(kStaticDim);

    for (std::size_t c = 0; c < kRawChannels; ++c) {
        std::vector<double> pooled;
        std::vector<double> pooled_deriv;
        for (const auto& r : records) {
            const auto& ch = r.channel(c);
            pooled.insert(pooled.end(), ch.begin(), ch.end());
            auto d = centered_difference(ch, 1.0);
            pooled_deriv.insert(pooled_deriv.end(), d.begin(), d.end());
        }
        std::tie(s.raw_mean[c], s.raw_std[c]) = mean_std(pooled);
        std::tie(s.deriv_mean[c], s.deriv_std[c]) = mean_std(pooled_deriv);
    }
    for (std::size_t i = 0; i < kStaticDim; ++i) {
        std::vector<double> vals;
        vals.reserve(statics.size());
        for (const auto& b : statics) vals.push_back(b.as_array()[i]);
        std::tie(s.static_mean[i], s.static_std[i]) = mean_std(vals);
    }
    return s;
}

namespace {

void check_standardizer(const Standardizer& s) {
    if (s.raw_mean.size() != kRawChannels || s.raw_std.size() != kRawChannels ||
        s.deriv_mean.size() != kRawChannels || s.deriv_std.size() != kRawChannels ||
        s.static_mean.size() != kStaticDim || s.static_std.size() != kStaticDim)
        throw config_error("standardizer has wrong channel counts");
}

}  // namespace

namespace {

// Shared core of assemble_windows / assemble_window_at, after validation.
WindowSample build_window(const TimeSeriesRecord& record, const ad::Tensor& static_t,
                          const Standardizer& std_, std::size_t n, std::size_t t,
                          bool with_future_weather) {
    const std::size_t f = 2 * kRawChannels;
    WindowSample w;
    w.past = ad::Tensor::zeros({n, f});
    auto& pd = w.past.data();
    for (std::size_t c = 0; c < kRawChannels; ++c) {
        const auto& ch = record.channel(c);
        auto d = window_derivative(ch, t - n, n, 1.0);
        for (std::size_t i = 0; i < n; ++i) {
            pd[i * f + c] = std_.raw(c, ch[t - n + i]);
            pd[i * f + kRawChannels + c] = std_.deriv(c, d[i]);
        }
    }
    w.static_feats = static_t.clone();

    std::vector<double> fut = build_future_covariates(record.timestamps[t]);
    if (with_future_weather) {
        fut.push_back(std_.raw(1, record.t_out[t]));
        fut.push_back(std_.raw(2, record.solar[t]));
    }
    std::size_t k = fut.size();
    w.future = ad::Tensor({k}, std::move(fut));

    w.t_prev = record.t_in[t - 1];
    w.target_delta = record.t_in[t] - record.t_in[t - 1];
    w.building_id = record.building_id;
    w.hvac_mode = record.hvac_mode;
    w.climate = record.climate;
    w.target_time = record.timestamps[t];
    w.target_index = t;
    return w;
}

ad::Tensor standardized_statics(const BuildingStatic& statics, const Standardizer& std_) {
    ad::Tensor static_t = ad::Tensor::zeros({kStaticDim});
    auto arr = statics.as_array();
    for (std::size_t i = 0; i < kStaticDim; ++i) static_t.data()[i] = std_.stat(i, arr[i]);
    return static_t;
}

void check_window_args(const TimeSeriesRecord& record, const BuildingStatic& statics,
                       const Standardizer& std_, std::size_t n) {
    if (n < 2) throw config_error("context length must be at least 2, got " + std::to_string(n));
    record.validate();
    statics.validate();
    check_standardizer(std_);
    if (record.size() < n + 1)
        throw data_error("record " + record.building_id + ": length " +
                         std::to_string(record.size()) + " too short for context " +
                         std::to_string(n) + " (need " + std::to_string(n + 1) + ")");
}

}  // namespace

std::vector<WindowSample> assemble_windows(const TimeSeriesRecord& record,
                                           const BuildingStatic& statics, const Standardizer& std_,
                                           std::size_t n, bool with_future_weather) {
    check_window_args(record, statics, std_, n);
    ad::Tensor static_t = standardized_statics(statics, std_);
    std::vector<WindowSample> out;
    out.reserve(record.size() - n);
    for (std::size_t t = n; t < record.size(); ++t) {
        out.push_back(build_window(record, static_t, std_, n, t, with_future_weather));
    }
    return out;
}

WindowSample assemble_window_at(const TimeSeriesRecord& record, const BuildingStatic& statics,
                                const Standardizer& std_, std::size_t n, std::size_t t,
                                bool with_future_weather) {
    check_window_args(record, statics, std_, n);
    if (t < n || t >= record.size())
        throw config_error("target index " + std::to_string(t) + " outside [" + std::to_string(n) +
                           ", " + std::to_string(record.size()) + ")");
    return build_window(record, standardized_statics(statics, std_), std_, n, t,
                        with_future_weather);
}

// ---------------------------------------------------------------------------
// JSON round trips
// ---------------------------------------------------------------------------

namespace {

json parse_json_or_throw(const std::string& text, const char* what) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw data_error(std::string("bad JSON (") + what + "): " + e.what());
    }
}

double require_number(const json& j, const char* key, const std::string& ctx) {
    if (!j.contains(key) || !j.at(key).is_number())
        throw data_error(ctx + ": missing or non-numeric key '" + key + "'");
    return j.at(key).get<double>();
}

}  // namespace

std::string Standardizer::to_json() const {
    json j;
    j["raw_mean"] = raw_mean;
    j["raw_std"] = raw_std;
    j["deriv_mean"] = deriv_mean;
    j["deriv_std"] = deriv_std;
    j["static_mean"] = static_mean;
    j["static_std"] = static_std;
    return j.dump();
}

Standardizer Standardizer::from_json(const std::string& text) {
    json j = parse_json_or_throw(text, "standardizer");
    Standardizer s;
    auto read = [&](const char* key, std::vector<double>& dst, std::size_t want) {
        if (!j.contains(key) || !j.at(key).is_array())
            throw data_error(std::string("standardizer JSON: missing array '") + key + "'");
        dst = j.at(key).get<std::vector<double>>();
        if (dst.size() != want)
            throw data_error(std::string("standardizer JSON: '") + key + "' has " +
                             std::to_string(dst.size()) + " entries, want " + std::to_string(want));
    };
    read("raw_mean", s.raw_mean, kRawChannels);
    read("raw_std", s.raw_std, kRawChannels);
    read("deriv_mean", s.deriv_mean, kRawChannels);
    read("deriv_std", s.deriv_std, kRawChannels);
    read("static_mean", s.static_mean, kStaticDim);
    read("static_std", s.static_std, kStaticDim);
    return s;
}

std::map<std::string, BuildingStatic> parse_statics_json(const std::string& text) {
    json j = parse_json_or_throw(text, "building statics");
    if (!j.is_object()) throw data_error("building statics JSON must be an object keyed by id");
    std::map<std::string, BuildingStatic> out;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string ctx = "statics for '" + it.key() + "'";
        const json& b = it.value();
        BuildingStatic s;
        s.floor_area = require_number(b, "floor_area", ctx);
        s.aspect_ratio = require_number(b, "aspect_ratio", ctx);
        s.wwr = require_number(b, "wwr", ctx);
        s.wall_r = require_number(b, "wall_r", ctx);
        s.roof_r = require_number(b, "roof_r", ctx);
        s.internal_gain_density = require_number(b, "internal_gain_density", ctx);
        try {
            s.validate();
        } catch (const config_error& e) {
            throw data_error(ctx + ": " + e.what());
        }
        out.emplace(it.key(), s);
    }
    return out;
}

std::string statics_to_json(const std::map<std::string, BuildingStatic>& statics) {
    json j = json::object();
    for (const auto& [id, s] : statics) {
        j[id] = {{"floor_area", s.floor_area},
                 {"aspect_ratio", s.aspect_ratio},
                 {"wwr", s.wwr},
                 {"wall_r", s.wall_r},
                 {"roof_r", s.roof_r},
                 {"internal_gain_density", s.internal_gain_density}};
    }
    return j.dump(2);
}

}  // namespace thermoformer
