#include "thermoformer/datagen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <json.hpp>

#include "thermoformer/common.hpp"

namespace thermoformer {

namespace {

constexpr double kPi = std::numbers::pi;

// Integration: explicit Euler with 6-minute substeps reported hourly.
constexpr double kSubstepSeconds = 360.0;
constexpr int kSubstepsPerHour = 10;
constexpr std::int64_t kHourSeconds = 3600;

// Envelope derivation constants.
constexpr double kCeilingHeight = 2.7;           // m
constexpr double kWindowU = 2.8;                 // W/m^2K
constexpr double kInfiltrationAch = 0.5;         // air changes per hour
constexpr double kAirDensity = 1.2;              // kg/m^3
constexpr double kAirHeatCapacity = 1005.0;      // J/kgK
constexpr double kCapacitancePerArea = 2.0e5;    // J/K per m^2 of floor
constexpr double kApertureFraction = 0.1;        // of gross wall area
constexpr double kCapacitySizingDeltaT = 30.0;   // K design temperature gap
constexpr double kCapacitySizingMargin = 1.2;    // oversizing factor
constexpr double kThermostatHysteresis = 0.5;    // K around each setpoint

// All generated series start here; the first reported row is one hour later.
const std::int64_t kStartEpoch = parse_iso8601("2021-01-01T00:00:00");

double fractional_hour(std::int64_t t) {
    std::int64_t sec = ((t % 86400) + 86400) % 86400;
    return static_cast<double>(sec) / 3600.0;
}

// Seasonal phase: -1 in mid-January, +1 in mid-July.
double seasonal_phase(std::int64_t t) {
    double doy = static_cast<double>(day_of_year(t));
    return -std::cos(2.0 * kPi * (doy - 15.0) / 365.0);
}

}  // namespace

const char* const kCsvHeader = "timestamp,building_id,hvac_mode,climate,t_in,t_out,solar,q_hvac,q_occ";

ClimateProfile ClimateProfile::preset(const std::string& region) {
    ClimateProfile p;
    p.region = region;
    if (region == "hot_humid") {
        p.t_mean = 20.0;
        p.seasonal_amp = 10.0;
        p.diurnal_amp = 5.0;
        p.noise_std = 1.0;
        p.solar_peak = 900.0;
        p.solar_seasonal = 0.25;
    } else if (region == "marine") {
        p.t_mean = 15.0;
        p.seasonal_amp = 4.0;
        p.diurnal_amp = 4.0;
        p.noise_std = 1.0;
        p.solar_peak = 700.0;
        p.solar_seasonal = 0.35;
    } else if (region == "cold") {
        p.t_mean = 8.0;
        p.seasonal_amp = 14.0;
        p.diurnal_amp = 6.0;
        p.noise_std = 1.5;
        p.solar_peak = 650.0;
        p.solar_seasonal = 0.5;
    } else {
        throw config_error("unknown climate region '" + region +
                           "' (known: hot_humid, marine, cold)");
    }
    return p;
}

const std::vector<std::string>& ClimateProfile::known_regions() {
    static const std::vector<std::string> regions = {"hot_humid", "marine", "cold"};
    return regions;
}

double ClimateProfile::base_t_out(std::int64_t t) const {
    // Diurnal phase: coldest at 03:00, warmest at 15:00.
    double diurnal = std::cos(2.0 * kPi * (fractional_hour(t) - 15.0) / 24.0);
    return t_mean + seasonal_amp * seasonal_phase(t) + diurnal_amp * diurnal;
}

double ClimateProfile::solar_at(std::int64_t t) const {
    double h = fractional_hour(t);
    if (h <= 6.0 || h >= 18.0) {
        return 0.0;
    }
    double daylight = std::sin(kPi * (h - 6.0) / 12.0);
    // Scales from (1 - solar_seasonal) in winter up to 1 in summer.
    double seasonal = 1.0 - solar_seasonal * (1.0 - seasonal_phase(t)) / 2.0;
    return solar_peak * seasonal * daylight;
}

void RcBuilding::validate() const {
    if (id.empty()) {
        throw config_error("building id must be non-empty");
    }
    statics.validate();
    auto positive = [&](double v, const char* name) {
        if (!std::isfinite(v) || v <= 0.0) {
            throw config_error("building " + id + ": " + name + " must be finite and > 0");
        }
    };
    positive(capacitance, "capacitance");
    positive(resistance, "resistance");
    if (!std::isfinite(solar_aperture) || solar_aperture < 0.0) {
        throw config_error("building " + id + ": solar_aperture must be finite and >= 0");
    }
    if (!std::isfinite(hvac_capacity) || hvac_capacity < 0.0) {
        throw config_error("building " + id + ": hvac_capacity must be finite and >= 0");
    }
    if (!std::isfinite(setpoint_heat) || !std::isfinite(setpoint_cool) ||
        setpoint_heat >= setpoint_cool) {
        throw config_error("building " + id + ": setpoint_heat must be below setpoint_cool");
    }
    // Explicit Euler with the fixed substep must be comfortably stable.
    if (!(kSubstepSeconds < resistance * capacitance / 2.0)) {
        throw config_error("building " + id + ": substep " + std::to_string(kSubstepSeconds) +
                           " s is not well below the thermal time constant R*C = " +
                           std::to_string(resistance * capacitance) + " s");
    }
}

RcBuilding make_rc_building(std::string id, const BuildingStatic& statics, double setpoint_heat,
                            double setpoint_cool) {
    statics.validate();
    double width = std::sqrt(statics.floor_area / statics.aspect_ratio);
    double length = statics.aspect_ratio * width;
    double wall_gross = 2.0 * (length + width) * kCeilingHeight;
    double window_area = statics.wwr * wall_gross;
    double opaque_area = wall_gross - window_area;
    double volume = statics.floor_area * kCeilingHeight;
    double ua = opaque_area / statics.wall_r                                    // opaque walls
                + statics.floor_area / statics.roof_r                           // roof
                + window_area * kWindowU                                        // glazing
                + kInfiltrationAch * volume * kAirDensity * kAirHeatCapacity /  // infiltration
                      3600.0;

    RcBuilding b;
    b.id = std::move(id);
    b.statics = statics;
    b.capacitance = kCapacitancePerArea * statics.floor_area;
    b.resistance = 1.0 / ua;
    b.solar_aperture = kApertureFraction * wall_gross;
    b.setpoint_heat = setpoint_heat;
    b.setpoint_cool = setpoint_cool;
    b.hvac_capacity = kCapacitySizingMargin * ua * kCapacitySizingDeltaT;
    b.validate();
    return b;
}

std::vector<RcBuilding> sample_buildings(std::size_t n, const ClimateProfile& climate,
                                         std::uint64_t seed) {
    if (n == 0) {
        throw config_error("sample_buildings: need at least one building");
    }
    std::mt19937_64 rng(derive_seed(seed, "buildings:" + climate.region));
    std::uniform_real_distribution<double> area(80.0, 250.0);
    std::uniform_real_distribution<double> aspect(1.0, 3.0);
    std::uniform_real_distribution<double> wwr(0.1, 0.4);
    std::uniform_real_distribution<double> wall_r(1.0, 5.0);
    std::uniform_real_distribution<double> roof_r(2.0, 8.0);
    std::uniform_real_distribution<double> gain(2.0, 8.0);
    std::uniform_real_distribution<double> sp_heat(19.0, 21.0);
    std::uniform_real_distribution<double> sp_cool(23.0, 25.0);

    std::vector<RcBuilding> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        BuildingStatic s;
        s.floor_area = area(rng);
        s.aspect_ratio = aspect(rng);
        s.wwr = wwr(rng);
        s.wall_r = wall_r(rng);
        s.roof_r = roof_r(rng);
        s.internal_gain_density = gain(rng);
        double heat = sp_heat(rng);
        double cool = sp_cool(rng);
        char idbuf[64];
        std::snprintf(idbuf, sizeof(idbuf), "%s_b%02zu", climate.region.c_str(), i);
        out.push_back(make_rc_building(idbuf, s, heat, cool));
    }
    return out;
}

double occupancy_fraction_at(unsigned hour_of_day) {
    if (hour_of_day > 23) {
        throw config_error("occupancy_fraction_at: hour must be in 0..23");
    }
    if (hour_of_day <= 6) {
        return 1.0;  // night, everyone home
    }
    if (hour_of_day <= 8) {
        return 0.7;  // morning routine
    }
    if (hour_of_day <= 16) {
        return 0.3;  // workday absence
    }
    return 0.9;  // evening
}

Mode5Schedule mode5_scale_factors(std::size_t hours, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution deviate(0.6);
    std::uniform_real_distribution<double> factor(0.3, 1.7);
    Mode5Schedule sched;
    sched.factor.reserve(hours);
    sched.deviated.reserve(hours);
    for (std::size_t i = 0; i < hours; ++i) {
        bool dev = deviate(rng);
        sched.deviated.push_back(dev);
        sched.factor.push_back(dev ? factor(rng) : 1.0);
    }
    return sched;
}

TimeSeriesRecord simulate(const RcBuilding& building, const ClimateProfile& climate, int hvac_mode,
                          std::size_t hours, std::uint64_t seed, const SimOverrides& ov) {
    building.validate();
    if (hvac_mode < 1 || hvac_mode > 5) {
        throw config_error("hvac_mode must be in 1..5, got " + std::to_string(hvac_mode));
    }
    if (hours < 72) {
        throw config_error("simulate: need at least 72 hours, got " + std::to_string(hours));
    }

    // Instantaneous climate at each hour boundary 0..hours. The value at the
    // start of an hour is held constant through that hour's substeps.
    std::vector<double> t_out_inst(hours + 1);
    std::vector<double> solar_inst(hours + 1);
    {
        std::mt19937_64 rng(derive_seed(seed, "weather"));
        std::normal_distribution<double> gauss(0.0, 1.0);
        constexpr double rho = 0.9;
        const double innovation = std::sqrt(1.0 - rho * rho);
        double noise = climate.noise_std * gauss(rng);
        for (std::size_t i = 0; i <= hours; ++i) {
            std::int64_t t = kStartEpoch + static_cast<std::int64_t>(i) * kHourSeconds;
            if (i > 0) {
                noise = rho * noise + climate.noise_std * innovation * gauss(rng);
            }
            t_out_inst[i] =
                ov.constant_t_out ? *ov.constant_t_out : climate.base_t_out(t) + noise;
            solar_inst[i] = ov.constant_solar ? *ov.constant_solar : climate.solar_at(t);
        }
    }

    Mode5Schedule mode5;
    if (hvac_mode == 5) {
        mode5 = mode5_scale_factors(hours, derive_seed(seed, "mode5"));
    }

    const double cap = building.hvac_capacity;
    const double heat_sp = building.setpoint_heat;
    const double cool_sp = building.setpoint_cool;
    const double inv_c = 1.0 / building.capacitance;
    const double solar_gain_coeff = building.solar_aperture * building.statics.wwr;
    const double occ_installed =
        building.statics.internal_gain_density * building.statics.floor_area;

    enum class Thermostat { Off, Heating, Cooling };
    Thermostat stat = Thermostat::Off;

    double temp = ov.initial_temp ? *ov.initial_temp : 0.5 * (heat_sp + cool_sp);

    TimeSeriesRecord rec;
    rec.building_id = building.id;
    rec.hvac_mode = hvac_mode;
    rec.climate = climate.region;
    rec.timestamps.reserve(hours);
    rec.t_in.reserve(hours);
    rec.t_out.reserve(hours);
    rec.solar.reserve(hours);
    rec.q_hvac.reserve(hours);
    rec.q_occ.reserve(hours);

    for (std::size_t i = 1; i <= hours; ++i) {
        std::int64_t interval_start = kStartEpoch + static_cast<std::int64_t>(i - 1) * kHourSeconds;
        double zoh_t_out = t_out_inst[i - 1];
        double frac = ov.occupancy_fraction ? *ov.occupancy_fraction
                                            : occupancy_fraction_at(hour_of_day(interval_start));
        double q_occ_power = occ_installed * frac;
        double q_solar = solar_gain_coeff * solar_inst[i - 1];
        double q_sum = 0.0;

        for (int s = 0; s < kSubstepsPerHour; ++s) {
            double free_rate = ((zoh_t_out - temp) / building.resistance + q_solar + q_occ_power) *
                               inv_c;
            double t_free = temp + kSubstepSeconds * free_rate;
            double q = 0.0;
            switch (hvac_mode) {
                case 4:
                    temp = t_free;
                    break;
                case 2: {
                    double clamped = std::clamp(t_free, heat_sp, cool_sp);
                    q = (clamped - t_free) * building.capacitance / kSubstepSeconds;
                    temp = clamped;
                    break;
                }
                case 3: {
                    double ideal = (std::clamp(t_free, heat_sp, cool_sp) - t_free) *
                                   building.capacitance / kSubstepSeconds;
                    q = std::clamp(ideal, -cap, cap);
                    temp = t_free + kSubstepSeconds * q * inv_c;
                    break;
                }
                case 5: {
                    double ideal = (std::clamp(t_free, heat_sp, cool_sp) - t_free) *
                                   building.capacitance / kSubstepSeconds;
                    q = ideal * mode5.factor[i - 1];
                    temp = t_free + kSubstepSeconds * q * inv_c;
                    break;
                }
                case 1: {
                    switch (stat) {
                        case Thermostat::Off:
                            if (temp < heat_sp - kThermostatHysteresis) {
                                stat = Thermostat::Heating;
                            } else if (temp > cool_sp + kThermostatHysteresis) {
                                stat = Thermostat::Cooling;
                            }
                            break;
                        case Thermostat::Heating:
                            if (temp >= heat_sp + kThermostatHysteresis) {
                                stat = Thermostat::Off;
                            }
                            break;
                        case Thermostat::Cooling:
                            if (temp <= cool_sp - kThermostatHysteresis) {
                                stat = Thermostat::Off;
                            }
                            break;
                    }
                    q = stat == Thermostat::Heating ? cap
                        : stat == Thermostat::Cooling ? -cap
                                                      : 0.0;
                    temp = t_free + kSubstepSeconds * q * inv_c;
                    break;
                }
                default:
                    throw config_error("unreachable hvac mode");
            }
            q_sum += q;
            if (!std::isfinite(temp)) {
                throw numeric_error("simulation diverged for building " + building.id + " at hour " +
                                    std::to_string(i));
            }
        }

        rec.timestamps.push_back(kStartEpoch + static_cast<std::int64_t>(i) * kHourSeconds);
        rec.t_in.push_back(temp);
        rec.t_out.push_back(t_out_inst[i]);
        rec.solar.push_back(solar_inst[i]);
        rec.q_hvac.push_back(q_sum / kSubstepsPerHour);
        rec.q_occ.push_back(q_occ_power);
    }

    rec.validate();
    return rec;
}

namespace {

void check_dataset_spec(const DatasetSpec& spec) {
    if (spec.counts.empty()) {
        throw config_error("dataset spec: need at least one climate region");
    }
    for (const auto& [region, count] : spec.counts) {
        ClimateProfile::preset(region);  // rejects unknown regions
        if (count == 0) {
            throw config_error("dataset spec: region " + region + " has zero buildings");
        }
    }
    if (spec.modes.empty()) {
        throw config_error("dataset spec: need at least one hvac mode");
    }
    std::vector<int> sorted_modes = spec.modes;
    std::sort(sorted_modes.begin(), sorted_modes.end());
    if (std::adjacent_find(sorted_modes.begin(), sorted_modes.end()) != sorted_modes.end()) {
        throw config_error("dataset spec: duplicate hvac mode");
    }
    for (int m : spec.modes) {
        if (m < 1 || m > 5) {
            throw config_error("dataset spec: hvac_mode must be in 1..5, got " + std::to_string(m));
        }
    }
    if (spec.hours < 72) {
        throw config_error("dataset spec: need at least 72 hours, got " +
                           std::to_string(spec.hours));
    }
}

}  // namespace

Dataset generate_dataset(const DatasetSpec& spec) {
    check_dataset_spec(spec);
    Dataset ds;
    for (const auto& [region, count] : spec.counts) {
        ClimateProfile profile = ClimateProfile::preset(region);
        std::vector<RcBuilding> buildings = sample_buildings(count, profile, spec.seed);
        for (const RcBuilding& b : buildings) {
            ds.statics.emplace(b.id, b.statics);
            // One seed per building so every mode sees the same weather draw.
            std::uint64_t sim_seed = derive_seed(spec.seed, "sim:" + b.id);
            for (int mode : spec.modes) {
                ds.records.push_back(simulate(b, profile, mode, spec.hours, sim_seed));
            }
        }
    }
    return ds;
}

Dataset generate_dataset(const DatasetSpec& spec, const std::string& out_dir) {
    Dataset ds = generate_dataset(spec);
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) {
        throw data_error("cannot create output directory " + out_dir + ": " + ec.message());
    }

    nlohmann::json files = nlohmann::json::object();
    for (const TimeSeriesRecord& rec : ds.records) {
        std::string name = rec.building_id + "_mode" + std::to_string(rec.hvac_mode) + ".csv";
        std::string path = (fs::path(out_dir) / name).string();
        write_record_csv(rec, path);
        files[name] = hex64(hash_file(path));
    }

    {
        std::string path = (fs::path(out_dir) / "statics.json").string();
        std::ofstream out(path);
        if (!out) {
            throw data_error("cannot write " + path);
        }
        out << statics_to_json(ds.statics) << '\n';
    }

    nlohmann::json manifest;
    manifest["seed"] = spec.seed;
    manifest["hours"] = spec.hours;
    manifest["modes"] = spec.modes;
    manifest["counts"] = nlohmann::json::object();
    for (const auto& [region, count] : spec.counts) {
        manifest["counts"][region] = count;
    }
    manifest["files"] = files;
    {
        std::string path = (fs::path(out_dir) / "manifest.json").string();
        std::ofstream out(path);
        if (!out) {
            throw data_error("cannot write " + path);
        }
        out << manifest.dump(2) << '\n';
    }
    return ds;
}

void write_record_csv(const TimeSeriesRecord& record, const std::string& path) {
    record.validate();
    std::ostringstream body;
    body << kCsvHeader << '\n';
    char num[512];
    for (std::size_t i = 0; i < record.size(); ++i) {
        std::snprintf(num, sizeof(num), "%.17g,%.17g,%.17g,%.17g,%.17g", record.t_in[i],
                      record.t_out[i], record.solar[i], record.q_hvac[i], record.q_occ[i]);
        body << format_iso8601(record.timestamps[i]) << ',' << record.building_id << ','
             << record.hvac_mode << ',' << record.climate << ',' << num << '\n';
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw data_error("cannot write " + path);
    }
    out << body.str();
    if (!out) {
        throw data_error("write failed for " + path);
    }
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string::size_type start = 0;
    while (true) {
        auto pos = line.find(',', start);
        if (pos == std::string::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return fields;
}

double parse_double_field(const std::string& field, const char* column, std::size_t row) {
    double v = 0.0;
    auto [ptr, err] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (err != std::errc() || ptr != field.data() + field.size()) {
        throw data_error(std::string("cannot parse ") + column + " '" + field + "' at data row " +
                         std::to_string(row));
    }
    if (!std::isfinite(v)) {
        throw data_error(std::string("non-finite ") + column + " at data row " +
                         std::to_string(row));
    }
    return v;
}

}  // namespace

TimeSeriesRecord ingest_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw data_error("cannot open " + path);
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw data_error(path + ": empty file");
    }
    if (!line.empty() && line.back() == '\r') {
        line.pop_back();
    }
    if (line != kCsvHeader) {
        throw data_error(path + ": unexpected CSV header '" + line + "' (expected '" + kCsvHeader +
                         "')");
    }

    TimeSeriesRecord rec;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        ++row;
        std::vector<std::string> f = split_csv_line(line);
        if (f.size() != 9) {
            throw data_error(path + ": expected 9 columns, got " + std::to_string(f.size()) +
                             " at data row " + std::to_string(row));
        }
        std::int64_t ts;
        try {
            ts = parse_iso8601(f[0]);
        } catch (const data_error& e) {
            throw data_error(path + ": " + e.what() + " at data row " + std::to_string(row));
        }
        int mode = 0;
        {
            auto [ptr, err] = std::from_chars(f[2].data(), f[2].data() + f[2].size(), mode);
            if (err != std::errc() || ptr != f[2].data() + f[2].size()) {
                throw data_error(path + ": cannot parse hvac_mode '" + f[2] + "' at data row " +
                                 std::to_string(row));
            }
        }
        if (row == 1) {
            rec.building_id = f[1];
            rec.hvac_mode = mode;
            rec.climate = f[3];
        } else {
            if (f[1] != rec.building_id) {
                throw data_error(path + ": building_id changes from '" + rec.building_id +
                                 "' to '" + f[1] + "' at data row " + std::to_string(row));
            }
            if (mode != rec.hvac_mode) {
                throw data_error(path + ": hvac_mode changes at data row " + std::to_string(row));
            }
            if (f[3] != rec.climate) {
                throw data_error(path + ": climate changes at data row " + std::to_string(row));
            }
        }
        rec.timestamps.push_back(ts);
        rec.t_in.push_back(parse_double_field(f[4], "t_in", row));
        rec.t_out.push_back(parse_double_field(f[5], "t_out", row));
        rec.solar.push_back(parse_double_field(f[6], "solar", row));
        rec.q_hvac.push_back(parse_double_field(f[7], "q_hvac", row));
        rec.q_occ.push_back(parse_double_field(f[8], "q_occ", row));
    }
    try {
        rec.validate();
    } catch (const data_error& e) {
        throw data_error(path + ": " + e.what());
    }
    return rec;
}

Dataset load_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    fs::path root(dir);
    fs::path statics_path = root / "statics.json";
    std::ifstream statics_in(statics_path);
    if (!statics_in) {
        throw data_error("cannot open " + statics_path.string());
    }
    std::stringstream buf;
    buf << statics_in.rdbuf();

    Dataset ds;
    ds.statics = parse_statics_json(buf.str());

    std::vector<std::string> names;
    fs::path manifest_path = root / "manifest.json";
    if (fs::exists(manifest_path)) {
        std::ifstream mf(manifest_path);
        if (!mf) {
            throw data_error("cannot open " + manifest_path.string());
        }
        nlohmann::json manifest;
        try {
            mf >> manifest;
        } catch (const nlohmann::json::exception& e) {
            throw data_error(manifest_path.string() + ": " + e.what());
        }
        if (!manifest.contains("files") || !manifest["files"].is_object()) {
            throw data_error(manifest_path.string() + ": missing 'files' object");
        }
        for (const auto& item : manifest["files"].items()) {
            names.push_back(item.key());
        }
    } else {
        for (const auto& entry : fs::directory_iterator(root)) {
            if (entry.path().extension() == ".csv") {
                names.push_back(entry.path().filename().string());
            }
        }
    }
    std::sort(names.begin(), names.end());
    if (names.empty()) {
        throw data_error("no record CSVs found in " + dir);
    }
    for (const std::string& name : names) {
        TimeSeriesRecord rec = ingest_csv((root / name).string());
        if (ds.statics.find(rec.building_id) == ds.statics.end()) {
            throw data_error("record " + name + " references building '" + rec.building_id +
                             "' absent from statics.json");
        }
        ds.records.push_back(std::move(rec));
    }
    return ds;
}

}  // namespace thermoformer
