#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "thermoformer/features.hpp"

namespace thermoformer {

// Synthetic climate: sinusoidal seasonal/diurnal outdoor temperature with AR(1)
// noise, and a clear-sky solar curve with seasonal modulation.
struct ClimateProfile {
    std::string region;
    double t_mean = 0.0;        // °C annual mean
    double seasonal_amp = 0.0;  // °C, winter-to-summer half swing
    double diurnal_amp = 0.0;   // °C, night-to-afternoon half swing
    double noise_std = 0.0;     // °C, stationary AR(1) std
    double solar_peak = 0.0;    // W/m^2 at summer noon
    double solar_seasonal = 0.3;  // relative winter reduction of solar

    // Known regions: hot_humid, marine, cold. Anything else -> config_error.
    static ClimateProfile preset(const std::string& region);
    static const std::vector<std::string>& known_regions();

    // Deterministic components at a timestamp (noise excluded).
    double base_t_out(std::int64_t t) const;
    double solar_at(std::int64_t t) const;
};

// Single-zone lumped thermal model: one capacitance, one envelope resistance.
//   C dT/dt = (T_out - T)/R + q_solar + q_occ + q_hvac
struct RcBuilding {
    std::string id;
    BuildingStatic statics;
    double capacitance = 0.0;     // J/K
    double resistance = 0.0;      // K/W
    double solar_aperture = 0.0;  // m^2; gain = aperture * wwr * irradiance
    double setpoint_heat = 0.0;   // °C
    double setpoint_cool = 0.0;   // °C
    double hvac_capacity = 0.0;   // W, symmetric heat/cool limit

    void validate() const;  // config_error on violated invariants
};

// Derives capacitance, resistance, aperture and capacity from the statics via
// fixed envelope formulas (documented in the implementation).
RcBuilding make_rc_building(std::string id, const BuildingStatic& statics, double setpoint_heat,
                            double setpoint_cool);

// Deterministic building sampler. Statics are drawn uniformly from:
// floor_area 80-250 m^2, aspect_ratio 1-3, wwr 0.1-0.4, wall_r 1-5 m^2K/W,
// roof_r 2-8 m^2K/W, internal_gain_density 2-8 W/m^2; heating setpoint 19-21 °C,
// cooling setpoint 23-25 °C. Ids are "<region>_bNN".
std::vector<RcBuilding> sample_buildings(std::size_t n, const ClimateProfile& climate,
                                         std::uint64_t seed);

// Fixed diurnal occupancy schedule (fraction of installed internal gains).
double occupancy_fraction_at(unsigned hour_of_day);

// Hourly HVAC scale factors for mode 5: with probability 0.6 the hour deviates
// and draws a factor uniformly from [0.3, 1.7]; otherwise the factor is 1.
struct Mode5Schedule {
    std::vector<double> factor;
    std::vector<bool> deviated;
};
Mode5Schedule mode5_scale_factors(std::size_t hours, std::uint64_t seed);

// Test hooks: pin selected forcings to constants instead of the climate model.
struct SimOverrides {
    std::optional<double> initial_temp;
    std::optional<double> occupancy_fraction;  // replaces the diurnal schedule
    std::optional<double> constant_t_out;      // disables weather + noise
    std::optional<double> constant_solar;      // disables the solar curve
};

// Integrates the RC model with explicit Euler substeps of 6 minutes under one
// of five HVAC modes, reporting hourly rows:
//   1 thermostat: bang-bang hysteresis (±0.5 K around each setpoint) at full
//     capacity — the held-out test regime;
//   2 ideal loads: indoor temperature clamped exactly into the setpoint band;
//   3 capacity-limited ideal loads: mode-2 power clamped to ±hvac_capacity;
//   4 free float: q_hvac = 0;
//   5 scaled ideal loads: mode-2 power times the hourly mode-5 factor.
//
// Row semantics: row k (timestamp tau_k) reports the state at the END of hour
// k (t_in), the climate evaluated AT tau_k (t_out, solar), and the mean HVAC /
// occupant powers over the hour that ended at tau_k. Within each hour the
// climate forcing is held at its value from the start of that hour, i.e. the
// previous row's reported weather. hours >= 72 required.
TimeSeriesRecord simulate(const RcBuilding& building, const ClimateProfile& climate, int hvac_mode,
                          std::size_t hours, std::uint64_t seed, const SimOverrides& ov = {});

struct DatasetSpec {
    std::map<std::string, std::size_t> counts;  // region -> building count
    std::vector<int> modes = {1, 2, 3, 4, 5};
    std::size_t hours = 0;
    std::uint64_t seed = 0;
};

struct Dataset {
    std::vector<TimeSeriesRecord> records;
    std::map<std::string, BuildingStatic> statics;
};

// One record per (building, mode). All randomness is derived from spec.seed,
// and all modes of a building share the same weather draw.
Dataset generate_dataset(const DatasetSpec& spec);

// Same, but also writes one CSV per record, statics.json, and manifest.json
// (seed, parameters, per-file content hashes) into out_dir.
Dataset generate_dataset(const DatasetSpec& spec, const std::string& out_dir);

// CSV header (exact): timestamp,building_id,hvac_mode,climate,t_in,t_out,solar,q_hvac,q_occ
extern const char* const kCsvHeader;

void write_record_csv(const TimeSeriesRecord& record, const std::string& path);
TimeSeriesRecord ingest_csv(const std::string& path);

// Reads a directory written by generate_dataset (statics.json + record CSVs;
// manifest.json's file list when present, otherwise a sorted directory scan).
Dataset load_dataset(const std::string& dir);

}  // namespace thermoformer
