#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace thermoformer {

// Error taxonomy, mapped to process exit codes by the CLI:
//   config_error  -> 1 (bad configuration, usage, shape/contract violations)
//   data_error    -> 2 (malformed or inconsistent input data)
//   numeric_error -> 3 (NaN/Inf, divergence, unstable integration)
struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct data_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// FNV-1a, used for manifests, seed derivation and checkpoint fingerprints.
std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ull);
std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed = 0xcbf29ce484222325ull);
std::string hex64(std::uint64_t v);

// Every component draws its RNG seed from the root seed and its own name, so
// one root seed reproduces a whole experiment.
std::uint64_t derive_seed(std::uint64_t root_seed, std::string_view component);

// Thread budget: min(hardware, THERMOFORMER_THREADS). `requested` 0 means auto.
std::size_t thread_budget(std::size_t requested = 0);

// --- calendar helpers (proleptic Gregorian, UTC) ---------------------------

struct CivilTime {
    int year;
    unsigned month;   // 1..12
    unsigned day;     // 1..31
    unsigned hour;    // 0..23
    unsigned minute;  // 0..59
    unsigned second;  // 0..59
};

std::int64_t epoch_from_civil(const CivilTime& c);
CivilTime civil_from_epoch(std::int64_t t);

// Strict "YYYY-MM-DDTHH:MM:SS"; anything else is a data_error.
std::int64_t parse_iso8601(std::string_view s);
std::string format_iso8601(std::int64_t t);

unsigned month_of(std::int64_t t);       // 1..12
unsigned hour_of_day(std::int64_t t);    // 0..23
unsigned day_of_year(std::int64_t t);    // 1..366

// --- misc -------------------------------------------------------------------

std::string format_shape(const std::vector<std::size_t>& shape);

std::uint64_t hash_file(const std::string& path);  // FNV-1a over bytes; data_error if unreadable

}  // namespace thermoformer
