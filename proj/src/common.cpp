#include "thermoformer/common.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

namespace thermoformer {

std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed) {
    return fnv1a64(s.data(), s.size(), seed);
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

std::uint64_t derive_seed(std::uint64_t root_seed, std::string_view component) {
    std::uint64_t h = fnv1a64(&root_seed, sizeof(root_seed));
    return fnv1a64(component, h);
}

std::size_t thread_budget(std::size_t requested) {
    std::size_t hw = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    std::size_t n = requested > 0 ? requested : hw;
    if (const char* env = std::getenv("THERMOFORMER_THREADS")) {
        char* end = nullptr;
        long cap = std::strtol(env, &end, 10);
        if (end != env && cap > 0) n = std::min(n, static_cast<std::size_t>(cap));
    }
    return std::max<std::size_t>(1, n);
}

namespace {

// Howard Hinnant's days-from-civil algorithm.
std::int64_t days_from_civil(int y, unsigned m, unsigned d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, int& y, unsigned& m, unsigned& d) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const int yr = static_cast<int>(yoe) + static_cast<int>(era) * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = doy - (153 * mp + 2) / 5 + 1;
    m = mp + (mp < 10 ? 3 : -9);
    y = yr + (m <= 2);
}

}  // namespace

std::int64_t epoch_from_civil(const CivilTime& c) {
    return days_from_civil(c.year, c.month, c.day) * 86400 + c.hour * 3600 + c.minute * 60 + c.second;
}

CivilTime civil_from_epoch(std::int64_t t) {
    std::int64_t days = t / 86400;
    std::int64_t rem = t % 86400;
    if (rem < 0) {
        rem += 86400;
        days -= 1;
    }
    CivilTime c{};
    civil_from_days(days, c.year, c.month, c.day);
    c.hour = static_cast<unsigned>(rem / 3600);
    c.minute = static_cast<unsigned>((rem % 3600) / 60);
    c.second = static_cast<unsigned>(rem % 60);
    return c;
}

std::int64_t parse_iso8601(std::string_view s) {
    // YYYY-MM-DDTHH:MM:SS
    auto bad = [&]() -> std::int64_t {
        throw data_error("bad ISO-8601 timestamp: '" + std::string(s) + "'");
    };
    if (s.size() != 19 || s[4] != '-' || s[7] != '-' || s[10] != 'T' || s[13] != ':' || s[16] != ':')
        return bad();
    auto num = [&](std::size_t pos, std::size_t len) -> int {
        int v = 0;
        auto res = std::from_chars(s.data() + pos, s.data() + pos + len, v);
        if (res.ec != std::errc{} || res.ptr != s.data() + pos + len) bad();
        return v;
    };
    CivilTime c{};
    c.year = num(0, 4);
    c.month = static_cast<unsigned>(num(5, 2));
    c.day = static_cast<unsigned>(num(8, 2));
    c.hour = static_cast<unsigned>(num(11, 2));
    c.minute = static_cast<unsigned>(num(14, 2));
    c.second = static_cast<unsigned>(num(17, 2));
    if (c.month < 1 || c.month > 12 || c.day < 1 || c.day > 31 || c.hour > 23 || c.minute > 59 || c.second > 59)
        bad();
    return epoch_from_civil(c);
}

std::string format_iso8601(std::int64_t t) {
    CivilTime c = civil_from_epoch(t);
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02u:%02u:%02u", c.year, c.month, c.day, c.hour,
                  c.minute, c.second);
    return std::string(buf);
}

unsigned month_of(std::int64_t t) { return civil_from_epoch(t).month; }

unsigned hour_of_day(std::int64_t t) { return civil_from_epoch(t).hour; }

unsigned day_of_year(std::int64_t t) {
    CivilTime c = civil_from_epoch(t);
    std::int64_t jan1 = epoch_from_civil({c.year, 1, 1, 0, 0, 0});
    return static_cast<unsigned>((t - jan1) / 86400) + 1;
}

std::string format_shape(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::uint64_t hash_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open file for hashing: " + path);
    char buf[65536];
    std::uint64_t h = 0xcbf29ce484222325ull;
    while (in) {
        in.read(buf, sizeof(buf));
        std::streamsize got = in.gcount();
        if (got > 0) h = fnv1a64(buf, static_cast<std::size_t>(got), h);
    }
    return h;
}

}  // namespace thermoformer
