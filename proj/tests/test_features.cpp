#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "thermoformer/common.hpp"
#include "thermoformer/features.hpp"

using namespace thermoformer;

namespace {

TimeSeriesRecord make_record(std::size_t len, std::uint64_t seed, int mode = 4) {
    TimeSeriesRecord r;
    r.building_id = "b" + std::to_string(seed);
    r.hvac_mode = mode;
    r.climate = "hot_humid";
    std::int64_t t0 = parse_iso8601("2021-03-01T00:00:00");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> du(-1.0, 1.0);
    for (std::size_t i = 0; i < len; ++i) {
        r.timestamps.push_back(t0 + static_cast<std::int64_t>(i) * 3600);
        r.t_in.push_back(21.0 + 2.0 * du(rng));
        r.t_out.push_back(10.0 + 8.0 * du(rng));
        r.solar.push_back(std::max(0.0, 300.0 * du(rng)));
        r.q_hvac.push_back(500.0 * du(rng));
        r.q_occ.push_back(200.0 + 50.0 * du(rng));
    }
    return r;
}

BuildingStatic make_static() {
    BuildingStatic b;
    b.floor_area = 150.0;
    b.aspect_ratio = 1.5;
    b.wwr = 0.25;
    b.wall_r = 3.0;
    b.roof_r = 5.0;
    b.internal_gain_density = 4.0;
    return b;
}

bool tensors_bitwise_equal(const ad::Tensor& a, const ad::Tensor& b) {
    if (a.shape() != b.shape()) return false;
    return std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

bool samples_inputs_identical(const WindowSample& a, const WindowSample& b) {
    return tensors_bitwise_equal(a.past, b.past) &&
           tensors_bitwise_equal(a.static_feats, b.static_feats) &&
           tensors_bitwise_equal(a.future, b.future) &&
           std::memcmp(&a.t_prev, &b.t_prev, sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("centered_difference oracle values") {
    CHECK(centered_difference({5, 5, 5, 5}, 1.0) == std::vector<double>{0, 0, 0, 0});

    // f(t) = t^2 on t = 0..4: exact derivative 2t at interior points.
    std::vector<double> sq = {0, 1, 4, 9, 16};
    auto d = centered_difference(sq, 1.0);
    CHECK(d[0] == 1.0);   // forward one-sided
    CHECK(d[1] == 2.0);
    CHECK(d[2] == 4.0);
    CHECK(d[3] == 6.0);
    CHECK(d[4] == 7.0);  // backward one-sided

    CHECK(centered_difference({0, 2, 4}, 1.0) == std::vector<double>{2, 2, 2});

    CHECK_THROWS_AS(centered_difference({1, 2}, 1.0), data_error);
    CHECK_THROWS_AS(centered_difference({1, 2, 3}, 0.0), config_error);
    CHECK_THROWS_AS(centered_difference({1, 2, 3}, -1.0), config_error);
}

TEST_CASE("centered_difference is exact on random quadratics at interior points") {
    std::mt19937_64 rng(101);
    std::uniform_real_distribution<double> coeff(-5.0, 5.0);
    for (int trial = 0; trial < 25; ++trial) {
        double a = coeff(rng), b = coeff(rng), c = coeff(rng);
        double dt = std::uniform_real_distribution<double>(0.1, 2.0)(rng);
        std::size_t len = 12;
        std::vector<double> series(len);
        for (std::size_t i = 0; i < len; ++i) {
            double t = static_cast<double>(i) * dt;
            series[i] = a * t * t + b * t + c;
        }
        auto d = centered_difference(series, dt);
        for (std::size_t i = 1; i + 1 < len; ++i) {
            double t = static_cast<double>(i) * dt;
            double exact = 2.0 * a * t + b;
            CHECK(std::abs(d[i] - exact) <= 1e-9 * std::max(1.0, std::abs(exact)));
        }
    }
}

TEST_CASE("window_derivative matches centered_difference on the slice and handles n=2") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> du(-3.0, 3.0);
    std::vector<double> series(30);
    for (auto& v : series) v = du(rng);

    auto full = window_derivative(series, 5, 10, 1.0);
    std::vector<double> slice(series.begin() + 5, series.begin() + 15);
    CHECK(full == centered_difference(slice, 1.0));

    auto two = window_derivative(series, 3, 2, 1.0);
    double slope = series[4] - series[3];
    CHECK(two == std::vector<double>{slope, slope});

    CHECK_THROWS_AS(window_derivative(series, 29, 2, 1.0), config_error);
    CHECK_THROWS_AS(window_derivative(series, 0, 1, 1.0), data_error);
}

TEST_CASE("build_future_covariates calendar oracle values") {
    std::int64_t midnight_jan1 = parse_iso8601("2021-01-01T00:00:00");
    auto k = build_future_covariates(midnight_jan1);
    REQUIRE(k.size() == kCalendarFutureDim);
    CHECK(k[0] == 0.0);  // sin(0)
    CHECK(k[1] == 1.0);  // cos(0)
    CHECK(k[2] == 0.0);  // day angle 0 on Jan 1
    CHECK(k[3] == 1.0);

    auto six = build_future_covariates(parse_iso8601("2021-01-01T06:00:00"));
    CHECK(six[0] == doctest::Approx(1.0).epsilon(1e-12));  // sin(pi/2)
    CHECK(std::abs(six[1]) <= 1e-15);                      // cos(pi/2)

    // Noon July 2 is day 183 of a non-leap year: day angle just shy of pi.
    auto midyear = build_future_covariates(parse_iso8601("2021-07-02T12:00:00"));
    double angle = 2.0 * 3.14159265358979323846 * 182.0 / 365.0;
    CHECK(midyear[2] == doctest::Approx(std::sin(angle)).epsilon(1e-12));
    CHECK(midyear[3] == doctest::Approx(std::cos(angle)).epsilon(1e-12));
    CHECK(std::abs(midyear[2]) <= 0.02);          // near sin(pi) = 0
    CHECK(midyear[3] == doctest::Approx(-1.0).epsilon(1e-3));
}

TEST_CASE("mean_std oracle values") {
    auto [m1, s1] = mean_std({1, 1, 1});
    CHECK(m1 == 1.0);
    CHECK(s1 == 1e-8);  // degenerate variance floored

    auto [m2, s2] = mean_std({0, 2});
    CHECK(m2 == 1.0);
    CHECK(s2 == 1.0);  // population std

    auto [m3, s3] = mean_std({100, 300});
    CHECK(m3 == 200.0);
    CHECK(s3 == 100.0);

    CHECK_THROWS_AS(mean_std({}), config_error);
}

TEST_CASE("record validation catches malformed input") {
    TimeSeriesRecord r = make_record(10, 1);
    CHECK_NOTHROW(r.validate());

    TimeSeriesRecord bad_mode = r;
    bad_mode.hvac_mode = 6;
    CHECK_THROWS_AS(bad_mode.validate(), data_error);

    TimeSeriesRecord short_rec = make_record(2, 2);
    CHECK_THROWS_AS(short_rec.validate(), data_error);

    TimeSeriesRecord ragged = r;
    ragged.solar.pop_back();
    CHECK_THROWS_AS(ragged.validate(), data_error);

    TimeSeriesRecord gap = r;
    gap.timestamps[5] += 7200;
    CHECK_THROWS_AS(gap.validate(), data_error);

    TimeSeriesRecord nan_rec = r;
    nan_rec.t_out[3] = std::nan("");
    CHECK_THROWS_AS(nan_rec.validate(), data_error);
}

TEST_CASE("building static validation") {
    BuildingStatic b = make_static();
    CHECK_NOTHROW(b.validate());
    BuildingStatic neg = b;
    neg.wall_r = -1.0;
    CHECK_THROWS_AS(neg.validate(), config_error);
    BuildingStatic wwr = b;
    wwr.wwr = 1.2;
    CHECK_THROWS_AS(wwr.validate(), config_error);
}

TEST_CASE("fit_standardizer yields mean 0 std 1 on training channels") {
    std::vector<TimeSeriesRecord> records = {make_record(48, 11), make_record(72, 12),
                                             make_record(60, 13)};
    std::vector<BuildingStatic> statics = {make_static(), make_static()};
    statics[1].floor_area = 250.0;
    statics[1].wall_r = 1.5;

    Standardizer s = fit_standardizer(records, statics);

    for (std::size_t c = 0; c < kRawChannels; ++c) {
        std::vector<double> standardized;
        for (const auto& r : records)
            for (double v : r.channel(c)) standardized.push_back(s.raw(c, v));
        auto [m, sd] = mean_std(standardized);
        CHECK(std::abs(m) <= 1e-10);
        CHECK(std::abs(sd - 1.0) <= 1e-10);

        std::vector<double> std_deriv;
        for (const auto& r : records)
            for (double v : centered_difference(r.channel(c), 1.0))
                std_deriv.push_back(s.deriv(c, v));
        auto [md, sdd] = mean_std(std_deriv);
        CHECK(std::abs(md) <= 1e-10);
        CHECK(std::abs(sdd - 1.0) <= 1e-10);
    }

    // floor_area {150, 250} -> mean 200, std 50
    CHECK(s.static_mean[0] == 200.0);
    CHECK(s.static_std[0] == 50.0);

    CHECK_THROWS_AS(fit_standardizer({}, statics), config_error);
    CHECK_THROWS_AS(fit_standardizer(records, {}), config_error);
}

TEST_CASE("assemble_windows counting, labels, and hand-indexed example") {
    BuildingStatic b = make_static();
    std::vector<TimeSeriesRecord> recs = {make_record(9, 21)};
    Standardizer s = fit_standardizer(recs, {b});

    // length n+1 -> exactly one sample
    auto one = assemble_windows(recs[0], b, s, 8);
    CHECK(one.size() == 1);
    CHECK(one[0].target_index == 8);
    CHECK(one[0].past.shape() == std::vector<std::size_t>{8, 2 * kRawChannels});
    CHECK(one[0].future.shape() == std::vector<std::size_t>{kCalendarFutureDim});

    // constant indoor temperature -> all deltas zero
    TimeSeriesRecord flat = make_record(20, 22);
    for (auto& v : flat.t_in) v = 21.5;
    auto fw = assemble_windows(flat, b, fit_standardizer({flat}, {b}), 4);
    CHECK(fw.size() == 16);
    for (const auto& w : fw) {
        CHECK(w.target_delta == 0.0);
        CHECK(w.t_prev == 21.5);
    }

    // t_in = [20,21,23], n=2 -> single sample, t_prev 21, delta 2
    TimeSeriesRecord tiny = make_record(3, 23);
    tiny.t_in = {20, 21, 23};
    auto tw = assemble_windows(tiny, b, fit_standardizer({tiny}, {b}), 2);
    REQUIRE(tw.size() == 1);
    CHECK(tw[0].t_prev == 21.0);
    CHECK(tw[0].target_delta == 2.0);

    CHECK_THROWS_AS(assemble_windows(tiny, b, s, 3), data_error);
    CHECK_THROWS_AS(assemble_windows(tiny, b, s, 1), config_error);
}

TEST_CASE("assemble_windows: no value at index >= t leaks into the sample inputs") {
    BuildingStatic b = make_static();
    TimeSeriesRecord rec = make_record(40, 31);
    Standardizer s = fit_standardizer({rec}, {b});
    std::size_t n = 8;
    auto base = assemble_windows(rec, b, s, n);

    std::mt19937_64 rng(77);
    std::uniform_int_distribution<std::size_t> pick_sample(0, base.size() - 1);
    std::uniform_real_distribution<double> bump(0.5, 5.0);
    for (int trial = 0; trial < 30; ++trial) {
        std::size_t si = pick_sample(rng);
        std::size_t t = base[si].target_index;
        TimeSeriesRecord mutated = rec;
        std::uniform_int_distribution<std::size_t> pick_idx(t, rec.size() - 1);
        std::size_t idx = pick_idx(rng);
        std::size_t ch = trial % kRawChannels;
        switch (ch) {
            case 0: mutated.t_in[idx] += bump(rng); break;
            case 1: mutated.t_out[idx] += bump(rng); break;
            case 2: mutated.solar[idx] += bump(rng); break;
            case 3: mutated.q_hvac[idx] += bump(rng); break;
            case 4: mutated.q_occ[idx] += bump(rng); break;
        }
        auto again = assemble_windows(mutated, b, s, n);
        CHECK(samples_inputs_identical(base[si], again[si]));
    }
}

TEST_CASE("assemble_windows with future weather reads the target-time forecast") {
    BuildingStatic b = make_static();
    TimeSeriesRecord rec = make_record(20, 41);
    Standardizer s = fit_standardizer({rec}, {b});
    auto w = assemble_windows(rec, b, s, 6, true);
    REQUIRE(!w.empty());
    CHECK(w[0].future.shape() == std::vector<std::size_t>{kCalendarFutureDim + 2});
    std::size_t t = w[0].target_index;
    CHECK(w[0].future.data()[4] == s.raw(1, rec.t_out[t]));
    CHECK(w[0].future.data()[5] == s.raw(2, rec.solar[t]));

    TimeSeriesRecord mutated = rec;
    mutated.t_out[t] += 3.0;
    auto w2 = assemble_windows(mutated, b, s, 6, true);
    CHECK_FALSE(samples_inputs_identical(w[0], w2[0]));
}

TEST_CASE("assemble_windows is deterministic and order preserving") {
    BuildingStatic b = make_static();
    TimeSeriesRecord rec = make_record(50, 51);
    Standardizer s = fit_standardizer({rec}, {b});
    auto a1 = assemble_windows(rec, b, s, 10);
    auto a2 = assemble_windows(rec, b, s, 10);
    REQUIRE(a1.size() == a2.size());
    for (std::size_t i = 0; i < a1.size(); ++i) {
        CHECK(samples_inputs_identical(a1[i], a2[i]));
        CHECK(a1[i].target_delta == a2[i].target_delta);
        if (i > 0) CHECK(a1[i].target_index == a1[i - 1].target_index + 1);
    }
    CHECK(a1.front().target_index == 10);
    CHECK(a1.back().target_index == rec.size() - 1);
}

TEST_CASE("derivative channels in the past block match the window slice scheme") {
    BuildingStatic b = make_static();
    TimeSeriesRecord rec = make_record(30, 61);
    Standardizer s = fit_standardizer({rec}, {b});
    std::size_t n = 6;
    auto w = assemble_windows(rec, b, s, n);
    const auto& sample = w[3];
    std::size_t t = sample.target_index;
    std::size_t f = 2 * kRawChannels;
    for (std::size_t c = 0; c < kRawChannels; ++c) {
        auto d = window_derivative(rec.channel(c), t - n, n, 1.0);
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(sample.past.data()[i * f + c] == s.raw(c, rec.channel(c)[t - n + i]));
            CHECK(sample.past.data()[i * f + kRawChannels + c] == s.deriv(c, d[i]));
        }
    }
}

TEST_CASE("standardizer JSON round trip") {
    std::vector<TimeSeriesRecord> recs = {make_record(24, 71)};
    Standardizer s = fit_standardizer(recs, {make_static()});
    Standardizer t = Standardizer::from_json(s.to_json());
    CHECK(t.raw_mean == s.raw_mean);
    CHECK(t.raw_std == s.raw_std);
    CHECK(t.deriv_mean == s.deriv_mean);
    CHECK(t.deriv_std == s.deriv_std);
    CHECK(t.static_mean == s.static_mean);
    CHECK(t.static_std == s.static_std);
    CHECK_THROWS_AS(Standardizer::from_json("{oops"), data_error);
    CHECK_THROWS_AS(Standardizer::from_json("{\"raw_mean\": [1]}"), data_error);
}

TEST_CASE("building statics JSON round trip and error reporting") {
    std::map<std::string, BuildingStatic> m;
    m["b1"] = make_static();
    m["b2"] = make_static();
    m["b2"].floor_area = 99.5;
    auto text = statics_to_json(m);
    auto parsed = parse_statics_json(text);
    REQUIRE(parsed.size() == 2);
    CHECK(parsed["b1"].floor_area == 150.0);
    CHECK(parsed["b2"].floor_area == 99.5);
    CHECK(parsed["b2"].wwr == 0.25);

    CHECK_THROWS_AS(parse_statics_json("[1,2]"), data_error);
    CHECK_THROWS_AS(parse_statics_json("{\"x\": {\"floor_area\": 10}}"), data_error);
    CHECK_THROWS_AS(
        parse_statics_json(
            "{\"x\": {\"floor_area\": -10, \"aspect_ratio\": 1, \"wwr\": 0.2, \"wall_r\": 1, "
            "\"roof_r\": 1, \"internal_gain_density\": 2}}"),
        data_error);
}
