#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <set>

#include <json.hpp>

#include "thermoformer/common.hpp"
#include "thermoformer/datagen.hpp"
#include "thermoformer/evaluation.hpp"
#include "thermoformer/model.hpp"

using namespace thermoformer;
using ad::Tensor;
namespace fs = std::filesystem;

namespace {

BuildingStatic reference_statics(double area) {
    BuildingStatic s;
    s.floor_area = area;
    s.aspect_ratio = 1.0;
    s.wwr = 0.25;
    s.wall_r = 2.0;
    s.roof_r = 4.0;
    s.internal_gain_density = 5.0;
    return s;
}

// Two buildings x HVAC modes {1,2} in one climate; exactly 100 windows per
// record at context 6 when hours = 106.
struct EvalFixture {
    std::vector<TimeSeriesRecord> records;
    std::map<std::string, BuildingStatic> statics;
    Standardizer std_;
    SplitSpec spec;

    explicit EvalFixture(std::size_t hours = 106, const std::vector<int>& modes = {1, 2}) {
        ClimateProfile climate = ClimateProfile::preset("hot_humid");
        statics["b1"] = reference_statics(120.0);
        statics["b2"] = reference_statics(220.0);
        for (const std::string id : {"b1", "b2"}) {
            RcBuilding b = make_rc_building(id, statics[id], 20.0, 24.0);
            for (int mode : modes) {
                records.push_back(simulate(b, climate, mode, hours, id == "b1" ? 11 : 22));
            }
        }
        std::vector<TimeSeriesRecord> train_records;
        std::vector<BuildingStatic> train_statics;
        for (const auto& r : records) {
            if (r.hvac_mode != 1 && r.building_id == "b1") train_records.push_back(r);
        }
        train_statics.push_back(statics["b1"]);
        std_ = fit_standardizer(train_records, train_statics);
        spec.test_mode = 1;
        spec.val_fraction = 0.10;
        spec.seed = 7;
        spec.context_hours = 6;
        spec.train_buildings = {"b1"};
    }
};

void truncate_record(TimeSeriesRecord& rec, std::size_t k) {
    rec.timestamps.resize(k);
    rec.t_in.resize(k);
    rec.t_out.resize(k);
    rec.solar.resize(k);
    rec.q_hvac.resize(k);
    rec.q_occ.resize(k);
}

Predictor perfect_oracle() {
    return [](const WindowSample& w) { return w.t_prev + w.target_delta; };
}

// A sample whose temperature delta is an exact linear function of every
// flattened feature (30 past + 6 static + 4 future) plus a bias.
WindowSample fabricate_linear_sample(std::mt19937_64& rng, const std::vector<double>& w_true,
                                     double bias) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> past(3 * 10), stat(6), fut(4);
    for (auto& v : past) v = u(rng);
    for (auto& v : stat) v = u(rng);
    for (auto& v : fut) v = u(rng);
    WindowSample w;
    w.past = Tensor({3, 10}, past);
    w.static_feats = Tensor({6}, stat);
    w.future = Tensor({4}, fut);
    w.t_prev = 20.0 + u(rng);
    double delta = bias;
    std::size_t i = 0;
    for (double v : past) delta += w_true[i++] * v;
    for (double v : stat) delta += w_true[i++] * v;
    for (double v : fut) delta += w_true[i++] * v;
    w.target_delta = delta;
    return w;
}

}  // namespace

TEST_CASE("rmse: exact values and contracts") {
    CHECK(rmse({21.0, 23.0}, {21.0, 23.0}) == 0.0);
    CHECK(rmse({21.0, 23.0}, {20.0, 24.0}) == 1.0);  // sqrt((1+1)/2)
    // Invariance under a joint permutation of both vectors.
    std::vector<double> pred = {1.5, -2.0, 3.25, 7.0};
    std::vector<double> truth = {1.0, -1.0, 3.0, 9.5};
    std::vector<double> pred_rev(pred.rbegin(), pred.rend());
    std::vector<double> truth_rev(truth.rbegin(), truth.rend());
    CHECK(rmse(pred, truth) == doctest::Approx(rmse(pred_rev, truth_rev)).epsilon(1e-15));
    CHECK_THROWS_AS(rmse({}, {}), config_error);
    CHECK_THROWS_AS(rmse({1.0}, {1.0, 2.0}), config_error);
}

TEST_CASE("mape: exact values and the small-denominator guard") {
    CHECK(mape({20.0}, {20.0}).value == 0.0);
    CHECK(mape({22.0}, {20.0}).value == 10.0);
    CHECK(mape({19.0, 21.0}, {20.0, 20.0}).value == 5.0);
    MapeResult guarded = mape({1.0, 22.0}, {0.05, 20.0});
    CHECK(guarded.excluded == 1);
    CHECK(guarded.value == 10.0);  // only the valid term contributes
    MapeResult all_excluded = mape({1.0, 2.0}, {0.0, 0.099});
    CHECK(all_excluded.excluded == 2);
    CHECK(std::isnan(all_excluded.value));
    CHECK_THROWS_AS(mape({}, {}), config_error);
    CHECK_THROWS_AS(mape({1.0}, {1.0, 2.0}), config_error);
}

TEST_CASE("split spec validation") {
    SplitSpec s;
    s.train_buildings = {"a"};
    CHECK_NOTHROW(s.validate());
    s.test_mode = 0;
    CHECK_THROWS_AS(s.validate(), config_error);
    s = SplitSpec{};
    s.val_fraction = 0.0;
    CHECK_THROWS_AS(s.validate(), config_error);
    s.val_fraction = 1.0;
    CHECK_THROWS_AS(s.validate(), config_error);
    s = SplitSpec{};
    s.context_hours = 1;
    CHECK_THROWS_AS(s.validate(), config_error);
    s = SplitSpec{};
    s.train_buildings = {"a", "a"};
    CHECK_THROWS_AS(s.validate(), config_error);
}

TEST_CASE("splits: held-out mode goes to test, 10% of training windows to validation") {
    EvalFixture fx;
    Splits s = make_splits(fx.records, fx.spec);

    // Test split: every window of every mode-1 record, across both buildings.
    CHECK(s.test.size() == 200);  // 2 buildings x 100 windows
    for (const WindowRef& r : s.test) {
        CHECK(fx.records[r.record_index].hvac_mode == 1);
    }
    // 100 windows at fraction 0.10: exactly 10 validation windows per record.
    CHECK(s.validation.size() == 10);  // only b1 mode 2 trains
    CHECK(s.train.size() == 90);
    for (const WindowRef& r : s.train) {
        CHECK(fx.records[r.record_index].building_id == "b1");
        CHECK(fx.records[r.record_index].hvac_mode == 2);
    }
    CHECK(s.warnings.empty());
}

TEST_CASE("splits: disjoint, deterministic, seed-sensitive") {
    EvalFixture fx;
    Splits a = make_splits(fx.records, fx.spec);

    std::set<std::pair<std::size_t, std::size_t>> seen;
    auto collect = [&](const std::vector<WindowRef>& refs) {
        for (const WindowRef& r : refs) {
            CHECK(seen.insert({r.record_index, r.target_index}).second);  // no duplicates
        }
    };
    collect(a.train);
    collect(a.validation);
    collect(a.test);
    CHECK(seen.size() == a.train.size() + a.validation.size() + a.test.size());

    Splits b = make_splits(fx.records, fx.spec);
    CHECK(a.train == b.train);
    CHECK(a.validation == b.validation);
    CHECK(a.test == b.test);

    SplitSpec other = fx.spec;
    other.seed = 8;
    Splits c = make_splits(fx.records, other);
    CHECK(a.validation != c.validation);
    CHECK(a.test == c.test);  // test membership does not depend on the seed
}

TEST_CASE("splits: short records force one validation window with a warning") {
    EvalFixture fx;
    TimeSeriesRecord short_rec = fx.records[1];  // b1 mode 2
    truncate_record(short_rec, 10);                   // 4 windows at context 6
    std::vector<TimeSeriesRecord> recs = {fx.records[0], short_rec};
    Splits s = make_splits(recs, fx.spec);
    CHECK(s.validation.size() == 1);
    CHECK(s.train.size() == 3);
    REQUIRE(s.warnings.size() == 1);
    CHECK(s.warnings[0].find("forcing one validation window") != std::string::npos);

    // A record with no complete window at all is skipped with a warning.
    truncate_record(short_rec, 5);
    recs = {fx.records[0], short_rec};
    Splits t = make_splits(recs, fx.spec);
    CHECK(t.train.empty());
    CHECK(t.validation.empty());
    CHECK(t.test.size() == 100);
    REQUIRE(t.warnings.size() == 1);
    CHECK(t.warnings[0].find("too short") != std::string::npos);

    // Nothing usable anywhere: hard error.
    recs = {short_rec};
    CHECK_THROWS_AS(make_splits(recs, fx.spec), config_error);
}

TEST_CASE("splits: missing held-out mode only warns") {
    EvalFixture fx;
    std::vector<TimeSeriesRecord> recs;
    for (const auto& r : fx.records) {
        if (r.hvac_mode != 1) recs.push_back(r);
    }
    Splits s = make_splits(recs, fx.spec);
    CHECK(s.test.empty());
    CHECK(!s.train.empty());
    REQUIRE(!s.warnings.empty());
    CHECK(s.warnings[0].find("test split is empty") != std::string::npos);
}

TEST_CASE("nested building subsets are prefixes of one deterministic shuffle") {
    std::vector<std::string> all = {"a", "b", "c", "d", "e", "f", "g", "h"};
    auto subsets = nested_building_subsets(all, {1, 2, 4, 8}, 42);
    REQUIRE(subsets.size() == 4);
    for (std::size_t i = 0; i < subsets.size(); ++i) {
        CHECK(subsets[i].size() == std::vector<std::size_t>{1, 2, 4, 8}[i]);
        if (i > 0) {
            for (const std::string& id : subsets[i - 1]) {
                CHECK(std::count(subsets[i].begin(), subsets[i].end(), id) == 1);
            }
        }
    }
    CHECK(subsets.back() == all);  // size 8 is the full (sorted) set

    auto again = nested_building_subsets(all, {1, 2, 4, 8}, 42);
    CHECK(again == subsets);
    auto other = nested_building_subsets(all, {1, 2, 4, 8}, 43);
    CHECK(other != subsets);

    CHECK_THROWS_AS(nested_building_subsets({}, {1}, 0), config_error);
    CHECK_THROWS_AS(nested_building_subsets(all, {}, 0), config_error);
    CHECK_THROWS_AS(nested_building_subsets(all, {2, 2}, 0), config_error);
    CHECK_THROWS_AS(nested_building_subsets(all, {0, 1}, 0), config_error);
    CHECK_THROWS_AS(nested_building_subsets(all, {1, 9}, 0), config_error);
    CHECK_THROWS_AS(nested_building_subsets({"a", "a"}, {1}, 0), config_error);
}

TEST_CASE("evaluation: a perfect oracle scores zero everywhere") {
    EvalFixture fx(1500);  // spans January through early March
    EvalReport rep = evaluate_with(perfect_oracle(), fx.std_, fx.records, fx.statics, fx.spec);

    REQUIRE(!rep.rows.empty());
    for (const MetricRow& row : rep.rows) {
        CHECK(row.rmse == 0.0);
        CHECK(row.mape == 0.0);
        CHECK(row.mape_excluded == 0);
    }
    CHECK(rep.pooled.at("test").rmse == 0.0);
    CHECK(rep.pooled.at("validation").rmse == 0.0);
    CHECK(rep.per_building_mean_rmse.at("test") == 0.0);

    // Every evaluated building appears exactly once per split (month-0 rows).
    std::map<std::string, std::vector<std::string>> by_split;
    for (const MetricRow& row : rep.rows) {
        if (row.month == 0) by_split[row.split].push_back(row.building_id);
    }
    CHECK(by_split.at("test") == std::vector<std::string>{"b1", "b2"});
    CHECK(by_split.at("validation") == std::vector<std::string>{"b1"});

    // Target flags: b1 trains, b2 does not.
    for (const MetricRow& row : rep.rows) {
        CHECK(row.is_target == (row.building_id == "b1"));
    }

    // Months cover exactly the simulated span (Jan 1 .. Mar 4).
    std::set<unsigned> months;
    std::size_t month_count_sum = 0, b1_test_count = 0;
    for (const MetricRow& row : rep.rows) {
        if (row.split == "test" && row.building_id == "b1") {
            if (row.month != 0) {
                months.insert(row.month);
                month_count_sum += row.count;
            } else {
                b1_test_count = row.count;
            }
        }
    }
    CHECK(months == std::set<unsigned>{1, 2, 3});
    CHECK(month_count_sum == b1_test_count);
    CHECK(b1_test_count == 1494);  // 1500 rows, context 6
    CHECK(rep.pooled.at("test").count == 2988);
}

TEST_CASE("evaluation: per-building metrics match the standalone metric functions") {
    EvalFixture fx;
    // Collect the exact prediction/truth stream per (split, building) with a
    // recording predictor, then compare against the report rows.
    std::map<std::string, std::vector<double>> preds, truths;
    bool in_test_phase = false;
    Splits s = make_splits(fx.records, fx.spec);
    Predictor recorder = [&](const WindowSample& w) {
        double p = w.t_prev + 0.5 * w.target_delta;  // deliberately imperfect
        std::string key = (in_test_phase ? "test:" : "val:") + w.building_id;
        preds[key].push_back(p);
        truths[key].push_back(w.t_prev + w.target_delta);
        return p;
    };
    // evaluate_with runs validation first, then test; flip the flag when the
    // recorded count reaches the validation size.
    std::size_t val_total = s.validation.size();
    std::size_t seen = 0;
    Predictor counting = [&](const WindowSample& w) {
        if (seen++ == val_total) in_test_phase = true;
        return recorder(w);
    };
    EvalReport rep = evaluate_with(counting, fx.std_, fx.records, fx.statics, fx.spec);
    for (const MetricRow& row : rep.rows) {
        if (row.month != 0) continue;
        std::string key = (row.split == "test" ? "test:" : "val:") + row.building_id;
        CHECK(row.rmse == rmse(preds.at(key), truths.at(key)));
        CHECK(row.mape == doctest::Approx(mape(preds.at(key), truths.at(key)).value).epsilon(1e-15));
        CHECK(row.count == preds.at(key).size());
    }
}

TEST_CASE("evaluation: unseen climates draw a zero-shot warning") {
    EvalFixture fx;
    EvalReport same = evaluate_with(perfect_oracle(), fx.std_, fx.records, fx.statics, fx.spec,
                                    {"hot_humid"});
    for (const std::string& w : same.warnings) {
        CHECK(w.find("zero-shot") == std::string::npos);
    }
    EvalReport cross = evaluate_with(perfect_oracle(), fx.std_, fx.records, fx.statics, fx.spec,
                                     {"cold"});
    bool flagged = false;
    for (const std::string& w : cross.warnings) {
        if (w.find("zero-shot") != std::string::npos &&
            w.find("hot_humid") != std::string::npos) {
            flagged = true;
        }
    }
    CHECK(flagged);
}

TEST_CASE("evaluation: equilibrium free-float record scores zero for persistence") {
    BuildingStatic s = reference_statics(100.0);
    RcBuilding b = make_rc_building("eq", s, 20.0, 24.0);
    SimOverrides ov;
    ov.initial_temp = 15.0;
    ov.constant_t_out = 15.0;
    ov.constant_solar = 0.0;
    ov.occupancy_fraction = 0.0;
    TimeSeriesRecord rec =
        simulate(b, ClimateProfile::preset("hot_humid"), 4, 120, 5, ov);

    SplitSpec spec;
    spec.test_mode = 4;  // the free-float record itself is the held-out data
    spec.context_hours = 6;
    EvalReport rep = evaluate_with([](const WindowSample& w) { return w.t_prev; },
                                   fit_standardizer({rec}, {s}), {rec}, {{"eq", s}}, spec);
    CHECK(rep.pooled.at("test").rmse == 0.0);  // at equilibrium every delta is 0
}

TEST_CASE("evaluation: contract violations") {
    EvalFixture fx;
    CHECK_THROWS_AS(
        evaluate_with(Predictor{}, fx.std_, fx.records, fx.statics, fx.spec), config_error);
    std::map<std::string, BuildingStatic> missing = {{"b1", fx.statics.at("b1")}};
    CHECK_THROWS_AS(evaluate_with(perfect_oracle(), fx.std_, fx.records, missing, fx.spec),
                    data_error);
    Predictor bad = [](const WindowSample&) { return std::nan(""); };
    CHECK_THROWS_AS(evaluate_with(bad, fx.std_, fx.records, fx.statics, fx.spec), numeric_error);
}

TEST_CASE("evaluation: checkpoint predictions with a zeroed head equal persistence") {
    EvalFixture fx;
    ModelConfig cfg;
    cfg.hidden_dim = 8;
    cfg.n_heads = 2;
    cfg.ffn_dim = 16;
    cfg.n_layers_past = 1;
    cfg.n_layers_future = 1;
    cfg.context_hours = 6;

    Checkpoint ck;
    ck.config = cfg;
    ck.params = init_params(cfg, 3);
    for (double& v : ck.params.head_w.data()) v = 0.0;
    for (double& v : ck.params.head_b.data()) v = 0.0;
    ck.standardizer = fx.std_;
    ck.meta["train_buildings"] = std::vector<std::string>{"b1"};
    ck.meta["train_climates"] = std::vector<std::string>{"hot_humid"};

    Dataset ds;
    ds.records = fx.records;
    ds.statics = fx.statics;

    SplitSpec spec = fx.spec;
    spec.train_buildings.clear();  // filled in from checkpoint metadata
    EvalReport rep = evaluate(ck, ds, spec);

    for (const MetricRow& row : rep.rows) {
        CHECK(row.is_target == (row.building_id == "b1"));
    }

    Splits s = make_splits(fx.records, fx.spec);
    auto windows = materialize_windows(fx.records, fx.statics, fx.std_, 6, s.test);
    std::vector<double> preds = baseline_predict(BaselineKind::persistence, {}, windows);
    std::vector<double> truths;
    for (const WindowSample& w : windows) truths.push_back(w.t_prev + w.target_delta);
    CHECK(rep.pooled.at("test").rmse == rmse(preds, truths));
    CHECK(rep.pooled.at("test").count == windows.size());
}

TEST_CASE("evaluation: never mutates the checkpoint") {
    EvalFixture fx;
    ModelConfig cfg;
    cfg.hidden_dim = 8;
    cfg.n_heads = 2;
    cfg.ffn_dim = 16;
    cfg.n_layers_past = 1;
    cfg.n_layers_future = 1;
    cfg.context_hours = 6;
    Checkpoint ck;
    ck.config = cfg;
    ck.params = init_params(cfg, 4);
    ck.standardizer = fx.std_;
    ck.meta = nlohmann::json::object();

    fs::path dir = fs::temp_directory_path() / "thermo_test_eval";
    fs::create_directories(dir);
    std::string before = (dir / "before.ckpt").string();
    std::string after = (dir / "after.ckpt").string();
    save_checkpoint(before, ck.config, ck.params, ck.standardizer, ck.meta);
    Dataset ds;
    ds.records = fx.records;
    ds.statics = fx.statics;
    SplitSpec spec = fx.spec;
    evaluate(ck, ds, spec);
    save_checkpoint(after, ck.config, ck.params, ck.standardizer, ck.meta);
    CHECK(hash_file(before) == hash_file(after));
    fs::remove_all(dir);
}

TEST_CASE("baselines: persistence returns the previous temperature verbatim") {
    EvalFixture fx;
    Splits s = make_splits(fx.records, fx.spec);
    auto windows = materialize_windows(fx.records, fx.statics, fx.std_, 6, s.test);
    std::vector<double> preds = baseline_predict(BaselineKind::persistence, {}, windows);
    REQUIRE(preds.size() == windows.size());
    for (std::size_t i = 0; i < windows.size(); ++i) {
        CHECK(preds[i] == windows[i].t_prev);
    }
    // Persistence error equals the magnitude of the true deltas.
    std::vector<double> truths, deltas, zeros;
    for (const WindowSample& w : windows) {
        truths.push_back(w.t_prev + w.target_delta);
        deltas.push_back(w.target_delta);
        zeros.push_back(0.0);
    }
    CHECK(rmse(preds, truths) == doctest::Approx(rmse(zeros, deltas)).epsilon(1e-12));
}

TEST_CASE("baselines: ridge regression recovers exact linear dynamics") {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    std::vector<double> w_true(40);
    for (auto& v : w_true) v = u(rng);
    const double bias = 0.125;

    std::vector<WindowSample> train, eval;
    for (int i = 0; i < 5000; ++i) train.push_back(fabricate_linear_sample(rng, w_true, bias));
    for (int i = 0; i < 200; ++i) eval.push_back(fabricate_linear_sample(rng, w_true, bias));

    std::vector<double> preds = baseline_predict(BaselineKind::linear_ar, train, eval);
    std::vector<double> truths;
    for (const WindowSample& w : eval) truths.push_back(w.t_prev + w.target_delta);
    CHECK(rmse(preds, truths) <= 1e-6);

    LinearModel model = fit_linear_ar(train);
    CHECK(model.ridge_used == 1e-3);
    CHECK(model.warnings.empty());
    REQUIRE(model.weights.size() == 41);
    for (std::size_t i = 0; i < 40; ++i) {
        CHECK(model.weights[i] == doctest::Approx(w_true[i]).epsilon(1e-4));
    }
    CHECK(model.weights[40] == doctest::Approx(bias).epsilon(1e-4));
}

TEST_CASE("baselines: singular systems retry with a larger ridge and warn") {
    std::mt19937_64 rng(100);
    std::vector<double> w_true(40, 0.0);
    w_true[0] = 0.3;
    w_true[5] = -0.2;
    std::vector<WindowSample> train;
    for (int i = 0; i < 300; ++i) {
        WindowSample w = fabricate_linear_sample(rng, w_true, 0.05);
        // Zero out the static features: six all-zero columns make the
        // unregularized normal equations exactly singular.
        for (double& v : w.static_feats.data()) v = 0.0;
        train.push_back(w);
    }
    LinearModel model = fit_linear_ar(train, 0.0);
    CHECK(model.ridge_used > 0.0);
    REQUIRE(!model.warnings.empty());
    CHECK(model.warnings[0].find("singular") != std::string::npos);
    // The fit still works: the target never depended on the zeroed columns.
    std::vector<double> preds, truths;
    for (const WindowSample& w : train) {
        preds.push_back(linear_ar_predict(model, w));
        truths.push_back(w.t_prev + w.target_delta);
    }
    CHECK(rmse(preds, truths) <= 1e-4);
}

TEST_CASE("baselines: contract violations") {
    CHECK_THROWS_AS(fit_linear_ar({}), config_error);
    CHECK_THROWS_AS(baseline_predict(BaselineKind::linear_ar, {}, {}), config_error);
    CHECK(baseline_from_string("persistence") == BaselineKind::persistence);
    CHECK(baseline_from_string("linear_ar") == BaselineKind::linear_ar);
    CHECK_THROWS_AS(baseline_from_string("lstm"), config_error);

    std::mt19937_64 rng(101);
    std::vector<double> w_true(40, 0.1);
    std::vector<WindowSample> train;
    for (int i = 0; i < 50; ++i) train.push_back(fabricate_linear_sample(rng, w_true, 0.0));
    LinearModel model = fit_linear_ar(train);
    WindowSample wide = train.front();
    wide.past = Tensor({4, 10}, std::vector<double>(40, 0.0));
    CHECK_THROWS_AS(linear_ar_predict(model, wide), config_error);
}

TEST_CASE("transfer: per-climate checkpoints evaluated on every climate's test split") {
    // Three climates, one building each, modes {1,2}.
    std::vector<TimeSeriesRecord> records;
    std::map<std::string, BuildingStatic> statics;
    std::map<std::string, Checkpoint> checkpoints;
    ModelConfig cfg;
    cfg.hidden_dim = 8;
    cfg.n_heads = 2;
    cfg.ffn_dim = 16;
    cfg.n_layers_past = 1;
    cfg.n_layers_future = 1;
    cfg.context_hours = 6;

    int seed = 31;
    for (const std::string climate : {"cold", "hot_humid", "marine"}) {
        std::string id = "bld_" + climate;
        BuildingStatic s = reference_statics(150.0);
        statics[id] = s;
        RcBuilding b = make_rc_building(id, s, 20.0, 24.0);
        std::vector<TimeSeriesRecord> own;
        for (int mode : {1, 2}) {
            own.push_back(simulate(b, ClimateProfile::preset(climate), mode, 200, seed));
        }
        records.insert(records.end(), own.begin(), own.end());
        Checkpoint ck;
        ck.config = cfg;
        ck.params = init_params(cfg, seed);
        ck.standardizer = fit_standardizer({own[1]}, {s});
        ck.meta = nlohmann::json::object();
        checkpoints[climate] = std::move(ck);
        ++seed;
    }

    TransferMatrix m = transfer_matrix(checkpoints, records, statics, 1, true);
    CHECK(m.columns == std::vector<std::string>{"cold", "hot_humid", "marine"});
    REQUIRE(m.rows.size() == 4);  // 3 climates + persistence
    CHECK(m.rows[3] == "persistence");
    for (const auto& row : m.cells) {
        REQUIRE(row.size() == 3);
        for (const auto& cell : row) {
            REQUIRE(cell.has_value());
            CHECK(*cell >= 0.0);
            CHECK(std::isfinite(*cell));
        }
    }

    // Diagonal consistency: the in-domain cell equals the single-climate
    // evaluation result for the same checkpoint.
    Dataset cold_ds;
    for (const auto& r : records) {
        if (r.climate == "cold") cold_ds.records.push_back(r);
    }
    cold_ds.statics = statics;
    SplitSpec spec;
    spec.context_hours = 6;
    EvalReport rep = evaluate(checkpoints.at("cold"), cold_ds, spec);
    CHECK(*m.cells[0][0] == rep.pooled.at("test").rmse);

    // Persistence row matches a direct computation per evaluation climate.
    for (std::size_t c = 0; c < m.columns.size(); ++c) {
        std::vector<TimeSeriesRecord> recs;
        for (const auto& r : records) {
            if (r.climate == m.columns[c] && r.hvac_mode == 1) recs.push_back(r);
        }
        SplitSpec sp;
        sp.context_hours = 6;
        Splits s = make_splits(recs, sp);
        auto windows = materialize_windows(recs, statics, checkpoints.at("cold").standardizer, 6,
                                           s.test);
        std::vector<double> preds, truths;
        for (const WindowSample& w : windows) {
            preds.push_back(w.t_prev);
            truths.push_back(w.t_prev + w.target_delta);
        }
        CHECK(*m.cells[3][c] == doctest::Approx(rmse(preds, truths)).epsilon(1e-15));
    }

    // Missing checkpoint: the row exists but every cell is absent.
    checkpoints.erase("marine");
    TransferMatrix partial = transfer_matrix(checkpoints, records, statics, 1, false);
    REQUIRE(partial.rows.size() == 3);
    for (const auto& cell : partial.cells[2]) CHECK(!cell.has_value());
    for (const auto& cell : partial.cells[0]) CHECK(cell.has_value());

    std::string csv = transfer_to_csv(partial);
    CHECK(csv.find("train_climate,eval_cold,eval_hot_humid,eval_marine") == 0);
    CHECK(csv.find("marine,,,") != std::string::npos);  // absent cells stay empty

    // Fewer than two climates is a configuration error.
    std::vector<TimeSeriesRecord> single;
    for (const auto& r : records) {
        if (r.climate == "cold") single.push_back(r);
    }
    CHECK_THROWS_AS(transfer_matrix(checkpoints, single, statics, 1, false), config_error);
}

TEST_CASE("reports: JSON and CSV serializations") {
    EvalFixture fx;
    Predictor half = [](const WindowSample& w) { return w.t_prev + 0.5 * w.target_delta; };
    EvalReport rep = evaluate_with(half, fx.std_, fx.records, fx.statics, fx.spec);

    nlohmann::json j = nlohmann::json::parse(report_to_json(rep));
    CHECK(j.at("pooled").at("test").at("rmse").get<double>() ==
          rep.pooled.at("test").rmse);
    CHECK(j.at("pooled").at("validation").at("count").get<std::size_t>() ==
          rep.pooled.at("validation").count);
    CHECK(j.at("per_building_mean_rmse").at("test").get<double>() ==
          rep.per_building_mean_rmse.at("test"));
    std::size_t month0_rows = 0;
    for (const MetricRow& row : rep.rows) {
        if (row.month == 0) ++month0_rows;
    }
    CHECK(j.at("buildings").size() == month0_rows);
    for (const auto& b : j.at("buildings")) {
        CHECK(b.contains("months"));
        CHECK(b.at("months").size() >= 1);
    }

    std::string csv = report_to_csv(rep);
    CHECK(csv.find("building_id,climate,split,month,rmse,mape,is_target\n") == 0);
    std::size_t lines = std::count(csv.begin(), csv.end(), '\n');
    CHECK(lines == rep.rows.size() + 1);
    CHECK(csv.find(",test,0,") != std::string::npos);
    CHECK(csv.find(",1\n") != std::string::npos);  // target flag column
}
