#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "../fixtures.hpp"
#include "qpm/conformal.hpp"
#include "qpm/error.hpp"
#include "qpm/jsonutil.hpp"

using namespace qpm;

namespace {

std::vector<double> one_to(int n) {
    std::vector<double> v(static_cast<std::size_t>(n));
    std::iota(v.begin(), v.end(), 1.0);
    return v;
}

PredictionInterval iv(double lo, double hi) {
    PredictionInterval p;
    p.lo = lo;
    p.hi = hi;
    return p;
}

// Trajectories (n=1, H=1) whose single value is the robustness of "x0 > 0".
class ListSurrogate final : public Surrogate {
public:
    explicit ListSurrogate(std::vector<double> values) : v_(std::move(values)) {}
    std::size_t state_dim() const override { return 1; }
    std::size_t horizon() const override { return 1; }
    std::string id() const override { return "list"; }
    TrajectoryBatch sample(std::span<const double>, std::size_t k, std::uint64_t, Exec) const override {
        TrajectoryBatch b(k, 1, 1);
        for (std::size_t j = 0; j < k; ++j) b.mutable_trajectory(j)[0] = v_[j % v_.size()];
        return b;
    }

private:
    std::vector<double> v_;
};

// Mode 1 for values up to 20, mode 2 above.
class SplitPredictor final : public ModePredictor {
public:
    int mode_count() const override { return 2; }
    int predict(TrajectoryView s) const override { return s.at(0, 0) <= 20 ? 1 : 2; }
    std::string id() const override { return "split"; }
};

// Exact labels, but claims an extra mode that never occurs.
class PaddedPredictor final : public ModePredictor {
public:
    explicit PaddedPredictor(Scenario sc) : sc_(std::move(sc)) {}
    int mode_count() const override { return sc_.mode_count() + 1; }
    int predict(TrajectoryView s) const override { return sc_.exact_mode(s); }
    std::string id() const override { return "padded"; }

private:
    Scenario sc_;
};

}  // namespace

TEST_CASE("empirical quantile convention") {
    CHECK(empirical_quantile(one_to(10), 0.95) == 10);
    CHECK(empirical_quantile(one_to(10), 0.05) == 1);
    CHECK(empirical_quantile({4, 4, 4}, 0.3) == 4);
    CHECK(empirical_quantile(one_to(100), 0.95) == 95);
    CHECK(empirical_quantile(one_to(100), 0.05) == 5);
    CHECK(empirical_quantile(one_to(7), 0.0) == 1);
    CHECK(empirical_quantile(one_to(7), 1.0) == 7);
    CHECK(empirical_quantile({3, 1, 2}, 0.5) == 2);
    CHECK_THROWS_AS(empirical_quantile({}, 0.5), DomainError);
    CHECK_THROWS_AS(empirical_quantile({1.0}, 1.5), DomainError);
}

TEST_CASE("mode prediction interval") {
    auto values = one_to(20);
    for (int i = 0; i < 5; ++i) values.push_back(100 + i);  // mode 2
    const ListSurrogate sur(values);
    const SplitPredictor pred;
    const auto phi = stl::parse_formula("x0 > 0", 1);
    const State s0{0.0};
    const auto pi = mode_prediction_interval(sur, pred, s0, phi, 1, 0.1, values.size(), 1);
    CHECK(pi.lo == 1);
    CHECK(pi.hi == 19);
    CHECK(pi.k_mode == 20);
    CHECK_FALSE(pi.degenerate);

    const ListSurrogate low(one_to(20));
    const auto none = mode_prediction_interval(low, pred, s0, phi, 2, 0.1, 20, 1);
    CHECK(none.degenerate);
    CHECK(none.k_mode == 0);
    CHECK(none.lo == -kInf);
    CHECK(none.hi == kInf);

    const ListSurrogate flat({7.5});
    const auto c = mode_prediction_interval(flat, pred, s0, phi, 1, 0.1, 30, 1);
    CHECK(c.lo == 7.5);
    CHECK(c.hi == 7.5);

    const auto deep = stl::parse_formula("F[0,3] x0 > 0", 1);
    CHECK_THROWS_AS(mode_prediction_interval(flat, pred, s0, deep, 1, 0.1, 30, 1), HorizonError);
}

TEST_CASE("nonconformity score") {
    CHECK(nonconformity_score(iv(2, 5), 6) == 1);
    CHECK(nonconformity_score(iv(2, 5), 3) == -1);
    CHECK(nonconformity_score(iv(2, 5), 2) == 0);
    CHECK(nonconformity_score(PredictionInterval{}, 3) == -kInf);
    CHECK_THROWS_AS(nonconformity_score(iv(2, 5), std::nan("")), DomainError);
}

TEST_CASE("calibrate threshold") {
    auto s = one_to(19);
    std::reverse(s.begin(), s.end());
    CHECK(calibrate_threshold(s, 0.1) == 18);
    CHECK(calibrate_threshold(one_to(5), 0.1) == kInf);
    CHECK(calibrate_threshold(std::vector<double>(19, 0.0), 0.1) == 0);
    CHECK(calibrate_threshold({}, 0.1) == kInf);
    CHECK_THROWS_AS(calibrate_threshold(one_to(5), 1.0), ConfigError);

    SUBCASE("degeneracy law") {
        for (double alpha : {0.05, 0.1, 0.2, 0.33, 0.5})
            for (std::size_t n = 0; n <= 60; ++n) {
                std::vector<double> sc(n);
                std::iota(sc.begin(), sc.end(), -3.0);
                const double r = std::ceil((n + 1) * (1 - alpha) - 1e-9);
                CHECK((calibrate_threshold(sc, alpha) == kInf) == (r > static_cast<double>(n)));
            }
    }
    SUBCASE("monotone in scores and alpha") {
        Rng rng(8);
        for (int trial = 0; trial < 300; ++trial) {
            const std::size_t n = 1 + rng.below(40);
            std::vector<double> sc(n);
            for (auto& v : sc) v = rng.normal();
            const double alpha = rng.uniform(0.02, 0.6);
            const double tau = calibrate_threshold(sc, alpha);
            auto up = sc;
            up[rng.below(n)] += std::abs(rng.normal());
            CHECK(calibrate_threshold(up, alpha) >= tau);
            CHECK(calibrate_threshold(sc, std::min(alpha + 0.1, 0.99)) <= tau);
        }
    }
}

TEST_CASE("conformalized interval") {
    auto a = conformalized_interval(iv(2, 5), 1);
    CHECK(a.lo == 1);
    CHECK(a.hi == 6);
    a = conformalized_interval(iv(2, 5), -0.5);
    CHECK(a.lo == 2.5);
    CHECK(a.hi == 4.5);
    a = conformalized_interval(iv(2, 5), kInf);
    CHECK(a.lo == -kInf);
    CHECK(a.hi == kInf);
    CHECK(a.degenerate);
    a = conformalized_interval(iv(2, 5), -2);
    CHECK(a.collapsed);
    CHECK(a.lo == 3.5);
    CHECK(a.hi == 3.5);
    CHECK_FALSE(a.contains(3.5));
    a = conformalized_interval(PredictionInterval{}, -1);
    CHECK(a.degenerate);
    CHECK(a.lo == -kInf);
}

TEST_CASE("interval union") {
    std::vector<PredictionInterval> v{iv(0, 2), iv(1, 4), iv(6, 7)};
    CHECK(interval_union(v) == std::vector<Segment>{{0, 4}, {6, 7}});
    v.push_back(PredictionInterval{});
    CHECK(interval_union(v) == std::vector<Segment>{{-kInf, kInf}});
    auto col = iv(10, 10);
    col.collapsed = true;
    CHECK(interval_union(std::vector<PredictionInterval>{iv(0, 1), col}) == std::vector<Segment>{{0, 1}});
    CHECK(interval_union(std::vector<PredictionInterval>{iv(0, 1), iv(1, 2)}) == std::vector<Segment>{{0, 2}});
}

TEST_CASE("calibration record round trip") {
    CalibrationRecord r;
    r.alpha = 0.1;
    r.property = "phi";
    r.formula = "x0 > 0";
    r.surrogate_id = "s";
    r.predictor_id = "p";
    r.k = 10;
    r.seed = 3;
    r.modes = {{1, 3, 0.25, {-kInf, 0.1, 0.25}}, {2, 0, kInf, {}}};
    CHECK(CalibrationRecord::from_json(r.to_json()) == r);
    const auto elided = CalibrationRecord::from_json(r.to_json(2));
    CHECK(elided.modes[0].scores.empty());
    CHECK(elided.modes[0].n == 3);
    CHECK(elided.modes[0].tau == 0.25);
    CHECK(json_number(kInf) == "inf");
    CHECK(number_from_json(json_number(-kInf)) == -kInf);
}

namespace {

struct SignalSetup {
    Scenario sc{ScenarioId::signal};
    Dataset pool = generate_split(sc, Split::train, 1000, 1, 31);
    std::shared_ptr<const Surrogate> sur = std::make_shared<ResampleSurrogate>(pool, 100);
    Dataset cal = generate_split(sc, Split::calibration, 40, 10, 31);
    stl::Formula phi = sc.default_property();
};

}  // namespace

TEST_CASE("single-mode pipeline equals the dedicated baseline") {
    const SignalSetup s;
    const auto mon = build_monitor(s.sur, std::make_shared<SingleModePredictor>(), s.cal, s.phi, "phi", 0.1, 50, 9);
    const double tau = baseline::threshold(*s.sur, s.cal, s.phi, 0.1, 50, 9);
    CHECK(std::bit_cast<std::uint64_t>(mon.record().modes[0].tau) == std::bit_cast<std::uint64_t>(tau));
    CHECK(mon.record().modes[0].scores == baseline::scores(*s.sur, s.cal, s.phi, 0.1, 50, 9));
    for (double x : {5.0, 11.0, 17.5}) {
        const State s0{x};
        const auto r = mon.monitor(s0, 77);
        const auto b = baseline::interval(*s.sur, s0, s.phi, 0.1, tau, 50, 77);
        CHECK(std::bit_cast<std::uint64_t>(r.intervals[0].lo) == std::bit_cast<std::uint64_t>(b.lo));
        CHECK(std::bit_cast<std::uint64_t>(r.intervals[0].hi) == std::bit_cast<std::uint64_t>(b.hi));
        CHECK(r.intervals[0].collapsed == b.collapsed);
    }
}

TEST_CASE("monitor composition, determinism and absent modes") {
    const SignalSetup s;
    auto pred = std::make_shared<ExactPredictor>(s.sc);
    const auto a = build_monitor(s.sur, pred, s.cal, s.phi, "phi", 0.1, 50, 9, Exec::serial);
    const auto b = build_monitor(s.sur, pred, s.cal, s.phi, "phi", 0.1, 50, 9, Exec::parallel);
    CHECK(a.record() == b.record());
    std::size_t total = 0;
    for (const auto& m : a.record().modes) total += m.n;
    CHECK(total == s.cal.size());

    const State s0{12.0};
    const auto r = monitor_state(a, s0, 5);
    REQUIRE(r.intervals.size() == 3);
    for (int g = 1; g <= 3; ++g) {
        const auto raw = mode_prediction_interval(*s.sur, *pred, s0, s.phi, g, 0.1, 50, 5);
        auto expect = conformalized_interval(raw, a.record().modes[static_cast<std::size_t>(g - 1)].tau);
        expect.cal_size = r.intervals[static_cast<std::size_t>(g - 1)].cal_size;
        CHECK(r.intervals[static_cast<std::size_t>(g - 1)] == expect);
    }
    CHECK(r.segments == interval_union(r.intervals));
    const auto lines = to_jsonl(r);
    CHECK(std::count(lines.begin(), lines.end(), '\n') == 3);

    const auto padded = build_monitor(s.sur, std::make_shared<PaddedPredictor>(s.sc), s.cal, s.phi, "phi", 0.1, 50, 9);
    CHECK(padded.record().modes[3].n == 0);
    CHECK(padded.record().modes[3].tau == kInf);
    const auto pr = padded.monitor(s0, 5);
    CHECK(pr.intervals[3].degenerate);
    CHECK(pr.segments == std::vector<Segment>{{-kInf, kInf}});
}

TEST_CASE("sample cache") {
    const SignalSetup s;
    auto pred = std::make_shared<ExactPredictor>(s.sc);
    const auto mon = build_monitor(s.sur, pred, s.cal, s.phi, "phi", 0.1, 50, 9);
    const auto dir = std::filesystem::temp_directory_path() / "qpm_test_cache";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    const State s0{9.0};
    {
        SampleCache cache(dir);
        const auto first = mon.monitor(s0, 4, Exec::parallel, &cache);
        const auto second = mon.monitor(s0, 4, Exec::parallel, &cache);
        CHECK(cache.misses() == 1);
        CHECK(cache.hits() == 1);
        CHECK(first.intervals == second.intervals);
        // A different property reuses the same trajectories.
        const auto other = stl::parse_formula("G[0,44] (x0 >= 0)", 1);
        const auto x = cache.get(*s.sur, s0, 50, 4);
        CHECK(cache.hits() == 2);
        CHECK(x == s.sur->sample(s0, 50, 4));
        CHECK(stl::robustness_batch(other, x).size() == 50);
    }
    SampleCache fresh(dir);
    fresh.get(*s.sur, s0, 50, 4);
    CHECK(fresh.hits() == 1);
    CHECK(fresh.misses() == 0);
    std::filesystem::remove_all(dir);
}

TEST_CASE("true-law surrogate gives threshold near zero") {
    const fixtures::RegressionToy toy;
    const auto phi = stl::parse_formula(fixtures::RegressionToy::kFormula, 2);
    const auto cal = toy.dataset(1000, 1, 3);
    auto sur = std::make_shared<fixtures::RegressionToy>();
    const auto mon = build_monitor(sur, std::make_shared<SingleModePredictor>(), cal, phi, "y", 0.1, 2000, 4);
    const auto& scores = mon.record().modes[0].scores;
    const double spread = empirical_quantile(scores, 0.92) - empirical_quantile(scores, 0.88);
    CHECK(std::abs(mon.record().modes[0].tau) <= spread);
}

TEST_CASE("mode-conditional and union coverage with the resampling surrogate") {
    const Scenario sc(ScenarioId::signal);
    const auto pool = generate_split(sc, Split::train, 1000, 1, 41);
    auto sur = std::make_shared<ResampleSurrogate>(pool, 100);
    auto pred = std::make_shared<ExactPredictor>(sc);
    const auto cal = generate_split(sc, Split::calibration, 150, 20, 41);
    const auto test = generate_split(sc, Split::test, 60, 100, 41);
    const auto phi = sc.default_property();
    const auto mon = build_monitor(sur, pred, cal, phi, "phi", 0.1, 100, 2);
    std::vector<double> hit(3, 0), cnt(3, 0);
    double uhit = 0;
    const auto truth = stl::robustness_batch(phi, test.trajectories);
    for (std::size_t i = 0; i < test.group_count(); ++i) {
        const auto r = mon.monitor(test.initial_states[i], derive_seed(7, i));
        for (std::size_t j = i * test.per_state; j < (i + 1) * test.per_state; ++j) {
            const auto g = static_cast<std::size_t>(test.modes[j] - 1);
            cnt[g] += 1;
            hit[g] += r.intervals[g].contains(truth[j]);
            for (const auto& seg : r.segments) uhit += seg.lo <= truth[j] && truth[j] <= seg.hi;
        }
    }
    for (int g = 0; g < 3; ++g) {
        REQUIRE(cnt[g] > 500);
        const double c = hit[g] / cnt[g];
        CHECK(c >= 0.9 - 3 * std::sqrt(0.09 / cnt[g]));
    }
    const double m = static_cast<double>(test.size());
    CHECK(uhit / m >= 0.9 - 3 * std::sqrt(0.09 / m));
}
