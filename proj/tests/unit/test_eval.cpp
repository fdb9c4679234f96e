#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "qpm/error.hpp"
#include "qpm/eval.hpp"
#include "qpm/rng.hpp"

using namespace qpm;

namespace {

PredictionInterval iv(double lo, double hi, int mode = 0) {
    PredictionInterval p;
    p.lo = lo;
    p.hi = hi;
    p.mode = mode;
    return p;
}

struct Small {
    Scenario sc{ScenarioId::signal};
    Dataset pool = generate_split(sc, Split::train, 400, 1, 51);
    ResampleSurrogate sur{pool, 60};
    ExactPredictor pred{sc};
    Dataset cal = generate_split(sc, Split::calibration, 30, 10, 51);
    Dataset test = generate_split(sc, Split::test, 8, 20, 51);

    EvalInputs inputs() const {
        return {&sur, &pred, &pred, &cal, &test, sc.default_property(), "phi", "signal"};
    }
};

}  // namespace

TEST_CASE("union width") {
    const std::vector<PredictionInterval> a{iv(0, 2), iv(1, 4), iv(6, 7)};
    CHECK(union_width(std::span<const PredictionInterval>(a)) == 5.0);
    const std::vector<PredictionInterval> b{iv(0, 1), iv(2, 3), iv(4, 5)};
    CHECK(union_width(std::span<const PredictionInterval>(b)) == 3.0);
    const std::vector<PredictionInterval> c{PredictionInterval{}};
    CHECK(union_width(std::span<const PredictionInterval>(c)) == kInf);
}

TEST_CASE("EQR width") {
    std::vector<double> v(100);
    std::iota(v.begin(), v.end(), 1.0);
    CHECK(eqr_width(v, 0.1) == 90.0);
    CHECK(eqr_width(std::vector<double>{3.0}, 0.1) == 0.0);
    CHECK(eqr_width(std::vector<double>(7, 2.5), 0.1) == 0.0);
    CHECK_THROWS_AS(eqr_width(std::vector<double>{}, 0.1), DomainError);
}

TEST_CASE("coverage counting") {
    std::vector<double> rob(30);
    std::iota(rob.begin(), rob.end(), 1.0);
    const std::vector<int> ones(30, 1);
    auto r = coverage({{iv(1, 27, 1)}}, {rob}, {ones});
    CHECK(r.per_mode[0] == doctest::Approx(0.9));
    CHECK(r.marginal == doctest::Approx(0.9));

    r = coverage({{iv(-kInf, kInf, 1), iv(0, 0, 2)}}, {{5.0, 6.0}}, {{1, 1}});
    CHECK(r.per_mode[0] == 1.0);
    CHECK(r.states[1] == 0);
    CHECK(r.skipped[1] == 1);

    // 0.8 and 1.0 average to 0.9 even though the pooled ratio differs.
    std::vector<double> a(10), b(2);
    std::iota(a.begin(), a.end(), 1.0);
    b = {1.0, 2.0};
    r = coverage({{iv(1, 8, 1)}, {iv(0, 5, 1)}}, {a, b}, {std::vector<int>(10, 1), std::vector<int>(2, 1)});
    CHECK(r.per_mode[0] == doctest::Approx(0.9));
}

TEST_CASE("enlarging intervals never lowers coverage") {
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<std::vector<PredictionInterval>> small, big;
        std::vector<std::vector<double>> rob;
        std::vector<std::vector<int>> modes;
        for (int i = 0; i < 5; ++i) {
            std::vector<PredictionInterval> s, b;
            for (int g = 1; g <= 3; ++g) {
                const double lo = rng.normal(), hi = lo + std::abs(rng.normal());
                const double grow = std::abs(rng.normal());
                s.push_back(iv(lo, hi, g));
                b.push_back(iv(lo - grow, hi + grow, g));
            }
            small.push_back(s);
            big.push_back(b);
            std::vector<double> r;
            std::vector<int> m;
            for (int j = 0; j < 12; ++j) {
                r.push_back(rng.normal());
                m.push_back(1 + static_cast<int>(rng.below(3)));
            }
            rob.push_back(r);
            modes.push_back(m);
        }
        const auto a = coverage(small, rob, modes), b = coverage(big, rob, modes);
        for (int g = 0; g < 3; ++g) CHECK(b.per_mode[g] >= a.per_mode[g]);
        CHECK(b.marginal >= a.marginal);
    }
}

TEST_CASE("plain evaluation is the one-round full-pool bootstrap") {
    const Small s;
    EvalConfig cfg;
    cfg.k = 40;
    cfg.seed = 12;
    cfg.test_seed = 13;
    cfg.cal_draw = s.cal.group_count();
    cfg.replacement = false;
    const auto rep = bootstrap_evaluate(s.inputs(), cfg);

    auto sur = std::make_shared<ResampleSurrogate>(s.pool, 60);
    auto pred = std::make_shared<ExactPredictor>(s.sc);
    const auto mon = build_monitor(sur, pred, s.cal, s.sc.default_property(), "phi", 0.1, 40, 12);
    for (std::size_t i = 0; i < s.test.group_count(); ++i) {
        const auto r = mon.monitor(s.test.initial_states[i], test_sample_seed(13, i));
        for (int g = 0; g < 3; ++g) {
            const auto& row = rep.intervals[i * 3 + static_cast<std::size_t>(g)];
            CHECK(row.lo == r.intervals[static_cast<std::size_t>(g)].lo);
            CHECK(row.hi == r.intervals[static_cast<std::size_t>(g)].hi);
        }
    }
    cfg.cal_draw = 0;
    auto whole = bootstrap_evaluate(s.inputs(), cfg);
    whole.cal_draw = rep.cal_draw;
    whole.replacement = rep.replacement;
    CHECK(whole == rep);
}

TEST_CASE("bootstrap report shape and determinism") {
    const Small s;
    EvalConfig cfg;
    cfg.k = 40;
    cfg.seed = 4;
    cfg.rounds = 3;
    cfg.cal_draw = 20;
    const auto a = bootstrap_evaluate(s.inputs(), cfg, Exec::parallel);
    const auto b = bootstrap_evaluate(s.inputs(), cfg, Exec::serial);
    CHECK(a == b);
    CHECK(a.mode_coverage.size() == 3);
    CHECK(a.mode_coverage_exact.size() == 3);
    CHECK(a.mode_infinite_fraction.size() == 3);
    CHECK(a.traces.size() == 3);
    CHECK(a.intervals.size() == s.test.group_count() * 3);
    CHECK(a.scatter.size() == s.test.size());
    for (double c : a.mode_coverage) CHECK((c >= 0.0 && c <= 1.0));
    CHECK(a.mode_coverage == a.mode_coverage_exact);
    cfg.test_seed = 5;
    CHECK_FALSE(bootstrap_evaluate(s.inputs(), cfg) == a);

    cfg.replacement = false;
    cfg.cal_draw = 31;
    CHECK_THROWS_AS(bootstrap_evaluate(s.inputs(), cfg), ConfigError);
    cfg.cal_draw = 10;
    cfg.rounds = 0;
    CHECK_THROWS_AS(bootstrap_evaluate(s.inputs(), cfg), ConfigError);
}

TEST_CASE("report files") {
    const Small s;
    EvalConfig cfg;
    cfg.k = 30;
    cfg.rounds = 2;
    cfg.cal_draw = 3;  // small draws give infinite thresholds too
    const auto rep = bootstrap_evaluate(s.inputs(), cfg);
    CHECK(rep.infinite_width > 0);

    const auto dir = std::filesystem::temp_directory_path() / "qpm_test_eval";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    emit_report(rep, dir / "report.json");
    CHECK(std::filesystem::exists(dir / "report_intervals.csv"));
    CHECK(std::filesystem::exists(dir / "report_robustness.csv"));
    CHECK(read_report(dir / "report.json") == rep);

    const auto csv = read_file(dir / "report_intervals.csv");
    CHECK(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')) == 1 + s.test.group_count() * 3);
    CHECK(csv.rfind("state_index,mode,lo,hi,degenerate\n", 0) == 0);

    CHECK_THROWS_AS(emit_report(rep, dir / "missing" / "report.json"), IoError);
    CHECK_FALSE(std::filesystem::exists(dir / "missing"));
    CHECK(summary_table(rep).find("EQR") != std::string::npos);
    std::filesystem::remove_all(dir);
}
