#include "qpm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "qpm/error.hpp"
#include "qpm/jsonutil.hpp"
#include "qpm/kv.hpp"
#include "qpm/rng.hpp"

namespace qpm {

double union_width(std::span<const Segment> segments) {
    double w = 0.0;
    for (const auto& s : segments) {
        if (!std::isfinite(s.lo) || !std::isfinite(s.hi)) return kInf;
        w += s.hi - s.lo;
    }
    return w;
}

double union_width(std::span<const PredictionInterval> intervals) {
    const auto segs = interval_union(intervals);
    return union_width(std::span<const Segment>(segs));
}

double eqr_width(std::span<const double> robustness, double alpha) {
    if (robustness.empty()) throw DomainError("EQR of an empty list");
    std::vector<double> v(robustness.begin(), robustness.end());
    std::sort(v.begin(), v.end());
    return empirical_quantile_sorted(v, 1.0 - alpha / 2) - empirical_quantile_sorted(v, alpha / 2);
}

CoverageResult coverage(const std::vector<std::vector<PredictionInterval>>& cpis,
                        const std::vector<std::vector<double>>& robustness,
                        const std::vector<std::vector<int>>& modes) {
    if (cpis.size() != robustness.size() || cpis.size() != modes.size())
        throw DimensionError("coverage inputs are not aligned");
    const std::size_t g = cpis.empty() ? 0 : cpis[0].size();
    CoverageResult r;
    r.per_mode.assign(g, 0.0);
    r.states.assign(g, 0);
    r.skipped.assign(g, 0);
    std::size_t used = 0;
    for (std::size_t i = 0; i < cpis.size(); ++i) {
        if (robustness[i].size() != modes[i].size()) throw DimensionError("coverage inputs are not aligned");
        const auto segs = interval_union(cpis[i]);
        std::vector<double> hit(g, 0.0), cnt(g, 0.0);
        double uhit = 0.0;
        for (std::size_t j = 0; j < robustness[i].size(); ++j) {
            const double t = robustness[i][j];
            const auto m = static_cast<std::size_t>(modes[i][j] - 1);
            if (m >= g) throw DomainError("mode label outside 1.." + std::to_string(g));
            cnt[m] += 1;
            hit[m] += cpis[i][m].contains(t);
            for (const auto& s : segs)
                if (s.lo <= t && t <= s.hi) {
                    uhit += 1;
                    break;
                }
        }
        for (std::size_t m = 0; m < g; ++m) {
            if (cnt[m] == 0) {
                ++r.skipped[m];
                continue;
            }
            r.per_mode[m] += hit[m] / cnt[m];
            ++r.states[m];
        }
        if (!robustness[i].empty()) {
            r.marginal += uhit / static_cast<double>(robustness[i].size());
            ++used;
        }
    }
    for (std::size_t m = 0; m < g; ++m)
        if (r.states[m] > 0) r.per_mode[m] /= static_cast<double>(r.states[m]);
    if (used > 0) r.marginal /= static_cast<double>(used);
    return r;
}

std::uint64_t test_sample_seed(std::uint64_t seed, std::size_t state) { return derive_seed(seed, {2, state}); }

namespace {

struct StateRound {
    std::vector<PredictionInterval> cpis;
    std::vector<double> taus;
    double width = 0;
    double base_width = 0;
    double base_ratio = 0;
};

struct StateResult {
    std::vector<double> truth;
    std::vector<int> pred, exact;
    double eqr = 0;
    std::vector<StateRound> rounds;
};

std::vector<std::size_t> draw_groups(std::size_t pool, const EvalConfig& cfg, std::size_t round, std::size_t state) {
    std::vector<std::size_t> all(pool);
    std::iota(all.begin(), all.end(), 0);
    if (cfg.cal_draw == 0 || (cfg.cal_draw == pool && !cfg.replacement)) return all;
    Rng rng(derive_seed(cfg.test_seed, {3, round, state}));
    if (cfg.replacement) {
        std::vector<std::size_t> out(cfg.cal_draw);
        for (auto& g : out) g = rng.below(pool);
        return out;
    }
    for (std::size_t i = 0; i < cfg.cal_draw; ++i) std::swap(all[i], all[i + rng.below(pool - i)]);
    all.resize(cfg.cal_draw);
    return all;
}

double mean_of(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

EvalReport bootstrap_evaluate(const EvalInputs& in, const EvalConfig& cfg, Exec exec) {
    if (!in.surrogate || !in.predictor || !in.cal || !in.test) throw ConfigError("evaluate", "missing inputs");
    if (!(cfg.alpha > 0 && cfg.alpha < 1)) throw ConfigError("alpha", "must lie in (0, 1)");
    if (cfg.rounds == 0) throw ConfigError("rounds", "must be at least 1");
    if (cfg.k == 0) throw ConfigError("K", "must be at least 1");
    const Dataset& cal = *in.cal;
    const Dataset& test = *in.test;
    if (cal.group_count() == 0) throw DomainError("empty calibration pool");
    if (!cfg.replacement && cfg.cal_draw > cal.group_count())
        throw ConfigError("cal_draw", "exceeds the calibration pool without replacement");
    const ModePredictor& exact = in.exact ? *in.exact : *in.predictor;
    const int modes = in.predictor->mode_count();
    const auto g = static_cast<std::size_t>(modes);

    const auto table = calibration_table(*in.surrogate, *in.predictor, cal, in.phi, cfg.alpha, cfg.k, cfg.seed, exec);
    const auto truth = stl::robustness_batch(in.phi, test.trajectories, exec);
    const auto pred = in.predictor->predict_batch(test.trajectories, exec);
    const auto ex = exact.predict_batch(test.trajectories, exec);

    std::vector<StateResult> states(test.group_count());
    parallel_for(test.group_count(), exec, [&](std::size_t i) {
        auto& st = states[i];
        const std::size_t b = i * test.per_state, e = (i + 1) * test.per_state;
        st.truth.assign(truth.begin() + static_cast<std::ptrdiff_t>(b), truth.begin() + static_cast<std::ptrdiff_t>(e));
        st.pred.assign(pred.begin() + static_cast<std::ptrdiff_t>(b), pred.begin() + static_cast<std::ptrdiff_t>(e));
        st.exact.assign(ex.begin() + static_cast<std::ptrdiff_t>(b), ex.begin() + static_cast<std::ptrdiff_t>(e));
        st.eqr = eqr_width(st.truth, cfg.alpha);

        const auto samples = in.surrogate->sample(test.initial_states[i], cfg.k, test_sample_seed(cfg.test_seed, i), Exec::serial);
        const auto labels = in.predictor->predict_batch(samples, Exec::serial);
        const auto rob = stl::robustness_batch(in.phi, samples, Exec::serial);
        const auto raw = mode_intervals(labels, rob, modes, cfg.alpha);
        const auto base_raw = quantile_interval(rob, cfg.alpha);

        for (std::size_t r = 0; r < cfg.rounds; ++r) {
            const auto groups = draw_groups(cal.group_count(), cfg, r, i);
            StateRound sr;
            for (int m = 1; m <= modes; ++m) {
                const double tau = calibrate_threshold(table.pooled(groups, m), cfg.alpha);
                sr.taus.push_back(tau);
                auto cpi = conformalized_interval(raw[static_cast<std::size_t>(m - 1)], tau);
                sr.cpis.push_back(cpi);
            }
            sr.width = union_width(std::span<const PredictionInterval>(sr.cpis));
            const auto base = conformalized_interval(base_raw, calibrate_threshold(table.pooled_baseline(groups), cfg.alpha));
            sr.base_width = base.collapsed ? 0.0 : (base.finite() ? base.hi - base.lo : kInf);
            double hit = 0;
            for (double t : st.truth) hit += base.contains(t);
            sr.base_ratio = hit / static_cast<double>(st.truth.size());
            st.rounds.push_back(std::move(sr));
        }
    });

    EvalReport rep;
    rep.scenario = in.scenario;
    rep.property = in.property;
    rep.formula = in.phi.to_string();
    rep.surrogate = in.surrogate->id();
    rep.predictor = in.predictor->id();
    rep.alpha = cfg.alpha;
    rep.k = cfg.k;
    rep.rounds = cfg.rounds;
    rep.cal_draw = cfg.cal_draw;
    rep.replacement = cfg.replacement;
    rep.seed = cfg.seed;
    rep.test_seed = cfg.test_seed;
    rep.cal_states = cal.group_count();
    rep.cal_per_state = cal.per_state;
    rep.test_states = test.group_count();
    rep.test_per_state = test.per_state;
    rep.modes = modes;

    std::vector<std::vector<double>> cov(g), cov_exact(g);
    std::vector<double> ucov, eff, bw, bc, tau_sum(g, 0.0), inf_count(g, 0.0);
    std::vector<std::size_t> tau_finite(g, 0);
    rep.mode_states.assign(g, 0);
    std::vector<std::vector<double>> rob_all;
    std::vector<std::vector<int>> pred_all, exact_all;
    for (const auto& st : states) {
        rob_all.push_back(st.truth);
        pred_all.push_back(st.pred);
        exact_all.push_back(st.exact);
    }
    for (std::size_t r = 0; r < cfg.rounds; ++r) {
        std::vector<std::vector<PredictionInterval>> cpis;
        RoundTrace tr;
        std::vector<double> widths, bwidths;
        double bsum = 0;
        for (const auto& st : states) {
            const auto& sr = st.rounds[r];
            cpis.push_back(sr.cpis);
            if (std::isfinite(sr.width))
                widths.push_back(sr.width);
            else
                ++tr.infinite_width;
            if (std::isfinite(sr.base_width))
                bwidths.push_back(sr.base_width);
            else
                ++rep.baseline_infinite;
            bsum += sr.base_ratio;
            for (std::size_t m = 0; m < g; ++m) {
                if (sr.taus[m] == kInf) {
                    inf_count[m] += 1;
                } else {
                    tau_sum[m] += sr.taus[m];
                    ++tau_finite[m];
                }
            }
        }
        const auto c = coverage(cpis, rob_all, pred_all);
        const auto ce = coverage(cpis, rob_all, exact_all);
        tr.mode_coverage = c.per_mode;
        tr.mode_coverage_exact = ce.per_mode;
        tr.union_coverage = c.marginal;
        tr.efficiency = widths.empty() ? kInf : mean_of(widths);
        tr.baseline_width = bwidths.empty() ? kInf : mean_of(bwidths);
        tr.baseline_coverage = states.empty() ? 0.0 : bsum / static_cast<double>(states.size());
        for (std::size_t m = 0; m < g; ++m) {
            rep.mode_states[m] += c.states[m];
            if (c.states[m] > 0) cov[m].push_back(c.per_mode[m]);
            if (ce.states[m] > 0) cov_exact[m].push_back(ce.per_mode[m]);
        }
        ucov.push_back(tr.union_coverage);
        if (std::isfinite(tr.efficiency)) eff.push_back(tr.efficiency);
        if (std::isfinite(tr.baseline_width)) bw.push_back(tr.baseline_width);
        bc.push_back(tr.baseline_coverage);
        rep.infinite_width += tr.infinite_width;
        rep.traces.push_back(std::move(tr));
    }
    const double pairs = static_cast<double>(cfg.rounds * states.size());
    for (std::size_t m = 0; m < g; ++m) {
        rep.mode_coverage.push_back(mean_of(cov[m]));
        rep.mode_coverage_std.push_back(std_of(cov[m]));
        rep.mode_coverage_exact.push_back(mean_of(cov_exact[m]));
        rep.mode_infinite_fraction.push_back(pairs > 0 ? inf_count[m] / pairs : 0.0);
        rep.mode_tau_mean.push_back(tau_finite[m] ? tau_sum[m] / static_cast<double>(tau_finite[m]) : kInf);
    }
    rep.union_coverage = mean_of(ucov);
    rep.union_coverage_std = std_of(ucov);
    rep.efficiency = eff.empty() ? kInf : mean_of(eff);
    rep.efficiency_std = std_of(eff);
    std::vector<double> eqrs;
    for (const auto& st : states) eqrs.push_back(st.eqr);
    rep.eqr = mean_of(eqrs);
    rep.conservativeness = std::isfinite(rep.efficiency) ? rep.efficiency - rep.eqr : kInf;
    rep.baseline_width = bw.empty() ? kInf : mean_of(bw);
    rep.baseline_coverage = mean_of(bc);

    for (std::size_t i = 0; i < states.size(); ++i) {
        const auto& sr = states[i].rounds[0];
        for (std::size_t m = 0; m < g; ++m)
            rep.intervals.push_back({i, static_cast<int>(m + 1), sr.cpis[m].lo, sr.cpis[m].hi, sr.cpis[m].degenerate});
        for (std::size_t j = 0; j < states[i].truth.size(); ++j) {
            const int m = states[i].pred[j];
            rep.scatter.push_back(
                {i, j, states[i].truth[j], m, sr.cpis[static_cast<std::size_t>(m - 1)].contains(states[i].truth[j])});
        }
    }
    return rep;
}

nlohmann::json report_json(const EvalReport& r) {
    auto cov_or_null = [&](const std::vector<double>& v) {
        auto a = nlohmann::json::array();
        for (std::size_t m = 0; m < v.size(); ++m)
            a.push_back(r.mode_states[m] > 0 ? json_number(v[m]) : nlohmann::json(nullptr));
        return a;
    };
    auto traces = nlohmann::json::array();
    for (const auto& t : r.traces)
        traces.push_back({{"mode_coverage", json_numbers(t.mode_coverage)},
                          {"mode_coverage_exact", json_numbers(t.mode_coverage_exact)},
                          {"union_coverage", json_number(t.union_coverage)},
                          {"efficiency", json_number(t.efficiency)},
                          {"infinite_width", t.infinite_width},
                          {"baseline_width", json_number(t.baseline_width)},
                          {"baseline_coverage", json_number(t.baseline_coverage)}});
    return {{"format", "qpm-eval-report"},
            {"schema_version", r.schema_version},
            {"scenario", r.scenario},
            {"property", r.property},
            {"formula", r.formula},
            {"surrogate", r.surrogate},
            {"predictor", r.predictor},
            {"config",
             {{"alpha", r.alpha},
              {"K", r.k},
              {"rounds", r.rounds},
              {"cal_draw", r.cal_draw},
              {"replacement", r.replacement},
              {"seed", r.seed},
              {"test_seed", r.test_seed}}},
            {"counts",
             {{"cal_states", r.cal_states},
              {"cal_per_state", r.cal_per_state},
              {"test_states", r.test_states},
              {"test_per_state", r.test_per_state},
              {"modes", r.modes}}},
            {"mode_coverage", cov_or_null(r.mode_coverage)},
            {"mode_coverage_std", json_numbers(r.mode_coverage_std)},
            {"mode_coverage_exact", json_numbers(r.mode_coverage_exact)},
            {"mode_states", r.mode_states},
            {"mode_infinite_fraction", json_numbers(r.mode_infinite_fraction)},
            {"mode_tau_mean", json_numbers(r.mode_tau_mean)},
            {"union_coverage", json_number(r.union_coverage)},
            {"union_coverage_std", json_number(r.union_coverage_std)},
            {"efficiency", json_number(r.efficiency)},
            {"efficiency_std", json_number(r.efficiency_std)},
            {"infinite_width", r.infinite_width},
            {"eqr", json_number(r.eqr)},
            {"conservativeness", json_number(r.conservativeness)},
            {"baseline", {{"width", json_number(r.baseline_width)},
                          {"coverage", json_number(r.baseline_coverage)},
                          {"infinite_width", r.baseline_infinite}}},
            {"rounds", traces}};
}

namespace {

std::filesystem::path sibling(const std::filesystem::path& json_path, const std::string& suffix) {
    auto p = json_path;
    p.replace_filename(json_path.stem().string() + suffix);
    return p;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path, std::size_t columns) {
    std::stringstream in(read_file(path));
    std::string line;
    std::getline(in, line);  // header
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto cells = split_csv(line);
        if (cells.size() != columns) throw IoError(path.string() + ": malformed row '" + line + "'");
        rows.push_back(std::move(cells));
    }
    return rows;
}

}  // namespace

void emit_report(const EvalReport& r, const std::filesystem::path& path) {
    std::string iv = "state_index,mode,lo,hi,degenerate\n";
    for (const auto& row : r.intervals)
        iv += std::to_string(row.state_index) + "," + std::to_string(row.mode) + "," + format_double(row.lo) + "," +
              format_double(row.hi) + "," + (row.degenerate ? "1" : "0") + "\n";
    std::string sc = "state_index,trajectory_index,robustness,mode,covered\n";
    for (const auto& row : r.scatter)
        sc += std::to_string(row.state_index) + "," + std::to_string(row.trajectory_index) + "," +
              format_double(row.robustness) + "," + std::to_string(row.mode) + "," + (row.covered ? "1" : "0") + "\n";
    atomic_write(sibling(path, "_intervals.csv"), iv);
    atomic_write(sibling(path, "_robustness.csv"), sc);
    atomic_write(path, report_json(r).dump(1) + "\n");
}

EvalReport read_report(const std::filesystem::path& path) {
    EvalReport r;
    try {
        const auto j = nlohmann::json::parse(read_file(path));
        if (j.at("format") != "qpm-eval-report") throw IoError(path.string() + ": not an evaluation report");
        r.schema_version = j.at("schema_version").get<int>();
        if (r.schema_version != 1) throw IoError(path.string() + ": unsupported report schema");
        r.scenario = j.at("scenario").get<std::string>();
        r.property = j.at("property").get<std::string>();
        r.formula = j.at("formula").get<std::string>();
        r.surrogate = j.at("surrogate").get<std::string>();
        r.predictor = j.at("predictor").get<std::string>();
        const auto& c = j.at("config");
        r.alpha = c.at("alpha").get<double>();
        r.k = c.at("K").get<std::size_t>();
        r.rounds = c.at("rounds").get<std::size_t>();
        r.cal_draw = c.at("cal_draw").get<std::size_t>();
        r.replacement = c.at("replacement").get<bool>();
        r.seed = c.at("seed").get<std::uint64_t>();
        r.test_seed = c.at("test_seed").get<std::uint64_t>();
        const auto& n = j.at("counts");
        r.cal_states = n.at("cal_states").get<std::size_t>();
        r.cal_per_state = n.at("cal_per_state").get<std::size_t>();
        r.test_states = n.at("test_states").get<std::size_t>();
        r.test_per_state = n.at("test_per_state").get<std::size_t>();
        r.modes = n.at("modes").get<int>();
        for (const auto& v : j.at("mode_coverage")) r.mode_coverage.push_back(v.is_null() ? 0.0 : number_from_json(v));
        r.mode_coverage_std = numbers_from_json(j.at("mode_coverage_std"));
        r.mode_coverage_exact = numbers_from_json(j.at("mode_coverage_exact"));
        r.mode_states = j.at("mode_states").get<std::vector<std::size_t>>();
        r.mode_infinite_fraction = numbers_from_json(j.at("mode_infinite_fraction"));
        r.mode_tau_mean = numbers_from_json(j.at("mode_tau_mean"));
        r.union_coverage = number_from_json(j.at("union_coverage"));
        r.union_coverage_std = number_from_json(j.at("union_coverage_std"));
        r.efficiency = number_from_json(j.at("efficiency"));
        r.efficiency_std = number_from_json(j.at("efficiency_std"));
        r.infinite_width = j.at("infinite_width").get<std::size_t>();
        r.eqr = number_from_json(j.at("eqr"));
        r.conservativeness = number_from_json(j.at("conservativeness"));
        const auto& b = j.at("baseline");
        r.baseline_width = number_from_json(b.at("width"));
        r.baseline_coverage = number_from_json(b.at("coverage"));
        r.baseline_infinite = b.at("infinite_width").get<std::size_t>();
        for (const auto& t : j.at("rounds")) {
            RoundTrace tr;
            tr.mode_coverage = numbers_from_json(t.at("mode_coverage"));
            tr.mode_coverage_exact = numbers_from_json(t.at("mode_coverage_exact"));
            tr.union_coverage = number_from_json(t.at("union_coverage"));
            tr.efficiency = number_from_json(t.at("efficiency"));
            tr.infinite_width = t.at("infinite_width").get<std::size_t>();
            tr.baseline_width = number_from_json(t.at("baseline_width"));
            tr.baseline_coverage = number_from_json(t.at("baseline_coverage"));
            r.traces.push_back(std::move(tr));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path.string() + ": malformed report: " + e.what());
    }
    const auto iv = sibling(path, "_intervals.csv");
    for (const auto& c : read_csv(iv, 5))
        r.intervals.push_back({static_cast<std::size_t>(parse_int(c[0], "state_index")),
                               static_cast<int>(parse_int(c[1], "mode")), parse_double(c[2], "lo"),
                               parse_double(c[3], "hi"), c[4] == "1"});
    const auto sc = sibling(path, "_robustness.csv");
    for (const auto& c : read_csv(sc, 5))
        r.scatter.push_back({static_cast<std::size_t>(parse_int(c[0], "state_index")),
                             static_cast<std::size_t>(parse_int(c[1], "trajectory_index")),
                             parse_double(c[2], "robustness"), static_cast<int>(parse_int(c[3], "mode")),
                             c[4] == "1"});
    return r;
}

std::string summary_table(const EvalReport& r) {
    auto num = [](double v) {
        if (!std::isfinite(v)) return std::string(v > 0 ? "inf" : "-inf");
        char b[32];
        std::snprintf(b, sizeof b, "%.2f", v);
        return std::string(b);
    };
    auto pct = [](double v) {
        char b[32];
        std::snprintf(b, sizeof b, "%.1f", 100.0 * v);
        return std::string(b);
    };
    std::string width = num(r.efficiency);
    if (std::isfinite(r.efficiency) && std::isfinite(r.baseline_width) && r.baseline_width > 0) {
        char b[32];
        std::snprintf(b, sizeof b, " (%+.0f%%)", 100.0 * (r.efficiency / r.baseline_width - 1.0));
        width += b;
    }
    if (r.infinite_width > 0) width += " [inf x" + std::to_string(r.infinite_width) + "]";
    std::string modes = "(";
    for (std::size_t m = 0; m < r.mode_coverage.size(); ++m) {
        if (m) modes += ", ";
        modes += r.mode_states[m] > 0 ? pct(r.mode_coverage[m]) : "-";
    }
    modes += ")";
    std::string exact = "(";
    for (std::size_t m = 0; m < r.mode_coverage_exact.size(); ++m) exact += (m ? ", " : "") + pct(r.mode_coverage_exact[m]);
    exact += ")";

    std::string out;
    out += "case study        | EQR    | baseline width | baseline cov | width           | union cov | mode-wise coverage\n";
    char line[512];
    std::snprintf(line, sizeof line, "%-17s | %-6s | %-14s | %-12s | %-15s | %-9s | %s\n",
                  (r.scenario + ":" + r.property).c_str(), num(r.eqr).c_str(), num(r.baseline_width).c_str(),
                  pct(r.baseline_coverage).c_str(), width.c_str(), pct(r.union_coverage).c_str(), modes.c_str());
    out += line;
    if (r.mode_coverage_exact != r.mode_coverage) out += "  coverage by exact mode: " + exact + "\n";
    return out;
}

}  // namespace qpm
