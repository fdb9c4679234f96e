#include "qpm/conformal.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>

#include "qpm/error.hpp"
#include "qpm/jsonutil.hpp"
#include "qpm/rng.hpp"

namespace qpm {

namespace {

// Products like 0.95 * 100 land a hair above the integer; without the guard
// the rank would jump by one.
constexpr double kRankSlack = 1e-9;

void check_alpha(double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha", "must lie in (0, 1)");
}

}  // namespace

std::size_t quantile_rank(double p, std::size_t m) {
    const double r = std::ceil(p * static_cast<double>(m) - kRankSlack);
    return std::clamp<std::size_t>(r < 1.0 ? 1 : static_cast<std::size_t>(r), 1, m);
}

double empirical_quantile_sorted(std::span<const double> sorted, double p) {
    if (sorted.empty()) throw DomainError("quantile of an empty list");
    if (!(p >= 0.0 && p <= 1.0)) throw DomainError("quantile level must lie in [0, 1]");
    return sorted[quantile_rank(p, sorted.size()) - 1];
}

double empirical_quantile(std::vector<double> values, double p) {
    std::sort(values.begin(), values.end());
    return empirical_quantile_sorted(values, p);
}

PredictionInterval quantile_interval(std::span<const double> robustness, double alpha, int mode) {
    check_alpha(alpha);
    PredictionInterval pi;
    pi.mode = mode;
    pi.k_mode = robustness.size();
    if (robustness.empty()) {
        pi.degenerate = true;
        return pi;
    }
    std::vector<double> v(robustness.begin(), robustness.end());
    std::sort(v.begin(), v.end());
    pi.lo = empirical_quantile_sorted(v, alpha / 2);
    pi.hi = empirical_quantile_sorted(v, 1.0 - alpha / 2);
    return pi;
}

double nonconformity_score(const PredictionInterval& pi, double t) {
    if (std::isnan(t)) throw DomainError("robustness is NaN");
    if (!pi.finite()) return -kInf;
    return std::max(pi.lo - t, t - pi.hi);
}

double calibrate_threshold(std::vector<double> scores, double alpha) {
    check_alpha(alpha);
    const std::size_t n = scores.size();
    const double r = std::ceil(static_cast<double>(n + 1) * (1.0 - alpha) - kRankSlack);
    if (r > static_cast<double>(n)) return kInf;
    const auto k = static_cast<std::size_t>(std::max(r, 1.0)) - 1;
    std::nth_element(scores.begin(), scores.begin() + static_cast<std::ptrdiff_t>(k), scores.end());
    return scores[k];
}

PredictionInterval conformalized_interval(const PredictionInterval& pi, double tau) {
    PredictionInterval out = pi;
    if (!pi.finite() || tau == kInf) {
        out.lo = -kInf;
        out.hi = kInf;
        out.degenerate = true;
        return out;
    }
    out.lo = pi.lo - tau;
    out.hi = pi.hi + tau;
    if (out.lo > out.hi) {
        const double mid = 0.5 * (pi.lo + pi.hi);
        out.lo = out.hi = mid;
        out.collapsed = true;
    }
    return out;
}

std::vector<Segment> interval_union(std::span<const PredictionInterval> intervals) {
    std::vector<Segment> s;
    for (const auto& pi : intervals)
        if (!pi.collapsed) s.push_back({pi.lo, pi.hi});
    std::sort(s.begin(), s.end(), [](const Segment& a, const Segment& b) { return a.lo < b.lo || (a.lo == b.lo && a.hi < b.hi); });
    std::vector<Segment> out;
    for (const auto& seg : s) {
        if (!out.empty() && seg.lo <= out.back().hi)
            out.back().hi = std::max(out.back().hi, seg.hi);
        else
            out.push_back(seg);
    }
    return out;
}

std::vector<PredictionInterval> mode_intervals(std::span<const int> labels, std::span<const double> robustness,
                                               int modes, double alpha) {
    if (labels.size() != robustness.size()) throw DimensionError("labels and robustness differ in length");
    std::vector<std::vector<double>> by_mode(static_cast<std::size_t>(modes));
    for (std::size_t k = 0; k < labels.size(); ++k) {
        if (labels[k] < 1 || labels[k] > modes) throw DomainError("mode label outside 1.." + std::to_string(modes));
        by_mode[static_cast<std::size_t>(labels[k] - 1)].push_back(robustness[k]);
    }
    std::vector<PredictionInterval> out;
    for (int g = 1; g <= modes; ++g) out.push_back(quantile_interval(by_mode[static_cast<std::size_t>(g - 1)], alpha, g));
    return out;
}

std::string SampleCache::key(const std::string& surrogate_id, std::span<const double> s0, std::size_t k,
                             std::uint64_t seed) {
    std::string text = surrogate_id + "|" + std::to_string(k) + "|" + std::to_string(seed);
    for (double v : s0) {
        char buf[20];
        std::snprintf(buf, sizeof buf, "|%016llx", static_cast<unsigned long long>(std::bit_cast<std::uint64_t>(v)));
        text += buf;
    }
    return content_hash(text);
}

TrajectoryBatch SampleCache::get(const Surrogate& surrogate, std::span<const double> s0, std::size_t k,
                                 std::uint64_t seed, Exec exec) {
    const auto id = key(surrogate.id(), s0, k, seed);
    {
        std::lock_guard lock(mu_);
        if (auto it = mem_.find(id); it != mem_.end()) {
            ++hits_;
            return *it->second;
        }
    }
    const auto file = dir_.empty() ? std::filesystem::path{} : dir_ / ("samples-" + id + ".bin");
    std::shared_ptr<const TrajectoryBatch> batch;
    bool from_disk = false;
    if (!file.empty() && std::filesystem::exists(file)) {
        batch = std::make_shared<const TrajectoryBatch>(read_binary(file));
        from_disk = true;
    } else {
        batch = std::make_shared<const TrajectoryBatch>(surrogate.sample(s0, k, seed, exec));
        if (!file.empty()) write_binary(*batch, file);
    }
    std::lock_guard lock(mu_);
    from_disk ? ++hits_ : ++misses_;
    mem_.emplace(id, batch);
    return *batch;
}

std::size_t SampleCache::hits() const {
    std::lock_guard lock(mu_);
    return hits_;
}

std::size_t SampleCache::misses() const {
    std::lock_guard lock(mu_);
    return misses_;
}

namespace {

TrajectoryBatch draw(const Surrogate& surrogate, std::span<const double> s0, std::size_t k, std::uint64_t seed,
                     Exec exec, SampleCache* cache) {
    if (k == 0) throw ConfigError("K", "must be at least 1");
    return cache ? cache->get(surrogate, s0, k, seed, exec) : surrogate.sample(s0, k, seed, exec);
}

void check_formula(const stl::Formula& phi, std::size_t horizon) {
    if (phi.lookahead() + 1 > horizon)
        throw HorizonError("formula needs " + std::to_string(phi.lookahead() + 1) + " steps, trajectories have " +
                           std::to_string(horizon));
}

}  // namespace

PredictionInterval mode_prediction_interval(const Surrogate& surrogate, const ModePredictor& predictor,
                                            std::span<const double> s0, const stl::Formula& phi, int mode,
                                            double alpha, std::size_t k, std::uint64_t seed, Exec exec) {
    check_alpha(alpha);
    check_formula(phi, surrogate.horizon());
    const auto samples = draw(surrogate, s0, k, seed, exec, nullptr);
    const auto labels = predictor.predict_batch(samples, exec);
    const auto rob = stl::robustness_batch(phi, samples, exec);
    std::vector<double> kept;
    for (std::size_t j = 0; j < samples.size(); ++j)
        if (labels[j] == mode) kept.push_back(rob[j]);
    return quantile_interval(kept, alpha, mode);
}

std::vector<double> CalibrationRecord::taus() const {
    std::vector<double> t;
    for (const auto& m : modes) t.push_back(m.tau);
    return t;
}

nlohmann::json CalibrationRecord::to_json(std::size_t max_scores) const {
    auto ms = nlohmann::json::array();
    for (const auto& m : modes) {
        nlohmann::json e{{"mode", m.mode}, {"n", m.n}, {"tau", json_number(m.tau)}};
        if (m.scores.size() <= max_scores)
            e["scores"] = json_numbers(m.scores);
        else
            e["scores_elided"] = true;
        ms.push_back(std::move(e));
    }
    return {{"format", "qpm-calibration"},
            {"version", 1},
            {"alpha", alpha},
            {"property", property},
            {"formula", formula},
            {"surrogate", surrogate_id},
            {"predictor", predictor_id},
            {"K", k},
            {"seed", seed},
            {"modes", ms}};
}

CalibrationRecord CalibrationRecord::from_json(const nlohmann::json& j) {
    CalibrationRecord r;
    try {
        if (j.at("format") != "qpm-calibration" || j.at("version").get<int>() != 1)
            throw IoError("not a version 1 calibration record");
        r.alpha = j.at("alpha").get<double>();
        r.property = j.at("property").get<std::string>();
        r.formula = j.at("formula").get<std::string>();
        r.surrogate_id = j.at("surrogate").get<std::string>();
        r.predictor_id = j.at("predictor").get<std::string>();
        r.k = j.at("K").get<std::size_t>();
        r.seed = j.at("seed").get<std::uint64_t>();
        for (const auto& e : j.at("modes")) {
            ModeCalibration m;
            m.mode = e.at("mode").get<int>();
            m.n = e.at("n").get<std::size_t>();
            m.tau = number_from_json(e.at("tau"));
            if (e.contains("scores")) m.scores = numbers_from_json(e.at("scores"));
            r.modes.push_back(std::move(m));
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed calibration record: ") + e.what());
    }
    return r;
}

void CalibrationRecord::save(const std::filesystem::path& path, std::size_t max_scores) const {
    atomic_write(path, to_json(max_scores).dump(1) + "\n");
}

CalibrationRecord CalibrationRecord::load(const std::filesystem::path& path) {
    try {
        return from_json(nlohmann::json::parse(read_file(path)));
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

std::string CalibrationRecord::hash() const { return content_hash(to_json().dump()); }

std::vector<double> CalibrationTable::pooled(std::span<const std::size_t> groups, int mode) const {
    std::vector<double> out;
    for (auto g : groups) {
        const auto& s = scores.at(g).at(static_cast<std::size_t>(mode - 1));
        out.insert(out.end(), s.begin(), s.end());
    }
    return out;
}

std::vector<double> CalibrationTable::pooled_baseline(std::span<const std::size_t> groups) const {
    std::vector<double> out;
    for (auto g : groups) out.insert(out.end(), baseline.at(g).begin(), baseline.at(g).end());
    return out;
}

std::uint64_t calibration_sample_seed(std::uint64_t seed, std::size_t group) { return derive_seed(seed, {1, group}); }

CalibrationTable calibration_table(const Surrogate& surrogate, const ModePredictor& predictor, const Dataset& cal,
                                   const stl::Formula& phi, double alpha, std::size_t k, std::uint64_t seed,
                                   Exec exec, SampleCache* cache) {
    check_alpha(alpha);
    check_formula(phi, cal.trajectories.horizon());
    check_formula(phi, surrogate.horizon());
    const int modes = predictor.mode_count();
    if (modes < 1) throw ConfigError("modes", "predictor has no modes");
    const auto truth = stl::robustness_batch(phi, cal.trajectories, exec);
    const auto truth_modes = predictor.predict_batch(cal.trajectories, exec);

    CalibrationTable t;
    t.modes = modes;
    t.scores.assign(cal.group_count(), std::vector<std::vector<double>>(static_cast<std::size_t>(modes)));
    t.baseline.assign(cal.group_count(), {});
    parallel_for(cal.group_count(), exec, [&](std::size_t g) {
        const auto samples = draw(surrogate, cal.initial_states[g], k, calibration_sample_seed(seed, g),
                                  Exec::serial, cache);
        const auto labels = predictor.predict_batch(samples, Exec::serial);
        const auto rob = stl::robustness_batch(phi, samples, Exec::serial);
        const auto pis = mode_intervals(labels, rob, modes, alpha);
        const auto base = quantile_interval(rob, alpha);
        for (std::size_t j = g * cal.per_state; j < (g + 1) * cal.per_state; ++j) {
            const auto m = static_cast<std::size_t>(truth_modes[j] - 1);
            t.scores[g][m].push_back(nonconformity_score(pis[m], truth[j]));
            t.baseline[g].push_back(nonconformity_score(base, truth[j]));
        }
    });
    return t;
}

CalibratedMonitor::CalibratedMonitor(std::shared_ptr<const Surrogate> surrogate,
                                     std::shared_ptr<const ModePredictor> predictor, stl::Formula phi,
                                     CalibrationRecord record)
    : surrogate_(std::move(surrogate)), predictor_(std::move(predictor)), phi_(std::move(phi)),
      record_(std::move(record)) {
    if (!surrogate_ || !predictor_) throw ConfigError("monitor", "surrogate and predictor are required");
    if (record_.modes.size() != static_cast<std::size_t>(predictor_->mode_count()))
        throw ConfigError("modes", "calibration record has " + std::to_string(record_.modes.size()) +
                                       " modes, predictor has " + std::to_string(predictor_->mode_count()));
    check_formula(phi_, surrogate_->horizon());
}

MonitorResult CalibratedMonitor::monitor(std::span<const double> s0, std::uint64_t seed, Exec exec,
                                         SampleCache* cache) const {
    const auto samples = draw(*surrogate_, s0, record_.k, seed, exec, cache);
    const auto labels = predictor_->predict_batch(samples, exec);
    const auto rob = stl::robustness_batch(phi_, samples, exec);
    MonitorResult r;
    r.s0.assign(s0.begin(), s0.end());
    r.raw = mode_intervals(labels, rob, predictor_->mode_count(), record_.alpha);
    r.taus = record_.taus();
    for (std::size_t g = 0; g < r.raw.size(); ++g) {
        r.raw[g].cal_size = record_.modes[g].n;
        r.intervals.push_back(conformalized_interval(r.raw[g], r.taus[g]));
    }
    r.segments = interval_union(r.intervals);
    return r;
}

CalibratedMonitor build_monitor(std::shared_ptr<const Surrogate> surrogate,
                                std::shared_ptr<const ModePredictor> predictor, const Dataset& cal,
                                const stl::Formula& phi, const std::string& property, double alpha, std::size_t k,
                                std::uint64_t seed, Exec exec, SampleCache* cache) {
    if (!surrogate || !predictor) throw ConfigError("monitor", "surrogate and predictor are required");
    const auto table = calibration_table(*surrogate, *predictor, cal, phi, alpha, k, seed, exec, cache);
    std::vector<std::size_t> all(table.groups());
    for (std::size_t g = 0; g < all.size(); ++g) all[g] = g;
    CalibrationRecord rec;
    rec.alpha = alpha;
    rec.property = property;
    rec.formula = phi.to_string();
    rec.surrogate_id = surrogate->id();
    rec.predictor_id = predictor->id();
    rec.k = k;
    rec.seed = seed;
    for (int g = 1; g <= table.modes; ++g) {
        ModeCalibration m;
        m.mode = g;
        m.scores = table.pooled(all, g);
        m.n = m.scores.size();
        m.tau = calibrate_threshold(m.scores, alpha);
        rec.modes.push_back(std::move(m));
    }
    return CalibratedMonitor(std::move(surrogate), std::move(predictor), phi, std::move(rec));
}

MonitorResult monitor_state(const CalibratedMonitor& monitor, std::span<const double> s0, std::uint64_t seed,
                            Exec exec, SampleCache* cache) {
    return monitor.monitor(s0, seed, exec, cache);
}

std::string to_jsonl(const MonitorResult& r) {
    std::string out;
    for (std::size_t g = 0; g < r.intervals.size(); ++g) {
        const auto& pi = r.intervals[g];
        nlohmann::json j{{"s0", r.s0},
                         {"mode", pi.mode},
                         {"lo", json_number(pi.lo)},
                         {"hi", json_number(pi.hi)},
                         {"tau", json_number(r.taus[g])},
                         {"K_mode", pi.k_mode},
                         {"degenerate", pi.degenerate},
                         {"collapsed", pi.collapsed}};
        out += j.dump() + "\n";
    }
    return out;
}

namespace baseline {

std::vector<double> scores(const Surrogate& surrogate, const Dataset& cal, const stl::Formula& phi, double alpha,
                           std::size_t k, std::uint64_t seed, Exec exec) {
    check_alpha(alpha);
    check_formula(phi, cal.trajectories.horizon());
    const auto truth = stl::robustness_batch(phi, cal.trajectories, exec);
    std::vector<std::vector<double>> per_group(cal.group_count());
    parallel_for(cal.group_count(), exec, [&](std::size_t g) {
        const auto samples = surrogate.sample(cal.initial_states[g], k, calibration_sample_seed(seed, g), Exec::serial);
        auto rob = stl::robustness_batch(phi, samples, Exec::serial);
        std::sort(rob.begin(), rob.end());
        const double lo = empirical_quantile_sorted(rob, alpha / 2);
        const double hi = empirical_quantile_sorted(rob, 1.0 - alpha / 2);
        for (std::size_t j = g * cal.per_state; j < (g + 1) * cal.per_state; ++j)
            per_group[g].push_back(std::max(lo - truth[j], truth[j] - hi));
    });
    std::vector<double> out;
    for (const auto& s : per_group) out.insert(out.end(), s.begin(), s.end());
    return out;
}

double threshold(const Surrogate& surrogate, const Dataset& cal, const stl::Formula& phi, double alpha,
                 std::size_t k, std::uint64_t seed, Exec exec) {
    return calibrate_threshold(scores(surrogate, cal, phi, alpha, k, seed, exec), alpha);
}

PredictionInterval interval(const Surrogate& surrogate, std::span<const double> s0, const stl::Formula& phi,
                            double alpha, double tau, std::size_t k, std::uint64_t seed, Exec exec) {
    auto rob = stl::robustness_batch(phi, surrogate.sample(s0, k, seed, exec), exec);
    std::sort(rob.begin(), rob.end());
    PredictionInterval pi;
    pi.k_mode = rob.size();
    if (tau == kInf) {
        pi.degenerate = true;
        return pi;
    }
    const double lo = empirical_quantile_sorted(rob, alpha / 2);
    const double hi = empirical_quantile_sorted(rob, 1.0 - alpha / 2);
    pi.lo = lo - tau;
    pi.hi = hi + tau;
    if (pi.lo > pi.hi) {
        pi.lo = pi.hi = 0.5 * (lo + hi);
        pi.collapsed = true;
    }
    return pi;
}

}  // namespace baseline

}  // namespace qpm
