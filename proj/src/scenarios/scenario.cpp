#include "qpm/scenario.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <sstream>

#include "qpm/error.hpp"

namespace qpm {

namespace {

// Signal: stable equilibria of the drift and the piecewise-linear walls that
// keep states inside the well region.
constexpr std::array<double, 3> kSignalEquilibria{5.0, 12.5, 20.0};
constexpr double kSignalWellLo = 1.25;
constexpr double kSignalWellHi = 23.75;
constexpr double kSignalDriftGain = 0.6;
constexpr double kSignalWallGain = 0.5;
constexpr double kSignalNoiseEarly = 4.0;
constexpr double kSignalNoiseLate = 0.3;
constexpr std::size_t kSignalSwitchStep = 12;

double signal_drift(double s) {
    if (s < kSignalWellLo) return kSignalWallGain * (s - kSignalWellLo);
    if (s > kSignalWellHi) return kSignalWallGain * (s - kSignalWellHi);
    return kSignalDriftGain * std::sin(2.0 * std::numbers::pi * (s - 5.0) / 7.5);
}

struct Point {
    double x, y;
};

// Navigation: lanes at 3, 15 and 27 between obstacle squares centred at
// (10|20, 10|20) with half-width 3.5.
const std::array<std::vector<Point>, 4> kNavRoutes{{
    {{27, 3}, {27, 27}},
    {{15, 3}, {15, 15}, {27, 15}, {27, 27}},
    {{3, 15}, {15, 15}, {15, 27}, {27, 27}},
    {{3, 27}, {27, 27}},
}};
constexpr std::array<Point, 4> kNavCorridorMidpoints{{{27, 9}, {15, 9}, {9, 15}, {9, 27}}};
constexpr double kNavSpeed = 2.0;
constexpr double kNavSwitchRadius = 1.0;
constexpr double kNavNoise = 0.25;

// Crossroad: ego drives north on x ~ 33, turns along y = 22.
constexpr double kEgoTurnY = 22.0;
constexpr double kEgoSpeed = 2.5;
constexpr double kEgoSwitchRadius = 1.5;
constexpr double kEgoNoise = 0.3;
constexpr double kCarSpeed = 2.0;
constexpr double kModeLeftMaxX = 30.0;
constexpr double kModeStraightMaxX = 40.0;
constexpr double kPedSpeed = 0.9;
constexpr double kPedNoise = 0.1;

// Moves `pos` toward `target` by at most `speed`.
Point steer(Point pos, Point target, double speed) {
    double dx = target.x - pos.x, dy = target.y - pos.y;
    const double d = std::hypot(dx, dy);
    if (d > speed) {
        dx *= speed / d;
        dy *= speed / d;
    }
    return {pos.x + dx, pos.y + dy};
}

std::size_t pick(Rng& rng, const std::vector<double>& probs) {
    double total = 0;
    for (double p : probs) total += p;
    double u = rng.uniform() * total;
    for (std::size_t i = 0; i + 1 < probs.size(); ++i) {
        if (u < probs[i]) return i;
        u -= probs[i];
    }
    return probs.size() - 1;
}

void simulate_signal(const ScenarioSpec& spec, Trajectory& tr, Rng& rng) {
    double s = tr.at(0, 0);
    for (std::size_t k = 0; k + 1 < spec.horizon; ++k) {
        const double sigma = k < kSignalSwitchStep ? kSignalNoiseEarly : kSignalNoiseLate;
        s = s - signal_drift(s) + spec.noise_scale * sigma * rng.normal();
        tr.at(k + 1, 0) = s;
    }
}

void simulate_navigation(const ScenarioSpec& spec, Trajectory& tr, Rng& rng) {
    const auto& route = kNavRoutes[pick(rng, spec.route_probabilities)];
    Point p{tr.at(0, 0), tr.at(0, 1)};
    std::size_t w = 0;
    for (std::size_t k = 0; k + 1 < spec.horizon; ++k) {
        if (w + 1 < route.size() && std::hypot(route[w].x - p.x, route[w].y - p.y) < kNavSwitchRadius) ++w;
        p = steer(p, route[w], kNavSpeed);
        p.x += spec.noise_scale * kNavNoise * rng.normal();
        p.y += spec.noise_scale * kNavNoise * rng.normal();
        tr.at(k + 1, 0) = p.x;
        tr.at(k + 1, 1) = p.y;
    }
}

void simulate_crossroad(const ScenarioSpec& spec, Trajectory& tr, Rng& rng, bool pedestrian) {
    const std::size_t route = pick(rng, spec.route_probabilities);
    Point ego{tr.at(0, 0), tr.at(0, 1)};
    std::vector<Point> waypoints;
    if (route == 0) waypoints = {{ego.x, kEgoTurnY}, {-100.0, kEgoTurnY}};
    else if (route == 1) waypoints = {{ego.x, 200.0}};
    else waypoints = {{ego.x, kEgoTurnY}, {200.0, kEgoTurnY}};

    Point car{tr.at(0, 2), tr.at(0, 3)};
    Point ped{};
    bool crosses = false;
    if (pedestrian) {
        ped = {tr.at(0, 4), tr.at(0, 5)};
        crosses = rng.uniform() < spec.cross_probability;
    }
    std::size_t w = 0;
    for (std::size_t k = 0; k + 1 < spec.horizon; ++k) {
        if (w + 1 < waypoints.size() &&
            std::hypot(waypoints[w].x - ego.x, waypoints[w].y - ego.y) < kEgoSwitchRadius)
            ++w;
        ego = steer(ego, waypoints[w], kEgoSpeed);
        ego.x += spec.noise_scale * kEgoNoise * rng.normal();
        ego.y += spec.noise_scale * kEgoNoise * rng.normal();
        car.x -= kCarSpeed;
        tr.at(k + 1, 0) = ego.x;
        tr.at(k + 1, 1) = ego.y;
        tr.at(k + 1, 2) = car.x;
        tr.at(k + 1, 3) = car.y;
        if (pedestrian) {
            if (crosses) ped.x += kPedSpeed;
            ped.x += spec.noise_scale * kPedNoise * rng.normal();
            ped.y += spec.noise_scale * kPedNoise * rng.normal();
            tr.at(k + 1, 4) = ped.x;
            tr.at(k + 1, 5) = ped.y;
        }
    }
}

std::string join(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ", ";
        out += format_double(v[i]);
    }
    return out;
}

}  // namespace

std::string to_string(ScenarioId id) {
    switch (id) {
        case ScenarioId::signal: return "signal";
        case ScenarioId::navigation: return "navigation";
        case ScenarioId::crossroad: return "crossroad";
        case ScenarioId::multi_agent_crossroad: return "multi_agent_crossroad";
    }
    return "?";
}

ScenarioId parse_scenario_id(std::string_view name) {
    if (name == "signal") return ScenarioId::signal;
    if (name == "navigation") return ScenarioId::navigation;
    if (name == "crossroad") return ScenarioId::crossroad;
    if (name == "multi_agent_crossroad" || name == "multi") return ScenarioId::multi_agent_crossroad;
    throw ConfigError("scenario", "unknown scenario '" + std::string(name) + "'");
}

ScenarioSpec ScenarioSpec::builtin(ScenarioId id) {
    ScenarioSpec s;
    s.id = id;
    switch (id) {
        case ScenarioId::signal:
            s.state_dim = 1;
            s.horizon = 45;
            s.modes = 3;
            s.init_lo = {4};
            s.init_hi = {21};
            s.state_lo = {0};
            s.state_hi = {25};
            s.properties["phi"] = "F[0,22] G[0,22] (x0 >= 17.5)";
            s.default_property = "phi";
            break;
        case ScenarioId::navigation:
            s.state_dim = 2;
            s.horizon = 30;
            s.modes = 4;
            s.init_lo = {2, 2};
            s.init_hi = {4, 4};
            s.state_lo = {1, 1};
            s.state_hi = {29, 29};
            s.route_probabilities = {0.1, 0.4, 0.4, 0.1};
            s.properties["phi"] =
                "G[0,29](linf(x0, x1; 10, 10) >= 3.5 & linf(x0, x1; 20, 10) >= 3.5 & "
                "linf(x0, x1; 10, 20) >= 3.5 & linf(x0, x1; 20, 20) >= 3.5 & linf(x0, x1; 15, 15) <= 14)";
            s.default_property = "phi";
            break;
        case ScenarioId::crossroad:
        case ScenarioId::multi_agent_crossroad: {
            const bool multi = id == ScenarioId::multi_agent_crossroad;
            s.state_dim = multi ? 6 : 4;
            s.horizon = 21;
            s.modes = 3;
            s.init_lo = {32, 0, 66, 30};
            s.init_hi = {34, 4, 72, 30};
            s.state_lo = {-50, -50, -50, -50};
            s.state_hi = {150, 150, 150, 150};
            s.route_probabilities = {1.0 / 3, 1.0 / 3, 1.0 / 3};
            s.properties["right"] = "G[0,20](x0 <= 37)";
            s.properties["car"] = "G[0,20](dist(x0, x1; x2, x3) > 5)";
            s.default_property = "right";
            if (multi) {
                s.init_lo.insert(s.init_lo.end(), {24, 14});
                s.init_hi.insert(s.init_hi.end(), {27, 18});
                s.state_lo.insert(s.state_lo.end(), {-50, -50});
                s.state_hi.insert(s.state_hi.end(), {150, 150});
                s.occlusion_lo = 4;
                s.occlusion_hi = 9;
                s.properties["pedestrian"] = "G[0,20](dist(x0, x1; x4, x5) > 5)";
                s.properties["multi"] =
                    "G[0,20](dist(x0, x1; x4, x5) > 5) & G[0,20](dist(x0, x1; x2, x3) > 5) & G[0,20](x0 <= 37)";
                s.default_property = "multi";
            }
            break;
        }
    }
    return s;
}

ScenarioSpec ScenarioSpec::from_kv(const KeyValues& kv) {
    const long long version = kv.get_int("version", 1);
    if (version != 1) throw ConfigError("version", "unsupported scenario spec version " + std::to_string(version));
    auto name = kv.get("scenario");
    if (!name) throw ConfigError("scenario", "missing");
    ScenarioSpec s = builtin(parse_scenario_id(*name));
    s.horizon = static_cast<std::size_t>(kv.get_int("horizon", static_cast<long long>(s.horizon)));
    s.init_lo = kv.get_doubles("init_lo", s.init_lo);
    s.init_hi = kv.get_doubles("init_hi", s.init_hi);
    s.state_lo = kv.get_doubles("state_lo", s.state_lo);
    s.state_hi = kv.get_doubles("state_hi", s.state_hi);
    s.noise_scale = kv.get_double("noise_scale", s.noise_scale);
    s.route_probabilities = kv.get_doubles("route_probabilities", s.route_probabilities);
    s.cross_probability = kv.get_double("cross_probability", s.cross_probability);
    s.occlusion_lo = static_cast<std::size_t>(kv.get_int("occlusion_lo", static_cast<long long>(s.occlusion_lo)));
    s.occlusion_hi = static_cast<std::size_t>(kv.get_int("occlusion_hi", static_cast<long long>(s.occlusion_hi)));
    for (const auto& [key, value] : kv.entries())
        if (key.starts_with("property.")) s.properties[key.substr(9)] = value;
    s.default_property = kv.get_string("default_property", s.default_property);
    if (kv.contains("state_dim") && kv.get_int("state_dim", 0) != static_cast<long long>(s.state_dim))
        throw ConfigError("state_dim", "does not match scenario " + *name);
    if (kv.contains("modes") && kv.get_int("modes", 0) != s.modes)
        throw ConfigError("modes", "does not match scenario " + *name);
    return s;
}

ScenarioSpec ScenarioSpec::load(const std::filesystem::path& path) { return from_kv(KeyValues::load(path)); }

std::string ScenarioSpec::to_kv() const {
    std::ostringstream o;
    o << "version = " << version << "\n";
    o << "scenario = " << to_string(id) << "\n";
    o << "state_dim = " << state_dim << "\n";
    o << "horizon = " << horizon << "\n";
    o << "modes = " << modes << "\n";
    o << "init_lo = [" << join(init_lo) << "]\n";
    o << "init_hi = [" << join(init_hi) << "]\n";
    o << "state_lo = [" << join(state_lo) << "]\n";
    o << "state_hi = [" << join(state_hi) << "]\n";
    o << "noise_scale = " << format_double(noise_scale) << "\n";
    if (!route_probabilities.empty()) o << "route_probabilities = [" << join(route_probabilities) << "]\n";
    if (id == ScenarioId::multi_agent_crossroad) {
        o << "cross_probability = " << format_double(cross_probability) << "\n";
        o << "occlusion_lo = " << occlusion_lo << "\n";
        o << "occlusion_hi = " << occlusion_hi << "\n";
    }
    for (const auto& [k, v] : properties) o << "property." << k << " = \"" << v << "\"\n";
    o << "default_property = " << default_property << "\n";
    return o.str();
}

Scenario::Scenario(ScenarioSpec spec) : spec_(std::move(spec)) {
    const std::size_t n = spec_.state_dim;
    if (spec_.modes < 2) throw ConfigError("modes", "need at least two modes");
    if (spec_.horizon < 2) throw ConfigError("horizon", "must be at least 2");
    auto check_box = [&](const std::vector<double>& lo, const std::vector<double>& hi, const char* field) {
        if (lo.size() != n || hi.size() != n) throw ConfigError(field, "expected " + std::to_string(n) + " values");
        for (std::size_t i = 0; i < n; ++i)
            if (!(lo[i] <= hi[i])) throw ConfigError(field, "lower bound above upper bound");
    };
    check_box(spec_.init_lo, spec_.init_hi, "init_lo");
    check_box(spec_.state_lo, spec_.state_hi, "state_lo");
    if (!(spec_.noise_scale >= 0)) throw ConfigError("noise_scale", "must be non-negative");
    if (spec_.id != ScenarioId::signal) {
        const std::size_t routes = spec_.id == ScenarioId::navigation ? 4 : 3;
        if (spec_.route_probabilities.size() != routes)
            throw ConfigError("route_probabilities", "expected " + std::to_string(routes) + " values");
        for (double p : spec_.route_probabilities)
            if (!(p >= 0)) throw ConfigError("route_probabilities", "must be non-negative");
    }
    if (!spec_.properties.contains(spec_.default_property))
        throw ConfigError("default_property", "unknown property '" + spec_.default_property + "'");
    for (const auto& [key, text] : spec_.properties) {
        const auto f = stl::parse_formula(text, n);
        if (f.lookahead() + 1 > spec_.horizon)
            throw ConfigError("property." + key, "lookahead " + std::to_string(f.lookahead()) +
                                                     " does not fit horizon " + std::to_string(spec_.horizon));
    }
}

void Scenario::check_initial_state(std::span<const double> s0) const {
    if (s0.size() != spec_.state_dim)
        throw DimensionError("initial state has " + std::to_string(s0.size()) + " coordinates, scenario expects " +
                             std::to_string(spec_.state_dim));
    for (std::size_t i = 0; i < s0.size(); ++i)
        if (!(s0[i] >= spec_.state_lo[i] && s0[i] <= spec_.state_hi[i]))
            throw DomainError("initial state coordinate x" + std::to_string(i) + " = " + format_double(s0[i]) +
                              " outside [" + format_double(spec_.state_lo[i]) + ", " +
                              format_double(spec_.state_hi[i]) + "]");
}

Trajectory Scenario::simulate_one(std::span<const double> s0, std::uint64_t stream_seed) const {
    check_initial_state(s0);
    Trajectory tr(spec_.state_dim, spec_.horizon);
    std::copy(s0.begin(), s0.end(), tr.state(0).begin());
    Rng rng(stream_seed);
    switch (spec_.id) {
        case ScenarioId::signal: simulate_signal(spec_, tr, rng); break;
        case ScenarioId::navigation: simulate_navigation(spec_, tr, rng); break;
        case ScenarioId::crossroad: simulate_crossroad(spec_, tr, rng, false); break;
        case ScenarioId::multi_agent_crossroad: simulate_crossroad(spec_, tr, rng, true); break;
    }
    return tr;
}

TrajectoryBatch Scenario::simulate(std::span<const double> s0, std::size_t count, std::uint64_t seed,
                                   Exec exec) const {
    check_initial_state(s0);
    TrajectoryBatch out(count, spec_.state_dim, spec_.horizon);
    parallel_for(count, exec, [&](std::size_t j) {
        const Trajectory tr = simulate_one(s0, derive_seed(seed, j));
        std::copy(tr.data().begin(), tr.data().end(), out.mutable_trajectory(j).begin());
    });
    return out;
}

State Scenario::sample_initial_state(Rng& rng) const {
    State s(spec_.state_dim);
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = rng.uniform(spec_.init_lo[i], spec_.init_hi[i]);
    return s;
}

int Scenario::exact_mode(TrajectoryView s) const {
    if (s.dim() != spec_.state_dim)
        throw DimensionError("trajectory dimension " + std::to_string(s.dim()) + " does not match scenario (" +
                             std::to_string(spec_.state_dim) + ")");
    if (s.horizon() == 0) throw DimensionError("empty trajectory");
    const std::size_t last = s.horizon() - 1;
    switch (spec_.id) {
        case ScenarioId::signal: {
            const double x = s.at(last, 0);
            int best = 0;
            for (int m = 1; m < 3; ++m)
                if (std::abs(x - kSignalEquilibria[m]) < std::abs(x - kSignalEquilibria[best])) best = m;
            return best + 1;
        }
        case ScenarioId::navigation: {
            std::array<double, 4> d;
            d.fill(std::numeric_limits<double>::infinity());
            for (std::size_t t = 0; t < s.horizon(); ++t)
                for (std::size_t m = 0; m < 4; ++m)
                    d[m] = std::min(d[m], std::hypot(s.at(t, 0) - kNavCorridorMidpoints[m].x,
                                                     s.at(t, 1) - kNavCorridorMidpoints[m].y));
            return static_cast<int>(std::min_element(d.begin(), d.end()) - d.begin()) + 1;
        }
        case ScenarioId::crossroad:
        case ScenarioId::multi_agent_crossroad: {
            const double x = s.at(last, 0);
            if (x <= kModeLeftMaxX) return 1;
            if (x <= kModeStraightMaxX) return 2;
            return 3;
        }
    }
    return 1;
}

stl::Formula Scenario::property(const std::string& id) const {
    auto it = spec_.properties.find(id);
    if (it == spec_.properties.end())
        throw ConfigError("property", "scenario " + to_string(spec_.id) + " has no property '" + id + "'");
    return stl::parse_formula(it->second, spec_.state_dim);
}

bool Scenario::pedestrian_observed(std::size_t step) const {
    if (spec_.id != ScenarioId::multi_agent_crossroad) return true;
    return step < spec_.occlusion_lo || step > spec_.occlusion_hi;
}

TrajectoryBatch simulate_trajectories(const Scenario& sc, std::span<const double> s0, std::size_t count,
                                      std::uint64_t seed, Exec exec) {
    return sc.simulate(s0, count, seed, exec);
}

int exact_mode(const Scenario& sc, TrajectoryView s) { return sc.exact_mode(s); }

}  // namespace qpm
