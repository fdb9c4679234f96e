#pragma once

// The four case-study processes. Dynamics are discrete-time, driven by one
// RNG stream per trajectory, so a trajectory is a pure function of
// (spec, s0, stream seed).
//
//   signal       n=1 H=45  triple-well drift, equilibria 5 / 12.5 / 20
//   navigation   n=2 H=30  waypoint follower in [1,29]^2 with four obstacles
//   crossroad    n=4 H=21  ego (x0,x1) turning left/straight/right, other car (x2,x3)
//   multi_agent  n=6 H=21  crossroad plus a pedestrian (x4,x5)

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qpm/kv.hpp"
#include "qpm/parallel.hpp"
#include "qpm/rng.hpp"
#include "qpm/stl.hpp"
#include "qpm/trajectory.hpp"

namespace qpm {

enum class ScenarioId { signal, navigation, crossroad, multi_agent_crossroad };

std::string to_string(ScenarioId id);
/// Accepts "signal", "navigation", "crossroad", "multi_agent_crossroad" (or "multi").
ScenarioId parse_scenario_id(std::string_view name);

struct ScenarioSpec {
    int version = 1;
    ScenarioId id = ScenarioId::signal;
    std::size_t state_dim = 1;
    std::size_t horizon = 45;
    int modes = 3;
    std::vector<double> init_lo, init_hi;    // uniform initial region (box)
    std::vector<double> state_lo, state_hi;  // admissible s0
    double noise_scale = 1.0;
    std::vector<double> route_probabilities;  // navigation corridors / crossroad routes
    double cross_probability = 0.5;           // pedestrian crossing (multi-agent)
    std::size_t occlusion_lo = 0, occlusion_hi = 0;
    std::map<std::string, std::string> properties;  // id -> formula text
    std::string default_property;

    static ScenarioSpec builtin(ScenarioId id);
    static ScenarioSpec from_kv(const KeyValues& kv);
    static ScenarioSpec load(const std::filesystem::path& path);
    std::string to_kv() const;
};

class Scenario {
public:
    explicit Scenario(ScenarioSpec spec);
    explicit Scenario(ScenarioId id) : Scenario(ScenarioSpec::builtin(id)) {}

    const ScenarioSpec& spec() const noexcept { return spec_; }
    ScenarioId id() const noexcept { return spec_.id; }
    std::size_t state_dim() const noexcept { return spec_.state_dim; }
    std::size_t horizon() const noexcept { return spec_.horizon; }
    int mode_count() const noexcept { return spec_.modes; }

    /// One trajectory from the RNG stream `stream_seed`; state 0 is s0 exactly.
    Trajectory simulate_one(std::span<const double> s0, std::uint64_t stream_seed) const;
    /// Trajectory j uses stream derive_seed(seed, j).
    TrajectoryBatch simulate(std::span<const double> s0, std::size_t count, std::uint64_t seed,
                             Exec exec = Exec::parallel) const;

    State sample_initial_state(Rng& rng) const;
    void check_initial_state(std::span<const double> s0) const;

    /// Rule-based mode label in 1..G; ties go to the lowest label.
    int exact_mode(TrajectoryView s) const;

    stl::Formula property(const std::string& id) const;
    stl::Formula default_property() const { return property(spec_.default_property); }

    /// Multi-agent only: false while the pedestrian is hidden from observation.
    bool pedestrian_observed(std::size_t step) const;

private:
    ScenarioSpec spec_;
};

/// Convenience wrappers matching the operation names.
TrajectoryBatch simulate_trajectories(const Scenario& sc, std::span<const double> s0, std::size_t count,
                                      std::uint64_t seed, Exec exec = Exec::parallel);
int exact_mode(const Scenario& sc, TrajectoryView s);

}  // namespace qpm
