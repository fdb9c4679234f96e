#pragma once

// Surrogates that sample the true conditional law, for checking the
// conformal layer independently of any learned model.

#include <cmath>
#include <string>

#include "qpm/rng.hpp"
#include "qpm/scenario.hpp"
#include "qpm/surrogate.hpp"

namespace fixtures {

class SimulatorSurrogate final : public qpm::Surrogate {
public:
    explicit SimulatorSurrogate(qpm::Scenario sc) : sc_(std::move(sc)) {}
    std::size_t state_dim() const override { return sc_.state_dim(); }
    std::size_t horizon() const override { return sc_.horizon(); }
    std::string id() const override { return "simulator-" + qpm::to_string(sc_.id()); }
    qpm::TrajectoryBatch sample(std::span<const double> s0, std::size_t k, std::uint64_t seed,
                                qpm::Exec exec = qpm::Exec::parallel) const override {
        return sc_.simulate(s0, k, seed, exec);
    }

private:
    qpm::Scenario sc_;
};

/// 1-D heteroscedastic regression y = sin(2x) + (0.1 + 0.5|x|) eps as a
/// two-step, two-coordinate trajectory (x, -1000) -> (x, y), so that
/// F[0,1](x1 > 0) has robustness exactly y.
class RegressionToy final : public qpm::Surrogate {
public:
    static constexpr const char* kFormula = "F[0,1] (x1 > 0)";
    std::size_t state_dim() const override { return 2; }
    std::size_t horizon() const override { return 2; }
    std::string id() const override { return "regression-toy"; }
    qpm::TrajectoryBatch sample(std::span<const double> s0, std::size_t k, std::uint64_t seed,
                                qpm::Exec = qpm::Exec::parallel) const override {
        qpm::TrajectoryBatch out(k, 2, 2);
        for (std::size_t j = 0; j < k; ++j) {
            qpm::Rng rng(qpm::derive_seed(seed, j));
            auto t = out.mutable_trajectory(j);
            t[0] = t[2] = s0[0];
            t[1] = s0[1];
            t[3] = std::sin(2 * s0[0]) + (0.1 + 0.5 * std::abs(s0[0])) * rng.normal();
        }
        return out;
    }

    /// `states` initial states x ~ U(-2, 2), `per_state` outcomes each.
    qpm::Dataset dataset(std::size_t states, std::size_t per_state, std::uint64_t seed) const {
        qpm::Dataset d;
        d.per_state = per_state;
        d.trajectories = qpm::TrajectoryBatch(0, 2, 2);
        for (std::size_t g = 0; g < states; ++g) {
            qpm::Rng rng(qpm::derive_seed(seed, {g, 0}));
            const qpm::State s0{rng.uniform(-2.0, 2.0), -1000.0};
            d.initial_states.push_back(s0);
            const auto b = sample(s0, per_state, qpm::derive_seed(seed, {g, 1}));
            for (std::size_t j = 0; j < per_state; ++j) {
                d.trajectories.push_back(b[j]);
                d.modes.push_back(1);
                d.seeds.push_back(0);
            }
        }
        return d;
    }
};

}  // namespace fixtures
