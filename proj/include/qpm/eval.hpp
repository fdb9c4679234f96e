#pragma once

// Coverage, efficiency and EQR over a test set, with per-test-point
// bootstrap resampling of calibration groups.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "qpm/conformal.hpp"

namespace qpm {

/// Sum of lengths of the merged intervals; +inf if any endpoint is infinite.
double union_width(std::span<const PredictionInterval> intervals);
double union_width(std::span<const Segment> segments);

/// Q(1 - alpha/2) - Q(alpha/2) under the conformal quantile convention.
double eqr_width(std::span<const double> robustness, double alpha);

struct CoverageResult {
    std::vector<double> per_mode;       // state-averaged; 0 where count is 0
    std::vector<std::size_t> states;    // states contributing a ratio, per mode
    std::vector<std::size_t> skipped;   // states without trajectories of the mode
    double marginal = 0.0;              // union coverage, state-averaged
};

/// cpis[i] holds the G intervals of state i; robustness[i] and modes[i] the
/// values and labels of its trajectories.
CoverageResult coverage(const std::vector<std::vector<PredictionInterval>>& cpis,
                        const std::vector<std::vector<double>>& robustness,
                        const std::vector<std::vector<int>>& modes);

struct EvalConfig {
    double alpha = 0.1;
    std::size_t k = 100;
    std::size_t rounds = 1;
    /// Calibration groups drawn per test point; 0 means the whole pool.
    std::size_t cal_draw = 0;
    bool replacement = true;
    std::uint64_t seed = 0;       // calibration sampling
    std::uint64_t test_seed = 0;  // test sampling and bootstrap draws
};

struct IntervalRow {
    std::size_t state_index = 0;
    int mode = 0;
    double lo = 0, hi = 0;
    bool degenerate = false;
    friend bool operator==(const IntervalRow&, const IntervalRow&) = default;
};

struct ScatterRow {
    std::size_t state_index = 0, trajectory_index = 0;
    double robustness = 0;
    int mode = 0;
    bool covered = false;
    friend bool operator==(const ScatterRow&, const ScatterRow&) = default;
};

struct RoundTrace {
    std::vector<double> mode_coverage;
    std::vector<double> mode_coverage_exact;
    double union_coverage = 0;
    double efficiency = 0;
    std::size_t infinite_width = 0;
    double baseline_width = 0;
    double baseline_coverage = 0;
    friend bool operator==(const RoundTrace&, const RoundTrace&) = default;
};

struct EvalReport {
    int schema_version = 1;
    std::string scenario, property, formula, surrogate, predictor;
    double alpha = 0.1;
    std::size_t k = 0, rounds = 0, cal_draw = 0;
    bool replacement = true;
    std::uint64_t seed = 0, test_seed = 0;
    std::size_t cal_states = 0, cal_per_state = 0, test_states = 0, test_per_state = 0;
    int modes = 0;

    // Means over rounds of state-averaged fractions.
    std::vector<double> mode_coverage, mode_coverage_std;
    std::vector<double> mode_coverage_exact;  // trajectories grouped by exact mode
    std::vector<std::size_t> mode_states;     // (state, round) ratios behind mode_coverage
    std::vector<double> mode_infinite_fraction;
    std::vector<double> mode_tau_mean;        // over finite thresholds; inf if none
    double union_coverage = 0, union_coverage_std = 0;
    double efficiency = 0;                    // mean finite union width
    double efficiency_std = 0;
    std::size_t infinite_width = 0;           // (state, round) pairs with infinite union
    double eqr = 0;
    double conservativeness = 0;              // efficiency - eqr
    double baseline_width = 0, baseline_coverage = 0;
    std::size_t baseline_infinite = 0;
    std::vector<RoundTrace> traces;

    std::vector<IntervalRow> intervals;  // round 0
    std::vector<ScatterRow> scatter;     // round 0

    friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

struct EvalInputs {
    const Surrogate* surrogate = nullptr;
    const ModePredictor* predictor = nullptr;
    /// Labels test trajectories for the exact-mode coverage; may equal predictor.
    const ModePredictor* exact = nullptr;
    const Dataset* cal = nullptr;
    const Dataset* test = nullptr;
    stl::Formula phi = stl::Formula::truth();
    std::string property;
    std::string scenario;
};

/// Calibration groups sample as in calibration_table(cfg.seed). Test state i
/// samples with derive_seed(test_seed, {2, i}) and in round r draws its
/// calibration groups with derive_seed(test_seed, {3, r, i}).
EvalReport bootstrap_evaluate(const EvalInputs& in, const EvalConfig& cfg, Exec exec = Exec::parallel);

std::uint64_t test_sample_seed(std::uint64_t seed, std::size_t state);

/// Writes <stem>.json, <stem>_intervals.csv and <stem>_robustness.csv
/// atomically; `path` names the JSON file.
void emit_report(const EvalReport& r, const std::filesystem::path& path);
EvalReport read_report(const std::filesystem::path& path);
nlohmann::json report_json(const EvalReport& r);

/// Header plus one results row (and an exact-mode line when it differs).
std::string summary_table(const EvalReport& r);

}  // namespace qpm
