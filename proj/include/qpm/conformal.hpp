#pragma once

// Split-conformal calibration of quantile intervals over STL robustness,
// one threshold per mode.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "qpm/dataset.hpp"
#include "qpm/modes.hpp"
#include "qpm/stl.hpp"
#include "qpm/surrogate.hpp"

namespace qpm {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct PredictionInterval {
    double lo = -kInf, hi = kInf;
    int mode = 0;  // 0 = mode-agnostic
    std::size_t k_mode = 0;
    std::size_t cal_size = 0;
    /// Infinite because no samples survived or the threshold is +inf.
    bool degenerate = false;
    /// Negative threshold pushed lo past hi; [mid, mid] marks an empty set.
    bool collapsed = false;

    bool finite() const noexcept { return lo > -kInf && hi < kInf; }
    bool contains(double t) const noexcept { return !collapsed && lo <= t && t <= hi; }
    friend bool operator==(const PredictionInterval&, const PredictionInterval&) = default;
};

/// 1-based rank max(1, ceil(p m)) of the empirical p-quantile of m values.
std::size_t quantile_rank(double p, std::size_t m);
double empirical_quantile(std::vector<double> values, double p);
double empirical_quantile_sorted(std::span<const double> sorted, double p);

/// [Q(alpha/2), Q(1 - alpha/2)] of the given robustness values; the infinite
/// degenerate interval if there are none.
PredictionInterval quantile_interval(std::span<const double> robustness, double alpha, int mode = 0);

/// max(lo - t, t - hi); -inf for an infinite interval.
double nonconformity_score(const PredictionInterval& pi, double t);

/// r-th smallest score with r = ceil((n + 1)(1 - alpha)); +inf if r > n.
double calibrate_threshold(std::vector<double> scores, double alpha);

PredictionInterval conformalized_interval(const PredictionInterval& pi, double tau);

struct Segment {
    double lo, hi;
    friend bool operator==(const Segment&, const Segment&) = default;
};
/// Disjoint sorted segments covering the union; collapsed intervals are empty.
std::vector<Segment> interval_union(std::span<const PredictionInterval> intervals);

/// Per-mode intervals from one labelled sample: interval g holds the
/// quantiles of the samples labelled g + 1.
std::vector<PredictionInterval> mode_intervals(std::span<const int> labels, std::span<const double> robustness,
                                               int modes, double alpha);

/// Surrogate samples keyed by (s0, surrogate id, K, seed). Thread-safe; with a
/// directory, batches are also persisted there and reused across processes.
class SampleCache {
public:
    explicit SampleCache(std::filesystem::path dir = {}) : dir_(std::move(dir)) {}
    TrajectoryBatch get(const Surrogate& surrogate, std::span<const double> s0, std::size_t k, std::uint64_t seed,
                        Exec exec = Exec::parallel);
    std::size_t hits() const;
    std::size_t misses() const;
    static std::string key(const std::string& surrogate_id, std::span<const double> s0, std::size_t k,
                           std::uint64_t seed);

private:
    std::filesystem::path dir_;
    mutable std::mutex mu_;
    std::map<std::string, std::shared_ptr<const TrajectoryBatch>> mem_;
    std::size_t hits_ = 0, misses_ = 0;
};

/// Samples K trajectories at s0, keeps those the predictor maps to `mode`, and
/// returns the quantile interval of their robustness.
PredictionInterval mode_prediction_interval(const Surrogate& surrogate, const ModePredictor& predictor,
                                            std::span<const double> s0, const stl::Formula& phi, int mode,
                                            double alpha, std::size_t k, std::uint64_t seed,
                                            Exec exec = Exec::parallel);

struct ModeCalibration {
    int mode = 0;
    std::size_t n = 0;
    double tau = kInf;
    std::vector<double> scores;  // may be empty when elided on disk
    friend bool operator==(const ModeCalibration&, const ModeCalibration&) = default;
};

struct CalibrationRecord {
    double alpha = 0.1;
    std::string property;
    std::string formula;
    std::string surrogate_id;
    std::string predictor_id;
    std::size_t k = 0;
    std::uint64_t seed = 0;
    std::vector<ModeCalibration> modes;

    std::vector<double> taus() const;
    /// Scores are elided for modes with more than `max_scores` of them.
    nlohmann::json to_json(std::size_t max_scores = 1'000'000) const;
    static CalibrationRecord from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& path, std::size_t max_scores = 1'000'000) const;
    static CalibrationRecord load(const std::filesystem::path& path);
    std::string hash() const;
    friend bool operator==(const CalibrationRecord&, const CalibrationRecord&) = default;
};

/// Scores of every calibration trajectory, kept per calibration group so
/// thresholds can be rebuilt from resampled groups.
struct CalibrationTable {
    int modes = 0;
    std::vector<std::vector<std::vector<double>>> scores;  // [group][mode - 1]
    std::vector<std::vector<double>> baseline;             // [group], mode-agnostic

    std::size_t groups() const noexcept { return scores.size(); }
    std::vector<double> pooled(std::span<const std::size_t> groups, int mode) const;
    std::vector<double> pooled_baseline(std::span<const std::size_t> groups) const;
};

/// Calibration group g samples K trajectories at its initial state with seed
/// derive_seed(seed, {1, g}).
std::uint64_t calibration_sample_seed(std::uint64_t seed, std::size_t group);

CalibrationTable calibration_table(const Surrogate& surrogate, const ModePredictor& predictor, const Dataset& cal,
                                   const stl::Formula& phi, double alpha, std::size_t k, std::uint64_t seed,
                                   Exec exec = Exec::parallel, SampleCache* cache = nullptr);

struct MonitorResult {
    State s0;
    std::vector<PredictionInterval> raw;        // per mode, before calibration
    std::vector<PredictionInterval> intervals;  // per mode, conformalized
    std::vector<Segment> segments;              // union of intervals
    std::vector<double> taus;
};

class CalibratedMonitor {
public:
    CalibratedMonitor(std::shared_ptr<const Surrogate> surrogate, std::shared_ptr<const ModePredictor> predictor,
                      stl::Formula phi, CalibrationRecord record);

    const CalibrationRecord& record() const noexcept { return record_; }
    const stl::Formula& formula() const noexcept { return phi_; }
    int mode_count() const noexcept { return predictor_->mode_count(); }

    /// Fresh surrogate samples at s0 drawn with `seed`.
    MonitorResult monitor(std::span<const double> s0, std::uint64_t seed, Exec exec = Exec::parallel,
                          SampleCache* cache = nullptr) const;

private:
    std::shared_ptr<const Surrogate> surrogate_;
    std::shared_ptr<const ModePredictor> predictor_;
    stl::Formula phi_;
    CalibrationRecord record_;
};

CalibratedMonitor build_monitor(std::shared_ptr<const Surrogate> surrogate,
                                std::shared_ptr<const ModePredictor> predictor, const Dataset& cal,
                                const stl::Formula& phi, const std::string& property, double alpha, std::size_t k,
                                std::uint64_t seed, Exec exec = Exec::parallel, SampleCache* cache = nullptr);

MonitorResult monitor_state(const CalibratedMonitor& monitor, std::span<const double> s0, std::uint64_t seed,
                            Exec exec = Exec::parallel, SampleCache* cache = nullptr);

/// One JSON line per mode: {s0, mode, lo, hi, tau, K_mode, degenerate, collapsed}.
std::string to_jsonl(const MonitorResult& r);

/// Mode-agnostic CQR written without any mode machinery; must agree with
/// the G = 1 pipeline bit for bit.
namespace baseline {

std::vector<double> scores(const Surrogate& surrogate, const Dataset& cal, const stl::Formula& phi, double alpha,
                           std::size_t k, std::uint64_t seed, Exec exec = Exec::parallel);
double threshold(const Surrogate& surrogate, const Dataset& cal, const stl::Formula& phi, double alpha,
                 std::size_t k, std::uint64_t seed, Exec exec = Exec::parallel);
PredictionInterval interval(const Surrogate& surrogate, std::span<const double> s0, const stl::Formula& phi,
                            double alpha, double tau, std::size_t k, std::uint64_t seed, Exec exec = Exec::parallel);

}  // namespace baseline

}  // namespace qpm
