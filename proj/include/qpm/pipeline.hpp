#pragma once

// Stage drivers behind the qpm subcommands. Every artifact path carries a
// hash of the inputs that produced it, so a changed seed or setting never
// picks up a stale checkpoint or calibration record.
//
//   <data_dir>/<scenario>-<dataset key>/{train,calibration,test}.jsonl, manifest.json
//   <checkpoint_dir>/diffusion-<key>.ckpt, classifier-<key>.ckpt, train-<key>.json
//   <checkpoint_dir>/calibration-<key>.json
//   <report_dir>/report-<key>.json (+ CSVs), monitor-<key>.jsonl
//
// Each output gets the effective config next to it as <stem>.cfg.

#include <iosfwd>
#include <memory>

#include "qpm/config.hpp"
#include "qpm/conformal.hpp"
#include "qpm/eval.hpp"

namespace qpm {

class Pipeline {
public:
    /// Validates and resolves paths. `out` receives results, `log` progress.
    Pipeline(RunConfig cfg, std::ostream& out, std::ostream& log);

    const RunConfig& config() const noexcept { return cfg_; }
    const Scenario& scenario() const noexcept { return scenario_; }
    /// The configured property, parsed against the scenario's state dimension.
    const stl::Formula& formula() const noexcept { return phi_; }
    std::string property_name() const;

    std::string dataset_key() const;
    std::string surrogate_key() const;
    std::string predictor_key() const;
    std::string calibration_key() const;
    std::string report_key() const;

    std::filesystem::path dataset_dir() const;
    std::filesystem::path split_path(Split s) const;
    std::filesystem::path diffusion_path() const;
    std::filesystem::path classifier_path() const;
    std::filesystem::path calibration_path() const;
    std::filesystem::path report_path() const;

    DatasetTriple generate();
    void train();
    CalibrationRecord calibrate();
    /// Uses the stored calibration record unless `inline_calibration`, in which
    /// case the record is rebuilt (reusing cached samples) and not saved.
    MonitorResult monitor(const State& s0, bool inline_calibration);
    EvalReport evaluate();

    Dataset load_split(Split s) const;
    std::shared_ptr<const Surrogate> load_surrogate() const;
    std::shared_ptr<const ModePredictor> load_predictor() const;

private:
    void write_config(const std::filesystem::path& artifact) const;
    void check_horizon() const;

    RunConfig cfg_;
    Scenario scenario_;
    stl::Formula phi_;
    std::ostream& out_;
    std::ostream& log_;
};

/// "(-inf, inf) [degenerate]", "[lo, hi]" or "[mid, mid] [collapsed]".
std::string format_interval(const PredictionInterval& pi);
std::string format_union(std::span<const Segment> segments);
/// Parses "12.5" or "1.5,2,3" into a state.
State parse_state(const std::string& text);

}  // namespace qpm
