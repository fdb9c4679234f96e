#pragma once

// Run configuration for the qpm tool. Resolution order: preset, then config
// file, then command-line overrides. Keys use the flat "section.key" names
// of KeyValues; to_kv() writes every field so a run can be replayed from it.

#include <cstdint>
#include <filesystem>
#include <string>

#include "qpm/dataset.hpp"
#include "qpm/kv.hpp"
#include "qpm/modes.hpp"
#include "qpm/surrogate.hpp"

namespace qpm {

enum class SurrogateKind { resample, diffusion };
enum class PredictorKind { exact, learned };

struct Seeds {
    std::uint64_t dataset = 1, training = 2, calibration = 3, test = 4;
};

struct RunConfig {
    std::string preset = "desk";
    ScenarioId scenario = ScenarioId::signal;
    std::string scenario_file;  // overrides the builtin spec when set
    std::string property;       // id in the scenario spec; empty = its default
    std::string formula;        // inline formula text; wins over property
    double alpha = 0.1;
    std::size_t k = 100;
    Seeds seeds;
    DatasetSizes sizes;

    SurrogateKind surrogate = SurrogateKind::resample;
    std::size_t k_nn = 100;
    DiffusionArch arch;
    TrainHyper train{600, 64, 1e-3};

    PredictorKind predictor = PredictorKind::exact;
    ClassifierHyper classifier;

    std::size_t rounds = 1;
    std::size_t cal_draw = 200;
    bool replacement = true;

    std::filesystem::path data_dir, checkpoint_dir, report_dir;
    int threads = 0;  // 0 = runtime default

    /// "desk" or "paper"; ConfigError("preset") otherwise.
    static RunConfig from_preset(const std::string& name);
    /// Starts from the preset named by kv["preset"] (desk if absent) and
    /// applies every other key. Unknown keys are a ConfigError.
    static RunConfig from_kv(const KeyValues& kv);
    void apply(const KeyValues& kv);
    /// Throws ConfigError naming the first bad field.
    void validate() const;
    /// Fills empty paths from $QPM_DATA_ROOT (default ./qpm-data).
    void resolve_paths();
    std::string to_kv() const;
};

std::filesystem::path data_root();
std::string to_string(SurrogateKind k);
std::string to_string(PredictorKind k);

}  // namespace qpm
