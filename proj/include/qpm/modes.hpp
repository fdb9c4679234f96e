#pragma once

// Mode predictors map a whole trajectory to a label in 1..G.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "qpm/dataset.hpp"
#include "qpm/nn.hpp"
#include "qpm/scenario.hpp"

namespace qpm {

class ModePredictor {
public:
    virtual ~ModePredictor() = default;
    virtual int mode_count() const = 0;
    virtual int predict(TrajectoryView s) const = 0;
    virtual std::string id() const = 0;

    std::vector<int> predict_batch(const TrajectoryBatch& batch, Exec exec = Exec::parallel) const;
};

/// Delegates to the scenario's rule-based labelling.
class ExactPredictor final : public ModePredictor {
public:
    explicit ExactPredictor(Scenario sc) : sc_(std::move(sc)) {}
    int mode_count() const override { return sc_.mode_count(); }
    int predict(TrajectoryView s) const override;
    std::string id() const override { return "exact-" + to_string(sc_.id()); }

private:
    Scenario sc_;
};

/// G = 1: every trajectory is mode 1. Used for the mode-agnostic collapse.
class SingleModePredictor final : public ModePredictor {
public:
    int mode_count() const override { return 1; }
    int predict(TrajectoryView) const override { return 1; }
    std::string id() const override { return "agnostic"; }
};

struct ClassifierHyper {
    std::size_t epochs = 300;
    double lr = 0.05;
    std::uint64_t seed = 0;
    double holdout = 0.1;
    /// Hidden widths; empty means multinomial logistic regression.
    std::vector<std::size_t> hidden;
};

struct ClassifierFit {
    std::vector<double> loss_trace;
    std::vector<double> accuracy_trace;  // held-out accuracy after each epoch
    std::size_t dropped_features = 0;
    std::vector<std::string> warnings;
};

/// Softmax classifier over z-scored flattened trajectories.
class ModeClassifier final : public ModePredictor {
public:
    ModeClassifier() = default;

    /// Fits on `data` with labels `labels` in 1..G. Full-batch Adam on
    /// cross-entropy; the last `holdout` fraction of a seeded shuffle is kept
    /// out and scored after every epoch.
    static ModeClassifier train(const TrajectoryBatch& data, const std::vector<int>& labels, int modes,
                                const ClassifierHyper& hyper, ClassifierFit* fit = nullptr,
                                Exec exec = Exec::parallel);

    int mode_count() const override { return modes_; }
    int predict(TrajectoryView s) const override;
    std::string id() const override { return "classifier-" + checkpoint_hash(); }

    std::vector<double> logits(TrajectoryView s) const;
    std::vector<double> probabilities(TrajectoryView s) const;
    double accuracy(const TrajectoryBatch& data, const std::vector<int>& labels) const;
    std::size_t feature_count() const noexcept { return kept_.size(); }
    const nn::Mlp& net() const noexcept { return net_; }

    nlohmann::json header() const;
    void save(const std::filesystem::path& path) const;
    static ModeClassifier load(const std::filesystem::path& path);
    std::string checkpoint_hash() const;

private:
    std::vector<double> features(TrajectoryView s) const;

    int modes_ = 0;
    std::size_t n_ = 0, h_ = 0;
    std::vector<std::size_t> kept_;  // indices into the flattened trajectory
    std::vector<double> mean_, std_;
    nn::Mlp net_;
    ClassifierHyper hyper_;
};

/// Numerically stable softmax.
std::vector<double> softmax(std::span<const double> logits);
/// Index (1-based) of the largest value, lowest index on ties.
int argmax_label(std::span<const double> values);

/// Index lists per mode (list g holds the trajectories labelled g + 1), in
/// input order.
std::vector<std::vector<std::size_t>> partition_by_mode(const std::vector<int>& labels, int modes);
std::vector<std::vector<std::size_t>> partition_by_mode(const ModePredictor& pred, const TrajectoryBatch& batch,
                                                        Exec exec = Exec::parallel);

struct KMeansResult {
    friend bool operator==(const KMeansResult&, const KMeansResult&) = default;
    std::vector<int> labels;                   // 1..G, clusters sorted by centroid (lexicographic)
    std::vector<std::vector<double>> centroids;
};

/// Lloyd iterations on terminal states with k-means++ seeding.
KMeansResult kmeans_terminal(const TrajectoryBatch& batch, int modes, std::uint64_t seed, std::size_t iterations = 100);


}  // namespace qpm
