#pragma once

// Conditional generators p(s | s(0)). Both implementations return K
// trajectories of length H whose state 0 is s0 exactly, and are pure
// functions of (s0, K, seed).

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "qpm/dataset.hpp"
#include "qpm/nn.hpp"

namespace qpm {

class Surrogate {
public:
    virtual ~Surrogate() = default;
    virtual std::size_t state_dim() const = 0;
    virtual std::size_t horizon() const = 0;
    /// Stable identifier of the fitted surrogate (used for cache keys).
    virtual std::string id() const = 0;
    virtual TrajectoryBatch sample(std::span<const double> s0, std::size_t k, std::uint64_t seed,
                                   Exec exec = Exec::parallel) const = 0;
};

/// Model-free surrogate: the k_nn pool trajectories whose initial states are
/// nearest to s0, resampled with replacement and translated to start at s0.
class ResampleSurrogate final : public Surrogate {
public:
    ResampleSurrogate(Dataset pool, std::size_t k_nn);

    std::size_t state_dim() const override { return pool_.trajectories.dim(); }
    std::size_t horizon() const override { return pool_.trajectories.horizon(); }
    std::string id() const override { return id_; }
    TrajectoryBatch sample(std::span<const double> s0, std::size_t k, std::uint64_t seed,
                           Exec exec = Exec::parallel) const override;

    /// Pool indices of the k_nn nearest initial states (ties by index).
    std::vector<std::size_t> neighbours(std::span<const double> s0) const;
    /// Pool indices drawn by sample() for the same arguments.
    std::vector<std::size_t> draw(std::span<const double> s0, std::size_t k, std::uint64_t seed) const;

private:
    Dataset pool_;
    std::size_t k_nn_;
    std::string id_;
};

TrajectoryBatch resample_surrogate(const Dataset& pool, std::span<const double> s0, std::size_t k,
                                   std::size_t k_nn, std::uint64_t seed);

struct NoiseSchedule {
    std::vector<double> beta;       // beta[tau - 1]
    std::vector<double> alpha_bar;  // alpha_bar[tau - 1]

    static NoiseSchedule linear(std::size_t steps, double beta_first, double beta_last);
    static NoiseSchedule from_betas(std::vector<double> betas);

    std::size_t steps() const noexcept { return beta.size(); }
    double beta_at(std::size_t tau) const { return beta.at(tau - 1); }
    double alpha_bar_at(std::size_t tau) const { return alpha_bar.at(tau - 1); }
    /// beta_tau (1 - abar_{tau-1}) / (1 - abar_tau); beta_1 at tau = 1.
    double posterior_variance(std::size_t tau) const;
};

/// sqrt(abar_tau) x0 + sqrt(1 - abar_tau) eps. Throws DomainError unless 1 <= tau <= steps.
std::vector<double> forward_diffuse(std::span<const double> x0, std::size_t tau, std::span<const double> eps,
                                    const NoiseSchedule& schedule);

/// Sinusoidal embedding of the diffusion step.
std::vector<double> step_embedding(std::size_t tau, std::size_t dim);

/// What the network output means. With `x0` the net predicts the clean
/// suffix and eps_theta = (x_tau - sqrt(abar) x0_hat) / sqrt(1 - abar); the
/// squared error on x0 is the eps loss reweighted by (1 - abar) / abar.
enum class Prediction { epsilon, x0 };

struct DiffusionArch {
    std::vector<std::size_t> hidden{256, 256, 256};
    Prediction prediction = Prediction::x0;
    std::size_t embed_dim = 16;
    /// Extra sin/cos features of the z-scored conditioning state (0 = raw only).
    std::size_t cond_frequencies = 0;
    std::size_t steps = 100;
    double beta_first = 1e-4;
    double beta_last = 0.1;
};

struct TrainHyper {
    std::size_t epochs = 200;
    std::size_t batch = 512;
    double lr = 5e-4;
    std::uint64_t seed = 0;
    /// Exponential moving average of the weights, with decay
    /// min(ema_decay, (1 + t) / (10 + t)) at step t; the averaged weights
    /// become the model's parameters after training. 0 keeps the raw iterate.
    double ema_decay = 0.999;
};

class DiffusionModel final : public Surrogate {
public:
    DiffusionModel() = default;
    DiffusionModel(std::size_t state_dim, std::size_t horizon, DiffusionArch arch, std::uint64_t init_seed);

    std::size_t state_dim() const override { return n_; }
    std::size_t horizon() const override { return h_; }
    std::string id() const override;
    TrajectoryBatch sample(std::span<const double> s0, std::size_t k, std::uint64_t seed,
                           Exec exec = Exec::parallel) const override;

    /// Fits normalisation on `train`, then runs Adam on the noise-prediction
    /// loss. Returns the per-epoch mean loss; throws TrainingError on a
    /// non-finite loss. `progress` (optional) is called after every epoch.
    std::vector<double> train(const Dataset& train, const TrainHyper& hyper, Exec exec = Exec::parallel,
                              const std::function<void(std::size_t, double)>& progress = {});

    bool fitted() const noexcept { return fitted_; }
    const NoiseSchedule& schedule() const noexcept { return schedule_; }
    const nn::Mlp& net() const noexcept { return net_; }
    nn::Mlp& net() noexcept { return net_; }
    const std::vector<double>& loss_trace() const noexcept { return loss_trace_; }

    /// Suffix dimension (H-1)*n and full network input size.
    std::size_t suffix_dim() const noexcept { return (h_ - 1) * n_; }

    /// Training loss on given inputs; exposed for gradient checks.
    /// x: rows of [x_tau | embedding | conditioning], target: rows of eps or
    /// x0 depending on the prediction mode.
    double loss(std::span<const double> x, std::span<const double> target, std::size_t rows,
                std::vector<double>* grad, Exec exec = Exec::serial) const;
    /// Assembles one network input row from a normalised noisy suffix.
    void input_row(std::span<const double> x_tau, std::size_t tau, std::span<const double> s0,
                   std::span<double> out) const;
    const DiffusionArch& arch() const noexcept { return arch_; }

    nlohmann::json header() const;
    void save(const std::filesystem::path& path) const;
    static DiffusionModel load(const std::filesystem::path& path);
    std::string checkpoint_hash() const;

private:
    std::size_t n_ = 0, h_ = 0;
    DiffusionArch arch_;
    std::uint64_t init_seed_ = 0;
    NoiseSchedule schedule_;
    nn::Mlp net_;
    std::vector<double> mean_, std_;            // per suffix coordinate
    std::vector<double> cond_mean_, cond_std_;  // per state coordinate
    bool fitted_ = false;
    TrainHyper hyper_;
    std::vector<double> loss_trace_;
};

/// FNV-1a 64-bit hash, hex encoded.
std::string content_hash(std::string_view bytes);

}  // namespace qpm
