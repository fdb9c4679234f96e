#include <algorithm>
#include <cmath>
#include <numeric>

#include "qpm/error.hpp"
#include "qpm/rng.hpp"
#include "qpm/surrogate.hpp"

namespace qpm {

namespace {

constexpr std::size_t kSampleChunk = 512;
constexpr int kCheckpointVersion = 1;

}  // namespace

NoiseSchedule NoiseSchedule::linear(std::size_t steps, double beta_first, double beta_last) {
    if (steps == 0) throw ConfigError("steps", "must be positive");
    std::vector<double> b(steps);
    for (std::size_t i = 0; i < steps; ++i)
        b[i] = steps == 1 ? beta_first
                          : beta_first + (beta_last - beta_first) * static_cast<double>(i) /
                                             static_cast<double>(steps - 1);
    return from_betas(std::move(b));
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
    NoiseSchedule s;
    double prod = 1.0;
    for (double b : betas) {
        if (!(b > 0.0 && b < 1.0)) throw ConfigError("beta", "every beta must lie in (0, 1)");
        prod *= 1.0 - b;
        s.alpha_bar.push_back(prod);
    }
    s.beta = std::move(betas);
    return s;
}

double NoiseSchedule::posterior_variance(std::size_t tau) const {
    if (tau == 1) return beta_at(1);
    return beta_at(tau) * (1.0 - alpha_bar_at(tau - 1)) / (1.0 - alpha_bar_at(tau));
}

std::vector<double> forward_diffuse(std::span<const double> x0, std::size_t tau, std::span<const double> eps,
                                    const NoiseSchedule& schedule) {
    if (tau < 1 || tau > schedule.steps())
        throw DomainError("diffusion step " + std::to_string(tau) + " outside [1, " +
                          std::to_string(schedule.steps()) + "]");
    if (x0.size() != eps.size()) throw DimensionError("x0 and eps differ in length");
    const double a = std::sqrt(schedule.alpha_bar_at(tau));
    const double b = std::sqrt(1.0 - schedule.alpha_bar_at(tau));
    std::vector<double> out(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * eps[i];
    return out;
}

std::vector<double> step_embedding(std::size_t tau, std::size_t dim) {
    std::vector<double> e(dim, 0.0);
    const std::size_t half = dim / 2;
    for (std::size_t k = 0; k < half; ++k) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
        e[k] = std::sin(static_cast<double>(tau) * freq);
        e[half + k] = std::cos(static_cast<double>(tau) * freq);
    }
    return e;
}

DiffusionModel::DiffusionModel(std::size_t state_dim, std::size_t horizon, DiffusionArch arch,
                               std::uint64_t init_seed)
    : n_(state_dim), h_(horizon), arch_(std::move(arch)), init_seed_(init_seed) {
    if (h_ < 2) throw ConfigError("horizon", "diffusion surrogate needs H >= 2");
    schedule_ = NoiseSchedule::linear(arch_.steps, arch_.beta_first, arch_.beta_last);
    std::vector<std::size_t> widths{suffix_dim() + arch_.embed_dim + n_ * (1 + 2 * arch_.cond_frequencies)};
    widths.insert(widths.end(), arch_.hidden.begin(), arch_.hidden.end());
    widths.push_back(suffix_dim());
    net_ = nn::Mlp(widths, init_seed);
    mean_.assign(suffix_dim(), 0.0);
    std_.assign(suffix_dim(), 1.0);
    cond_mean_.assign(n_, 0.0);
    cond_std_.assign(n_, 1.0);
}

void DiffusionModel::input_row(std::span<const double> x_tau, std::size_t tau, std::span<const double> s0,
                               std::span<double> out) const {
    const std::size_t d = suffix_dim();
    std::copy(x_tau.begin(), x_tau.end(), out.begin());
    const auto emb = step_embedding(tau, arch_.embed_dim);
    std::copy(emb.begin(), emb.end(), out.begin() + static_cast<std::ptrdiff_t>(d));
    std::size_t pos = d + arch_.embed_dim;
    for (std::size_t i = 0; i < n_; ++i) {
        const double z = (s0[i] - cond_mean_[i]) / cond_std_[i];
        out[pos++] = z;
        double w = 1.0;
        for (std::size_t f = 0; f < arch_.cond_frequencies; ++f, w *= 2.0) {
            out[pos++] = std::sin(w * z);
            out[pos++] = std::cos(w * z);
        }
    }
}

double DiffusionModel::loss(std::span<const double> x, std::span<const double> target, std::size_t rows,
                            std::vector<double>* grad, Exec exec) const {
    std::vector<double> y;
    nn::Mlp::Tape tape;
    net_.forward(x, rows, y, grad ? &tape : nullptr, exec);
    const double scale = 1.0 / static_cast<double>(rows * suffix_dim());
    double sum = 0.0;
    std::vector<double> dy(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double r = y[i] - target[i];
        sum += r * r;
        dy[i] = 2.0 * r * scale;
    }
    if (grad) net_.backward(tape, dy, *grad, exec);
    return sum * scale;
}

std::vector<double> DiffusionModel::train(const Dataset& data, const TrainHyper& hyper, Exec exec,
                                          const std::function<void(std::size_t, double)>& progress) {
    if (data.size() == 0) throw DomainError("empty training set");
    if (data.trajectories.dim() != n_ || data.trajectories.horizon() != h_)
        throw DimensionError("training trajectories do not match the model's (n, H)");
    if (hyper.batch == 0) throw ConfigError("batch", "must be positive");
    if (!(hyper.lr > 0)) throw ConfigError("lr", "must be positive");

    const std::size_t m = data.size(), d = suffix_dim();
    // Per-coordinate z-scores of the suffix and of the conditioning state.
    std::vector<double> mean(d, 0.0), var(d, 0.0), cmean(n_, 0.0), cvar(n_, 0.0);
    for (std::size_t k = 0; k < m; ++k) {
        const auto s = data.trajectories[k].data();
        for (std::size_t j = 0; j < d; ++j) mean[j] += s[n_ + j];
        for (std::size_t i = 0; i < n_; ++i) cmean[i] += s[i];
    }
    for (auto& v : mean) v /= static_cast<double>(m);
    for (auto& v : cmean) v /= static_cast<double>(m);
    for (std::size_t k = 0; k < m; ++k) {
        const auto s = data.trajectories[k].data();
        for (std::size_t j = 0; j < d; ++j) var[j] += (s[n_ + j] - mean[j]) * (s[n_ + j] - mean[j]);
        for (std::size_t i = 0; i < n_; ++i) cvar[i] += (s[i] - cmean[i]) * (s[i] - cmean[i]);
    }
    auto to_std = [&](double v, double mu) {
        const double sd = std::sqrt(v / static_cast<double>(m));
        return sd > 1e-9 * (1.0 + std::abs(mu)) ? sd : 1.0;
    };
    mean_ = mean;
    cond_mean_ = cmean;
    for (std::size_t j = 0; j < d; ++j) std_[j] = to_std(var[j], mean[j]);
    for (std::size_t i = 0; i < n_; ++i) cond_std_[i] = to_std(cvar[i], cmean[i]);

    std::vector<double> x0(m * d);
    for (std::size_t k = 0; k < m; ++k) {
        const auto s = data.trajectories[k].data();
        for (std::size_t j = 0; j < d; ++j) x0[k * d + j] = (s[n_ + j] - mean_[j]) / std_[j];
    }

    hyper_ = hyper;
    fitted_ = true;
    loss_trace_.clear();
    if (!(hyper.ema_decay >= 0.0 && hyper.ema_decay < 1.0)) throw ConfigError("ema_decay", "must lie in [0, 1)");
    nn::Adam adam(net_.parameters().size(), hyper.lr);
    std::vector<double> ema = net_.parameters();
    const std::size_t in = net_.input_dim();
    std::vector<std::size_t> order(m);
    std::vector<double> x, target, grad, eps(d);
    for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
        Rng rng(derive_seed(hyper.seed, epoch));
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = m; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < m; start += hyper.batch) {
            const std::size_t rows = std::min(hyper.batch, m - start);
            x.assign(rows * in, 0.0);
            target.assign(rows * d, 0.0);
            for (std::size_t r = 0; r < rows; ++r) {
                const std::size_t k = order[start + r];
                const std::size_t tau = 1 + rng.below(schedule_.steps());
                for (auto& e : eps) e = rng.normal();
                const auto xt = forward_diffuse(std::span<const double>(x0).subspan(k * d, d), tau, eps, schedule_);
                input_row(xt, tau, data.trajectories[k].state(0), std::span<double>(x).subspan(r * in, in));
                if (arch_.prediction == Prediction::x0)
                    std::copy(x0.begin() + static_cast<std::ptrdiff_t>(k * d),
                              x0.begin() + static_cast<std::ptrdiff_t>((k + 1) * d),
                              target.begin() + static_cast<std::ptrdiff_t>(r * d));
                else
                    std::copy(eps.begin(), eps.end(), target.begin() + static_cast<std::ptrdiff_t>(r * d));
            }
            const double l = loss(x, target, rows, &grad, exec);
            if (!std::isfinite(l))
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) +
                                    "; the learning rate is probably too high");
            adam.step(net_.parameters(), grad);
            if (hyper.ema_decay > 0.0) {
                // Warm-up keeps short runs from averaging in the initialization.
                const double t = static_cast<double>(adam.steps());
                const double decay = std::min(hyper.ema_decay, (1.0 + t) / (10.0 + t));
                const auto& p = net_.parameters();
                for (std::size_t i = 0; i < p.size(); ++i) ema[i] = decay * ema[i] + (1.0 - decay) * p[i];
            }
            epoch_loss += l * static_cast<double>(rows);
        }
        loss_trace_.push_back(epoch_loss / static_cast<double>(m));
        if (progress) progress(epoch, loss_trace_.back());
    }
    if (hyper.ema_decay > 0.0) net_.parameters() = std::move(ema);
    return loss_trace_;
}

TrajectoryBatch DiffusionModel::sample(std::span<const double> s0, std::size_t k, std::uint64_t seed,
                                       Exec exec) const {
    if (!fitted_) throw DomainError("diffusion model has not been trained");
    if (s0.size() != n_)
        throw DimensionError("initial state has " + std::to_string(s0.size()) + " coordinates, model expects " +
                             std::to_string(n_));
    const std::size_t d = suffix_dim(), in = net_.input_dim();
    TrajectoryBatch out(k, n_, h_);
    std::vector<double> x, inputs, eps_hat;
    for (std::size_t start = 0; start < k; start += kSampleChunk) {
        const std::size_t rows = std::min(kSampleChunk, k - start);
        std::vector<Rng> rngs;
        rngs.reserve(rows);
        for (std::size_t r = 0; r < rows; ++r) rngs.emplace_back(derive_seed(seed, start + r));
        x.assign(rows * d, 0.0);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) x[r * d + j] = rngs[r].normal();
        inputs.assign(rows * in, 0.0);
        for (std::size_t tau = schedule_.steps(); tau >= 1; --tau) {
            for (std::size_t r = 0; r < rows; ++r)
                input_row(std::span<const double>(x).subspan(r * d, d), tau, s0,
                          std::span<double>(inputs).subspan(r * in, in));
            net_.forward(inputs, rows, eps_hat, nullptr, exec);
            if (arch_.prediction == Prediction::x0) {
                const double sa = std::sqrt(schedule_.alpha_bar_at(tau));
                const double sb = std::sqrt(1.0 - schedule_.alpha_bar_at(tau));
                for (std::size_t i = 0; i < eps_hat.size(); ++i) eps_hat[i] = (x[i] - sa * eps_hat[i]) / sb;
            }
            const double beta = schedule_.beta_at(tau);
            const double c_eps = beta / std::sqrt(1.0 - schedule_.alpha_bar_at(tau));
            const double c_scale = 1.0 / std::sqrt(1.0 - beta);
            const double sigma = std::sqrt(schedule_.posterior_variance(tau));
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < d; ++j) {
                    double& v = x[r * d + j];
                    v = (v - c_eps * eps_hat[r * d + j]) * c_scale + sigma * rngs[r].normal();
                }
        }
        for (std::size_t r = 0; r < rows; ++r) {
            auto dst = out.mutable_trajectory(start + r);
            std::copy(s0.begin(), s0.end(), dst.begin());
            for (std::size_t j = 0; j < d; ++j) dst[n_ + j] = x[r * d + j] * std_[j] + mean_[j];
        }
    }
    return out;
}

nlohmann::json DiffusionModel::header() const {
    return {{"format", "qpm-checkpoint"},
            {"version", kCheckpointVersion},
            {"kind", "diffusion"},
            {"architecture",
             {{"state_dim", n_},
              {"horizon", h_},
              {"hidden", arch_.hidden},
              {"embed_dim", arch_.embed_dim},
              {"cond_frequencies", arch_.cond_frequencies},
              {"activation", "silu"},
              {"prediction", arch_.prediction == Prediction::x0 ? "x0" : "epsilon"},
              {"widths", net_.widths()},
              {"init_seed", init_seed_}}},
            {"schedule", {{"steps", arch_.steps}, {"beta_first", arch_.beta_first}, {"beta_last", arch_.beta_last}}},
            {"normalization", {{"mean", mean_}, {"std", std_}, {"cond_mean", cond_mean_}, {"cond_std", cond_std_}}},
            {"training",
             {{"fitted", fitted_},
              {"epochs", hyper_.epochs},
              {"batch", hyper_.batch},
              {"lr", hyper_.lr},
              {"seed", hyper_.seed},
              {"ema_decay", hyper_.ema_decay},
              {"loss_trace", loss_trace_}}},
            {"parameter_count", net_.parameters().size()}};
}

void DiffusionModel::save(const std::filesystem::path& path) const {
    nn::write_checkpoint(path, header(), net_.parameters());
}

std::string DiffusionModel::checkpoint_hash() const {
    return content_hash(nn::checkpoint_bytes(header(), net_.parameters()));
}

std::string DiffusionModel::id() const { return "diffusion-" + checkpoint_hash(); }

DiffusionModel DiffusionModel::load(const std::filesystem::path& path) {
    auto [h, params] = nn::read_checkpoint(path);
    try {
        if (h.at("kind") != "diffusion") throw IoError(path.string() + ": not a diffusion checkpoint");
        if (h.at("version").get<int>() != kCheckpointVersion)
            throw IoError(path.string() + ": unsupported checkpoint version");
        const auto& a = h.at("architecture");
        DiffusionArch arch;
        arch.hidden = a.at("hidden").get<std::vector<std::size_t>>();
        arch.prediction = a.at("prediction").get<std::string>() == "x0" ? Prediction::x0 : Prediction::epsilon;
        arch.embed_dim = a.at("embed_dim").get<std::size_t>();
        arch.cond_frequencies = a.at("cond_frequencies").get<std::size_t>();
        const auto& s = h.at("schedule");
        arch.steps = s.at("steps").get<std::size_t>();
        arch.beta_first = s.at("beta_first").get<double>();
        arch.beta_last = s.at("beta_last").get<double>();
        DiffusionModel m(a.at("state_dim").get<std::size_t>(), a.at("horizon").get<std::size_t>(), arch,
                         a.at("init_seed").get<std::uint64_t>());
        if (params.size() != m.net_.parameters().size())
            throw IoError(path.string() + ": parameter count does not match the architecture");
        m.net_.parameters() = std::move(params);
        const auto& nz = h.at("normalization");
        m.mean_ = nz.at("mean").get<std::vector<double>>();
        m.std_ = nz.at("std").get<std::vector<double>>();
        m.cond_mean_ = nz.at("cond_mean").get<std::vector<double>>();
        m.cond_std_ = nz.at("cond_std").get<std::vector<double>>();
        const auto& t = h.at("training");
        m.fitted_ = t.at("fitted").get<bool>();
        m.hyper_.epochs = t.at("epochs").get<std::size_t>();
        m.hyper_.batch = t.at("batch").get<std::size_t>();
        m.hyper_.lr = t.at("lr").get<double>();
        m.hyper_.seed = t.at("seed").get<std::uint64_t>();
        m.hyper_.ema_decay = t.at("ema_decay").get<double>();
        m.loss_trace_ = t.at("loss_trace").get<std::vector<double>>();
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path.string() + ": malformed checkpoint header: " + e.what());
    }
}

}  // namespace qpm
