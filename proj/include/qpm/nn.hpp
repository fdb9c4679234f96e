#pragma once

// Small fully connected networks with hand-written reverse-mode gradients.
// Parameters live in one flat vector: for each layer, W (in x out, row-major)
// followed by b (out). Y = X W + b; hidden layers apply SiLU.

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <span>
#include <vector>

#include "qpm/parallel.hpp"

namespace qpm::nn {

double silu(double z);
double silu_grad(double z);

class Mlp {
public:
    Mlp() = default;
    /// widths = {input, hidden..., output}. Weights ~ N(0, 1/in), biases 0.
    Mlp(std::vector<std::size_t> widths, std::uint64_t seed);

    const std::vector<std::size_t>& widths() const noexcept { return widths_; }
    std::size_t input_dim() const { return widths_.front(); }
    std::size_t output_dim() const { return widths_.back(); }
    std::size_t layer_count() const { return widths_.size() - 1; }

    std::vector<double>& parameters() noexcept { return params_; }
    const std::vector<double>& parameters() const noexcept { return params_; }
    std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }
    std::size_t bias_offset(std::size_t layer) const {
        return offsets_[layer] + widths_[layer] * widths_[layer + 1];
    }

    /// Activations kept by forward() for backward(): z[l] pre-activation and
    /// a[l] input of layer l (a[0] is the network input).
    struct Tape {
        std::size_t rows = 0;
        std::vector<std::vector<double>> a, z;
    };

    /// x: rows x input_dim. y: rows x output_dim.
    void forward(std::span<const double> x, std::size_t rows, std::vector<double>& y, Tape* tape = nullptr,
                 Exec exec = Exec::parallel) const;
    /// Overwrites grad (size of parameters()) with dL/dtheta given dL/dy.
    void backward(const Tape& tape, std::span<const double> dy, std::vector<double>& grad,
                  Exec exec = Exec::parallel) const;

private:
    std::vector<std::size_t> widths_;
    std::vector<std::size_t> offsets_;
    std::vector<double> params_;
};

/// Adaptive-moment optimizer with bias correction.
class Adam {
public:
    Adam() = default;
    explicit Adam(std::size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

    void step(std::vector<double>& params, const std::vector<double>& grad);
    std::size_t steps() const noexcept { return t_; }

private:
    double lr_ = 1e-3, b1_ = 0.9, b2_ = 0.999, eps_ = 1e-8;
    std::vector<double> m_, v_;
    std::size_t t_ = 0;
};

/// Checkpoint container: "QPMCKPT\0", u64 header length, JSON header,
/// then the parameters as little-endian float64.
void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& header,
                      std::span<const double> params);
std::pair<nlohmann::json, std::vector<double>> read_checkpoint(const std::filesystem::path& path);
/// Serialised bytes of a checkpoint; used for content hashes.
std::string checkpoint_bytes(const nlohmann::json& header, std::span<const double> params);

}  // namespace qpm::nn
