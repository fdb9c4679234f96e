#include "qpm/nn.hpp"

#include <cmath>
#include <cstring>

#include "qpm/dataset.hpp"
#include "qpm/error.hpp"
#include "qpm/kernels.hpp"
#include "qpm/rng.hpp"

namespace qpm::nn {

namespace {

constexpr char kCkptMagic[8] = {'Q', 'P', 'M', 'C', 'K', 'P', 'T', '\0'};

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

double silu(double z) { return z * sigmoid(z); }

double silu_grad(double z) {
    const double s = sigmoid(z);
    return s * (1.0 + z * (1.0 - s));
}

Mlp::Mlp(std::vector<std::size_t> widths, std::uint64_t seed) : widths_(std::move(widths)) {
    if (widths_.size() < 2) throw ConfigError("widths", "need at least input and output widths");
    std::size_t total = 0;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
        offsets_.push_back(total);
        total += widths_[l] * widths_[l + 1] + widths_[l + 1];
    }
    params_.assign(total, 0.0);
    Rng rng(seed);
    for (std::size_t l = 0; l < layer_count(); ++l) {
        const double scale = 1.0 / std::sqrt(static_cast<double>(widths_[l]));
        const std::size_t nw = widths_[l] * widths_[l + 1];
        for (std::size_t i = 0; i < nw; ++i) params_[offsets_[l] + i] = scale * rng.normal();
    }
}

void Mlp::forward(std::span<const double> x, std::size_t rows, std::vector<double>& y, Tape* tape,
                  Exec exec) const {
    const std::size_t layers = layer_count();
    std::vector<double> cur(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(rows * input_dim()));
    if (tape) {
        tape->rows = rows;
        tape->a.assign(layers, {});
        tape->z.assign(layers, {});
    }
    for (std::size_t l = 0; l < layers; ++l) {
        const std::size_t in = widths_[l], out = widths_[l + 1];
        std::vector<double> z(rows * out);
        kernels::matmul(cur, std::span<const double>(params_).subspan(offsets_[l], in * out), z, rows, in, out,
                        exec);
        kernels::add_row_vector(z, std::span<const double>(params_).subspan(bias_offset(l), out), rows, out);
        if (tape) tape->a[l] = std::move(cur);
        if (l + 1 < layers) {
            cur.resize(z.size());
            for (std::size_t i = 0; i < z.size(); ++i) cur[i] = silu(z[i]);
            if (tape) tape->z[l] = std::move(z);
        } else {
            cur = std::move(z);
        }
    }
    y = std::move(cur);
}

void Mlp::backward(const Tape& tape, std::span<const double> dy, std::vector<double>& grad, Exec exec) const {
    const std::size_t rows = tape.rows;
    grad.assign(params_.size(), 0.0);
    std::vector<double> delta(dy.begin(), dy.end());  // dL/dz of the current layer
    for (std::size_t l = layer_count(); l-- > 0;) {
        const std::size_t in = widths_[l], out = widths_[l + 1];
        kernels::matmul_at(tape.a[l], delta, std::span<double>(grad).subspan(offsets_[l], in * out), in, rows, out,
                           exec);
        kernels::column_sums(delta, std::span<double>(grad).subspan(bias_offset(l), out), rows, out);
        if (l == 0) break;
        std::vector<double> wt(in * out);
        kernels::transpose(std::span<const double>(params_).subspan(offsets_[l], in * out), wt, in, out);
        std::vector<double> da(rows * in);
        kernels::matmul(delta, wt, da, rows, out, in, exec);
        const auto& z = tape.z[l - 1];
        for (std::size_t i = 0; i < da.size(); ++i) da[i] *= silu_grad(z[i]);
        delta = std::move(da);
    }
}

void Adam::step(std::vector<double>& params, const std::vector<double>& grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i] = b1_ * m_[i] + (1.0 - b1_) * grad[i];
        v_[i] = b2_ * v_[i] + (1.0 - b2_) * grad[i] * grad[i];
        params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
}

std::string checkpoint_bytes(const nlohmann::json& header, std::span<const double> params) {
    const std::string text = header.dump();
    std::string out(kCkptMagic, sizeof kCkptMagic);
    const std::uint64_t len = text.size();
    out.append(reinterpret_cast<const char*>(&len), sizeof len);
    out += text;
    out.append(reinterpret_cast<const char*>(params.data()), params.size() * sizeof(double));
    return out;
}

void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& header,
                      std::span<const double> params) {
    atomic_write(path, checkpoint_bytes(header, params));
}

std::pair<nlohmann::json, std::vector<double>> read_checkpoint(const std::filesystem::path& path) {
    const std::string in = read_file(path);
    if (in.size() < 16 || std::memcmp(in.data(), kCkptMagic, sizeof kCkptMagic) != 0)
        throw IoError(path.string() + ": not a checkpoint");
    std::uint64_t len = 0;
    std::memcpy(&len, in.data() + 8, sizeof len);
    if (16 + len > in.size()) throw IoError(path.string() + ": truncated checkpoint header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(in.substr(16, len));
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path.string() + ": bad checkpoint header: " + e.what());
    }
    const std::size_t blob = in.size() - 16 - len;
    if (blob % sizeof(double) != 0) throw IoError(path.string() + ": parameter blob size is not a multiple of 8");
    std::vector<double> params(blob / sizeof(double));
    std::memcpy(params.data(), in.data() + 16 + len, blob);
    return {std::move(header), std::move(params)};
}

}  // namespace qpm::nn
