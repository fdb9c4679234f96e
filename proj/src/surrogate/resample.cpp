#include <algorithm>
#include <numeric>

#include "qpm/error.hpp"
#include "qpm/surrogate.hpp"

namespace qpm {

std::string content_hash(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    static constexpr char digits[] = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i, h >>= 4) out[static_cast<std::size_t>(i)] = digits[h & 0xf];
    return out;
}

ResampleSurrogate::ResampleSurrogate(Dataset pool, std::size_t k_nn) : pool_(std::move(pool)), k_nn_(k_nn) {
    if (pool_.size() == 0) throw DomainError("resampling surrogate needs a non-empty pool");
    if (k_nn_ == 0 || k_nn_ > pool_.size())
        throw ConfigError("k_nn", "must be in [1, " + std::to_string(pool_.size()) + "]");
    const auto& d = pool_.trajectories.data();
    id_ = "resample-k" + std::to_string(k_nn_) + "-" +
          content_hash({reinterpret_cast<const char*>(d.data()), d.size() * sizeof(double)});
}


std::vector<std::size_t> ResampleSurrogate::neighbours(std::span<const double> s0) const {
    if (s0.size() != state_dim())
        throw DimensionError("initial state has " + std::to_string(s0.size()) + " coordinates, surrogate expects " +
                             std::to_string(state_dim()));
    const std::size_t m = pool_.size();
    std::vector<double> dist(m);
    for (std::size_t k = 0; k < m; ++k) {
        const auto s = pool_.trajectories[k].state(0);
        double d = 0;
        for (std::size_t i = 0; i < s.size(); ++i) d += (s[i] - s0[i]) * (s[i] - s0[i]);
        dist[k] = d;
    }
    std::vector<std::size_t> idx(m);
    std::iota(idx.begin(), idx.end(), 0);
    auto closer = [&](std::size_t a, std::size_t b) { return dist[a] < dist[b] || (dist[a] == dist[b] && a < b); };
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k_nn_), idx.end(), closer);
    idx.resize(k_nn_);
    return idx;
}

std::vector<std::size_t> ResampleSurrogate::draw(std::span<const double> s0, std::size_t k,
                                                 std::uint64_t seed) const {
    const auto nn = neighbours(s0);
    Rng rng(seed);
    std::vector<std::size_t> out(k);
    for (auto& o : out) o = nn[rng.below(nn.size())];
    return out;
}

TrajectoryBatch ResampleSurrogate::sample(std::span<const double> s0, std::size_t k, std::uint64_t seed,
                                          Exec) const {
    const auto ids = draw(s0, k, seed);
    const std::size_t n = state_dim(), h = horizon();
    TrajectoryBatch out(k, n, h);
    for (std::size_t j = 0; j < k; ++j) {
        const auto src = pool_.trajectories[ids[j]];
        auto dst = out.mutable_trajectory(j);
        std::copy(s0.begin(), s0.end(), dst.begin());
        for (std::size_t t = 1; t < h; ++t)
            for (std::size_t i = 0; i < n; ++i) dst[t * n + i] = src.at(t, i) + (s0[i] - src.at(0, i));
    }
    return out;
}

TrajectoryBatch resample_surrogate(const Dataset& pool, std::span<const double> s0, std::size_t k,
                                   std::size_t k_nn, std::uint64_t seed) {
    return ResampleSurrogate(pool, k_nn).sample(s0, k, seed);
}

}  // namespace qpm
