#include "qpm/trajectory.hpp"

#include <algorithm>
#include <cmath>

#include "qpm/error.hpp"

namespace qpm {

Trajectory::Trajectory(std::size_t dim, std::size_t horizon)
    : data_(dim * horizon, 0.0), dim_(dim), horizon_(horizon) {}

Trajectory::Trajectory(std::vector<double> data, std::size_t dim, std::size_t horizon)
    : data_(std::move(data)), dim_(dim), horizon_(horizon) {
    if (data_.size() != dim * horizon)
        throw DimensionError("trajectory buffer size does not match dim * horizon");
}

bool Trajectory::finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

TrajectoryBatch::TrajectoryBatch(std::size_t count, std::size_t dim, std::size_t horizon)
    : data_(count * dim * horizon, 0.0), count_(count), dim_(dim), horizon_(horizon) {}

void TrajectoryBatch::push_back(TrajectoryView t) {
    if (count_ == 0 && data_.empty() && dim_ == 0) {
        dim_ = t.dim();
        horizon_ = t.horizon();
    }
    if (t.dim() != dim_ || t.horizon() != horizon_)
        throw DimensionError("trajectory shape does not match batch");
    data_.insert(data_.end(), t.data().begin(), t.data().end());
    ++count_;
}

Trajectory TrajectoryBatch::copy(std::size_t k) const {
    auto v = (*this)[k].data();
    return Trajectory(std::vector<double>(v.begin(), v.end()), dim_, horizon_);
}

}  // namespace qpm
