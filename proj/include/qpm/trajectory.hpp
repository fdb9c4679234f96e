#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace qpm {

using State = std::vector<double>;

/// Non-owning view of one trajectory: `horizon` states of `dim` coordinates,
/// stored row-major.
class TrajectoryView {
public:
    TrajectoryView() = default;
    TrajectoryView(std::span<const double> data, std::size_t dim, std::size_t horizon)
        : data_(data), dim_(dim), horizon_(horizon) {}

    std::size_t dim() const noexcept { return dim_; }
    std::size_t horizon() const noexcept { return horizon_; }
    std::span<const double> state(std::size_t t) const { return data_.subspan(t * dim_, dim_); }
    double at(std::size_t t, std::size_t i) const { return data_[t * dim_ + i]; }
    std::span<const double> data() const noexcept { return data_; }

private:
    std::span<const double> data_;
    std::size_t dim_ = 0;
    std::size_t horizon_ = 0;
};

class Trajectory {
public:
    Trajectory() = default;
    Trajectory(std::size_t dim, std::size_t horizon);
    Trajectory(std::vector<double> data, std::size_t dim, std::size_t horizon);

    std::size_t dim() const noexcept { return dim_; }
    std::size_t horizon() const noexcept { return horizon_; }
    std::span<const double> state(std::size_t t) const { return view().state(t); }
    std::span<double> state(std::size_t t) { return {data_.data() + t * dim_, dim_}; }
    double& at(std::size_t t, std::size_t i) { return data_[t * dim_ + i]; }
    double at(std::size_t t, std::size_t i) const { return data_[t * dim_ + i]; }
    const std::vector<double>& data() const noexcept { return data_; }

    TrajectoryView view() const { return {data_, dim_, horizon_}; }
    operator TrajectoryView() const { return view(); }

    /// True when every coordinate is finite.
    bool finite() const;

    friend bool operator==(const Trajectory&, const Trajectory&) = default;

private:
    std::vector<double> data_;
    std::size_t dim_ = 0;
    std::size_t horizon_ = 0;
};

/// Fixed-shape collection of trajectories in one contiguous buffer.
class TrajectoryBatch {
public:
    TrajectoryBatch() = default;
    TrajectoryBatch(std::size_t count, std::size_t dim, std::size_t horizon);

    std::size_t size() const noexcept { return count_; }
    bool empty() const noexcept { return count_ == 0; }
    std::size_t dim() const noexcept { return dim_; }
    std::size_t horizon() const noexcept { return horizon_; }
    std::size_t stride() const noexcept { return dim_ * horizon_; }

    TrajectoryView operator[](std::size_t k) const {
        return {std::span<const double>(data_).subspan(k * stride(), stride()), dim_, horizon_};
    }
    std::span<double> mutable_trajectory(std::size_t k) {
        return std::span<double>(data_).subspan(k * stride(), stride());
    }
    void push_back(TrajectoryView t);
    Trajectory copy(std::size_t k) const;

    const std::vector<double>& data() const noexcept { return data_; }
    std::vector<double>& data() noexcept { return data_; }

    friend bool operator==(const TrajectoryBatch&, const TrajectoryBatch&) = default;

private:
    std::vector<double> data_;
    std::size_t count_ = 0;
    std::size_t dim_ = 0;
    std::size_t horizon_ = 0;
};

}  // namespace qpm
