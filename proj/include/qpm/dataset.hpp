#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "qpm/scenario.hpp"
#include "qpm/trajectory.hpp"

namespace qpm {

enum class Split { train, calibration, test };

std::string to_string(Split s);
Split parse_split(std::string_view name);

/// Trajectories grouped by initial state: group g owns trajectories
/// [g * per_state, (g + 1) * per_state). The training split uses per_state = 1.
struct Dataset {
    ScenarioId scenario = ScenarioId::signal;
    Split split = Split::train;
    std::vector<State> initial_states;
    std::size_t per_state = 1;
    TrajectoryBatch trajectories;
    std::vector<int> modes;
    std::vector<std::uint64_t> seeds;

    std::size_t size() const noexcept { return trajectories.size(); }
    std::size_t group_count() const noexcept { return initial_states.size(); }
    std::size_t group_of(std::size_t k) const noexcept { return k / per_state; }
    /// Sub-dataset holding only the given groups (in the given order).
    Dataset select_groups(const std::vector<std::size_t>& groups) const;

    friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct DatasetSizes {
    std::size_t train = 1000;
    std::size_t cal_states = 200;
    std::size_t cal_per_state = 100;
    std::size_t test_states = 100;
    std::size_t test_per_state = 100;
};

struct DatasetTriple {
    Dataset train, calibration, test;
};

/// Group g of split s draws its initial state and its trajectories from
/// streams under derive_seed(seed, {s, g}), so each split is reproducible on
/// its own and independent of thread scheduling.
Dataset generate_split(const Scenario& sc, Split split, std::size_t states, std::size_t per_state,
                       std::uint64_t seed, Exec exec = Exec::parallel);
DatasetTriple generate_dataset(const Scenario& sc, const DatasetSizes& sizes, std::uint64_t seed,
                               Exec exec = Exec::parallel);

/// One JSON record per trajectory:
/// {scenario, split, state_index, init_state, states, mode, seed}
void write_jsonl(const Dataset& d, const std::filesystem::path& path);
Dataset read_jsonl(const std::filesystem::path& path);

/// Flat container: "QPMTRAJ\0", u32 version, u32 n, u32 H, u64 count, then
/// count*H*n little-endian doubles.
void write_binary(const TrajectoryBatch& batch, const std::filesystem::path& path);
TrajectoryBatch read_binary(const std::filesystem::path& path);

/// Writes through a temporary sibling and renames, so a failed write leaves
/// no partial file behind.
void atomic_write(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace qpm
