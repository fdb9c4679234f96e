#include "qpm/dataset.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "qpm/error.hpp"

namespace qpm {

static_assert(std::endian::native == std::endian::little, "binary containers assume a little-endian host");

namespace {

constexpr char kMagic[8] = {'Q', 'P', 'M', 'T', 'R', 'A', 'J', '\0'};
constexpr std::uint32_t kBinaryVersion = 1;

std::uint64_t split_tag(Split s) { return static_cast<std::uint64_t>(s) + 1; }

template <class T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <class T>
T take(const std::string& in, std::size_t& pos) {
    if (pos + sizeof(T) > in.size()) throw IoError("truncated binary container");
    T v;
    std::memcpy(&v, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

}  // namespace

std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::calibration: return "calibration";
        case Split::test: return "test";
    }
    return "?";
}

Split parse_split(std::string_view name) {
    if (name == "train") return Split::train;
    if (name == "calibration") return Split::calibration;
    if (name == "test") return Split::test;
    throw IoError("unknown split '" + std::string(name) + "'");
}

Dataset Dataset::select_groups(const std::vector<std::size_t>& groups) const {
    Dataset out;
    out.scenario = scenario;
    out.split = split;
    out.per_state = per_state;
    out.trajectories = TrajectoryBatch(groups.size() * per_state, trajectories.dim(), trajectories.horizon());
    std::size_t k = 0;
    for (std::size_t g : groups) {
        out.initial_states.push_back(initial_states.at(g));
        for (std::size_t j = 0; j < per_state; ++j, ++k) {
            const std::size_t src = g * per_state + j;
            const auto view = trajectories[src].data();
            std::copy(view.begin(), view.end(), out.trajectories.mutable_trajectory(k).begin());
            out.modes.push_back(modes[src]);
            out.seeds.push_back(seeds[src]);
        }
    }
    return out;
}

Dataset generate_split(const Scenario& sc, Split split, std::size_t states, std::size_t per_state,
                       std::uint64_t seed, Exec exec) {
    if (states == 0 || per_state == 0) throw ConfigError("sizes", "dataset sizes must be positive");
    Dataset d;
    d.scenario = sc.id();
    d.split = split;
    d.per_state = per_state;
    d.initial_states.resize(states);
    d.trajectories = TrajectoryBatch(states * per_state, sc.state_dim(), sc.horizon());
    d.modes.resize(states * per_state);
    d.seeds.resize(states * per_state);
    parallel_for(states, exec, [&](std::size_t g) {
        const std::uint64_t group_seed = derive_seed(seed, {split_tag(split), g});
        Rng init_rng(derive_seed(group_seed, ~std::uint64_t{0}));
        d.initial_states[g] = sc.sample_initial_state(init_rng);
        for (std::size_t j = 0; j < per_state; ++j) {
            const std::size_t k = g * per_state + j;
            d.seeds[k] = derive_seed(group_seed, j);
            const Trajectory tr = sc.simulate_one(d.initial_states[g], d.seeds[k]);
            std::copy(tr.data().begin(), tr.data().end(), d.trajectories.mutable_trajectory(k).begin());
            d.modes[k] = sc.exact_mode(tr);
        }
    });
    return d;
}

DatasetTriple generate_dataset(const Scenario& sc, const DatasetSizes& sizes, std::uint64_t seed, Exec exec) {
    return {generate_split(sc, Split::train, sizes.train, 1, seed, exec),
            generate_split(sc, Split::calibration, sizes.cal_states, sizes.cal_per_state, seed, exec),
            generate_split(sc, Split::test, sizes.test_states, sizes.test_per_state, seed, exec)};
}

void write_jsonl(const Dataset& d, const std::filesystem::path& path) {
    std::string out;
    const std::string scenario = to_string(d.scenario), split = to_string(d.split);
    for (std::size_t k = 0; k < d.size(); ++k) {
        const auto view = d.trajectories[k];
        nlohmann::json states = nlohmann::json::array();
        for (std::size_t t = 0; t < view.horizon(); ++t) {
            auto s = view.state(t);
            states.push_back(std::vector<double>(s.begin(), s.end()));
        }
        nlohmann::json rec{{"scenario", scenario},
                           {"split", split},
                           {"state_index", d.group_of(k)},
                           {"init_state", d.initial_states[d.group_of(k)]},
                           {"states", std::move(states)},
                           {"mode", d.modes[k]},
                           {"seed", d.seeds[k]}};
        out += rec.dump();
        out += '\n';
    }
    atomic_write(path, out);
}

Dataset read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open dataset " + path.string());
    Dataset d;
    std::string line;
    std::size_t line_no = 0, per_state = 0, current_group = 0, in_group = 0;
    bool first = true;
    try {
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            const auto rec = nlohmann::json::parse(line);
            const auto states = rec.at("states").get<std::vector<std::vector<double>>>();
            if (states.empty()) throw IoError("empty trajectory");
            const std::size_t dim = states[0].size();
            std::vector<double> flat;
            for (const auto& s : states) {
                if (s.size() != dim) throw IoError("ragged states");
                flat.insert(flat.end(), s.begin(), s.end());
            }
            const std::size_t group = rec.at("state_index").get<std::size_t>();
            if (first) {
                d.scenario = parse_scenario_id(rec.at("scenario").get<std::string>());
                d.split = parse_split(rec.at("split").get<std::string>());
                first = false;
                current_group = group;
                if (group != 0) throw IoError("first record must have state_index 0");
                d.initial_states.push_back(rec.at("init_state").get<State>());
            } else if (group != current_group) {
                if (group != current_group + 1) throw IoError("state_index out of order");
                if (per_state == 0) per_state = in_group;
                else if (in_group != per_state) throw IoError("groups of unequal size");
                current_group = group;
                in_group = 0;
                d.initial_states.push_back(rec.at("init_state").get<State>());
            }
            ++in_group;
            d.trajectories.push_back(TrajectoryView(flat, dim, states.size()));
            d.modes.push_back(rec.at("mode").get<int>());
            d.seeds.push_back(rec.at("seed").get<std::uint64_t>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const DimensionError& e) {
        throw IoError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (first) throw IoError("dataset " + path.string() + " is empty");
    if (per_state == 0) per_state = in_group;
    else if (in_group != per_state) throw IoError("groups of unequal size");
    d.per_state = per_state;
    return d;
}

void write_binary(const TrajectoryBatch& batch, const std::filesystem::path& path) {
    std::string out(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kBinaryVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(batch.dim()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(batch.horizon()));
    put<std::uint64_t>(out, batch.size());
    out.append(reinterpret_cast<const char*>(batch.data().data()), batch.data().size() * sizeof(double));
    atomic_write(path, out);
}

TrajectoryBatch read_binary(const std::filesystem::path& path) {
    const std::string in = read_file(path);
    if (in.size() < sizeof kMagic || std::memcmp(in.data(), kMagic, sizeof kMagic) != 0)
        throw IoError(path.string() + ": not a trajectory container");
    std::size_t pos = sizeof kMagic;
    const auto version = take<std::uint32_t>(in, pos);
    if (version != kBinaryVersion) throw IoError(path.string() + ": unsupported version " + std::to_string(version));
    const auto n = take<std::uint32_t>(in, pos);
    const auto h = take<std::uint32_t>(in, pos);
    const auto count = take<std::uint64_t>(in, pos);
    const std::size_t values = static_cast<std::size_t>(count) * n * h;
    if (in.size() - pos != values * sizeof(double)) throw IoError(path.string() + ": payload size mismatch");
    TrajectoryBatch batch(count, n, h);
    std::memcpy(batch.data().data(), in.data() + pos, values * sizeof(double));
    return batch;
}

void atomic_write(const std::filesystem::path& path, const std::string& bytes) {
    const auto parent = path.parent_path();
    if (!parent.empty() && !std::filesystem::is_directory(parent))
        throw IoError("directory " + parent.string() + " does not exist");
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            out.close();
            std::filesystem::remove(tmp);
            throw IoError("write failed for " + path.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        throw IoError("cannot rename into " + path.string() + ": " + ec.message());
    }
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace qpm
