#include "qpm/modes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "qpm/error.hpp"
#include "qpm/rng.hpp"
#include "qpm/surrogate.hpp"

namespace qpm {

namespace {

constexpr int kClassifierVersion = 1;

void check_shape(TrajectoryView s, std::size_t n, std::size_t h) {
    if (s.dim() != n || s.horizon() != h)
        throw DimensionError("trajectory is " + std::to_string(s.dim()) + "x" + std::to_string(s.horizon()) +
                             ", predictor expects " + std::to_string(n) + "x" + std::to_string(h));
}

}  // namespace

std::vector<int> ModePredictor::predict_batch(const TrajectoryBatch& batch, Exec exec) const {
    std::vector<int> out(batch.size());
    parallel_for(batch.size(), exec, [&](std::size_t k) { out[k] = predict(batch[k]); });
    return out;
}

int ExactPredictor::predict(TrajectoryView s) const {
    check_shape(s, sc_.state_dim(), sc_.horizon());
    return sc_.exact_mode(s);
}

std::vector<double> softmax(std::span<const double> logits) {
    const double top = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) sum += p[i] = std::exp(logits[i] - top);
    for (auto& v : p) v /= sum;
    return p;
}

int argmax_label(std::span<const double> values) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[best]) best = i;
    return static_cast<int>(best) + 1;
}

ModeClassifier ModeClassifier::train(const TrajectoryBatch& data, const std::vector<int>& labels, int modes,
                                     const ClassifierHyper& hyper, ClassifierFit* fit, Exec exec) {
    if (modes < 1) throw ConfigError("modes", "must be at least 1");
    if (labels.size() != data.size()) throw DimensionError("one label per trajectory required");
    if (data.empty()) throw DomainError("empty classifier training set");
    if (!(hyper.lr > 0)) throw ConfigError("lr", "must be positive");
    if (!(hyper.holdout >= 0 && hyper.holdout < 1)) throw ConfigError("holdout", "must lie in [0, 1)");
    for (int l : labels)
        if (l < 1 || l > modes) throw DomainError("label " + std::to_string(l) + " outside 1.." + std::to_string(modes));

    ClassifierFit local;
    ClassifierFit& out = fit ? *fit : local;
    out = {};

    ModeClassifier c;
    c.modes_ = modes;
    c.n_ = data.dim();
    c.h_ = data.horizon();
    c.hyper_ = hyper;

    const std::size_t m = data.size(), full = data.stride();
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(hyper.seed);
    for (std::size_t i = m; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    const std::size_t hold = m >= 10 ? static_cast<std::size_t>(std::llround(hyper.holdout * static_cast<double>(m))) : 0;
    const std::size_t mt = m - hold;

    // Feature statistics on the fitting part; constant columns are dropped.
    std::vector<double> mean(full, 0.0), var(full, 0.0);
    for (std::size_t r = 0; r < mt; ++r) {
        const auto s = data[order[r]].data();
        for (std::size_t j = 0; j < full; ++j) mean[j] += s[j];
    }
    for (auto& v : mean) v /= static_cast<double>(mt);
    for (std::size_t r = 0; r < mt; ++r) {
        const auto s = data[order[r]].data();
        for (std::size_t j = 0; j < full; ++j) var[j] += (s[j] - mean[j]) * (s[j] - mean[j]);
    }
    for (std::size_t j = 0; j < full; ++j) {
        const double sd = std::sqrt(var[j] / static_cast<double>(mt));
        if (sd > 1e-12 * (1.0 + std::abs(mean[j]))) {
            c.kept_.push_back(j);
            c.mean_.push_back(mean[j]);
            c.std_.push_back(sd);
        }
    }
    out.dropped_features = full - c.kept_.size();
    if (out.dropped_features > 0)
        out.warnings.push_back("dropped " + std::to_string(out.dropped_features) + " zero-variance features");
    if (c.kept_.empty()) throw DomainError("every feature has zero variance");

    std::vector<std::size_t> counts(static_cast<std::size_t>(modes), 0);
    for (std::size_t r = 0; r < mt; ++r) ++counts[static_cast<std::size_t>(labels[order[r]] - 1)];
    for (int g = 0; g < modes; ++g)
        if (counts[static_cast<std::size_t>(g)] == 0)
            out.warnings.push_back("mode " + std::to_string(g + 1) + " has no training examples");

    std::vector<std::size_t> widths{c.kept_.size()};
    widths.insert(widths.end(), hyper.hidden.begin(), hyper.hidden.end());
    widths.push_back(static_cast<std::size_t>(modes));
    c.net_ = nn::Mlp(widths, derive_seed(hyper.seed, 1));
    if (hyper.hidden.empty()) std::fill(c.net_.parameters().begin(), c.net_.parameters().end(), 0.0);

    const std::size_t f = c.kept_.size(), g = static_cast<std::size_t>(modes);
    std::vector<double> x(mt * f);
    for (std::size_t r = 0; r < mt; ++r) {
        const auto feat = c.features(data[order[r]]);
        std::copy(feat.begin(), feat.end(), x.begin() + static_cast<std::ptrdiff_t>(r * f));
    }
    TrajectoryBatch held(0, data.dim(), data.horizon());
    std::vector<int> held_labels;
    for (std::size_t r = mt; r < m; ++r) {
        held.push_back(data[order[r]]);
        held_labels.push_back(labels[order[r]]);
    }

    nn::Adam adam(c.net_.parameters().size(), hyper.lr);
    std::vector<double> y, dy(mt * g), grad;
    nn::Mlp::Tape tape;
    for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
        c.net_.forward(x, mt, y, &tape, exec);
        double loss = 0.0;
        for (std::size_t r = 0; r < mt; ++r) {
            const auto p = softmax(std::span<const double>(y).subspan(r * g, g));
            const std::size_t label = static_cast<std::size_t>(labels[order[r]] - 1);
            loss -= std::log(std::max(p[label], 1e-300));
            for (std::size_t k = 0; k < g; ++k)
                dy[r * g + k] = (p[k] - (k == label ? 1.0 : 0.0)) / static_cast<double>(mt);
        }
        loss /= static_cast<double>(mt);
        if (!std::isfinite(loss)) throw TrainingError("non-finite classifier loss at epoch " + std::to_string(epoch));
        c.net_.backward(tape, dy, grad, exec);
        adam.step(c.net_.parameters(), grad);
        out.loss_trace.push_back(loss);
        out.accuracy_trace.push_back(hold > 0 ? c.accuracy(held, held_labels) : c.accuracy(data, labels));
    }
    return c;
}

std::vector<double> ModeClassifier::features(TrajectoryView s) const {
    check_shape(s, n_, h_);
    const auto d = s.data();
    std::vector<double> out(kept_.size());
    for (std::size_t j = 0; j < kept_.size(); ++j) out[j] = (d[kept_[j]] - mean_[j]) / std_[j];
    return out;
}

std::vector<double> ModeClassifier::logits(TrajectoryView s) const {
    if (modes_ == 0) throw DomainError("classifier has not been trained");
    std::vector<double> y;
    net_.forward(features(s), 1, y, nullptr, Exec::serial);
    return y;
}

std::vector<double> ModeClassifier::probabilities(TrajectoryView s) const { return softmax(logits(s)); }

int ModeClassifier::predict(TrajectoryView s) const { return argmax_label(logits(s)); }

double ModeClassifier::accuracy(const TrajectoryBatch& data, const std::vector<int>& labels) const {
    if (data.empty()) return 0.0;
    std::size_t hit = 0;
    for (std::size_t k = 0; k < data.size(); ++k) hit += predict(data[k]) == labels[k];
    return static_cast<double>(hit) / static_cast<double>(data.size());
}

nlohmann::json ModeClassifier::header() const {
    return {{"format", "qpm-checkpoint"},
            {"version", kClassifierVersion},
            {"kind", "classifier"},
            {"modes", modes_},
            {"state_dim", n_},
            {"horizon", h_},
            {"widths", net_.widths()},
            {"features", {{"kept", kept_}, {"mean", mean_}, {"std", std_}}},
            {"training",
             {{"epochs", hyper_.epochs},
              {"lr", hyper_.lr},
              {"seed", hyper_.seed},
              {"holdout", hyper_.holdout},
              {"hidden", hyper_.hidden}}},
            {"parameter_count", net_.parameters().size()}};
}

void ModeClassifier::save(const std::filesystem::path& path) const {
    nn::write_checkpoint(path, header(), net_.parameters());
}

std::string ModeClassifier::checkpoint_hash() const {
    return content_hash(nn::checkpoint_bytes(header(), net_.parameters()));
}

ModeClassifier ModeClassifier::load(const std::filesystem::path& path) {
    auto [h, params] = nn::read_checkpoint(path);
    try {
        if (h.at("kind") != "classifier") throw IoError(path.string() + ": not a classifier checkpoint");
        if (h.at("version").get<int>() != kClassifierVersion)
            throw IoError(path.string() + ": unsupported checkpoint version");
        ModeClassifier c;
        c.modes_ = h.at("modes").get<int>();
        c.n_ = h.at("state_dim").get<std::size_t>();
        c.h_ = h.at("horizon").get<std::size_t>();
        const auto& f = h.at("features");
        c.kept_ = f.at("kept").get<std::vector<std::size_t>>();
        c.mean_ = f.at("mean").get<std::vector<double>>();
        c.std_ = f.at("std").get<std::vector<double>>();
        const auto& t = h.at("training");
        c.hyper_.epochs = t.at("epochs").get<std::size_t>();
        c.hyper_.lr = t.at("lr").get<double>();
        c.hyper_.seed = t.at("seed").get<std::uint64_t>();
        c.hyper_.holdout = t.at("holdout").get<double>();
        c.hyper_.hidden = t.at("hidden").get<std::vector<std::size_t>>();
        c.net_ = nn::Mlp(h.at("widths").get<std::vector<std::size_t>>(), 0);
        if (params.size() != c.net_.parameters().size())
            throw IoError(path.string() + ": parameter count does not match the architecture");
        c.net_.parameters() = std::move(params);
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path.string() + ": malformed checkpoint header: " + e.what());
    }
}

std::vector<std::vector<std::size_t>> partition_by_mode(const std::vector<int>& labels, int modes) {
    std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(std::max(modes, 0)));
    for (std::size_t k = 0; k < labels.size(); ++k) {
        if (labels[k] < 1 || labels[k] > modes) throw DomainError("label outside 1.." + std::to_string(modes));
        out[static_cast<std::size_t>(labels[k] - 1)].push_back(k);
    }
    return out;
}

std::vector<std::vector<std::size_t>> partition_by_mode(const ModePredictor& pred, const TrajectoryBatch& batch,
                                                        Exec exec) {
    return partition_by_mode(pred.predict_batch(batch, exec), pred.mode_count());
}

KMeansResult kmeans_terminal(const TrajectoryBatch& batch, int modes, std::uint64_t seed, std::size_t iterations) {
    if (modes < 1) throw ConfigError("modes", "must be at least 1");
    const std::size_t m = batch.size(), n = batch.dim(), g = static_cast<std::size_t>(modes);
    if (m < g) throw DomainError("fewer trajectories than clusters");
    auto point = [&](std::size_t k) { return batch[k].state(batch.horizon() - 1); };
    auto dist2 = [&](std::span<const double> a, const std::vector<double>& b) {
        double d = 0;
        for (std::size_t i = 0; i < n; ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
        return d;
    };

    Rng rng(seed);
    std::vector<std::vector<double>> cent;
    {
        const auto p = point(rng.below(m));
        cent.emplace_back(p.begin(), p.end());
    }
    std::vector<double> d2(m);
    while (cent.size() < g) {
        double total = 0;
        for (std::size_t k = 0; k < m; ++k) {
            d2[k] = std::numeric_limits<double>::infinity();
            for (const auto& c : cent) d2[k] = std::min(d2[k], dist2(point(k), c));
            total += d2[k];
        }
        std::size_t pick = 0;
        if (total > 0) {
            double u = rng.uniform(0.0, total);
            while (pick + 1 < m && u >= d2[pick]) u -= d2[pick++];
        } else {
            pick = rng.below(m);
        }
        const auto p = point(pick);
        cent.emplace_back(p.begin(), p.end());
    }

    std::vector<int> assign(m, -1);
    for (std::size_t it = 0; it < iterations; ++it) {
        bool changed = false;
        for (std::size_t k = 0; k < m; ++k) {
            std::size_t best = 0;
            double bd = dist2(point(k), cent[0]);
            for (std::size_t c = 1; c < g; ++c) {
                const double d = dist2(point(k), cent[c]);
                if (d < bd) bd = d, best = c;
            }
            if (assign[k] != static_cast<int>(best)) assign[k] = static_cast<int>(best), changed = true;
        }
        std::vector<std::vector<double>> sum(g, std::vector<double>(n, 0.0));
        std::vector<std::size_t> cnt(g, 0);
        for (std::size_t k = 0; k < m; ++k) {
            const auto p = point(k);
            for (std::size_t i = 0; i < n; ++i) sum[static_cast<std::size_t>(assign[k])][i] += p[i];
            ++cnt[static_cast<std::size_t>(assign[k])];
        }
        for (std::size_t c = 0; c < g; ++c)
            if (cnt[c] > 0)
                for (std::size_t i = 0; i < n; ++i) cent[c][i] = sum[c][i] / static_cast<double>(cnt[c]);
        if (!changed) break;
    }

    std::vector<std::size_t> rank(g);
    std::iota(rank.begin(), rank.end(), 0);
    std::stable_sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) { return cent[a] < cent[b]; });
    std::vector<int> relabel(g);
    for (std::size_t r = 0; r < g; ++r) relabel[rank[r]] = static_cast<int>(r) + 1;
    KMeansResult res;
    for (std::size_t k = 0; k < m; ++k) res.labels.push_back(relabel[static_cast<std::size_t>(assign[k])]);
    for (std::size_t r = 0; r < g; ++r) res.centroids.push_back(cent[rank[r]]);
    return res;
}

}  // namespace qpm
