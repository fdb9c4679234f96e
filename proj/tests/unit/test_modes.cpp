#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "qpm/error.hpp"
#include "qpm/modes.hpp"
#include "qpm/rng.hpp"

using namespace qpm;

namespace {

// Two Gaussian blobs in R^2 (as 1-step, 2-D "trajectories") at separation 6 sigma.
std::pair<TrajectoryBatch, std::vector<int>> blobs(std::size_t m, std::uint64_t seed) {
    TrajectoryBatch b(m, 2, 1);
    std::vector<int> labels(m);
    Rng rng(seed);
    for (std::size_t k = 0; k < m; ++k) {
        labels[k] = 1 + static_cast<int>(k % 2);
        const double cx = labels[k] == 1 ? -3.0 : 3.0;
        auto t = b.mutable_trajectory(k);
        t[0] = cx + rng.normal();
        t[1] = 5.0 + rng.normal();
    }
    return {b, labels};
}

}  // namespace

TEST_CASE("softmax and argmax") {
    const std::vector<double> z{1.0, 3.0, -2.0, 3.0};
    const auto p = softmax(z);
    double sum = 0;
    for (double v : p) sum += v;
    CHECK(std::abs(sum - 1.0) <= 1e-9);
    CHECK(argmax_label(z) == 2);
    CHECK(argmax_label(std::vector<double>{0, 0, 0}) == 1);
    const auto big = softmax(std::vector<double>{1000.0, 999.0});
    CHECK(std::isfinite(big[0]));
    CHECK(std::abs(big[0] + big[1] - 1.0) <= 1e-9);

    Rng rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> l(5);
        for (auto& v : l) v = 50.0 * rng.normal();
        const auto q = softmax(l);
        double s = 0;
        for (double v : q) s += v;
        CHECK(std::abs(s - 1.0) <= 1e-9);
        auto shifted = l;
        const double c = 100.0 * rng.normal();
        for (auto& v : shifted) v += c;
        CHECK(argmax_label(shifted) == argmax_label(l));
    }
}

TEST_CASE("exact predictor delegates") {
    const Scenario sc(ScenarioId::signal);
    const ExactPredictor pred(sc);
    const auto d = generate_split(sc, Split::train, 40, 1, 2);
    const auto labels = pred.predict_batch(d.trajectories);
    for (std::size_t k = 0; k < d.size(); ++k) CHECK(labels[k] == sc.exact_mode(d.trajectories[k]));
    CHECK(pred.mode_count() == 3);
    CHECK(pred.predict_batch(d.trajectories, Exec::serial) == labels);
    const TrajectoryBatch wrong(1, 2, 45);
    CHECK_THROWS_AS(pred.predict(wrong[0]), DimensionError);
}

TEST_CASE("partition by mode") {
    const std::vector<int> labels{1, 2, 1, 3, 2, 2};
    const auto parts = partition_by_mode(labels, 3);
    REQUIRE(parts.size() == 3);
    CHECK(parts[0] == std::vector<std::size_t>{0, 2});
    CHECK(parts[1] == std::vector<std::size_t>{1, 4, 5});
    CHECK(parts[2] == std::vector<std::size_t>{3});
    const auto empty = partition_by_mode(std::vector<int>{}, 3);
    CHECK(empty.size() == 3);
    for (const auto& p : empty) CHECK(p.empty());
    CHECK_THROWS_AS(partition_by_mode(std::vector<int>{4}, 3), DomainError);

    // Partition law on a real batch.
    const Scenario sc(ScenarioId::navigation);
    const auto d = generate_split(sc, Split::train, 200, 1, 6);
    const auto lists = partition_by_mode(ExactPredictor(sc), d.trajectories);
    std::vector<std::size_t> all;
    for (std::size_t g = 0; g < lists.size(); ++g) {
        CHECK(std::is_sorted(lists[g].begin(), lists[g].end()));
        for (auto k : lists[g]) CHECK(d.modes[k] == static_cast<int>(g) + 1);
        all.insert(all.end(), lists[g].begin(), lists[g].end());
    }
    std::sort(all.begin(), all.end());
    CHECK(all.size() == d.size());
    CHECK(std::adjacent_find(all.begin(), all.end()) == all.end());
}

TEST_CASE("classifier on separable blobs") {
    const auto [data, labels] = blobs(500, 1);
    SUBCASE("untrained is uniform") {
        ClassifierHyper h;
        h.epochs = 0;
        const auto c = ModeClassifier::train(data, labels, 2, h);
        const auto p = c.probabilities(data[0]);
        CHECK(p[0] == doctest::Approx(0.5));
        CHECK(c.predict(data[1]) == 1);
        CHECK(c.accuracy(data, labels) == doctest::Approx(0.5));
    }
    SUBCASE("trained") {
        ClassifierFit fit;
        ClassifierHyper h;
        h.seed = 3;
        const auto c = ModeClassifier::train(data, labels, 2, h, &fit);
        REQUIRE(fit.accuracy_trace.size() == h.epochs);
        CHECK(fit.accuracy_trace.back() >= 0.99);
        CHECK(fit.loss_trace.back() < fit.loss_trace.front());
        TrajectoryBatch centroid(2, 2, 1);
        centroid.mutable_trajectory(0)[0] = -3.0;
        centroid.mutable_trajectory(0)[1] = 5.0;
        centroid.mutable_trajectory(1)[0] = 3.0;
        centroid.mutable_trajectory(1)[1] = 5.0;
        CHECK(c.predict(centroid[0]) == 1);
        CHECK(c.predict(centroid[1]) == 2);
        const auto again = ModeClassifier::train(data, labels, 2, h);
        CHECK(again.net().parameters() == c.net().parameters());
    }
    SUBCASE("MLP head") {
        ClassifierHyper h;
        h.hidden = {8};
        h.lr = 0.01;
        ClassifierFit fit;
        ModeClassifier::train(data, labels, 2, h, &fit);
        CHECK(fit.accuracy_trace.back() >= 0.99);
    }
}

TEST_CASE("classifier warnings and errors") {
    auto [data, labels] = blobs(100, 2);
    for (std::size_t k = 0; k < data.size(); ++k) data.mutable_trajectory(k)[1] = 5.0;
    ClassifierFit fit;
    ClassifierHyper h;
    h.epochs = 5;
    const auto c = ModeClassifier::train(data, labels, 3, h, &fit);
    CHECK(fit.dropped_features == 1);
    CHECK(c.feature_count() == 1);
    CHECK(fit.warnings.size() == 2);  // dropped feature, empty mode 3
    labels[0] = 4;
    CHECK_THROWS_AS(ModeClassifier::train(data, labels, 3, h), DomainError);
}

TEST_CASE("classifier on Signal") {
    const Scenario sc(ScenarioId::signal);
    const auto d = generate_split(sc, Split::train, 1000, 1, 21);
    ClassifierFit fit;
    ClassifierHyper h;
    h.seed = 5;
    const auto c = ModeClassifier::train(d.trajectories, d.modes, 3, h, &fit);
    CHECK(fit.accuracy_trace.back() >= 0.95);
    const auto test = generate_split(sc, Split::test, 500, 1, 22);
    CHECK(c.accuracy(test.trajectories, test.modes) >= 0.95);

    const auto dir = std::filesystem::temp_directory_path() / "qpm_test_modes";
    std::filesystem::create_directories(dir);
    c.save(dir / "c.ckpt");
    const auto back = ModeClassifier::load(dir / "c.ckpt");
    CHECK(back.checkpoint_hash() == c.checkpoint_hash());
    CHECK(back.predict_batch(test.trajectories) == c.predict_batch(test.trajectories));
    std::filesystem::remove_all(dir);
}

TEST_CASE("k-means on terminal states recovers Signal basins") {
    const Scenario sc(ScenarioId::signal);
    const auto d = generate_split(sc, Split::train, 600, 1, 23);
    const auto km = kmeans_terminal(d.trajectories, 3, 1);
    std::size_t agree = 0;
    for (std::size_t k = 0; k < d.size(); ++k) agree += km.labels[k] == d.modes[k];
    CHECK(static_cast<double>(agree) / d.size() >= 0.95);
    CHECK(km.centroids[0][0] < km.centroids[1][0]);
    CHECK(km == kmeans_terminal(d.trajectories, 3, 1));
}
