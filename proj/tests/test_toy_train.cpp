#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <set>

#include "chainreduce/toy_train.hpp"

using namespace chainreduce;

TEST_CASE("generate_blobs shape, balance, determinism") {
    const auto ds = generate_blobs(3, 100, 2, 0.5, 42);
    CHECK(ds.samples.size() == 300);
    int counts[3] = {0, 0, 0};
    for (const auto& s : ds.samples) ++counts[s.label];
    CHECK(counts[0] == 100);
    CHECK(counts[1] == 100);
    CHECK(counts[2] == 100);
    CHECK(ds.train_idx.size() == 240);
    CHECK(ds.test_idx.size() == 60);

    const auto ds2 = generate_blobs(3, 100, 2, 0.5, 42);
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        CHECK(ds.samples[i].x == ds2.samples[i].x);
        CHECK(ds.samples[i].label == ds2.samples[i].label);
    }
    CHECK(ds.train_idx == ds2.train_idx);

    CHECK_THROWS_AS(generate_blobs(0, 1, 1, 0.5, 1), InvalidInput);
    CHECK_THROWS_AS(generate_blobs(2, 1, 1, 0.0, 1), InvalidInput);
}

TEST_CASE("uniform logits give ln(num_classes) loss") {
    ModelLayout l{2, 4, 2};
    ToyModel m{ParamVector(std::vector<double>(static_cast<std::size_t>(l.weight_count()), 0.0)), l};
    const auto ds = generate_blobs(2, 10, 2, 0.5, 1);
    auto [loss, grad] = forward_loss_grad(m, std::span<const Sample>(ds.samples));
    CHECK(loss == doctest::Approx(std::log(2.0)).epsilon(1e-9));
    CHECK(grad.theta == 1.0);
}

TEST_CASE("duplicated batch gives identical loss and gradient") {
    const auto ds = generate_blobs(2, 8, 2, 0.5, 3);
    ModelLayout l{2, 5, 2};
    const auto m = init_model(l, 9);
    std::vector<Sample> once(ds.samples.begin(), ds.samples.begin() + 6);
    std::vector<Sample> twice = once;
    twice.insert(twice.end(), once.begin(), once.end());
    auto [l1, g1] = forward_loss_grad(m, once);
    auto [l2, g2] = forward_loss_grad(m, twice);
    CHECK(l1 == doctest::Approx(l2).epsilon(1e-12));
    for (std::size_t i = 0; i < g1.size(); ++i)
        CHECK(g1.values[i] == doctest::Approx(g2.values[i]).epsilon(1e-12));
}

TEST_CASE("gradient matches central finite differences on 20 random pairs") {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 20; ++trial) {
        const int dim = 2 + trial % 3;
        const int hidden = 3 + trial % 4;
        const int classes = 2 + trial % 3;
        const auto ds = generate_blobs(classes, 6, dim, 0.8, 1000 + trial);
        auto m = init_model(ModelLayout{dim, hidden, classes}, 2000 + trial);
        // perturb away from the zero-bias init so all paths are exercised
        std::normal_distribution<double> d(0.0, 0.3);
        for (double& v : m.weights.values) v += d(rng);

        std::span<const Sample> batch(ds.samples.data(), 8);
        auto [loss, grad] = forward_loss_grad(m, batch);
        const double h = 1e-5;
        for (std::size_t i = 0; i < m.weights.size(); ++i) {
            ToyModel up = m, dn = m;
            up.weights.values[i] += h;
            dn.weights.values[i] -= h;
            const double fd = (forward_loss_grad(up, batch).first -
                               forward_loss_grad(dn, batch).first) /
                              (2 * h);
            const double scale = std::max({1.0, std::abs(fd), std::abs(grad.values[i])});
            CHECK(std::abs(grad.values[i] - fd) / scale < 1e-4);
        }
    }
}

TEST_CASE("evaluate: memorizing model and constant model") {
    // hand-built sign classifier: x>0 -> class 1, x<0 -> class 0
    ModelLayout l{1, 2, 2};
    ToyModel m{ParamVector(std::vector<double>(static_cast<std::size_t>(l.weight_count()), 0.0)), l};
    // w1 (1x2): h0 = relu(x), h1 = relu(-x)
    m.weights.values[0] = 1.0;
    m.weights.values[1] = -1.0;
    // w2 (2x2, row-major j*classes+k): class0 <- h1, class1 <- h0
    m.weights.values[4] = 0.0;  // h0 -> class0
    m.weights.values[5] = 1.0;  // h0 -> class1
    m.weights.values[6] = 1.0;  // h1 -> class0
    m.weights.values[7] = 0.0;  // h1 -> class1
    std::vector<Sample> pts = {{{2.0}, 1}, {{-1.5}, 0}, {{0.7}, 1}, {{-3.0}, 0}};
    CHECK(evaluate(m, pts) == 1.0);

    // all-zero model always predicts class 0 (tie toward lowest index)
    ToyModel zero{ParamVector(std::vector<double>(static_cast<std::size_t>(l.weight_count()), 0.0)), l};
    std::vector<Sample> balanced = {{{1.0}, 0}, {{2.0}, 1}, {{3.0}, 2}, {{4.0}, 3}};
    ModelLayout l4{1, 2, 4};
    ToyModel zero4{ParamVector(std::vector<double>(static_cast<std::size_t>(l4.weight_count()), 0.0)), l4};
    CHECK(evaluate(zero4, balanced) == doctest::Approx(0.25));
    CHECK_THROWS_AS(evaluate(zero, std::span<const Sample>{}), InvalidInput);
}

TEST_CASE("partition sizes, disjointness, coverage") {
    std::vector<std::size_t> ten(10);
    std::iota(ten.begin(), ten.end(), 0);
    const auto p2 = partition_indices(ten, 2, 5);
    CHECK(p2.shard(0).size() == 5);
    CHECK(p2.shard(1).size() == 5);
    const auto p3 = partition_indices(ten, 3, 5);
    std::multiset<std::size_t> sizes = {p3.shard(0).size(), p3.shard(1).size(),
                                        p3.shard(2).size()};
    CHECK(sizes == std::multiset<std::size_t>{3, 3, 4});

    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 5 + rng() % 200;
        const int devs = 1 + static_cast<int>(rng() % 7);
        if (static_cast<std::size_t>(devs) > n) continue;
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 1000);
        const auto p = partition_indices(idx, devs, rng());
        std::set<std::size_t> seen;
        std::size_t min_s = n, max_s = 0;
        for (int d = 0; d < devs; ++d) {
            const auto sh = p.shard(d);
            min_s = std::min(min_s, sh.size());
            max_s = std::max(max_s, sh.size());
            for (auto i : sh) CHECK(seen.insert(i).second);
        }
        CHECK(seen.size() == n);
        CHECK(max_s - min_s <= 1);
    }
    CHECK_THROWS_AS(partition_indices({1, 2}, 3, 0), InvalidInput);
}

TEST_CASE("central training reaches 95% on the separable benchmark") {
    const auto ds = generate_blobs(2, 200, 2, 0.1, 7);
    ModelLayout l{2, 8, 2};
    auto m = init_model(l, 7);
    const auto train = gather(ds, ds.train_idx);
    const auto test = gather(ds, ds.test_idx);
    double first_loss = -1.0, last_loss = 0.0;
    for (int epoch = 0; epoch < 20; ++epoch) {
        auto [loss, grad] = forward_loss_grad(m, train);
        if (first_loss < 0) first_loss = loss;
        last_loss = loss;
        m.weights = sgd_step(m.weights, grad, 0.5);
    }
    CHECK(last_loss < first_loss);
    CHECK(evaluate(m, test) >= 0.95);
}

TEST_CASE("csv round trip") {
    const auto ds = generate_blobs(2, 20, 3, 0.4, 21);
    const std::string path = "toy_roundtrip.csv";
    export_csv(ds, path);
    const auto back = import_csv(path, ds.seed);
    REQUIRE(back.samples.size() == ds.samples.size());
    CHECK(back.num_classes == ds.num_classes);
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        CHECK(back.samples[i].label == ds.samples[i].label);
        for (std::size_t j = 0; j < ds.samples[i].x.size(); ++j)
            CHECK(back.samples[i].x[j] == doctest::Approx(ds.samples[i].x[j]).epsilon(1e-15));
    }
    std::remove(path.c_str());
}
