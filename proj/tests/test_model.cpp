#include <doctest.h>

#include <cmath>
#include <numeric>

#include "dac/errors.hpp"
#include "dac/model.hpp"

using namespace dac;

namespace {

Dataset random_batch(std::size_t n, std::size_t dim, int classes, Rng& rng) {
    Dataset d(dim, classes);
    std::vector<double> x(dim);
    for (std::size_t i = 0; i < n; ++i) {
        for (auto& v : x) v = rng.normal();
        d.add(x, static_cast<int>(rng.below(static_cast<std::uint64_t>(classes))));
    }
    return d;
}

ModelParams random_params(const Architecture& arch, Rng& rng) {
    ModelParams p{arch, std::vector<double>(arch.parameter_count())};
    for (auto& v : p.values) v = rng.normal();
    return p;
}

double l2(const std::vector<double>& v) { return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0)); }

}  // namespace

TEST_CASE("parameter layout sizes") {
    CHECK(Architecture{2, 0, 3}.parameter_count() == 9);
    CHECK(Architecture{4, 5, 3}.parameter_count() == 4 * 5 + 5 + 5 * 3 + 3);
}

TEST_CASE("init is seeded and bounded") {
    const Architecture arch{6, 8, 4};
    const auto a = init_params(arch, 1);
    CHECK(a == init_params(arch, 1));
    CHECK(a != init_params(arch, 2));
    CHECK(a.values.size() == arch.parameter_count());
    for (std::size_t i = 0; i < 48; ++i) CHECK(std::abs(a.values[i]) <= 1.0 / std::sqrt(6.0));
    for (std::size_t i = 48; i < 56; ++i) CHECK(a.values[i] == 0.0);
    for (std::size_t i = 56; i < 88; ++i) CHECK(std::abs(a.values[i]) <= 1.0 / std::sqrt(8.0));
    for (std::size_t i = 88; i < 92; ++i) CHECK(a.values[i] == 0.0);
}

TEST_CASE("forward") {
    SUBCASE("zero parameters give the uniform distribution") {
        const ModelParams p{{3, 0, 4}, std::vector<double>(16, 0.0)};
        for (double q : forward(p, std::vector<double>{1.0, -2.0, 3.0})) CHECK(q == doctest::Approx(0.25));
    }

    SUBCASE("probabilities sum to one") {
        Rng rng(4);
        for (int t = 0; t < 1000; ++t) {
            const auto p = random_params({3, (t % 2) ? 4u : 0u, 5}, rng);
            std::vector<double> x{rng.normal() * 10, rng.normal() * 10, rng.normal() * 10};
            const auto q = forward(p, x);
            CHECK(std::abs(std::accumulate(q.begin(), q.end(), 0.0) - 1.0) < 1e-12);
        }
    }

    SUBCASE("matches a direct computation of the hidden-layer network") {
        Rng rng(12);
        const Architecture arch{2, 3, 2};
        const auto p = random_params(arch, rng);
        const std::vector<double> x{0.7, -1.3};
        const auto& w = p.values;
        double h[3];
        for (int j = 0; j < 3; ++j) h[j] = std::max(0.0, w[j * 2] * x[0] + w[j * 2 + 1] * x[1] + w[6 + j]);
        double z[2];
        for (int c = 0; c < 2; ++c) z[c] = w[9 + c * 3] * h[0] + w[9 + c * 3 + 1] * h[1] + w[9 + c * 3 + 2] * h[2] + w[15 + c];
        const double p0 = 1.0 / (1.0 + std::exp(z[1] - z[0]));
        const auto q = forward(p, x);
        CHECK(q[0] == doctest::Approx(p0).epsilon(1e-12));
        CHECK(q[1] == doctest::Approx(1.0 - p0).epsilon(1e-12));
    }

    SUBCASE("rejects wrong feature length") {
        const ModelParams p{{3, 0, 2}, std::vector<double>(8, 0.0)};
        CHECK_THROWS_AS(forward(p, std::vector<double>{1.0}), ContractViolation);
    }
}

TEST_CASE("loss at zero parameters is ln C") {
    Rng rng(1);
    for (int c : {2, 3, 10}) {
        const auto batch = random_batch(17, 4, c, rng);
        const ModelParams p{{4, 0, static_cast<std::size_t>(c)}, std::vector<double>(Architecture{4, 0, static_cast<std::size_t>(c)}.parameter_count(), 0.0)};
        CHECK(loss_and_grad(p, batch).loss == doctest::Approx(std::log(c)).epsilon(1e-12));
        CHECK(dataset_loss(p, batch) == doctest::Approx(std::log(c)).epsilon(1e-12));
    }
}

TEST_CASE("gradient matches central finite differences") {
    Rng rng(2024);
    const double h = 1e-5;
    for (int instance = 0; instance < 50; ++instance) {
        const Architecture arch{3, (instance % 2) ? 4u : 0u, 3};
        const auto p = random_params(arch, rng);
        const auto batch = random_batch(6, 3, 3, rng);
        const auto analytic = loss_and_grad(p, batch).grad;
        std::vector<double> numeric(p.values.size());
        for (std::size_t i = 0; i < p.values.size(); ++i) {
            auto plus = p, minus = p;
            plus.values[i] += h;
            minus.values[i] -= h;
            numeric[i] = (dataset_loss(plus, batch) - dataset_loss(minus, batch)) / (2 * h);
        }
        std::vector<double> diff(numeric.size());
        for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = analytic[i] - numeric[i];
        const double rel = l2(diff) / std::max(l2(analytic) + l2(numeric), 1e-12);
        CHECK(rel < 1e-4);
    }
}

TEST_CASE("duplicating a batch leaves loss and gradient unchanged") {
    Rng rng(3);
    const auto p = random_params({4, 5, 3}, rng);
    const auto batch = random_batch(9, 4, 3, rng);
    Dataset twice(4, 3);
    for (int r = 0; r < 2; ++r)
        for (std::size_t i = 0; i < batch.size(); ++i) twice.add(batch.features(i), batch.label(i));
    const auto a = loss_and_grad(p, batch);
    const auto b = loss_and_grad(p, twice);
    CHECK(std::abs(a.loss - b.loss) < 1e-12);
    for (std::size_t i = 0; i < a.grad.size(); ++i) CHECK(std::abs(a.grad[i] - b.grad[i]) < 1e-12);
}

TEST_CASE("index-subset gradient equals gradient on the materialized subset") {
    Rng rng(8);
    const auto p = random_params({2, 0, 2}, rng);
    const auto data = random_batch(10, 2, 2, rng);
    const std::vector<std::size_t> idx{7, 2, 2, 5};
    Dataset sub(2, 2);
    for (auto i : idx) sub.add(data.features(i), data.label(i));
    const auto a = loss_and_grad(p, data, idx);
    const auto b = loss_and_grad(p, sub);
    CHECK(a.loss == doctest::Approx(b.loss).epsilon(1e-14));
    for (std::size_t i = 0; i < a.grad.size(); ++i) CHECK(a.grad[i] == doctest::Approx(b.grad[i]).epsilon(1e-14));
}

TEST_CASE("empty batch is a contract violation") {
    const ModelParams p{{2, 0, 2}, std::vector<double>(6, 0.0)};
    CHECK_THROWS_AS(loss_and_grad(p, Dataset(2, 2)), ContractViolation);
}

TEST_CASE("saturating correct logits give near-zero loss") {
    // One-hot readout of the first coordinate scaled far past saturation.
    ModelParams p{{2, 0, 2}, {1000.0, 0.0, -1000.0, 0.0, 0.0, 0.0}};
    Dataset d(2, 2);
    d.add(std::vector<double>{1.0, 0.0}, 0);
    d.add(std::vector<double>{-1.0, 0.0}, 1);
    const double loss = dataset_loss(p, d);
    CHECK(std::isfinite(loss));
    CHECK(loss < 1e-6);
    CHECK(evaluate(p, d).accuracy == 1.0);
}

TEST_CASE("Adam") {
    SUBCASE("zero gradient leaves parameters unchanged and counts the step") {
        Rng rng(1);
        auto p = random_params({3, 0, 2}, rng);
        const auto before = p;
        auto opt = OptimizerState::for_params(p, 0.1);
        adam_step(p, std::vector<double>(p.values.size(), 0.0), opt);
        CHECK(p == before);
        CHECK(opt.step_count == 1);
    }

    SUBCASE("first step moves each coordinate by about -lr * sign(g)") {
        ModelParams p{{1, 0, 2}, {0.5, -0.5, 0.0, 0.0}};
        auto opt = OptimizerState::for_params(p, 0.01);
        const std::vector<double> g{2.0, -3.0, 1e-3, -0.5};
        adam_step(p, g, opt);
        CHECK(p.values[0] == doctest::Approx(0.49).epsilon(1e-6));
        CHECK(p.values[1] == doctest::Approx(-0.49).epsilon(1e-6));
        CHECK(p.values[2] == doctest::Approx(-0.01).epsilon(1e-4));
        CHECK(p.values[3] == doctest::Approx(0.01).epsilon(1e-6));
    }

    SUBCASE("matches a scripted reference on a 1-D quadratic and decreases monotonically") {
        ModelParams p{{1, 0, 1}, {0.0, 0.0}};
        auto opt = OptimizerState::for_params(p, 0.01);
        double w = 0.0, m = 0.0, v = 0.0;
        double prev = std::numeric_limits<double>::infinity();
        for (int t = 1; t <= 100; ++t) {
            const double g = 2.0 * (p.values[0] - 3.0);
            adam_step(p, std::vector<double>{g, 0.0}, opt);
            const double gr = 2.0 * (w - 3.0);
            m = 0.9 * m + 0.1 * gr;
            v = 0.999 * v + 0.001 * gr * gr;
            w -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
            CHECK(p.values[0] == doctest::Approx(w).epsilon(1e-12));
            const double f = (p.values[0] - 3.0) * (p.values[0] - 3.0);
            if (t > 5) CHECK(f < prev);
            prev = f;
        }
    }

    SUBCASE("non-finite gradient is a training error") {
        ModelParams p{{1, 0, 1}, {0.0, 0.0}};
        auto opt = OptimizerState::for_params(p, 0.01);
        CHECK_THROWS_AS(adam_step(p, std::vector<double>{std::nan(""), 0.0}, opt), TrainingError);
        CHECK_THROWS_AS(adam_step(p, std::vector<double>{INFINITY, 0.0}, opt), TrainingError);
    }
}

TEST_CASE("local training") {
    // Two well-separated blobs.
    Rng rng(6);
    Dataset blobs(2, 2);
    for (int i = 0; i < 200; ++i) {
        const int y = i % 2;
        blobs.add(std::vector<double>{(y ? 3.0 : -3.0) + 0.5 * rng.normal(), 0.5 * rng.normal()}, y);
    }

    SUBCASE("fits separable data") {
        auto p = init_params({2, 0, 2}, 1);
        auto opt = OptimizerState::for_params(p, 0.01);
        Rng train_rng(2);
        train_local(p, blobs, 20, 8, opt, train_rng);
        CHECK(evaluate(p, blobs).accuracy > 0.95);
        CHECK(opt.step_count == 20 * 25);
    }

    SUBCASE("short final batch still counts as a step") {
        auto p = init_params({2, 0, 2}, 1);
        auto opt = OptimizerState::for_params(p, 0.01);
        Rng train_rng(2);
        Dataset seven(2, 2);
        for (std::size_t i = 0; i < 7; ++i) seven.add(blobs.features(i), blobs.label(i));
        train_local(p, seven, 3, 3, opt, train_rng);
        CHECK(opt.step_count == 9);
    }

    SUBCASE("zero learning rate changes nothing") {
        auto p = init_params({2, 4, 2}, 1);
        const auto before = p;
        auto opt = OptimizerState::for_params(p, 0.0);
        Rng train_rng(2);
        train_local(p, blobs, 3, 8, opt, train_rng);
        CHECK(p == before);
    }

    SUBCASE("deterministic given the seed") {
        auto a = init_params({2, 4, 2}, 1), b = a;
        auto oa = OptimizerState::for_params(a, 0.01), ob = oa;
        Rng ra(9), rb(9);
        train_local(a, blobs, 2, 8, oa, ra);
        train_local(b, blobs, 2, 8, ob, rb);
        CHECK(a == b);
        CHECK(oa == ob);
    }

    SUBCASE("empty training set is rejected") {
        auto p = init_params({2, 0, 2}, 1);
        auto opt = OptimizerState::for_params(p, 0.01);
        Rng train_rng(2);
        CHECK_THROWS_AS(train_local(p, Dataset(2, 2), 1, 8, opt, train_rng), ConfigError);
    }
}

TEST_CASE("evaluation") {
    SUBCASE("constant logits score about 1/C on balanced data") {
        Rng rng(5);
        for (int c : {2, 4, 10}) {
            Dataset d(2, c);
            for (int i = 0; i < 1000; ++i) d.add(std::vector<double>{rng.normal(), rng.normal()}, i % c);
            const Architecture arch{2, 0, static_cast<std::size_t>(c)};
            const ModelParams p{arch, std::vector<double>(arch.parameter_count(), 0.0)};
            CHECK(evaluate(p, d).accuracy == doctest::Approx(1.0 / c).epsilon(1e-12));
        }
    }

    SUBCASE("loss agrees with the training loss") {
        Rng rng(7);
        const auto p = random_params({3, 2, 3}, rng);
        const auto d = random_batch(25, 3, 3, rng);
        CHECK(evaluate(p, d).loss == doctest::Approx(loss_and_grad(p, d).loss).epsilon(1e-12));
    }
}
