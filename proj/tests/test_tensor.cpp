#include <doctest.h>

#include <cmath>
#include <limits>

#include "mung/gradcheck.hpp"
#include "mung/rng.hpp"
#include "mung/tensor.hpp"

using namespace mung;

TEST_CASE("matmul identity and zero cases") {
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor b({2, 2}, {3, 4, 5, 6});
    Tensor c = matmul(eye, b);
    CHECK(c.data() == b.data());

    Tensor row({1, 2}, {1, 2});
    Tensor zero({2, 1}, {0, 0});
    CHECK(matmul(row, zero).item() == 0.0);
}

TEST_CASE("matmul shape error names both shapes") {
    Tensor a({2, 3}, std::vector<double>(6, 1.0));
    Tensor b({2, 2}, std::vector<double>(4, 1.0));
    try {
        matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
        CHECK(msg.find("[2x2]") != std::string::npos);
    }
}

TEST_CASE("matmul gradient vs central finite differences") {
    Rng rng(42);
    Tensor a = rng.uniform_tensor({3, 4}, -2.0, 2.0, true);
    Tensor b = rng.uniform_tensor({4, 2}, -2.0, 2.0, true);
    Tensor w = rng.uniform_tensor({3, 2}, -1.0, 1.0);  // fixed weighting to a scalar
    auto report = grad_check([&]() { return sum(hadamard(matmul(a, b), w)); },
                             {{"a", a}, {"b", b}}, 1e-4, 1e-6);
    CHECK(report.pass);
    CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("elementwise basics") {
    Tensor a({2}, {2, 3});
    Tensor z({2}, {0, 0});
    CHECK(hadamard(a, z).data() == std::vector<double>{0, 0});
    CHECK(exp(Tensor({1}, {0})).item() == 1.0);
    CHECK(relu(Tensor({2}, {-1, 2})).data() == std::vector<double>{0, 2});
    CHECK_THROWS_AS(add(a, Tensor({3}, {1, 2, 3})), ShapeError);
}

TEST_CASE("gelu gradient vs finite differences at -2, 0, 3") {
    Tensor x({3}, {-2.0, 0.0, 3.0}, true);
    auto report = grad_check([&]() { return sum(gelu(x)); }, {{"x", x}}, 1e-4, 1e-5);
    CHECK(report.pass);
}

TEST_CASE("softmax rows") {
    Tensor t({1, 3}, {1, 1, 1});
    Tensor s = softmax_rows(t);
    for (double v : s.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

    Tensor limit = softmax_rows(Tensor({1, 2}, {0.0, 60.0}));
    CHECK(limit.at(0, 0) < 1e-20);
    CHECK(limit.at(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("softmax outputs in (0,1) and rows sum to 1") {
    Rng rng(3);
    Tensor x = rng.uniform_tensor({6, 5}, -30.0, 30.0);
    Tensor s = softmax_rows(x);
    for (int i = 0; i < 6; ++i) {
        double row = 0.0;
        for (int j = 0; j < 5; ++j) {
            CHECK(s.at(i, j) > 0.0);
            CHECK(s.at(i, j) < 1.0);
            row += s.at(i, j);
        }
        CHECK(std::abs(row - 1.0) <= 1e-12);
    }
}

TEST_CASE("softmax jacobian-vector product vs finite differences") {
    Rng rng(7);
    Tensor x = rng.uniform_tensor({1, 5}, -2.0, 2.0, true);
    Tensor w = rng.uniform_tensor({1, 5}, -1.0, 1.0);
    auto report = grad_check([&]() { return sum(hadamard(softmax_rows(x), w)); }, {{"x", x}},
                             1e-4, 1e-6);
    CHECK(report.pass);
}

TEST_CASE("layernorm constant and already-normalized rows") {
    Tensor gain({2}, {1, 1});
    Tensor bias({2}, {0, 0});
    Tensor flat = layernorm_rows(Tensor({1, 2}, {1, 1}), gain, bias, 1e-5);
    CHECK(std::abs(flat.at(0, 0)) < 1e-9);
    CHECK(std::abs(flat.at(0, 1)) < 1e-9);

    Tensor norm = layernorm_rows(Tensor({1, 2}, {-1, 1}), gain, bias, 1e-5);
    CHECK(norm.at(0, 0) == doctest::Approx(-1.0).epsilon(1e-4));
    CHECK(norm.at(0, 1) == doctest::Approx(1.0).epsilon(1e-4));

    CHECK_THROWS_AS(layernorm_rows(Tensor({1, 2}, {1, 1}), gain, bias, 0.0), ValueError);
}

TEST_CASE("layernorm gradient check on random 2x8 input") {
    Rng rng(11);
    Tensor x = rng.uniform_tensor({2, 8}, -2.0, 2.0, true);
    Tensor gain = rng.uniform_tensor({8}, 0.5, 1.5, true);
    Tensor bias = rng.uniform_tensor({8}, -0.5, 0.5, true);
    Tensor w = rng.uniform_tensor({2, 8}, -1.0, 1.0);
    auto report = grad_check(
        [&]() { return sum(hadamard(layernorm_rows(x, gain, bias, 1e-5), w)); },
        {{"x", x}, {"gain", gain}, {"bias", bias}}, 1e-4, 1e-5);
    CHECK(report.pass);
}

TEST_CASE("cross entropy uniform and dominant-logit cases") {
    Tensor uniform({1, 4}, {0, 0, 0, 0});
    const int tgt[] = {2};
    CHECK(cross_entropy_logits(uniform, tgt).item() == doctest::Approx(std::log(4.0)));

    Tensor dominant({1, 4}, {0, 0, 50.0, 0});
    CHECK(cross_entropy_logits(dominant, tgt).item() < 1e-12);

    const int bad[] = {7};
    CHECK_THROWS_AS(cross_entropy_logits(uniform, bad), ValueError);
}

TEST_CASE("cross entropy gradient vs finite differences on random 3x6 logits") {
    Rng rng(5);
    Tensor logits = rng.uniform_tensor({3, 6}, -2.0, 2.0, true);
    const std::vector<int> targets = {1, 4, 0};
    auto report = grad_check([&]() { return sum(cross_entropy_logits(logits, targets)); },
                             {{"logits", logits}}, 1e-4, 1e-6);
    CHECK(report.pass);
}

TEST_CASE("backward requires scalar loss") {
    Tensor x({2}, {1, 2}, true);
    CHECK_THROWS_AS(backward(scale(x, 2.0)), ShapeError);
}

TEST_CASE("backward is linear over independent subgraphs") {
    Rng rng(9);
    Tensor x = rng.uniform_tensor({4}, -2.0, 2.0, true);
    Tensor y = rng.uniform_tensor({4}, -2.0, 2.0, true);

    backward(add(sum(hadamard(x, x)), sum(gelu(y))));
    const std::vector<double> gx_joint = x.grad();
    const std::vector<double> gy_joint = y.grad();

    x.zero_grad();
    y.zero_grad();
    backward(sum(hadamard(x, x)));
    backward(sum(gelu(y)));
    CHECK(x.grad() == gx_joint);
    CHECK(y.grad() == gy_joint);
}

TEST_CASE("seeded computation is bit-deterministic") {
    auto run = [] {
        Rng rng(1234);
        Tensor a = rng.normal_tensor({3, 3}, 1.0, true);
        Tensor b = rng.normal_tensor({3, 3});
        Tensor loss = sum(hadamard(softmax_rows(matmul(a, b)), b));
        backward(loss);
        auto out = a.grad();
        out.push_back(loss.item());
        return out;
    };
    CHECK(run() == run());
}

TEST_CASE("non-finite results raise immediately") {
    Tensor big({1}, {1000.0});
    CHECK_THROWS_AS(exp(big), NumericError);
    CHECK_THROWS_AS(Tensor({1}, {std::numeric_limits<double>::quiet_NaN()}), NumericError);
}

TEST_CASE("grad_check harness on quadratic is near-exact") {
    Tensor x({2}, {1, 2}, true);
    auto report = grad_check([&]() { return sum(hadamard(x, x)); }, {{"x", x}}, 1e-4, 1e-6);
    CHECK(report.pass);
    x.zero_grad();
    backward(sum(hadamard(x, x)));
    CHECK(x.grad()[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(x.grad()[1] == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(report.max_rel_err < 1e-8);
}

TEST_CASE("frozen coordinates receive no gradient") {
    Tensor x({2}, {1, 2}, true);
    Tensor frozen({2}, {3, 4}, false);
    backward(sum(hadamard(x, frozen)));
    CHECK(!frozen.has_grad());
    CHECK(x.has_grad());
}

TEST_CASE("l2 row normalization: values, zero rows, gradient") {
    Tensor x({2, 2}, {3.0, 4.0, 0.0, 0.0});
    Tensor y = l2_normalize_rows(x);
    CHECK(y.at(0, 0) == doctest::Approx(0.6).epsilon(1e-9));
    CHECK(y.at(0, 1) == doctest::Approx(0.8).epsilon(1e-9));
    CHECK(y.at(1, 0) == 0.0);  // zero row stays zero, no division blowup
    CHECK(y.at(1, 1) == 0.0);
    CHECK_THROWS_AS(l2_normalize_rows(x, 0.0), ValueError);

    Rng rng(17);
    Tensor g = rng.normal_tensor({3, 5}, 1.0, true);
    Tensor w = rng.normal_tensor({3, 5});
    auto report = grad_check([&]() { return sum(hadamard(l2_normalize_rows(g), w)); },
                             {{"g", g}}, 1e-5, 1e-6);
    CHECK(report.pass);
}
