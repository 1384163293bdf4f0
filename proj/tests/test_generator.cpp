#include <doctest.h>

#include <cmath>

#include "mung/gradcheck.hpp"
#include "mung/generator.hpp"

using namespace mung;

namespace {

GeneratorConfig ca_config(int d = 8, MergeMode merge = MergeMode::Add) {
    GeneratorConfig cfg;
    cfg.variant = GeneratorVariant::CrossAttention;
    cfg.merge = merge;
    cfg.d_model = d;
    cfg.n_heads = 2;
    cfg.seed = 33;
    return cfg;
}

void zero_params(NoiseGenerator& gen) {
    for (const Tensor& p : gen.parameters()) {
        p.set_data(std::vector<double>(p.numel(), 0.0));
    }
}

}  // namespace

TEST_CASE("gaussian baseline with unit scale on unit-rms features") {
    GeneratorConfig cfg;
    cfg.variant = GeneratorVariant::GaussianBaseline;
    cfg.gauss_scale = 1.0;
    cfg.d_model = 4;
    NoiseGenerator gen(cfg);
    Tensor x_v({2, 4}, {1, -1, 1, -1, -1, 1, -1, 1});  // rms exactly 1
    Tensor x_l({1, 4}, {0.3, 0.1, -0.2, 0.5});
    auto p = gen.compute_params(x_v, x_l, nullptr);
    for (double v : p.mu.data()) CHECK(v == 0.0);
    for (double v : p.log_sigma.data()) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(gen.param_count() == 0);
}

TEST_CASE("cross-attention with zeroed heads emits mu 0 and log_sigma 0") {
    NoiseGenerator gen(ca_config());
    zero_params(gen);
    Rng rng(1);
    Tensor x_v = rng.normal_tensor({3, 8});
    Tensor x_l = rng.normal_tensor({2, 8});
    auto p = gen.compute_params(x_v, x_l, nullptr);
    for (double v : p.mu.data()) CHECK(v == 0.0);
    for (double v : p.log_sigma.data()) CHECK(v == 0.0);
}

TEST_CASE("attention weights are row-stochastic; visual renormalization is column-stochastic") {
    NoiseGenerator gen(ca_config());
    Rng rng(2);
    Tensor x_v = rng.normal_tensor({4, 8});
    Tensor x_l = rng.normal_tensor({3, 8});
    Tensor ans = rng.normal_tensor({2, 8});
    auto p = gen.compute_params(x_v, x_l, &ans);
    REQUIRE(p.attn_weights.has_value());
    REQUIRE(p.attn_over_visual.has_value());
    const Tensor& aw = *p.attn_weights;
    REQUIRE(aw.rows() >= 4);  // heads stacked over visual tokens
    CHECK(aw.cols() == 5);    // question + answer positions
    for (int i = 0; i < aw.rows(); ++i) {
        double s = 0.0;
        for (int j = 0; j < aw.cols(); ++j) {
            CHECK(aw.at(i, j) >= 0.0);
            s += aw.at(i, j);
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
    const Tensor& av = *p.attn_over_visual;
    CHECK(av.rows() == aw.rows());
    CHECK(av.cols() == aw.cols());
}

TEST_CASE("reparameterized sample matches the closed form") {
    Tensor mu({1, 1}, {0.5});
    Tensor ls({1, 1}, {std::log(2.0)});
    Tensor eps({1, 1}, {-0.25});
    Tensor e = NoiseGenerator::sample(mu, ls, eps);
    CHECK(e.item() == doctest::Approx(0.0).epsilon(1e-15));  // 2 * -0.25 + 0.5
}

TEST_CASE("sample gradients: dE/dmu = 1 and dE/dlog_sigma = sigma * eps") {
    Tensor mu({1, 2}, {0.5, -1.0}, true);
    Tensor ls({1, 2}, {std::log(2.0), -0.5}, true);
    Tensor eps({1, 2}, {-0.25, 1.5});
    auto report = grad_check([&]() { return sum(NoiseGenerator::sample(mu, ls, eps)); },
                             {{"mu", mu}, {"ls", ls}}, 1e-5, 1e-6);
    CHECK(report.pass);
    mu.zero_grad();
    ls.zero_grad();
    backward(sum(NoiseGenerator::sample(mu, ls, eps)));
    CHECK(mu.grad()[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(mu.grad()[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(ls.grad()[0] == doctest::Approx(2.0 * -0.25).epsilon(1e-12));
    CHECK(ls.grad()[1] == doctest::Approx(std::exp(-0.5) * 1.5).epsilon(1e-12));
}

TEST_CASE("draw obeys the reparameterization identity bit-exactly") {
    NoiseGenerator gen(ca_config());
    Rng rng(5);
    Tensor x_v = rng.normal_tensor({3, 8});
    Tensor x_l = rng.normal_tensor({2, 8});
    Rng draw_rng(77);
    NoiseSample s = gen.draw(x_v, x_l, nullptr, draw_rng);
    CHECK(!s.epsilon.requires_grad());
    Tensor manual = NoiseGenerator::sample(s.mu, s.log_sigma, s.epsilon);
    CHECK(s.noise.data() == manual.data());
}

TEST_CASE("deterministic mode injects mu directly") {
    NoiseGenerator gen(ca_config());
    Rng rng(6);
    Tensor x_v = rng.normal_tensor({3, 8});
    Tensor x_l = rng.normal_tensor({2, 8});
    NoiseSample s = gen.deterministic(x_v, x_l, nullptr);
    CHECK(s.noise.data() == s.mu.data());
}

TEST_CASE("near-zero sigma collapses draws onto mu") {
    GeneratorConfig cfg = ca_config();
    cfg.log_sigma_min = -40.0;
    cfg.log_sigma_init = -40.0;
    NoiseGenerator gen(cfg);
    Rng rng(7);
    Tensor x_v = rng.normal_tensor({3, 8});
    Tensor x_l = rng.normal_tensor({2, 8});
    Rng r1(1), r2(2);
    NoiseSample a = gen.draw(x_v, x_l, nullptr, r1);
    NoiseSample b = gen.draw(x_v, x_l, nullptr, r2);
    for (std::size_t i = 0; i < a.noise.numel(); ++i) {
        CHECK(std::abs(a.noise.data()[i] - b.noise.data()[i]) < 1e-14);
        CHECK(std::abs(a.noise.data()[i] - a.mu.data()[i]) < 1e-14);
    }
}

TEST_CASE("log_sigma respects the configured clamp range") {
    GeneratorConfig cfg = ca_config();
    cfg.log_sigma_min = -2.0;
    cfg.log_sigma_max = 0.5;
    NoiseGenerator gen(cfg);
    Rng rng(8);
    Tensor x_v = rng.normal_tensor({4, 8}, 5.0);
    Tensor x_l = rng.normal_tensor({3, 8}, 5.0);
    auto p = gen.compute_params(x_v, x_l, nullptr);
    for (double v : p.log_sigma.data()) {
        CHECK(v >= -2.0);
        CHECK(v <= 0.5);
    }
}

TEST_CASE("inject identities for both merge modes") {
    Rng rng(9);
    Tensor x_v = rng.normal_tensor({3, 4});
    Tensor zero = Tensor::zeros({3, 4});
    Tensor ones = Tensor::full({3, 4}, 1.0);
    CHECK(NoiseGenerator::inject(x_v, zero, MergeMode::Add).data() == x_v.data());
    CHECK(NoiseGenerator::inject(x_v, ones, MergeMode::Dot).data() == x_v.data());
    Tensor e = rng.normal_tensor({3, 4});
    Tensor merged = NoiseGenerator::inject(x_v, e, MergeMode::Dot);
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 4; ++j) {
            CHECK(merged.at(i, j) == doctest::Approx(x_v.at(i, j) * e.at(i, j)));
        }
    }
}

TEST_CASE("answer passed separately equals answer concatenated to the question") {
    NoiseGenerator gen(ca_config());
    Rng rng(10);
    Tensor x_v = rng.normal_tensor({3, 8});
    Tensor x_l = rng.normal_tensor({2, 8});
    Tensor ans = rng.normal_tensor({2, 8});
    auto with = gen.compute_params(x_v, x_l, &ans);
    auto concat = gen.compute_params(x_v, concat_rows({x_l, ans}), nullptr);
    CHECK(with.mu.data() == concat.mu.data());
    CHECK(with.log_sigma.data() == concat.log_sigma.data());
}

TEST_CASE("parameter counts match the closed-form formulas") {
    const int d = 8;
    NoiseGenerator ca(ca_config(d));
    CHECK(ca.param_count() == static_cast<std::size_t>(5 * d * d + 2 * d));

    GeneratorConfig mcfg;
    mcfg.variant = GeneratorVariant::Mlp;
    mcfg.d_model = d;
    mcfg.mlp_hidden = 16;
    NoiseGenerator mlp(mcfg);
    const std::size_t expected = 2 * d * 16 + 16   // w1, b1
                                 + 2 * (16 * d + d);  // mu and log-sigma heads
    CHECK(mlp.param_count() == expected);

    const double mine = 5.0 * d * d + 2 * d;
    CHECK(ca.param_fraction(100000) == doctest::Approx(mine / (mine + 100000.0)));
}

TEST_CASE("generator parameters receive gradient through a draw") {
    NoiseGenerator gen(ca_config());
    Rng rng(11);
    Tensor x_v = rng.normal_tensor({3, 8});
    Tensor x_l = rng.normal_tensor({2, 8});
    Rng draw_rng(3);
    NoiseSample s = gen.draw(x_v, x_l, nullptr, draw_rng);
    backward(sum(s.noise));
    bool any = false;
    for (const Tensor& p : gen.parameters()) {
        if (!p.has_grad()) continue;
        for (double g : p.grad()) {
            if (g != 0.0) any = true;
        }
    }
    CHECK(any);
}

TEST_CASE("attention map summarizes visual mass and rejects non-CA samples") {
    NoiseGenerator gen(ca_config());
    Rng rng(12);
    Tensor x_v = rng.normal_tensor({4, 8});
    Tensor x_l = rng.normal_tensor({2, 8});
    NoiseSample s = gen.deterministic(x_v, x_l, nullptr);
    auto map = NoiseGenerator::attention_map(s);
    REQUIRE(map.size() == 4);
    for (double v : map) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    GeneratorConfig mcfg;
    mcfg.variant = GeneratorVariant::Mlp;
    mcfg.d_model = 8;
    NoiseGenerator mlp(mcfg);
    NoiseSample ms = mlp.deterministic(x_v, x_l, nullptr);
    CHECK_THROWS_AS(NoiseGenerator::attention_map(ms), ValueError);
}

TEST_CASE("variant and merge names round-trip; unknown names are rejected") {
    for (auto v : {GeneratorVariant::CrossAttention, GeneratorVariant::Mlp,
                   GeneratorVariant::GaussianBaseline}) {
        CHECK(variant_from_string(to_string(v)) == v);
    }
    for (auto m : {MergeMode::Add, MergeMode::Dot}) {
        CHECK(merge_from_string(to_string(m)) == m);
    }
    CHECK_THROWS_AS(variant_from_string("nope"), ValueError);
    CHECK_THROWS_AS(merge_from_string("nope"), ValueError);
}

TEST_CASE("generator checkpoint round-trips exactly") {
    NoiseGenerator gen(ca_config());
    Checkpoint ck = gen.to_checkpoint();
    GeneratorConfig cfg2 = ca_config();
    cfg2.seed = 4242;
    NoiseGenerator other(cfg2);
    other.load_checkpoint(ck);
    CHECK(other.to_checkpoint().digest() == ck.digest());
}
