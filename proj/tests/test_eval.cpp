#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "mung/eval.hpp"

using namespace mung;

namespace {

struct EvalWorld {
    SceneConfig scene;
    BackboneConfig bcfg;

    EvalWorld() {
        scene.n_slots = 3;
        scene.n_types = 3;
        scene.n_colors = 2;
        scene.k_max = 2;
        bcfg.d_model = 8;
        bcfg.n_vis_tokens = scene.n_slots;
        bcfg.d_raw = scene.d_raw();
        bcfg.vocab_size = TokenMap(scene).vocab_size();
        bcfg.max_seq_len = 8;
        bcfg.n_layers = 1;
        bcfg.n_heads = 2;
        bcfg.d_ff = 16;
        bcfg.seed = 31;
    }

    GeneratorConfig gcfg() const {
        GeneratorConfig g;
        g.d_model = bcfg.d_model;
        g.n_heads = 2;
        g.seed = 41;
        return g;
    }
};

// CA generator forced to mu = 0, sigma ~ 0: injection is a no-op up to ~1e-17.
NoiseGenerator zero_noise_generator(GeneratorConfig gcfg) {
    gcfg.log_sigma_min = -45.0;
    gcfg.log_sigma_max = -45.0;
    NoiseGenerator gen(gcfg);
    for (auto& [name, t] : gen.named_parameters()) {
        if (name == "mung/w_mu" || name == "mung/b_mu" || name == "mung/w_ls") {
            t.set_data(std::vector<double>(t.numel(), 0.0));
        }
    }
    return gen;
}

}  // namespace

TEST_CASE("task entropy of an untrained model sits near log vocab") {
    EvalWorld w;
    Backbone bb(w.bcfg);
    auto data = make_dataset(17, 64, Split::Val, w.scene);
    EntropyEstimate h = estimate_task_entropy(bb, data, 64);
    CHECK(h.n_samples == 64);
    CHECK(h.std_err > 0.0);
    // Untrained logits are near-uniform; allow a broad band around ln(vocab).
    CHECK(h.value > 0.5 * std::log(static_cast<double>(w.bcfg.vocab_size)));
    CHECK(h.value < 2.0 * std::log(static_cast<double>(w.bcfg.vocab_size)));
    CHECK_THROWS_AS(estimate_task_entropy(bb, data, 0), ValueError);
}

TEST_CASE("zero noise makes conditional entropy match task entropy") {
    EvalWorld w;
    Backbone bb(w.bcfg);
    bb.freeze();
    NoiseGenerator gen = zero_noise_generator(w.gcfg());
    ModelBundle model{&bb, &gen, MergeMode::Add, true};
    auto data = make_dataset(19, 48, Split::Val, w.scene);
    EntropyEstimate ht = estimate_task_entropy(bb, data, 48);
    EntropyEstimate hc = estimate_conditional_entropy(model, data, 48, 2, 5);
    CHECK(hc.value == doctest::Approx(ht.value).epsilon(1e-12));

    EntropyReport rep = mutual_information_check(model, data, 48, 2, 5);
    CHECK(std::abs(rep.mi_estimate) < 1e-12);
    CHECK(rep.paired_diff_se < 1e-12);
    CHECK(!rep.positive);
}

TEST_CASE("standard error shrinks like one over sqrt n") {
    EvalWorld w;
    Backbone bb(w.bcfg);
    // Average the SE ratio over several disjoint datasets to beat sampling noise.
    double ratio_sum = 0.0;
    const int reps = 5;
    for (int r = 0; r < reps; ++r) {
        auto data = make_dataset(100 + r, 200, Split::Val, w.scene);
        EntropyEstimate small = estimate_task_entropy(bb, data, 50);
        EntropyEstimate large = estimate_task_entropy(bb, data, 200);
        ratio_sum += large.std_err / small.std_err;
    }
    const double mean_ratio = ratio_sum / reps;
    CHECK(mean_ratio > 0.5 * 0.7);
    CHECK(mean_ratio < 1.5 * 0.5 + 0.1);  // approx 1/2, generous band
}

TEST_CASE("answer accuracy is a fraction and deterministic in the seed") {
    EvalWorld w;
    Backbone bb(w.bcfg);
    bb.freeze();
    NoiseGenerator gen(w.gcfg());
    auto data = make_dataset(23, 30, Split::Test, w.scene);
    const double a1 = answer_accuracy(bb, &gen, MergeMode::Add, true, data, 9);
    const double a2 = answer_accuracy(bb, &gen, MergeMode::Add, true, data, 9);
    CHECK(a1 == a2);
    CHECK(a1 >= 0.0);
    CHECK(a1 <= 1.0);
    const double base = answer_accuracy(bb, nullptr, MergeMode::Add, false, data, 9);
    CHECK(base >= 0.0);
    CHECK(base <= 1.0);
}

TEST_CASE("untrained attention scores near-chance AUC") {
    EvalWorld w;
    Backbone bb(w.bcfg);
    bb.freeze();
    NoiseGenerator gen(w.gcfg());
    SceneConfig scfg = w.scene;
    scfg.distractors_min = 1;
    scfg.distractors_max = 1;
    auto data = make_dataset(29, 300, Split::Val, scfg);
    RelevanceScore score = relevance_score(bb, gen, data);
    CHECK(score.used > 100);
    CHECK(score.auc > 0.3);
    CHECK(score.auc < 0.7);

    GeneratorConfig mcfg = w.gcfg();
    mcfg.variant = GeneratorVariant::Mlp;
    NoiseGenerator mlp(mcfg);
    CHECK_THROWS_AS(relevance_score(bb, mlp, data), ValueError);
}

TEST_CASE("degenerate salience masks are skipped, not scored") {
    EvalWorld w;
    Backbone bb(w.bcfg);
    NoiseGenerator gen(w.gcfg());
    SceneConfig mixed_cfg = w.scene;  // some scenes carry no salient slot at all
    mixed_cfg.distractors_min = 0;
    mixed_cfg.distractors_max = 1;
    auto data = make_dataset(37, 60, Split::Val, mixed_cfg);
    RelevanceScore score = relevance_score(bb, gen, data);
    CHECK(score.skipped > 0);
    CHECK(score.used > 0);
    CHECK(score.used + score.skipped == 60);

    // Every triplet degenerate: nothing to score.
    SceneConfig clean_cfg = w.scene;
    clean_cfg.distractors_min = 0;
    clean_cfg.distractors_max = 0;
    auto clean = make_dataset(38, 10, Split::Val, clean_cfg);
    CHECK_THROWS_AS(relevance_score(bb, gen, clean), ValueError);
}

TEST_CASE("importance map is invariant to a uniform logit shift") {
    EvalWorld w;
    Backbone bb(w.bcfg);
    auto data = make_dataset(41, 4, Split::Val, w.scene);
    auto before = importance_map(bb, nullptr, MergeMode::Add, data[0], false, 3);
    REQUIRE(before.size() == static_cast<std::size_t>(w.scene.n_slots));

    // Adding a constant to every head bias shifts all logits equally; softmax
    // probabilities and therefore the saliency must not move.
    for (auto& [name, t] : bb.named_parameters()) {
        if (name == "head/b") {
            std::vector<double> v = t.data();
            for (double& x : v) x += 5.0;
            t.set_data(v);
        }
    }
    auto after = importance_map(bb, nullptr, MergeMode::Add, data[0], false, 3);
    for (std::size_t i = 0; i < before.size(); ++i) {
        CHECK(after[i] == doctest::Approx(before[i]).epsilon(1e-9));
        CHECK(before[i] > 0.0);
    }
}

TEST_CASE("importance map with noise is deterministic in the seed") {
    EvalWorld w;
    Backbone bb(w.bcfg);
    bb.freeze();
    NoiseGenerator gen(w.gcfg());
    auto data = make_dataset(43, 2, Split::Val, w.scene);
    auto a = importance_map(bb, &gen, MergeMode::Add, data[0], true, 11);
    auto b = importance_map(bb, &gen, MergeMode::Add, data[0], true, 11);
    auto c = importance_map(bb, &gen, MergeMode::Add, data[0], true, 12);
    CHECK(a == b);
    CHECK(a != c);
}

TEST_CASE("pgm export round-trips the normalized grid") {
    const std::vector<double> values = {0.0, 0.5, 1.0, 0.25, 0.75, 1.0};
    const std::string path = "/tmp/mung_test_map.pgm";
    export_map(values, 2, 3, path, MapFormat::Pgm);
    int rows = 0, cols = 0;
    auto pixels = parse_pgm(path, rows, cols);
    CHECK(rows == 2);
    CHECK(cols == 3);
    REQUIRE(pixels.size() == 6);
    CHECK(pixels[0] == 0);
    CHECK(pixels[1] == 128);
    CHECK(pixels[2] == 255);
    CHECK(pixels[5] == 255);
    std::remove(path.c_str());
}

TEST_CASE("csv export writes raw values; bad grids are rejected") {
    const std::vector<double> values = {1.5, -2.25};
    const std::string path = "/tmp/mung_test_map.csv";
    export_map(values, 1, 2, path, MapFormat::Csv);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "1.5,-2.25");
    std::remove(path.c_str());

    CHECK_THROWS_AS(export_map(values, 2, 2, path, MapFormat::Csv), ValueError);
    CHECK_THROWS_AS(export_map(std::vector<double>{}, 0, 0, path, MapFormat::Pgm), ValueError);
}

TEST_CASE("ablation table lists all six cells") {
    std::vector<AblationCell> cells(6);
    const char* names[] = {"mlp/add", "mlp/dot", "ca/dot", "ca/add-no-noise", "gauss/add",
                           "ca/add"};
    for (int i = 0; i < 6; ++i) {
        cells[i].name = names[i];
        cells[i].auc = (i >= 2 && i != 4) ? 0.5 : -1.0;
    }
    const std::string text = ablation_table_text(cells);
    for (const char* n : names) CHECK(text.find(n) != std::string::npos);
}
