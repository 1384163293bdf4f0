#include <doctest.h>

#include <map>
#include <set>

#include "mung/sha256.hpp"
#include "mung/synth.hpp"

using namespace mung;

namespace {

std::string triplet_fingerprint(const Triplet& t) {
    Sha256 h;
    for (const Slot& s : t.scene.slots) {
        int vals[3] = {s.type, s.color, s.salient ? 1 : 0};
        h.update(vals, sizeof(vals));
    }
    h.update(t.question.data(), t.question.size() * sizeof(int));
    h.update(t.answer.data(), t.answer.size() * sizeof(int));
    return h.hex_digest();
}

std::string dataset_fingerprint(const std::vector<Triplet>& data) {
    Sha256 h;
    for (const Triplet& t : data) {
        const std::string f = triplet_fingerprint(t);
        h.update(f);
        h.update(t.visual.data().data(), t.visual.numel() * sizeof(double));
    }
    return h.hex_digest();
}

}  // namespace

TEST_CASE("every generated triplet is solvable by the scene oracle") {
    SceneConfig cfg;
    cfg.distractors_min = 1;
    cfg.distractors_max = 3;
    auto data = make_dataset(99, 300, Split::Train, cfg);
    REQUIRE(data.size() == 300);
    for (const Triplet& t : data) {
        CHECK(oracle_answer(t, cfg) == t.answer);
    }
}

TEST_CASE("dataset generation is bit-deterministic in the seed") {
    SceneConfig cfg;
    cfg.distractors_max = 2;
    auto a = make_dataset(7, 64, Split::Train, cfg);
    auto b = make_dataset(7, 64, Split::Train, cfg);
    auto c = make_dataset(8, 64, Split::Train, cfg);
    CHECK(dataset_fingerprint(a) == dataset_fingerprint(b));
    CHECK(dataset_fingerprint(a) != dataset_fingerprint(c));
}

TEST_CASE("splits from one seed are disjoint") {
    SceneConfig cfg;
    cfg.distractors_max = 2;
    auto train = make_dataset(5, 200, Split::Train, cfg);
    auto val = make_dataset(5, 200, Split::Val, cfg);
    auto test = make_dataset(5, 200, Split::Test, cfg);
    // Discrete scene layouts can repeat by chance; the per-split RNG streams
    // must still be independent, which shows up in the continuous features.
    auto full = [](const Triplet& t) {
        Sha256 h;
        h.update(triplet_fingerprint(t));
        h.update(t.visual.data().data(), t.visual.numel() * sizeof(double));
        return h.hex_digest();
    };
    std::set<std::string> seen;
    for (const auto* ds : {&train, &val, &test}) {
        for (const Triplet& t : *ds) seen.insert(full(t));
    }
    CHECK(seen.size() == 600);
}

TEST_CASE("distractors never share the queried type and are marked irrelevant") {
    SceneConfig cfg;
    cfg.distractors_min = 2;
    cfg.distractors_max = 3;
    auto data = make_dataset(31, 200, Split::Train, cfg);
    TokenMap tok(cfg);
    for (const Triplet& t : data) {
        REQUIRE(t.relevance.size() == static_cast<std::size_t>(cfg.n_slots));
        // On negative answers every object must be inspected, so distractors
        // are legitimately relevant there.
        const bool negative =
            t.answer.front() == tok.no() || t.answer.front() == tok.num_token(0);
        for (int i = 0; i < cfg.n_slots; ++i) {
            const Slot& s = t.scene.slots[i];
            if (s.salient) {
                CHECK(s.type != t.target_type);
                if (!negative) CHECK(!t.relevance[i]);
            }
        }
    }
}

TEST_CASE("relevant slots carry the queried type on positive questions") {
    SceneConfig cfg;
    cfg.distractors_min = 1;
    cfg.distractors_max = 2;
    auto data = make_dataset(13, 200, Split::Train, cfg);
    TokenMap tok(cfg);
    for (const Triplet& t : data) {
        if (t.answer.front() == tok.no() || t.answer.front() == tok.num_token(0)) {
            continue;  // negative answers have no planted slot
        }
        bool any = false;
        for (int i = 0; i < cfg.n_slots; ++i) {
            if (!t.relevance[i]) continue;
            any = true;
            CHECK(t.scene.slots[i].type == t.target_type);
        }
        CHECK(any);
    }
}

TEST_CASE("answer classes are balanced within each template") {
    SceneConfig cfg;
    auto data = make_dataset(77, 600, Split::Train, cfg);
    std::map<int, std::map<int, int>> counts;  // first question token -> first answer token
    for (const Triplet& t : data) counts[t.question.front()][t.answer.front()] += 1;
    REQUIRE(counts.size() == 3);
    for (const auto& [q, by_answer] : counts) {
        int lo = 1 << 30, hi = 0;
        for (const auto& [a, n] : by_answer) {
            lo = std::min(lo, n);
            hi = std::max(hi, n);
        }
        CHECK(hi - lo <= 1);  // round-robin balancing
    }
}

TEST_CASE("teacher-forcing views are aligned and answer-masked") {
    SceneConfig cfg;
    auto data = make_dataset(3, 12, Split::Train, cfg);
    TokenMap tok(cfg);
    for (const Triplet& t : data) {
        auto in = text_input_ids(t);
        auto tgt = text_target_ids(t);
        auto mask = answer_mask(t);
        REQUIRE(in.size() == tgt.size());
        REQUIRE(mask.size() == tgt.size());
        // Targets are the input sequence shifted left by one, plus the final answer token.
        for (std::size_t i = 0; i + 1 < in.size(); ++i) CHECK(tgt[i] == in[i + 1]);
        CHECK(tgt.back() == t.answer.back());
        CHECK(tgt.back() == tok.eos());
        std::size_t n_answer = 0;
        for (std::size_t i = 0; i < mask.size(); ++i) {
            if (mask[i]) ++n_answer;
            // Question-token predictions are never scored.
            if (i + 1 < t.question.size()) CHECK(!mask[i]);
        }
        CHECK(n_answer == t.answer.size());
    }
}

TEST_CASE("visual features encode type, color and salience blocks") {
    SceneConfig cfg;
    cfg.jitter = 0.0;
    cfg.salience_boost = 2.0;
    SyntheticScene scene;
    scene.slots.assign(static_cast<std::size_t>(cfg.n_slots), Slot{});
    scene.slots[0] = Slot{3, 1, false};
    scene.slots[1] = Slot{2, 0, true};
    Rng rng(1);
    Tensor feats = to_visual_features(scene, cfg, rng);
    REQUIRE(feats.rows() == cfg.n_slots);
    REQUIRE(feats.cols() == cfg.d_raw());
    CHECK(feats.at(0, 3) == 1.0);                   // type one-hot (0 = empty channel)
    CHECK(feats.at(0, cfg.n_types + 1 + 1) == 1.0);  // color one-hot
    CHECK(feats.at(0, cfg.d_raw() - 1) == 0.0);     // not salient
    CHECK(feats.at(1, 2) == 3.0);                   // salient: magnitude x (1 + boost)
    CHECK(feats.at(1, cfg.d_raw() - 1) == 3.0);
    CHECK(feats.at(2, 0) == 1.0);                   // empty slot channel
}

TEST_CASE("token map is injective and eos is the last id") {
    SceneConfig cfg;
    TokenMap tok(cfg);
    std::set<int> ids = {tok.q_presence(), tok.q_count(), tok.q_color(), tok.yes(), tok.no(),
                         tok.eos()};
    for (int t = 1; t <= cfg.n_types; ++t) ids.insert(tok.type_token(t));
    for (int c = 0; c < cfg.n_colors; ++c) ids.insert(tok.color_token(c));
    for (int k = 0; k <= cfg.k_max; ++k) ids.insert(tok.num_token(k));
    CHECK(static_cast<int>(ids.size()) == tok.vocab_size());
    CHECK(*ids.rbegin() == tok.eos());
    CHECK(*ids.begin() == 0);
}

TEST_CASE("invalid scene configs are rejected") {
    SceneConfig cfg;
    cfg.distractors_min = 3;
    cfg.distractors_max = 1;
    CHECK_THROWS_AS(make_dataset(1, 4, Split::Train, cfg), ValueError);
}
