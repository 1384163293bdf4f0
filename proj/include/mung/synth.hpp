#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mung/rng.hpp"
#include "mung/tensor.hpp"

namespace mung {

// Grid-of-slots scene generator with planted ground-truth relevance. Stands in
// for VQA images: each slot holds an object type, a color and a salience flag,
// and maps to a raw feature vector the visual encoder consumes.
struct SceneConfig {
    int n_slots = 9;
    int n_types = 6;   // object types 1..n_types; 0 is empty
    int n_colors = 4;
    int k_max = 4;     // count answers capped here
    int distractors_min = 1;
    int distractors_max = 3;
    double salience_boost = 2.0;  // feature magnitude multiplier on salient slots
    double jitter = 0.05;         // per-component Gaussian feature noise

    // type one-hot (incl. empty) + color one-hot + salience channel
    int d_raw() const { return (n_types + 1) + n_colors + 1; }
};

// Integer token vocabulary shared by questions and answers.
struct TokenMap {
    int n_types;
    int n_colors;
    int k_max;

    explicit TokenMap(const SceneConfig& cfg)
        : n_types(cfg.n_types), n_colors(cfg.n_colors), k_max(cfg.k_max) {}

    int q_presence() const { return 0; }
    int q_count() const { return 1; }
    int q_color() const { return 2; }
    int type_token(int t) const { return 3 + (t - 1); }  // object types are 1-based
    int color_token(int c) const { return 3 + n_types + c; }
    int yes() const { return 3 + n_types + n_colors; }
    int no() const { return yes() + 1; }
    int num_token(int k) const { return no() + 1 + k; }
    int eos() const { return no() + 1 + (k_max + 1); }
    int vocab_size() const { return eos() + 1; }
};

struct Slot {
    int type = 0;  // 0 = empty
    int color = 0;
    bool salient = false;
};

struct SyntheticScene {
    std::vector<Slot> slots;
};

enum class QuestionTemplate { Presence, Count, Color };

struct Triplet {
    SyntheticScene scene;
    Tensor visual;                // [n_slots x d_raw], jitter already applied
    std::vector<int> question;    // X_L token ids
    std::vector<int> answer;      // answer token(s) + EOS
    std::vector<bool> relevance;  // per slot, planted at generation time
    QuestionTemplate tmpl = QuestionTemplate::Presence;
    int target_type = 1;
};

enum class Split { Train, Val, Test };

// Teacher-forcing views. Input tokens are question ++ answer[:-1]; target at
// position i is the next token; answer_mask is aligned with targets and is
// true exactly on answer-token predictions.
std::vector<int> text_input_ids(const Triplet& t);
std::vector<int> text_target_ids(const Triplet& t);
std::vector<bool> answer_mask(const Triplet& t);

Tensor to_visual_features(const SyntheticScene& scene, const SceneConfig& cfg, Rng& rng);

// One triplet with a forced template and answer class (used for balancing).
Triplet make_triplet(Rng& rng, const SceneConfig& cfg, QuestionTemplate tmpl, int answer_class);

// Disjoint per-split streams from split-salted seeds; answer classes balanced
// by round-robin within each template.
std::vector<Triplet> make_dataset(std::uint64_t seed, int size, Split split,
                                  const SceneConfig& cfg);

// Reads the answer straight off the scene attributes. 100% accurate by
// construction; the solvability oracle for property tests.
std::vector<int> oracle_answer(const Triplet& t, const SceneConfig& cfg);

// JSONL dump, one object per triplet.
void dump_dataset(const std::vector<Triplet>& data, const std::string& path);

std::uint64_t split_salt(Split s);

}  // namespace mung
