#include "mung/synth.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace mung {

std::uint64_t split_salt(Split s) {
    switch (s) {
        case Split::Train: return 0x7261696e;
        case Split::Val: return 0x76616c;
        case Split::Test: return 0x74657374;
    }
    return 0;
}

std::vector<int> text_input_ids(const Triplet& t) {
    std::vector<int> ids = t.question;
    ids.insert(ids.end(), t.answer.begin(), t.answer.end() - 1);
    return ids;
}

std::vector<int> text_target_ids(const Triplet& t) {
    std::vector<int> ids(t.question.begin() + 1, t.question.end());
    ids.insert(ids.end(), t.answer.begin(), t.answer.end());
    return ids;
}

std::vector<bool> answer_mask(const Triplet& t) {
    std::vector<bool> mask(t.question.size() - 1, false);
    mask.insert(mask.end(), t.answer.size(), true);
    return mask;
}

Tensor to_visual_features(const SyntheticScene& scene, const SceneConfig& cfg, Rng& rng) {
    const int d = cfg.d_raw();
    std::vector<double> data(scene.slots.size() * static_cast<std::size_t>(d), 0.0);
    for (std::size_t i = 0; i < scene.slots.size(); ++i) {
        const Slot& s = scene.slots[i];
        double* f = data.data() + i * d;
        f[s.type] = 1.0;  // type block, index 0 = empty
        if (s.type != 0) f[(cfg.n_types + 1) + s.color] = 1.0;
        f[d - 1] = s.salient ? 1.0 : 0.0;
        const double mag = s.salient ? 1.0 + cfg.salience_boost : 1.0;
        for (int j = 0; j < d; ++j) f[j] = f[j] * mag + cfg.jitter * rng.normal();
    }
    return Tensor({static_cast<int>(scene.slots.size()), d}, std::move(data));
}

namespace {

std::vector<int> pick_slots(Rng& rng, std::vector<int>& free_slots, int k) {
    std::vector<int> picked;
    for (int i = 0; i < k; ++i) {
        const int j = rng.below(static_cast<int>(free_slots.size()));
        picked.push_back(free_slots[j]);
        free_slots.erase(free_slots.begin() + j);
    }
    return picked;
}

}  // namespace

namespace {

void validate_scene_config(const SceneConfig& cfg) {
    if (cfg.n_slots < 1 || cfg.n_types < 2 || cfg.n_colors < 1 || cfg.k_max < 1) {
        throw ValueError("scene config: n_slots/n_types/n_colors/k_max out of range");
    }
    if (cfg.k_max > cfg.n_slots) throw ValueError("scene config: k_max exceeds n_slots");
    if (cfg.distractors_min < 0 || cfg.distractors_max < cfg.distractors_min) {
        throw ValueError("scene config: invalid distractor range");
    }
}

}  // namespace

Triplet make_triplet(Rng& rng, const SceneConfig& cfg, QuestionTemplate tmpl, int answer_class) {
    validate_scene_config(cfg);
    const TokenMap tok(cfg);
    Triplet out;
    out.tmpl = tmpl;
    out.target_type = 1 + rng.below(cfg.n_types);

    int k_target = 0;
    int target_color = rng.below(cfg.n_colors);
    std::vector<int> ans;
    switch (tmpl) {
        case QuestionTemplate::Presence:
            k_target = (answer_class % 2 == 0) ? 1 + rng.below(cfg.k_max) : 0;
            ans = {answer_class % 2 == 0 ? tok.yes() : tok.no()};
            out.question = {tok.q_presence(), tok.type_token(out.target_type)};
            break;
        case QuestionTemplate::Count:
            k_target = answer_class % (cfg.k_max + 1);
            ans = {tok.num_token(k_target)};
            out.question = {tok.q_count(), tok.type_token(out.target_type)};
            break;
        case QuestionTemplate::Color:
            k_target = 1;  // color questions require a unique target object
            target_color = answer_class % cfg.n_colors;
            ans = {tok.color_token(target_color)};
            out.question = {tok.q_color(), tok.type_token(out.target_type)};
            break;
    }
    ans.push_back(tok.eos());
    out.answer = std::move(ans);

    SyntheticScene scene;
    scene.slots.assign(cfg.n_slots, Slot{});
    std::vector<int> free_slots(cfg.n_slots);
    std::iota(free_slots.begin(), free_slots.end(), 0);

    for (int idx : pick_slots(rng, free_slots, std::min(k_target, cfg.n_slots))) {
        Slot& s = scene.slots[idx];
        s.type = out.target_type;
        s.color = (tmpl == QuestionTemplate::Color) ? target_color : rng.below(cfg.n_colors);
        s.salient = false;
    }
    const int nd_span = cfg.distractors_max - cfg.distractors_min;
    int nd = cfg.distractors_min + (nd_span > 0 ? rng.below(nd_span + 1) : 0);
    nd = std::min(nd, static_cast<int>(free_slots.size()));
    for (int idx : pick_slots(rng, free_slots, nd)) {
        Slot& s = scene.slots[idx];
        // Distractors never share the queried type, so the relevance mask
        // excludes them by construction.
        int t = 1 + rng.below(cfg.n_types - 1);
        if (t >= out.target_type) ++t;
        s.type = t;
        s.color = rng.below(cfg.n_colors);
        s.salient = true;
    }

    out.relevance.assign(cfg.n_slots, false);
    bool any = false;
    for (int i = 0; i < cfg.n_slots; ++i) {
        if (scene.slots[i].type == out.target_type) {
            out.relevance[i] = true;
            any = true;
        }
    }
    if (!any) {
        // Negative presence: every non-empty slot must be checked; an empty
        // scene makes every slot relevant.
        bool any_object = false;
        for (int i = 0; i < cfg.n_slots; ++i) {
            if (scene.slots[i].type != 0) {
                out.relevance[i] = true;
                any_object = true;
            }
        }
        if (!any_object) out.relevance.assign(cfg.n_slots, true);
    }

    out.visual = to_visual_features(scene, cfg, rng);
    out.scene = std::move(scene);
    return out;
}

std::vector<Triplet> make_dataset(std::uint64_t seed, int size, Split split,
                                  const SceneConfig& cfg) {
    Rng rng(salt_seed(seed, split_salt(split)));
    std::vector<Triplet> data;
    data.reserve(size);
    int counters[3] = {0, 0, 0};
    for (int i = 0; i < size; ++i) {
        const int which = i % 3;
        const QuestionTemplate tmpl = static_cast<QuestionTemplate>(which);
        data.push_back(make_triplet(rng, cfg, tmpl, counters[which]++));
    }
    return data;
}

std::vector<int> oracle_answer(const Triplet& t, const SceneConfig& cfg) {
    const TokenMap tok(cfg);
    int count = 0;
    int color = -1;
    for (const Slot& s : t.scene.slots) {
        if (s.type == t.target_type) {
            ++count;
            color = s.color;
        }
    }
    std::vector<int> ans;
    switch (t.tmpl) {
        case QuestionTemplate::Presence: ans = {count > 0 ? tok.yes() : tok.no()}; break;
        case QuestionTemplate::Count: ans = {tok.num_token(std::min(count, cfg.k_max))}; break;
        case QuestionTemplate::Color:
            if (count != 1) throw ValueError("oracle_answer: color question without unique object");
            ans = {tok.color_token(color)};
            break;
    }
    ans.push_back(tok.eos());
    return ans;
}

void dump_dataset(const std::vector<Triplet>& data, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ValueError("dump_dataset: cannot write " + path);
    for (const Triplet& t : data) {
        nlohmann::json j;
        nlohmann::json slots = nlohmann::json::array();
        for (const Slot& s : t.scene.slots) {
            slots.push_back({{"type", s.type}, {"color", s.color}, {"salient", s.salient}});
        }
        j["slots"] = slots;
        j["question"] = t.question;
        j["answer"] = t.answer;
        j["relevance"] = t.relevance;
        out << j.dump() << "\n";
    }
}

}  // namespace mung
