#include "mung/config.hpp"

#include <fstream>
#include <set>

namespace mung {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::string& where, const std::set<std::string>& known) {
    if (!j.is_object()) throw ConfigError("config: '" + where + "' must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!known.count(it.key())) {
            throw ConfigError("config: unknown key '" + where + "." + it.key() + "'");
        }
    }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

SceneConfig parse_scene(const json& j) {
    check_keys(j, "scene",
               {"n_slots", "n_types", "n_colors", "k_max", "distractors_min", "distractors_max",
                "salience_boost", "jitter"});
    SceneConfig s;
    read(j, "n_slots", s.n_slots);
    read(j, "n_types", s.n_types);
    read(j, "n_colors", s.n_colors);
    read(j, "k_max", s.k_max);
    read(j, "distractors_min", s.distractors_min);
    read(j, "distractors_max", s.distractors_max);
    read(j, "salience_boost", s.salience_boost);
    read(j, "jitter", s.jitter);
    return s;
}

BackboneConfig parse_backbone(const json& j) {
    check_keys(j, "backbone",
               {"d_model", "max_seq_len", "n_layers", "n_heads", "d_ff", "layer_norm", "ln_eps",
                "seed"});
    BackboneConfig b;
    read(j, "d_model", b.d_model);
    read(j, "max_seq_len", b.max_seq_len);
    read(j, "n_layers", b.n_layers);
    read(j, "n_heads", b.n_heads);
    read(j, "d_ff", b.d_ff);
    read(j, "layer_norm", b.layer_norm);
    read(j, "ln_eps", b.ln_eps);
    read(j, "seed", b.seed);
    return b;
}

GeneratorConfig parse_generator(const json& j) {
    check_keys(j, "generator",
               {"variant", "merge", "n_heads", "mlp_hidden", "gauss_scale", "log_sigma_min",
                "log_sigma_max", "log_sigma_init", "attn_sharpness", "seed"});
    GeneratorConfig g;
    if (j.contains("variant")) g.variant = variant_from_string(j.at("variant").get<std::string>());
    if (j.contains("merge")) g.merge = merge_from_string(j.at("merge").get<std::string>());
    read(j, "n_heads", g.n_heads);
    read(j, "mlp_hidden", g.mlp_hidden);
    read(j, "gauss_scale", g.gauss_scale);
    read(j, "log_sigma_min", g.log_sigma_min);
    read(j, "log_sigma_max", g.log_sigma_max);
    read(j, "log_sigma_init", g.log_sigma_init);
    read(j, "attn_sharpness", g.attn_sharpness);
    read(j, "seed", g.seed);
    return g;
}

TrainConfig parse_train(const json& j) {
    check_keys(j, "train",
               {"m", "batch_size", "learning_rate", "beta1", "beta2", "adam_eps", "weight_decay",
                "epochs", "clip_norm", "warmup_frac", "kl_weight", "answer_conditioning", "seed",
                "dataset_size"});
    TrainConfig t;
    read(j, "m", t.m);
    read(j, "batch_size", t.batch_size);
    read(j, "learning_rate", t.learning_rate);
    read(j, "beta1", t.beta1);
    read(j, "beta2", t.beta2);
    read(j, "adam_eps", t.adam_eps);
    read(j, "weight_decay", t.weight_decay);
    read(j, "epochs", t.epochs);
    read(j, "clip_norm", t.clip_norm);
    read(j, "warmup_frac", t.warmup_frac);
    read(j, "kl_weight", t.kl_weight);
    read(j, "answer_conditioning", t.answer_conditioning);
    read(j, "seed", t.seed);
    return t;
}

PretrainConfig parse_pretrain(const json& j) {
    check_keys(j, "pretrain",
               {"steps", "batch_size", "learning_rate", "clip_norm", "seed", "dataset_size"});
    PretrainConfig p;
    read(j, "steps", p.steps);
    read(j, "batch_size", p.batch_size);
    read(j, "learning_rate", p.learning_rate);
    read(j, "clip_norm", p.clip_norm);
    read(j, "seed", p.seed);
    return p;
}

}  // namespace

RunConfig run_config_from_json(const nlohmann::json& j) {
    check_keys(j, "<root>",
               {"seed", "out_dir", "scene", "backbone", "generator", "train", "pretrain", "eval"});
    RunConfig c;
    read(j, "seed", c.seed);
    read(j, "out_dir", c.out_dir);
    if (j.contains("scene")) c.scene = parse_scene(j.at("scene"));
    if (j.contains("backbone")) c.backbone = parse_backbone(j.at("backbone"));
    if (j.contains("generator")) c.generator = parse_generator(j.at("generator"));
    if (j.contains("train")) {
        c.train = parse_train(j.at("train"));
        read(j.at("train"), "dataset_size", c.train_dataset_size);
    }
    if (j.contains("pretrain")) {
        c.pretrain = parse_pretrain(j.at("pretrain"));
        read(j.at("pretrain"), "dataset_size", c.pretrain_dataset_size);
    }
    if (j.contains("eval")) {
        check_keys(j.at("eval"), "eval", {"n", "m", "dataset_size"});
        read(j.at("eval"), "n", c.eval_n);
        read(j.at("eval"), "m", c.eval_m);
        read(j.at("eval"), "dataset_size", c.eval_dataset_size);
    }

    // Derived fields: scenes fix the visual geometry and vocabulary.
    c.clean_scene = c.scene;
    c.clean_scene.distractors_min = 0;
    c.clean_scene.distractors_max = 0;
    c.backbone.n_vis_tokens = c.scene.n_slots;
    c.backbone.d_raw = c.scene.d_raw();
    c.backbone.vocab_size = TokenMap(c.scene).vocab_size();
    c.generator.d_model = c.backbone.d_model;

    try {
        c.backbone.validate();
        c.train.validate();
    } catch (const ValueError& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config: parse error in '" + path + "': " + e.what());
    }
    return run_config_from_json(j);
}

RunConfig default_run_config() { return run_config_from_json(nlohmann::json::object()); }

nlohmann::json RunConfig::to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["out_dir"] = out_dir;
    j["scene"] = {{"n_slots", scene.n_slots},
                  {"n_types", scene.n_types},
                  {"n_colors", scene.n_colors},
                  {"k_max", scene.k_max},
                  {"distractors_min", scene.distractors_min},
                  {"distractors_max", scene.distractors_max},
                  {"salience_boost", scene.salience_boost},
                  {"jitter", scene.jitter}};
    j["backbone"] = {{"d_model", backbone.d_model},
                     {"max_seq_len", backbone.max_seq_len},
                     {"n_layers", backbone.n_layers},
                     {"n_heads", backbone.n_heads},
                     {"d_ff", backbone.d_ff},
                     {"layer_norm", backbone.layer_norm},
                     {"ln_eps", backbone.ln_eps},
                     {"seed", backbone.seed}};
    j["generator"] = {{"variant", to_string(generator.variant)},
                      {"merge", to_string(generator.merge)},
                      {"n_heads", generator.n_heads},
                      {"mlp_hidden", generator.mlp_hidden},
                      {"gauss_scale", generator.gauss_scale},
                      {"log_sigma_min", generator.log_sigma_min},
                      {"log_sigma_max", generator.log_sigma_max},
                      {"log_sigma_init", generator.log_sigma_init},
                      {"attn_sharpness", generator.attn_sharpness},
                      {"seed", generator.seed}};
    j["train"] = {{"m", train.m},
                  {"batch_size", train.batch_size},
                  {"learning_rate", train.learning_rate},
                  {"beta1", train.beta1},
                  {"beta2", train.beta2},
                  {"adam_eps", train.adam_eps},
                  {"weight_decay", train.weight_decay},
                  {"epochs", train.epochs},
                  {"clip_norm", train.clip_norm},
                  {"warmup_frac", train.warmup_frac},
                  {"kl_weight", train.kl_weight},
                  {"answer_conditioning", train.answer_conditioning},
                  {"seed", train.seed},
                  {"dataset_size", train_dataset_size}};
    j["pretrain"] = {{"steps", pretrain.steps},
                     {"batch_size", pretrain.batch_size},
                     {"learning_rate", pretrain.learning_rate},
                     {"clip_norm", pretrain.clip_norm},
                     {"seed", pretrain.seed},
                     {"dataset_size", pretrain_dataset_size}};
    j["eval"] = {{"n", eval_n}, {"m", eval_m}, {"dataset_size", eval_dataset_size}};
    return j;
}

}  // namespace mung
