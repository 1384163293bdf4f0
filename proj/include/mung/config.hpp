#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "mung/backbone.hpp"
#include "mung/generator.hpp"
#include "mung/synth.hpp"
#include "mung/training.hpp"

namespace mung {

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Everything a run needs, loaded from one JSON document. Every field has a
// default; unknown keys are rejected; the fully-resolved config is echoed to
// the output directory.
struct RunConfig {
    std::uint64_t seed = 42;
    std::string out_dir;

    SceneConfig scene;          // fine-tuning / eval scenes (distractors on)
    SceneConfig clean_scene;    // pretraining scenes (derived: distractors off)
    BackboneConfig backbone;    // d_raw and vocab_size resolved from the scene
    GeneratorConfig generator;
    TrainConfig train;
    PretrainConfig pretrain;

    int pretrain_dataset_size = 3000;
    int train_dataset_size = 5000;
    int eval_dataset_size = 1000;
    int eval_n = 1000;
    int eval_m = 4;

    nlohmann::json to_json() const;
};

RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
RunConfig default_run_config();

}  // namespace mung
