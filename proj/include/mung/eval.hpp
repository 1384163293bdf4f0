#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mung/training.hpp"

namespace mung {

struct EntropyEstimate {
    double value = 0.0;    // nats
    double std_err = 0.0;
    int n_samples = 0;
};

struct EntropyReport {
    EntropyEstimate h_task;
    EntropyEstimate h_cond;
    double mi_estimate = 0.0;     // H(T) - H(T|E)
    double combined_se = 0.0;     // sqrt(se_task^2 + se_cond^2)
    double paired_diff_se = 0.0;  // SE of the per-triplet difference
    bool positive = false;        // mi > 2 * combined_se
};

// H(T): Monte-Carlo mean of the answer-masked NLL with no noise injected.
EntropyEstimate estimate_task_entropy(const Backbone& backbone, std::span<const Triplet> dataset,
                                      int n);

// H(T|E): same estimate with the generator in inference mode (no answer
// input), m noise draws per triplet.
EntropyEstimate estimate_conditional_entropy(const ModelBundle& model,
                                             std::span<const Triplet> dataset, int n, int m,
                                             std::uint64_t seed);

EntropyReport mutual_information_check(const ModelBundle& model, std::span<const Triplet> dataset,
                                       int n, int m, std::uint64_t seed);

// Greedy-decoding answer accuracy; generator optional (nullptr = frozen
// baseline). Noise at inference is drawn with the salted seed.
double answer_accuracy(const Backbone& backbone, const NoiseGenerator* generator, MergeMode merge,
                       bool sample_noise, std::span<const Triplet> dataset, std::uint64_t seed);

struct RelevanceScore {
    // Mean per-triplet Mann-Whitney AUC of the attention map against the
    // planted salience mask, over occupied slots: the trained generator
    // should attend to exactly the salient irrelevant objects it suppresses,
    // which is the complement of the planted relevance among the objects
    // present.
    double auc = 0.0;
    double mass_ratio = 0.0;  // mean attention on salient / other occupied slots
    int used = 0;
    int skipped = 0;  // degenerate triplets (no salient or no plain object)
};

// CrossAttention variant only; ranks visual slots by attention_map value
// against the planted masks.
RelevanceScore relevance_score(const Backbone& backbone, const NoiseGenerator& generator,
                               std::span<const Triplet> dataset);

// Saliency per visual slot: L2 norm of the gradient of the correct-answer
// log-probability w.r.t. the injected visual features of that slot.
std::vector<double> importance_map(const Backbone& backbone, const NoiseGenerator* generator,
                                   MergeMode merge, const Triplet& trip, bool with_noise,
                                   std::uint64_t seed);

struct AblationCell {
    std::string name;
    GeneratorVariant variant = GeneratorVariant::CrossAttention;
    MergeMode merge = MergeMode::Add;
    bool with_noise = true;
    double accuracy = 0.0;
    double h_cond = 0.0;
    double auc = -1.0;  // -1 when the variant has no attention map
    double trainable_fraction = 0.0;
};

struct AblationGridConfig {
    GeneratorConfig generator;  // shared dims/seed; variant/merge overridden per cell
    TrainConfig train;
    int eval_n = 500;
    int eval_m = 4;
};

// Trains all six grid cells (MLP/add, MLP/dot, CA/dot, CA/add-no-noise,
// Gauss/add, CA/add) from shared seeds and evaluates each.
std::vector<AblationCell> ablation_grid(Backbone& backbone, const AblationGridConfig& cfg,
                                        std::span<const Triplet> train_set,
                                        std::span<const Triplet> eval_set);

std::string ablation_table_text(const std::vector<AblationCell>& cells);

enum class MapFormat { Pgm, Csv };

// Grid heatmap export. PGM is binary P5 with values min-max normalized to
// 0..255; CSV holds the raw values.
void export_map(std::span<const double> values, int rows, int cols, const std::string& path,
                MapFormat format);

// Parses a P5 file written by export_map (round-trip checks).
std::vector<int> parse_pgm(const std::string& path, int& rows, int& cols);

}  // namespace mung
