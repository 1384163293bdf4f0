#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mung/backbone.hpp"
#include "mung/generator.hpp"
#include "mung/gradcheck.hpp"
#include "mung/optimizer.hpp"
#include "mung/synth.hpp"

namespace mung {

// Frozen backbone plus trainable noise generator.
struct ModelBundle {
    Backbone* backbone = nullptr;
    NoiseGenerator* generator = nullptr;
    MergeMode merge = MergeMode::Add;
    // Ablation row "CA add w/o": inject mu directly, no sampling.
    bool sample_noise = true;
};

struct TrainConfig {
    int m = 1;  // epsilon draws per triplet
    int batch_size = 16;
    double learning_rate = 3e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.0;
    int epochs = 6;
    double clip_norm = 1.0;
    // Linear warmup over this fraction of total steps (0 disables).
    double warmup_frac = 0.0;
    // Optional KL(N(mu,sigma^2) || N(0,1)) regularizer; the objective itself
    // carries none, so this defaults to off.
    double kl_weight = 0.0;
    // Feed answer features to the generator during training (the variational
    // posterior path). Off by default: inference never sees the answer, and
    // at this scale the conditioned generator leaks it through mu instead of
    // learning a question-driven policy.
    bool answer_conditioning = false;
    std::uint64_t seed = 123;

    void validate() const;
};

struct Batch {
    std::vector<const Triplet*> items;
    // eps[i][j]: draw j of m for triplet i; fixed before the forward pass.
    std::vector<std::vector<Tensor>> eps;
};

Batch make_batch(std::span<const Triplet* const> items, int m, std::vector<int> noise_shape,
                 Rng& rng);

// Mean per-position NLL over answer positions only, in nats.
Tensor masked_nll(const Tensor& logits, std::span<const int> targets,
                  const std::vector<bool>& mask);

// Monte-Carlo variational objective: mean over triplets and epsilon draws of
// the answer-masked NLL of the noise-injected forward pass.
Tensor mc_loss(const ModelBundle& model, const Batch& batch, double kl_weight = 0.0,
               bool answer_conditioning = true);

// Plain answer-masked NLL forward with no noise (pretraining / H(T) path).
Tensor clean_nll(const Backbone& backbone, const Triplet& trip);

struct TrainResult {
    double final_loss = 0.0;
    std::vector<double> epoch_loss;
    double trainable_fraction = 0.0;
    long steps = 0;
};

// Optimizes only the generator parameters; the backbone must be frozen.
// Appends one JSON object per step to `metrics_path` when non-empty.
TrainResult train(ModelBundle& model, std::span<const Triplet> dataset, const TrainConfig& cfg,
                  const std::string& metrics_path = "");

struct PretrainConfig {
    int steps = 400;
    int batch_size = 16;
    double learning_rate = 3e-3;
    double clip_norm = 1.0;
    std::uint64_t seed = 11;
};

// Trains the whole backbone on clean data with the plain masked NLL, then
// freezes it.
TrainResult pretrain_backbone(Backbone& backbone, std::span<const Triplet> dataset,
                              const PretrainConfig& cfg, const std::string& metrics_path = "");

double trainable_param_fraction(const ModelBundle& model);

// End-to-end finite-difference check of d(mc_loss)/d(theta) on a minimal
// configuration (d_model=8, 2 visual tokens, 1 decoder layer, fixed epsilon).
GradCheckReport pipeline_grad_check(GeneratorVariant variant, MergeMode merge, double h = 1e-4,
                                    double tol = 1e-3);

}  // namespace mung
