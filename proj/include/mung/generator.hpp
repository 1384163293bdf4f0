#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mung/checkpoint.hpp"
#include "mung/rng.hpp"
#include "mung/tensor.hpp"

namespace mung {

enum class GeneratorVariant { CrossAttention, Mlp, GaussianBaseline };
enum class MergeMode { Add, Dot };

std::string to_string(GeneratorVariant v);
std::string to_string(MergeMode m);
GeneratorVariant variant_from_string(const std::string& s);
MergeMode merge_from_string(const std::string& s);

struct GeneratorConfig {
    GeneratorVariant variant = GeneratorVariant::CrossAttention;
    MergeMode merge = MergeMode::Add;
    int d_model = 32;
    int n_heads = 4;
    int mlp_hidden = 32;
    // Raw-Gaussian baseline: sigma = gauss_scale * RMS of the visual features.
    double gauss_scale = 0.1;
    double log_sigma_min = -10.0;
    double log_sigma_max = 3.0;
    // Initial bias on the log-sigma head; noise starts near-deterministic.
    double log_sigma_init = -3.0;
    // Cross-attention scores are cosine similarities of unit-normalized
    // queries/keys times this fixed inverse temperature; normalizing away the
    // query magnitude keeps untrained attention at chance on scale-skewed
    // inputs.
    double attn_sharpness = 8.0;
    std::uint64_t seed = 7;
};

// One noise draw. The reparameterization identity
//   E = exp(log_sigma) (.) epsilon + mu
// holds bit-exactly; epsilon never carries gradient.
struct NoiseSample {
    Tensor mu;
    Tensor log_sigma;
    Tensor epsilon;
    Tensor noise;
    // Row-stochastic attention over text positions, [n_vis x T_text].
    std::optional<Tensor> attn_weights;
    // Same scores renormalized over visual tokens, used for localization maps.
    std::optional<Tensor> attn_over_visual;
};

// Trainable noise generator: learns per-visual-token (mu, log sigma) from the
// aligned visual features, the question features and (train-time) the answer
// features, then samples noise via the reparameterization trick.
class NoiseGenerator {
public:
    explicit NoiseGenerator(const GeneratorConfig& cfg);

    const GeneratorConfig& config() const { return cfg_; }

    struct Params {
        Tensor mu;
        Tensor log_sigma;
        std::optional<Tensor> attn_weights;
        std::optional<Tensor> attn_over_visual;
    };

    // x_v: alignment-layer output [n_vis x d]; x_l: question features
    // [T_q x d]; answer: answer features during training, nullptr at inference.
    Params compute_params(const Tensor& x_v, const Tensor& x_l, const Tensor* answer) const;

    static Tensor sample(const Tensor& mu, const Tensor& log_sigma, const Tensor& epsilon);

    NoiseSample draw(const Tensor& x_v, const Tensor& x_l, const Tensor* answer, Rng& rng) const;
    // Deterministic variant: injects mu directly, no sampling (the ablation
    // grid's no-noise row).
    NoiseSample deterministic(const Tensor& x_v, const Tensor& x_l, const Tensor* answer) const;

    static Tensor inject(const Tensor& x_v, const Tensor& e, MergeMode mode);

    // Mean attention mass per visual token over text positions and heads,
    // values in [0,1]. CrossAttention only.
    static std::vector<double> attention_map(const NoiseSample& sample);

    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    std::vector<Tensor> parameters() const;
    std::size_t param_count() const;
    double param_fraction(std::size_t backbone_params) const;

    Checkpoint to_checkpoint() const;
    void load_checkpoint(const Checkpoint& ckpt);

private:
    GeneratorConfig cfg_;
    // CrossAttention weights
    Tensor wq_, wk_, wv_;
    // Shared head pair (CA: on x_v + attended text; MLP: on hidden layer)
    Tensor w_mu_, b_mu_, w_ls_, b_ls_;
    // Mlp weights
    Tensor w1_, b1_;
};

}  // namespace mung
