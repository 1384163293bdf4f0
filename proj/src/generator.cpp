#include "mung/generator.hpp"

#include <cmath>

namespace mung {

std::string to_string(GeneratorVariant v) {
    switch (v) {
        case GeneratorVariant::CrossAttention: return "ca";
        case GeneratorVariant::Mlp: return "mlp";
        case GeneratorVariant::GaussianBaseline: return "gauss";
    }
    return "?";
}

std::string to_string(MergeMode m) { return m == MergeMode::Add ? "add" : "dot"; }

GeneratorVariant variant_from_string(const std::string& s) {
    if (s == "ca") return GeneratorVariant::CrossAttention;
    if (s == "mlp") return GeneratorVariant::Mlp;
    if (s == "gauss") return GeneratorVariant::GaussianBaseline;
    throw ValueError("unknown generator variant '" + s + "' (expected ca|mlp|gauss)");
}

MergeMode merge_from_string(const std::string& s) {
    if (s == "add") return MergeMode::Add;
    if (s == "dot") return MergeMode::Dot;
    throw ValueError("unknown merge mode '" + s + "' (expected add|dot)");
}

NoiseGenerator::NoiseGenerator(const GeneratorConfig& cfg) : cfg_(cfg) {
    const int d = cfg.d_model;
    if (d <= 0) throw ValueError("generator config: d_model must be positive");
    if (cfg.variant == GeneratorVariant::CrossAttention && d % cfg.n_heads != 0) {
        throw ValueError("generator config: d_model not divisible by n_heads");
    }
    Rng rng(salt_seed(cfg.seed, 0x6e67));
    const double init = 0.08;
    // Dot merge multiplies features, so its mu head starts at the Hadamard
    // identity; Add starts at zero noise.
    const double mu_bias = cfg.merge == MergeMode::Dot ? 1.0 : 0.0;
    switch (cfg.variant) {
        case GeneratorVariant::CrossAttention:
            wq_ = rng.normal_tensor({d, d}, init, true);
            wk_ = rng.normal_tensor({d, d}, init, true);
            wv_ = rng.normal_tensor({d, d}, init, true);
            w_mu_ = rng.normal_tensor({d, d}, init, true);
            b_mu_ = Tensor::full({d}, mu_bias, true);
            w_ls_ = rng.normal_tensor({d, d}, init, true);
            b_ls_ = Tensor::full({d}, cfg.log_sigma_init, true);
            break;
        case GeneratorVariant::Mlp:
            w1_ = rng.normal_tensor({2 * d, cfg.mlp_hidden}, init, true);
            b1_ = Tensor::zeros({cfg.mlp_hidden}, true);
            w_mu_ = rng.normal_tensor({cfg.mlp_hidden, d}, init, true);
            b_mu_ = Tensor::full({d}, mu_bias, true);
            w_ls_ = rng.normal_tensor({cfg.mlp_hidden, d}, init, true);
            b_ls_ = Tensor::full({d}, cfg.log_sigma_init, true);
            break;
        case GeneratorVariant::GaussianBaseline:
            break;  // no trainable state
    }
}

NoiseGenerator::Params NoiseGenerator::compute_params(const Tensor& x_v, const Tensor& x_l,
                                                      const Tensor* answer) const {
    const int d = cfg_.d_model;
    if (x_v.cols() != d) {
        throw ShapeError("compute_params: visual width " + std::to_string(x_v.cols()) +
                         " vs generator d_model " + std::to_string(d));
    }
    if (x_l.cols() != d || (answer && answer->cols() != d)) {
        throw ShapeError("compute_params: text width mismatch with d_model " + std::to_string(d));
    }
    const int nv = x_v.rows();

    Params out;
    switch (cfg_.variant) {
        case GeneratorVariant::GaussianBaseline: {
            double ss = 0.0;
            for (double x : x_v.data()) ss += x * x;
            const double rms = std::sqrt(ss / static_cast<double>(x_v.numel()));
            const double sigma = std::max(cfg_.gauss_scale * rms, 1e-12);
            out.mu = Tensor::zeros({nv, d});
            out.log_sigma = Tensor::full({nv, d}, std::log(sigma));
            return out;
        }
        case GeneratorVariant::CrossAttention: {
            Tensor text = answer ? concat_rows({x_l, *answer}) : x_l;
            Tensor q = matmul(x_v, wq_);
            Tensor k = matmul(text, wk_);
            Tensor v = matmul(text, wv_);
            const int nh = cfg_.n_heads;
            const int dh = d / nh;
            std::vector<Tensor> heads;
            Tensor attn_sum, attn_vis_sum;
            for (int h = 0; h < nh; ++h) {
                // Cosine attention: unit-normalized queries/keys with a fixed
                // inverse temperature, so scores depend on direction only.
                Tensor qh = l2_normalize_rows(slice_cols(q, h * dh, (h + 1) * dh));
                Tensor kh = l2_normalize_rows(slice_cols(k, h * dh, (h + 1) * dh));
                Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
                Tensor scores = scale(matmul(qh, transpose(kh)), cfg_.attn_sharpness);
                Tensor attn = softmax_rows(scores);  // over text, rows sum to 1
                heads.push_back(matmul(attn, vh));
                // Same scores, renormalized across visual tokens per text
                // position; this is what localization maps read.
                Tensor attn_vis = transpose(softmax_rows(transpose(scores)));
                attn_sum = attn_sum.defined() ? add(attn_sum, attn) : attn;
                attn_vis_sum = attn_vis_sum.defined() ? add(attn_vis_sum, attn_vis) : attn_vis;
            }
            // Residual gated by each slot's mean share of attention mass
            // (scaled so a uniform map gives gate 1). Slot-specific output
            // must route through the same map that localization reads.
            Tensor attn_vis_avg = scale(attn_vis_sum, 1.0 / nh);
            Tensor gate_col = transpose(mean_rows(transpose(attn_vis_avg)));  // [nv x 1]
            Tensor gate = matmul(gate_col, Tensor::full({1, d}, static_cast<double>(nv)));
            Tensor fused = add(hadamard(x_v, gate), concat_cols(heads));
            out.mu = add_rowvec(matmul(fused, w_mu_), b_mu_);
            out.log_sigma = clamp(add_rowvec(matmul(fused, w_ls_), b_ls_), cfg_.log_sigma_min,
                                  cfg_.log_sigma_max);
            out.attn_weights = scale(attn_sum, 1.0 / nh);
            out.attn_over_visual = attn_vis_avg;
            return out;
        }
        case GeneratorVariant::Mlp: {
            Tensor text = answer ? concat_rows({x_l, *answer}) : x_l;
            Tensor pooled = mean_rows(text);  // [1 x d]
            Tensor tiled = matmul(Tensor::full({nv, 1}, 1.0), pooled);
            Tensor hidden = gelu(add_rowvec(matmul(concat_cols({x_v, tiled}), w1_), b1_));
            out.mu = add_rowvec(matmul(hidden, w_mu_), b_mu_);
            out.log_sigma = clamp(add_rowvec(matmul(hidden, w_ls_), b_ls_), cfg_.log_sigma_min,
                                  cfg_.log_sigma_max);
            return out;
        }
    }
    throw ValueError("compute_params: unhandled variant");
}

Tensor NoiseGenerator::sample(const Tensor& mu, const Tensor& log_sigma, const Tensor& epsilon) {
    if (mu.shape() != log_sigma.shape() || mu.shape() != epsilon.shape()) {
        throw ShapeError("sample: shape mismatch " + shape_str(mu.shape()) + " / " +
                         shape_str(log_sigma.shape()) + " / " + shape_str(epsilon.shape()));
    }
    return add(hadamard(exp(log_sigma), epsilon), mu);
}

NoiseSample NoiseGenerator::draw(const Tensor& x_v, const Tensor& x_l, const Tensor* answer,
                                 Rng& rng) const {
    Params p = compute_params(x_v, x_l, answer);
    NoiseSample s;
    s.mu = p.mu;
    s.log_sigma = p.log_sigma;
    s.epsilon = rng.normal_tensor(p.mu.shape());
    s.noise = sample(s.mu, s.log_sigma, s.epsilon);
    s.attn_weights = std::move(p.attn_weights);
    s.attn_over_visual = std::move(p.attn_over_visual);
    return s;
}

NoiseSample NoiseGenerator::deterministic(const Tensor& x_v, const Tensor& x_l,
                                          const Tensor* answer) const {
    Params p = compute_params(x_v, x_l, answer);
    NoiseSample s;
    s.mu = p.mu;
    s.log_sigma = p.log_sigma;
    s.epsilon = Tensor::zeros(p.mu.shape());
    s.noise = p.mu;  // attention output used directly, no sampling
    s.attn_weights = std::move(p.attn_weights);
    s.attn_over_visual = std::move(p.attn_over_visual);
    return s;
}

Tensor NoiseGenerator::inject(const Tensor& x_v, const Tensor& e, MergeMode mode) {
    if (x_v.shape() != e.shape()) {
        throw ShapeError("inject: noise shape " + shape_str(e.shape()) +
                         " vs visual shape " + shape_str(x_v.shape()));
    }
    return mode == MergeMode::Add ? add(x_v, e) : hadamard(x_v, e);
}

std::vector<double> NoiseGenerator::attention_map(const NoiseSample& sample) {
    if (!sample.attn_over_visual) {
        throw ValueError("attention_map: sample has no attention (non-CA variant)");
    }
    const Tensor& a = *sample.attn_over_visual;
    const int nv = a.rows(), t = a.cols();
    std::vector<double> map(nv, 0.0);
    for (int i = 0; i < nv; ++i) {
        for (int j = 0; j < t; ++j) map[i] += a.at(i, j);
        map[i] /= t;
    }
    return map;
}

std::vector<std::pair<std::string, Tensor>> NoiseGenerator::named_parameters() const {
    switch (cfg_.variant) {
        case GeneratorVariant::CrossAttention:
            return {{"mung/wq", wq_},   {"mung/wk", wk_},   {"mung/wv", wv_},
                    {"mung/w_mu", w_mu_}, {"mung/b_mu", b_mu_}, {"mung/w_ls", w_ls_},
                    {"mung/b_ls", b_ls_}};
        case GeneratorVariant::Mlp:
            return {{"mung/w1", w1_},   {"mung/b1", b1_},   {"mung/w_mu", w_mu_},
                    {"mung/b_mu", b_mu_}, {"mung/w_ls", w_ls_}, {"mung/b_ls", b_ls_}};
        case GeneratorVariant::GaussianBaseline: return {};
    }
    return {};
}

std::vector<Tensor> NoiseGenerator::parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
}

std::size_t NoiseGenerator::param_count() const {
    std::size_t n = 0;
    for (const Tensor& t : parameters()) n += t.numel();
    return n;
}

double NoiseGenerator::param_fraction(std::size_t backbone_params) const {
    const std::size_t mine = param_count();
    if (mine + backbone_params == 0) return 0.0;
    return static_cast<double>(mine) / static_cast<double>(mine + backbone_params);
}

Checkpoint NoiseGenerator::to_checkpoint() const {
    Checkpoint ckpt;
    for (auto& [name, t] : named_parameters()) ckpt.add(name, t);
    return ckpt;
}

void NoiseGenerator::load_checkpoint(const Checkpoint& ckpt) {
    for (auto& [name, t] : named_parameters()) {
        const Tensor& src = ckpt.get(name);
        if (src.shape() != t.shape()) {
            throw ValueError("checkpoint: shape " + shape_str(src.shape()) + " for '" + name +
                             "' incompatible with config shape " + shape_str(t.shape()));
        }
        t.set_data(src.data());
    }
}

}  // namespace mung
