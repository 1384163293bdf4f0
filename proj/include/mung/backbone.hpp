#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mung/checkpoint.hpp"
#include "mung/rng.hpp"
#include "mung/tensor.hpp"

namespace mung {

struct BackboneConfig {
    int d_model = 32;
    int n_vis_tokens = 9;
    int d_raw = 12;
    int vocab_size = 21;
    int max_seq_len = 32;
    int n_layers = 4;
    int n_heads = 4;
    int d_ff = 512;
    // Width-1 models degenerate under layernorm (every row normalizes to the
    // bias), so tiny analytic configurations can switch it off.
    bool layer_norm = true;
    double ln_eps = 1e-5;
    std::uint64_t seed = 1;

    void validate() const;
};

struct DecoderBlock {
    Tensor ln1_g, ln1_b;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_g, ln2_b;
    Tensor w1, b1, w2, b2;
};

// Frozen toy MLLM: visual encoder -> feature alignment -> causal decoder with
// a language head. Visual tokens form a prefix block with bidirectional
// visibility among themselves; text positions attend to all visual tokens and
// causally to earlier text.
class Backbone {
public:
    explicit Backbone(const BackboneConfig& cfg);

    const BackboneConfig& config() const { return cfg_; }
    bool frozen() const { return frozen_; }
    void freeze();

    Tensor encode_visual(const Tensor& scene_features) const;
    Tensor align(const Tensor& visual) const;
    // Table lookup plus positional embedding (text-local positions).
    Tensor embed_tokens(std::span<const int> ids) const;
    // Raw token-table rows, no positions; what the noise generator consumes.
    Tensor token_rows(std::span<const int> ids) const;
    // Full visual+text pass; logits per text position predicting next token.
    Tensor decode(const Tensor& x_v_injected, const Tensor& text_embed) const;
    std::vector<int> generate_greedy(const Tensor& x_v_injected, std::span<const int> question,
                                     int max_new) const;

    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    std::vector<Tensor> parameters() const;
    std::size_t param_count() const;

    Checkpoint to_checkpoint() const;
    void load_checkpoint(const Checkpoint& ckpt);

private:
    Tensor attention_mask(int t_text) const;

    BackboneConfig cfg_;
    bool frozen_ = false;
    Tensor w_enc_, b_enc_;
    Tensor w_align_, b_align_;
    Tensor tok_emb_, pos_emb_, vis_pos_;
    std::vector<DecoderBlock> blocks_;
    Tensor lnf_g_, lnf_b_;
    Tensor w_head_, b_head_;
};

}  // namespace mung
