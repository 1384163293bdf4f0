#include "mung/backbone.hpp"

#include <cmath>

namespace mung {

void BackboneConfig::validate() const {
    if (d_model <= 0 || n_vis_tokens <= 0 || d_raw <= 0 || vocab_size <= 0 || n_layers < 0 ||
        n_heads <= 0 || d_ff <= 0) {
        throw ValueError("backbone config: dimensions must be positive");
    }
    if (d_model % n_heads != 0) {
        throw ValueError("backbone config: d_model " + std::to_string(d_model) +
                         " not divisible by n_heads " + std::to_string(n_heads));
    }
    if (max_seq_len <= n_vis_tokens) {
        throw ValueError("backbone config: max_seq_len must exceed n_vis_tokens");
    }
}

Backbone::Backbone(const BackboneConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(salt_seed(cfg.seed, 0xbb));
    const int d = cfg.d_model;
    const double init = 0.08;
    auto w = [&](std::vector<int> shape) { return rng.normal_tensor(shape, init, true); };
    auto zero = [&](std::vector<int> shape) { return Tensor::zeros(shape, true); };
    auto ones = [&](int n) { return Tensor::full({n}, 1.0, true); };

    w_enc_ = w({cfg.d_raw, d});
    b_enc_ = zero({d});
    w_align_ = w({d, d});
    b_align_ = zero({d});
    tok_emb_ = w({cfg.vocab_size, d});
    pos_emb_ = w({cfg.max_seq_len, d});
    vis_pos_ = w({cfg.n_vis_tokens, d});
    for (int l = 0; l < cfg.n_layers; ++l) {
        DecoderBlock b;
        b.ln1_g = ones(d);
        b.ln1_b = zero({d});
        b.wq = w({d, d});
        b.bq = zero({d});
        b.wk = w({d, d});
        b.bk = zero({d});
        b.wv = w({d, d});
        b.bv = zero({d});
        b.wo = w({d, d});
        b.bo = zero({d});
        b.ln2_g = ones(d);
        b.ln2_b = zero({d});
        b.w1 = w({d, cfg.d_ff});
        b.b1 = zero({cfg.d_ff});
        b.w2 = w({cfg.d_ff, d});
        b.b2 = zero({d});
        blocks_.push_back(std::move(b));
    }
    lnf_g_ = ones(d);
    lnf_b_ = zero({d});
    w_head_ = w({d, cfg.vocab_size});
    b_head_ = zero({cfg.vocab_size});
}

void Backbone::freeze() {
    for (Tensor& p : parameters()) {
        p.zero_grad();
        p.set_requires_grad(false);
    }
    frozen_ = true;
}

Tensor Backbone::encode_visual(const Tensor& scene_features) const {
    if (scene_features.shape().size() != 2 || scene_features.cols() != cfg_.d_raw) {
        throw ShapeError("encode_visual: expected [* x " + std::to_string(cfg_.d_raw) +
                         "], got " + shape_str(scene_features.shape()));
    }
    return gelu(add_rowvec(matmul(scene_features, w_enc_), b_enc_));
}

Tensor Backbone::align(const Tensor& visual) const {
    return add_rowvec(matmul(visual, w_align_), b_align_);
}

Tensor Backbone::token_rows(std::span<const int> ids) const {
    return embedding_rows(tok_emb_, ids);
}

Tensor Backbone::embed_tokens(std::span<const int> ids) const {
    if (static_cast<int>(ids.size()) > cfg_.max_seq_len) {
        throw ShapeError("embed_tokens: sequence length " + std::to_string(ids.size()) +
                         " exceeds max_seq_len " + std::to_string(cfg_.max_seq_len));
    }
    std::vector<int> positions(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) positions[i] = static_cast<int>(i);
    return add(embedding_rows(tok_emb_, ids), embedding_rows(pos_emb_, positions));
}

Tensor Backbone::attention_mask(int t_text) const {
    const int nv = cfg_.n_vis_tokens;
    const int s = nv + t_text;
    std::vector<double> m(static_cast<std::size_t>(s) * s, 0.0);
    for (int i = 0; i < s; ++i) {
        for (int j = 0; j < s; ++j) {
            // Visual prefix is bidirectional among itself and blind to text;
            // text sees all visual tokens and earlier text.
            const bool ok = (i < nv) ? (j < nv) : (j < nv || j <= i);
            if (!ok) m[static_cast<std::size_t>(i) * s + j] = -1e9;
        }
    }
    return Tensor({s, s}, std::move(m));
}

Tensor Backbone::decode(const Tensor& x_v_injected, const Tensor& text_embed) const {
    const int d = cfg_.d_model;
    if (x_v_injected.shape() != std::vector<int>{cfg_.n_vis_tokens, d}) {
        throw ShapeError("decode: visual block " + shape_str(x_v_injected.shape()) +
                         ", expected [" + std::to_string(cfg_.n_vis_tokens) + "x" +
                         std::to_string(d) + "]");
    }
    if (text_embed.cols() != d) throw ShapeError("decode: text width mismatch");
    const int t_text = text_embed.rows();
    if (cfg_.n_vis_tokens + t_text > cfg_.max_seq_len) {
        throw ShapeError("decode: sequence length " +
                         std::to_string(cfg_.n_vis_tokens + t_text) + " exceeds max_seq_len " +
                         std::to_string(cfg_.max_seq_len));
    }

    Tensor x = concat_rows({add(x_v_injected, vis_pos_), text_embed});
    const Tensor mask = attention_mask(t_text);
    const int dh = d / cfg_.n_heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    auto maybe_ln = [&](const Tensor& t, const Tensor& g, const Tensor& b) {
        return cfg_.layer_norm ? layernorm_rows(t, g, b, cfg_.ln_eps) : t;
    };

    for (const DecoderBlock& blk : blocks_) {
        Tensor h = maybe_ln(x, blk.ln1_g, blk.ln1_b);
        Tensor q = add_rowvec(matmul(h, blk.wq), blk.bq);
        Tensor kk = add_rowvec(matmul(h, blk.wk), blk.bk);
        Tensor v = add_rowvec(matmul(h, blk.wv), blk.bv);
        std::vector<Tensor> heads;
        for (int hd = 0; hd < cfg_.n_heads; ++hd) {
            Tensor qh = slice_cols(q, hd * dh, (hd + 1) * dh);
            Tensor kh = slice_cols(kk, hd * dh, (hd + 1) * dh);
            Tensor vh = slice_cols(v, hd * dh, (hd + 1) * dh);
            Tensor scores = add(scale(matmul(qh, transpose(kh)), att_scale), mask);
            heads.push_back(matmul(softmax_rows(scores), vh));
        }
        Tensor attn = add_rowvec(matmul(concat_cols(heads), blk.wo), blk.bo);
        x = add(x, attn);
        Tensor h2 = maybe_ln(x, blk.ln2_g, blk.ln2_b);
        Tensor ff = add_rowvec(matmul(gelu(add_rowvec(matmul(h2, blk.w1), blk.b1)), blk.w2),
                               blk.b2);
        x = add(x, ff);
    }
    Tensor text_out = slice_rows(maybe_ln(x, lnf_g_, lnf_b_), cfg_.n_vis_tokens,
                                 cfg_.n_vis_tokens + t_text);
    return add_rowvec(matmul(text_out, w_head_), b_head_);
}

std::vector<int> Backbone::generate_greedy(const Tensor& x_v_injected,
                                           std::span<const int> question, int max_new) const {
    std::vector<int> ids(question.begin(), question.end());
    std::vector<int> out;
    const int eos_guess = cfg_.vocab_size - 1;  // EOS is the last vocabulary id
    for (int step = 0; step < max_new; ++step) {
        Tensor logits = decode(x_v_injected, embed_tokens(ids));
        const int t = logits.rows() - 1;
        int best = 0;
        double best_val = logits.at(t, 0);
        for (int v = 1; v < cfg_.vocab_size; ++v) {
            if (logits.at(t, v) > best_val) {
                best_val = logits.at(t, v);
                best = v;
            }
        }
        if (best == eos_guess) break;
        out.push_back(best);
        ids.push_back(best);
        if (static_cast<int>(ids.size()) + cfg_.n_vis_tokens >= cfg_.max_seq_len) break;
    }
    return out;
}

std::vector<std::pair<std::string, Tensor>> Backbone::named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out = {
        {"enc/w", w_enc_},   {"enc/b", b_enc_},     {"align/w", w_align_},
        {"align/b", b_align_}, {"tok_emb", tok_emb_}, {"pos_emb", pos_emb_},
        {"vis_pos", vis_pos_}};
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
        const std::string p = "block" + std::to_string(l) + "/";
        const DecoderBlock& b = blocks_[l];
        out.insert(out.end(), {{p + "ln1_g", b.ln1_g}, {p + "ln1_b", b.ln1_b},
                               {p + "wq", b.wq},       {p + "bq", b.bq},
                               {p + "wk", b.wk},       {p + "bk", b.bk},
                               {p + "wv", b.wv},       {p + "bv", b.bv},
                               {p + "wo", b.wo},       {p + "bo", b.bo},
                               {p + "ln2_g", b.ln2_g}, {p + "ln2_b", b.ln2_b},
                               {p + "w1", b.w1},       {p + "b1", b.b1},
                               {p + "w2", b.w2},       {p + "b2", b.b2}});
    }
    out.insert(out.end(), {{"lnf_g", lnf_g_}, {"lnf_b", lnf_b_},
                           {"head/w", w_head_}, {"head/b", b_head_}});
    return out;
}

std::vector<Tensor> Backbone::parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
}

std::size_t Backbone::param_count() const {
    std::size_t n = 0;
    for (const Tensor& t : parameters()) n += t.numel();
    return n;
}

Checkpoint Backbone::to_checkpoint() const {
    Checkpoint ckpt;
    for (auto& [name, t] : named_parameters()) ckpt.add("backbone/" + name, t);
    return ckpt;
}

void Backbone::load_checkpoint(const Checkpoint& ckpt) {
    for (auto& [name, t] : named_parameters()) {
        const Tensor& src = ckpt.get("backbone/" + name);
        if (src.shape() != t.shape()) {
            throw ValueError("checkpoint: shape " + shape_str(src.shape()) + " for '" + name +
                             "' incompatible with config shape " + shape_str(t.shape()));
        }
        t.set_data(src.data());
    }
}

}  // namespace mung
