#include "mung/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace mung {

void TrainConfig::validate() const {
    if (m < 1) throw ValueError("train config: m must be >= 1");
    if (learning_rate <= 0.0) throw ValueError("train config: learning_rate must be > 0");
    if (batch_size < 1 || epochs < 1) throw ValueError("train config: batch_size/epochs must be >= 1");
}

Batch make_batch(std::span<const Triplet* const> items, int m, std::vector<int> noise_shape,
                 Rng& rng) {
    Batch b;
    for (const Triplet* t : items) {
        b.items.push_back(t);
        std::vector<Tensor> draws;
        for (int j = 0; j < m; ++j) draws.push_back(rng.normal_tensor(noise_shape));
        b.eps.push_back(std::move(draws));
    }
    return b;
}

Tensor masked_nll(const Tensor& logits, std::span<const int> targets,
                  const std::vector<bool>& mask) {
    if (mask.size() != targets.size()) throw ShapeError("masked_nll: mask/target length mismatch");
    int count = 0;
    std::vector<double> weights(mask.size(), 0.0);
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i]) {
            weights[i] = 1.0;
            ++count;
        }
    }
    if (count == 0) throw ValueError("masked_nll: mask selects no answer positions");
    Tensor nll = cross_entropy_logits(logits, targets);
    const int len = static_cast<int>(weights.size());
    Tensor masked = hadamard(nll, Tensor({len}, std::move(weights)));
    return scale(sum(masked), 1.0 / count);
}

namespace {

Tensor kl_to_standard_normal(const Tensor& mu, const Tensor& log_sigma) {
    // mean over elements of 0.5 * (sigma^2 + mu^2 - 1 - 2 log sigma)
    Tensor var = exp(scale(log_sigma, 2.0));
    Tensor term = sub(add(var, hadamard(mu, mu)), scale(log_sigma, 2.0));
    Tensor shifted = add(term, Tensor::full(term.shape(), -1.0));
    return scale(mean(shifted), 0.5);
}

Tensor triplet_loss(const ModelBundle& model, const Triplet& trip,
                    std::span<const Tensor> eps, double kl_weight, bool answer_conditioning) {
    const Backbone& bb = *model.backbone;
    Tensor x_v = bb.align(bb.encode_visual(trip.visual));
    Tensor x_l = bb.token_rows(trip.question);
    Tensor a_emb = bb.token_rows(trip.answer);
    const std::vector<int> input_ids = text_input_ids(trip);
    const std::vector<int> target_ids = text_target_ids(trip);
    const std::vector<bool> mask = answer_mask(trip);
    Tensor text = bb.embed_tokens(input_ids);

    Tensor acc;
    const int m = model.sample_noise ? static_cast<int>(eps.size()) : 1;
    for (int j = 0; j < m; ++j) {
        NoiseGenerator::Params p =
            model.generator->compute_params(x_v, x_l, answer_conditioning ? &a_emb : nullptr);
        Tensor e = model.sample_noise ? NoiseGenerator::sample(p.mu, p.log_sigma, eps[j]) : p.mu;
        Tensor injected = NoiseGenerator::inject(x_v, e, model.merge);
        Tensor nll = masked_nll(bb.decode(injected, text), target_ids, mask);
        if (kl_weight > 0.0) nll = add(nll, scale(kl_to_standard_normal(p.mu, p.log_sigma), kl_weight));
        acc = acc.defined() ? add(acc, nll) : nll;
    }
    return scale(acc, 1.0 / m);
}

void write_metric_line(std::ofstream& out, long step, double loss, double lr, double grad_norm,
                       double wall_ms) {
    if (!out.is_open()) return;
    nlohmann::json j;
    j["step"] = step;
    j["loss"] = loss;
    j["lr"] = lr;
    j["grad_norm"] = grad_norm;
    j["wall_ms"] = wall_ms;
    out << j.dump() << "\n";
}

}  // namespace

Tensor mc_loss(const ModelBundle& model, const Batch& batch, double kl_weight,
               bool answer_conditioning) {
    if (!model.backbone || !model.generator) throw ValueError("mc_loss: incomplete model bundle");
    if (batch.items.empty()) throw ValueError("mc_loss: empty batch");
    Tensor acc;
    for (std::size_t i = 0; i < batch.items.size(); ++i) {
        Tensor li = triplet_loss(model, *batch.items[i], batch.eps[i], kl_weight,
                                 answer_conditioning);
        acc = acc.defined() ? add(acc, li) : li;
    }
    return scale(acc, 1.0 / static_cast<double>(batch.items.size()));
}

Tensor clean_nll(const Backbone& backbone, const Triplet& trip) {
    Tensor x_v = backbone.align(backbone.encode_visual(trip.visual));
    Tensor text = backbone.embed_tokens(text_input_ids(trip));
    return masked_nll(backbone.decode(x_v, text), text_target_ids(trip), answer_mask(trip));
}

TrainResult train(ModelBundle& model, std::span<const Triplet> dataset, const TrainConfig& cfg,
                  const std::string& metrics_path) {
    cfg.validate();
    if (!model.backbone->frozen()) throw ValueError("train: backbone must be frozen first");
    if (dataset.empty()) throw ValueError("train: empty dataset");

    AdamWConfig ocfg;
    ocfg.lr = cfg.learning_rate;
    ocfg.beta1 = cfg.beta1;
    ocfg.beta2 = cfg.beta2;
    ocfg.eps = cfg.adam_eps;
    ocfg.weight_decay = cfg.weight_decay;
    AdamW opt(model.generator->parameters(), ocfg);

    std::ofstream metrics;
    if (!metrics_path.empty()) {
        metrics.open(metrics_path, std::ios::trunc);
        if (!metrics) throw ValueError("train: cannot write metrics to " + metrics_path);
    }

    Rng rng(salt_seed(cfg.seed, 0x7472));
    const std::vector<int> noise_shape = {model.backbone->config().n_vis_tokens,
                                          model.backbone->config().d_model};
    std::vector<const Triplet*> order;
    for (const Triplet& t : dataset) order.push_back(&t);

    const long steps_per_epoch =
        static_cast<long>((order.size() + cfg.batch_size - 1) / cfg.batch_size);
    const long total_steps = steps_per_epoch * cfg.epochs;
    const long warmup_steps = static_cast<long>(cfg.warmup_frac * total_steps);

    TrainResult result;
    result.trainable_fraction = trainable_param_fraction(model);
    const auto t0 = std::chrono::steady_clock::now();
    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_sum = 0.0;
        long epoch_batches = 0;
        for (std::size_t off = 0; off < order.size(); off += cfg.batch_size) {
            const std::size_t end = std::min(off + cfg.batch_size, order.size());
            Batch batch = make_batch(
                std::span<const Triplet* const>(order.data() + off, end - off), cfg.m,
                noise_shape, rng);
            opt.zero_grad();
            Tensor loss = mc_loss(model, batch, cfg.kl_weight, cfg.answer_conditioning);
            backward(loss);
            const double lr_scale =
                warmup_steps > 0 ? std::min(1.0, static_cast<double>(step + 1) / warmup_steps)
                                 : 1.0;
            const double grad_norm = opt.step(cfg.clip_norm, lr_scale);
            ++step;
            ++epoch_batches;
            epoch_sum += loss.item();
            result.final_loss = loss.item();
            const double wall_ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                    .count();
            write_metric_line(metrics, step, loss.item(), cfg.learning_rate * lr_scale, grad_norm,
                              wall_ms);
        }
        result.epoch_loss.push_back(epoch_sum / static_cast<double>(epoch_batches));
    }
    result.steps = step;
    return result;
}

TrainResult pretrain_backbone(Backbone& backbone, std::span<const Triplet> dataset,
                              const PretrainConfig& cfg, const std::string& metrics_path) {
    if (dataset.empty()) throw ValueError("pretrain: empty dataset");
    if (backbone.frozen()) throw ValueError("pretrain: backbone already frozen");
    AdamWConfig ocfg;
    ocfg.lr = cfg.learning_rate;
    AdamW opt(backbone.parameters(), ocfg);

    std::ofstream metrics;
    if (!metrics_path.empty()) {
        metrics.open(metrics_path, std::ios::trunc);
        if (!metrics) throw ValueError("pretrain: cannot write metrics to " + metrics_path);
    }

    Rng rng(salt_seed(cfg.seed, 0x7074));
    TrainResult result;
    const auto t0 = std::chrono::steady_clock::now();
    for (int step = 0; step < cfg.steps; ++step) {
        opt.zero_grad();
        Tensor acc;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const Triplet& trip = dataset[rng.below(static_cast<int>(dataset.size()))];
            Tensor li = clean_nll(backbone, trip);
            acc = acc.defined() ? add(acc, li) : li;
        }
        Tensor loss = scale(acc, 1.0 / cfg.batch_size);
        backward(loss);
        const double grad_norm = opt.step(cfg.clip_norm);
        result.final_loss = loss.item();
        if ((step + 1) % 50 == 0 || step + 1 == cfg.steps) {
            const double wall_ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                    .count();
            write_metric_line(metrics, step + 1, loss.item(), cfg.learning_rate, grad_norm,
                              wall_ms);
        }
        ++result.steps;
    }
    backbone.freeze();
    return result;
}

GradCheckReport pipeline_grad_check(GeneratorVariant variant, MergeMode merge, double h,
                                    double tol) {
    SceneConfig scene;
    scene.n_slots = 2;
    scene.n_types = 2;
    scene.n_colors = 2;
    scene.k_max = 2;
    scene.distractors_min = 1;
    scene.distractors_max = 1;

    BackboneConfig bcfg;
    bcfg.d_model = 8;
    bcfg.n_vis_tokens = scene.n_slots;
    bcfg.d_raw = scene.d_raw();
    bcfg.vocab_size = TokenMap(scene).vocab_size();
    bcfg.max_seq_len = 8;
    bcfg.n_layers = 1;
    bcfg.n_heads = 2;
    bcfg.d_ff = 16;
    bcfg.seed = 5;
    Backbone backbone(bcfg);
    backbone.freeze();

    GeneratorConfig gcfg;
    gcfg.variant = variant;
    gcfg.merge = merge;
    gcfg.d_model = bcfg.d_model;
    gcfg.n_heads = 2;
    gcfg.mlp_hidden = 8;
    gcfg.seed = 9;
    NoiseGenerator gen(gcfg);
    ModelBundle model{&backbone, &gen, merge, true};

    Rng data_rng(31);
    std::vector<Triplet> triplets = {
        make_triplet(data_rng, scene, QuestionTemplate::Presence, 0),
        make_triplet(data_rng, scene, QuestionTemplate::Count, 1)};
    std::vector<const Triplet*> items;
    for (const Triplet& t : triplets) items.push_back(&t);
    Rng eps_rng(77);
    const Batch batch = make_batch(items, 1, {bcfg.n_vis_tokens, bcfg.d_model}, eps_rng);

    return grad_check([&]() { return mc_loss(model, batch); }, gen.named_parameters(), h, tol);
}

double trainable_param_fraction(const ModelBundle& model) {
    std::size_t trainable = 0;
    if (model.generator) {
        for (const Tensor& p : model.generator->parameters()) {
            if (p.requires_grad()) trainable += p.numel();
        }
    }
    std::size_t backbone = 0;
    if (model.backbone) {
        for (const Tensor& p : model.backbone->parameters()) {
            if (p.requires_grad()) trainable += p.numel();
            backbone += p.numel();
        }
    }
    const std::size_t total = backbone + (model.generator ? model.generator->param_count() : 0);
    if (total == 0) return 0.0;
    return static_cast<double>(trainable) / static_cast<double>(total);
}

}  // namespace mung
