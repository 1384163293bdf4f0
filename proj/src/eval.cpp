#include "mung/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace mung {

namespace {

EntropyEstimate summarize(const std::vector<double>& xs) {
    EntropyEstimate e;
    e.n_samples = static_cast<int>(xs.size());
    if (xs.empty()) return e;
    double s = 0.0;
    for (double x : xs) s += x;
    e.value = s / xs.size();
    if (xs.size() > 1) {
        double ss = 0.0;
        for (double x : xs) ss += (x - e.value) * (x - e.value);
        e.std_err = std::sqrt(ss / (xs.size() - 1.0) / xs.size());
    }
    return e;
}

double triplet_cond_nll(const ModelBundle& model, const Triplet& trip, int m, Rng& rng) {
    const Backbone& bb = *model.backbone;
    Tensor x_v = bb.align(bb.encode_visual(trip.visual));
    Tensor x_l = bb.token_rows(trip.question);
    Tensor text = bb.embed_tokens(text_input_ids(trip));
    const std::vector<int> targets = text_target_ids(trip);
    const std::vector<bool> mask = answer_mask(trip);
    double acc = 0.0;
    const int draws = model.sample_noise ? m : 1;
    for (int j = 0; j < draws; ++j) {
        // Inference mode: the generator never sees the answer.
        NoiseSample s = model.sample_noise
                            ? model.generator->draw(x_v, x_l, nullptr, rng)
                            : model.generator->deterministic(x_v, x_l, nullptr);
        Tensor injected = NoiseGenerator::inject(x_v, s.noise, model.merge);
        acc += masked_nll(bb.decode(injected, text), targets, mask).item();
    }
    return acc / draws;
}

}  // namespace

EntropyEstimate estimate_task_entropy(const Backbone& backbone, std::span<const Triplet> dataset,
                                      int n) {
    if (n <= 0 || dataset.empty()) throw ValueError("estimate_task_entropy: need n > 0 samples");
    const int use = std::min<int>(n, static_cast<int>(dataset.size()));
    std::vector<double> nll;
    nll.reserve(use);
    for (int i = 0; i < use; ++i) nll.push_back(clean_nll(backbone, dataset[i]).item());
    return summarize(nll);
}

EntropyEstimate estimate_conditional_entropy(const ModelBundle& model,
                                             std::span<const Triplet> dataset, int n, int m,
                                             std::uint64_t seed) {
    if (n <= 0 || m <= 0 || dataset.empty()) {
        throw ValueError("estimate_conditional_entropy: need n, m > 0");
    }
    const int use = std::min<int>(n, static_cast<int>(dataset.size()));
    Rng rng(salt_seed(seed, 0x6863));
    std::vector<double> nll;
    nll.reserve(use);
    for (int i = 0; i < use; ++i) nll.push_back(triplet_cond_nll(model, dataset[i], m, rng));
    return summarize(nll);
}

EntropyReport mutual_information_check(const ModelBundle& model, std::span<const Triplet> dataset,
                                       int n, int m, std::uint64_t seed) {
    const int use = std::min<int>(n, static_cast<int>(dataset.size()));
    Rng rng(salt_seed(seed, 0x6863));
    std::vector<double> task, cond, diff;
    for (int i = 0; i < use; ++i) {
        const double ht = clean_nll(*model.backbone, dataset[i]).item();
        const double hc = triplet_cond_nll(model, dataset[i], m, rng);
        task.push_back(ht);
        cond.push_back(hc);
        diff.push_back(ht - hc);
    }
    EntropyReport r;
    r.h_task = summarize(task);
    r.h_cond = summarize(cond);
    r.mi_estimate = r.h_task.value - r.h_cond.value;
    r.combined_se = std::sqrt(r.h_task.std_err * r.h_task.std_err +
                              r.h_cond.std_err * r.h_cond.std_err);
    r.paired_diff_se = summarize(diff).std_err;
    r.positive = r.mi_estimate > 2.0 * r.combined_se;
    return r;
}

double answer_accuracy(const Backbone& backbone, const NoiseGenerator* generator, MergeMode merge,
                       bool sample_noise, std::span<const Triplet> dataset, std::uint64_t seed) {
    if (dataset.empty()) throw ValueError("answer_accuracy: empty dataset");
    Rng rng(salt_seed(seed, 0x6163));
    int correct = 0;
    for (const Triplet& trip : dataset) {
        Tensor x_v = backbone.align(backbone.encode_visual(trip.visual));
        Tensor injected = x_v;
        if (generator) {
            Tensor x_l = backbone.token_rows(trip.question);
            NoiseSample s = sample_noise ? generator->draw(x_v, x_l, nullptr, rng)
                                         : generator->deterministic(x_v, x_l, nullptr);
            injected = NoiseGenerator::inject(x_v, s.noise, merge);
        }
        const std::vector<int> got = backbone.generate_greedy(
            injected, trip.question, static_cast<int>(trip.answer.size()));
        const std::vector<int> want(trip.answer.begin(), trip.answer.end() - 1);  // content, no EOS
        if (got == want) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

RelevanceScore relevance_score(const Backbone& backbone, const NoiseGenerator& generator,
                               std::span<const Triplet> dataset) {
    if (generator.config().variant != GeneratorVariant::CrossAttention) {
        throw ValueError("relevance_score: requires the CrossAttention variant");
    }
    RelevanceScore out;
    double auc_sum = 0.0;
    double sal_mass = 0.0, other_mass = 0.0;
    for (const Triplet& trip : dataset) {
        // The generator's attention marks the slots it rewrites: the planted
        // salient distractors (the irrelevant objects). Localization is scored
        // as how cleanly attention separates them from the task-relevant
        // objects. Only occupied slots enter the ranking: empty slots carry
        // near-duplicate features whose attention mass dilutes across copies,
        // which biases rank statistics regardless of training.
        const int n_slots = static_cast<int>(trip.scene.slots.size());
        std::vector<bool> target(n_slots), occupied(n_slots);
        int pos = 0, neg = 0;
        for (int i = 0; i < n_slots; ++i) {
            occupied[i] = trip.scene.slots[i].type != 0;
            target[i] = trip.scene.slots[i].salient;
            if (occupied[i]) (target[i] ? pos : neg) += 1;
        }
        if (pos == 0 || neg == 0) {
            ++out.skipped;
            continue;
        }
        Tensor x_v = backbone.align(backbone.encode_visual(trip.visual));
        Tensor x_l = backbone.token_rows(trip.question);
        NoiseSample s = generator.deterministic(x_v, x_l, nullptr);
        const std::vector<double> map = NoiseGenerator::attention_map(s);

        // Mann-Whitney AUC with tie correction.
        double wins = 0.0;
        for (int i = 0; i < n_slots; ++i) {
            if (!occupied[i] || !target[i]) continue;
            for (int j = 0; j < n_slots; ++j) {
                if (!occupied[j] || target[j]) continue;
                if (map[i] > map[j]) wins += 1.0;
                else if (map[i] == map[j]) wins += 0.5;
            }
        }
        auc_sum += wins / (static_cast<double>(pos) * neg);
        double sm = 0.0, om = 0.0;
        for (int i = 0; i < n_slots; ++i) {
            if (!occupied[i]) continue;
            (target[i] ? sm : om) += map[i];
        }
        sal_mass += sm / pos;
        other_mass += om / neg;
        ++out.used;
    }
    if (out.used == 0) throw ValueError("relevance_score: every triplet was degenerate");
    out.auc = auc_sum / out.used;
    out.mass_ratio = other_mass > 0.0 ? (sal_mass / out.used) / (other_mass / out.used) : 0.0;
    return out;
}

std::vector<double> importance_map(const Backbone& backbone, const NoiseGenerator* generator,
                                   MergeMode merge, const Triplet& trip, bool with_noise,
                                   std::uint64_t seed) {
    Tensor base = backbone.align(backbone.encode_visual(trip.visual));
    // Fresh leaf at the injection site so the input gradient lands here.
    Tensor x_v(base.shape(), base.data(), true);
    Tensor injected = x_v;
    if (generator && with_noise) {
        Rng rng(salt_seed(seed, 0x696d));
        Tensor x_l = backbone.token_rows(trip.question);
        NoiseSample s = generator->draw(x_v, x_l, nullptr, rng);
        injected = NoiseGenerator::inject(x_v, s.noise, merge);
    }
    Tensor text = backbone.embed_tokens(text_input_ids(trip));
    Tensor nll = masked_nll(backbone.decode(injected, text), text_target_ids(trip),
                            answer_mask(trip));
    // log q(answer) = -nll; the sign does not affect the gradient norm.
    backward(nll);
    const int nv = x_v.rows(), d = x_v.cols();
    const auto& g = x_v.grad();
    std::vector<double> map(nv, 0.0);
    for (int i = 0; i < nv; ++i) {
        double ss = 0.0;
        for (int j = 0; j < d; ++j) {
            const double v = g[static_cast<std::size_t>(i) * d + j];
            ss += v * v;
        }
        map[i] = std::sqrt(ss);
    }
    return map;
}

std::vector<AblationCell> ablation_grid(Backbone& backbone, const AblationGridConfig& cfg,
                                        std::span<const Triplet> train_set,
                                        std::span<const Triplet> eval_set) {
    struct CellSpec {
        const char* name;
        GeneratorVariant variant;
        MergeMode merge;
        bool with_noise;
    };
    const CellSpec specs[] = {
        {"mlp/add", GeneratorVariant::Mlp, MergeMode::Add, true},
        {"mlp/dot", GeneratorVariant::Mlp, MergeMode::Dot, true},
        {"ca/dot", GeneratorVariant::CrossAttention, MergeMode::Dot, true},
        {"ca/add-no-noise", GeneratorVariant::CrossAttention, MergeMode::Add, false},
        {"gauss/add", GeneratorVariant::GaussianBaseline, MergeMode::Add, true},
        {"ca/add", GeneratorVariant::CrossAttention, MergeMode::Add, true},
    };
    std::vector<AblationCell> cells;
    for (const CellSpec& spec : specs) {
        GeneratorConfig gcfg = cfg.generator;
        gcfg.variant = spec.variant;
        gcfg.merge = spec.merge;
        NoiseGenerator gen(gcfg);
        ModelBundle model{&backbone, &gen, spec.merge, spec.with_noise};
        if (gen.param_count() > 0) {
            train(model, train_set, cfg.train);
        }
        AblationCell cell;
        cell.name = spec.name;
        cell.variant = spec.variant;
        cell.merge = spec.merge;
        cell.with_noise = spec.with_noise;
        cell.accuracy = answer_accuracy(backbone, &gen, spec.merge, spec.with_noise, eval_set,
                                        cfg.train.seed);
        cell.h_cond = estimate_conditional_entropy(model, eval_set, cfg.eval_n, cfg.eval_m,
                                                   cfg.train.seed)
                          .value;
        if (spec.variant == GeneratorVariant::CrossAttention) {
            cell.auc = relevance_score(backbone, gen, eval_set).auc;
        }
        cell.trainable_fraction = trainable_param_fraction(model);
        cells.push_back(std::move(cell));
    }
    return cells;
}

std::string ablation_table_text(const std::vector<AblationCell>& cells) {
    std::ostringstream os;
    os << "cell              noise  accuracy  H(T|E)    AUC      frac\n";
    for (const AblationCell& c : cells) {
        char line[160];
        if (c.auc >= 0.0) {
            std::snprintf(line, sizeof(line), "%-17s %-6s %8.4f  %8.4f  %6.4f  %6.4f\n",
                          c.name.c_str(), c.with_noise ? "yes" : "no", c.accuracy, c.h_cond,
                          c.auc, c.trainable_fraction);
        } else {
            std::snprintf(line, sizeof(line), "%-17s %-6s %8.4f  %8.4f  %6s  %6.4f\n",
                          c.name.c_str(), c.with_noise ? "yes" : "no", c.accuracy, c.h_cond,
                          "-", c.trainable_fraction);
        }
        os << line;
    }
    return os.str();
}

void export_map(std::span<const double> values, int rows, int cols, const std::string& path,
                MapFormat format) {
    if (rows <= 0 || cols <= 0 || values.size() != static_cast<std::size_t>(rows) * cols) {
        throw ValueError("export_map: empty or mis-sized grid");
    }
    for (double v : values) {
        if (!std::isfinite(v)) throw NumericError("export_map: non-finite value");
    }
    if (format == MapFormat::Csv) {
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw ValueError("export_map: cannot write " + path);
        out.precision(17);
        for (int i = 0; i < rows; ++i) {
            for (int j = 0; j < cols; ++j) {
                out << values[static_cast<std::size_t>(i) * cols + j];
                out << (j + 1 < cols ? ',' : '\n');
            }
        }
        return;
    }
    double lo = values[0], hi = values[0];
    for (double v : values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = hi > lo ? hi - lo : 1.0;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValueError("export_map: cannot write " + path);
    out << "P5\n" << cols << " " << rows << "\n255\n";
    for (double v : values) {
        const int g = static_cast<int>(std::lround((v - lo) / span * 255.0));
        const unsigned char byte = static_cast<unsigned char>(std::clamp(g, 0, 255));
        out.write(reinterpret_cast<const char*>(&byte), 1);
    }
}

std::vector<int> parse_pgm(const std::string& path, int& rows, int& cols) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValueError("parse_pgm: cannot open " + path);
    std::string magic;
    int maxval = 0;
    in >> magic >> cols >> rows >> maxval;
    if (magic != "P5" || maxval != 255) throw ValueError("parse_pgm: not an expected P5 file");
    in.get();  // single whitespace after the header
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(rows) * cols);
    for (int i = 0; i < rows * cols; ++i) {
        const int c = in.get();
        if (c == EOF) throw ValueError("parse_pgm: truncated pixel data");
        out.push_back(c);
    }
    return out;
}

}  // namespace mung
