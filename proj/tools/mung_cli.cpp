#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <sstream>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "mung/config.hpp"
#include "mung/eval.hpp"
#include "mung/sha256.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string resolve_out(std::string out, const std::string& cmd) {
    if (!out.empty()) return out;
    if (const char* root = std::getenv("MUNG_OUT_DIR")) {
        return std::string(root) + "/" + cmd;
    }
    throw mung::ConfigError("no --out given and MUNG_OUT_DIR is not set");
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw mung::ValueError("cannot write " + path);
    f << text;
}

void write_json_file(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// Every run leaves a provenance manifest: config hash plus artifact hashes.
void write_manifest(const std::string& out_dir, const mung::RunConfig& cfg,
                    const std::vector<std::pair<std::string, std::string>>& artifacts) {
    json m;
    m["format"] = "MUNG1";
    m["config_sha256"] = mung::Sha256::of(cfg.to_json().dump().data(), cfg.to_json().dump().size());
    for (auto& [name, path] : artifacts) {
        m[name + "_sha256"] = mung::Sha256::of_file(path);
    }
    write_json_file(out_dir + "/manifest.json", m);
}

void echo_config(const std::string& out_dir, const mung::RunConfig& cfg) {
    write_json_file(out_dir + "/config.json", cfg.to_json());
}

mung::Backbone load_backbone(const mung::RunConfig& cfg, const std::string& path, bool freeze) {
    mung::Backbone bb(cfg.backbone);
    bb.load_checkpoint(mung::Checkpoint::load(path));
    if (freeze) bb.freeze();
    return bb;
}

std::pair<int, int> grid_dims(int n) {
    int rows = static_cast<int>(std::sqrt(static_cast<double>(n)));
    while (rows > 1 && n % rows != 0) --rows;
    return {rows, n / rows};
}

int cmd_pretrain(const mung::RunConfig& cfg, const std::string& out) {
    fs::create_directories(out);
    auto data = mung::make_dataset(cfg.seed, cfg.pretrain_dataset_size, mung::Split::Train,
                                   cfg.clean_scene);
    mung::Backbone bb(cfg.backbone);
    auto result = mung::pretrain_backbone(bb, data, cfg.pretrain, out + "/pretrain_metrics.jsonl");
    bb.to_checkpoint().save(out + "/backbone.ckpt");

    auto val = mung::make_dataset(cfg.seed, 300, mung::Split::Val, cfg.clean_scene);
    json r;
    r["final_loss"] = result.final_loss;
    r["steps"] = result.steps;
    r["clean_val_accuracy"] =
        mung::answer_accuracy(bb, nullptr, mung::MergeMode::Add, false, val, cfg.seed);
    write_json_file(out + "/pretrain_result.json", r);
    echo_config(out, cfg);
    write_manifest(out, cfg, {{"backbone_ckpt", out + "/backbone.ckpt"}});
    std::cout << "pretrain: final_loss=" << result.final_loss
              << " clean_val_accuracy=" << r["clean_val_accuracy"] << "\n";
    return 0;
}

int cmd_train(const mung::RunConfig& cfg, const std::string& backbone_path,
              const std::string& out) {
    fs::create_directories(out);
    mung::Backbone bb = load_backbone(cfg, backbone_path, true);
    auto data = mung::make_dataset(cfg.seed, cfg.train_dataset_size, mung::Split::Train, cfg.scene);
    mung::NoiseGenerator gen(cfg.generator);
    mung::ModelBundle model{&bb, &gen, cfg.generator.merge, true};
    auto result = mung::train(model, data, cfg.train, out + "/train_metrics.jsonl");
    gen.to_checkpoint().save(out + "/mung.ckpt");

    json r;
    r["final_loss"] = result.final_loss;
    r["epoch_loss"] = result.epoch_loss;
    r["h_cond_per_epoch"] = result.epoch_loss;  // epoch-mean MC loss estimates H(T|E)
    r["steps"] = result.steps;
    r["trainable_fraction"] = result.trainable_fraction;
    write_json_file(out + "/train_result.json", r);
    echo_config(out, cfg);
    write_manifest(out, cfg, {{"backbone_ckpt", backbone_path}, {"mung_ckpt", out + "/mung.ckpt"}});
    std::cout << "train: final_loss=" << result.final_loss
              << " trainable_fraction=" << result.trainable_fraction << "\n";
    return 0;
}

int cmd_eval(const mung::RunConfig& cfg, const std::string& backbone_path,
             const std::string& mung_path, const std::string& out) {
    fs::create_directories(out);
    mung::Backbone bb = load_backbone(cfg, backbone_path, true);
    auto data = mung::make_dataset(cfg.seed, cfg.eval_dataset_size, mung::Split::Test, cfg.scene);

    json r;
    std::ostringstream txt;
    const auto h_task = mung::estimate_task_entropy(bb, data, cfg.eval_n);
    r["h_task"] = {{"nats", h_task.value}, {"std_err", h_task.std_err}, {"n", h_task.n_samples}};
    r["baseline_accuracy"] =
        mung::answer_accuracy(bb, nullptr, mung::MergeMode::Add, false, data, cfg.seed);
    txt << "H(T)  = " << h_task.value << " +- " << h_task.std_err << " nats\n";
    txt << "baseline accuracy = " << r["baseline_accuracy"] << "\n";

    if (!mung_path.empty()) {
        mung::NoiseGenerator gen(cfg.generator);
        gen.load_checkpoint(mung::Checkpoint::load(mung_path));
        mung::ModelBundle model{&bb, &gen, cfg.generator.merge, true};
        const auto report =
            mung::mutual_information_check(model, data, cfg.eval_n, cfg.eval_m, cfg.seed);
        r["h_cond"] = {{"nats", report.h_cond.value},
                       {"std_err", report.h_cond.std_err},
                       {"n", report.h_cond.n_samples}};
        r["mi_estimate"] = report.mi_estimate;
        r["combined_se"] = report.combined_se;
        r["paired_diff_se"] = report.paired_diff_se;
        r["positive_incentive"] = report.positive;
        r["mung_accuracy"] = mung::answer_accuracy(bb, &gen, cfg.generator.merge, true, data,
                                                   cfg.seed);
        r["trainable_fraction"] = mung::trainable_param_fraction(model);
        txt << "H(T|E) = " << report.h_cond.value << " +- " << report.h_cond.std_err << " nats\n";
        txt << "I(T;E) = " << report.mi_estimate << " (2x combined SE = " << 2 * report.combined_se
            << ", positive = " << (report.positive ? "yes" : "no") << ")\n";
        txt << "mung accuracy = " << r["mung_accuracy"] << "\n";
        if (cfg.generator.variant == mung::GeneratorVariant::CrossAttention) {
            const auto rel = mung::relevance_score(bb, gen, data);
            r["relevance"] = {{"auc", rel.auc},
                              {"mass_ratio", rel.mass_ratio},
                              {"used", rel.used},
                              {"skipped", rel.skipped}};
            txt << "relevance AUC = " << rel.auc << " (mass ratio " << rel.mass_ratio << ", "
                << rel.skipped << " skipped)\n";
        }
    }
    write_json_file(out + "/eval_report.json", r);
    write_text(out + "/eval_report.txt", txt.str());
    echo_config(out, cfg);
    write_manifest(out, cfg, {{"backbone_ckpt", backbone_path}});
    std::cout << txt.str();
    return 0;
}

int cmd_ablate(const mung::RunConfig& cfg, const std::string& backbone_path,
               const std::string& out) {
    fs::create_directories(out);
    mung::Backbone bb = load_backbone(cfg, backbone_path, true);
    auto train_set =
        mung::make_dataset(cfg.seed, cfg.train_dataset_size, mung::Split::Train, cfg.scene);
    auto eval_set =
        mung::make_dataset(cfg.seed, cfg.eval_dataset_size, mung::Split::Val, cfg.scene);

    mung::AblationGridConfig gcfg;
    gcfg.generator = cfg.generator;
    gcfg.train = cfg.train;
    gcfg.eval_n = cfg.eval_n;
    gcfg.eval_m = cfg.eval_m;
    const auto cells = mung::ablation_grid(bb, gcfg, train_set, eval_set);

    json rows = json::array();
    for (const auto& c : cells) {
        json row;
        row["cell"] = c.name;
        row["structure"] = to_string(c.variant);
        row["merge"] = to_string(c.merge);
        row["noise"] = c.with_noise;
        row["accuracy"] = c.accuracy;
        row["h_cond"] = c.h_cond;
        if (c.auc >= 0.0) row["relevance_auc"] = c.auc;
        row["trainable_fraction"] = c.trainable_fraction;
        rows.push_back(row);
    }
    write_json_file(out + "/ablation.json", rows);
    const std::string table = mung::ablation_table_text(cells);
    write_text(out + "/ablation.txt", table);
    echo_config(out, cfg);
    write_manifest(out, cfg, {{"backbone_ckpt", backbone_path}});
    std::cout << table;
    return 0;
}

int cmd_viz(const mung::RunConfig& cfg, const std::string& backbone_path,
            const std::string& mung_path, int index, const std::string& out) {
    fs::create_directories(out);
    mung::Backbone bb = load_backbone(cfg, backbone_path, true);
    mung::NoiseGenerator gen(cfg.generator);
    gen.load_checkpoint(mung::Checkpoint::load(mung_path));
    auto data = mung::make_dataset(cfg.seed, cfg.eval_dataset_size, mung::Split::Test, cfg.scene);
    if (index < 0 || index >= static_cast<int>(data.size())) {
        throw mung::ConfigError("viz: --index out of range [0," + std::to_string(data.size()) +
                                ")");
    }
    const mung::Triplet& trip = data[index];
    const auto [rows, cols] = grid_dims(cfg.scene.n_slots);

    const auto before =
        mung::importance_map(bb, nullptr, cfg.generator.merge, trip, false, cfg.seed);
    const auto after = mung::importance_map(bb, &gen, cfg.generator.merge, trip, true, cfg.seed);
    mung::export_map(before, rows, cols, out + "/importance_before.pgm", mung::MapFormat::Pgm);
    mung::export_map(before, rows, cols, out + "/importance_before.csv", mung::MapFormat::Csv);
    mung::export_map(after, rows, cols, out + "/importance_after.pgm", mung::MapFormat::Pgm);
    mung::export_map(after, rows, cols, out + "/importance_after.csv", mung::MapFormat::Csv);

    if (cfg.generator.variant == mung::GeneratorVariant::CrossAttention) {
        mung::Tensor x_v = bb.align(bb.encode_visual(trip.visual));
        mung::Tensor x_l = bb.token_rows(trip.question);
        const auto sample = gen.deterministic(x_v, x_l, nullptr);
        const auto attn = mung::NoiseGenerator::attention_map(sample);
        mung::export_map(attn, rows, cols, out + "/attention.pgm", mung::MapFormat::Pgm);
        mung::export_map(attn, rows, cols, out + "/attention.csv", mung::MapFormat::Csv);
    }
    json r;
    r["index"] = index;
    r["question"] = trip.question;
    r["answer"] = trip.answer;
    r["relevance"] = trip.relevance;
    write_json_file(out + "/viz_meta.json", r);
    echo_config(out, cfg);
    std::cout << "viz: wrote maps for triplet " << index << " to " << out << "\n";
    return 0;
}

int cmd_gradcheck(const mung::RunConfig& cfg) {
    const auto report =
        mung::pipeline_grad_check(cfg.generator.variant, cfg.generator.merge, 1e-4, 1e-3);
    std::cout << "gradcheck: " << report.n_coords << " coords, max rel err " << report.max_rel_err
              << " (worst " << report.worst.name << "[" << report.worst.index
              << "] analytic=" << report.worst.analytic << " numeric=" << report.worst.numeric
              << ")\n";
    std::cout << (report.pass ? "PASS" : "FAIL") << "\n";
    return report.pass ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MuNG: trainable positive-incentive noise for a frozen toy multimodal model"};
    app.require_subcommand(1);

    std::string config_path, backbone_path, mung_path, out;
    int viz_index = 0;

    auto add_config = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON run configuration")->required();
    };

    CLI::App* pretrain = app.add_subcommand("pretrain", "pretrain and freeze the backbone");
    add_config(pretrain);
    pretrain->add_option("--out", out, "output directory");

    CLI::App* train = app.add_subcommand("train", "train the noise generator");
    add_config(train);
    train->add_option("--backbone", backbone_path, "backbone checkpoint")->required();
    train->add_option("--out", out, "output directory");

    CLI::App* eval = app.add_subcommand("eval", "entropy / accuracy / relevance report");
    add_config(eval);
    eval->add_option("--backbone", backbone_path, "backbone checkpoint")->required();
    eval->add_option("--mung", mung_path, "generator checkpoint (optional)");
    eval->add_option("--out", out, "output directory");

    CLI::App* ablate = app.add_subcommand("ablate", "train and score the six-cell ablation grid");
    add_config(ablate);
    ablate->add_option("--backbone", backbone_path, "backbone checkpoint")->required();
    ablate->add_option("--out", out, "output directory");

    CLI::App* viz = app.add_subcommand("viz", "export importance / attention heatmaps");
    add_config(viz);
    viz->add_option("--backbone", backbone_path, "backbone checkpoint")->required();
    viz->add_option("--mung", mung_path, "generator checkpoint")->required();
    viz->add_option("--index", viz_index, "triplet index in the test split");
    viz->add_option("--out", out, "output directory");

    CLI::App* gradcheck = app.add_subcommand("gradcheck", "full-pipeline finite-difference check");
    add_config(gradcheck);

    try {
        app.parse(argc, argv);
        const mung::RunConfig cfg = mung::load_run_config(config_path);
        if (pretrain->parsed()) return cmd_pretrain(cfg, resolve_out(out, "pretrain"));
        if (train->parsed()) return cmd_train(cfg, backbone_path, resolve_out(out, "train"));
        if (eval->parsed()) return cmd_eval(cfg, backbone_path, mung_path, resolve_out(out, "eval"));
        if (ablate->parsed()) return cmd_ablate(cfg, backbone_path, resolve_out(out, "ablate"));
        if (viz->parsed())
            return cmd_viz(cfg, backbone_path, mung_path, viz_index, resolve_out(out, "viz"));
        if (gradcheck->parsed()) return cmd_gradcheck(cfg);
        return 1;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    } catch (const mung::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
