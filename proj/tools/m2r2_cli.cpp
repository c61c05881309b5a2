// Command-line front end: data generation, masking, training, testing,
// sweeps, ablations, embedding export and gradient checks.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "m2r2/crl/crl_io.hpp"
#include "m2r2/data/dataset_io.hpp"
#include "m2r2/data/mask.hpp"
#include "m2r2/data/synthetic.hpp"
#include "m2r2/format.hpp"
#include "m2r2/harness/config.hpp"
#include "m2r2/harness/grad_suite.hpp"
#include "m2r2/harness/run_dir.hpp"
#include "m2r2/harness/sweep.hpp"
#include "m2r2/panet/panet_io.hpp"
#include "m2r2/pipeline/m2r2.hpp"
#include "m2r2/random.hpp"

namespace fs = std::filesystem;
using namespace m2r2;
using json = nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kSplitStream = 5;

struct Common {
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string config;
};

void add_common(CLI::App* cmd, Common& c, const std::string& out_help) {
    cmd->add_option("--seed", c.seed, "Master seed (overrides the config file)");
    cmd->add_option("--out", c.out, out_help)->required();
    cmd->add_option("--config", c.config, "JSON configuration file")->check(CLI::ExistingFile);
}

harness::ExperimentConfig resolve(const Common& c) {
    auto cfg = c.config.empty() ? harness::ExperimentConfig{} : harness::load_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    return cfg;
}

void finish(harness::ExperimentConfig& cfg) {
    harness::validate(cfg);
    harness::propagate_seed(cfg);
}

void ensure_parent(const fs::path& p) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

// Dataset for sweeps and ablations: a file to split, or the synthetic family.
std::pair<data::Dataset, data::Dataset> experiment_data(const harness::ExperimentConfig& cfg,
                                                        const std::string& path) {
    const auto ds = path.empty() ? data::generate_synthetic(cfg.synth, cfg.conversations) : data::load_dataset(path);
    return data::split_dataset(ds, cfg.split, derive_seed(cfg.seed, kSplitStream));
}

json metrics_json(const harness::MetricsReport& m, const data::Dataset& ds) { return harness::to_json(m, ds.classes); }

int cmd_gen_data(harness::ExperimentConfig cfg, const fs::path& out) {
    finish(cfg);
    const auto ds = data::generate_synthetic(cfg.synth, cfg.conversations);
    ensure_parent(out);
    data::save_dataset(ds, out);
    std::cout << "wrote " << ds.conversations.size() << " conversations (" << ds.total_turns() << " turns) to "
              << out.string() << '\n';
    return 0;
}

int cmd_mask(harness::ExperimentConfig cfg, const fs::path& data_path, const fs::path& out) {
    finish(cfg);
    const auto ds = data::load_dataset(data_path);
    const auto masks = data::generate_mask(ds, cfg.eta, cfg.seed);
    const auto masked = data::apply_mask(ds, masks);
    ensure_parent(out);
    data::save_dataset(masked, out);
    std::cout << "realized missing rate " << format_g6(data::missing_rate(masks)) << '\n';
    return 0;
}

int cmd_train(harness::ExperimentConfig cfg, const fs::path& data_path, const fs::path& out) {
    finish(cfg);
    const auto ds = data::load_dataset(data_path);
    const auto [fit, val] = data::split_dataset(ds, cfg.val_ratio, derive_seed(cfg.seed, kSplitStream));
    harness::RunDir run(out);
    run.write_json("config.json", harness::to_json(cfg));
    run.log("train: " + std::to_string(fit.conversations.size()) + " fit / " + std::to_string(val.conversations.size()) +
            " validation conversations");

    auto result = pipeline::train(fit, data::masks_of(fit), val, data::masks_of(val), cfg.m2r2);
    for (const auto& r : result.history) {
        json rec{{"iteration", r.iteration},
                 {"val_weighted_acc", r.val_accuracy},
                 {"panet_loss", r.panet_loss},
                 {"panet_train_acc", r.panet_train_accuracy},
                 {"crl_reconstruction", r.crl.reconstruction},
                 {"crl_classification", r.crl.classification},
                 {"crl_adversarial", r.crl.adversarial},
                 {"crl_critic", r.crl.critic},
                 {"crl_total", r.crl.total}};
        run.append_iteration(rec);
        run.log("iteration " + std::to_string(r.iteration) + " val_acc " + format_g6(r.val_accuracy));
    }

    auto& model = result.model;
    panet::save_panet(model.panet, run.checkpoint("panet.json"));
    if (model.crl) {
        crl::save_crl(*model.crl, run.checkpoint("crl.json"));
        crl::save_embeddings_csv(crl::embedding_rows(fit, model.crl->h_tables()), run.file("embeddings.csv"));
    }
    run.write_json("model.json", {{"best_iteration", result.best_iteration},
                                  {"iterations", result.history.size()},
                                  {"inference_seed", model.inference_seed},
                                  {"has_crl", model.crl.has_value()}});
    const auto val_result = pipeline::test(model, val, data::masks_of(val), cfg.m2r2);
    json metrics;
    metrics["split"] = "validation";
    metrics["best_iteration"] = result.best_iteration;
    metrics["metrics"] = metrics_json(val_result.metrics, val);
    run.write_json("metrics.json", metrics);
    std::cout << "best iteration " << result.best_iteration << ", validation weighted accuracy "
              << format_g6(val_result.metrics.weighted_accuracy) << '\n';
    return 0;
}

pipeline::TrainedModel load_model(const fs::path& dir) {
    const auto meta = harness::read_json(dir / "model.json");
    pipeline::TrainedModel m;
    m.panet = panet::load_panet(dir / "checkpoints" / "panet.json");
    if (meta.at("has_crl").get<bool>()) m.crl = crl::load_crl(dir / "checkpoints" / "crl.json");
    m.inference_seed = meta.at("inference_seed").get<std::uint64_t>();
    return m;
}

// The model directory's configuration is the base; --config and --seed still override.
harness::ExperimentConfig model_config(const Common& c, const fs::path& model_dir) {
    auto cfg = harness::from_json(harness::read_json(model_dir / "config.json"));
    if (!c.config.empty()) cfg = harness::from_json(harness::read_json(c.config), cfg);
    if (c.seed) cfg.seed = *c.seed;
    finish(cfg);
    return cfg;
}

int cmd_test(const Common& c, const fs::path& data_path, const fs::path& model_dir) {
    auto cfg = model_config(c, model_dir);
    const auto model = load_model(model_dir);
    const auto ds = data::load_dataset(data_path);
    const auto masks = data::masks_of(ds);
    const auto result = pipeline::test(model, ds, masks, cfg.m2r2);

    const fs::path out = c.out;
    fs::create_directories(out);
    json metrics;
    metrics["split"] = "test";
    metrics["missing_rate"] = data::missing_rate(masks);
    metrics["metrics"] = metrics_json(result.metrics, ds);
    {
        std::ofstream f(out / "metrics.json", std::ios::binary);
        f << metrics.dump(2) << '\n';
    }
    crl::save_embeddings_csv(crl::embedding_rows(ds, result.inference.h), out / "embeddings.csv");
    std::ofstream preds(out / "predictions.csv", std::ios::binary);
    preds << "conversation_id,turn,label,prediction\n";
    for (std::size_t n = 0; n < ds.conversations.size(); ++n)
        for (std::size_t t = 0; t < ds.conversations[n].length(); ++t)
            preds << ds.conversations[n].id << ',' << t << ',' << ds.conversations[n].utterances[t].label << ','
                  << result.inference.predictions[n][t] << '\n';
    std::cout << "test weighted accuracy " << format_g6(result.metrics.weighted_accuracy) << ", weighted F1 "
              << format_g6(result.metrics.weighted_f1) << '\n';
    return 0;
}

int cmd_sweep(harness::ExperimentConfig cfg, const std::string& data_path, const fs::path& out) {
    finish(cfg);
    const auto [train_set, test_set] = experiment_data(cfg, data_path);
    const auto seeds = harness::sweep_seeds(cfg.seed, cfg.sweep.seeds);
    auto run = [&](double eta, std::uint64_t seed) {
        return harness::protocol_run(cfg, train_set, test_set, eta, seed, cfg.sweep.mode);
    };
    const auto result = harness::sweep(cfg.sweep.grid, seeds, run, cfg.sweep.jobs, train_set.classes);

    fs::create_directories(out);
    {
        std::ofstream f(out / "sweep.csv", std::ios::binary);
        harness::write_sweep_csv(result, f);
    }
    {
        std::ofstream f(out / "sweep_summary.csv", std::ios::binary);
        harness::write_summary_csv(result, f);
    }
    json runs = json::array();
    for (const auto& r : result.rows) {
        json e{{"eta", r.eta}, {"seed", r.seed}};
        if (r.metrics)
            e["metrics"] = metrics_json(*r.metrics, train_set);
        else
            e["error"] = r.error;
        runs.push_back(std::move(e));
    }
    json summary = json::array();
    for (const auto& s : result.summary)
        summary.push_back({{"eta", s.eta},
                           {"runs", s.runs},
                           {"mean_weighted_acc", s.mean_accuracy},
                           {"var_weighted_acc", s.variance_accuracy},
                           {"mean_weighted_f1", s.mean_f1}});
    json doc{{"mode", pipeline::to_string(cfg.sweep.mode)}, {"runs", runs}, {"summary", summary}};
    {
        std::ofstream f(out / "metrics.json", std::ios::binary);
        f << doc.dump(2) << '\n';
    }
    {
        std::ofstream f(out / "config.json", std::ios::binary);
        f << harness::to_json(cfg).dump(2) << '\n';
    }
    for (const auto& r : result.rows)
        if (!r.metrics) std::cerr << "run eta=" << format_g6(r.eta) << " seed=" << r.seed << " failed: " << r.error << '\n';
    for (const auto& s : result.summary)
        std::cout << "eta " << format_g6(s.eta) << "  mean acc " << format_g6(s.mean_accuracy) << "  var "
                  << format_g6(s.variance_accuracy) << '\n';
    return result.all_ok() ? 0 : 1;
}

int cmd_ablate(harness::ExperimentConfig cfg, const std::string& data_path, const std::vector<std::string>& modes,
               const fs::path& out) {
    finish(cfg);
    std::vector<pipeline::AblationMode> parsed;
    for (const auto& m : modes) parsed.push_back(pipeline::parse_ablation_mode(m));
    const auto [train_set, test_set] = experiment_data(cfg, data_path);
    const auto seeds = harness::sweep_seeds(cfg.seed, cfg.sweep.seeds);
    json runs = json::array();
    for (auto mode : parsed) {
        std::vector<double> acc;
        json per_seed = json::array();
        for (auto seed : seeds) {
            const auto m = harness::protocol_run(cfg, train_set, test_set, cfg.eta, seed, mode);
            acc.push_back(m.weighted_accuracy);
            per_seed.push_back({{"seed", seed}, {"metrics", metrics_json(m, train_set)}});
        }
        const auto [mean, var] = harness::mean_variance(acc);
        runs.push_back({{"mode", pipeline::to_string(mode)},
                        {"mean_weighted_acc", mean},
                        {"var_weighted_acc", var},
                        {"seeds", per_seed}});
        std::cout << pipeline::to_string(mode) << "  mean acc " << format_g6(mean) << '\n';
    }
    fs::create_directories(out);
    std::ofstream f(out / "metrics.json", std::ios::binary);
    f << json{{"eta", cfg.eta}, {"runs", runs}}.dump(2) << '\n';
    return 0;
}

int cmd_export(const Common& c, const fs::path& data_path, const fs::path& model_dir) {
    auto cfg = model_config(c, model_dir);
    const auto model = load_model(model_dir);
    const auto ds = data::load_dataset(data_path);
    const auto inference = pipeline::infer(model, ds, data::masks_of(ds), cfg.m2r2);
    const fs::path out = c.out;
    ensure_parent(out);
    crl::save_embeddings_csv(crl::embedding_rows(ds, inference.h), out);
    return 0;
}

int cmd_grad_check(const harness::ExperimentConfig& cfg, std::size_t seeds, bool inject, const fs::path& out) {
    harness::GradSuiteOptions opt;
    opt.seed = cfg.seed;
    opt.seeds = seeds;
    opt.inject_fault = inject;
    const auto report = harness::run_grad_suite(opt);
    for (const auto& c : report.cases)
        std::cout << (c.passed ? "ok    " : "FAIL  ") << c.name << "  max rel err " << format_g6(c.worst.max_rel_error)
                  << " (tol " << format_g6(c.tolerance) << ")\n";
    ensure_parent(out);
    std::ofstream f(out, std::ios::binary);
    f << harness::to_json(report).dump(2) << '\n';
    return report.passed ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"M2R2: missing-modality robust emotion recognition in conversation"};
    app.require_subcommand(1);

    Common gen_c, mask_c, train_c, test_c, sweep_c, ablate_c, export_c, grad_c;
    std::optional<std::size_t> conversations;
    std::optional<double> noise, rho, eta_mask, eta_ablate;
    std::string mask_data, train_data, test_data, test_model, sweep_data, sweep_eta, sweep_mode, ablate_data;
    std::string export_data, export_model;
    std::optional<std::size_t> sweep_seeds, sweep_jobs, ablate_seeds;
    std::vector<std::string> ablate_modes{"no_party_attention", "no_m2r2", "full"};
    std::size_t grad_seeds = 20;
    bool inject_fault = false;

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
    add_common(gen, gen_c, "Output dataset file (JSON lines)");
    gen->add_option("--conversations", conversations, "Number of conversations");
    gen->add_option("--noise", noise, "Feature noise standard deviation");
    gen->add_option("--rho", rho, "Context coupling strength in [0, 1]");

    auto* mask = app.add_subcommand("mask", "Drop modality slots at a target missing rate");
    add_common(mask, mask_c, "Output dataset file");
    mask->add_option("--data", mask_data, "Input dataset")->required()->check(CLI::ExistingFile);
    mask->add_option("--eta", eta_mask, "Missing rate (absent fraction of slots)");

    auto* train = app.add_subcommand("train", "Alternating training on a (masked) dataset");
    add_common(train, train_c, "Run directory");
    train->add_option("--data", train_data, "Training dataset")->required()->check(CLI::ExistingFile);

    auto* test = app.add_subcommand("test", "Fine-tune representations and evaluate a trained run");
    add_common(test, test_c, "Output directory");
    test->add_option("--data", test_data, "Test dataset")->required()->check(CLI::ExistingFile);
    test->add_option("--model", test_model, "Run directory written by train")->required()->check(CLI::ExistingDirectory);

    auto* sweep = app.add_subcommand("sweep", "Missing-rate sweep over seeds");
    add_common(sweep, sweep_c, "Output directory");
    sweep->add_option("--data", sweep_data, "Dataset to split (default: synthetic)")->check(CLI::ExistingFile);
    sweep->add_option("--eta", sweep_eta, "Grid as start:stop:step or a comma list");
    sweep->add_option("--seeds", sweep_seeds, "Number of seeds per missing rate");
    sweep->add_option("--mode", sweep_mode, "full, no_m2r2 or no_party_attention");
    sweep->add_option("--jobs", sweep_jobs, "Concurrent runs");

    auto* ablate = app.add_subcommand("ablate", "Compare pipeline variants at one missing rate");
    add_common(ablate, ablate_c, "Output directory");
    ablate->add_option("--data", ablate_data, "Dataset to split (default: synthetic)")->check(CLI::ExistingFile);
    ablate->add_option("--eta", eta_ablate, "Missing rate");
    ablate->add_option("--seeds", ablate_seeds, "Number of seeds");
    ablate->add_option("--modes", ablate_modes, "Modes to run");

    auto* exp = app.add_subcommand("export-embeddings", "Infer representations for a dataset and write them as CSV");
    add_common(exp, export_c, "Output CSV file");
    exp->add_option("--data", export_data, "Dataset")->required()->check(CLI::ExistingFile);
    exp->add_option("--model", export_model, "Run directory written by train")->required()->check(CLI::ExistingDirectory);

    auto* grad = app.add_subcommand("grad-check", "Compare analytic and finite-difference gradients");
    add_common(grad, grad_c, "Output report (JSON)");
    grad->add_option("--seeds", grad_seeds, "Random draws per case");
    grad->add_flag("--inject-fault", inject_fault, "Add a case with a deliberately wrong backward pass");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        if (gen->parsed()) {
            auto cfg = resolve(gen_c);
            if (conversations) cfg.conversations = *conversations;
            if (noise) cfg.synth.noise = *noise;
            if (rho) cfg.synth.rho = *rho;
            return cmd_gen_data(cfg, gen_c.out);
        }
        if (mask->parsed()) {
            auto cfg = resolve(mask_c);
            if (eta_mask) cfg.eta = *eta_mask;
            return cmd_mask(cfg, mask_data, mask_c.out);
        }
        if (train->parsed()) return cmd_train(resolve(train_c), train_data, train_c.out);
        if (test->parsed()) return cmd_test(test_c, test_data, test_model);
        if (sweep->parsed()) {
            auto cfg = resolve(sweep_c);
            if (!sweep_eta.empty()) cfg.sweep.grid = harness::parse_grid(sweep_eta);
            if (sweep_seeds) cfg.sweep.seeds = *sweep_seeds;
            if (sweep_jobs) cfg.sweep.jobs = *sweep_jobs;
            if (!sweep_mode.empty()) cfg.sweep.mode = pipeline::parse_ablation_mode(sweep_mode);
            return cmd_sweep(cfg, sweep_data, sweep_c.out);
        }
        if (ablate->parsed()) {
            auto cfg = resolve(ablate_c);
            if (eta_ablate) cfg.eta = *eta_ablate;
            if (ablate_seeds) cfg.sweep.seeds = *ablate_seeds;
            return cmd_ablate(cfg, ablate_data, ablate_modes, ablate_c.out);
        }
        if (exp->parsed()) return cmd_export(export_c, export_data, export_model);
        if (grad->parsed()) return cmd_grad_check(resolve(grad_c), grad_seeds, inject_fault, grad_c.out);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
