#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "m2r2/data/synthetic.hpp"
#include "m2r2/format.hpp"
#include "m2r2/harness/config.hpp"
#include "m2r2/harness/metrics.hpp"
#include "m2r2/harness/run_dir.hpp"
#include "m2r2/harness/sweep.hpp"
#include "m2r2/random.hpp"

namespace fs = std::filesystem;
using namespace m2r2;
using namespace m2r2::harness;

namespace {

MetricsReport fake_report(double acc) {
    MetricsReport m;
    m.classes = 2;
    m.samples = 10;
    m.support = {5, 5};
    m.per_class_accuracy = {acc, 1.0 / 3.0};
    m.per_class_f1 = {0.5, 0.25};
    m.weighted_accuracy = acc;
    m.weighted_f1 = acc / 2;
    m.confusion = {{5, 0}, {0, 5}};
    return m;
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("m2r2_harness_" + name);
    fs::remove_all(p);
    return p;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string("\"") + M2R2_CLI + "\" " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("three-class metrics by hand") {
    // labels: 0 0 0 1 1 2 ; preds: 0 0 1 1 2 2
    const std::vector<std::size_t> labels{0, 0, 0, 1, 1, 2};
    const std::vector<std::size_t> preds{0, 0, 1, 1, 2, 2};
    const auto r = evaluate(preds, labels, 3);
    CHECK(r.weighted_accuracy == doctest::Approx(4.0 / 6.0));
    // class 0: P 1, R 2/3, F1 0.8 ; class 1: P 1/2, R 1/2, F1 0.5 ; class 2: P 1/2, R 1, F1 2/3
    CHECK(r.per_class_f1[0] == doctest::Approx(0.8));
    CHECK(r.per_class_f1[1] == doctest::Approx(0.5));
    CHECK(r.per_class_f1[2] == doctest::Approx(2.0 / 3.0));
    CHECK(r.weighted_f1 == doctest::Approx((3 * 0.8 + 2 * 0.5 + 1 * 2.0 / 3.0) / 6));
    CHECK(r.per_class_accuracy == std::vector<double>{2.0 / 3.0, 0.5, 1.0});
    CHECK(r.support == std::vector<std::size_t>{3, 2, 1});
    CHECK(r.confusion[0][1] == 1);
    CHECK(r.confusion[1][2] == 1);
}

TEST_CASE("metric edge cases") {
    const std::vector<std::size_t> labels{0, 0, 1};
    const std::vector<std::size_t> all_zero{0, 0, 0};
    const auto f = f1_scores(all_zero, labels, 2);
    CHECK(f.per_class[1] == 0.0);
    CHECK(weighted_accuracy(labels, labels) == 1.0);
    CHECK_THROWS(weighted_accuracy(labels, std::vector<std::size_t>{0}));
    CHECK_THROWS(weighted_accuracy(std::vector<std::size_t>{}, std::vector<std::size_t>{}));
    CHECK_THROWS(evaluate(std::vector<std::size_t>{3}, std::vector<std::size_t>{0}, 2));
}

TEST_CASE("accuracy agrees with a brute-force count") {
    Rng rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = 1 + uniform_index(rng, 50), k = 2 + uniform_index(rng, 4);
        std::vector<std::size_t> preds(n), labels(n);
        std::size_t hits = 0;
        for (std::size_t i = 0; i < n; ++i) {
            preds[i] = uniform_index(rng, k);
            labels[i] = uniform_index(rng, k);
            hits += preds[i] == labels[i];
        }
        const auto r = evaluate(preds, labels, k);
        CHECK(r.weighted_accuracy == doctest::Approx(static_cast<double>(hits) / n));
        // Weighted recall equals accuracy.
        double weighted_recall = 0;
        for (std::size_t c = 0; c < k; ++c) weighted_recall += r.per_class_accuracy[c] * r.support[c] / n;
        CHECK(weighted_recall == doctest::Approx(r.weighted_accuracy));
    }
}

TEST_CASE("metrics json layout") {
    const auto j = to_json(fake_report(0.5), {"calm", "angry"});
    CHECK(j.at("weighted_accuracy").get<double>() == 0.5);
    CHECK(j.at("per_class").size() == 2);
    CHECK(j.contains("confusion"));
}

TEST_CASE("mean and unbiased variance") {
    const std::vector<double> v{2, 4, 4, 4, 5, 5, 7, 9};
    const auto [mean, var] = mean_variance(v);
    CHECK(mean == doctest::Approx(5));
    CHECK(var == doctest::Approx(32.0 / 7.0));
    const std::vector<double> one{3};
    CHECK(mean_variance(one).second == 0.0);
    // Large offsets do not lose the spread.
    const std::vector<double> shifted{1e9 + 1, 1e9 + 2, 1e9 + 3};
    CHECK(mean_variance(shifted).second == doctest::Approx(1.0));
}

TEST_CASE("sweep rows are ordered by eta then seed") {
    const std::vector<double> grid{0.3, 0.0, 0.6};
    const auto seeds = sweep_seeds(10, 3);
    CHECK(seeds == std::vector<std::uint64_t>{10, 11, 12});
    auto run = [](double eta, std::uint64_t seed) {
        // Stagger completion so execution order differs from row order.
        std::this_thread::sleep_for(std::chrono::milliseconds((seed * 7 + static_cast<int>(eta * 10)) % 5));
        return fake_report(eta + seed / 100.0);
    };
    const auto r = sweep(grid, seeds, run, 4, {"calm", "angry"});
    REQUIRE(r.rows.size() == 9);
    for (std::size_t i = 0; i + 1 < r.rows.size(); ++i) {
        const auto& a = r.rows[i];
        const auto& b = r.rows[i + 1];
        CHECK((a.eta < b.eta || (a.eta == b.eta && a.seed < b.seed)));
    }
    REQUIRE(r.summary.size() == 3);
    CHECK(r.summary[0].eta == 0.0);
    CHECK(r.summary[0].runs == 3);
    CHECK(r.summary[0].mean_accuracy == doctest::Approx(0.11));
    CHECK(r.summary[0].variance_accuracy == doctest::Approx(1e-4));
    CHECK(r.all_ok());
}

TEST_CASE("a failing run keeps its row") {
    const std::vector<double> grid{0.1};
    const auto seeds = sweep_seeds(1, 2);
    auto run = [](double eta, std::uint64_t seed) {
        if (seed == 2) throw std::runtime_error("boom");
        return fake_report(eta);
    };
    const auto r = sweep(grid, seeds, run, 1, {"calm", "angry"});
    REQUIRE(r.rows.size() == 2);
    CHECK(r.rows[1].error.find("boom") != std::string::npos);
    CHECK_FALSE(r.all_ok());
    CHECK(r.summary[0].runs == 1);
    std::ostringstream os;
    write_sweep_csv(r, os);
    CHECK(os.str().find("0.1,2,nan,nan") != std::string::npos);
}

TEST_CASE("sweep csv format") {
    const std::vector<double> grid{0.1};
    const std::vector<std::uint64_t> seeds{3};
    const auto r = sweep(grid, seeds, [](double, std::uint64_t) { return fake_report(2.0 / 3.0); }, 1,
                         {"calm", "angry"});
    std::ostringstream os;
    write_sweep_csv(r, os);
    CHECK(os.str() ==
          "eta,seed,weighted_acc,weighted_f1,acc_calm,acc_angry,f1_calm,f1_angry\n"
          "0.1,3,0.666667,0.333333,0.666667,0.333333,0.5,0.25\n");
    std::ostringstream summary;
    write_summary_csv(r, summary);
    CHECK(summary.str() ==
          "eta,runs,mean_weighted_acc,var_weighted_acc,mean_weighted_f1\n"
          "0.1,1,0.666667,0,0.333333\n");
    CHECK(format_g6(123456789.0) == "1.23457e+08");
    CHECK(format_g6(0.000123456789) == "0.000123457");
}

TEST_CASE("grid parsing") {
    CHECK(parse_grid("0.0:0.6:0.1").size() == 7);
    const auto g = parse_grid("0.0:0.6:0.1");
    CHECK(g.back() == doctest::Approx(0.6));
    CHECK(g[3] == doctest::Approx(0.3));
    CHECK(parse_grid("0.2,0.5") == std::vector<double>{0.2, 0.5});
    CHECK(parse_grid("0.4") == std::vector<double>{0.4});
    CHECK_THROWS_AS(parse_grid("0.6:0.0:0.1"), ConfigError);
    CHECK_THROWS_AS(parse_grid("0:1:0"), ConfigError);
    CHECK_THROWS_AS(parse_grid("abc"), ConfigError);
    CHECK_THROWS_AS(parse_grid(""), ConfigError);
}

TEST_CASE("config json round trip and rejection of unknown keys") {
    ExperimentConfig c;
    c.seed = 9;
    c.synth.noise = 1.25;
    c.m2r2.crl.lambda_a = 3;
    c.sweep.grid = {0.1, 0.2};
    const auto back = from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
    CHECK(back.synth.noise == 1.25);
    CHECK(back.m2r2.crl.lambda_a == 3);

    auto j = to_json(c);
    j["typo"] = 1;
    CHECK_THROWS_AS(from_json(j), ConfigError);
    auto nested = to_json(c);
    nested["synth"]["nosie"] = 1.0;
    CHECK_THROWS_AS(from_json(nested), ConfigError);

    // Partial documents overlay the base.
    const auto partial = from_json(nlohmann::ordered_json{{"eta", 0.25}}, c);
    CHECK(partial.eta == 0.25);
    CHECK(partial.synth.noise == 1.25);

    ExperimentConfig bad;
    bad.eta = 0.9;
    CHECK_THROWS(validate(bad));
}

TEST_CASE("seed propagation") {
    ExperimentConfig c;
    c.seed = 42;
    propagate_seed(c);
    CHECK(c.synth.seed != 0);
    CHECK(c.m2r2.seed != 0);
    ExperimentConfig d;
    d.seed = 42;
    propagate_seed(d);
    CHECK(to_json(c) == to_json(d));
}

TEST_CASE("run directory layout") {
    const auto root = scratch("rundir");
    {
        RunDir run(root);
        run.write_json("config.json", {{"a", 1}});
        run.append_iteration({{"iteration", 1}});
        run.append_iteration({{"iteration", 2}});
        run.log("hello");
    }
    CHECK(fs::is_directory(root / "checkpoints"));
    CHECK(read_json(root / "config.json").at("a") == 1);
    std::ifstream in(root / "iterations.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) ++lines;
    CHECK(lines == 2);
    CHECK(fs::exists(root / "run.log"));
    CHECK_THROWS(read_json(root / "missing.json"));
    fs::remove_all(root);
}

TEST_CASE("protocol runs reuse masks for the same eta and seed") {
    ExperimentConfig c;
    c.synth.dims = {3, 3, 2};
    c.synth.min_turns = 4;
    c.synth.max_turns = 5;
    c.m2r2.global_dim = 4;
    c.m2r2.party_dim = 4;
    c.m2r2.emotion_dim = 4;
    c.m2r2.max_iterations = 2;
    c.m2r2.n_e = 1;
    c.m2r2.n_p = 1;
    c.m2r2.crl.h_dim = 3;
    c.m2r2.crl.hidden_width = 8;
    c.m2r2.crl.finetune_epochs = 2;
    propagate_seed(c);
    const auto ds = data::generate_synthetic(c.synth, 12);
    const auto [train_set, test_set] = data::split_dataset(ds, 0.75, 1);
    const auto a = protocol_run(c, train_set, test_set, 0.3, 5, pipeline::AblationMode::no_m2r2);
    const auto b = protocol_run(c, train_set, test_set, 0.3, 5, pipeline::AblationMode::no_m2r2);
    CHECK(a.confusion == b.confusion);
    CHECK(a.samples == test_set.total_turns());
}

TEST_CASE("command-line exit codes") {
    const auto dir = scratch("cli");
    fs::create_directories(dir);
    CHECK(run_cli("") == 2);
    CHECK(run_cli("no-such-command") == 2);
    CHECK(run_cli("gen-data") == 2);
    CHECK(run_cli("gen-data --out " + (dir / "d.jsonl").string() + " --seed notanumber") == 2);
    CHECK(run_cli("mask --out x --data " + (dir / "absent.jsonl").string()) == 2);

    // Validation errors exit with 1.
    const auto cfg = dir / "bad.json";
    std::ofstream(cfg) << R"({"eta": 0.95})";
    CHECK(run_cli("gen-data --out " + (dir / "d.jsonl").string() + " --config " + cfg.string()) == 1);
    std::ofstream(dir / "unknown.json") << R"({"etaa": 0.5})";
    CHECK(run_cli("gen-data --out " + (dir / "d.jsonl").string() + " --config " + (dir / "unknown.json").string()) ==
          1);
    std::ofstream(dir / "broken.jsonl") << "{not json\n";
    CHECK(run_cli("mask --out " + (dir / "m.jsonl").string() + " --data " + (dir / "broken.jsonl").string()) == 1);

    CHECK(run_cli("gen-data --seed 3 --conversations 4 --out " + (dir / "d.jsonl").string()) == 0);
    CHECK(fs::exists(dir / "d.jsonl"));
    CHECK(run_cli("mask --seed 3 --eta 0.4 --data " + (dir / "d.jsonl").string() + " --out " +
                  (dir / "m.jsonl").string()) == 0);
    fs::remove_all(dir);
}
