#include "m2r2/harness/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <ostream>
#include <thread>

#include "m2r2/data/mask.hpp"
#include "m2r2/format.hpp"
#include "m2r2/random.hpp"

namespace m2r2::harness {

namespace {

constexpr std::uint64_t kTrainMaskStream = 21;
constexpr std::uint64_t kTestMaskStream = 22;

}  // namespace

bool SweepResult::all_ok() const {
    for (const auto& r : rows)
        if (!r.metrics) return false;
    return true;
}

std::pair<double, double> mean_variance(std::span<const double> values) {
    if (values.empty()) throw std::invalid_argument("mean_variance: empty input");
    double mean = 0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    if (values.size() == 1) return {mean, 0.0};
    double ss = 0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return {mean, ss / static_cast<double>(values.size() - 1)};
}

std::vector<std::uint64_t> sweep_seeds(std::uint64_t master, std::size_t count) {
    std::vector<std::uint64_t> out;
    for (std::size_t i = 0; i < count; ++i) out.push_back(master + i);
    return out;
}

SweepResult sweep(std::span<const double> grid, std::span<const std::uint64_t> seeds, const RunFn& run,
                  std::size_t jobs, std::vector<std::string> class_names) {
    if (grid.empty() || seeds.empty()) throw std::invalid_argument("sweep: empty grid or seed list");
    std::vector<double> etas(grid.begin(), grid.end());
    std::vector<std::uint64_t> seed_list(seeds.begin(), seeds.end());
    std::sort(etas.begin(), etas.end());
    std::sort(seed_list.begin(), seed_list.end());
    if (std::adjacent_find(etas.begin(), etas.end()) != etas.end() ||
        std::adjacent_find(seed_list.begin(), seed_list.end()) != seed_list.end())
        throw std::invalid_argument("sweep: repeated missing rate or seed");
    SweepResult result;
    result.class_names = std::move(class_names);
    for (double eta : etas)
        for (auto seed : seed_list) result.rows.push_back({eta, seed, std::nullopt, {}});

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < result.rows.size(); i = next++) {
            auto& row = result.rows[i];
            try {
                row.metrics = run(row.eta, row.seed);
            } catch (const std::exception& e) {
                row.error = e.what();
            }
        }
    };
    const std::size_t n = std::max<std::size_t>(1, std::min(jobs, result.rows.size()));
    if (n == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t i = 0; i < n; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    for (double eta : etas) {
        std::vector<double> acc, f1;
        for (const auto& r : result.rows)
            if (r.eta == eta && r.metrics) {
                acc.push_back(r.metrics->weighted_accuracy);
                f1.push_back(r.metrics->weighted_f1);
            }
        SweepSummary s;
        s.eta = eta;
        s.runs = acc.size();
        if (!acc.empty()) {
            std::tie(s.mean_accuracy, s.variance_accuracy) = mean_variance(acc);
            s.mean_f1 = mean_variance(f1).first;
        }
        result.summary.push_back(s);
    }
    return result;
}

MetricsReport protocol_run(const ExperimentConfig& config, const data::Dataset& train_set,
                           const data::Dataset& test_set, double eta, std::uint64_t seed,
                           pipeline::AblationMode mode) {
    const auto train_masks = data::generate_mask(train_set, eta, derive_seed(seed, kTrainMaskStream));
    const auto test_masks = data::generate_mask(test_set, eta, derive_seed(seed, kTestMaskStream));
    auto m2r2 = config.m2r2;
    m2r2.seed = seed;
    return pipeline::ablation_run(mode, train_set, train_masks, test_set, test_masks, m2r2, config.val_ratio).metrics;
}

void write_sweep_csv(const SweepResult& result, std::ostream& out) {
    out << "eta,seed,weighted_acc,weighted_f1";
    for (const auto& c : result.class_names) out << ",acc_" << c;
    for (const auto& c : result.class_names) out << ",f1_" << c;
    out << '\n';
    const std::size_t k = result.class_names.size();
    for (const auto& r : result.rows) {
        out << format_g6(r.eta) << ',' << r.seed;
        if (!r.metrics) {
            for (std::size_t i = 0; i < 2 + 2 * k; ++i) out << ",nan";
            out << '\n';
            continue;
        }
        const auto& m = *r.metrics;
        out << ',' << format_g6(m.weighted_accuracy) << ',' << format_g6(m.weighted_f1);
        for (std::size_t c = 0; c < k; ++c) out << ',' << format_g6(c < m.classes ? m.per_class_accuracy[c] : 0.0);
        for (std::size_t c = 0; c < k; ++c) out << ',' << format_g6(c < m.classes ? m.per_class_f1[c] : 0.0);
        out << '\n';
    }
}

void write_summary_csv(const SweepResult& result, std::ostream& out) {
    out << "eta,runs,mean_weighted_acc,var_weighted_acc,mean_weighted_f1\n";
    for (const auto& s : result.summary)
        out << format_g6(s.eta) << ',' << s.runs << ',' << format_g6(s.mean_accuracy) << ','
            << format_g6(s.variance_accuracy) << ',' << format_g6(s.mean_f1) << '\n';
}

}  // namespace m2r2::harness
