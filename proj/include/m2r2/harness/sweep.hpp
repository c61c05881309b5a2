#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "m2r2/data/dataset.hpp"
#include "m2r2/harness/config.hpp"
#include "m2r2/harness/metrics.hpp"

namespace m2r2::harness {

struct SweepRow {
    double eta = 0;
    std::uint64_t seed = 0;
    std::optional<MetricsReport> metrics;
    /// Set when the run failed; the row is kept with empty metrics.
    std::string error;
};

struct SweepSummary {
    double eta = 0;
    std::size_t runs = 0;
    double mean_accuracy = 0;
    /// Unbiased (n - 1) sample variance; 0 for a single run.
    double variance_accuracy = 0;
    double mean_f1 = 0;
};

struct SweepResult {
    std::vector<std::string> class_names;
    std::vector<SweepRow> rows;
    std::vector<SweepSummary> summary;
    bool all_ok() const;
};

/// Two-pass mean and unbiased variance.
std::pair<double, double> mean_variance(std::span<const double> values);

using RunFn = std::function<MetricsReport(double eta, std::uint64_t seed)>;

/// Runs every (eta, seed) pair, up to `jobs` at a time. Rows are ordered by
/// eta, then seed, whatever the execution order.
SweepResult sweep(std::span<const double> grid, std::span<const std::uint64_t> seeds, const RunFn& run,
                  std::size_t jobs, std::vector<std::string> class_names);

/// Seeds used by a sweep: master, master + 1, ...
std::vector<std::uint64_t> sweep_seeds(std::uint64_t master, std::size_t count);

/// One protocol run: fresh masks for both parts from `seed`, then the chosen
/// pipeline mode. The same (eta, seed) always yields the same masks.
MetricsReport protocol_run(const ExperimentConfig& config, const data::Dataset& train_set,
                           const data::Dataset& test_set, double eta, std::uint64_t seed,
                           pipeline::AblationMode mode);

/// Header: eta,seed,weighted_acc,weighted_f1,acc_<class>...,f1_<class>...
void write_sweep_csv(const SweepResult& result, std::ostream& out);
/// Header: eta,runs,mean_weighted_acc,var_weighted_acc,mean_weighted_f1
void write_summary_csv(const SweepResult& result, std::ostream& out);

}  // namespace m2r2::harness
