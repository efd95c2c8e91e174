#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rudra/cluster.hpp"
#include "rudra/dataset.hpp"
#include "rudra/errors.hpp"
#include "rudra/model.hpp"
#include "rudra/protocol.hpp"
#include "rudra/runlog.hpp"

namespace rudra {

/// Base learning rate at which an unmodulated 16-softsync run on the default
/// synthetic benchmark sits at the edge of stability: alpha0 as-is diverges,
/// alpha0/n trains. Used by the lr-ab experiment as its documented default.
inline constexpr double kStabilityEdgeAlpha0 = 1.6;

struct ExperimentConfig {
    SyncPolicy policy = SyncPolicy::hardsync();
    std::uint32_t lambda = 1;
    std::uint32_t mu = 8;
    double alpha0 = 0.05;
    std::uint32_t ref_batch = 8;  // B
    LrMode lr_mode = LrMode::Unmodulated;
    double momentum = 0.0;
    double weight_decay = 0.0;
    std::uint32_t epochs = 2;
    std::vector<std::uint64_t> seeds = {1};
    ModelSpec model = ModelSpec({32, 16, 10});
    SyntheticSpec dataset;
    ScheduleMode mode = ScheduleMode::VirtualTime;
    Arch arch = Arch::Base;
    std::uint32_t tree_leaves = 1;
    SamplingMode sampling = SamplingMode::Independent;
    TimingModel timing;
    std::uint64_t max_updates = 0;
    std::string out_dir = ".";

    ClusterConfig to_cluster(std::uint64_t seed) const {
        ClusterConfig c;
        c.lambda = lambda;
        c.mu = mu;
        c.policy = policy;
        c.lr = LearningRatePolicy{alpha0, ref_batch, lr_mode};
        c.momentum = momentum;
        c.weight_decay = weight_decay;
        c.arch = arch;
        c.tree_leaves = tree_leaves;
        c.mode = mode;
        c.sampling = sampling;
        c.epochs = epochs;
        c.seed = seed;
        c.timing = timing;
        c.max_updates = max_updates;
        return c;
    }

    void validate() const {
        if (seeds.empty()) throw ConfigError("experiment: need at least one seed");
        to_cluster(seeds.front()).validate();
        if (model.input_size() != dataset.dim ||
            model.output_size() != dataset.classes)
            throw ConfigError("experiment: model shape does not match the dataset spec");
    }
};

// ---------------------------------------------------------------------------
// Generic CSV plumbing. Every table the harness emits can be read back by
// read_csv_table and re-serialized to identical bytes.

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

inline CsvTable read_csv_table(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path + ": cannot open");
    CsvTable t;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) fields.push_back(cell);
        if (!line.empty() && line.back() == ',') fields.push_back("");
        if (lineno == 1) {
            t.header = std::move(fields);
        } else {
            if (fields.size() != t.header.size())
                throw ParseError(path + ":" + std::to_string(lineno) + ": expected " +
                                 std::to_string(t.header.size()) + " fields, got " +
                                 std::to_string(fields.size()));
            t.rows.push_back(std::move(fields));
        }
    }
    if (t.header.empty()) throw ParseError(path + ": missing header");
    return t;
}

inline void write_csv_table(const CsvTable& t, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ParseError(path + ": cannot write");
    auto emit = [&](const std::vector<std::string>& fields) {
        for (std::size_t i = 0; i < fields.size(); ++i) {
            if (i) out << ',';
            out << fields[i];
        }
        out << '\n';
    };
    emit(t.header);
    for (const auto& r : t.rows) emit(r);
}

// ---------------------------------------------------------------------------
// Tradeoff sweep

struct TradeoffRow {
    SyncPolicy policy;
    std::uint32_t lambda = 0;
    std::uint32_t mu = 0;
    std::uint64_t seed = 0;
    double measured_mean_staleness = 0.0;
    double final_test_error = 0.0;
    double total_time = 0.0;
    std::uint64_t updates = 0;
};

struct SweepFailure {
    SyncPolicy policy;
    std::uint32_t lambda = 0;
    std::uint32_t mu = 0;
    std::uint64_t seed = 0;
    std::string error;
};

struct SweepResult {
    std::vector<TradeoffRow> rows;
    std::vector<SweepFailure> failures;
};

/// One run per (lambda, mu, policy, seed) grid cell. A failing cell is
/// recorded and the sweep continues.
inline SweepResult sweep_tradeoff(const std::vector<std::uint32_t>& lambdas,
                                  const std::vector<std::uint32_t>& mus,
                                  const std::vector<SyncPolicy>& policies,
                                  const ExperimentConfig& base) {
    if (lambdas.empty() || mus.empty() || policies.empty())
        throw ConfigError("sweep: grid must be nonempty");
    const auto [train, test] = generate_synthetic(base.dataset);
    SweepResult result;
    for (std::uint32_t lambda : lambdas)
        for (std::uint32_t mu : mus)
            for (const SyncPolicy& policy : policies)
                for (std::uint64_t seed : base.seeds) {
                    ExperimentConfig cfg = base;
                    cfg.lambda = lambda;
                    cfg.mu = mu;
                    cfg.policy = policy;
                    try {
                        const RunResult r =
                            run_cluster(cfg.to_cluster(seed), cfg.model, train, test);
                        TradeoffRow row;
                        row.policy = policy;
                        row.lambda = lambda;
                        row.mu = mu;
                        row.seed = seed;
                        row.measured_mean_staleness = r.log.staleness.run_mean();
                        row.final_test_error = r.log.final_test_error;
                        row.total_time = r.log.total_time;
                        row.updates = r.log.updates_applied;
                        result.rows.push_back(row);
                    } catch (const std::exception& e) {
                        result.failures.push_back(
                            SweepFailure{policy, lambda, mu, seed, e.what()});
                    }
                }
    return result;
}

inline void write_tradeoff_csv(const SweepResult& result, const std::string& path) {
    CsvTable t;
    t.header = {"policy", "n", "lambda", "mu", "seed", "measured_mean_staleness",
                "final_test_error", "total_time", "updates"};
    for (const auto& r : result.rows)
        t.rows.push_back({to_string(r.policy.kind), std::to_string(r.policy.n),
                          std::to_string(r.lambda), std::to_string(r.mu),
                          std::to_string(r.seed), format_double(r.measured_mean_staleness),
                          format_double(r.final_test_error), format_double(r.total_time),
                          std::to_string(r.updates)});
    write_csv_table(t, path);
}

inline void write_sweep_failures_csv(const SweepResult& result, const std::string& path) {
    CsvTable t;
    t.header = {"policy", "n", "lambda", "mu", "seed", "error"};
    for (const auto& f : result.failures) {
        std::string msg = f.error;
        for (auto& ch : msg)
            if (ch == ',' || ch == '\n') ch = ';';
        t.rows.push_back({to_string(f.policy.kind), std::to_string(f.policy.n),
                          std::to_string(f.lambda), std::to_string(f.mu),
                          std::to_string(f.seed), msg});
    }
    write_csv_table(t, path);
}

// ---------------------------------------------------------------------------
// mu-lambda constant-product suite

struct MuLambdaRow {
    std::uint64_t product = 0;
    SyncPolicy policy;
    std::uint32_t lambda = 0;
    std::uint32_t mu = 0;
    std::uint64_t seed = 0;
    double final_test_error = 0.0;
    double total_time = 0.0;
};

struct MuLambdaReport {
    std::vector<MuLambdaRow> rows;
    // hardsync: largest pairwise final-weight L-inf distance per product,
    // over configs sharing the product under controlled sampling
    std::map<std::uint64_t, double> hardsync_max_weight_delta;
    // per product: mean final error over all runs, spread of per-config
    // means, and mean per-config standard deviation across seeds
    std::map<std::uint64_t, double> group_mean_error;
    std::map<std::uint64_t, double> group_config_spread;
    std::map<std::uint64_t, double> group_seed_std;
};

/// Runs each (mu, lambda) pair for every seed; groups results by the
/// product mu*lambda. Hardsync additionally switches to the controlled
/// shared sample stream and measures final-weight distances within groups.
inline MuLambdaReport mu_lambda_suite(
    const std::vector<std::pair<std::uint32_t, std::uint32_t>>& mu_lambda_pairs,
    const ExperimentConfig& base) {
    if (mu_lambda_pairs.empty()) throw ConfigError("mu-lambda: need at least one pair");
    const auto [train, test] = generate_synthetic(base.dataset);
    const bool hardsync = base.policy.kind == SyncKind::Hardsync;

    MuLambdaReport report;
    // product -> config index -> per-seed errors
    std::map<std::uint64_t, std::vector<std::vector<double>>> errors;
    std::map<std::uint64_t, std::vector<Vector>> finals;

    for (const auto& [mu, lambda] : mu_lambda_pairs) {
        const std::uint64_t product = static_cast<std::uint64_t>(mu) * lambda;
        std::vector<double> config_errors;
        for (std::uint64_t seed : base.seeds) {
            ExperimentConfig cfg = base;
            cfg.mu = mu;
            cfg.lambda = lambda;
            if (hardsync) cfg.sampling = SamplingMode::SharedStream;
            const RunResult r = run_cluster(cfg.to_cluster(seed), cfg.model, train, test);
            MuLambdaRow row;
            row.product = product;
            row.policy = cfg.policy;
            row.lambda = lambda;
            row.mu = mu;
            row.seed = seed;
            row.final_test_error = r.log.final_test_error;
            row.total_time = r.log.total_time;
            report.rows.push_back(row);
            config_errors.push_back(r.log.final_test_error);
            if (hardsync && seed == base.seeds.front())
                finals[product].push_back(r.final_weights.weights.values);
        }
        errors[product].push_back(std::move(config_errors));
    }

    for (const auto& [product, group] : finals) {
        double worst = 0.0;
        for (std::size_t a = 0; a < group.size(); ++a)
            for (std::size_t b = a + 1; b < group.size(); ++b) {
                if (group[a].size() != group[b].size())
                    throw ShapeError("mu-lambda: weight vectors differ in length");
                for (std::size_t i = 0; i < group[a].size(); ++i)
                    worst = std::max(worst, std::abs(group[a][i] - group[b][i]));
            }
        report.hardsync_max_weight_delta[product] = worst;
    }

    for (const auto& [product, configs] : errors) {
        double total = 0.0;
        std::size_t count = 0;
        std::vector<double> config_means;
        double std_sum = 0.0;
        for (const auto& seeds_errs : configs) {
            double mean = 0.0;
            for (double e : seeds_errs) mean += e;
            mean /= static_cast<double>(seeds_errs.size());
            config_means.push_back(mean);
            double var = 0.0;
            for (double e : seeds_errs) var += (e - mean) * (e - mean);
            if (seeds_errs.size() > 1) var /= static_cast<double>(seeds_errs.size() - 1);
            std_sum += std::sqrt(var);
            total += mean * static_cast<double>(seeds_errs.size());
            count += seeds_errs.size();
        }
        report.group_mean_error[product] = total / static_cast<double>(count);
        const auto [lo, hi] = std::minmax_element(config_means.begin(), config_means.end());
        report.group_config_spread[product] = *hi - *lo;
        report.group_seed_std[product] = std_sum / static_cast<double>(configs.size());
    }
    return report;
}

inline void write_mu_lambda_csv(const MuLambdaReport& report, const std::string& path) {
    CsvTable t;
    t.header = {"product", "policy", "n", "lambda", "mu", "seed", "final_test_error",
                "total_time"};
    for (const auto& r : report.rows)
        t.rows.push_back({std::to_string(r.product), to_string(r.policy.kind),
                          std::to_string(r.policy.n), std::to_string(r.lambda),
                          std::to_string(r.mu), std::to_string(r.seed),
                          format_double(r.final_test_error), format_double(r.total_time)});
    write_csv_table(t, path);
}

// ---------------------------------------------------------------------------
// Learning-rate modulation A/B

struct LrAbRow {
    std::uint32_t n = 0;
    std::uint64_t seed = 0;
    LrMode mode = LrMode::Unmodulated;
    double final_test_error = 0.0;
    bool diverged = false;
};

/// Two runs per seed under n-softsync, identical except for the learning
/// rate mode: alpha0/n against plain alpha0.
inline std::vector<LrAbRow> lr_modulation_ab(const ExperimentConfig& base, std::uint32_t n) {
    if (base.policy.kind != SyncKind::Softsync || base.policy.n != n)
        throw ConfigError("lr-ab: config must use n-softsync with the tested n");
    const auto [train, test] = generate_synthetic(base.dataset);
    std::vector<LrAbRow> rows;
    for (std::uint64_t seed : base.seeds)
        for (LrMode mode : {LrMode::StalenessModulated, LrMode::Unmodulated}) {
            ExperimentConfig cfg = base;
            cfg.lr_mode = mode;
            const RunResult r = run_cluster(cfg.to_cluster(seed), cfg.model, train, test);
            rows.push_back(LrAbRow{n, seed, mode, r.log.final_test_error, r.log.diverged});
        }
    return rows;
}

inline void write_lr_ab_csv(const std::vector<LrAbRow>& rows, const std::string& path) {
    CsvTable t;
    t.header = {"n", "seed", "mode", "final_test_error", "diverged"};
    for (const auto& r : rows)
        t.rows.push_back({std::to_string(r.n), std::to_string(r.seed), to_string(r.mode),
                          format_double(r.final_test_error), r.diverged ? "1" : "0"});
    write_csv_table(t, path);
}

// ---------------------------------------------------------------------------
// Staleness histogram export

inline void write_staleness_histogram_csv(const StalenessStats& stats,
                                          const std::string& path) {
    CsvTable t;
    t.header = {"sigma", "count"};
    for (const auto& [sigma, count] : stats.histogram())
        t.rows.push_back({std::to_string(sigma), std::to_string(count)});
    write_csv_table(t, path);
}

// ---------------------------------------------------------------------------
// Config files: `key = value` lines, '#' comments, keys mirror CLI flags.

inline std::map<std::string, std::string> parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path + ": cannot open");
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t lineno = 0;
    auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        const auto b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError(path + ":" + std::to_string(lineno) +
                             ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ParseError(path + ":" + std::to_string(lineno) + ": empty key");
        kv[key] = value;
    }
    return kv;
}

}  // namespace rudra
