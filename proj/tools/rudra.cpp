// Command-line front end: single runs, sweeps, mu-lambda suites, LR A/B
// comparisons, staleness histograms. Exit codes: 0 success, 1 runtime
// failure, 2 usage error.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rudra/checkpoint.hpp"
#include "rudra/cluster.hpp"
#include "rudra/dataset.hpp"
#include "rudra/harness.hpp"

namespace {

using namespace rudra;

struct CliOptions {
    std::string protocol = "hardsync";
    std::uint32_t n = 1;
    std::uint32_t learners = 1;
    std::uint32_t batch = 8;
    double alpha0 = 0.05;
    std::uint32_t ref_batch = 8;
    std::string lr_mode = "unmodulated";
    std::uint32_t epochs = 2;
    std::uint64_t seed = 1;
    std::string seeds;  // comma list, overrides seed when present
    std::string arch = "base";
    std::string mode = "virtual";
    std::string out = ".";
    std::string config_path;
    double momentum = 0.0;
    double weight_decay = 0.0;
    std::uint32_t tree_leaves = 0;  // 0 = one leaf per learner
    std::string hidden = "16";
    std::uint32_t classes = 10;
    std::uint32_t dim = 32;
    std::uint32_t train_per_class = 500;
    std::uint32_t test_per_class = 100;
    double separation = 2.5;
    double label_noise = 0.0;
    std::string sampling = "independent";
    double compute_base = 1.0;
    double compute_jitter = 0.05;
    double link_latency = 0.001;
    double link_jitter = 0.0;
    double service = 0.01;
    std::uint32_t straggler_count = 0;
    double straggler_factor = 1.0;
    std::uint64_t max_updates = 0;
    std::string lambdas;  // sweep grid, comma list
    std::string mus;      // sweep grid, comma list
    std::string pairs;    // mu-lambda list like 8x1,4x2
    std::set<std::string> from_config;

    bool given(CLI::App* sub, const std::string& key) const {
        return sub->count("--" + key) > 0 || from_config.count(key) > 0;
    }
};

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(item);
    return out;
}

std::uint64_t parse_u64(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(s, &used);
        if (used != s.size()) throw std::invalid_argument("trailing junk");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(what + ": bad number '" + s + "'");
    }
}

double parse_f64(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument("trailing junk");
        return v;
    } catch (const std::exception&) {
        throw ConfigError(what + ": bad number '" + s + "'");
    }
}

/// Config file keys mirror the long flag names; command-line flags win.
void apply_config_file(const std::string& path, CLI::App* sub, CliOptions& o) {
    const auto kv = parse_config_file(path);
    using Setter = std::function<void(const std::string&)>;
    const std::map<std::string, Setter> setters = {
        {"protocol", [&](const std::string& v) { o.protocol = v; }},
        {"n", [&](const std::string& v) { o.n = static_cast<std::uint32_t>(parse_u64(v, "n")); }},
        {"learners", [&](const std::string& v) { o.learners = static_cast<std::uint32_t>(parse_u64(v, "learners")); }},
        {"batch", [&](const std::string& v) { o.batch = static_cast<std::uint32_t>(parse_u64(v, "batch")); }},
        {"alpha0", [&](const std::string& v) { o.alpha0 = parse_f64(v, "alpha0"); }},
        {"ref-batch", [&](const std::string& v) { o.ref_batch = static_cast<std::uint32_t>(parse_u64(v, "ref-batch")); }},
        {"lr-mode", [&](const std::string& v) { o.lr_mode = v; }},
        {"epochs", [&](const std::string& v) { o.epochs = static_cast<std::uint32_t>(parse_u64(v, "epochs")); }},
        {"seed", [&](const std::string& v) { o.seed = parse_u64(v, "seed"); }},
        {"seeds", [&](const std::string& v) { o.seeds = v; }},
        {"arch", [&](const std::string& v) { o.arch = v; }},
        {"mode", [&](const std::string& v) { o.mode = v; }},
        {"out", [&](const std::string& v) { o.out = v; }},
        {"momentum", [&](const std::string& v) { o.momentum = parse_f64(v, "momentum"); }},
        {"weight-decay", [&](const std::string& v) { o.weight_decay = parse_f64(v, "weight-decay"); }},
        {"tree-leaves", [&](const std::string& v) { o.tree_leaves = static_cast<std::uint32_t>(parse_u64(v, "tree-leaves")); }},
        {"hidden", [&](const std::string& v) { o.hidden = v; }},
        {"classes", [&](const std::string& v) { o.classes = static_cast<std::uint32_t>(parse_u64(v, "classes")); }},
        {"dim", [&](const std::string& v) { o.dim = static_cast<std::uint32_t>(parse_u64(v, "dim")); }},
        {"train-per-class", [&](const std::string& v) { o.train_per_class = static_cast<std::uint32_t>(parse_u64(v, "train-per-class")); }},
        {"test-per-class", [&](const std::string& v) { o.test_per_class = static_cast<std::uint32_t>(parse_u64(v, "test-per-class")); }},
        {"separation", [&](const std::string& v) { o.separation = parse_f64(v, "separation"); }},
        {"label-noise", [&](const std::string& v) { o.label_noise = parse_f64(v, "label-noise"); }},
        {"sampling", [&](const std::string& v) { o.sampling = v; }},
        {"compute-base", [&](const std::string& v) { o.compute_base = parse_f64(v, "compute-base"); }},
        {"compute-jitter", [&](const std::string& v) { o.compute_jitter = parse_f64(v, "compute-jitter"); }},
        {"link-latency", [&](const std::string& v) { o.link_latency = parse_f64(v, "link-latency"); }},
        {"link-jitter", [&](const std::string& v) { o.link_jitter = parse_f64(v, "link-jitter"); }},
        {"service", [&](const std::string& v) { o.service = parse_f64(v, "service"); }},
        {"straggler-count", [&](const std::string& v) { o.straggler_count = static_cast<std::uint32_t>(parse_u64(v, "straggler-count")); }},
        {"straggler-factor", [&](const std::string& v) { o.straggler_factor = parse_f64(v, "straggler-factor"); }},
        {"max-updates", [&](const std::string& v) { o.max_updates = parse_u64(v, "max-updates"); }},
        {"lambdas", [&](const std::string& v) { o.lambdas = v; }},
        {"mus", [&](const std::string& v) { o.mus = v; }},
        {"pairs", [&](const std::string& v) { o.pairs = v; }},
    };
    for (const auto& [key, value] : kv) {
        const auto it = setters.find(key);
        if (it == setters.end()) throw ConfigError(path + ": unknown config key '" + key + "'");
        const std::string flag = "--" + key;
        if (sub->count(flag) > 0) continue;  // explicit flag wins
        it->second(value);
        o.from_config.insert(key);
    }
}

ExperimentConfig build_experiment(CLI::App* sub, CliOptions& o) {
    ExperimentConfig cfg;
    if (o.protocol == "hardsync") {
        if (o.given(sub, "n"))
            throw ConfigError("hardsync takes no splitting parameter; drop --n");
        cfg.policy = SyncPolicy::hardsync();
    } else if (o.protocol == "softsync") {
        if (!o.given(sub, "n"))
            std::cerr << "softsync: --n not given, defaulting to n=1\n";
        cfg.policy = SyncPolicy::softsync(o.n);
    } else if (o.protocol == "async") {
        if (o.given(sub, "n"))
            throw ConfigError("async takes no splitting parameter (it is n = lambda); drop --n");
        // async is n-softsync at n = lambda; normalize so outputs coincide
        cfg.policy = SyncPolicy::softsync(o.learners);
    } else {
        throw ConfigError("protocol must be hardsync, softsync, or async");
    }

    cfg.lambda = o.learners;
    cfg.mu = o.batch;
    cfg.alpha0 = o.alpha0;
    cfg.ref_batch = o.ref_batch;
    if (o.lr_mode == "rescale") cfg.lr_mode = LrMode::HardsyncRescale;
    else if (o.lr_mode == "modulated") cfg.lr_mode = LrMode::StalenessModulated;
    else if (o.lr_mode == "unmodulated") cfg.lr_mode = LrMode::Unmodulated;
    else throw ConfigError("lr-mode must be rescale, modulated, or unmodulated");
    cfg.momentum = o.momentum;
    cfg.weight_decay = o.weight_decay;
    cfg.epochs = o.epochs;

    cfg.seeds = {o.seed};
    if (!o.seeds.empty()) {
        cfg.seeds.clear();
        for (const auto& s : split(o.seeds, ','))
            if (!s.empty()) cfg.seeds.push_back(parse_u64(s, "seeds"));
        if (cfg.seeds.empty()) throw ConfigError("seeds: empty list");
    }

    if (o.arch == "base") cfg.arch = Arch::Base;
    else if (o.arch == "adv") cfg.arch = Arch::Adv;
    else if (o.arch == "advstar") cfg.arch = Arch::AdvStar;
    else throw ConfigError("arch must be base, adv, or advstar");
    cfg.tree_leaves = o.tree_leaves == 0 ? o.learners : o.tree_leaves;

    if (o.mode == "virtual") cfg.mode = ScheduleMode::VirtualTime;
    else if (o.mode == "threads") cfg.mode = ScheduleMode::Threads;
    else throw ConfigError("mode must be virtual or threads");

    if (o.sampling == "independent") cfg.sampling = SamplingMode::Independent;
    else if (o.sampling == "shared") cfg.sampling = SamplingMode::SharedStream;
    else throw ConfigError("sampling must be independent or shared");

    cfg.dataset.classes = o.classes;
    cfg.dataset.dim = o.dim;
    cfg.dataset.train_per_class = o.train_per_class;
    cfg.dataset.test_per_class = o.test_per_class;
    cfg.dataset.separation = o.separation;
    cfg.dataset.label_noise = o.label_noise;
    cfg.dataset.seed = o.seed;

    std::vector<std::size_t> sizes = {o.dim};
    for (const auto& h : split(o.hidden, ','))
        if (!h.empty()) sizes.push_back(parse_u64(h, "hidden"));
    sizes.push_back(o.classes);
    cfg.model = ModelSpec(sizes);

    cfg.timing.compute_base = o.compute_base;
    cfg.timing.compute_jitter = o.compute_jitter;
    cfg.timing.link_latency = o.link_latency;
    cfg.timing.link_jitter = o.link_jitter;
    cfg.timing.server_service = o.service;
    cfg.timing.straggler_count = o.straggler_count;
    cfg.timing.straggler_factor = o.straggler_factor;
    cfg.max_updates = o.max_updates;
    cfg.out_dir = o.out;

    cfg.validate();
    return cfg;
}

void add_common_options(CLI::App* sub, CliOptions& o) {
    sub->add_option("--protocol", o.protocol, "hardsync, softsync, or async");
    sub->add_option("--n", o.n, "softsync splitting parameter (1 <= n <= learners)");
    sub->add_option("--learners", o.learners, "learner count (lambda)");
    sub->add_option("--batch", o.batch, "per-learner minibatch size (mu)");
    sub->add_option("--alpha0", o.alpha0, "base learning rate");
    sub->add_option("--ref-batch", o.ref_batch, "reference batch B for the rescale rule");
    sub->add_option("--lr-mode", o.lr_mode, "rescale, modulated, or unmodulated");
    sub->add_option("--epochs", o.epochs, "training epochs");
    sub->add_option("--seed", o.seed, "run seed");
    sub->add_option("--seeds", o.seeds, "comma list of seeds (overrides --seed)");
    sub->add_option("--arch", o.arch, "base, adv, or advstar");
    sub->add_option("--mode", o.mode, "virtual or threads");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--config", o.config_path, "key = value config file; flags override");
    sub->add_option("--momentum", o.momentum, "momentum coefficient");
    sub->add_option("--weight-decay", o.weight_decay, "L2 weight decay");
    sub->add_option("--tree-leaves", o.tree_leaves, "PS tree leaf count (0 = per learner)");
    sub->add_option("--hidden", o.hidden, "comma list of hidden layer sizes");
    sub->add_option("--classes", o.classes, "synthetic classes");
    sub->add_option("--dim", o.dim, "synthetic feature dimension");
    sub->add_option("--train-per-class", o.train_per_class, "train samples per class");
    sub->add_option("--test-per-class", o.test_per_class, "test samples per class");
    sub->add_option("--separation", o.separation, "synthetic cluster separation");
    sub->add_option("--label-noise", o.label_noise, "label noise fraction");
    sub->add_option("--sampling", o.sampling, "independent or shared");
    sub->add_option("--compute-base", o.compute_base, "virtual compute time per batch");
    sub->add_option("--compute-jitter", o.compute_jitter, "compute time jitter fraction");
    sub->add_option("--link-latency", o.link_latency, "virtual one-way link latency");
    sub->add_option("--link-jitter", o.link_jitter, "link latency jitter fraction");
    sub->add_option("--service", o.service, "per-message service time at PS nodes");
    sub->add_option("--straggler-count", o.straggler_count, "slow learner count");
    sub->add_option("--straggler-factor", o.straggler_factor, "slow learner multiplier");
    sub->add_option("--max-updates", o.max_updates, "stop after this many updates (0 = off)");
}

std::filesystem::path ensure_out_dir(const ExperimentConfig& cfg) {
    std::filesystem::path dir(cfg.out_dir);
    std::filesystem::create_directories(dir);
    return dir;
}

int cmd_train(CLI::App* sub, CliOptions& o, bool with_histogram) {
    ExperimentConfig cfg = build_experiment(sub, o);
    const auto dir = ensure_out_dir(cfg);
    const auto [train, test] = generate_synthetic(cfg.dataset);
    const RunResult r = run_cluster(cfg.to_cluster(cfg.seeds.front()), cfg.model, train, test);
    r.log.write_epochs_csv((dir / "epochs.csv").string());
    r.log.write_staleness_csv((dir / "staleness.csv").string());
    r.log.write_timing_csv((dir / "timing.csv").string());
    if (with_histogram)
        write_staleness_histogram_csv(r.log.staleness, (dir / "staleness_hist.csv").string());
    save_checkpoint((dir / "final.ckpt").string(), r.final_weights);
    std::cout << "updates=" << r.log.updates_applied
              << " gradients=" << r.log.gradients_consumed
              << " mean_staleness=" << format_double(r.log.staleness.run_mean())
              << " train_error=" << format_double(r.log.final_train_error)
              << " test_error=" << format_double(r.log.final_test_error)
              << " time=" << format_double(r.log.total_time)
              << (r.log.diverged ? " DIVERGED" : "") << "\n";
    return 0;
}

int cmd_sweep(CLI::App* sub, CliOptions& o) {
    std::vector<std::uint32_t> lambdas, mus;
    for (const auto& s : split(o.lambdas.empty() ? std::to_string(o.learners) : o.lambdas, ','))
        if (!s.empty()) lambdas.push_back(static_cast<std::uint32_t>(parse_u64(s, "lambdas")));
    for (const auto& s : split(o.mus.empty() ? std::to_string(o.batch) : o.mus, ','))
        if (!s.empty()) mus.push_back(static_cast<std::uint32_t>(parse_u64(s, "mus")));
    if (lambdas.empty() || mus.empty()) throw ConfigError("sweep: grid must be nonempty");
    // the base config is validated per grid cell, not at the defaults
    o.learners = *std::max_element(lambdas.begin(), lambdas.end());
    o.batch = mus.front();
    ExperimentConfig cfg = build_experiment(sub, o);
    const auto dir = ensure_out_dir(cfg);
    const SweepResult result = sweep_tradeoff(lambdas, mus, {cfg.policy}, cfg);
    write_tradeoff_csv(result, (dir / "tradeoff.csv").string());
    if (!result.failures.empty())
        write_sweep_failures_csv(result, (dir / "tradeoff_failures.csv").string());
    std::cout << "rows=" << result.rows.size() << " failures=" << result.failures.size()
              << "\n";
    return 0;
}

int cmd_mu_lambda(CLI::App* sub, CliOptions& o) {
    std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
    const std::string spec = o.pairs.empty() ? "8x1,4x2" : o.pairs;
    for (const auto& p : split(spec, ',')) {
        const auto parts = split(p, 'x');
        if (parts.size() != 2)
            throw ConfigError("pairs: expected MUxLAMBDA entries like 8x1,4x2");
        pairs.emplace_back(static_cast<std::uint32_t>(parse_u64(parts[0], "pairs")),
                           static_cast<std::uint32_t>(parse_u64(parts[1], "pairs")));
    }
    // validate the base config at the first pair, not at the defaults
    o.batch = pairs.front().first;
    o.learners = pairs.front().second;
    ExperimentConfig cfg = build_experiment(sub, o);
    const auto dir = ensure_out_dir(cfg);
    const MuLambdaReport report = mu_lambda_suite(pairs, cfg);
    write_mu_lambda_csv(report, (dir / "mu_lambda.csv").string());
    for (const auto& [product, mean] : report.group_mean_error) {
        std::cout << "product=" << product << " mean_error=" << format_double(mean)
                  << " config_spread=" << format_double(report.group_config_spread.at(product));
        const auto it = report.hardsync_max_weight_delta.find(product);
        if (it != report.hardsync_max_weight_delta.end())
            std::cout << " max_weight_delta=" << format_double(it->second);
        std::cout << "\n";
    }
    return 0;
}

int cmd_lr_ab(CLI::App* sub, CliOptions& o) {
    if (!o.given(sub, "protocol")) o.protocol = "softsync";
    if (!o.given(sub, "alpha0")) o.alpha0 = kStabilityEdgeAlpha0;
    ExperimentConfig cfg = build_experiment(sub, o);
    if (cfg.policy.kind != SyncKind::Softsync)
        throw ConfigError("lr-ab requires an n-softsync policy");
    const auto dir = ensure_out_dir(cfg);
    const auto rows = lr_modulation_ab(cfg, cfg.policy.n);
    write_lr_ab_csv(rows, (dir / "lr_ab.csv").string());
    for (const auto& r : rows)
        std::cout << "seed=" << r.seed << " mode=" << to_string(r.mode)
                  << " test_error=" << format_double(r.final_test_error)
                  << (r.diverged ? " DIVERGED" : "") << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale parameter-server SGD testbed"};
    app.require_subcommand(1);
    CliOptions o;

    CLI::App* train = app.add_subcommand("train", "single training run");
    CLI::App* sweep = app.add_subcommand("sweep", "lambda x mu tradeoff grid");
    CLI::App* mu_lambda = app.add_subcommand("mu-lambda", "constant mu*lambda suite");
    CLI::App* lr_ab = app.add_subcommand("lr-ab", "modulated vs unmodulated learning rate");
    CLI::App* staleness = app.add_subcommand("staleness", "run and export staleness histogram");
    for (CLI::App* sub : {train, sweep, mu_lambda, lr_ab, staleness}) add_common_options(sub, o);
    sweep->add_option("--lambdas", o.lambdas, "comma list of learner counts");
    sweep->add_option("--mus", o.mus, "comma list of batch sizes");
    mu_lambda->add_option("--pairs", o.pairs, "comma list of MUxLAMBDA pairs (8x1,4x2)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);  // prints the usage message
        return 2;
    }

    try {
        CLI::App* active = nullptr;
        for (CLI::App* sub : {train, sweep, mu_lambda, lr_ab, staleness})
            if (sub->parsed()) active = sub;
        if (active && !o.config_path.empty()) apply_config_file(o.config_path, active, o);
        if (train->parsed()) return cmd_train(train, o, false);
        if (sweep->parsed()) return cmd_sweep(sweep, o);
        if (mu_lambda->parsed()) return cmd_mu_lambda(mu_lambda, o);
        if (lr_ab->parsed()) return cmd_lr_ab(lr_ab, o);
        if (staleness->parsed()) return cmd_train(staleness, o, true);
        std::cerr << "no subcommand given\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
