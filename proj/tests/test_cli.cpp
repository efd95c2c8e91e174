// Drives the installed command-line binary end to end. The binary path
// arrives as argv[1] from ctest.
#define DOCTEST_CONFIG_IMPLEMENT
#include "doctest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "rudra/harness.hpp"

namespace {

std::string g_bin;
const std::string g_dir = "/tmp/rudra_cli_test";

struct Outcome {
    int exit_code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

Outcome run(const std::string& args) {
    const std::string out_f = g_dir + "/stdout.txt";
    const std::string err_f = g_dir + "/stderr.txt";
    const std::string cmd = g_bin + " " + args + " > " + out_f + " 2> " + err_f;
    const int rc = std::system(cmd.c_str());
    Outcome o;
    o.exit_code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    o.out = slurp(out_f);
    o.err = slurp(err_f);
    return o;
}

// every run in this file uses a small synthetic task so the suite stays fast
const std::string kSmall =
    " --classes 4 --dim 8 --train-per-class 50 --test-per-class 10 --hidden 8";

std::size_t csv_data_rows(const std::string& path) {
    const rudra::CsvTable t = rudra::read_csv_table(path);
    return t.rows.size();
}

}  // namespace

TEST_CASE("train writes epoch, staleness, and timing tables") {
    const std::string out = g_dir + "/train1";
    const Outcome o = run("train --protocol hardsync --learners 1 --batch 8 --epochs 2"
                          " --seed 7 --out " + out + kSmall);
    CHECK(o.exit_code == 0);
    CHECK(o.out.find("updates=") != std::string::npos);
    CHECK(csv_data_rows(out + "/epochs.csv") == 2);
    // 200 samples, 8 per update -> 25 updates per epoch
    CHECK(csv_data_rows(out + "/staleness.csv") == 50);
    CHECK(csv_data_rows(out + "/timing.csv") == 50);
    const auto ckpt = rudra::load_checkpoint(out + "/final.ckpt");
    CHECK(ckpt.timestamp == 50);
}

TEST_CASE("invalid n is a usage error citing the constraint") {
    const Outcome o = run("train --protocol softsync --n 31 --learners 30 --out " +
                          g_dir + "/bad" + kSmall);
    CHECK(o.exit_code == 2);
    CHECK(o.err.find("1 <= n <= lambda") != std::string::npos);
}

TEST_CASE("softsync without --n defaults to 1 with a note") {
    const std::string out = g_dir + "/soft_default";
    const Outcome o = run("train --protocol softsync --learners 2 --batch 5 --epochs 1"
                          " --seed 3 --out " + out + kSmall);
    CHECK(o.exit_code == 0);
    CHECK(o.err.find("defaulting to n=1") != std::string::npos);
    // n=1 window = 2 gradients, 10 samples per update -> 20 updates
    CHECK(csv_data_rows(out + "/staleness.csv") == 20);
}

TEST_CASE("async output is byte-identical to softsync with n = learners") {
    const std::string oa = g_dir + "/async";
    const std::string os = g_dir + "/softmax_n";
    const std::string common = " --learners 3 --batch 4 --epochs 1 --seed 11 --out ";
    const Outcome a = run("train --protocol async" + common + oa + kSmall);
    const Outcome s = run("train --protocol softsync --n 3" + common + os + kSmall);
    REQUIRE(a.exit_code == 0);
    REQUIRE(s.exit_code == 0);
    CHECK(slurp(oa + "/staleness.csv") == slurp(os + "/staleness.csv"));
    CHECK(slurp(oa + "/epochs.csv") == slurp(os + "/epochs.csv"));
    CHECK(slurp(oa + "/timing.csv") == slurp(os + "/timing.csv"));
    CHECK(slurp(oa + "/final.ckpt") == slurp(os + "/final.ckpt"));
}

TEST_CASE("config file values apply and flags override them") {
    const std::string cfg_path = g_dir + "/exp.cfg";
    {
        std::ofstream out(cfg_path);
        out << "# experiment defaults\n"
            << "learners = 2\n"
            << "batch = 5\n"
            << "epochs = 1\n"
            << "seed = 4\n";
    }
    const std::string o1 = g_dir + "/cfg_plain";
    const Outcome plain = run("train --config " + cfg_path + " --out " + o1 + kSmall);
    CHECK(plain.exit_code == 0);
    // lambda=2, mu=5: 10 samples per update -> 20 updates
    CHECK(plain.out.find("updates=20") != std::string::npos);

    const std::string o2 = g_dir + "/cfg_override";
    const Outcome over = run("train --config " + cfg_path + " --learners 4 --out " + o2 +
                             kSmall);
    CHECK(over.exit_code == 0);
    // flag wins: lambda=4, 20 samples per update -> 10 updates
    CHECK(over.out.find("updates=10") != std::string::npos);

    const Outcome bad = run("train --config " + g_dir + "/missing.cfg --out " + o2 + kSmall);
    CHECK(bad.exit_code == 2);

    {
        std::ofstream out(cfg_path);
        out << "unknown-knob = 1\n";
    }
    const Outcome unk = run("train --config " + cfg_path + " --out " + o2 + kSmall);
    CHECK(unk.exit_code == 2);
    CHECK(unk.err.find("unknown-knob") != std::string::npos);
}

TEST_CASE("staleness subcommand adds the histogram table") {
    const std::string out = g_dir + "/hist";
    const Outcome o = run("staleness --protocol softsync --n 2 --learners 4 --batch 4"
                          " --epochs 1 --seed 5 --out " + out + kSmall);
    CHECK(o.exit_code == 0);
    const rudra::CsvTable t = rudra::read_csv_table(out + "/staleness_hist.csv");
    CHECK(t.header == std::vector<std::string>{"sigma", "count"});
    CHECK(t.rows.size() >= 1);
}

TEST_CASE("sweep emits one row per grid cell") {
    const std::string out = g_dir + "/sweep";
    const Outcome o = run("sweep --protocol hardsync --lambdas 1,2 --mus 4 --epochs 1"
                          " --seeds 1,2 --out " + out + kSmall);
    CHECK(o.exit_code == 0);
    CHECK(csv_data_rows(out + "/tradeoff.csv") == 4);
}

TEST_CASE("mu-lambda subcommand reports per-product groups") {
    const std::string out = g_dir + "/ml";
    const Outcome o = run("mu-lambda --protocol hardsync --pairs 8x1,4x2 --epochs 1"
                          " --seed 2 --out " + out + kSmall);
    CHECK(o.exit_code == 0);
    CHECK(o.out.find("product=8") != std::string::npos);
    CHECK(o.out.find("max_weight_delta=") != std::string::npos);
    CHECK(csv_data_rows(out + "/mu_lambda.csv") == 2);
}

TEST_CASE("lr-ab subcommand runs both modes per seed") {
    const std::string out = g_dir + "/lrab";
    const Outcome o = run("lr-ab --protocol softsync --n 2 --learners 2 --batch 4"
                          " --alpha0 0.05 --epochs 1 --seeds 1,2 --out " + out + kSmall);
    CHECK(o.exit_code == 0);
    CHECK(csv_data_rows(out + "/lr_ab.csv") == 4);
}

TEST_CASE("usage failures exit 2") {
    CHECK(run("definitely-not-a-command").exit_code == 2);
    CHECK(run("train --no-such-flag 9").exit_code == 2);
    CHECK(run("train --protocol warpsync --out " + g_dir + "/x" + kSmall).exit_code == 2);
    CHECK(run("train --arch mesh --out " + g_dir + "/x" + kSmall).exit_code == 2);
    CHECK(run("").exit_code == 2);
}

TEST_CASE("splitting parameter is rejected outside softsync") {
    const Outcome h =
        run("train --protocol hardsync --n 2 --out " + g_dir + "/x" + kSmall);
    CHECK(h.exit_code == 2);
    CHECK(h.err.find("--n") != std::string::npos);
    const Outcome a =
        run("train --protocol async --n 2 --learners 2 --out " + g_dir + "/x" + kSmall);
    CHECK(a.exit_code == 2);
    CHECK(a.err.find("--n") != std::string::npos);
}

TEST_CASE("help exits 0") {
    CHECK(run("--help").exit_code == 0);
    CHECK(run("train --help").exit_code == 0);
}

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: test_cli <path-to-binary>\n");
        return 1;
    }
    g_bin = argv[1];
    std::filesystem::remove_all(g_dir);
    std::filesystem::create_directories(g_dir);

    doctest::Context ctx;
    ctx.applyCommandLine(1, argv);  // doctest flags are not used here
    return ctx.run();
}
