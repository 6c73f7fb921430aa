#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "testutil.hpp"
#include "tfr/store.hpp"

// End-to-end checks of the command-line surface against the shipped sample
// data: exit codes, output files, and the documented workflow order.

namespace {

namespace fs = std::filesystem;

struct CliResult {
    int exit_code = -1;
    std::string output;
};

CliResult run_cli(const std::string& args, const fs::path& scratch) {
    const fs::path out_file = scratch / "cli_output.txt";
    const std::string cmd = std::string(TFR_CLI_PATH) + " " + args + " > " +
                            out_file.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    CliResult res;
    res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    std::ifstream in(out_file);
    std::ostringstream buf;
    buf << in.rdbuf();
    res.output = buf.str();
    return res;
}

const std::string kRaw = std::string(TFR_DATA_DIR) + "/sample_raw.csv";
const std::string kRef = std::string(TFR_DATA_DIR) + "/sample_ref_5yr.csv";

}  // namespace

TEST_CASE("cli full workflow on the sample data") {
    testutil::TempDir dir("cli_flow");
    const fs::path store = dir.path() / "sim";

    const auto run = run_cli("run --output-dir " + store.string() + " --raw-file " + kRaw +
                                 " --ref-file " + kRef +
                                 " --covariates source,method --annual --ar-phase2"
                                 " --uncertainty --iso-unbiased 752 --chains 2 --iters 12"
                                 " --thin 2 --burnin 4 --seed 7",
                             dir.path());
    CAPTURE(run.output);
    REQUIRE(run.exit_code == 0);
    REQUIRE(fs::exists(store / "mc1" / "rho_phase2.txt"));

    const auto pred = run_cli("predict --output-dir " + store.string() +
                                  " --end-year 2040 --burnin 4 --nr-traj 8 --uncertainty",
                              dir.path());
    CAPTURE(pred.output);
    REQUIRE(pred.exit_code == 0);
    REQUIRE(fs::exists(store / "predictions" / "traj_country104.csv"));

    const auto table = run_cli("table --output-dir " + store.string() + " --country 104",
                               dir.path());
    REQUIRE(table.exit_code == 0);
    REQUIRE(table.output.find("+0.5child") != std::string::npos);
    REQUIRE(table.output.find("2040") != std::string::npos);
    REQUIRE(table.output.find("NA") != std::string::npos);

    const auto summ = run_cli("summarize --output-dir " + store.string() +
                                  " --params sigma0,rho_phase2 --burnin 4",
                              dir.path());
    REQUIRE(summ.exit_code == 0);
    REQUIRE(summ.output.find("rho_phase2") != std::string::npos);

    const auto est = run_cli("estimate --output-dir " + store.string() +
                                 " --country 104 --probs 0.1,0.5,0.9 --burnin 4",
                             dir.path());
    REQUIRE(est.exit_code == 0);
    REQUIRE(est.output.find("1950") != std::string::npos);

    const auto bias = run_cli("bias-sd --output-dir " + store.string() + " --country 752",
                              dir.path());
    REQUIRE(bias.exit_code == 0);
    REQUIRE(bias.output.find("bias,sd") != std::string::npos);
    // 752 is in the unbiased-VR set; its VR rows must be pinned.
    REQUIRE(bias.output.find("0.0161") != std::string::npos);

    const auto cont = run_cli("continue --output-dir " + store.string() + " --iters 4",
                              dir.path());
    REQUIRE(cont.exit_code == 0);

    const auto extra = run_cli("extra --output-dir " + store.string() +
                                   " --countries 104 --iters 8 --burnin 2",
                               dir.path());
    CAPTURE(extra.output);
    REQUIRE(extra.exit_code == 0);

    SECTION("rerunning with switched mode flags fails with exit 1") {
        const auto bad = run_cli("run --output-dir " + store.string() + " --raw-file " + kRaw +
                                     " --ref-file " + kRef +
                                     " --covariates source,method --chains 2 --iters 12"
                                     " --thin 2 --burnin 4",
                                 dir.path());
        REQUIRE(bad.exit_code == 1);
        REQUIRE(bad.output.find("flags") != std::string::npos);
    }
    SECTION("diagnose rejects the toy run as too short with exit 1") {
        const auto diag = run_cli("diagnose --output-dir " + store.string(), dir.path());
        REQUIRE(diag.exit_code == 1);
        REQUIRE(diag.output.find("100") != std::string::npos);
    }
    SECTION("tampered store yields exit 3 naming the file") {
        fs::remove(store / "mc2" / "chi.txt");
        const auto cont2 = run_cli("continue --output-dir " + store.string() + " --iters 2",
                                   dir.path());
        REQUIRE(cont2.exit_code == 3);
        REQUIRE(cont2.output.find("chi.txt") != std::string::npos);
    }
}

TEST_CASE("cli production preset fills unset options") {
    testutil::TempDir dir("cli_preset");
    const fs::path store = dir.path() / "sim";
    // Explicit flags win; everything else comes from the preset.
    const auto run = run_cli("run --preset production --output-dir " + store.string() +
                                 " --raw-file " + kRaw + " --ref-file " + kRef +
                                 " --covariates source,method --annual --ar-phase2"
                                 " --uncertainty --chains 2 --iters 8 --thin 1 --burnin 2"
                                 " --seed 4",
                             dir.path());
    CAPTURE(run.output);
    REQUIRE(run.exit_code == 0);
    const auto meta = tfr::ChainStore::open(store).meta();
    REQUIRE(meta.sigma0_min == 0.04);
    REQUIRE(meta.unbiased_vr.size() == 27);
    REQUIRE(std::count(meta.unbiased_vr.begin(), meta.unbiased_vr.end(), 752) == 1);
    REQUIRE(meta.nr_chains == 2);  // explicit value beats the preset
    REQUIRE(meta.iters == 8);

    // The plateau-then-decline country has its transition start inside the
    // window, exercising the pre-transition random walk end to end.
    const auto* c818 = meta.find_country(818);
    REQUIRE(c818 != nullptr);
    REQUIRE(c818->tau > 0);
}

TEST_CASE("cli reports usage and data errors with distinct exit codes") {
    testutil::TempDir dir("cli_err");
    SECTION("unknown subcommand") {
        REQUIRE(run_cli("frobnicate", dir.path()).exit_code == 1);
    }
    SECTION("missing required option") {
        REQUIRE(run_cli("run --ref-file " + kRef, dir.path()).exit_code == 1);
    }
    SECTION("nonexistent data file") {
        const auto res = run_cli("run --output-dir " + (dir.path() / "x").string() +
                                     " --ref-file /nonexistent.csv --iters 4 --chains 1"
                                     " --burnin 1",
                                 dir.path());
        REQUIRE(res.exit_code == 2);
    }
    SECTION("reading a non-store directory") {
        const auto res = run_cli("summarize --output-dir " + dir.path().string(), dir.path());
        REQUIRE(res.exit_code == 3);
    }
    SECTION("help exits cleanly") {
        REQUIRE(run_cli("--help", dir.path()).exit_code == 0);
    }
}

TEST_CASE("cli five-year estimation with past uncertainty") {
    // Observations at arbitrary years tie together the two flanking
    // five-year latents through interpolation weights.
    testutil::TempDir dir("cli_5yr_unc");
    const fs::path store = dir.path() / "sim";
    const auto run = run_cli("run --output-dir " + store.string() + " --raw-file " + kRaw +
                                 " --ref-file " + kRef +
                                 " --covariates source,method --uncertainty"
                                 " --chains 2 --iters 10 --thin 1 --burnin 3 --seed 11",
                             dir.path());
    CAPTURE(run.output);
    REQUIRE(run.exit_code == 0);
    const auto rows = tfr::read_trace(store / "mc1" / "tfr_country231.txt");
    REQUIRE(rows.size() == 10);
    REQUIRE(rows[0].size() == 15);  // 1950..2020 five-year periods

    const auto pred = run_cli("predict --output-dir " + store.string() +
                                  " --end-year 2100 --burnin 4 --nr-traj 8 --uncertainty",
                              dir.path());
    CAPTURE(pred.output);
    REQUIRE(pred.exit_code == 0);
    const auto est = run_cli("estimate --output-dir " + store.string() +
                                 " --country 231 --burnin 4",
                             dir.path());
    REQUIRE(est.exit_code == 0);
}

TEST_CASE("cli five-year two-step workflow") {
    testutil::TempDir dir("cli_5yr");
    const fs::path store = dir.path() / "sim5";
    const auto run = run_cli("run --output-dir " + store.string() + " --ref-file " + kRef +
                                 " --chains 2 --iters 10 --burnin 3 --seed 3",
                             dir.path());
    CAPTURE(run.output);
    REQUIRE(run.exit_code == 0);
    REQUIRE(fs::exists(store / "phaseIII" / "mc2" / "mu.txt"));
    REQUIRE_FALSE(fs::exists(store / "mc1" / "rho_phase2.txt"));

    const auto pred = run_cli("predict --output-dir " + store.string() +
                                  " --end-year 2100 --burnin 2 --nr-traj 6",
                              dir.path());
    CAPTURE(pred.output);
    REQUIRE(pred.exit_code == 0);
    const auto table = run_cli("table --output-dir " + store.string() + " --country 231",
                               dir.path());
    REQUIRE(table.exit_code == 0);
    // Five-year labels: first projected period is 2025.
    REQUIRE(table.output.find("2025") != std::string::npos);
    REQUIRE(table.output.find("2100") != std::string::npos);
}
