#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace {

struct RunResult {
    int exit_code = -1;
    std::string output;
};

RunResult run(const std::string& args) {
    const std::string cmd = std::string(NTKLAB_CLI_PATH) + " " + args + " 2>&1";
    std::array<char, 4096> buf{};
    RunResult r;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    while (fgets(buf.data(), buf.size(), pipe)) r.output += buf.data();
    const int status = pclose(pipe);
    r.exit_code = WEXITSTATUS(status);
    return r;
}

} // namespace

TEST_CASE("family subcommand prints exponents and exit codes") {
    {
        const auto r = run("family --s 1 --L 3 --format json");
        CHECK(r.exit_code == 0);
        CHECK(r.output.find("\"p\"") != std::string::npos);
        CHECK(r.output.find("1.0") != std::string::npos);
    }
    {
        const auto r = run("family --s 0.5 --L 2 --validate");
        CHECK(r.exit_code == 0);
    }
    {
        // constraint violated -> validation failure exit code
        const auto r = run("family --p 0,1 --q 0,0 --r 0 --validate");
        CHECK(r.exit_code == 2);
        CHECK(r.output.find("lr_equivalence=FAIL") != std::string::npos);
    }
    {
        // a nonzero hidden-layer p breaks criticality
        const auto r = run("family --p 0,1,0 --q 0,1,1 --r 1 --validate");
        CHECK(r.exit_code == 2);
        CHECK(r.output.find("criticality=FAIL") != std::string::npos);
    }
    {
        const auto r = run("family --s 1 --L 2 --to-abc --format json");
        CHECK(r.exit_code == 0);
        CHECK(r.output.find("\"c\"") != std::string::npos);
        CHECK(r.output.find("-1.0") != std::string::npos);
    }
}

TEST_CASE("unknown flags are hard usage errors") {
    const auto r = run("family --s 1 --L 3 --no-such-flag");
    CHECK(r.exit_code == 64);
}

TEST_CASE("oracle-check exits cleanly within tolerance") {
    const auto r = run("oracle-check --n 4 --L 3 --n0 3 --act tanh --seed 7");
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("max relative error") != std::string::npos);
}

TEST_CASE("kernels subcommand writes results plus manifest") {
    namespace fs = std::filesystem;
    const auto dir = fs::temp_directory_path() / "ntklab_cli_test";
    fs::remove_all(dir);

    const auto r = run("kernels --n 4 --L 2 --n0 3 --act tanh --seed 3 --order dntk "
                       "--dump-layer 2 --out " + dir.string());
    CHECK(r.exit_code == 0);
    CHECK(fs::exists(dir / "kernels.bin"));
    CHECK(fs::exists(dir / "kernels.bin.json"));
    CHECK(fs::exists(dir / "layer2.csv"));
    CHECK(fs::exists(dir / "manifest.json"));

    // identical invocation reproduces the binary bit-for-bit
    const auto dir2 = fs::temp_directory_path() / "ntklab_cli_test2";
    fs::remove_all(dir2);
    run("kernels --n 4 --L 2 --n0 3 --act tanh --seed 3 --order dntk --dump-layer 2 --out " +
        dir2.string());
    std::ifstream a(dir / "kernels.bin", std::ios::binary);
    std::ifstream b(dir2 / "kernels.bin", std::ios::binary);
    const std::string pa((std::istreambuf_iterator<char>(a)), {});
    const std::string pb((std::istreambuf_iterator<char>(b)), {});
    CHECK(pa == pb);

    fs::remove_all(dir);
    fs::remove_all(dir2);
}

TEST_CASE("kernels reports budget breaches with the resource exit code") {
    const auto r = run("kernels --n 64 --L 3 --act tanh --order ddntk --budget-gb 0.001");
    CHECK(r.exit_code == 70);
}

TEST_CASE("sweep subcommand honors --expect") {
    namespace fs = std::filesystem;
    const auto cfg_path = fs::temp_directory_path() / "ntklab_sweep_cfg.json";
    {
        std::ofstream out(cfg_path);
        out << R"({"type":"width","observable":"z_dntk","s":0.0,"L":2,)"
            << R"("widths":[8,16,32],"M":300,"seed":12,"activation":"tanh","n0":8})";
    }
    {
        const auto r = run("sweep --config " + cfg_path.string() + " --expect -1.0:0.5");
        CHECK(r.exit_code == 0);
        CHECK(r.output.find("slope") != std::string::npos);
    }
    {
        const auto r = run("sweep --config " + cfg_path.string() + " --expect 3.0:0.1");
        CHECK(r.exit_code == 2);
    }
    {
        const auto r = run("sweep --config /nonexistent.json");
        CHECK(r.exit_code == 64);
    }
    fs::remove(cfg_path);
}

TEST_CASE("train-verify emits residual slopes") {
    const auto r = run("train-verify --n 8 --L 2 --n0 3 --D 3 --act tanh --seed 5 "
                       "--order 2 --eta-count 6");
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("order 1: residual slope") != std::string::npos);
    CHECK(r.output.find("order 2: residual slope") != std::string::npos);
}
