#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ntklab/serialize.hpp"

using namespace ntklab;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("ntklab_test_" + std::to_string(::getpid()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const char* name) const { return (path / name).string(); }
};

} // namespace

TEST_CASE("params binary round trip with sidecar") {
    auto cfg = NetworkConfig::make(3, 5, 2, 2, Activation::from_name("tanh"));
    const auto strategy = derive_meta_family(0.5, 2);
    RngStream stream(1, 0);
    const auto params = init_params(cfg, strategy, stream);

    TempDir dir;
    const auto path = dir.file("params.bin");
    save_params(params, cfg, path);
    const auto loaded = load_params(cfg, path);
    CHECK(loaded.biases == params.biases);    // bit-exact
    CHECK(loaded.weights == params.weights);

    // sidecar mismatch is rejected
    auto other = NetworkConfig::make(3, 6, 2, 2, Activation::from_name("tanh"));
    CHECK_THROWS_AS(load_params(other, path), std::runtime_error);
}

TEST_CASE("kernel stack serialization writes a complete sidecar") {
    auto cfg = NetworkConfig::make(3, 4, 1, 2, Activation::from_name("tanh"));
    const auto strategy = derive_meta_family(0.0, 2);
    RngStream stream(2, 0);
    const auto params = init_params(cfg, strategy, stream);
    RngStream dstream(2, 1);
    const auto data = make_unit_norm_dataset(2, 3, dstream);
    const auto stack = compute_kernels(params, cfg, strategy, data, KernelOrder::DDNTK);

    TempDir dir;
    const auto path = dir.file("stack.bin");
    save_kernel_stack(stack, path);

    std::ifstream side(path + ".json");
    REQUIRE(side.good());
    nlohmann::json j;
    side >> j;
    CHECK(j.at("layers").size() == 2);
    CHECK(j["layers"][1]["tensors"].size() == 4);  // H, dH, ddI, ddII

    // binary size matches the sum of tensor sizes in the sidecar
    std::size_t expected = 0;
    for (const auto& layer : j["layers"]) {
        for (const auto& t : layer["tensors"]) {
            std::size_t count = 1;
            for (const auto& e : t["shape"]) count *= e.get<std::size_t>();
            expected += count;
        }
    }
    CHECK(std::filesystem::file_size(path) == expected * sizeof(double));
}

TEST_CASE("dataset CSV reader") {
    TempDir dir;
    const auto path = dir.file("data.csv");
    {
        std::ofstream out(path);
        out << "1.0,2.0,0.5\n";
        out << "-1.0,0.25,1.5\n";
    }
    const auto data = load_dataset_csv(path, 2, 1);
    CHECK(data.count == 2);
    CHECK(data.input(1)[0] == -1.0);
    CHECK(data.label(0)[0] == 0.5);

    CHECK_THROWS_AS(load_dataset_csv(path, 3, 1), std::runtime_error);
    CHECK_THROWS_AS(load_dataset_csv(dir.file("missing.csv"), 2, 1), std::runtime_error);
}

TEST_CASE("layer CSV dump carries explicit index columns") {
    auto cfg = NetworkConfig::make(2, 3, 1, 2, Activation::from_name("linear"));
    const auto strategy = derive_meta_family(0.0, 2);
    RngStream stream(3, 0);
    const auto params = init_params(cfg, strategy, stream);
    RngStream dstream(3, 1);
    const auto data = make_unit_norm_dataset(2, 2, dstream);
    const auto stack = compute_kernels(params, cfg, strategy, data, KernelOrder::DNTK);

    std::ostringstream os;
    dump_layer_csv(stack, 2, os);
    std::istringstream is(os.str());
    std::string header;
    std::getline(is, header);
    CHECK(header == "tensor,i0,i1,i2,i3,d0,d1,d2,d3,value");

    std::size_t h_rows = 0, dh_rows = 0;
    std::string line;
    while (std::getline(is, line)) {
        if (line.rfind("H,", 0) == 0) ++h_rows;
        if (line.rfind("dH,", 0) == 0) ++dh_rows;
    }
    CHECK(h_rows == 1 * 1 * 2 * 2);
    CHECK(dh_rows == 1 * 1 * 1 * 2 * 2 * 2);
    CHECK_THROWS_AS(dump_layer_csv(stack, 3, os), std::invalid_argument);
}
