#include "ntklab/serialize.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace ntklab {

namespace {

void write_doubles(std::ofstream& out, const double* data, std::size_t count) {
    out.write(reinterpret_cast<const char*>(data),
              static_cast<std::streamsize>(count * sizeof(double)));
}

void read_doubles(std::ifstream& in, double* data, std::size_t count) {
    in.read(reinterpret_cast<char*>(data),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) {
        throw std::runtime_error("binary file truncated");
    }
}

} // namespace

void save_params(const NetworkParams& params, const NetworkConfig& config,
                 const std::string& path) {
    config.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open " + path + " for writing");
    }
    for (std::size_t l = 0; l < params.biases.size(); ++l) {
        write_doubles(out, params.biases[l].data(), params.biases[l].size());
        write_doubles(out, params.weights[l].data(), params.weights[l].size());
    }

    nlohmann::json sidecar{
        {"format", "float64-le"},
        {"layout", "per-layer: bias vector, then row-major weights"},
        {"widths", config.widths},
    };
    std::ofstream side(path + ".json");
    side << sidecar.dump(2) << "\n";
}

NetworkParams load_params(const NetworkConfig& config, const std::string& path) {
    config.validate();
    {
        std::ifstream side(path + ".json");
        if (side) {
            nlohmann::json j;
            side >> j;
            if (j.value("widths", std::vector<int>{}) != config.widths) {
                throw std::runtime_error("sidecar widths do not match config: " + path);
            }
        }
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path);
    }
    const int L = config.depth();
    NetworkParams params;
    params.biases.resize(L);
    params.weights.resize(L);
    for (int l = 1; l <= L; ++l) {
        const auto n_out = static_cast<std::size_t>(config.widths[l]);
        const auto n_in = static_cast<std::size_t>(config.widths[l - 1]);
        params.biases[l - 1].resize(n_out);
        params.weights[l - 1].resize(n_out * n_in);
        read_doubles(in, params.biases[l - 1].data(), n_out);
        read_doubles(in, params.weights[l - 1].data(), n_out * n_in);
    }
    return params;
}

void save_kernel_stack(const KernelStack& stack, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open " + path + " for writing");
    }
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& lk : stack.layers) {
        nlohmann::json j;
        j["n"] = lk.n;
        j["D"] = lk.D;
        nlohmann::json tensors = nlohmann::json::array();
        auto dump = [&](const char* name, const Tensor& t) {
            write_doubles(out, t.data(), t.size());
            tensors.push_back({{"name", name}, {"shape", t.shape()}});
        };
        dump("H", lk.H);
        if (lk.dH.has_value()) dump("dH", *lk.dH);
        if (lk.ddI.has_value()) dump("ddI", *lk.ddI);
        if (lk.ddII.has_value()) dump("ddII", *lk.ddII);
        j["tensors"] = tensors;
        layers.push_back(j);
    }
    nlohmann::json sidecar{{"format", "float64-le"}, {"layers", layers}};
    std::ofstream side(path + ".json");
    side << sidecar.dump(2) << "\n";
}

Dataset load_dataset_csv(const std::string& path, std::size_t n0, std::size_t label_dim) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open " + path);
    }
    Dataset data;
    data.input_dim = n0;
    data.label_dim = label_dim;

    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        std::size_t pos = 0;
        while (pos <= line.size()) {
            const std::size_t comma = line.find(',', pos);
            const std::string cell =
                line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
            row.push_back(std::stod(cell));
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        if (row.size() != n0 + label_dim) {
            throw std::runtime_error("CSV row has " + std::to_string(row.size()) +
                                     " fields, expected " + std::to_string(n0 + label_dim));
        }
        data.inputs.insert(data.inputs.end(), row.begin(), row.begin() + n0);
        data.labels.insert(data.labels.end(), row.begin() + n0, row.end());
        ++data.count;
    }
    if (data.count == 0) {
        throw std::runtime_error("dataset is empty: " + path);
    }
    return data;
}

void dump_layer_csv(const KernelStack& stack, int ell, std::ostream& os) {
    if (ell < 1 || ell > stack.depth()) {
        throw std::invalid_argument("dump layer out of range");
    }
    const auto& lk = stack.layer(ell);
    const std::size_t n = lk.n, D = lk.D;

    os << "tensor,i0,i1,i2,i3,d0,d1,d2,d3,value\n";
    auto emit = [&](const char* name, const Tensor& t, int slots) {
        std::vector<std::size_t> iv(slots, 0), dv(slots, 0);
        const std::size_t count = t.size();
        for (std::size_t flat = 0; flat < count; ++flat) {
            std::size_t rem = flat;
            for (int k = slots - 1; k >= 0; --k) {
                dv[k] = rem % D;
                rem /= D;
            }
            for (int k = slots - 1; k >= 0; --k) {
                iv[k] = rem % n;
                rem /= n;
            }
            os << name;
            for (int k = 0; k < 4; ++k) {
                os << ',';
                if (k < slots) os << iv[k];
            }
            for (int k = 0; k < 4; ++k) {
                os << ',';
                if (k < slots) os << dv[k];
            }
            os << ',' << t[flat] << "\n";
        }
    };
    emit("H", lk.H, 2);
    if (lk.dH.has_value()) emit("dH", *lk.dH, 3);
    if (lk.ddI.has_value()) emit("ddI", *lk.ddI, 4);
    if (lk.ddII.has_value()) emit("ddII", *lk.ddII, 4);
}

} // namespace ntklab
