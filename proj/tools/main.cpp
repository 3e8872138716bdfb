#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ntklab/dynamics.hpp"
#include "ntklab/estimator.hpp"
#include "ntklab/kernels.hpp"
#include "ntklab/oracle.hpp"
#include "ntklab/serialize.hpp"

namespace {

constexpr const char* kArtifactVersion = "1.0.0";

// exit-code convention: 0 success, 2 assertion/validation failure,
// 64 usage/malformed config, 70 resource budget breach
constexpr int kExitOk = 0;
constexpr int kExitAssert = 2;
constexpr int kExitUsage = 64;
constexpr int kExitResource = 70;

using nlohmann::json;

struct ManifestWriter {
    std::string subcommand;
    json config;
    std::uint64_t seed = 0;
    std::vector<std::string> outputs;
    std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

    void write(const std::string& dir) const {
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        json m{{"subcommand", subcommand}, {"config", config},
               {"root_seed", seed},       {"artifact_version", kArtifactVersion},
               {"duration_seconds", secs}, {"outputs", outputs}};
        std::ofstream out(dir + "/manifest.json");
        out << m.dump(2) << "\n";
    }
};

std::vector<double> parse_csv_doubles(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(std::stod(cell));
    return out;
}

ntklab::ScalingStrategy strategy_from_flags(double s, int L, const std::string& p_csv,
                                            const std::string& q_csv, double r,
                                            bool explicit_pqr) {
    if (explicit_pqr) {
        ntklab::ScalingStrategy st;
        st.p = parse_csv_doubles(p_csv);
        st.q = parse_csv_doubles(q_csv);
        st.r = r;
        st.L = static_cast<int>(st.p.size());
        st.provenance = "raw";
        st.validate();
        return st;
    }
    return ntklab::derive_meta_family(s, L);
}

json strategy_report(const ntklab::ScalingStrategy& st) {
    return ntklab::strategy_to_json(st);
}

int cmd_family(double s, int L, const std::string& p_csv, const std::string& q_csv, double r,
               bool explicit_pqr, double gauge, bool has_gauge, bool to_abc_flag, bool validate,
               const std::string& format) {
    ntklab::ScalingStrategy st = strategy_from_flags(s, L, p_csv, q_csv, r, explicit_pqr);
    if (has_gauge) st = ntklab::gauge_transform(st, gauge);

    json out = strategy_report(st);
    if (to_abc_flag) {
        const auto abc = ntklab::to_abc(st);
        out["abc"] = json{{"a", abc.a}, {"b", abc.b}, {"c", abc.c}};
    }
    ntklab::ConstraintReport rep;
    if (validate) {
        rep = ntklab::validate_meta_principles(st);
        out["constraints"] = json{{"criticality", rep.criticality},
                                  {"lr_equivalence", rep.lr_equivalence},
                                  {"finite_learning", rep.finite_learning}};
    }

    if (format == "json") {
        std::cout << out.dump(2) << "\n";
    } else {
        std::cout << "L = " << st.L << "\np =";
        for (double v : st.p) std::cout << ' ' << v;
        std::cout << "\nq =";
        for (double v : st.q) std::cout << ' ' << v;
        std::cout << "\nr = " << st.r << "\n";
        if (to_abc_flag) {
            const auto abc = ntklab::to_abc(st);
            std::cout << "a =";
            for (double v : abc.a) std::cout << ' ' << v;
            std::cout << "\nb =";
            for (double v : abc.b) std::cout << ' ' << v;
            std::cout << "\nc = " << abc.c << "\n";
        }
        if (validate) std::cout << rep.describe() << "\n";
    }
    if (validate && !rep.all_pass()) return kExitAssert;
    return kExitOk;
}

struct InstanceFlags {
    int n = 8, L = 2, D = 1, n0 = 8, nL = 1;
    std::string act = "tanh";
    double s = 0.0;
    std::uint64_t seed = 1;
};

void add_instance_flags(CLI::App* cmd, InstanceFlags& f) {
    cmd->add_option("--n", f.n, "hidden width");
    cmd->add_option("--L", f.L, "depth (number of layers)");
    cmd->add_option("--D", f.D, "number of samples");
    cmd->add_option("--n0", f.n0, "input dimension");
    cmd->add_option("--nL", f.nL, "output dimension");
    cmd->add_option("--act", f.act, "activation: linear|tanh|gelu");
    cmd->add_option("--s", f.s, "metaparameter s of the scaling family");
    cmd->add_option("--seed", f.seed, "root seed");
}

int cmd_kernels(const InstanceFlags& f, const std::string& order_name, int dump_layer,
                const std::string& out_dir, double budget_gb, bool streaming,
                ManifestWriter& manifest) {
    const auto act = ntklab::Activation::from_name(f.act);
    auto config = ntklab::NetworkConfig::make(f.n0, f.n, f.nL, f.L, act);
    const auto strategy = ntklab::derive_meta_family(f.s, f.L);

    ntklab::RngStream data_stream(f.seed, 0xD474A5E7ull);
    const auto data = ntklab::make_unit_norm_dataset(f.D, f.n0, data_stream);
    ntklab::RngStream stream(f.seed, 0);
    const auto params = ntklab::init_params(config, strategy, stream);

    ntklab::KernelOrder order = ntklab::KernelOrder::DDNTK;
    if (order_name == "ntk") order = ntklab::KernelOrder::NTK;
    else if (order_name == "dntk") order = ntklab::KernelOrder::DNTK;
    else if (order_name == "ddntk") order = ntklab::KernelOrder::DDNTK;
    else throw CLI::ValidationError("--order must be ntk|dntk|ddntk");

    ntklab::KernelOptions opts;
    opts.memory_budget_bytes = static_cast<std::size_t>(budget_gb * (1ull << 30));
    opts.streaming = streaming;
    const auto stack = ntklab::compute_kernels(params, config, strategy, data, order, opts);

    const auto& top = stack.output();
    std::cout << "computed kernel stack: L=" << f.L << " n=" << f.n << " D=" << f.D
              << " order=" << order_name << "\n";
    std::cout << "output-layer H[0,0;0,0] = " << top.H[0] << "\n";
    if (top.dH.has_value()) std::cout << "output-layer dH[0...] = " << (*top.dH)[0] << "\n";
    if (top.ddI.has_value()) std::cout << "output-layer ddI[0...] = " << (*top.ddI)[0] << "\n";
    if (top.ddII.has_value())
        std::cout << "output-layer ddII[0...] = " << (*top.ddII)[0] << "\n";

    if (dump_layer > 0) {
        if (!out_dir.empty()) {
            const std::string path = out_dir + "/layer" + std::to_string(dump_layer) + ".csv";
            std::ofstream os(path);
            ntklab::dump_layer_csv(stack, dump_layer, os);
            manifest.outputs.push_back(path);
        } else {
            ntklab::dump_layer_csv(stack, dump_layer, std::cout);
        }
    }
    if (!out_dir.empty()) {
        const std::string path = out_dir + "/kernels.bin";
        ntklab::save_kernel_stack(stack, path);
        manifest.outputs.push_back(path);
        manifest.outputs.push_back(path + ".json");
    }
    return kExitOk;
}

int cmd_oracle_check(const InstanceFlags& f, int count, double tol) {
    double max_rel = 0.0;
    for (int inst = 0; inst < count; ++inst) {
        const auto act = ntklab::Activation::from_name(f.act);
        auto config = ntklab::NetworkConfig::make(f.n0, f.n, f.nL, f.L, act);
        const auto strategy = ntklab::derive_meta_family(f.s, f.L);

        ntklab::RngStream data_stream(f.seed, 0xD474A5E7ull + inst);
        const auto data = ntklab::make_unit_norm_dataset(f.D, f.n0, data_stream);
        ntklab::RngStream stream(f.seed, static_cast<std::uint64_t>(inst));
        const auto params = ntklab::init_params(config, strategy, stream);

        const auto stack = ntklab::compute_kernels(params, config, strategy, data,
                                                   ntklab::KernelOrder::DDNTK);
        const auto defn = ntklab::kernels_from_definition(
            params, config, strategy, data,
            ntklab::KernelOrderFlags::for_order(ntklab::KernelOrder::DDNTK));

        auto rel = [](const ntklab::Tensor& a, const ntklab::Tensor& b) {
            double scale = std::max(b.max_abs(), 1e-300);
            double worst = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) {
                worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
            }
            return worst;
        };
        const auto& top = stack.output();
        max_rel = std::max(max_rel, rel(top.H, defn.H));
        max_rel = std::max(max_rel, rel(*top.dH, *defn.dH));
        max_rel = std::max(max_rel, rel(*top.ddI, *defn.ddI));
        max_rel = std::max(max_rel, rel(*top.ddII, *defn.ddII));
    }
    std::cout << "oracle-check: " << count << " instance(s), max relative error = " << max_rel
              << " (tolerance " << tol << ")\n";
    return max_rel <= tol ? kExitOk : kExitAssert;
}

int cmd_train_verify(const InstanceFlags& f, int max_order, const std::string& target,
                     double eta_lo, double eta_hi, int eta_count, const std::string& out_dir,
                     ManifestWriter& manifest) {
    const auto act = ntklab::Activation::from_name(f.act);
    auto config = ntklab::NetworkConfig::make(f.n0, f.n, f.nL, f.L, act);
    const auto strategy = ntklab::derive_meta_family(f.s, f.L);

    ntklab::RngStream data_stream(f.seed, 0xD474A5E7ull);
    auto data = ntklab::make_unit_norm_dataset(static_cast<std::size_t>(f.D), f.n0, data_stream);
    // labels: random unit-scale targets; the last sample is held out of the batch
    data.label_dim = static_cast<std::size_t>(f.nL);
    data.labels.resize(data.count * data.label_dim);
    data_stream.fill_gaussian(data.labels, 0.0, 1.0);
    ntklab::LossModel loss;
    for (std::size_t a = 0; a + 1 < data.count; ++a) loss.batch.push_back(a);
    if (loss.batch.empty()) loss.batch.push_back(0);

    ntklab::RngStream stream(f.seed, 0);
    const auto params = ntklab::init_params(config, strategy, stream);
    const auto trace = ntklab::forward(params, config, data);
    const auto stack = ntklab::compute_kernels(params, config, strategy, data,
                                               ntklab::KernelOrder::DDNTK);

    const bool ntk_target = (target == "ntk");
    const int top_order = ntk_target ? std::min(max_order, 2) : max_order;

    std::ostringstream csv;
    csv << "eta0,order,discrepancy_norm\n";
    json summary;
    for (int order = 1; order <= top_order; ++order) {
        std::vector<std::pair<double, double>> pts;
        for (int k = 0; k < eta_count; ++k) {
            const double eta0 =
                eta_lo * std::pow(eta_hi / eta_lo,
                                  eta_count > 1 ? static_cast<double>(k) / (eta_count - 1) : 0.0);
            config.eta0 = eta0;
            const double eta = ntklab::global_eta(config, strategy);

            const auto stepped = ntklab::gd_step(params, config, strategy, data, loss);
            double resid = 0.0;
            if (!ntk_target) {
                const auto actual = ntklab::forward(stepped, config, data).outputs();
                const auto pred = ntklab::taylor_predict_outputs(stack, trace, config, data,
                                                                 loss, eta, order);
                for (std::size_t i = 0; i < actual.size(); ++i) {
                    resid = std::max(resid, std::abs(actual[i] - pred[i]));
                }
            } else {
                const auto actual = ntklab::compute_kernels(stepped, config, strategy, data,
                                                            ntklab::KernelOrder::NTK);
                const auto pred = ntklab::taylor_predict_ntk(stack, trace, config, data, loss,
                                                             eta, order);
                const auto& Ha = actual.output().H;
                for (std::size_t i = 0; i < Ha.size(); ++i) {
                    resid = std::max(resid, std::abs(Ha[i] - pred[i]));
                }
            }
            csv << eta0 << ',' << order << ',' << resid << "\n";
            if (resid > 0.0) pts.push_back({eta0, resid});
        }
        if (pts.size() >= 3) {
            const auto fit = ntklab::fit_loglog_slope(pts);
            summary["slope_order_" + std::to_string(order)] = fit.slope;
            std::cout << "order " << order << ": residual slope " << fit.slope << " (stderr "
                      << fit.stderr_slope << ")\n";
        }
    }

    if (!out_dir.empty()) {
        const std::string csv_path = out_dir + "/train_verify.csv";
        std::ofstream os(csv_path);
        os << csv.str();
        manifest.outputs.push_back(csv_path);
        const std::string sum_path = out_dir + "/train_verify_summary.json";
        std::ofstream sj(sum_path);
        sj << summary.dump(2) << "\n";
        manifest.outputs.push_back(sum_path);
    } else {
        std::cout << csv.str();
    }
    return kExitOk;
}

int cmd_sweep(const std::string& config_path, const std::string& expect,
              const std::string& out_dir, int threads, ManifestWriter& manifest) {
    std::ifstream in(config_path);
    if (!in) {
        std::cerr << "cannot open config: " << config_path << "\n";
        return kExitUsage;
    }
    json cfg;
    try {
        in >> cfg;
    } catch (const std::exception& e) {
        std::cerr << "malformed config JSON: " << e.what() << "\n";
        return kExitUsage;
    }

    auto require = [&](const char* key) -> const json& {
        if (!cfg.contains(key)) {
            throw std::invalid_argument(std::string("config missing key: ") + key);
        }
        return cfg.at(key);
    };

    try {
        const std::string type = cfg.value("type", "width");
        const double s = require("s").get<double>();
        const int M = require("M").get<int>();
        const std::uint64_t seed = cfg.value("seed", 1ull);

        ntklab::SweepOptions opts;
        opts.activation = ntklab::Activation::from_name(cfg.value("activation", "tanh"));
        opts.n0 = cfg.value("n0", 16);
        opts.nL = cfg.value("nL", 1);
        opts.eta0 = cfg.value("eta0", 1.0);
        opts.threads = threads;
        opts.component_mean = cfg.value("component_mean", false);

        std::vector<ntklab::Observable> obs;
        if (cfg.contains("observable")) {
            if (cfg["observable"].is_array()) {
                for (const auto& o : cfg["observable"]) {
                    obs.push_back(ntklab::Observable::parse(o.get<std::string>()));
                }
            } else {
                obs.push_back(ntklab::Observable::parse(cfg["observable"].get<std::string>()));
            }
        }

        ntklab::SweepResult result;
        if (type == "width") {
            const auto widths = require("widths").get<std::vector<int>>();
            const int L = require("L").get<int>();
            result = ntklab::width_sweep(obs, s, L, widths, M, seed, opts);
        } else if (type == "depth") {
            const auto depths = require("depths").get<std::vector<int>>();
            const int n = require("n").get<int>();
            result = ntklab::depth_sweep(obs, s, n, depths, M, seed, opts);
        } else if (type == "hodiff") {
            const auto widths = require("widths").get<std::vector<int>>();
            const int m = require("m").get<int>();
            const std::string parity = require("parity").get<std::string>();
            result = ntklab::hodiff_sweep(
                m, parity == "odd" ? ntklab::Parity::Odd : ntklab::Parity::Even, s, widths, M,
                seed, opts);
        } else {
            std::cerr << "config key 'type' must be width|depth|hodiff\n";
            return kExitUsage;
        }

        std::ostringstream csv;
        csv << "s,n,L,M,observable,mean,stderr\n";
        for (const auto& row : result.rows) {
            csv << row.s << ',' << row.n << ',' << row.L << ',' << row.M << ','
                << row.observable << ',' << row.mean << ',' << row.stderror << "\n";
        }
        json summary = json::array();
        for (const auto& fit : result.fits) {
            summary.push_back({{"observable", fit.observable},
                               {"slope", fit.slope},
                               {"slope_stderr", fit.slope_stderr},
                               {"intercept", fit.intercept},
                               {"points", fit.points},
                               {"valid", fit.valid}});
            std::cout << fit.observable << ": slope " << fit.slope << " +- "
                      << fit.slope_stderr << " over " << fit.points << " points\n";
        }

        if (!out_dir.empty()) {
            const std::string csv_path = out_dir + "/sweep.csv";
            std::ofstream os(csv_path);
            os << csv.str();
            manifest.outputs.push_back(csv_path);
            const std::string sum_path = out_dir + "/sweep_summary.json";
            std::ofstream sj(sum_path);
            sj << summary.dump(2) << "\n";
            manifest.outputs.push_back(sum_path);
        } else {
            std::cout << csv.str();
        }

        if (!expect.empty()) {
            const auto colon = expect.find(':');
            if (colon == std::string::npos) {
                std::cerr << "--expect wants slope:tol\n";
                return kExitUsage;
            }
            const double slope = std::stod(expect.substr(0, colon));
            const double tol = std::stod(expect.substr(colon + 1));
            for (const auto& fit : result.fits) {
                if (!fit.valid || std::abs(fit.slope - slope) > tol) {
                    std::cout << "EXPECT FAILED: " << fit.observable << " slope " << fit.slope
                              << " not within " << tol << " of " << slope << "\n";
                    return kExitAssert;
                }
            }
            std::cout << "expectation met: slope within " << tol << " of " << slope << "\n";
        }
        return kExitOk;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"finite-width NTK scaling laboratory"};
    app.require_subcommand(1);

    // family
    double s = 0.0, r = 0.0, gauge = 0.0;
    int L = 2;
    std::string p_csv, q_csv, format = "table";
    bool to_abc_flag = false, validate = false;
    auto* family = app.add_subcommand("family", "scaling-strategy exponent algebra");
    family->add_option("--s", s, "metaparameter s in [0,1]");
    family->add_option("--L", L, "depth");
    auto* popt = family->add_option("--p", p_csv, "explicit p exponents, comma-separated");
    family->add_option("--q", q_csv, "explicit q exponents, comma-separated");
    family->add_option("--r", r, "explicit r exponent");
    auto* gopt = family->add_option("--gauge", gauge, "apply gauge shift g");
    family->add_flag("--to-abc", to_abc_flag, "print the abc-parametrization");
    family->add_flag("--validate", validate, "check the three meta-principle constraints");
    family->add_option("--format", format, "table|json");

    // kernels
    InstanceFlags kf;
    std::string order_name = "ddntk", out_dir;
    int dump_layer = 0;
    double budget_gb = 6.0;
    bool streaming = false;
    auto* kernels = app.add_subcommand("kernels", "compute one instance's kernel stack");
    add_instance_flags(kernels, kf);
    kernels->add_option("--order", order_name, "ntk|dntk|ddntk");
    kernels->add_option("--dump-layer", dump_layer, "emit one layer's tensors as CSV");
    kernels->add_option("--out", out_dir, "output directory");
    kernels->add_option("--budget-gb", budget_gb, "memory budget in GiB");
    kernels->add_flag("--streaming", streaming, "per-sample-tuple streaming mode");

    // oracle-check
    InstanceFlags of;
    of.n = 4;
    of.L = 3;
    of.n0 = 3;
    int count = 1;
    double tol = 1e-10;
    auto* oracle = app.add_subcommand("oracle-check",
                                      "recursion vs definition-based kernels");
    add_instance_flags(oracle, of);
    oracle->add_option("--count", count, "number of instances");
    oracle->add_option("--tol", tol, "max relative error tolerance");

    // train-verify
    InstanceFlags tf;
    tf.n = 16;
    tf.L = 3;
    tf.D = 4;
    int max_order = 3, eta_count = 8;
    double eta_lo = 1e-2, eta_hi = 1e-1;
    std::string target = "outputs", tv_out;
    auto* train = app.add_subcommand("train-verify",
                                     "Taylor-truncation error orders for one GD step");
    add_instance_flags(train, tf);
    train->add_option("--order", max_order, "highest truncation order to scan");
    train->add_option("--target", target, "outputs|ntk");
    train->add_option("--eta-min", eta_lo, "smallest eta0");
    train->add_option("--eta-max", eta_hi, "largest eta0");
    train->add_option("--eta-count", eta_count, "number of log-spaced eta0 values");
    train->add_option("--out", tv_out, "output directory");

    // sweep
    std::string sweep_config, expect, sweep_out;
    int threads = 0;
    auto* sweep = app.add_subcommand("sweep", "Monte Carlo scaling-exponent sweeps");
    sweep->add_option("--config", sweep_config, "sweep config JSON")->required();
    sweep->add_option("--expect", expect, "assert fitted slope, format slope:tol");
    sweep->add_option("--out", sweep_out, "output directory");
    sweep->add_option("--threads", threads, "ensemble worker threads (0 = cores)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp") {
            return app.exit(e);
        }
        app.exit(e);
        return kExitUsage;
    }

    ManifestWriter manifest;
    manifest.started = std::chrono::steady_clock::now();

    try {
        int rc = kExitOk;
        if (app.got_subcommand(family)) {
            rc = cmd_family(s, L, p_csv, q_csv, r, popt->count() > 0, gauge, gopt->count() > 0,
                            to_abc_flag, validate, format);
        } else if (app.got_subcommand(kernels)) {
            if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
            manifest.subcommand = "kernels";
            manifest.seed = kf.seed;
            manifest.config = json{{"n", kf.n},   {"L", kf.L},     {"D", kf.D},
                                   {"n0", kf.n0}, {"nL", kf.nL},   {"act", kf.act},
                                   {"s", kf.s},   {"order", order_name},
                                   {"streaming", streaming}};
            rc = cmd_kernels(kf, order_name, dump_layer, out_dir, budget_gb, streaming,
                             manifest);
            if (!out_dir.empty()) manifest.write(out_dir);
        } else if (app.got_subcommand(oracle)) {
            rc = cmd_oracle_check(of, count, tol);
        } else if (app.got_subcommand(train)) {
            if (!tv_out.empty()) std::filesystem::create_directories(tv_out);
            manifest.subcommand = "train-verify";
            manifest.seed = tf.seed;
            manifest.config = json{{"n", tf.n},   {"L", tf.L}, {"D", tf.D},
                                   {"act", tf.act}, {"s", tf.s}, {"order", max_order},
                                   {"target", target}};
            rc = cmd_train_verify(tf, max_order, target, eta_lo, eta_hi, eta_count, tv_out,
                                  manifest);
            if (!tv_out.empty()) manifest.write(tv_out);
        } else if (app.got_subcommand(sweep)) {
            if (!sweep_out.empty()) std::filesystem::create_directories(sweep_out);
            manifest.subcommand = "sweep";
            manifest.config = json{{"config_path", sweep_config}, {"expect", expect}};
            rc = cmd_sweep(sweep_config, expect, sweep_out, threads, manifest);
            if (!sweep_out.empty()) manifest.write(sweep_out);
        }
        return rc;
    } catch (const ntklab::resource_error& e) {
        std::cerr << "resource error: " << e.what() << "\n";
        return kExitResource;
    } catch (const CLI::ValidationError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitAssert;
    }
}
