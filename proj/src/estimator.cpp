#include "ntklab/estimator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "ntklab/oracle.hpp"

namespace ntklab {

namespace {

constexpr std::uint64_t kDatasetStream = 0xD474A5E7ull;

struct Needs {
    KernelOrderFlags flags;
    bool kernels = false;
    int max_hodiff_k = 0;  // 0 = none
    int max_layer = 0;
};

Needs analyze(std::span<const Observable> obs) {
    Needs needs;
    for (const auto& o : obs) {
        switch (o.kind) {
            case Observable::Kind::PreactSq: break;
            case Observable::Kind::NtkMean: needs.kernels = true; break;
            case Observable::Kind::ZDntk:
                needs.kernels = true;
                needs.flags.dntk = true;
                break;
            case Observable::Kind::Ddntk1Mean:
                needs.kernels = true;
                needs.flags.dntk = true;
                needs.flags.ddI = true;
                break;
            case Observable::Kind::Ddntk2Mean:
                needs.kernels = true;
                needs.flags.dntk = true;
                needs.flags.ddII = true;
                break;
            case Observable::Kind::HodiffEven:
                needs.max_hodiff_k = std::max(needs.max_hodiff_k, 2 * o.m + 1);
                break;
            case Observable::Kind::HodiffOdd:
                needs.max_hodiff_k = std::max(needs.max_hodiff_k, 2 * o.m);
                break;
        }
    }
    return needs;
}

double diag_component_mean(const Tensor& T, std::size_t nI, std::size_t nD, int slots) {
    // mean over components with all neural indices equal and all samples equal
    double acc = 0.0;
    std::size_t cnt = 0;
    for (std::size_t i = 0; i < nI; ++i) {
        std::size_t flat = 0;
        for (int t = 0; t < slots; ++t) flat = flat * nI + i;
        for (std::size_t d = 0; d < nD; ++d) {
            std::size_t f = flat;
            for (int t = 0; t < slots; ++t) f = f * nD + d;
            acc += T[f];
            ++cnt;
        }
    }
    return acc / static_cast<double>(cnt);
}

} // namespace

std::string Observable::name() const {
    switch (kind) {
        case Kind::PreactSq: return "preact_sq(" + std::to_string(layer) + ")";
        case Kind::NtkMean: return "ntk_mean(" + std::to_string(layer) + ")";
        case Kind::ZDntk: return "z_dntk";
        case Kind::Ddntk1Mean: return "ddntk1_mean";
        case Kind::Ddntk2Mean: return "ddntk2_mean";
        case Kind::HodiffEven: return "hodiff_even(" + std::to_string(m) + ")";
        case Kind::HodiffOdd: return "hodiff_odd(" + std::to_string(m) + ")";
    }
    return "?";
}

Observable Observable::parse(const std::string& name) {
    auto parens = [&](const std::string& prefix, int& out) {
        if (name.rfind(prefix + "(", 0) == 0 && name.back() == ')') {
            out = std::stoi(name.substr(prefix.size() + 1,
                                        name.size() - prefix.size() - 2));
            return true;
        }
        return false;
    };
    int arg = 0;
    if (parens("preact_sq", arg)) return preact_sq(arg);
    if (parens("ntk_mean", arg)) return ntk_mean(arg);
    if (name == "z_dntk") return z_dntk();
    if (name == "ddntk1_mean") return ddntk1_mean();
    if (name == "ddntk2_mean") return ddntk2_mean();
    if (parens("hodiff_even", arg)) return hodiff(arg, Parity::Even);
    if (parens("hodiff_odd", arg)) return hodiff(arg, Parity::Odd);
    throw std::invalid_argument("unknown observable: " + name);
}

std::vector<double> evaluate_observables(std::span<const Observable> obs,
                                         const NetworkConfig& config,
                                         const ScalingStrategy& strategy, const Dataset& data,
                                         RngStream& stream, bool component_mean) {
    const Needs needs = analyze(obs);
    const int L = config.depth();
    const std::size_t D = data.count;
    const double eta = global_eta(config, strategy);

    const NetworkParams params = init_params(config, strategy, stream);
    const ForwardTrace trace = forward(params, config, data);

    KernelStack stack;
    if (needs.kernels) {
        KernelOptions opts;
        opts.keep_hidden_higher = false;
        stack = compute_kernels(params, config, strategy, data, needs.flags, opts);
    }

    std::vector<Tensor> hodiff_cache(6);
    std::vector<bool> hodiff_have(6, false);
    auto hodiff_tensor = [&](int k) -> const Tensor& {
        if (!hodiff_have[k]) {
            hodiff_cache[k] = onehidden_typeI(params, config, strategy, data, k);
            hodiff_have[k] = true;
        }
        return hodiff_cache[k];
    };

    std::vector<double> values;
    values.reserve(obs.size());
    for (const auto& o : obs) {
        double v = 0.0;
        switch (o.kind) {
            case Observable::Kind::PreactSq: {
                if (o.layer < 1 || o.layer > L) {
                    throw std::invalid_argument("preact_sq layer out of range");
                }
                const auto& z = trace.z[o.layer - 1];
                if (component_mean) {
                    const std::size_t nl = z.size() / D;
                    double acc = 0.0;
                    for (double zv : z) acc += zv * zv;
                    v = acc / static_cast<double>(nl * D);
                } else {
                    v = z[0] * z[0];
                }
                break;
            }
            case Observable::Kind::NtkMean: {
                if (o.layer < 1 || o.layer > L) {
                    throw std::invalid_argument("ntk_mean layer out of range");
                }
                const auto& lk = stack.layer(o.layer);
                v = component_mean ? diag_component_mean(lk.H, lk.n, D, 2)
                                   : lk.H[0];
                break;
            }
            case Observable::Kind::ZDntk: {
                const auto& top = stack.output();
                if (top.dH.has_value()) {
                    const double dh = component_mean
                                          ? diag_component_mean(*top.dH, top.n, D, 3)
                                          : (*top.dH)[0];
                    const double z = trace.outputs()[0];
                    v = z * eta * eta * dh;
                } else {
                    v = 0.0;  // dNTK vanishes for L = 1
                }
                break;
            }
            case Observable::Kind::Ddntk1Mean: {
                const auto& top = stack.output();
                v = top.ddI.has_value()
                        ? eta * eta * eta *
                              (component_mean ? diag_component_mean(*top.ddI, top.n, D, 4)
                                              : (*top.ddI)[0])
                        : 0.0;
                break;
            }
            case Observable::Kind::Ddntk2Mean: {
                const auto& top = stack.output();
                v = top.ddII.has_value()
                        ? eta * eta * eta *
                              (component_mean ? diag_component_mean(*top.ddII, top.n, D, 4)
                                              : (*top.ddII)[0])
                        : 0.0;
                break;
            }
            case Observable::Kind::HodiffEven: {
                const int k = 2 * o.m + 1;
                const auto& T = hodiff_tensor(k);
                const double t = component_mean
                                     ? diag_component_mean(
                                           T, static_cast<std::size_t>(config.widths[L]), D,
                                           k + 1)
                                     : T[0];
                v = std::pow(eta, k) * t;
                break;
            }
            case Observable::Kind::HodiffOdd: {
                const int k = 2 * o.m;
                const auto& T = hodiff_tensor(k);
                const double t = component_mean
                                     ? diag_component_mean(
                                           T, static_cast<std::size_t>(config.widths[L]), D,
                                           k + 1)
                                     : T[0];
                v = std::pow(eta, k) * trace.outputs()[0] * t;
                break;
            }
        }
        values.push_back(v);
    }
    return values;
}

std::vector<EnsembleResult> ensemble_expectation(std::span<const Observable> obs,
                                                 const NetworkConfig& config,
                                                 const ScalingStrategy& strategy,
                                                 const Dataset& data, int M,
                                                 std::uint64_t root_seed,
                                                 std::uint64_t stream_base,
                                                 const EnsembleOptions& options) {
    if (M < 2) {
        throw std::invalid_argument("ensemble needs M >= 2");
    }
    const std::size_t K = obs.size();
    std::vector<std::vector<double>> values(static_cast<std::size_t>(M));

    int threads = options.threads > 0
                      ? options.threads
                      : static_cast<int>(std::thread::hardware_concurrency());
    threads = std::max(1, std::min(threads, M));

    std::atomic<int> next{0};
    std::atomic<bool> failed{false};
    std::string error_message;
    std::mutex error_mutex;

    auto worker = [&]() {
        while (true) {
            const int member = next.fetch_add(1);
            if (member >= M || failed.load()) break;
            try {
                RngStream stream(root_seed, stream_base + static_cast<std::uint64_t>(member));
                values[member] =
                    evaluate_observables(obs, config, strategy, data, stream,
                                         options.component_mean);
            } catch (const numeric_error&) {
                values[member].clear();  // flagged as excluded
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(error_mutex);
                error_message = e.what();
                failed.store(true);
                break;
            }
        }
    };

    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(threads);
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failed.load()) {
        throw std::runtime_error("ensemble member failed: " + error_message);
    }

    // deterministic fold over member index
    std::vector<EnsembleResult> results(K);
    for (std::size_t k = 0; k < K; ++k) {
        std::vector<double> good;
        good.reserve(static_cast<std::size_t>(M));
        int excluded = 0;
        for (int member = 0; member < M; ++member) {
            if (values[member].empty() || !std::isfinite(values[member][k])) {
                ++excluded;
            } else {
                good.push_back(values[member][k]);
            }
        }
        if (static_cast<double>(excluded) >
            options.max_exclusion_fraction * static_cast<double>(M)) {
            throw std::runtime_error("ensemble: " + std::to_string(excluded) + " of " +
                                     std::to_string(M) + " members non-finite");
        }
        const auto used = static_cast<double>(good.size());
        double mean = 0.0;
        for (double v : good) mean += v;
        mean /= used;
        double var = 0.0;
        for (double v : good) var += (v - mean) * (v - mean);
        var = good.size() > 1 ? var / (used - 1.0) : 0.0;
        results[k].mean = mean;
        results[k].stderror = std::sqrt(var / used);
        results[k].used = static_cast<int>(good.size());
        results[k].excluded = excluded;
    }
    return results;
}

EnsembleResult ensemble_expectation(const Observable& obs, const NetworkConfig& config,
                                    const ScalingStrategy& strategy, const Dataset& data,
                                    int M, std::uint64_t root_seed,
                                    const EnsembleOptions& options) {
    const Observable arr[1] = {obs};
    return ensemble_expectation(std::span<const Observable>(arr, 1), config, strategy, data, M,
                                root_seed, 0, options)[0];
}

namespace {

SweepResult run_sweep(std::span<const Observable> obs, double s,
                      std::span<const int> xs, bool vary_width, int fixed, int M,
                      std::uint64_t root_seed, const SweepOptions& options,
                      bool inverse_depth_lambda) {
    SweepResult result;

    RngStream data_stream(root_seed, kDatasetStream);
    Dataset data = make_unit_norm_dataset(1, static_cast<std::size_t>(options.n0), data_stream);

    EnsembleOptions eopts;
    eopts.threads = options.threads;
    eopts.component_mean = options.component_mean;

    for (std::size_t xi = 0; xi < xs.size(); ++xi) {
        const int n = vary_width ? xs[xi] : fixed;
        const int L = vary_width ? fixed : xs[xi];
        const double lam = inverse_depth_lambda ? 1.0 / static_cast<double>(L) : 1.0;
        NetworkConfig config = NetworkConfig::make(options.n0, n, options.nL, L,
                                                   options.activation, lam, options.eta0);
        const ScalingStrategy strategy = derive_meta_family(s, L);
        const std::uint64_t base = (static_cast<std::uint64_t>(xi) + 1) << 32;
        const auto res =
            ensemble_expectation(obs, config, strategy, data, M, root_seed, base, eopts);
        for (std::size_t k = 0; k < obs.size(); ++k) {
            SweepRow row;
            row.s = s;
            row.n = n;
            row.L = L;
            row.M = M;
            row.observable = obs[k].name();
            row.mean = res[k].mean;
            row.stderror = res[k].stderror;
            row.flagged = std::abs(row.mean) <= 2.0 * row.stderror;
            result.rows.push_back(row);
        }
    }

    for (const auto& o : obs) {
        SweepFit fit;
        fit.observable = o.name();
        std::vector<std::pair<double, double>> pts;
        for (const auto& row : result.rows) {
            if (row.observable != o.name() || row.flagged) continue;
            pts.push_back({static_cast<double>(vary_width ? row.n : row.L),
                           std::abs(row.mean)});
        }
        fit.points = static_cast<int>(pts.size());
        if (pts.size() >= 3) {
            const auto f = fit_loglog_slope(pts);
            fit.slope = f.slope;
            fit.slope_stderr = f.stderr_slope;
            fit.intercept = f.intercept;
            fit.valid = true;
        }
        result.fits.push_back(fit);
    }
    return result;
}

} // namespace

SweepResult width_sweep(std::span<const Observable> obs, double s, int L,
                        std::span<const int> widths, int M, std::uint64_t root_seed,
                        const SweepOptions& options) {
    if (widths.size() < 3) {
        throw std::invalid_argument("width sweep needs at least 3 widths");
    }
    for (std::size_t i = 1; i < widths.size(); ++i) {
        if (widths[i] <= widths[i - 1]) {
            throw std::invalid_argument("widths must be strictly increasing");
        }
    }
    return run_sweep(obs, s, widths, /*vary_width=*/true, L, M, root_seed, options,
                     /*inverse_depth_lambda=*/false);
}

SweepResult depth_sweep(std::span<const Observable> obs, double s, int n,
                        std::span<const int> depths, int M, std::uint64_t root_seed,
                        const SweepOptions& options) {
    if (depths.size() < 3) {
        throw std::invalid_argument("depth sweep needs at least 3 depths");
    }
    for (std::size_t i = 1; i < depths.size(); ++i) {
        if (depths[i] <= depths[i - 1]) {
            throw std::invalid_argument("depths must be strictly increasing");
        }
    }
    return run_sweep(obs, s, depths, /*vary_width=*/false, n, M, root_seed, options,
                     /*inverse_depth_lambda=*/true);
}

SweepResult hodiff_sweep(int m, Parity parity, double s, std::span<const int> widths, int M,
                         std::uint64_t root_seed, const SweepOptions& options) {
    if (m < 1 || m > 2) {
        throw std::invalid_argument("hodiff sweep supports m in {1, 2}");
    }
    const Observable obs[1] = {Observable::hodiff(m, parity)};
    return width_sweep(std::span<const Observable>(obs, 1), s, /*L=*/2, widths, M, root_seed,
                       options);
}

} // namespace ntklab
