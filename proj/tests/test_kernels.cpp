#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "ntklab/kernels.hpp"
#include "ntklab/network.hpp"

using namespace ntklab;

namespace {

NetworkConfig uniform_config(int n0, int hidden, int nL, int L, const char* act,
                             double lam = 1.0) {
    return NetworkConfig::make(n0, hidden, nL, L, Activation::from_name(act), lam);
}

Dataset ones_dataset(std::size_t count, std::size_t n0) {
    Dataset d;
    d.input_dim = n0;
    d.count = count;
    d.inputs.assign(count * n0, 1.0);
    return d;
}

NetworkParams ones_params(const NetworkConfig& cfg) {
    NetworkParams p;
    const int L = cfg.depth();
    p.biases.resize(L);
    p.weights.resize(L);
    for (int l = 1; l <= L; ++l) {
        p.biases[l - 1].assign(cfg.widths[l], 1.0);
        p.weights[l - 1].assign(static_cast<std::size_t>(cfg.widths[l]) * cfg.widths[l - 1],
                                1.0);
    }
    return p;
}

double rel_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.size() == b.size());
    const double scale = std::max(b.max_abs(), 1e-300);
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
    }
    return worst;
}

} // namespace

TEST_CASE("first-layer NTK closed form") {
    // zero inputs: lam_b times the neural identity for every sample pair
    {
        auto cfg = uniform_config(3, 4, 1, 2, "tanh");
        cfg.lam_b = {0.7, 1.0};
        Dataset d;
        d.input_dim = 3;
        d.count = 2;
        d.inputs.assign(6, 0.0);
        const auto H = ntk_first_layer(cfg, derive_meta_family(0.0, 2), d);
        for (std::size_t i0 = 0; i0 < 4; ++i0)
            for (std::size_t i1 = 0; i1 < 4; ++i1)
                for (std::size_t d0 = 0; d0 < 2; ++d0)
                    for (std::size_t d1 = 0; d1 < 2; ++d1) {
                        CHECK(H.at({i0, i1, d0, d1}) == (i0 == i1 ? 0.7 : 0.0));
                    }
    }
    // orthogonal inputs: off-diagonal sample entry 0, diagonal 1/2
    {
        auto cfg = uniform_config(2, 3, 1, 2, "tanh");
        cfg.lam_b = {0.0, 1.0};
        cfg.lam_w = {1.0, 1.0};
        Dataset d;
        d.input_dim = 2;
        d.count = 2;
        d.inputs = {1.0, 0.0, 0.0, 1.0};
        const auto H = ntk_first_layer(cfg, derive_meta_family(0.0, 2), d);
        CHECK(H.at({0, 0, 0, 1}) == 0.0);
        CHECK(H.at({0, 0, 0, 0}) == 0.5);
        CHECK(H.at({0, 0, 1, 1}) == 0.5);
        CHECK(H.at({1, 0, 0, 0}) == 0.0);  // diagonal in neural indices
    }
    // q_1 = 1 rescales every entry by 1/n
    {
        auto cfg = uniform_config(2, 10, 1, 2, "tanh");
        Dataset d;
        d.input_dim = 2;
        d.count = 1;
        d.inputs = {1.0, 1.0};
        ScalingStrategy base = derive_meta_family(0.0, 2);
        ScalingStrategy shifted = base;
        shifted.q = {1.0, 1.0};
        const auto H0 = ntk_first_layer(cfg, base, d);
        const auto H1 = ntk_first_layer(cfg, shifted, d);
        for (std::size_t i = 0; i < H0.size(); ++i) {
            CHECK(H1[i] == doctest::Approx(H0[i] / 10.0).epsilon(1e-15));
        }
    }
}

TEST_CASE("hand-computed stack for an all-ones linear 4-4-4-1 network") {
    auto cfg = uniform_config(4, 4, 1, 3, "linear");
    const auto strategy = derive_meta_family(0.0, 3);
    const auto params = ones_params(cfg);
    const auto data = ones_dataset(1, 4);

    const auto stack = compute_kernels(params, cfg, strategy, data, KernelOrder::DDNTK);

    const auto& H1 = stack.layer(1).H;
    for (std::size_t i0 = 0; i0 < 4; ++i0)
        for (std::size_t i1 = 0; i1 < 4; ++i1)
            CHECK(H1.at({i0, i1, 0, 0}) == (i0 == i1 ? 2.0 : 0.0));

    const auto& H2 = stack.layer(2).H;
    for (std::size_t i0 = 0; i0 < 4; ++i0)
        for (std::size_t i1 = 0; i1 < 4; ++i1)
            CHECK(H2.at({i0, i1, 0, 0}) == doctest::Approx(i0 == i1 ? 34.0 : 8.0));

    const auto& dH2 = *stack.layer(2).dH;
    CHECK(dH2.at({0, 0, 0, 0, 0, 0}) == doctest::Approx(20.0));
    CHECK(dH2.at({0, 0, 1, 0, 0, 0}) == doctest::Approx(10.0));
    CHECK(dH2.at({0, 1, 0, 0, 0, 0}) == doctest::Approx(10.0));
    CHECK(dH2.at({1, 0, 0, 0, 0, 0}) == doctest::Approx(0.0).scale(1.0));

    // linear activation: ddI vanishes one layer up from the bottom
    CHECK(stack.layer(2).ddI->max_abs() == doctest::Approx(0.0).scale(1.0));

    CHECK(stack.output().H[0] == doctest::Approx(674.0).epsilon(1e-13));
    CHECK((*stack.output().dH)[0] == doctest::Approx(2756.0).epsilon(1e-13));
    CHECK((*stack.output().ddI)[0] == doctest::Approx(5040.0).epsilon(1e-13));
    CHECK((*stack.output().ddII)[0] == doctest::Approx(13574.5).epsilon(1e-13));
}

TEST_CASE("linear activation keeps only the sigma'-bearing dNTK terms") {
    // with dH vanishing below, a linear step's dNTK is exactly the two
    // lambda-bearing terms of the forward equation; assemble them directly
    auto cfg = uniform_config(3, 5, 2, 2, "linear");
    const auto strategy = derive_meta_family(0.0, 2);
    RngStream stream(31, 0);
    const auto params = init_params(cfg, strategy, stream);
    RngStream dstream(31, 1);
    const auto data = make_unit_norm_dataset(2, 3, dstream);

    const auto stack = compute_kernels(params, cfg, strategy, data, KernelOrder::DNTK);
    const auto trace = forward(params, cfg, data);
    const auto& H1 = stack.layer(1).H;
    const auto& dH2 = *stack.layer(2).dH;

    const std::size_t n1 = 5, n2 = 2, D = 2;
    const double alpha = 1.0 / static_cast<double>(n1);  // lam_w / n_1, q_2 = 0
    const auto& W2 = params.weights[1];
    const auto& z1 = trace.z[0];

    for (std::size_t i0 = 0; i0 < n2; ++i0)
        for (std::size_t i1 = 0; i1 < n2; ++i1)
            for (std::size_t i2 = 0; i2 < n2; ++i2)
                for (std::size_t d0 = 0; d0 < D; ++d0)
                    for (std::size_t d1 = 0; d1 < D; ++d1)
                        for (std::size_t d2 = 0; d2 < D; ++d2) {
                            double t1 = 0.0, t2 = 0.0;
                            // sigma' = 1, sigma(z) = z for the linear activation
                            for (std::size_t j0 = 0; j0 < n1; ++j0)
                                for (std::size_t j = 0; j < n1; ++j) {
                                    if (i0 == i1) {
                                        t1 += W2[i2 * n1 + j] * z1[j0 * D + d1] *
                                              H1.at({j0, j, d0, d2});
                                    }
                                    if (i0 == i2) {
                                        t2 += W2[i1 * n1 + j] * z1[j0 * D + d2] *
                                              H1.at({j0, j, d0, d1});
                                    }
                                }
                            const double expected = alpha * (t1 + t2);
                            CHECK(dH2.at({i0, i1, i2, d0, d1, d2}) ==
                                  doctest::Approx(expected).epsilon(1e-12).scale(1.0));
                        }
}

TEST_CASE("zero weights one layer up kill the propagated terms") {
    auto cfg = uniform_config(3, 4, 2, 2, "tanh");
    const auto strategy = derive_meta_family(0.0, 2);
    RngStream stream(5, 0);
    auto params = init_params(cfg, strategy, stream);
    params.weights[1].assign(params.weights[1].size(), 0.0);
    RngStream dstream(5, 1);
    const auto data = make_unit_norm_dataset(2, 3, dstream);

    const auto stack = compute_kernels(params, cfg, strategy, data, KernelOrder::DNTK);
    const auto trace = forward(params, cfg, data);

    // H keeps only the additive first term
    const auto& H2 = stack.output().H;
    const auto& z1 = trace.z[0];
    for (std::size_t d0 = 0; d0 < 2; ++d0)
        for (std::size_t d1 = 0; d1 < 2; ++d1) {
            double dot = 0.0;
            for (std::size_t j = 0; j < 4; ++j) {
                dot += std::tanh(z1[j * 2 + d0]) * std::tanh(z1[j * 2 + d1]);
            }
            const double diag = 1.0 + dot / 4.0;
            for (std::size_t i0 = 0; i0 < 2; ++i0)
                for (std::size_t i1 = 0; i1 < 2; ++i1) {
                    CHECK(H2.at({i0, i1, d0, d1}) ==
                          doctest::Approx(i0 == i1 ? diag : 0.0).epsilon(1e-14).scale(1.0));
                }
        }
    // every dNTK term carries an explicit weight factor
    CHECK(stack.output().dH->max_abs() == 0.0);
}

TEST_CASE("single-layer network: stack is just the first-layer NTK") {
    NetworkConfig cfg;
    cfg.widths = {3, 2};
    cfg.activation = Activation::from_name("tanh");
    cfg.Cb = {1.0};
    cfg.Cw = {1.0};
    cfg.lam_b = {1.0};
    cfg.lam_w = {1.0};
    RngStream stream(2, 0);
    const auto params = init_params(cfg, derive_meta_family(0.0, 1), stream);
    RngStream dstream(2, 1);
    const auto data = make_unit_norm_dataset(2, 3, dstream);

    const auto stack = compute_kernels(params, cfg, derive_meta_family(0.0, 1), data,
                                       KernelOrder::DDNTK);
    CHECK(stack.depth() == 1);
    CHECK(stack.layer(1).flags.dntk);
    CHECK(stack.layer(1).dH_is_zero());
    CHECK(stack.layer(1).ddI_is_zero());
    CHECK(stack.layer(1).ddII_is_zero());
    const auto direct = ntk_first_layer(cfg, derive_meta_family(0.0, 1), data);
    CHECK(rel_diff(stack.layer(1).H, direct) == 0.0);
}

TEST_CASE("kernel symmetries on random instances") {
    RngStream seeds(77, 0);
    for (const char* act : {"linear", "tanh", "gelu"}) {
        auto cfg = uniform_config(3, 6, 3, 3, act);
        ScalingStrategy strategy = derive_meta_family(0.5, 3);
        RngStream stream(91, seeds.draws());
        const auto params = init_params(cfg, strategy, stream);
        RngStream dstream(92, 0);
        const auto data = make_unit_norm_dataset(2, 3, dstream);

        const auto stack = compute_kernels(params, cfg, strategy, data, KernelOrder::DDNTK);
        const std::size_t n = 3, D = 2;
        const auto& top = stack.output();

        double worst = 0.0;
        const double scale_H = top.H.max_abs();
        for (std::size_t i0 = 0; i0 < n; ++i0)
            for (std::size_t i1 = 0; i1 < n; ++i1)
                for (std::size_t d0 = 0; d0 < D; ++d0)
                    for (std::size_t d1 = 0; d1 < D; ++d1)
                        worst = std::max(worst,
                                         std::abs(top.H.at({i0, i1, d0, d1}) -
                                                  top.H.at({i1, i0, d1, d0})) /
                                             scale_H);
        CHECK(worst <= 1e-12);

        // dH symmetric under joint swap of the two first-derivative slots
        worst = 0.0;
        const double scale_dH = std::max(top.dH->max_abs(), 1e-300);
        for (std::size_t i0 = 0; i0 < n; ++i0)
            for (std::size_t i1 = 0; i1 < n; ++i1)
                for (std::size_t i2 = 0; i2 < n; ++i2)
                    for (std::size_t d0 = 0; d0 < D; ++d0)
                        for (std::size_t d1 = 0; d1 < D; ++d1)
                            for (std::size_t d2 = 0; d2 < D; ++d2)
                                worst = std::max(
                                    worst, std::abs(top.dH->at({i0, i1, i2, d0, d1, d2}) -
                                                    top.dH->at({i0, i2, i1, d0, d2, d1})) /
                                               scale_dH);
        CHECK(worst <= 1e-12);

        // ddI symmetric under any permutation of slots 1, 2, 3
        worst = 0.0;
        const double scale_ddI = std::max(top.ddI->max_abs(), 1e-300);
        const int perms[5][3] = {{0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
        for (std::size_t i0 = 0; i0 < n; ++i0)
            for (std::size_t i1 = 0; i1 < n; ++i1)
                for (std::size_t i2 = 0; i2 < n; ++i2)
                    for (std::size_t i3 = 0; i3 < n; ++i3)
                        for (std::size_t d0 = 0; d0 < D; ++d0)
                            for (std::size_t d1 = 0; d1 < D; ++d1)
                                for (std::size_t d2 = 0; d2 < D; ++d2)
                                    for (std::size_t d3 = 0; d3 < D; ++d3) {
                                        const std::size_t iv[3] = {i1, i2, i3};
                                        const std::size_t dv[3] = {d1, d2, d3};
                                        const double ref =
                                            top.ddI->at({i0, i1, i2, i3, d0, d1, d2, d3});
                                        for (const auto& pm : perms) {
                                            const double alt = top.ddI->at(
                                                {i0, iv[pm[0]], iv[pm[1]], iv[pm[2]], d0,
                                                 dv[pm[0]], dv[pm[1]], dv[pm[2]]});
                                            worst = std::max(worst,
                                                             std::abs(ref - alt) / scale_ddI);
                                        }
                                    }
        CHECK(worst <= 1e-12);

        // ddII symmetric under swapping the slot pairs (0,2) <-> (1,3)
        worst = 0.0;
        const double scale_ddII = std::max(top.ddII->max_abs(), 1e-300);
        for (std::size_t i0 = 0; i0 < n; ++i0)
            for (std::size_t i1 = 0; i1 < n; ++i1)
                for (std::size_t i2 = 0; i2 < n; ++i2)
                    for (std::size_t i3 = 0; i3 < n; ++i3)
                        for (std::size_t d0 = 0; d0 < D; ++d0)
                            for (std::size_t d1 = 0; d1 < D; ++d1)
                                for (std::size_t d2 = 0; d2 < D; ++d2)
                                    for (std::size_t d3 = 0; d3 < D; ++d3) {
                                        const double a =
                                            top.ddII->at({i0, i1, i2, i3, d0, d1, d2, d3});
                                        const double b =
                                            top.ddII->at({i1, i0, i3, i2, d1, d0, d3, d2});
                                        worst = std::max(worst, std::abs(a - b) / scale_ddII);
                                    }
        CHECK(worst <= 1e-12);
    }
}

TEST_CASE("gauge transformation leaves eta-weighted tensors invariant") {
    RngStream grand(123, 0);
    for (int trial = 0; trial < 5; ++trial) {
        auto cfg = uniform_config(3, 5, 2, 3, "tanh");
        ScalingStrategy strategy = derive_meta_family(0.5, 3);
        // random strategy around the family
        for (auto& v : strategy.q) v += grand.gaussian() * 0.3;
        strategy.r += grand.gaussian() * 0.3;
        const double g = grand.gaussian();
        const auto gauged = gauge_transform(strategy, g);

        RngStream s1(55, trial), s2(55, trial);
        const auto p1 = init_params(cfg, strategy, s1);
        const auto p2 = init_params(cfg, gauged, s2);
        CHECK(p1.weights == p2.weights);  // init depends only on p

        RngStream dstream(56, 0);
        const auto data = make_unit_norm_dataset(2, 3, dstream);
        const auto stack1 = compute_kernels(p1, cfg, strategy, data, KernelOrder::DDNTK);
        const auto stack2 = compute_kernels(p2, cfg, gauged, data, KernelOrder::DDNTK);

        const double eta1 = global_eta(cfg, strategy);
        const double eta2 = global_eta(cfg, gauged);

        auto weighted_rel = [&](const Tensor& a, const Tensor& b, int power) {
            const double wa = std::pow(eta1, power), wb = std::pow(eta2, power);
            double scale = std::max(std::abs(wa) * a.max_abs(), 1e-300);
            double worst = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) {
                worst = std::max(worst, std::abs(wa * a[i] - wb * b[i]) / scale);
            }
            return worst;
        };
        const auto& t1 = stack1.output();
        const auto& t2 = stack2.output();
        CHECK(weighted_rel(t1.H, t2.H, 1) <= 1e-12);
        CHECK(weighted_rel(*t1.dH, *t2.dH, 2) <= 1e-12);
        CHECK(weighted_rel(*t1.ddI, *t2.ddI, 3) <= 1e-12);
        CHECK(weighted_rel(*t1.ddII, *t2.ddII, 3) <= 1e-12);
    }
}

TEST_CASE("streaming mode reproduces the dense stack") {
    auto cfg = uniform_config(3, 4, 2, 3, "tanh");
    const auto strategy = derive_meta_family(0.3, 3);
    RngStream stream(7, 0);
    const auto params = init_params(cfg, strategy, stream);
    RngStream dstream(7, 1);
    const auto data = make_unit_norm_dataset(3, 3, dstream);

    const auto dense = compute_kernels(params, cfg, strategy, data, KernelOrder::DDNTK);
    KernelOptions opts;
    opts.streaming = true;
    const auto streamed = compute_kernels(params, cfg, strategy, data, KernelOrder::DDNTK, opts);

    for (int l = 1; l <= 3; ++l) {
        CHECK(rel_diff(streamed.layer(l).H, dense.layer(l).H) == 0.0);
        if (l >= 2) {
            CHECK(rel_diff(*streamed.layer(l).dH, *dense.layer(l).dH) == 0.0);
            CHECK(rel_diff(*streamed.layer(l).ddI, *dense.layer(l).ddI) == 0.0);
            CHECK(rel_diff(*streamed.layer(l).ddII, *dense.layer(l).ddII) == 0.0);
        }
    }
}

TEST_CASE("memory budget breach is a resource error") {
    auto cfg = uniform_config(3, 64, 2, 3, "tanh");
    const auto strategy = derive_meta_family(0.0, 3);
    RngStream stream(1, 0);
    const auto params = init_params(cfg, strategy, stream);
    RngStream dstream(1, 1);
    const auto data = make_unit_norm_dataset(2, 3, dstream);

    KernelOptions opts;
    opts.memory_budget_bytes = 1 << 20;  // 1 MiB
    CHECK_THROWS_AS(compute_kernels(params, cfg, strategy, data, KernelOrder::DDNTK, opts),
                    resource_error);
}

TEST_CASE("ensemble mean of the NTK forward step matches the expectation identity") {
    // Monte Carlo check of the averaged forward equation: the mean
    // next-layer NTK equals the lambda term plus Cw times the mean of
    // sigma'^2 H_jj, within stderr.
    const int M = 2000;
    const int n = 64;
    auto cfg = uniform_config(8, n, 1, 2, "tanh");
    const auto strategy = derive_meta_family(0.5, 2);
    RngStream dstream(404, 0);
    const auto data = make_unit_norm_dataset(1, 8, dstream);

    double sum = 0.0, sumsq = 0.0;
    for (int member = 0; member < M; ++member) {
        RngStream stream(404, 1 + member);
        const auto params = init_params(cfg, strategy, stream);
        const auto trace = forward(params, cfg, data);
        const auto stack = compute_kernels(params, cfg, strategy, data, KernelOrder::NTK);

        const auto& z1 = trace.z[0];
        const auto& H1 = stack.layer(1).H;
        double mean_ss = 0.0, mean_dd = 0.0;
        for (int j = 0; j < n; ++j) {
            const double s0 = std::tanh(z1[j]);
            const double s1 = 1.0 - s0 * s0;
            mean_ss += s0 * s0;
            mean_dd += s1 * s1 * H1.at({(std::size_t)j, (std::size_t)j, 0, 0});
        }
        mean_ss /= n;
        mean_dd /= n;

        const double inv_nq2 = std::pow((double)n, -strategy.q[1]);
        const double inv_np2 = std::pow((double)n, -strategy.p[1]);
        const double rhs = inv_nq2 * (1.0 + mean_ss) + inv_np2 * cfg.Cw[1] * mean_dd;
        const double lhs = stack.output().H[0];
        const double diff = lhs - rhs;
        sum += diff;
        sumsq += diff * diff;
    }
    const double mean = sum / M;
    const double var = (sumsq - M * mean * mean) / (M - 1);
    const double stderror = std::sqrt(var / M);
    CHECK(std::abs(mean) <= 3.5 * stderror);
}
