#include "ntklab/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ntklab {

namespace {

// Y[p, i, s] = sum_j M[i, j] X[p, j, s] for X: P x d x S, M: m x d.
// S == 1 degenerates to row-by-row dot products.
void mode_product(const double* X, std::size_t P, std::size_t d, std::size_t S,
                  const double* M, std::size_t m, double* Y) {
    if (S == 1) {
        for (std::size_t p = 0; p < P; ++p) {
            const double* xrow = X + p * d;
            double* yrow = Y + p * m;
            for (std::size_t i = 0; i < m; ++i) {
                const double* mrow = M + i * d;
                double acc = 0.0;
                for (std::size_t j = 0; j < d; ++j) acc += mrow[j] * xrow[j];
                yrow[i] = acc;
            }
        }
        return;
    }
    for (std::size_t p = 0; p < P; ++p) {
        const double* xp = X + p * d * S;
        double* yp = Y + p * m * S;
        for (std::size_t i = 0; i < m; ++i) {
            const double* mrow = M + i * d;
            double* yrow = yp + i * S;
            std::fill(yrow, yrow + S, 0.0);
            for (std::size_t j = 0; j < d; ++j) {
                const double mij = mrow[j];
                if (mij == 0.0) continue;
                const double* xrow = xp + j * S;
                for (std::size_t s = 0; s < S; ++s) yrow[s] += mij * xrow[s];
            }
        }
    }
}

// Activation value and derivative tables, per-sample contiguous: sK[d*n + j].
struct SigmaTables {
    std::size_t n = 0, D = 0;
    std::vector<double> s0, s1, s2, s3;

    const double* row0(std::size_t d) const { return s0.data() + d * n; }
    const double* row1(std::size_t d) const { return s1.data() + d * n; }
    const double* row2(std::size_t d) const { return s2.data() + d * n; }
    const double* row3(std::size_t d) const { return s3.data() + d * n; }
};

SigmaTables build_sigma(const Activation& act, std::span<const double> z, std::size_t n,
                        std::size_t D) {
    SigmaTables t;
    t.n = n;
    t.D = D;
    t.s0.resize(n * D);
    t.s1.resize(n * D);
    t.s2.resize(n * D);
    t.s3.resize(n * D);
    double buf[6];
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t d = 0; d < D; ++d) {
            act.derivs(z[j * D + d], std::span<double, 6>(buf, 6));
            t.s0[d * n + j] = buf[0];
            t.s1[d * n + j] = buf[1];
            t.s2[d * n + j] = buf[2];
            t.s3[d * n + j] = buf[3];
        }
    }
    return t;
}

// Slice copies from the stored big tensors into per-sample-tuple scratch.
void slice_H(const Tensor& T, std::size_t n, std::size_t D, std::size_t d0, std::size_t d1,
             double* out) {
    const double* src = T.data() + d0 * D + d1;
    const std::size_t stride = D * D;
    const std::size_t nn = n * n;
    for (std::size_t k = 0; k < nn; ++k) out[k] = src[k * stride];
}

// out[a*n^2 + b*n + c] = dH[a, b, c; dA, dB, dC]
void slice_dH(const Tensor& T, std::size_t n, std::size_t D, std::size_t dA, std::size_t dB,
              std::size_t dC, double* out) {
    const double* src = T.data() + (dA * D + dB) * D + dC;
    const std::size_t stride = D * D * D;
    const std::size_t nnn = n * n * n;
    for (std::size_t k = 0; k < nnn; ++k) out[k] = src[k * stride];
}

// out[a*n^2 + c*n + b] = dH[a, b, c; dA, dB, dC]
void slice_dH_132(const Tensor& T, std::size_t n, std::size_t D, std::size_t dA, std::size_t dB,
                  std::size_t dC, double* out) {
    const double* src = T.data() + (dA * D + dB) * D + dC;
    const std::size_t stride = D * D * D;
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t c = 0; c < n; ++c)
                out[(a * n + c) * n + b] = src[((a * n + b) * n + c) * stride];
}

// out[b*n^2 + a*n + c] = dH[a, b, c; dA, dB, dC]
void slice_dH_213(const Tensor& T, std::size_t n, std::size_t D, std::size_t dA, std::size_t dB,
                  std::size_t dC, double* out) {
    const double* src = T.data() + (dA * D + dB) * D + dC;
    const std::size_t stride = D * D * D;
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t c = 0; c < n; ++c)
                out[(b * n + a) * n + c] = src[((a * n + b) * n + c) * stride];
}

void slice_dd(const Tensor& T, std::size_t n, std::size_t D, std::size_t d0, std::size_t d1,
              std::size_t d2, std::size_t d3, double* out) {
    const double* src = T.data() + ((d0 * D + d1) * D + d2) * D + d3;
    const std::size_t stride = D * D * D * D;
    const std::size_t n4 = n * n * n * n;
    for (std::size_t k = 0; k < n4; ++k) out[k] = src[k * stride];
}

struct StepContext {
    std::size_t n = 0;  // n_l
    std::size_t m = 0;  // n_{l+1}
    std::size_t D = 0;
    const double* W = nullptr;  // m x n
    double inv_nq = 1.0;        // n^{-q_{l+1}}
    double lam_b = 0.0, lam_w = 0.0;
    double alpha = 0.0;  // inv_nq * lam_w / n_l
    SigmaTables sig;
    std::vector<std::vector<double>> Ws1;  // per sample: W[i,j] * sigma'(z_{j;d})
    const LayerKernels* below = nullptr;
};

void step_H(const StepContext& c, LayerKernels& out) {
    const std::size_t n = c.n, m = c.m, D = c.D;
    std::vector<double> Hs(n * n), t1(m * n), t2(m * m);
    const double inv_n = 1.0 / static_cast<double>(n);

    for (std::size_t d0 = 0; d0 < D; ++d0) {
        for (std::size_t d1 = 0; d1 < D; ++d1) {
            slice_H(c.below->H, n, D, d0, d1, Hs.data());
            mode_product(Hs.data(), 1, n, n, c.Ws1[d0].data(), m, t1.data());
            mode_product(t1.data(), m, n, 1, c.Ws1[d1].data(), m, t2.data());

            const double* a0 = c.sig.row0(d0);
            const double* a1 = c.sig.row0(d1);
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += a0[j] * a1[j];
            const double diag = c.inv_nq * (c.lam_b + c.lam_w * inv_n * dot);

            double* dst = out.H.data();
            for (std::size_t i0 = 0; i0 < m; ++i0) {
                for (std::size_t i1 = 0; i1 < m; ++i1) {
                    double v = t2[i0 * m + i1];
                    if (i0 == i1) v += diag;
                    dst[((i0 * m + i1) * D + d0) * D + d1] = v;
                }
            }
        }
    }
}

void step_dH(const StepContext& c, LayerKernels& out) {
    const std::size_t n = c.n, m = c.m, D = c.D;
    const bool have_dH = c.below->dH.has_value();

    std::vector<double> H01(n * n), H02(n * n), dHt;
    if (have_dH) dHt.resize(n * n * n);
    std::vector<double> C3, B1, B2;
    if (have_dH) {
        C3.resize(n * n * n);
        B1.resize(m * n * n);
        B2.resize(m * m * n);
    }
    std::vector<double> B3(m * m * m);
    std::vector<double> A1(n * m), A2(n * m);
    std::vector<double> v1(n), v2(n), t1(m), t2(m);

    for (std::size_t d0 = 0; d0 < D; ++d0) {
        const double* s1_0 = c.sig.row1(d0);
        const double* s2_0 = c.sig.row2(d0);
        for (std::size_t d1 = 0; d1 < D; ++d1) {
            slice_H(c.below->H, n, D, d0, d1, H01.data());
            for (std::size_t d2 = 0; d2 < D; ++d2) {
                slice_H(c.below->H, n, D, d0, d2, H02.data());
                if (have_dH) slice_dH(*c.below->dH, n, D, d0, d1, d2, dHt.data());

                if (have_dH) {
                    for (std::size_t j0 = 0; j0 < n; ++j0) {
                        const double* h1 = H01.data() + j0 * n;
                        const double* h2 = H02.data() + j0 * n;
                        double* crow = C3.data() + j0 * n * n;
                        const double w2 = s2_0[j0];
                        const double w1 = s1_0[j0];
                        const double* drow = dHt.data() + j0 * n * n;
                        for (std::size_t j1 = 0; j1 < n; ++j1) {
                            const double h1v = w2 * h1[j1];
                            for (std::size_t j2 = 0; j2 < n; ++j2) {
                                crow[j1 * n + j2] = w1 * drow[j1 * n + j2] + h1v * h2[j2];
                            }
                        }
                    }
                    mode_product(C3.data(), 1, n, n * n, c.W, m, B1.data());
                    mode_product(B1.data(), m, n, n, c.Ws1[d1].data(), m, B2.data());
                    mode_product(B2.data(), m * m, n, 1, c.Ws1[d2].data(), m, B3.data());
                } else {
                    // no dNTK below: the sigma'' term is the only propagated
                    // one and factorizes through the shared j0 leg
                    mode_product(H01.data(), n, n, 1, c.Ws1[d1].data(), m, A1.data());
                    mode_product(H02.data(), n, n, 1, c.Ws1[d2].data(), m, A2.data());
                    std::fill(B3.begin(), B3.end(), 0.0);
                    for (std::size_t j0 = 0; j0 < n; ++j0) {
                        const double w2 = s2_0[j0];
                        if (w2 == 0.0) continue;
                        const double* a1r = A1.data() + j0 * m;
                        const double* a2r = A2.data() + j0 * m;
                        for (std::size_t i0 = 0; i0 < m; ++i0) {
                            const double coef = c.W[i0 * n + j0] * w2;
                            if (coef == 0.0) continue;
                            double* brow = B3.data() + i0 * m * m;
                            for (std::size_t i1 = 0; i1 < m; ++i1) {
                                const double ca = coef * a1r[i1];
                                double* bb = brow + i1 * m;
                                for (std::size_t i2 = 0; i2 < m; ++i2) bb[i2] += ca * a2r[i2];
                            }
                        }
                    }
                }

                // lambda-bearing additive terms
                const double* s0_1 = c.sig.row0(d1);
                const double* s0_2 = c.sig.row0(d2);
                std::fill(v1.begin(), v1.end(), 0.0);
                std::fill(v2.begin(), v2.end(), 0.0);
                for (std::size_t j0 = 0; j0 < n; ++j0) {
                    const double w1 = s1_0[j0] * s0_1[j0];
                    const double w2 = s1_0[j0] * s0_2[j0];
                    const double* h2 = H02.data() + j0 * n;
                    const double* h1 = H01.data() + j0 * n;
                    for (std::size_t j = 0; j < n; ++j) {
                        v1[j] += w1 * h2[j];
                        v2[j] += w2 * h1[j];
                    }
                }
                mode_product(v1.data(), 1, n, 1, c.Ws1[d2].data(), m, t1.data());
                mode_product(v2.data(), 1, n, 1, c.Ws1[d1].data(), m, t2.data());

                double* dst = out.dH->data();
                for (std::size_t i0 = 0; i0 < m; ++i0) {
                    for (std::size_t i1 = 0; i1 < m; ++i1) {
                        for (std::size_t i2 = 0; i2 < m; ++i2) {
                            double v = B3[(i0 * m + i1) * m + i2];
                            if (i0 == i1) v += c.alpha * t1[i2];
                            if (i0 == i2) v += c.alpha * t2[i1];
                            dst[((((i0 * m + i1) * m + i2) * D + d0) * D + d1) * D + d2] = v;
                        }
                    }
                }
            }
        }
    }
}

void step_ddI(const StepContext& c, LayerKernels& out) {
    const std::size_t n = c.n, m = c.m, D = c.D;
    const bool have_dH = c.below->dH.has_value();
    const bool have_ddI = c.below->ddI.has_value();

    const std::size_t n2 = n * n, n3 = n2 * n, n4 = n3 * n;
    std::vector<double> H01(n2), H02(n2), H03(n2);
    std::vector<double> E1, E2, E3t, E3, ddIt;
    if (have_dH) {
        E1.resize(n3);
        E2.resize(n3);
        E3t.resize(n3);
        E3.resize(n3);
    }
    if (have_ddI) ddIt.resize(n4);
    const bool dense = have_dH || have_ddI;
    std::vector<double> C4, M1, M2, M3;
    if (dense) {
        C4.resize(n4);
        M1.resize(m * n3);
        M2.resize(m * m * n2);
        M3.resize(m * m * m * n);
    }
    std::vector<double> out4(m * m * m * m);
    std::vector<double> A1(n * m), A2(n * m), A3(n * m);
    std::vector<double> Bt(n * m * n), Bt2(n * m * m);
    std::vector<double> acc2(m * m);

    for (std::size_t d0 = 0; d0 < D; ++d0) {
        const double* s1_0 = c.sig.row1(d0);
        const double* s2_0 = c.sig.row2(d0);
        const double* s3_0 = c.sig.row3(d0);
        for (std::size_t d1 = 0; d1 < D; ++d1) {
            for (std::size_t d2 = 0; d2 < D; ++d2) {
                for (std::size_t d3 = 0; d3 < D; ++d3) {
                    slice_H(c.below->H, n, D, d0, d1, H01.data());
                    slice_H(c.below->H, n, D, d0, d2, H02.data());
                    slice_H(c.below->H, n, D, d0, d3, H03.data());
                    if (have_dH) {
                        slice_dH(*c.below->dH, n, D, d0, d1, d2, E1.data());
                        slice_dH(*c.below->dH, n, D, d0, d2, d3, E2.data());
                        slice_dH_132(*c.below->dH, n, D, d0, d3, d1, E3t.data());
                        slice_dH(*c.below->dH, n, D, d0, d3, d1, E3.data());
                    }
                    if (have_ddI) slice_dd(*c.below->ddI, n, D, d0, d1, d2, d3, ddIt.data());

                    mode_product(H01.data(), n, n, 1, c.Ws1[d1].data(), m, A1.data());
                    mode_product(H02.data(), n, n, 1, c.Ws1[d2].data(), m, A2.data());
                    mode_product(H03.data(), n, n, 1, c.Ws1[d3].data(), m, A3.data());

                    if (dense) {
                        // propagation source: sigma' ddI + sigma''(dH (x) H,
                        // three pairings) + sigma''' H H H, hung on the j0 leg
                        for (std::size_t j0 = 0; j0 < n; ++j0) {
                            const double w1 = s1_0[j0], w2 = s2_0[j0], w3 = s3_0[j0];
                            const double* h1 = H01.data() + j0 * n;
                            const double* h2 = H02.data() + j0 * n;
                            const double* h3 = H03.data() + j0 * n;
                            double* cblk = C4.data() + j0 * n3;
                            for (std::size_t j1 = 0; j1 < n; ++j1) {
                                for (std::size_t j2 = 0; j2 < n; ++j2) {
                                    double* crow = cblk + (j1 * n + j2) * n;
                                    const double hh = w3 * h1[j1] * h2[j2];
                                    for (std::size_t j3 = 0; j3 < n; ++j3) {
                                        crow[j3] = hh * h3[j3];
                                    }
                                }
                            }
                            if (have_dH) {
                                const double* e1 = E1.data() + j0 * n2;
                                const double* e2 = E2.data() + j0 * n2;
                                const double* e3t = E3t.data() + j0 * n2;
                                for (std::size_t j1 = 0; j1 < n; ++j1) {
                                    for (std::size_t j2 = 0; j2 < n; ++j2) {
                                        double* crow = cblk + (j1 * n + j2) * n;
                                        const double a = w2 * e1[j1 * n + j2];
                                        const double b = w2 * h1[j1];
                                        const double* e2row = e2 + j2 * n;
                                        const double g = w2 * h2[j2];
                                        const double* e3row = e3t + j1 * n;
                                        for (std::size_t j3 = 0; j3 < n; ++j3) {
                                            crow[j3] +=
                                                a * h3[j3] + b * e2row[j3] + g * e3row[j3];
                                        }
                                    }
                                }
                            }
                            if (have_ddI) {
                                const double* dblk = ddIt.data() + j0 * n3;
                                for (std::size_t k = 0; k < n3; ++k) cblk[k] += w1 * dblk[k];
                            }
                        }

                        mode_product(C4.data(), 1, n, n3, c.W, m, M1.data());
                        mode_product(M1.data(), m, n, n2, c.Ws1[d1].data(), m, M2.data());
                        mode_product(M2.data(), m * m, n, n, c.Ws1[d2].data(), m, M3.data());
                        mode_product(M3.data(), m * m * m, n, 1, c.Ws1[d3].data(), m,
                                     out4.data());
                    } else {
                        // only the sigma''' H H H source survives; it
                        // factorizes through the shared j0 leg
                        std::fill(out4.begin(), out4.end(), 0.0);
                        for (std::size_t j0 = 0; j0 < n; ++j0) {
                            const double w3 = s3_0[j0];
                            if (w3 == 0.0) continue;
                            const double* a1r = A1.data() + j0 * m;
                            const double* a2r = A2.data() + j0 * m;
                            const double* a3r = A3.data() + j0 * m;
                            for (std::size_t i0 = 0; i0 < m; ++i0) {
                                const double coef = c.W[i0 * n + j0] * w3;
                                if (coef == 0.0) continue;
                                double* blk0 = out4.data() + i0 * m * m * m;
                                for (std::size_t i1 = 0; i1 < m; ++i1) {
                                    const double ca = coef * a1r[i1];
                                    double* blk1 = blk0 + i1 * m * m;
                                    for (std::size_t i2 = 0; i2 < m; ++i2) {
                                        const double cb = ca * a2r[i2];
                                        double* row = blk1 + i2 * m;
                                        for (std::size_t i3 = 0; i3 < m; ++i3) {
                                            row[i3] += cb * a3r[i3];
                                        }
                                    }
                                }
                            }
                        }
                    }

                    // lambda-bearing terms, one per slot a carrying delta_{i0 ia}
                    struct Pattern {
                        std::size_t a, b, cslot;
                        std::size_t da, db, dc;
                        const double* dh;  // [j0, jb, jc]
                        const double *Ab, *Ac;
                    };
                    const Pattern pats[3] = {
                        {1, 2, 3, d1, d2, d3, have_dH ? E2.data() : nullptr, A2.data(),
                         A3.data()},
                        {2, 3, 1, d2, d3, d1, have_dH ? E3.data() : nullptr, A3.data(),
                         A1.data()},
                        {3, 1, 2, d3, d1, d2, have_dH ? E1.data() : nullptr, A1.data(),
                         A2.data()},
                    };

                    for (const auto& pat : pats) {
                        const double* s0_a = c.sig.row0(pat.da);

                        std::fill(acc2.begin(), acc2.end(), 0.0);
                        for (std::size_t j0 = 0; j0 < n; ++j0) {
                            const double w = s0_a[j0] * s2_0[j0];
                            if (w != 0.0) {
                                const double* abr = pat.Ab + j0 * m;
                                const double* acr = pat.Ac + j0 * m;
                                for (std::size_t ib = 0; ib < m; ++ib) {
                                    const double wa = w * abr[ib];
                                    double* arow = acc2.data() + ib * m;
                                    for (std::size_t ic = 0; ic < m; ++ic)
                                        arow[ic] += wa * acr[ic];
                                }
                            }
                        }
                        if (have_dH) {
                            mode_product(pat.dh, n, n, n, c.Ws1[pat.db].data(), m, Bt.data());
                            mode_product(Bt.data(), n * m, n, 1, c.Ws1[pat.dc].data(), m,
                                         Bt2.data());
                            for (std::size_t j0 = 0; j0 < n; ++j0) {
                                const double w = s0_a[j0] * s1_0[j0];
                                if (w == 0.0) continue;
                                const double* brow = Bt2.data() + j0 * m * m;
                                for (std::size_t k = 0; k < m * m; ++k) acc2[k] += w * brow[k];
                            }
                        }

                        for (std::size_t i = 0; i < m; ++i) {
                            for (std::size_t ib = 0; ib < m; ++ib) {
                                for (std::size_t ic = 0; ic < m; ++ic) {
                                    std::size_t idx[4];
                                    idx[0] = i;
                                    idx[pat.a] = i;
                                    idx[pat.b] = ib;
                                    idx[pat.cslot] = ic;
                                    out4[((idx[0] * m + idx[1]) * m + idx[2]) * m + idx[3]] +=
                                        c.alpha * acc2[ib * m + ic];
                                }
                            }
                        }
                    }

                    double* dst = out.ddI->data();
                    const std::size_t doff = ((d0 * D + d1) * D + d2) * D + d3;
                    const std::size_t dstride = D * D * D * D;
                    for (std::size_t k = 0; k < m * m * m * m; ++k) {
                        dst[k * dstride + doff] = out4[k];
                    }
                }
            }
        }
    }
}

void step_ddII(const StepContext& c, LayerKernels& out) {
    const std::size_t n = c.n, m = c.m, D = c.D;
    const bool have_dH = c.below->dH.has_value();
    const bool have_ddII = c.below->ddII.has_value();

    const std::size_t n2 = n * n, n3 = n2 * n, n4 = n3 * n;
    std::vector<double> H01(n2), H02(n2), H13(n2), H10(n2);
    std::vector<double> F1, F2t;
    if (have_dH) {
        F1.resize(n3);
        F2t.resize(n3);
    }
    std::vector<double> ddIIt;
    if (have_ddII) ddIIt.resize(n4);
    const bool dense = have_dH || have_ddII;
    std::vector<double> C4, M1, M2, M3, CC;
    if (dense) {
        C4.resize(n4);
        M1.resize(m * n3);
        M2.resize(m * m * n2);
        M3.resize(m * m * m * n);
    } else {
        CC.resize(n * m * m);
    }
    std::vector<double> out4(m * m * m * m);
    std::vector<double> A2(n * m), A3(n * m), B1(n * m);
    std::vector<double> u(n), v(n), g0(n), h1(n);
    std::vector<double> T(n * m), P2(n2), Q(m * n), acc(m * m);

    for (std::size_t d0 = 0; d0 < D; ++d0) {
        const double* s1_0 = c.sig.row1(d0);
        const double* s2_0 = c.sig.row2(d0);
        for (std::size_t d1 = 0; d1 < D; ++d1) {
            const double* s1_1 = c.sig.row1(d1);
            const double* s2_1 = c.sig.row2(d1);
            for (std::size_t d2 = 0; d2 < D; ++d2) {
                const double* s0_2 = c.sig.row0(d2);
                for (std::size_t d3 = 0; d3 < D; ++d3) {
                    const double* s0_3 = c.sig.row0(d3);

                    slice_H(c.below->H, n, D, d0, d1, H01.data());
                    slice_H(c.below->H, n, D, d0, d2, H02.data());
                    slice_H(c.below->H, n, D, d1, d3, H13.data());
                    slice_H(c.below->H, n, D, d1, d0, H10.data());
                    if (have_dH) {
                        slice_dH(*c.below->dH, n, D, d0, d1, d2, F1.data());
                        slice_dH_213(*c.below->dH, n, D, d1, d0, d3, F2t.data());
                    }
                    if (have_ddII) slice_dd(*c.below->ddII, n, D, d0, d1, d2, d3, ddIIt.data());

                    mode_product(H02.data(), n, n, 1, c.Ws1[d2].data(), m, A2.data());
                    mode_product(H13.data(), n, n, 1, c.Ws1[d3].data(), m, A3.data());

                    if (dense) {
                        // propagation source on the (j0, j1) pair of legs
                        for (std::size_t j0 = 0; j0 < n; ++j0) {
                            const double* h01 = H01.data() + j0 * n;
                            const double* h02 = H02.data() + j0 * n;
                            double* cblk = C4.data() + j0 * n3;
                            const double* f2blk = have_dH ? F2t.data() + j0 * n2 : nullptr;
                            for (std::size_t j1 = 0; j1 < n; ++j1) {
                                const double* h13 = H13.data() + j1 * n;
                                double* crow2 = cblk + j1 * n2;
                                const double w22 = s2_0[j0] * s2_1[j1] * h01[j1];
                                for (std::size_t j2 = 0; j2 < n; ++j2) {
                                    double* crow = crow2 + j2 * n;
                                    const double hh = w22 * h02[j2];
                                    for (std::size_t j3 = 0; j3 < n; ++j3) {
                                        crow[j3] = hh * h13[j3];
                                    }
                                }
                                if (have_dH) {
                                    const double w12 = s1_0[j0] * s2_1[j1];
                                    const double* f1row = F1.data() + (j0 * n + j1) * n;
                                    const double w21 = s2_0[j0] * s1_1[j1];
                                    const double* f2row = f2blk + j1 * n;
                                    for (std::size_t j2 = 0; j2 < n; ++j2) {
                                        double* crow = crow2 + j2 * n;
                                        const double a = w12 * f1row[j2];
                                        const double b = w21 * h02[j2];
                                        for (std::size_t j3 = 0; j3 < n; ++j3) {
                                            crow[j3] += a * h13[j3] + b * f2row[j3];
                                        }
                                    }
                                }
                                if (have_ddII) {
                                    const double w11 = s1_0[j0] * s1_1[j1];
                                    const double* dblk = ddIIt.data() + (j0 * n + j1) * n2;
                                    for (std::size_t k = 0; k < n2; ++k) {
                                        crow2[k] += w11 * dblk[k];
                                    }
                                }
                            }
                        }

                        mode_product(C4.data(), 1, n, n3, c.W, m, M1.data());
                        mode_product(M1.data(), m, n, n2, c.W, m, M2.data());
                        mode_product(M2.data(), m * m, n, n, c.Ws1[d2].data(), m, M3.data());
                        mode_product(M3.data(), m * m * m, n, 1, c.Ws1[d3].data(), m,
                                     out4.data());
                    } else {
                        // only the sigma'' sigma'' H H H source survives; it
                        // factorizes through the (j0, j1) legs
                        std::fill(CC.begin(), CC.end(), 0.0);
                        for (std::size_t j0 = 0; j0 < n; ++j0) {
                            const double* h01 = H01.data() + j0 * n;
                            double* ccblk = CC.data() + j0 * m * m;
                            for (std::size_t j1 = 0; j1 < n; ++j1) {
                                const double h = h01[j1] * s2_1[j1];
                                if (h == 0.0) continue;
                                const double* a3r = A3.data() + j1 * m;
                                for (std::size_t i1 = 0; i1 < m; ++i1) {
                                    const double w = h * c.W[i1 * n + j1];
                                    if (w == 0.0) continue;
                                    double* ccrow = ccblk + i1 * m;
                                    for (std::size_t i3 = 0; i3 < m; ++i3) {
                                        ccrow[i3] += w * a3r[i3];
                                    }
                                }
                            }
                        }
                        std::fill(out4.begin(), out4.end(), 0.0);
                        for (std::size_t j0 = 0; j0 < n; ++j0) {
                            const double w0 = s2_0[j0];
                            if (w0 == 0.0) continue;
                            const double* a2r = A2.data() + j0 * m;
                            const double* ccblk = CC.data() + j0 * m * m;
                            for (std::size_t i0 = 0; i0 < m; ++i0) {
                                const double coef = c.W[i0 * n + j0] * w0;
                                if (coef == 0.0) continue;
                                double* blk0 = out4.data() + i0 * m * m * m;
                                for (std::size_t i1 = 0; i1 < m; ++i1) {
                                    const double* ccrow = ccblk + i1 * m;
                                    double* blk1 = blk0 + i1 * m * m;
                                    for (std::size_t i2 = 0; i2 < m; ++i2) {
                                        const double cb = coef * a2r[i2];
                                        double* row = blk1 + i2 * m;
                                        for (std::size_t i3 = 0; i3 < m; ++i3) {
                                            row[i3] += cb * ccrow[i3];
                                        }
                                    }
                                }
                            }
                        }
                    }

                    // term with two lambda insertions: delta_{i0 i2} delta_{i1 i3}
                    double tA = 0.0;
                    for (std::size_t j0 = 0; j0 < n; ++j0) {
                        const double a0 = s1_0[j0] * s0_2[j0];
                        if (a0 == 0.0) continue;
                        const double* h01 = H01.data() + j0 * n;
                        double dot = 0.0;
                        for (std::size_t j1 = 0; j1 < n; ++j1) {
                            dot += h01[j1] * (s1_1[j1] * s0_3[j1]);
                        }
                        tA += a0 * dot;
                    }
                    tA *= c.alpha * c.alpha;

                    // delta_{i0 i1} term
                    std::fill(acc.begin(), acc.end(), 0.0);
                    for (std::size_t j0 = 0; j0 < n; ++j0) {
                        const double w = s1_0[j0] * s1_1[j0];
                        if (w == 0.0) continue;
                        const double* a2r = A2.data() + j0 * m;
                        const double* a3r = A3.data() + j0 * m;
                        for (std::size_t i2 = 0; i2 < m; ++i2) {
                            const double wa = w * a2r[i2];
                            double* arow = acc.data() + i2 * m;
                            for (std::size_t i3 = 0; i3 < m; ++i3) arow[i3] += wa * a3r[i3];
                        }
                    }
                    std::vector<double> accB = acc;

                    // delta_{i0 i2} term
                    for (std::size_t j = 0; j < n; ++j) g0[j] = s0_2[j] * s1_0[j];
                    for (std::size_t j1 = 0; j1 < n; ++j1) {
                        const double* h10 = H10.data() + j1 * n;
                        double a = 0.0;
                        for (std::size_t j0 = 0; j0 < n; ++j0) a += h10[j0] * g0[j0];
                        u[j1] = a;
                    }
                    mode_product(H13.data(), n, n, 1, c.Ws1[d3].data(), m, B1.data());
                    for (std::size_t j1 = 0; j1 < n; ++j1) {
                        const double w = s2_1[j1] * u[j1];
                        const double* b1r = B1.data() + j1 * m;
                        double* trow = T.data() + j1 * m;
                        for (std::size_t i3 = 0; i3 < m; ++i3) trow[i3] = w * b1r[i3];
                    }
                    mode_product(T.data(), 1, n, m, c.W, m, acc.data());
                    if (have_dH) {
                        std::fill(P2.begin(), P2.end(), 0.0);
                        for (std::size_t j0 = 0; j0 < n; ++j0) {
                            const double g = g0[j0];
                            if (g == 0.0) continue;
                            const double* fblk = F2t.data() + j0 * n2;
                            for (std::size_t k = 0; k < n2; ++k) P2[k] += g * fblk[k];
                        }
                        mode_product(P2.data(), 1, n, n, c.Ws1[d1].data(), m, Q.data());
                        std::vector<double> accq(m * m);
                        mode_product(Q.data(), m, n, 1, c.Ws1[d3].data(), m, accq.data());
                        for (std::size_t k = 0; k < m * m; ++k) acc[k] += accq[k];
                    }
                    std::vector<double> accC = acc;

                    // delta_{i1 i3} term
                    for (std::size_t j = 0; j < n; ++j) h1[j] = s0_3[j] * s1_1[j];
                    for (std::size_t j0 = 0; j0 < n; ++j0) {
                        const double* h01 = H01.data() + j0 * n;
                        double a = 0.0;
                        for (std::size_t j1 = 0; j1 < n; ++j1) a += h01[j1] * h1[j1];
                        v[j0] = a;
                    }
                    for (std::size_t j0 = 0; j0 < n; ++j0) {
                        const double w = s2_0[j0] * v[j0];
                        const double* a2r = A2.data() + j0 * m;
                        double* trow = T.data() + j0 * m;
                        for (std::size_t i2 = 0; i2 < m; ++i2) trow[i2] = w * a2r[i2];
                    }
                    mode_product(T.data(), 1, n, m, c.W, m, acc.data());
                    if (have_dH) {
                        std::fill(P2.begin(), P2.end(), 0.0);
                        for (std::size_t j0 = 0; j0 < n; ++j0) {
                            const double* f1blk = F1.data() + j0 * n2;
                            double* prow = P2.data() + j0 * n;
                            for (std::size_t j1 = 0; j1 < n; ++j1) {
                                const double hw = h1[j1];
                                if (hw == 0.0) continue;
                                const double* f1row = f1blk + j1 * n;
                                for (std::size_t j2 = 0; j2 < n; ++j2) prow[j2] += hw * f1row[j2];
                            }
                        }
                        mode_product(P2.data(), 1, n, n, c.Ws1[d0].data(), m, Q.data());
                        std::vector<double> accq(m * m);
                        mode_product(Q.data(), m, n, 1, c.Ws1[d2].data(), m, accq.data());
                        for (std::size_t k = 0; k < m * m; ++k) acc[k] += accq[k];
                    }
                    const std::vector<double>& accD = acc;

                    for (std::size_t i0 = 0; i0 < m; ++i0) {
                        for (std::size_t i1 = 0; i1 < m; ++i1) {
                            out4[((i0 * m + i1) * m + i0) * m + i1] += tA;
                            double* blk = out4.data() + (i0 * m + i1) * m * m;
                            if (i0 == i1) {
                                const double* bb = accB.data();
                                for (std::size_t k = 0; k < m * m; ++k) blk[k] += c.alpha * bb[k];
                            }
                        }
                    }
                    for (std::size_t i = 0; i < m; ++i) {
                        for (std::size_t i1 = 0; i1 < m; ++i1) {
                            for (std::size_t i3 = 0; i3 < m; ++i3) {
                                out4[((i * m + i1) * m + i) * m + i3] +=
                                    c.alpha * accC[i1 * m + i3];
                            }
                        }
                    }
                    for (std::size_t i = 0; i < m; ++i) {
                        for (std::size_t i0 = 0; i0 < m; ++i0) {
                            for (std::size_t i2 = 0; i2 < m; ++i2) {
                                out4[((i0 * m + i) * m + i2) * m + i] +=
                                    c.alpha * accD[i0 * m + i2];
                            }
                        }
                    }

                    double* dst = out.ddII->data();
                    const std::size_t doff = ((d0 * D + d1) * D + d2) * D + d3;
                    const std::size_t dstride = D * D * D * D;
                    for (std::size_t k = 0; k < m * m * m * m; ++k) {
                        dst[k * dstride + doff] = out4[k];
                    }
                }
            }
        }
    }
}

KernelStack compute_dense(const NetworkParams& params, const NetworkConfig& config,
                          const ScalingStrategy& strategy, const Dataset& data,
                          KernelOrderFlags flags, const KernelOptions& options);

} // namespace

KernelOrderFlags KernelOrderFlags::for_order(KernelOrder order) {
    KernelOrderFlags f;
    switch (order) {
        case KernelOrder::NTK: break;
        case KernelOrder::DNTK: f.dntk = true; break;
        case KernelOrder::DDNTK:
            f.dntk = true;
            f.ddI = true;
            f.ddII = true;
            break;
    }
    return f;
}

double global_eta(const NetworkConfig& config, const ScalingStrategy& strategy) {
    return std::pow(static_cast<double>(config.typical_width()), strategy.r) * config.eta0;
}

Tensor ntk_first_layer(const NetworkConfig& config, const ScalingStrategy& strategy,
                       const Dataset& data) {
    config.validate();
    strategy.validate();
    const auto n1 = static_cast<std::size_t>(config.widths[1]);
    const auto n0 = static_cast<std::size_t>(config.widths[0]);
    const std::size_t D = data.count;
    const double inv_nq =
        std::pow(static_cast<double>(config.typical_width()), -strategy.q[0]);

    Tensor H({n1, n1, D, D});
    for (std::size_t d0 = 0; d0 < D; ++d0) {
        const auto x0 = data.input(d0);
        for (std::size_t d1 = 0; d1 < D; ++d1) {
            const auto x1 = data.input(d1);
            double dot = 0.0;
            for (std::size_t j = 0; j < n0; ++j) dot += x0[j] * x1[j];
            const double v =
                inv_nq * (config.lam_b[0] + config.lam_w[0] * dot / static_cast<double>(n0));
            for (std::size_t i = 0; i < n1; ++i) {
                H.data()[((i * n1 + i) * D + d0) * D + d1] = v;
            }
        }
    }
    return H;
}

LayerKernels first_layer_kernels(const NetworkConfig& config, const ScalingStrategy& strategy,
                                 const Dataset& data, KernelOrderFlags flags) {
    LayerKernels lk;
    lk.n = static_cast<std::size_t>(config.widths[1]);
    lk.D = data.count;
    lk.flags = flags;
    lk.H = ntk_first_layer(config, strategy, data);
    // dH, ddI, ddII vanish in the first layer: preactivations are linear in
    // the parameters. Represented as absent tensors with their flags set.
    return lk;
}

LayerKernels kernel_step(const ForwardTrace& trace, const NetworkParams& params,
                         const NetworkConfig& config, const ScalingStrategy& strategy,
                         const LayerKernels& below, int ell, KernelOrderFlags flags) {
    const int L = config.depth();
    if (ell < 1 || ell >= L) {
        throw std::invalid_argument("kernel_step needs 1 <= ell <= L-1");
    }
    if (!below.flags.covers(flags)) {
        throw internal_error("kernel_step: lower-order tensors missing for requested order");
    }
    if ((flags.ddI || flags.ddII) && !below.flags.dntk) {
        throw internal_error("kernel_step: ddNTK step requires the dNTK one layer below");
    }

    StepContext c;
    c.n = static_cast<std::size_t>(config.widths[ell]);
    c.m = static_cast<std::size_t>(config.widths[ell + 1]);
    c.D = below.D;
    c.W = params.weights[ell].data();
    c.lam_b = config.lam_b[ell];
    c.lam_w = config.lam_w[ell];
    c.inv_nq = std::pow(static_cast<double>(config.typical_width()), -strategy.q[ell]);
    c.alpha = c.inv_nq * c.lam_w / static_cast<double>(c.n);
    c.sig = build_sigma(config.activation, trace.layer(ell), c.n, c.D);
    c.below = &below;

    c.Ws1.assign(c.D, std::vector<double>(c.m * c.n));
    for (std::size_t d = 0; d < c.D; ++d) {
        const double* s1 = c.sig.row1(d);
        for (std::size_t i = 0; i < c.m; ++i) {
            const double* wrow = c.W + i * c.n;
            double* orow = c.Ws1[d].data() + i * c.n;
            for (std::size_t j = 0; j < c.n; ++j) orow[j] = wrow[j] * s1[j];
        }
    }

    LayerKernels out;
    out.n = c.m;
    out.D = c.D;
    out.flags = flags;
    out.H = Tensor({c.m, c.m, c.D, c.D});
    step_H(c, out);
    if (flags.dntk) {
        out.dH.emplace(Tensor({c.m, c.m, c.m, c.D, c.D, c.D}));
        step_dH(c, out);
    }
    if (flags.ddI) {
        out.ddI.emplace(Tensor({c.m, c.m, c.m, c.m, c.D, c.D, c.D, c.D}));
        step_ddI(c, out);
    }
    if (flags.ddII) {
        out.ddII.emplace(Tensor({c.m, c.m, c.m, c.m, c.D, c.D, c.D, c.D}));
        step_ddII(c, out);
    }
    return out;
}

std::size_t estimate_kernel_memory(const NetworkConfig& config, std::size_t D,
                                   KernelOrderFlags flags, const KernelOptions& options) {
    const int L = config.depth();
    // streaming re-runs the chain on <= 4 samples per output tuple
    const std::size_t Dw = options.streaming ? std::min<std::size_t>(D, 4) : D;
    std::size_t stored = 0, working = 0;
    for (int l = 1; l <= L; ++l) {
        const auto n = static_cast<std::size_t>(config.widths[l]);
        const std::size_t hi_unit = n * n * n * n;
        std::size_t layer_hi = 0;
        if (flags.dntk) layer_hi += n * n * n * D * D * D;
        if (flags.ddI) layer_hi += hi_unit * D * D * D * D;
        if (flags.ddII) layer_hi += hi_unit * D * D * D * D;
        stored += n * n * D * D;
        if (options.keep_hidden_higher || l == L) stored += layer_hi;

        // transient per-layer working set: sample-tuple slices, the
        // propagation source, mode-product intermediates, and (when hidden
        // tensors are not kept) the two neighbor layers' tensors
        std::size_t scratch = 4 * n * n;
        if (flags.dntk) scratch += 6 * n * n * n;
        if (flags.ddI || flags.ddII) scratch += 4 * hi_unit;
        if (options.streaming) {
            std::size_t chain = 0;
            if (flags.dntk) chain += n * n * n * Dw * Dw * Dw;
            if (flags.ddI) chain += hi_unit * Dw * Dw * Dw * Dw;
            if (flags.ddII) chain += hi_unit * Dw * Dw * Dw * Dw;
            scratch += chain * 2;
        } else if (!options.keep_hidden_higher) {
            scratch += 2 * layer_hi;
        }
        working = std::max(working, scratch);
    }
    return 8 * (stored + working);
}

namespace {

KernelStack compute_dense(const NetworkParams& params, const NetworkConfig& config,
                          const ScalingStrategy& strategy, const Dataset& data,
                          KernelOrderFlags flags, const KernelOptions& options) {
    const int L = config.depth();
    KernelStack stack;
    stack.flags = flags;
    stack.layers.reserve(L);
    stack.layers.push_back(first_layer_kernels(config, strategy, data, flags));

    if (L > 1) {
        const ForwardTrace trace = forward(params, config, data);
        for (int ell = 1; ell < L; ++ell) {
            stack.layers.push_back(
                kernel_step(trace, params, config, strategy, stack.layers.back(), ell, flags));
            if (!options.keep_hidden_higher && ell >= 2) {
                auto& spent = stack.layers[static_cast<std::size_t>(ell - 1)];
                spent.dH.reset();
                spent.ddI.reset();
                spent.ddII.reset();
                spent.flags = KernelOrderFlags{};
            }
        }
    }
    return stack;
}

} // namespace

KernelStack compute_kernels(const NetworkParams& params, const NetworkConfig& config,
                            const ScalingStrategy& strategy, const Dataset& data,
                            KernelOrder order, const KernelOptions& options) {
    return compute_kernels(params, config, strategy, data, KernelOrderFlags::for_order(order),
                           options);
}

KernelStack compute_kernels(const NetworkParams& params, const NetworkConfig& config,
                            const ScalingStrategy& strategy, const Dataset& data,
                            KernelOrderFlags flags, const KernelOptions& options) {
    config.validate();
    strategy.validate();
    if (strategy.L != config.depth()) {
        throw std::invalid_argument("strategy depth does not match network depth");
    }
    if ((flags.ddI || flags.ddII) && !flags.dntk) {
        flags.dntk = true;  // the ddNTK recursions consume the dNTK
    }

    const std::size_t need = estimate_kernel_memory(config, data.count, flags, options);
    if (need > options.memory_budget_bytes) {
        throw resource_error("kernel stack needs " + std::to_string(need) +
                             " bytes, budget is " +
                             std::to_string(options.memory_budget_bytes));
    }

    KernelStack stack;
    if (!options.streaming || data.count == 1) {
        stack = compute_dense(params, config, strategy, data, flags, options);
    } else {
        // Recompute the whole layer chain per output sample tuple on a
        // restricted dataset; trades time for never materializing hidden
        // tensors across the full sample set.
        const int L = config.depth();
        const std::size_t D = data.count;
        stack.flags = flags;
        stack.layers.resize(L);
        for (int l = 1; l <= L; ++l) {
            auto& lk = stack.layers[l - 1];
            lk.n = static_cast<std::size_t>(config.widths[l]);
            lk.D = D;
            lk.flags = flags;
            const std::size_t n = lk.n;
            lk.H = Tensor({n, n, D, D});
            const bool hi = options.keep_hidden_higher || l == L;
            if (flags.dntk && l >= 2 && hi) lk.dH.emplace(Tensor({n, n, n, D, D, D}));
            if (flags.ddI && l >= 2 && hi) lk.ddI.emplace(Tensor({n, n, n, n, D, D, D, D}));
            if (flags.ddII && l >= 2 && hi) lk.ddII.emplace(Tensor({n, n, n, n, D, D, D, D}));
        }

        auto restricted = [&](std::span<const std::size_t> tuple) {
            Dataset sub;
            sub.input_dim = data.input_dim;
            sub.count = tuple.size();
            sub.inputs.resize(sub.count * sub.input_dim);
            for (std::size_t t = 0; t < tuple.size(); ++t) {
                const auto x = data.input(tuple[t]);
                std::copy(x.begin(), x.end(), sub.inputs.begin() + t * sub.input_dim);
            }
            return sub;
        };

        KernelOptions sub_opts = options;
        sub_opts.streaming = false;
        sub_opts.keep_hidden_higher = true;

        // pairs fill H on every layer
        for (std::size_t d0 = 0; d0 < D; ++d0) {
            for (std::size_t d1 = 0; d1 < D; ++d1) {
                const std::size_t tup[2] = {d0, d1};
                auto sub = compute_dense(params, config, strategy, restricted(tup),
                                         KernelOrderFlags{}, sub_opts);
                for (int l = 1; l <= L; ++l) {
                    const auto& src = sub.layers[l - 1].H;
                    auto& dstT = stack.layers[l - 1].H;
                    const std::size_t n = stack.layers[l - 1].n;
                    for (std::size_t i0 = 0; i0 < n; ++i0)
                        for (std::size_t i1 = 0; i1 < n; ++i1)
                            dstT.data()[((i0 * n + i1) * D + d0) * D + d1] =
                                src.data()[((i0 * n + i1) * 2 + 0) * 2 + 1];
                }
            }
        }
        if (flags.dntk) {
            KernelOrderFlags f;
            f.dntk = true;
            for (std::size_t d0 = 0; d0 < D; ++d0)
                for (std::size_t d1 = 0; d1 < D; ++d1)
                    for (std::size_t d2 = 0; d2 < D; ++d2) {
                        const std::size_t tup[3] = {d0, d1, d2};
                        auto sub = compute_dense(params, config, strategy, restricted(tup), f,
                                                 sub_opts);
                        for (int l = 2; l <= L; ++l) {
                            auto& lk = stack.layers[l - 1];
                            if (!lk.dH.has_value()) continue;
                            const auto& src = *sub.layers[l - 1].dH;
                            const std::size_t n = lk.n;
                            for (std::size_t i0 = 0; i0 < n; ++i0)
                                for (std::size_t i1 = 0; i1 < n; ++i1)
                                    for (std::size_t i2 = 0; i2 < n; ++i2)
                                        lk.dH->data()[((((i0 * n + i1) * n + i2) * D + d0) * D +
                                                       d1) *
                                                          D +
                                                      d2] =
                                            src.data()[((((i0 * n + i1) * n + i2) * 3 + 0) * 3 +
                                                        1) *
                                                           3 +
                                                       2];
                        }
                    }
        }
        if (flags.ddI || flags.ddII) {
            KernelOrderFlags f = flags;
            for (std::size_t d0 = 0; d0 < D; ++d0)
                for (std::size_t d1 = 0; d1 < D; ++d1)
                    for (std::size_t d2 = 0; d2 < D; ++d2)
                        for (std::size_t d3 = 0; d3 < D; ++d3) {
                            const std::size_t tup[4] = {d0, d1, d2, d3};
                            auto sub = compute_dense(params, config, strategy, restricted(tup),
                                                     f, sub_opts);
                            const std::size_t doff = ((d0 * D + d1) * D + d2) * D + d3;
                            for (int l = 2; l <= L; ++l) {
                                auto& lk = stack.layers[l - 1];
                                const std::size_t n = lk.n;
                                const std::size_t n4 = n * n * n * n;
                                const std::size_t sub_off = ((0 * 4 + 1) * 4 + 2) * 4 + 3;
                                if (lk.ddI.has_value()) {
                                    const auto& src = *sub.layers[l - 1].ddI;
                                    for (std::size_t k = 0; k < n4; ++k)
                                        lk.ddI->data()[k * D * D * D * D + doff] =
                                            src.data()[k * 256 + sub_off];
                                }
                                if (lk.ddII.has_value()) {
                                    const auto& src = *sub.layers[l - 1].ddII;
                                    for (std::size_t k = 0; k < n4; ++k)
                                        lk.ddII->data()[k * D * D * D * D + doff] =
                                            src.data()[k * 256 + sub_off];
                                }
                            }
                        }
        }
    }

    stack.output().H.require_finite("output-layer NTK");
    if (stack.output().dH.has_value()) stack.output().dH->require_finite("output-layer dNTK");
    if (stack.output().ddI.has_value()) stack.output().ddI->require_finite("output-layer ddNTK-I");
    if (stack.output().ddII.has_value())
        stack.output().ddII->require_finite("output-layer ddNTK-II");
    return stack;
}

} // namespace ntklab
