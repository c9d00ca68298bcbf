#pragma once
// Spectral data at the bottom of the fiber spectrum: the Riesz projection
// onto the threshold eigenvalue, derivative operators of the fiber family at
// xi = 0, and the expansion ladder F ~ P + [F]_1, A F ~ [G]_2 + [G]_3 with
// measured residuals.
//
// The contour integrals are evaluated by the trapezoid rule on a circle that
// encloses exactly the bottom spectral cluster. Quadrature nodes are folded
// in conjugate pairs, which keeps the projection Hermitian to round-off and
// halves the factorization count. The reduced resolvent at zero reuses the
// mean-penalty trick of the cell solver, and every occurrence of
// R0perp(0) [Delta_1 A](xi) P in the third-order term collapses to a rank-one
// block built from the corrector fields, so [G]_3 needs no dense inverse.

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "nlhom/base.hpp"
#include "nlhom/cell.hpp"
#include "nlhom/effective.hpp"
#include "nlhom/fiber.hpp"
#include "nlhom/kernels.hpp"
#include "nlhom/linalg.hpp"

namespace nlhom {

/// Circular integration contour around the bottom spectral cluster,
/// traversed counterclockwise. for_gap places it so that [0, d0/3] lies
/// inside and the circle crosses the real axis at the midpoint of
/// (d0/3, 2 d0/3), clear of both spectral clusters by d0/6.
struct Contour {
    double center = 0;
    double radius = 0;
    int K = 128;  // quadrature points, doubled internally until converged
    bool counterclockwise = true;

    static Contour for_gap(double d0) {
        if (!(d0 > 0)) throw std::invalid_argument("spectral gap bound must be positive");
        return Contour{d0 / 6, d0 / 3, 128, true};
    }

    void validate() const {
        if (!(radius > 0)) throw std::invalid_argument("contour radius must be positive");
        if (K < 64) throw std::invalid_argument("contour needs at least 64 quadrature points");
        if (!counterclockwise)
            throw std::invalid_argument("contour orientation must be counterclockwise");
    }
};

/// P = h 1 1^T, the h-weighted orthogonal projector onto constants.
template <class Real>
CMat<Real> constant_projector(const Grid& g) {
    return CMat<Real>::Constant(g.nodes(), g.nodes(),
                                std::complex<Real>(grid_h<Real>(g), 0));
}

/// Matrix of d^alpha A(0): the moment-weighted convolution against mu scaled
/// by -(-i)^{|alpha|}, so that d_j A(0) 1 = i w_j and d_k d_l A(0) 1 = w_kl.
/// The potential part of the fiber does not depend on xi and drops out.
template <class Real>
CMat<Real> derivative_operator(const KernelSpec& a, const MuSpec& mu, const Grid& g,
                               const std::array<int, 3>& alpha, int radius = 0,
                               int threads = 1) {
    int order = 0;
    for (int j = 0; j < 3; ++j) {
        if (alpha[j] < 0)
            throw std::invalid_argument("derivative multi-index must be nonnegative");
        if (j >= g.d && alpha[j] != 0)
            throw std::invalid_argument("derivative multi-index exceeds the dimension");
        order += alpha[j];
    }
    if (order < 1 || order > 4)
        throw std::invalid_argument("derivative order must be between 1 and 4");
    if (!std::isfinite(moment(a, order)))
        throw std::invalid_argument("kernel moment of the derivative order is not finite");
    detail::check_dense_cap(g);
    if (radius <= 0) radius = default_lattice_radius(a);

    // -(-i)^order cycles through i, 1, -i, -1 for orders 1..4.
    static constexpr std::array<std::array<double, 2>, 4> cyc{
        {{0, 1}, {1, 0}, {0, -1}, {-1, 0}}};
    const std::complex<Real> c(Real(cyc[order - 1][0]), Real(cyc[order - 1][1]));

    const auto t = cell_averaged_table<Real>(a, {0, 0, 0}, g, radius, alpha, threads);
    const auto mug = mu_on_grid<Real>(mu, g);
    const Real h = grid_h<Real>(g);
    const std::int64_t n = g.nodes();
    std::vector<std::array<int, 3>> nodes(n);
    for (std::int64_t i = 0; i < n; ++i) nodes[i] = unflatten(g, i);
    CMat<Real> D(n, n);
    parallel_for(n, threads, [&](std::int64_t x) {
        for (std::int64_t y = 0; y < n; ++y)
            // tables at xi = 0 are real; c carries all the imaginary structure
            D(x, y) = c * (h * t[diff_index(g, nodes[x], nodes[y])].real() * mug(x, y));
    });
    return D;
}

/// R0perp(0) = Pperp A(0)^{-1} Pperp via the mean-penalty factorization. The
/// operator must be assembled at xi = 0 so that its kernel is the constants.
template <class Real>
CMat<Real> reduced_resolvent_zero(const FiberOperator<Real>& op) {
    const Grid& g = op.grid;
    for (int j = 0; j < g.d; ++j)
        if (op.xi[j] != Real(0))
            throw std::invalid_argument("reduced resolvent is defined at xi = 0 only");
    const std::int64_t n = g.nodes();
    const Real h = grid_h<Real>(g);
    const Real sigma = std::max<Real>(op.p.size() > 0 ? op.p.maxCoeff() : Real(1), Real(1));

    CMat<Real> pd = op.matrix;
    pd.array() += std::complex<Real>(sigma * h, 0);  // rank-one mean penalty
    Eigen::LLT<CMat<Real>> llt(pd);
    if (llt.info() != Eigen::Success)
        throw std::runtime_error("reduced resolvent needs a positive spectral gap at zero");
    const CMat<Real> X = llt.solve(CMat<Real>::Identity(n, n));

    const CMat<Real> Pp = CMat<Real>::Identity(n, n) - constant_projector<Real>(g);
    CMat<Real> R = Pp * X * Pp;
    const Real resid = (op.matrix * R - Pp).norm();
    if (!(resid <= Real(1e-8))) {
        std::ostringstream os;
        os << "reduced resolvent residual " << double(resid)
           << " exceeds 1e-8; operator kernel is not the constants";
        throw std::runtime_error(os.str());
    }
    return R;
}

template <class Real>
struct RieszPair {
    CMat<Real> F;   // spectral projection onto the enclosed cluster
    CMat<Real> AF;  // A restricted to that cluster, A F
    int points_used = 0;
    Real idempotency_defect = 0;
};

/// Trapezoid quadrature of F = -(1/2 pi i) contour-int (A - zeta)^{-1} d zeta
/// and A F = -(1/2 pi i) contour-int (A - zeta)^{-1} zeta d zeta on the
/// circle, sharing one factorization per node pair. K doubles until the
/// idempotency defect of F drops below 1e-9.
template <class Real>
RieszPair<Real> riesz_pair(const FiberOperator<Real>& op, const Contour& gamma) {
    gamma.validate();
    const std::int64_t n = op.matrix.rows();
    const Real c = Real(gamma.center), r = Real(gamma.radius);

    // Every eigenvalue must clear the circle by 5% of the radius; an
    // eigenvalue in that annulus means the gap assumption is broken and the
    // quadrature would straddle spectrum.
    const RVec<Real> ev = hermitian_eigenvalues<Real>(op.matrix);
    for (std::int64_t i = 0; i < ev.size(); ++i)
        if (std::abs(std::abs(ev(i) - c) - r) <= Real(0.05) * r)
            throw std::runtime_error("contour hits spectrum");

    const CMat<Real> I = CMat<Real>::Identity(n, n);
    for (int K = gamma.K; K <= 8192; K *= 2) {
        CMat<Real> F = CMat<Real>::Zero(n, n);
        CMat<Real> AF = CMat<Real>::Zero(n, n);
        const Real wgt = r / Real(K);
        for (int m = 0; m <= K / 2; ++m) {
            const Real th = 2 * pi_v<Real> * Real(m) / Real(K);
            const std::complex<Real> e(std::cos(th), std::sin(th));
            const std::complex<Real> zeta = std::complex<Real>(c, 0) + r * e;
            CMat<Real> A = op.matrix;
            A.diagonal().array() -= zeta;
            const CMat<Real> R = Eigen::PartialPivLU<CMat<Real>>(A).solve(I);
            if (m == 0 || m == K / 2) {
                // self-conjugate nodes, zeta and the phase both real
                F -= (wgt * e.real()) * R;
                AF -= (wgt * (zeta * e).real()) * R;
            } else {
                // nodes m and K-m folded together; keeps both sums Hermitian
                const CMat<Real> T = e * R;
                F -= wgt * (T + T.adjoint());
                const CMat<Real> TA = (zeta * e) * R;
                AF -= wgt * (TA + TA.adjoint());
            }
        }
        const Real defect = operator_norm<Real>(CMat<Real>(F * F - F));
        if (defect <= Real(1e-9))
            return {std::move(F), std::move(AF), K, defect};
    }
    throw std::runtime_error("contour quadrature did not converge");
}

template <class Real>
CMat<Real> riesz_projection(const FiberOperator<Real>& op, const Contour& gamma) {
    return riesz_pair<Real>(op, gamma).F;
}

template <class Real>
CMat<Real> riesz_AF(const FiberOperator<Real>& op, const Contour& gamma) {
    return riesz_pair<Real>(op, gamma).AF;
}

/// [F]_1(xi) = sum_j xi_j F_j with F_j = i(., v_j) 1 - i(., 1) v_j. With the
/// h-weighted pairing the entries are i h (v(y) - v(x)) for the contracted
/// field v = sum_j xi_j v_j, manifestly Hermitian.
template <class Real>
CMat<Real> F1_operator(const CellSolution<Real>& cell, const std::array<Real, 3>& xi) {
    const Grid& g = cell.grid;
    if (static_cast<int>(cell.v.size()) != g.d)
        throw std::invalid_argument("cell solution does not match the grid");
    const std::int64_t n = g.nodes();
    const Real h = grid_h<Real>(g);
    RVec<Real> v = RVec<Real>::Zero(n);
    for (int j = 0; j < g.d; ++j) v += xi[j] * cell.v[j];
    CMat<Real> F1(n, n);
    for (std::int64_t x = 0; x < n; ++x)
        for (std::int64_t y = 0; y < n; ++y)
            F1(x, y) = std::complex<Real>(0, h * (v(y) - v(x)));
    return F1;
}

namespace detail {

inline std::vector<std::array<int, 3>> multi_indices(int d, int m) {
    std::vector<std::array<int, 3>> out;
    for (int a0 = m; a0 >= 0; --a0)
        for (int a1 = m - a0; a1 >= 0; --a1) {
            const int a2 = m - a0 - a1;
            if ((d < 2 && a1 > 0) || (d < 3 && a2 > 0)) continue;
            out.push_back({a0, a1, a2});
        }
    return out;
}

inline double small_factorial(int k) {
    double f = 1;
    for (int i = 2; i <= k; ++i) f *= i;
    return f;
}

// Derivative operators indexed by multi-index, shared across xi contractions
// in a sweep. [Delta_m A](xi) = sum_{|alpha| = m} (xi^alpha / alpha!) D_alpha.
template <class Real>
struct DeltaLadder {
    Grid grid;
    std::map<std::array<int, 3>, CMat<Real>> ops;

    CMat<Real> delta(int m, const std::array<Real, 3>& xi) const {
        CMat<Real> out = CMat<Real>::Zero(grid.nodes(), grid.nodes());
        for (const auto& [alpha, D] : ops) {
            if (alpha[0] + alpha[1] + alpha[2] != m) continue;
            Real coef = 1;
            for (int j = 0; j < 3; ++j) {
                for (int q = 0; q < alpha[j]; ++q) coef *= xi[j];
                coef /= Real(small_factorial(alpha[j]));
            }
            if (coef != Real(0)) out += std::complex<Real>(coef, 0) * D;
        }
        return out;
    }
};

template <class Real>
DeltaLadder<Real> make_delta_ladder(const KernelSpec& a, const MuSpec& mu, const Grid& g,
                                    int max_order, int radius, int threads) {
    DeltaLadder<Real> lad;
    lad.grid = g;
    for (int m = 1; m <= max_order; ++m)
        for (const auto& alpha : multi_indices(g.d, m))
            lad.ops.emplace(alpha, derivative_operator<Real>(a, mu, g, alpha, radius, threads));
    return lad;
}

template <class Real>
CMat<Real> g3_from_ladder(const DeltaLadder<Real>& lad, const CellSolution<Real>& cell,
                          const std::array<Real, 3>& xi) {
    const Grid& g = lad.grid;
    const std::int64_t n = g.nodes();
    const Real h = grid_h<Real>(g);

    const CMat<Real> P = constant_projector<Real>(g);
    const CMat<Real> D1 = lad.delta(1, xi);
    const CMat<Real> D2 = lad.delta(2, xi);
    const CMat<Real> D3 = lad.delta(3, xi);

    // B = R0perp(0) [Delta_1 A](xi) P = i h (sum_j xi_j v_j) 1^T.
    RVec<Real> v = RVec<Real>::Zero(n);
    for (int j = 0; j < g.d; ++j) v += xi[j] * cell.v[j];
    CMat<Real> B(n, n);
    for (std::int64_t x = 0; x < n; ++x)
        B.row(x).setConstant(std::complex<Real>(0, h * v(x)));
    const CMat<Real> Bh = B.adjoint();

    // Eight terms: P D3 P, the pair -(P D1 R0p D2 P + adj), + P D1 R0p D1 R0p D1 P,
    // the pair -(R0p D1 P D2 P + adj), and the pair +(R0p D1 P D1 R0p D1 P + adj).
    const CMat<Real> T2 = Bh * D2 * P;
    const CMat<Real> T5 = B * D2 * P;
    const CMat<Real> T7 = B * D1 * B;
    CMat<Real> G3 = P * D3 * P;
    G3 -= T2 + T2.adjoint();
    G3 += Bh * D1 * B;
    G3 -= T5 + T5.adjoint();
    G3 += T7 + T7.adjoint();
    return G3;
}

}  // namespace detail

/// The third-order coefficient [G]_3(xi) of A(xi) F(xi), assembled from the
/// eight-term representation with the corrector fields supplying the action
/// of the reduced resolvent on the first-order range.
template <class Real>
CMat<Real> G3_operator(const KernelSpec& a, const MuSpec& mu, const Grid& g,
                       const CellSolution<Real>& cell, const std::array<Real, 3>& xi,
                       int radius = 0, int threads = 1) {
    if (!std::isfinite(moment(a, 4)))
        throw std::invalid_argument("fourth kernel moment is not finite");
    if (static_cast<int>(cell.v.size()) != g.d || cell.grid.N != g.N || cell.grid.d != g.d)
        throw std::invalid_argument("cell solution does not match the grid");
    const auto lad = detail::make_delta_ladder<Real>(a, mu, g, 3, radius, threads);
    return detail::g3_from_ladder<Real>(lad, cell, xi);
}

template <class Real>
struct ThresholdReport {
    std::vector<Real> xi_norm;              // strictly decreasing toward zero
    std::vector<std::array<Real, 5>> rows;  // ||F-P||, ||F-P-[F]1||, ||AF-[G]2||,
                                            // ||AF-[G]2-[G]3||, ||P [G]3 P||
    std::array<Real, 5> slopes{};           // log-log fits over the smallest-half window
    int fit_window = 0;
};

/// Runs the expansion ladder over a decreasing sequence of xi values and fits
/// log-log slopes of each residual column over the smallest half of the
/// magnitudes. The cell problem, the effective matrix, and the derivative
/// operators are computed once and shared across the sweep.
template <class Real>
ThresholdReport<Real> threshold_sweep(const KernelSpec& a, const MuSpec& mu, const Grid& g,
                                      const std::vector<std::array<Real, 3>>& xi_list,
                                      const Contour& gamma, int radius = 0, int threads = 1) {
    gamma.validate();
    if (xi_list.empty()) throw std::invalid_argument("threshold sweep needs xi values");
    const std::int64_t count = static_cast<std::int64_t>(xi_list.size());
    std::vector<Real> mags(count);
    for (std::int64_t i = 0; i < count; ++i) {
        Real s = 0;
        for (int j = 0; j < g.d; ++j) s += xi_list[i][j] * xi_list[i][j];
        mags[i] = std::sqrt(s);
        if (i > 0 && !(mags[i] < mags[i - 1]))
            throw std::invalid_argument("xi magnitudes must decrease strictly toward zero");
    }
    const double delta0 =
        mu.mu_minus * symbol_min(a, pi_v<double>) / (3 * moment(a, 1) * mu.mu_plus);
    if (!(double(mags.front()) <= delta0 * (1 + 1e-12)))
        throw std::invalid_argument("xi outside the threshold neighborhood (|xi| > delta0)");

    const auto cell = solve_cell_all<Real>(a, mu, g, radius, threads);
    const auto em = effective_matrix<Real>(a, mu, g, cell);
    const auto lad = detail::make_delta_ladder<Real>(a, mu, g, 3, radius, threads);
    const CMat<Real> P = constant_projector<Real>(g);

    ThresholdReport<Real> rep;
    rep.xi_norm = mags;
    rep.rows.resize(count);
    std::vector<std::string> errors(count);
    auto run_one = [&](std::int64_t i) {
        try {
            const auto op = assemble_fiber<Real>(a, mu, g, xi_list[i], radius, 1);
            const auto rp = riesz_pair<Real>(op, gamma);
            const CMat<Real> F1 = F1_operator<Real>(cell, xi_list[i]);
            const Real sym = effective_symbol<Real>(em.g0, xi_list[i], {0, 0, 0}, g.d);
            const CMat<Real> G2 = std::complex<Real>(sym, 0) * P;
            const CMat<Real> G3 = detail::g3_from_ladder<Real>(lad, cell, xi_list[i]);
            rep.rows[i] = {operator_norm<Real>(CMat<Real>(rp.F - P)),
                           operator_norm<Real>(CMat<Real>(rp.F - P - F1)),
                           operator_norm<Real>(CMat<Real>(rp.AF - G2)),
                           operator_norm<Real>(CMat<Real>(rp.AF - G2 - G3)),
                           operator_norm<Real>(CMat<Real>(P * G3 * P))};
        } catch (const std::exception& e) {
            std::ostringstream os;
            os << e.what() << " at |xi| = " << double(mags[i]);
            errors[i] = os.str();
        }
    };
    // Each xi is heavy, so the sweep parallelizes over xi directly rather than
    // through parallel_for (whose small-count cutoff would serialize it).
    if (threads > 1 && count > 1) {
        const int workers = static_cast<int>(std::min<std::int64_t>(threads, count));
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (int w = 0; w < workers; ++w)
            pool.emplace_back([&run_one, w, workers, count] {
                for (std::int64_t i = w; i < count; i += workers) run_one(i);
            });
        for (auto& t : pool) t.join();
    } else {
        for (std::int64_t i = 0; i < count; ++i) run_one(i);
    }
    for (std::int64_t i = 0; i < count; ++i)
        if (!errors[i].empty()) throw std::runtime_error(errors[i]);

    const int win = std::max<int>(2, static_cast<int>(count / 2));
    rep.fit_window = std::min<int>(win, static_cast<int>(count));
    std::vector<double> xs(rep.fit_window);
    for (int i = 0; i < rep.fit_window; ++i)
        xs[i] = double(mags[count - rep.fit_window + i]);
    for (int col = 0; col < 5; ++col) {
        std::vector<double> ys(rep.fit_window);
        for (int i = 0; i < rep.fit_window; ++i)
            ys[i] = std::max(double(rep.rows[count - rep.fit_window + i][col]), 1e-300);
        rep.slopes[col] = Real(loglog_slope(xs, ys));
    }
    return rep;
}

}  // namespace nlhom
