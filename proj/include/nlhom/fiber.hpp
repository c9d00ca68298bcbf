#pragma once
// Discretized fiber operators on the torus grid.
//
// Assembly convention: M[x][y] = delta_xy p(x) - h * atil(xi, x-y) mu(x,y),
// where atil values come from the cell-averaged difference tables and
// p(x) = h * sum_y atil(0, x-y) mu(x,y). With this pairing the constant
// vector is an exact kernel vector at xi = 0 and the quadratic form equals
// the nonnegative double-sum form to round-off, so the ellipticity sandwich
// holds discretely rather than just up to quadrature error.

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "nlhom/base.hpp"
#include "nlhom/kernels.hpp"
#include "nlhom/linalg.hpp"

namespace nlhom {

enum class FiberKind { full, mu_one, effective, truncated_N };

template <class Real>
struct FiberOperator {
    FiberKind kind = FiberKind::full;
    Grid grid;
    std::array<Real, 3> xi{};
    CMat<Real> matrix;
    RVec<Real> p;
    KernelSpec a;  // retained for the quadratic-form diagnostic
    MuSpec mu;
    int lattice_radius = 0;
    Real level = 0;  // truncated_N only
};

namespace detail {

inline void check_dense_cap(const Grid& g) {
    if (g.nodes() > 16384)
        throw std::invalid_argument("grid exceeds the dense assembly cap (N^d > 16384)");
}

template <class Real>
RVec<Real> potential_from_table(const std::vector<std::complex<Real>>& t0,
                                const MuOnGrid<Real>& mu, const Grid& g, int threads) {
    const Real h = grid_h<Real>(g);
    const std::int64_t n = g.nodes();
    std::vector<std::array<int, 3>> nodes(n);
    for (std::int64_t i = 0; i < n; ++i) nodes[i] = unflatten(g, i);
    RVec<Real> p(n);
    parallel_for(n, threads, [&](std::int64_t x) {
        Real acc = 0;
        for (std::int64_t y = 0; y < n; ++y)
            acc += t0[diff_index(g, nodes[x], nodes[y])].real() * mu(x, y);
        p(x) = h * acc;
    });
    return p;
}

template <class Real>
CMat<Real> matrix_from_tables(const std::vector<std::complex<Real>>& txi, const RVec<Real>& p,
                              const MuOnGrid<Real>& mu, const Grid& g, int threads) {
    const Real h = grid_h<Real>(g);
    const std::int64_t n = g.nodes();
    std::vector<std::array<int, 3>> nodes(n);
    for (std::int64_t i = 0; i < n; ++i) nodes[i] = unflatten(g, i);
    CMat<Real> M(n, n);
    parallel_for(n, threads, [&](std::int64_t x) {
        for (std::int64_t y = 0; y < n; ++y)
            M(x, y) = -h * txi[diff_index(g, nodes[x], nodes[y])] * mu(x, y);
        M(x, x) += p(x);
    });
    return M;
}

}  // namespace detail

/// p(x) = h * sum_y atil(0, x-y) mu(x,y); constant for constant mu and pinned
/// between mu_minus * M0 and mu_plus * M0 by construction.
template <class Real>
RVec<Real> potential_p(const KernelSpec& a, const MuSpec& mu, const Grid& g, int radius = 0,
                       int threads = 1) {
    detail::check_dense_cap(g);
    if (radius <= 0) radius = default_lattice_radius(a);
    const auto t0 = cell_averaged_table<Real>(a, {0, 0, 0}, g, radius, {0, 0, 0}, threads);
    return detail::potential_from_table<Real>(t0, mu_on_grid<Real>(mu, g), g, threads);
}

template <class Real>
FiberOperator<Real> assemble_fiber(const KernelSpec& a, const MuSpec& mu, const Grid& g,
                                   const std::array<Real, 3>& xi, int radius = 0,
                                   int threads = 1) {
    detail::check_dense_cap(g);
    if (radius <= 0) radius = default_lattice_radius(a);
    const auto mug = mu_on_grid<Real>(mu, g);
    const auto t0 = cell_averaged_table<Real>(a, {0, 0, 0}, g, radius, {0, 0, 0}, threads);
    bool xi_zero = true;
    for (int j = 0; j < g.d; ++j) xi_zero = xi_zero && xi[j] == Real(0);
    const auto txi =
        xi_zero ? t0 : cell_averaged_table<Real>(a, xi, g, radius, {0, 0, 0}, threads);

    FiberOperator<Real> op;
    op.kind = (mu.family == MuFamily::constant && mu.mu0 == 1.0) ? FiberKind::mu_one
                                                                 : FiberKind::full;
    op.grid = g;
    op.xi = xi;
    op.a = a;
    op.mu = mu;
    op.lattice_radius = radius;
    op.p = detail::potential_from_table<Real>(t0, mug, g, threads);
    op.matrix = detail::matrix_from_tables<Real>(txi, op.p, mug, g, threads);
    return op;
}

/// The mu == 1 comparison operator appearing in the ellipticity sandwich.
template <class Real>
FiberOperator<Real> assemble_mu_one(const KernelSpec& a, const Grid& g,
                                    const std::array<Real, 3>& xi, int radius = 0,
                                    int threads = 1) {
    return assemble_fiber<Real>(a, MuSpec::constant(1.0), g, xi, radius, threads);
}

/// Symbol of the effective operator at integer mode n: <g0 (2 pi n + xi), (2 pi n + xi)>.
template <class Real>
Real effective_symbol(const RMat<Real>& g0, const std::array<Real, 3>& xi,
                      const std::array<int, 3>& n, int d) {
    std::array<Real, 3> y{};
    for (int j = 0; j < d; ++j) y[j] = 2 * pi_v<Real> * Real(n[j]) + xi[j];
    Real s = 0;
    for (int j = 0; j < d; ++j)
        for (int l = 0; l < d; ++l) s += g0(j, l) * y[j] * y[l];
    return s;
}

/// Fourier-diagonal effective fiber: eigenvector exp(2 pi i <n, k>/N) with
/// eigenvalue <g0 (2 pi n + xi), (2 pi n + xi)>, realized as a circulant.
template <class Real>
FiberOperator<Real> assemble_effective_fiber(const RMat<Real>& g0, const Grid& g,
                                             const std::array<Real, 3>& xi) {
    detail::check_dense_cap(g);
    if (g0.rows() != g.d || g0.cols() != g.d)
        throw std::invalid_argument("effective matrix dimension mismatch");
    if (!((g0 - g0.transpose()).norm() <= 1e-10 * g0.norm()))
        throw std::invalid_argument("effective matrix asymmetric");
    Eigen::SelfAdjointEigenSolver<RMat<Real>> es(g0, Eigen::EigenvaluesOnly);
    if (!(es.eigenvalues()(0) > 0))
        throw std::runtime_error("effective matrix not positive definite");

    const std::int64_t n = g.nodes();
    const Real h = grid_h<Real>(g);
    std::vector<Real> symbol(n);
    for (std::int64_t q = 0; q < n; ++q) symbol[q] = effective_symbol<Real>(g0, xi, mode_of(g, q), g.d);

    // Circulant entries c[r] = h * sum_n symbol(n) exp(2 pi i <n, r>/N).
    // Care is taken to make the result exactly Hermitian rather than
    // Hermitian up to trig round-off at the scale of the largest symbol value
    // (which reaches (pi N)^2 and would otherwise leave ~1e-11 asymmetry):
    //   - the phase table satisfies tbl[N-k] == conj(tbl[k]) bitwise, with
    //     tbl[N/2] == -1 pinned exactly;
    //   - the mode dot product is reduced mod N in integer arithmetic;
    //   - modes are accumulated in (n, -n) pairs, each pair contributing
    //     (s_n + s_{-n}) Re t + i (s_n - s_{-n}) Im t, so conjugating r
    //     conjugates every partial sum bitwise, and a symbol even in n
    //     (any xi = 0 case) yields an exactly real generator.
    std::vector<std::complex<Real>> tbl(g.N);
    tbl[0] = {1, 0};
    for (int k = 1; k <= g.N / 2; ++k) {
        const Real ang = 2 * pi_v<Real> * Real(k) / Real(g.N);
        tbl[k] = (k == g.N / 2) ? std::complex<Real>(-1, 0)
                                : std::complex<Real>(std::cos(ang), std::sin(ang));
    }
    for (int k = g.N / 2 + 1; k < g.N; ++k) tbl[k] = std::conj(tbl[g.N - k]);

    // partner[q] indexes the mode obtained by negating every component mod N;
    // self-partnered modes (components 0 or -N/2) only ever hit real phases.
    std::vector<std::int64_t> partner(n);
    for (std::int64_t q = 0; q < n; ++q) {
        auto iv = unflatten(g, q);
        std::array<int, 3> neg{0, 0, 0};
        for (int j = 0; j < g.d; ++j) neg[j] = (g.N - iv[j]) % g.N;
        partner[q] = flatten(g, neg);
    }

    std::vector<std::complex<Real>> c(n);
    for (std::int64_t r = 0; r < n; ++r) {
        const auto rv = unflatten(g, r);
        std::complex<Real> acc{};
        for (std::int64_t q = 0; q < n; ++q) {
            const std::int64_t p = partner[q];
            if (p < q) continue;
            const auto nv = mode_of(g, q);
            std::int64_t dot = 0;
            for (int j = 0; j < g.d; ++j) dot += std::int64_t(nv[j]) * rv[j];
            const auto t = tbl[((dot % g.N) + g.N) % g.N];
            if (p == q)
                acc += std::complex<Real>(symbol[q] * t.real(), 0);
            else
                acc += std::complex<Real>((symbol[q] + symbol[p]) * t.real(),
                                          (symbol[q] - symbol[p]) * t.imag());
        }
        c[r] = h * acc;
    }

    FiberOperator<Real> op;
    op.kind = FiberKind::effective;
    op.grid = g;
    op.xi = xi;
    op.matrix.resize(n, n);
    std::vector<std::array<int, 3>> nodes(n);
    for (std::int64_t i = 0; i < n; ++i) nodes[i] = unflatten(g, i);
    for (std::int64_t x = 0; x < n; ++x)
        for (std::int64_t y = 0; y < n; ++y) op.matrix(x, y) = c[diff_index(g, nodes[x], nodes[y])];
    op.p = op.matrix.diagonal().real();
    return op;
}

/// Appendix truncation: kernel table min(atil(0,.), level) with its own
/// potential, assembled at xi = 0.
template <class Real>
FiberOperator<Real> assemble_truncated(const KernelSpec& a, const MuSpec& mu, const Grid& g,
                                       Real level, int radius = 0, int threads = 1) {
    if (!(level > 0)) throw std::invalid_argument("truncation level must be positive");
    detail::check_dense_cap(g);
    if (radius <= 0) radius = default_lattice_radius(a);
    const auto mug = mu_on_grid<Real>(mu, g);
    auto tN = cell_averaged_table<Real>(a, {0, 0, 0}, g, radius, {0, 0, 0}, threads);
    for (auto& v : tN) v = std::complex<Real>(std::min(v.real(), level), 0);

    FiberOperator<Real> op;
    op.kind = FiberKind::truncated_N;
    op.grid = g;
    op.a = a;
    op.mu = mu;
    op.lattice_radius = radius;
    op.level = level;
    op.p = detail::potential_from_table<Real>(tN, mug, g, threads);
    op.matrix = detail::matrix_from_tables<Real>(tN, op.p, mug, g, threads);
    return op;
}

/// (op.matrix + shift I)^{-1} with the residual contract of linalg.
template <class Real>
CMat<Real> resolvent(const FiberOperator<Real>& op, Real shift) {
    if (!(shift > 0)) throw std::invalid_argument("resolvent shift must be positive");
    return shifted_hermitian_inverse<Real>(op.matrix, shift);
}

/// |(double-sum form of op at u) - <Mu, u>| / ||u||^2 in the h-weighted norm.
/// Both sides are algebraically equal for the kernel-backed kinds, so the
/// return value measures accumulated round-off only.
template <class Real>
Real quadratic_form_check(const FiberOperator<Real>& op, const CVec<Real>& u) {
    if (op.kind == FiberKind::effective)
        throw std::invalid_argument("quadratic form check requires a kernel-backed operator");
    if (u.size() != op.grid.nodes() || u.norm() == 0)
        throw std::invalid_argument("quadratic form check needs a nonzero grid function");
    const Grid& g = op.grid;
    const Real h = grid_h<Real>(g);
    const std::int64_t n = g.nodes();

    auto t0 = cell_averaged_table<Real>(op.a, {0, 0, 0}, g, op.lattice_radius, {0, 0, 0});
    auto txi = op.kind == FiberKind::truncated_N
                   ? t0
                   : cell_averaged_table<Real>(op.a, op.xi, g, op.lattice_radius, {0, 0, 0});
    if (op.kind == FiberKind::truncated_N) {
        for (auto& v : t0) v = std::complex<Real>(std::min(v.real(), op.level), 0);
        txi = t0;
    }
    const auto mug = mu_on_grid<Real>(op.mu, g);

    std::vector<std::array<int, 3>> nodes(n);
    for (std::int64_t i = 0; i < n; ++i) nodes[i] = unflatten(g, i);

    Real form = 0;
    std::complex<Real> cross{};
    for (std::int64_t x = 0; x < n; ++x) {
        for (std::int64_t y = 0; y < n; ++y) {
            const auto r = diff_index(g, nodes[x], nodes[y]);
            const Real m = mug(x, y);
            form += Real(0.5) * m * t0[r].real() *
                    (std::norm(u(x)) + std::norm(u(y)));
            cross += m * std::conj(txi[r]) * u(x) * std::conj(u(y));
        }
    }
    const Real form_total = h * h * (form - cross.real());
    const std::complex<Real> quad = (u.adjoint() * (op.matrix * u))(0) * h;
    return std::abs(std::complex<Real>(form_total, 0) - quad) / (h * u.squaredNorm());
}

/// h-weighted L1 norm of a difference table, ||table||_{L1(cell)}.
template <class Real>
Real table_l1_norm(const std::vector<std::complex<Real>>& t, const Grid& g) {
    Real acc = 0;
    for (const auto& v : t) acc += std::abs(v);
    return grid_h<Real>(g) * acc;
}

}  // namespace nlhom
