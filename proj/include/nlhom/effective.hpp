#pragma once
// The effective matrix g0 and its positivity diagnostics.
//
// Entries come from the grid inner products
//     g_kl = (w_kl, 1) - (v_k, w_l) - (v_l, w_k),
// with the same rectangle rule as assembly so quadrature errors cancel
// between routes. g0 stores the halved entries (the classic off-by-two
// hazard lives here; gkl_raw keeps the unhalved array alongside).

#include <stdexcept>
#include <utility>

#include "nlhom/base.hpp"
#include "nlhom/cell.hpp"
#include "nlhom/constants.hpp"
#include "nlhom/fiber.hpp"

namespace nlhom {

template <class Real>
struct EffectiveMatrix {
    RMat<Real> g0;       // d x d, entries (1/2) g_kl
    RMat<Real> gkl_raw;  // d x d, the raw g_kl
    Real min_eigenvalue = 0;  // of g0
};

template <class Real>
EffectiveMatrix<Real> effective_matrix(const KernelSpec& a, const MuSpec& mu, const Grid& g,
                                       const CellSolution<Real>& cell) {
    (void)a;
    (void)mu;
    if (int(cell.v.size()) != g.d || int(cell.w.size()) != g.d ||
        int(cell.wkl.size()) != g.d * g.d)
        throw std::invalid_argument("cell solution does not match the grid dimension");
    const Real h = grid_h<Real>(g);

    RMat<Real> gkl(g.d, g.d);
    for (int k = 0; k < g.d; ++k)
        for (int l = 0; l < g.d; ++l)
            gkl(k, l) = h * cell.wkl[k * g.d + l].sum() - h * cell.v[k].dot(cell.w[l]) -
                        h * cell.v[l].dot(cell.w[k]);

    const Real scale = gkl.cwiseAbs().maxCoeff();
    if ((gkl - gkl.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale)
        throw std::runtime_error("effective matrix asymmetric");

    EffectiveMatrix<Real> out;
    out.gkl_raw = gkl;
    out.g0 = Real(0.5) * gkl;
    Eigen::SelfAdjointEigenSolver<RMat<Real>> es(out.g0, Eigen::EigenvaluesOnly);
    out.min_eigenvalue = es.eigenvalues()(0);
    return out;
}

/// Convenience: solve the cell problems and assemble g0 in one call.
template <class Real>
EffectiveMatrix<Real> effective_matrix(const KernelSpec& a, const MuSpec& mu, const Grid& g,
                                       int radius = 0, int threads = 1) {
    const auto cell = solve_cell_all<Real>(a, mu, g, radius, threads);
    return effective_matrix<Real>(a, mu, g, cell);
}

template <class Real>
struct PositivityReport {
    Real min_eigenvalue = 0;
    Real floor = 0;   // mu_minus C(a)
    Real margin = 0;  // min_eigenvalue - floor
    bool pass = false;
};

/// Checks <g0 xi, xi> >= mu_minus C(a) |xi|^2 through the smallest
/// eigenvalue of g0 against the coercivity floor.
template <class Real>
PositivityReport<Real> check_positivity(const EffectiveMatrix<Real>& g,
                                        const ConstantsBundle<Real>& c) {
    PositivityReport<Real> rep;
    rep.min_eigenvalue = g.min_eigenvalue;
    rep.floor = c.mu_minus * c.c_a;
    rep.margin = rep.min_eigenvalue - rep.floor;
    rep.pass = rep.margin >= 0;
    return rep;
}

/// Fiber assembly taking the typed effective matrix.
template <class Real>
FiberOperator<Real> assemble_effective_fiber(const EffectiveMatrix<Real>& g0, const Grid& g,
                                             const std::array<Real, 3>& xi) {
    return assemble_effective_fiber<Real>(g0.g0, g, xi);
}

}  // namespace nlhom
