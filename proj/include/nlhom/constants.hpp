#pragma once
// The explicit constants of the error estimates, computed by direct
// arithmetic from the kernel moments, the symbol minima, and the iteration
// constant frak_c. Everything here is a pure function of (a, mu, grid); the
// grid enters only through frak_c, whose admissible-measure search is
// quantized to grid cells.

#include <cmath>
#include <stdexcept>

#include "nlhom/base.hpp"
#include "nlhom/cell.hpp"
#include "nlhom/kernels.hpp"

namespace nlhom {

template <class Real>
struct ConstantsBundle {
    int d = 0;
    Real mu_minus = 0, mu_plus = 0;
    Real m0 = 0, m1 = 0, m2 = 0, m3 = 0, m4 = 0;  // kernel moments

    Real c_pi = 0;         // min of the symbol over |y| >= pi
    Real c_r_a = 0;        // min of the symbol over |y| >= r_a
    Real m_cal = 0;        // smallest eigenvalue of the second-moment matrix
    Real r_a = 0;          // 3 m_cal / (2 M3)
    Real c_a = 0;          // coercivity constant: min of its three branches
    Real delta0 = 0;       // mu_minus c_pi / (3 M1 mu_plus), threshold ball radius
    Real d0_bound = 0;     // mu_minus c_pi, floor for the spectral gap d0
    Real c1 = 0, c2 = 0, c3 = 0, c4 = 0, c5 = 0, c6 = 0;
    Real c_tilde_2pi = 0;  // truncated-symbol minimum over |y| >= 2 pi
    Real frak_c = 0;       // iteration constant
    Real c5_tilde = 0, c6_tilde = 0;
    Real bold_c1 = 0;      // whole-space first-order constant
    Real bold_c2 = 0;      // whole-space second-order constant
};

/// Assembles every named constant. The spectral-gap bound d0_bound stands in
/// for the true gap wherever d0 appears (a smaller d0 only enlarges the
/// constants, so the estimates remain valid), and the sup-norm sum in bold_c2
/// uses the a-priori corrector bound mu_plus M1 frak_c per component rather
/// than measured sup norms, keeping the bundle independent of any solve.
template <class Real>
ConstantsBundle<Real> constants_bundle(const KernelSpec& a, const MuSpec& mu, const Grid& g,
                                       int radius = 0, int threads = 1) {
    const Real pi = pi_v<Real>;
    ConstantsBundle<Real> c;
    c.d = a.d;
    c.mu_minus = mu.mu_minus;
    c.mu_plus = mu.mu_plus;
    c.m0 = moment(a, 0);
    c.m1 = moment(a, 1);
    c.m2 = moment(a, 2);
    c.m3 = moment(a, 3);
    c.m4 = moment(a, 4);
    for (Real m : {c.m0, c.m1, c.m2, c.m3, c.m4})
        if (!std::isfinite(m) || !(m > 0)) throw std::runtime_error("kernel moment not finite");

    c.c_pi = symbol_min(a, pi);
    c.m_cal = second_moment_floor(a);
    c.r_a = 3 * c.m_cal / (2 * c.m3);
    c.c_r_a = symbol_min(a, c.r_a);
    c.c_a = std::min({Real(0.25) * c.m_cal, c.c_r_a / (pi * pi * a.d), c.c_pi / (pi * pi * a.d)});

    c.delta0 = c.mu_minus * c.c_pi / (3 * c.m1 * c.mu_plus);
    c.d0_bound = c.mu_minus * c.c_pi;
    const Real d0 = c.d0_bound;

    c.c1 = 6 * (pi + 2) * c.mu_plus * c.m1 / (pi * d0);
    c.c2 = (pi + 2) / pi *
           (36 * std::pow(c.mu_plus * c.m1, Real(2)) / (d0 * d0) + 3 * c.mu_plus * c.m2 / d0);
    c.c3 = (pi + 2) / (2 * pi) *
           (216 * std::pow(c.mu_plus * c.m1, Real(3)) / (d0 * d0) + c.mu_plus * c.m3 +
            36 * c.mu_plus * c.mu_plus * c.m1 * c.m2 / d0);
    c.c4 = (pi + 2) / (2 * pi) *
           (1296 * std::pow(c.mu_plus * c.m1, Real(4)) / (d0 * d0 * d0) +
            c.mu_plus * c.m4 / 4 +
            c.mu_plus * c.mu_plus * (12 * c.m1 * c.m3 + 9 * c.m2 * c.m2) / d0 +
            1296 * std::pow(c.mu_plus, Real(3)) * c.m1 * c.m1 * c.m2 / (4 * d0 * d0));

    const Real mca = c.mu_minus * c.c_a;
    c.c5 = std::sqrt(3 / d0) + c.c1 / std::sqrt(mca) + c.c3 / std::pow(mca, Real(1.5));
    c.c6 = 3 / d0 + (2 * c.c1 * c.c1 + 2 * c.c2) / mca + (3 * c.c1 * c.c3 + c.c4) / (mca * mca) +
           c.c3 * c.c3 / (mca * mca * mca);

    const auto app = appendix_constant_detail<Real>(a, mu, g, radius, threads);
    c.c_tilde_2pi = app.c_tilde;
    c.frak_c = app.value;

    c.c5_tilde = std::max(c.c5, 2 / (std::sqrt(mca) * c.delta0));
    c.c6_tilde = std::max(c.c6, 2 / (mca * c.delta0 * c.delta0) + 2 * c.c1 / (mca * c.delta0));

    c.bold_c1 = c.c5_tilde + 1 / (std::sqrt(mca) * pi);
    const Real sup_sum = std::sqrt(Real(a.d)) * c.mu_plus * c.m1 * c.frak_c;
    c.bold_c2 = c.c6_tilde + 1 / (mca * pi * pi) + 2 * sup_sum / (mca * pi);
    return c;
}

}  // namespace nlhom
