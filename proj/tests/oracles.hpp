#pragma once
// Test-only reference computations, kept deliberately naive and independent of
// the library's quadrature choices: plain midpoint sums, exact interval
// arithmetic for the box family, dense eigendecompositions. Tolerances in the
// test files reflect each oracle's own accuracy, not the library's.

#include <array>
#include <cmath>
#include <complex>
#include <vector>

#include "nlhom/base.hpp"
#include "nlhom/kernels.hpp"

namespace oracle {

/// Midpoint quadrature of |z|^k a(z) via the radial reduction
/// S_d * int rho(s) s^(k+d-1) ds over [0, R].
inline double midpoint_moment(const nlhom::KernelSpec& a, int k, int M = 2000000) {
    const double R = a.truncation_radius;
    const double w = R / M;
    double acc = 0;
    for (int i = 0; i < M; ++i) {
        const double s = (i + 0.5) * w;
        acc += nlhom::eval_radial<double>(a, s) * std::pow(s, k + a.d - 1);
    }
    return nlhom::detail::unit_sphere_area(a.d) * acc * w;
}

/// d=1 symbol by plain midpoint: 2 * int_0^R rho(s) (1 - cos(s y)) ds.
inline double midpoint_Ahat_d1(const nlhom::KernelSpec& a, double y, int M = 2000000) {
    const double R = a.truncation_radius;
    const double w = R / M;
    double acc = 0;
    for (int i = 0; i < M; ++i) {
        const double s = (i + 0.5) * w;
        acc += nlhom::eval_radial<double>(a, s) * (1 - std::cos(s * y));
    }
    return 2 * acc * w;
}

/// d=2 symbol by a tensor midpoint sum over the square [-R,R]^2; no angular
/// reduction, so it shares nothing with the library's closed forms.
inline double tensor_Ahat_d2(const nlhom::KernelSpec& a, const std::array<double, 2>& y,
                             int M = 3000) {
    const double R = a.truncation_radius;
    const double w = 2 * R / M;
    double acc = 0;
    for (int i = 0; i < M; ++i) {
        const double z1 = -R + (i + 0.5) * w;
        for (int j = 0; j < M; ++j) {
            const double z2 = -R + (j + 0.5) * w;
            const double s = std::sqrt(z1 * z1 + z2 * z2);
            const double f = nlhom::eval_radial<double>(a, s);
            if (f != 0) acc += f * (1 - std::cos(z1 * y[0] + z2 * y[1]));
        }
    }
    return acc * w * w;
}

/// Exact cell average of the periodized box kernel in d=1: intersection
/// lengths (xi = 0) or closed-form phase integrals (xi != 0) per image.
inline std::complex<double> box_cell_average_d1(double r_box, double density, double xi, int N,
                                                int cell, int radius) {
    const double side = 1.0 / N;
    const double c = double(cell) / N;
    std::complex<double> acc{};
    for (int n = -radius; n <= radius; ++n) {
        const double lo = std::max(c + n - side / 2, -r_box);
        const double hi = std::min(c + n + side / 2, r_box);
        if (hi <= lo) continue;
        if (xi == 0) {
            acc += hi - lo;
        } else {
            const std::complex<double> I(0, 1);
            acc += (std::exp(-I * xi * lo) - std::exp(-I * xi * hi)) / (I * xi);
        }
    }
    return acc * density * double(N);
}

/// Cell average of the periodized gaussian by brute midpoint subdivision with
/// a wide untruncated lattice sum.
inline std::complex<double> gaussian_cell_average_d1(double sigma, double norm, double xi, int N,
                                                     int cell, int radius = 50, int sub = 400) {
    const double side = 1.0 / N;
    const double c = double(cell) / N;
    const double pref = norm / std::sqrt(2 * nlhom::pi_v<double> * sigma * sigma);
    std::complex<double> acc{};
    for (int n = -radius; n <= radius; ++n) {
        for (int i = 0; i < sub; ++i) {
            const double y = c + n - side / 2 + (i + 0.5) * side / sub;
            const double f = pref * std::exp(-y * y / (2 * sigma * sigma));
            acc += f * std::complex<double>(std::cos(xi * y), -std::sin(xi * y));
        }
    }
    return acc / double(sub);
}

}  // namespace oracle
