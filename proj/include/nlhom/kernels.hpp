#pragma once
// Kernel families a(z), coupling functions mu(x,y), closed-form moments and
// symbols, and unit-cell periodization into difference-grid tables.
//
// Periodization: atil(xi,z) = sum_{n in Z^d} a(z+n) exp(-i<xi,z+n>), which is
// 1-periodic in z. The grid tables below hold the exact average of atil over
// the centered cell around each difference node, not the node value. Averaging
// keeps the assembled operator family exactly differentiable in xi (the
// moment-weighted tables are the literal xi-derivatives of the order-0 table),
// and it makes the mass and moment identities
//     h * sum_r table0(r) = M_0,   h * sum_r table_zz(r) = M_2
// hold to round-off. Node sampling instead freezes an h^2/6 trapezoid bias
// into the second-moment table of the box family (its periodization has a
// kink that always lands on a node), which is fatal for the tight effective
// matrix checks downstream.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <mutex>
#include <stdexcept>
#include <vector>

#include "nlhom/base.hpp"

namespace nlhom {

enum class KernelFamily { gaussian, box, exponential, tabulated };

/// Radial kernel description. `param` is sigma / r / lambda by family;
/// `normalization` is the total mass, so moment(spec, 0) == normalization
/// for the builtin families. Values vanish beyond truncation_radius.
struct KernelSpec {
    int d = 1;
    KernelFamily family = KernelFamily::gaussian;
    double param = 1.0;
    double normalization = 1.0;
    double truncation_radius = 8.0;
    std::vector<double> radii;   // tabulated profile; strictly increasing from 0
    std::vector<double> values;  // tabulated profile values (pre-normalization)

    static KernelSpec gaussian(int d, double sigma, double norm = 1.0);
    static KernelSpec box(int d, double r, double norm = 1.0);
    static KernelSpec exponential(int d, double lambda, double norm = 1.0);
    static KernelSpec tabulated(int d, std::vector<double> radii, std::vector<double> values,
                                double norm = 1.0);
    void validate() const;
};

namespace detail {

inline double unit_sphere_area(int d) {
    switch (d) {
        case 1: return 2.0;
        case 2: return 2.0 * pi_v<double>;
        default: return 4.0 * pi_v<double>;
    }
}

inline double unit_ball_volume(int d) { return unit_sphere_area(d) / d; }

}  // namespace detail

inline void KernelSpec::validate() const {
    if (d < 1 || d > 3) throw std::invalid_argument("kernel dimension must be 1, 2, or 3");
    if (normalization <= 0) throw std::invalid_argument("kernel normalization must be positive");
    if (truncation_radius <= 0) throw std::invalid_argument("truncation radius must be positive");
    if (family == KernelFamily::tabulated) {
        if (radii.size() != values.size() || radii.size() < 2)
            throw std::invalid_argument("tabulated kernel needs >= 2 (radius, value) pairs");
        if (radii.front() != 0.0)
            throw std::invalid_argument("tabulated radial grid must start at 0");
        for (std::size_t i = 0; i + 1 < radii.size(); ++i)
            if (!(radii[i] < radii[i + 1]))
                throw std::invalid_argument("tabulated radial grid must be strictly increasing");
        for (double v : values) {
            if (!(v >= 0) || !std::isfinite(v))
                throw std::invalid_argument("tabulated kernel values must be nonnegative");
        }
    } else if (param <= 0) {
        throw std::invalid_argument("kernel family parameter must be positive");
    }
}

inline KernelSpec KernelSpec::gaussian(int d, double sigma, double norm) {
    KernelSpec s;
    s.d = d;
    s.family = KernelFamily::gaussian;
    s.param = sigma;
    s.normalization = norm;
    s.truncation_radius = 8.0 * sigma;  // tail mass < 1e-14, below quadrature error
    s.validate();
    return s;
}

inline KernelSpec KernelSpec::box(int d, double r, double norm) {
    KernelSpec s;
    s.d = d;
    s.family = KernelFamily::box;
    s.param = r;
    s.normalization = norm;
    s.truncation_radius = r;
    s.validate();
    return s;
}

inline KernelSpec KernelSpec::exponential(int d, double lambda, double norm) {
    KernelSpec s;
    s.d = d;
    s.family = KernelFamily::exponential;
    s.param = lambda;
    s.normalization = norm;
    // 45/lambda keeps even the fourth-moment tail below 1e-14 relative
    // (exp(-45) * 45^7/7! ~ 1e-12 absolute on O(100) moments); a shorter
    // 12/lambda cut would leave a 6e-6 mass defect visible in every table.
    s.truncation_radius = 45.0 / lambda;
    s.validate();
    return s;
}

inline KernelSpec KernelSpec::tabulated(int d, std::vector<double> radii,
                                        std::vector<double> values, double norm) {
    KernelSpec s;
    s.d = d;
    s.family = KernelFamily::tabulated;
    s.param = 1.0;
    s.normalization = norm;
    s.radii = std::move(radii);
    s.values = std::move(values);
    s.truncation_radius = s.radii.empty() ? 1.0 : s.radii.back();
    s.validate();
    return s;
}

/// Radial profile value at distance s >= 0. Exactly 0 beyond the truncation
/// radius. A tabulated spec whose truncation radius was raised past its last
/// table entry has genuinely unknown values in between and reports that.
template <class Real>
Real eval_radial(const KernelSpec& a, Real s) {
    if (!(s >= 0)) throw std::invalid_argument("radial distance must be nonnegative");
    if (s > Real(a.truncation_radius)) return Real(0);
    switch (a.family) {
        case KernelFamily::gaussian: {
            const Real sig = Real(a.param);
            const Real c = Real(a.normalization) *
                           std::pow(Real(2) * pi_v<Real> * sig * sig, -Real(a.d) / 2);
            return c * std::exp(-s * s / (2 * sig * sig));
        }
        case KernelFamily::box: {
            const Real r = Real(a.param);
            if (s > r) return Real(0);
            const Real dens = Real(a.normalization) /
                              (Real(detail::unit_ball_volume(a.d)) * std::pow(r, Real(a.d)));
            return dens;
        }
        case KernelFamily::exponential: {
            const Real lam = Real(a.param);
            Real fact = 1;  // (d-1)!
            for (int i = 2; i < a.d; ++i) fact *= i;
            const Real c = Real(a.normalization) * std::pow(lam, Real(a.d)) /
                           (Real(detail::unit_sphere_area(a.d)) * fact);
            return c * std::exp(-lam * s);
        }
        case KernelFamily::tabulated: {
            const double sd = static_cast<double>(s);
            if (sd > a.radii.back()) throw std::runtime_error("table gap");
            const auto it = std::upper_bound(a.radii.begin(), a.radii.end(), sd);
            const std::size_t hi = std::min<std::size_t>(it - a.radii.begin(), a.radii.size() - 1);
            const std::size_t lo = hi == 0 ? 0 : hi - 1;
            if (hi == lo) return Real(a.normalization * a.values[lo]);
            const double t = (sd - a.radii[lo]) / (a.radii[hi] - a.radii[lo]);
            return Real(a.normalization * ((1 - t) * a.values[lo] + t * a.values[hi]));
        }
    }
    return Real(0);
}

inline double eval_kernel(const KernelSpec& a, const std::array<double, 3>& z) {
    double s2 = 0;
    for (int j = 0; j < a.d; ++j) s2 += z[j] * z[j];
    return eval_radial<double>(a, std::sqrt(s2));
}

namespace detail {

/// Composite-midpoint quadrature of integrand(s) * profile(s) over the
/// tabulated radial grid, one panel of `sub` midpoints per table segment.
template <class Fn>
double tabulated_radial_quadrature(const KernelSpec& a, Fn&& integrand, int sub = 4096) {
    double total = 0;
    for (std::size_t seg = 0; seg + 1 < a.radii.size(); ++seg) {
        const double lo = a.radii[seg], hi = a.radii[seg + 1];
        const double w = (hi - lo) / sub;
        for (int i = 0; i < sub; ++i) {
            const double s = lo + (i + 0.5) * w;
            total += w * eval_radial<double>(a, s) * integrand(s);
        }
    }
    return total;
}

}  // namespace detail

/// M_k = integral of |z|^k a(z) over R^d; closed form for builtin families,
/// composite midpoint on the radial grid for tabulated ones.
inline double moment(const KernelSpec& a, int k) {
    if (k < 0 || k > 4) throw std::invalid_argument("moment order must be between 0 and 4");
    switch (a.family) {
        case KernelFamily::gaussian:
            return a.normalization * std::pow(a.param, k) * std::pow(2.0, 0.5 * k) *
                   std::tgamma(0.5 * (a.d + k)) / std::tgamma(0.5 * a.d);
        case KernelFamily::box:
            return a.normalization * a.d * std::pow(a.param, k) / (a.d + k);
        case KernelFamily::exponential: {
            double fact = 1;  // (k+d-1)! / (d-1)!
            for (int i = a.d; i < a.d + k; ++i) fact *= i;
            return a.normalization * fact / std::pow(a.param, k);
        }
        case KernelFamily::tabulated: {
            const double sd = detail::unit_sphere_area(a.d);
            const double m = sd * detail::tabulated_radial_quadrature(
                                      a, [&](double s) { return std::pow(s, k + a.d - 1); });
            if (!std::isfinite(m)) throw std::runtime_error("tabulated moment diverges");
            return m;
        }
    }
    return 0;
}

inline double norm_L1(const KernelSpec& a) { return moment(a, 0); }

/// Smallest eigenvalue of the second-moment matrix int z z^T a(z) dz. Every
/// supported family is radial, so the matrix is (M_2/d) * identity.
inline double second_moment_floor(const KernelSpec& a) { return moment(a, 2) / a.d; }

/// Ahat(y) = integral of (1 - cos<z,y>) a(z) dz, by closed form where the
/// family admits one and radial quadrature for tabulated profiles.
inline double symbol_Ahat(const KernelSpec& a, const std::array<double, 3>& y) {
    double k2 = 0;
    for (int j = 0; j < a.d; ++j) k2 += y[j] * y[j];
    const double k = std::sqrt(k2);
    if (k == 0) return 0;
    const double M0 = moment(a, 0);
    switch (a.family) {
        case KernelFamily::gaussian: {
            const double t = 0.5 * a.param * a.param * k2;
            return M0 * (-std::expm1(-t));
        }
        case KernelFamily::box: {
            const double x = a.param * k;
            double shape;  // 1 - (radial average of cos over the ball)
            if (a.d == 1) {
                shape = x < 1e-3 ? x * x / 6.0 * (1 - x * x / 20.0) : 1 - std::sin(x) / x;
            } else if (a.d == 2) {
                shape = x < 1e-3 ? x * x / 8.0 : 1 - 2 * std::cyl_bessel_j(1.0, x) / x;
            } else {
                shape = x < 1e-3 ? x * x / 10.0
                                 : 1 - 3 * (std::sin(x) - x * std::cos(x)) / (x * x * x);
            }
            return M0 * shape;
        }
        case KernelFamily::exponential: {
            const double lam = a.param;
            const double t = k2 / (lam * lam);
            // 1 - (1+t)^(-q) written through log1p to survive tiny t.
            auto one_minus_pow = [&](double q) { return -std::expm1(-q * std::log1p(t)); };
            if (a.d == 1) return M0 * k2 / (lam * lam + k2);
            if (a.d == 2) return M0 * one_minus_pow(1.5);
            return M0 * one_minus_pow(2.0);
        }
        case KernelFamily::tabulated: {
            const double sd = detail::unit_sphere_area(a.d);
            auto one_minus_cos_avg = [&](double s) -> double {
                const double x = s * k;
                if (a.d == 1) {
                    const double h = std::sin(0.5 * x);
                    return 2 * h * h;  // 1 - cos x
                }
                if (a.d == 2) return 1 - std::cyl_bessel_j(0.0, x);
                return x < 1e-8 ? x * x / 6.0 : 1 - std::sin(x) / x;
            };
            return sd * detail::tabulated_radial_quadrature(a, [&](double s) {
                return std::pow(s, a.d - 1) * one_minus_cos_avg(s);
            });
        }
    }
    return 0;
}

/// min over |y| >= r of Ahat(y). Every supported family is radially
/// symmetric, so this reduces to one variable s = |y|: a dense scan over a
/// window wide enough to contain the oscillation lobes of the transform,
/// then golden-section refinement around the best sample (the minimum may
/// sit on the boundary s = r, which the bracket covers).
inline double symbol_min(const KernelSpec& a, double r) {
    if (!(r > 0)) throw std::invalid_argument("symbol_min radius must be positive");
    const double window = 80.0 / std::min(a.truncation_radius, 8.0);
    const int samples = a.family == KernelFamily::tabulated ? 1024 : 4096;
    auto f = [&](double s) { return symbol_Ahat(a, {s, 0, 0}); };

    const double step = window / samples;
    double best_s = r, best = f(r);
    for (int i = 1; i <= samples; ++i) {
        const double s = r + i * step;
        const double v = f(s);
        if (v < best) {
            best = v;
            best_s = s;
        }
    }
    double lo = std::max(r, best_s - step), hi = best_s + step;
    const double gr = 0.5 * (std::sqrt(5.0) - 1);
    double x1 = hi - gr * (hi - lo), x2 = lo + gr * (hi - lo);
    double f1 = f(x1), f2 = f(x2);
    for (int it = 0; it < 90; ++it) {
        if (f1 < f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - gr * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + gr * (hi - lo);
            f2 = f(x2);
        }
    }
    return std::min({best, f1, f2});
}

// ---------------------------------------------------------------------------
// Coupling function mu(x,y)
// ---------------------------------------------------------------------------

enum class MuFamily { constant, cosine_product, tabulated };

/// mu(x,y): symmetric, 1-periodic in each variable, bounded by the declared
/// window [mu_minus, mu_plus]. cosine_product is
///     base + amp * prod_j cos(2 pi x_j) cos(2 pi y_j).
/// The tabulated family (d=1 only) holds node values on an n x n grid,
/// evaluated by periodic bilinear interpolation.
struct MuSpec {
    MuFamily family = MuFamily::constant;
    double mu0 = 1.0;
    double base = 1.0;
    double amp = 0.0;
    int table_n = 0;
    std::vector<double> table;
    double mu_minus = 1.0;
    double mu_plus = 1.0;

    static MuSpec constant(double mu0);
    static MuSpec cosine_product(double base, double alpha);
    static MuSpec tabulated(int n, std::vector<double> values);
    void validate() const;
};

inline void MuSpec::validate() const {
    if (!(mu_minus > 0) || !(mu_plus >= mu_minus))
        throw std::invalid_argument("mu bounds must satisfy 0 < mu_minus <= mu_plus");
    switch (family) {
        case MuFamily::constant:
            if (mu0 <= 0) throw std::invalid_argument("constant mu must be positive");
            break;
        case MuFamily::cosine_product:
            if (base <= 0) throw std::invalid_argument("cosine_product base must be positive");
            if (!(std::abs(amp) < 1))
                throw std::invalid_argument("cosine_product amplitude must satisfy |alpha| < 1");
            if (base - std::abs(amp) <= 0)
                throw std::invalid_argument("cosine_product range must stay positive");
            break;
        case MuFamily::tabulated: {
            if (table_n < 2 || table.size() != std::size_t(table_n) * table_n)
                throw std::invalid_argument("tabulated mu needs an n x n value grid, n >= 2");
            double mx = 0;
            for (double v : table) {
                if (!(v > 0)) throw std::invalid_argument("tabulated mu values must be positive");
                mx = std::max(mx, v);
            }
            for (int i = 0; i < table_n; ++i)
                for (int j = 0; j < i; ++j)
                    if (std::abs(table[i * table_n + j] - table[j * table_n + i]) > 1e-12 * mx)
                        throw std::runtime_error("mu not symmetric");
            break;
        }
    }
}

inline MuSpec MuSpec::constant(double mu0) {
    MuSpec m;
    m.family = MuFamily::constant;
    m.mu0 = m.mu_minus = m.mu_plus = mu0;
    m.validate();
    return m;
}

inline MuSpec MuSpec::cosine_product(double base, double alpha) {
    MuSpec m;
    m.family = MuFamily::cosine_product;
    m.base = base;
    m.amp = alpha;
    m.mu_minus = base - std::abs(alpha);
    m.mu_plus = base + std::abs(alpha);
    m.validate();
    return m;
}

inline MuSpec MuSpec::tabulated(int n, std::vector<double> values) {
    MuSpec m;
    m.family = MuFamily::tabulated;
    m.table_n = n;
    m.table = std::move(values);
    m.mu_minus = *std::min_element(m.table.begin(), m.table.end());
    m.mu_plus = *std::max_element(m.table.begin(), m.table.end());
    m.validate();
    return m;
}

namespace detail {

inline double mu_table_bilinear(const MuSpec& m, double x, double y) {
    const int n = m.table_n;
    auto wrap = [n](int i) { return ((i % n) + n) % n; };
    const double u = (x - std::floor(x)) * n;
    const double v = (y - std::floor(y)) * n;
    const int i0 = static_cast<int>(std::floor(u)), j0 = static_cast<int>(std::floor(v));
    const double fu = u - i0, fv = v - j0;
    auto at = [&](int i, int j) { return m.table[wrap(i) * n + wrap(j)]; };
    return (1 - fu) * (1 - fv) * at(i0, j0) + fu * (1 - fv) * at(i0 + 1, j0) +
           (1 - fu) * fv * at(i0, j0 + 1) + fu * fv * at(i0 + 1, j0 + 1);
}

}  // namespace detail

inline double eval_mu(const MuSpec& m, const std::array<double, 3>& x,
                      const std::array<double, 3>& y, int d) {
    switch (m.family) {
        case MuFamily::constant: return m.mu0;
        case MuFamily::cosine_product: {
            double prod = 1;
            for (int j = 0; j < d; ++j)
                prod *= std::cos(2 * pi_v<double> * x[j]) * std::cos(2 * pi_v<double> * y[j]);
            return m.base + m.amp * prod;
        }
        case MuFamily::tabulated:
            if (d != 1) throw std::invalid_argument("tabulated mu supports d=1 only");
            return detail::mu_table_bilinear(m, x[0], y[0]);
    }
    return m.mu0;
}

/// Precomputed mu over grid node pairs; operator()(k, m) takes flat indices.
template <class Real>
struct MuOnGrid {
    MuFamily family = MuFamily::constant;
    Real c0 = 1, amp = 0;
    std::vector<Real> axis_factor;  // cosine_product: prod_j cos(2 pi k_j / N)
    std::vector<Real> dense;        // tabulated: N x N resampled values
    std::int64_t n = 0;

    Real operator()(std::int64_t k, std::int64_t m) const {
        switch (family) {
            case MuFamily::constant: return c0;
            case MuFamily::cosine_product: return c0 + amp * axis_factor[k] * axis_factor[m];
            case MuFamily::tabulated: return dense[k * n + m];
        }
        return c0;
    }
};

template <class Real>
MuOnGrid<Real> mu_on_grid(const MuSpec& m, const Grid& g) {
    m.validate();
    MuOnGrid<Real> out;
    out.family = m.family;
    out.n = g.nodes();
    switch (m.family) {
        case MuFamily::constant: out.c0 = Real(m.mu0); break;
        case MuFamily::cosine_product: {
            out.c0 = Real(m.base);
            out.amp = Real(m.amp);
            out.axis_factor.resize(g.nodes());
            for (std::int64_t k = 0; k < g.nodes(); ++k) {
                const auto idx = unflatten(g, k);
                Real prod = 1;
                for (int j = 0; j < g.d; ++j)
                    prod *= std::cos(2 * pi_v<Real> * Real(idx[j]) / Real(g.N));
                out.axis_factor[k] = prod;
            }
            break;
        }
        case MuFamily::tabulated: {
            if (g.d != 1) throw std::invalid_argument("tabulated mu supports d=1 only");
            out.dense.resize(out.n * out.n);
            for (std::int64_t i = 0; i < out.n; ++i)
                for (std::int64_t j = 0; j < out.n; ++j)
                    out.dense[i * out.n + j] = Real(detail::mu_table_bilinear(
                        m, double(i) / g.N, double(j) / g.N));
            break;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Gauss-Legendre rules (cached; used by the cell-averaging quadrature)
// ---------------------------------------------------------------------------

template <class Real>
struct GLRule {
    std::vector<Real> x, w;  // nodes on (-1,1), weights summing to 2
};

template <class Real>
const GLRule<Real>& gauss_legendre(int n) {
    static std::map<int, GLRule<Real>> cache;
    static std::mutex mtx;
    std::lock_guard<std::mutex> lock(mtx);
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;

    GLRule<Real> r;
    r.x.assign(n, Real(0));
    r.w.assign(n, Real(0));
    for (int i = 0; i < (n + 1) / 2; ++i) {
        // Newton on P_n from the Chebyshev-like initial guess.
        Real x = std::cos(pi_v<Real> * (Real(i) + Real(0.75)) / (Real(n) + Real(0.5)));
        Real dp = 0;
        for (int iter = 0; iter < 100; ++iter) {
            Real p0 = 1, p1 = x;
            for (int k = 2; k <= n; ++k) {
                const Real p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / Real(k);
                p0 = p1;
                p1 = p2;
            }
            dp = Real(n) * (x * p1 - p0) / (x * x - 1);
            const Real dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) <= std::numeric_limits<Real>::epsilon() * 4) break;
        }
        const Real w = Real(2) / ((1 - x * x) * dp * dp);
        r.x[i] = -x;
        r.x[n - 1 - i] = x;
        r.w[i] = w;
        r.w[n - 1 - i] = w;
    }
    if (n % 2 == 1) r.x[n / 2] = 0;
    return cache.emplace(n, std::move(r)).first->second;
}

// ---------------------------------------------------------------------------
// Periodization
// ---------------------------------------------------------------------------

template <class Real>
struct PeriodizedKernel {
    std::vector<std::complex<Real>> values;  // cell averages on the difference grid
    std::array<Real, 3> xi{};
    int lattice_sum_radius = 0;
    Real tail_bound = 0;
};

/// Smallest image range making the truncated lattice sum exact: every omitted
/// image sits beyond the kernel support for any point of the unit cell.
inline int default_lattice_radius(const KernelSpec& a) {
    return static_cast<int>(std::ceil(a.truncation_radius + std::sqrt(double(a.d))));
}

namespace detail {

/// Positive radii where the radial profile is not smooth (plus the truncation
/// edge); `kink_at_zero` marks profiles with a corner at s=0.
inline void radial_breakpoints(const KernelSpec& a, std::vector<double>& out,
                               bool& kink_at_zero) {
    out.clear();
    kink_at_zero = false;
    switch (a.family) {
        case KernelFamily::gaussian: break;
        case KernelFamily::box: out.push_back(a.param); break;
        case KernelFamily::exponential: kink_at_zero = true; break;
        case KernelFamily::tabulated:
            kink_at_zero = true;
            out.assign(a.radii.begin() + 1, a.radii.end());
            break;
    }
    out.push_back(a.truncation_radius);
}

template <class Real>
std::complex<Real> line_cell_integral(const KernelSpec& a, Real xi, int power, Real lo, Real hi,
                                      const std::vector<double>& breaks, bool kink_at_zero,
                                      const GLRule<Real>& gl) {
    const Real R = Real(a.truncation_radius);
    if (lo >= R || hi <= -R) return {};
    // Cut the interval at every non-smooth point of y^q * a(|y|).
    std::array<Real, 16> cuts;
    int nc = 0;
    cuts[nc++] = lo;
    auto push = [&](Real c) {
        if (c > lo && c < hi && nc < 15) cuts[nc++] = c;
    };
    if (kink_at_zero) push(Real(0));
    for (double b : breaks) {
        push(Real(-b));
        push(Real(b));
    }
    cuts[nc++] = hi;
    std::sort(cuts.begin(), cuts.begin() + nc);

    std::complex<Real> acc{};
    for (int p = 0; p + 1 < nc; ++p) {
        const Real p0 = cuts[p], p1 = cuts[p + 1];
        const Real mid = (p0 + p1) / 2, half = (p1 - p0) / 2;
        if (std::abs(mid) >= R) continue;  // piece outside the support
        for (std::size_t g = 0; g < gl.x.size(); ++g) {
            const Real y = mid + half * gl.x[g];
            Real f = eval_radial<Real>(a, std::abs(y));
            if (f == 0) continue;
            for (int q = 0; q < power; ++q) f *= y;
            const Real ph = -xi * y;
            acc += (half * gl.w[g] * f) * std::complex<Real>(std::cos(ph), std::sin(ph));
        }
    }
    return acc;
}

}  // namespace detail

/// Cell-averaged difference table of the moment-weighted periodization
///     sum_n (z+n)^alpha a(z+n) exp(-i<xi, z+n>),
/// entry r = exact average over the centered cell around z = r/N. In d=1 each
/// image integral is split at the kernel breakpoints, so Gauss-Legendre is
/// exact to round-off; in d >= 2 a tensor rule is used without splitting and
/// discontinuous families keep an O(h) bias on support-boundary cells (the
/// quantitative d >= 2 checks therefore use the smooth families).
template <class Real>
std::vector<std::complex<Real>> cell_averaged_table(const KernelSpec& a,
                                                    const std::array<Real, 3>& xi, const Grid& g,
                                                    int radius, const std::array<int, 3>& alpha,
                                                    int threads = 1) {
    a.validate();
    if (a.d != g.d) throw std::invalid_argument("kernel dimension does not match grid");
    if (radius < 1) throw std::invalid_argument("lattice sum radius must be >= 1");

    std::vector<double> breaks;
    bool kink0 = false;
    detail::radial_breakpoints(a, breaks, kink0);
    const Real R = Real(a.truncation_radius);
    const Real side = Real(1) / Real(g.N);

    std::vector<std::complex<Real>> table(g.nodes());

    if (g.d == 1) {
        const auto& gl = gauss_legendre<Real>(12);
        parallel_for(g.nodes(), threads, [&](std::int64_t r) {
            std::complex<Real> acc{};
            const Real c = Real(r) * side;
            for (int n = -radius; n <= radius; ++n) {
                const Real lo = c + Real(n) - side / 2;
                const Real hi = lo + side;
                acc += detail::line_cell_integral<Real>(a, xi[0], alpha[0], lo, hi, breaks,
                                                        kink0, gl);
            }
            table[r] = acc * Real(g.N);
        });
        return table;
    }

    const auto& gl = gauss_legendre<Real>(12);
    const int G = static_cast<int>(gl.x.size());
    parallel_for(g.nodes(), threads, [&](std::int64_t r) {
        const auto idx = unflatten(g, r);
        std::array<Real, 3> c{};
        for (int j = 0; j < g.d; ++j) c[j] = Real(idx[j]) * side;
        std::complex<Real> acc{};

        std::array<int, 3> n{};
        for (n[0] = -radius; n[0] <= radius; ++n[0])
            for (n[1] = -radius; n[1] <= radius; ++n[1])
                for (n[2] = g.d < 3 ? 0 : -radius; n[2] <= (g.d < 3 ? 0 : radius); ++n[2]) {
                    // Reject image boxes fully outside the support ball.
                    Real dist2 = 0;
                    for (int j = 0; j < g.d; ++j) {
                        const Real away =
                            std::max(Real(0), std::abs(c[j] + Real(n[j])) - side / 2);
                        dist2 += away * away;
                    }
                    if (dist2 > R * R) continue;

                    const int g2 = g.d >= 2 ? G : 1, g3 = g.d >= 3 ? G : 1;
                    for (int i0 = 0; i0 < G; ++i0)
                        for (int i1 = 0; i1 < g2; ++i1)
                            for (int i2 = 0; i2 < g3; ++i2) {
                                std::array<Real, 3> y{};
                                const std::array<int, 3> ii{i0, i1, i2};
                                Real wgt = 1, s2 = 0, phase = 0;
                                for (int j = 0; j < g.d; ++j) {
                                    y[j] = c[j] + Real(n[j]) + (side / 2) * gl.x[ii[j]];
                                    wgt *= gl.w[ii[j]] / 2;  // box average, no volume factor
                                    s2 += y[j] * y[j];
                                    phase -= xi[j] * y[j];
                                }
                                Real f = eval_radial<Real>(a, std::sqrt(s2));
                                if (f == 0) continue;
                                for (int j = 0; j < g.d; ++j)
                                    for (int q = 0; q < alpha[j]; ++q) f *= y[j];
                                acc += (wgt * f) *
                                       std::complex<Real>(std::cos(phase), std::sin(phase));
                            }
                }
        table[r] = acc;
    });
    return table;
}

template <class Real>
PeriodizedKernel<Real> periodize(const KernelSpec& a, const std::array<Real, 3>& xi,
                                 const Grid& g, int radius, int threads = 1) {
    PeriodizedKernel<Real> out;
    out.values = cell_averaged_table<Real>(a, xi, g, radius, {0, 0, 0}, threads);
    out.xi = xi;
    out.lattice_sum_radius = radius;
    if (radius >= a.truncation_radius) {
        out.tail_bound = 0;  // omitted images vanish identically on the cell
    } else {
        const Real markov = Real(moment(a, 1)) / Real(radius);
        out.tail_bound = std::min(markov, Real(moment(a, 0)));
    }
    return out;
}

template <class Real>
PeriodizedKernel<Real> periodize(const KernelSpec& a, const std::array<Real, 3>& xi,
                                 const Grid& g) {
    return periodize<Real>(a, xi, g, default_lattice_radius(a));
}

}  // namespace nlhom
