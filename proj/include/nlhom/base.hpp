#pragma once
// Torus grid bookkeeping and small numeric helpers shared by every module.
//
// Nodes of the unit cell [0,1)^d are x_k = k/N componentwise, k in {0..N-1}^d,
// stored row-major. Dual modes use FFT ordering: component c maps to the
// integer frequency c for c <= N/2-1 and c-N above, covering {-N/2..N/2-1}.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace nlhom {

template <class Real>
inline constexpr Real pi_v = std::numbers::pi_v<Real>;

struct Grid {
    int d = 1;
    int N = 8;

    std::int64_t nodes() const {
        std::int64_t n = 1;
        for (int j = 0; j < d; ++j) n *= N;
        return n;
    }
};

template <class Real>
Real grid_h(const Grid& g) {
    return Real(1) / Real(g.nodes());
}

inline Grid make_grid(int d, int N) {
    if (d < 1 || d > 3) throw std::invalid_argument("d must be 1, 2, or 3");
    if (N % 2 != 0) throw std::invalid_argument("N must be even");
    if (N < 8) throw std::invalid_argument("N must be at least 8");
    return Grid{d, N};
}

inline std::array<int, 3> unflatten(const Grid& g, std::int64_t idx) {
    std::array<int, 3> k{0, 0, 0};
    for (int j = g.d - 1; j >= 0; --j) {
        k[j] = static_cast<int>(idx % g.N);
        idx /= g.N;
    }
    return k;
}

inline std::int64_t flatten(const Grid& g, const std::array<int, 3>& k) {
    std::int64_t idx = 0;
    for (int j = 0; j < g.d; ++j) idx = idx * g.N + k[j];
    return idx;
}

/// Flat index of the componentwise difference (k - m) mod N.
inline std::int64_t diff_index(const Grid& g, const std::array<int, 3>& k,
                               const std::array<int, 3>& m) {
    std::int64_t idx = 0;
    for (int j = 0; j < g.d; ++j) idx = idx * g.N + ((k[j] - m[j]) % g.N + g.N) % g.N;
    return idx;
}

inline int mode_component(int c, int N) { return c <= N / 2 - 1 ? c : c - N; }

/// Integer frequency vector of the flat node index, FFT ordering per component.
inline std::array<int, 3> mode_of(const Grid& g, std::int64_t idx) {
    std::array<int, 3> n = unflatten(g, idx);
    for (int j = 0; j < g.d; ++j) n[j] = mode_component(n[j], g.N);
    return n;
}

/// Runs fn(i) for i in [0,n), split across `threads` workers. Each worker owns a
/// contiguous block, so results written to slot i are deterministic regardless
/// of the thread count.
template <class Fn>
void parallel_for(std::int64_t n, int threads, Fn&& fn) {
    if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
    if (threads <= 1 || n < 64) {
        for (std::int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const int workers = static_cast<int>(std::min<std::int64_t>(threads, n));
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        const std::int64_t lo = n * w / workers;
        const std::int64_t hi = n * (w + 1) / workers;
        pool.emplace_back([lo, hi, &fn] {
            for (std::int64_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

struct LinearFit {
    double intercept = 0;
    double slope = 0;
};

/// Ordinary least squares line through (xs, ys).
inline LinearFit linear_fit(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.size() < 2)
        throw std::invalid_argument("linear_fit needs >= 2 points");
    const double n = static_cast<double>(xs.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sx += xs[i];
        sy += ys[i];
        sxx += xs[i] * xs[i];
        sxy += xs[i] * ys[i];
    }
    const double denom = n * sxx - sx * sx;
    if (denom == 0) throw std::invalid_argument("linear_fit: degenerate abscissae");
    LinearFit f;
    f.slope = (n * sxy - sx * sy) / denom;
    f.intercept = (sy - f.slope * sx) / n;
    return f;
}

/// Slope of the log-log regression; ys must be positive.
inline double loglog_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
    std::vector<double> lx(xs.size()), ly(ys.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        lx[i] = std::log(xs[i]);
        ly[i] = std::log(ys[i]);
    }
    return linear_fit(lx, ly).slope;
}

/// Least-squares quadratic c0 + c1 x + c2 x^2; returns {c0, c1, c2}.
inline std::array<double, 3> quadratic_fit(const std::vector<double>& xs,
                                           const std::vector<double>& ys) {
    if (xs.size() != ys.size() || xs.size() < 3)
        throw std::invalid_argument("quadratic_fit needs >= 3 points");
    // Normal equations for the 3-parameter model, solved by Cramer's rule.
    double m[3][3] = {};
    double b[3] = {};
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double p[3] = {1.0, xs[i], xs[i] * xs[i]};
        for (int r = 0; r < 3; ++r) {
            b[r] += p[r] * ys[i];
            for (int c = 0; c < 3; ++c) m[r][c] += p[r] * p[c];
        }
    }
    auto det3 = [](const double a[3][3]) {
        return a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) -
               a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0]) +
               a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    };
    const double D = det3(m);
    if (D == 0) throw std::invalid_argument("quadratic_fit: degenerate abscissae");
    std::array<double, 3> c{};
    for (int j = 0; j < 3; ++j) {
        double mj[3][3];
        for (int r = 0; r < 3; ++r)
            for (int cc = 0; cc < 3; ++cc) mj[r][cc] = (cc == j) ? b[r] : m[r][cc];
        c[j] = det3(mj) / D;
    }
    return c;
}

}  // namespace nlhom
