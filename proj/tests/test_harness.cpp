#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <set>
#include <vector>

#include "nlhom/harness.hpp"
#include "oracles.hpp"

using namespace nlhom;
using Catch::Approx;
using cplx = std::complex<double>;

namespace {

const KernelSpec& box_kernel() {
    static const KernelSpec a = KernelSpec::box(1, 0.5);
    return a;
}

MuSpec wavy_mu() { return MuSpec::cosine_product(1.0, 0.5); }

// Hand-rolled DFT column for the Fourier-diagonal oracle, independent of the
// library's multiplier plumbing.
CVec<double> mode_vector(const Grid& g, std::int64_t q) {
    const auto m = mode_of(g, q);
    const std::int64_t n = g.nodes();
    CVec<double> u(n);
    for (std::int64_t x = 0; x < n; ++x) {
        const auto c = unflatten(g, x);
        double ang = 0;
        for (int j = 0; j < g.d; ++j) ang += 2 * pi_v<double> * m[j] * c[j] / g.N;
        u(x) = cplx(std::cos(ang), std::sin(ang));
    }
    return u;
}

}  // namespace

TEST_CASE("corrector operator", "[harness]") {
    const Grid g = make_grid(1, 64);
    const auto& a = box_kernel();
    const auto mu = wavy_mu();
    const auto cell = solve_cell_all<double>(a, mu, g);
    const auto em = effective_matrix<double>(a, mu, g, cell);
    const std::array<double, 3> xi{0.1, 0, 0};
    const double eps = 0.25;
    const CMat<double> K = corrector_K<double>(em, cell, g, xi, eps);

    SECTION("Hermitian and nonzero for an oscillating coupling") {
        CHECK((K - K.adjoint()).norm() <= 1e-12);
        CHECK(operator_norm<double>(K) > 1e-4);
    }
    SECTION("constant coupling has a vanishing corrector") {
        const auto cellc = solve_cell_all<double>(a, MuSpec::constant(1.0), g);
        const auto emc = effective_matrix<double>(a, MuSpec::constant(1.0), g, cellc);
        const CMat<double> Kc = corrector_K<double>(emc, cellc, g, xi, eps);
        CHECK(operator_norm<double>(Kc) <= 1e-14);
    }
    SECTION("multiplier norm bound") {
        // || K || <= 2 (sum_j ||v_j||_inf^2)^(1/2) max_n |2 pi n + xi| / (sym + eps^2)
        double vsup2 = 0;
        for (int j = 0; j < g.d; ++j) {
            const double s = cell.v[j].cwiseAbs().maxCoeff();
            vsup2 += s * s;
        }
        double mult = 0;
        for (std::int64_t q = 0; q < g.nodes(); ++q) {
            const auto m = mode_of(g, q);
            double y2 = 0;
            for (int j = 0; j < g.d; ++j) {
                const double y = 2 * pi_v<double> * m[j] + xi[j];
                y2 += y * y;
            }
            const double sym = effective_symbol<double>(em.g0, xi, m, g.d);
            mult = std::max(mult, std::sqrt(y2) / (sym + eps * eps));
        }
        CHECK(operator_norm<double>(K) <= 2 * std::sqrt(vsup2) * mult * (1 + 1e-12));
    }
    SECTION("argument validation") {
        CHECK_THROWS_WITH(corrector_K<double>(em, cell, g, xi, 0.0),
                          "epsilon must be positive");
        const auto cell32 = solve_cell_all<double>(a, mu, make_grid(1, 32));
        CHECK_THROWS_WITH(corrector_K<double>(em, cell32, g, xi, eps),
                          "cell solution does not match the grid");
    }
}

TEST_CASE("fiber error against the mode-wise oracle", "[harness]") {
    // At xi = 0 with a constant coupling both resolvents are diagonal in the
    // same Fourier basis, so the error is a max over modes.
    const Grid g = make_grid(1, 64);
    const auto& a = box_kernel();
    const auto muc = MuSpec::constant(1.0);
    const auto cell = solve_cell_all<double>(a, muc, g);
    const auto em = effective_matrix<double>(a, muc, g, cell);
    const double eps = 0.3;
    const std::int64_t n = g.nodes();

    const auto op = assemble_fiber<double>(a, muc, g, {0, 0, 0});
    double want = 0;
    for (std::int64_t q = 0; q < n; ++q) {
        const CVec<double> u = mode_vector(g, q);
        const double lam = (u.adjoint() * op.matrix * u)(0).real() / double(n);
        const double sym = effective_symbol<double>(em.g0, {0, 0, 0}, mode_of(g, q), g.d);
        want = std::max(want,
                        std::abs(1 / (lam + eps * eps) - 1 / (sym + eps * eps)));
    }
    const double plain = fiber_error<double>(a, muc, g, em, cell, {0, 0, 0}, eps, false);
    CHECK(plain == Approx(want).epsilon(1e-10));
    // with v_j = 0 the corrector changes nothing
    const double corrected = fiber_error<double>(a, muc, g, em, cell, {0, 0, 0}, eps, true);
    CHECK(corrected == Approx(plain).epsilon(1e-12));

    CHECK_THROWS_WITH(fiber_error<double>(a, muc, g, em, cell, {0, 0, 0}, 0.0, false),
                      "epsilon must be positive");
}

TEST_CASE("fiber error routes and corrector necessity", "[harness]") {
    const Grid g = make_grid(1, 64);
    const auto& a = box_kernel();
    const auto mu = wavy_mu();
    const auto cell = solve_cell_all<double>(a, mu, g);
    const auto em = effective_matrix<double>(a, mu, g, cell);
    const std::int64_t n = g.nodes();

    SECTION("multiplier route agrees with the dense effective assembly") {
        const std::array<double, 3> xi{0.3, 0, 0};
        const double eps = 0.25;

        CMat<double> A = assemble_fiber<double>(a, mu, g, xi).matrix;
        A.diagonal().array() += cplx(eps * eps, 0);
        const CMat<double> R =
            Eigen::LLT<CMat<double>>(A).solve(CMat<double>::Identity(n, n));
        CMat<double> A0 = assemble_effective_fiber<double>(em.g0, g, xi).matrix;
        A0.diagonal().array() += cplx(eps * eps, 0);
        const CMat<double> R0 =
            Eigen::LLT<CMat<double>>(A0).solve(CMat<double>::Identity(n, n));

        const double direct = operator_norm<double>(CMat<double>(R - R0));
        const double viaharness = fiber_error<double>(a, mu, g, em, cell, xi, eps, false);
        CHECK(viaharness == Approx(direct).margin(1e-10));
    }
    SECTION("the corrector strictly helps at small eps") {
        const double eps = 1.0 / 32;
        for (const double x : {0.05, 0.1, 0.3}) {
            const double plain =
                fiber_error<double>(a, mu, g, em, cell, {x, 0, 0}, eps, false);
            const double corrected =
                fiber_error<double>(a, mu, g, em, cell, {x, 0, 0}, eps, true);
            CHECK(corrected < plain);
        }
    }
    SECTION("threshold-zone constants dominate sampled errors") {
        const auto c = constants_bundle<double>(a, mu, g);
        for (const double x : {0.03, 0.08, 0.15}) {
            for (const double eps : {0.25, 1.0 / 32}) {
                const double plain =
                    fiber_error<double>(a, mu, g, em, cell, {x, 0, 0}, eps, false);
                const double corrected =
                    fiber_error<double>(a, mu, g, em, cell, {x, 0, 0}, eps, true);
                CHECK(plain <= c.c5 / eps);
                CHECK(corrected <= c.c6);
            }
        }
    }
}

TEST_CASE("xi grid and sampling slack", "[harness]") {
    SECTION("default grid shape") {
        const auto g1 = default_xi_grid<double>(1);
        REQUIRE(g1.size() == 17 + 8);
        std::set<double> firsts;
        for (const auto& p : g1) {
            CHECK(p[0] >= -pi_v<double>);
            CHECK(p[0] < pi_v<double>);
            CHECK(p[1] == 0.0);
            firsts.insert(p[0]);
        }
        CHECK(firsts.size() == g1.size());  // no duplicate points
        // geometric refinement reaches pi/256 near the origin
        CHECK(firsts.count(pi_v<double> / 256) == 1);

        const auto g2 = default_xi_grid<double>(2);
        CHECK(g2.size() == 17 * 17 + 16);
        CHECK_THROWS_WITH(default_xi_grid<double>(4), "dimension must be 1, 2, or 3");
    }
    SECTION("Lipschitz slack arithmetic") {
        const auto& a = box_kernel();
        const auto mu = wavy_mu();
        // mu_plus M1 = 1.5 / 4
        CHECK(xi_sampling_bound<double>(a, mu, 0.1) == Approx(0.0375).epsilon(1e-12));
        CHECK(xi_sampling_bound<double>(a, mu, 0.2) ==
              Approx(2 * xi_sampling_bound<double>(a, mu, 0.1)).epsilon(1e-12));
        CHECK(xi_sampling_bound<double>(a, mu, 0.1, 0.5) ==
              Approx(16 * xi_sampling_bound<double>(a, mu, 0.1)).epsilon(1e-12));
        CHECK_THROWS_WITH(xi_sampling_bound<double>(a, mu, 0.0),
                          "xi spacing must be positive");
        CHECK_THROWS_WITH(xi_sampling_bound<double>(a, mu, 0.1, -1.0),
                          "epsilon must be positive");
    }
}

TEST_CASE("rate sweep", "[harness]") {
    const Grid g = make_grid(1, 64);
    const auto& a = box_kernel();
    const auto mu = wavy_mu();
    const auto xi_grid = default_xi_grid<double>(1);
    std::vector<double> eps_list;
    for (int m = 1; m <= 7; ++m) eps_list.push_back(std::pow(2.0, -m));

    SECTION("report structure and convergence rates") {
        const auto rep = rate_sweep<double>(a, mu, g, xi_grid, eps_list);
        REQUIRE(rep.rows.size() == 7);
        CHECK(rep.fit_window == 5);
        CHECK(rep.xi_spacing == Approx(2 * pi_v<double> / 17).epsilon(1e-12));
        CHECK(rep.sampling_slack ==
              Approx(xi_sampling_bound<double>(a, mu, rep.xi_spacing, eps_list.back()))
                  .epsilon(1e-12));

        const auto c = constants_bundle<double>(a, mu, g);
        CHECK(rep.bold_c1 == Approx(c.bold_c1));
        CHECK(rep.bold_c2 == Approx(c.bold_c2));

        for (std::size_t e = 0; e < rep.rows.size(); ++e) {
            const auto& row = rep.rows[e];
            CHECK(row.epsilon == Approx(eps_list[e]).epsilon(1e-15));
            CHECK(row.fiber_sup_plain >= 0.0);
            CHECK(row.fiber_sup_corrected >= 0.0);
            // the whole-space columns are the exact scaling identity
            CHECK(row.ws_plain == row.epsilon * row.epsilon * row.fiber_sup_plain);
            CHECK(row.ws_corrected == row.epsilon * row.epsilon * row.fiber_sup_corrected);
            CHECK(row.bound_plain == Approx(rep.bold_c1 * row.epsilon));
            CHECK(row.bound_corrected ==
                  Approx(rep.bold_c2 * row.epsilon * row.epsilon));
            // a priori caps: two resolvents of norm <= eps^{-2}
            CHECK(row.ws_plain <= 2.0);
            // explicit-constant domination, whole-space and fiber level
            CHECK(row.ws_plain <= row.bound_plain);
            CHECK(row.ws_corrected <= row.bound_corrected);
            CHECK(row.fiber_sup_plain <= c.c5_tilde / row.epsilon);
            CHECK(row.fiber_sup_corrected <= c.c6_tilde);
            // corrector necessity, strict once eps is small
            if (row.epsilon <= 0.125) CHECK(row.fiber_sup_corrected < row.fiber_sup_plain);
        }
        CHECK(double(rep.slope_plain) >= 0.9);
        CHECK(double(rep.slope_plain) <= 1.6);
        CHECK(double(rep.slope_corrected) >= 1.85);
        CHECK(double(rep.slope_corrected) <= 2.6);

        // the sup recomputed through the public scalar entry point matches
        const auto cell = solve_cell_all<double>(a, mu, g);
        const auto em = effective_matrix<double>(a, mu, g, cell);
        const double eps = eps_list.back();
        double sup = 0;
        for (const auto& xi : xi_grid)
            sup = std::max(sup, fiber_error<double>(a, mu, g, em, cell, xi, eps, false));
        CHECK(sup == Approx(rep.rows.back().fiber_sup_plain).epsilon(1e-9));
    }
    SECTION("input validation") {
        CHECK_THROWS_WITH(
            rate_sweep<double>(a, mu, g, std::vector<std::array<double, 3>>{}, eps_list),
            "rate sweep needs xi values");
        CHECK_THROWS_WITH(rate_sweep<double>(a, mu, g, xi_grid, std::vector<double>{}),
                          "rate sweep needs epsilon values");
        CHECK_THROWS_WITH(rate_sweep<double>(a, mu, g, xi_grid, {0.1, 0.2}),
                          "epsilon values must decrease strictly");
        CHECK_THROWS_WITH(rate_sweep<double>(a, mu, g, xi_grid, {0.1, 0.0}),
                          "epsilon must be positive");
    }
}

TEST_CASE("constants bundle closed forms", "[harness]") {
    const Grid g = make_grid(1, 64);
    const auto& a = box_kernel();
    const auto mu = wavy_mu();
    const auto c = constants_bundle<double>(a, mu, g);

    SECTION("box kernel geometry constants") {
        CHECK(c.m_cal == Approx(1.0 / 12).epsilon(1e-12));
        CHECK(c.r_a == Approx(4.0).epsilon(1e-12));
        CHECK(c.c_a == Approx(1.0 / 48).epsilon(1e-9));
        CHECK(c.c_pi == Approx(1 - 2 / pi_v<double>).epsilon(1e-9));
        // C_{r(a)} at r = 4: the symbol minimum over |y| >= 4 sits at y = 4
        CHECK(c.c_r_a == Approx(1 - 0.5 * std::sin(2.0)).epsilon(1e-4));
    }
    SECTION("threshold radius and gap bound") {
        CHECK(c.delta0 == Approx((1 - 2 / pi_v<double>) / 2.25).epsilon(1e-9));
        CHECK(c.d0_bound == Approx(0.5 * (1 - 2 / pi_v<double>)).epsilon(1e-9));
        CHECK(c.delta0 < pi_v<double>);
    }
    SECTION("every named constant is strictly positive") {
        for (const double v : {c.c_pi, c.c_r_a, c.m_cal, c.r_a, c.c_a, c.delta0,
                               c.d0_bound, c.c1, c.c2, c.c3, c.c4, c.c5, c.c6,
                               c.c_tilde_2pi, c.frak_c, c.c5_tilde, c.c6_tilde,
                               c.bold_c1, c.bold_c2})
            CHECK(v > 0.0);
    }
    SECTION("gaussian tail minimum is at the inner radius") {
        const auto cg = constants_bundle<double>(KernelSpec::gaussian(1, 1.0),
                                                 MuSpec::constant(1.0), g);
        CHECK(cg.c_pi ==
              Approx(1 - std::exp(-pi_v<double> * pi_v<double> / 2)).epsilon(1e-6));
    }
}
