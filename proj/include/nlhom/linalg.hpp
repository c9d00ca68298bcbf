#pragma once
// Dense linear algebra wrappers around Eigen: operator norms, Hermitian
// eigendecompositions, and shifted Hermitian inverses with residual checks.

#include <Eigen/Dense>
#include <complex>
#include <sstream>
#include <stdexcept>
#include <string>

#include "nlhom/base.hpp"

namespace nlhom {

template <class Real>
using CMat = Eigen::Matrix<std::complex<Real>, Eigen::Dynamic, Eigen::Dynamic>;
template <class Real>
using CVec = Eigen::Matrix<std::complex<Real>, Eigen::Dynamic, 1>;
template <class Real>
using RMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;
template <class Real>
using RVec = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

namespace detail {

/// Power iteration on M^H M; only reached for matrices too large for a full
/// decomposition, but callable directly (the tests exercise it on small ones).
template <class Real>
Real power_iteration_norm(const CMat<Real>& M, Real tol = Real(1e-8), int max_iter = 10000) {
    CVec<Real> v = CVec<Real>::Ones(M.cols());
    v(0) += std::complex<Real>(Real(0.5), Real(0.25));  // break symmetric deadlocks
    v.normalize();
    Real prev = -1;
    for (int it = 0; it < max_iter; ++it) {
        CVec<Real> z = M.adjoint() * (M * v);
        const Real nz = z.norm();
        if (nz == 0) return 0;
        v = z / nz;
        const Real sigma = std::sqrt(nz);
        if (it > 0 && std::abs(sigma - prev) <= tol * std::max(Real(1), sigma)) return sigma;
        prev = sigma;
    }
    std::ostringstream os;
    os << "operator norm power iteration did not converge after " << max_iter
       << " iterations; last estimates " << double(prev) << " and next step stalled";
    throw std::runtime_error(os.str());
}

}  // namespace detail

/// Largest singular value. Full decompositions up to dense-feasible sizes,
/// power iteration beyond.
template <class Real>
Real operator_norm(const CMat<Real>& M) {
    if (M.size() == 0) return 0;
    const auto n = std::max(M.rows(), M.cols());
    if (n <= 512) {
        Eigen::JacobiSVD<CMat<Real>> svd(M);
        return svd.singularValues()(0);
    }
    if (n <= 4096) {
        Eigen::BDCSVD<CMat<Real>> svd(M);
        return svd.singularValues()(0);
    }
    return detail::power_iteration_norm<Real>(M);
}

/// Ascending eigenvalues of a Hermitian matrix (lower triangle is trusted).
template <class Real>
RVec<Real> hermitian_eigenvalues(const CMat<Real>& M) {
    Eigen::SelfAdjointEigenSolver<CMat<Real>> es(M, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success)
        throw std::runtime_error("hermitian eigendecomposition failed");
    return es.eigenvalues();
}

template <class Real>
struct HermitianEigensystem {
    RVec<Real> values;  // ascending
    CMat<Real> vectors;
};

template <class Real>
HermitianEigensystem<Real> hermitian_eigensystem(const CMat<Real>& M) {
    Eigen::SelfAdjointEigenSolver<CMat<Real>> es(M);
    if (es.info() != Eigen::Success)
        throw std::runtime_error("hermitian eigendecomposition failed");
    return {es.eigenvalues(), es.eigenvectors()};
}

/// X = (M + shift I)^{-1} by Cholesky, with an absolute residual guarantee of
/// ||(M + shift)X - I||_F <= 1e-9. M must be Hermitian with spectrum >= 0.
template <class Real>
CMat<Real> shifted_hermitian_inverse(const CMat<Real>& M, Real shift) {
    const auto n = M.rows();
    CMat<Real> A = M;
    A.diagonal().array() += std::complex<Real>(shift, 0);
    const CMat<Real> I = CMat<Real>::Identity(n, n);

    CMat<Real> X;
    Eigen::LLT<CMat<Real>> llt(A);
    if (llt.info() == Eigen::Success) {
        X = llt.solve(I);
    } else {
        Eigen::LDLT<CMat<Real>> ldlt(A);
        if (ldlt.info() != Eigen::Success)
            throw std::runtime_error("hermitian factorization failed; matrix is not positive");
        X = ldlt.solve(I);
    }
    const Real resid = (A * X - I).norm();
    if (!(resid <= Real(1e-9))) {
        std::ostringstream os;
        os << "shifted inverse residual " << double(resid) << " exceeds 1e-9 (n=" << n
           << ", shift=" << double(shift) << ")";
        throw std::runtime_error(os.str());
    }
    return X;
}

}  // namespace nlhom
