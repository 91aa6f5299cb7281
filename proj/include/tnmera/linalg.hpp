#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "tnmera/errors.hpp"
#include "tnmera/tensor.hpp"

namespace tnmera {

// In-place Householder QR of the m x n matrix (m >= n), returning the thin Q
// with the sign convention diag(R) >= 0 so the factorization is unique and a
// Gaussian input yields a Haar-distributed frame.
inline void orthonormalize_columns(std::int64_t m, std::int64_t n, std::vector<double>& a) {
    if (m < n) throw ValidationError("orthonormalize_columns: needs rows >= cols");
    std::vector<double> tau(static_cast<std::size_t>(n), 0.0);
    std::vector<char> neg(static_cast<std::size_t>(n), 0);
    auto at = [&](std::int64_t i, std::int64_t j) -> double& {
        return a[static_cast<std::size_t>(i * n + j)];
    };

    for (std::int64_t j = 0; j < n; ++j) {
        double norm = 0.0;
        for (std::int64_t i = j; i < m; ++i) norm += at(i, j) * at(i, j);
        norm = std::sqrt(norm);
        if (norm == 0.0) {
            // Degenerate column: substitute the j-th unit vector direction.
            at(j, j) = 1.0;
            norm = 1.0;
        }
        const double alpha = at(j, j) >= 0.0 ? -norm : norm;
        neg[static_cast<std::size_t>(j)] = static_cast<char>(alpha > 0.0); // R_jj = alpha
        const double v0 = at(j, j) - alpha;
        double vnorm2 = v0 * v0;
        for (std::int64_t i = j + 1; i < m; ++i) vnorm2 += at(i, j) * at(i, j);
        if (vnorm2 == 0.0) {
            tau[static_cast<std::size_t>(j)] = 0.0;
            at(j, j) = alpha;
            continue;
        }
        tau[static_cast<std::size_t>(j)] = 2.0 / vnorm2;
        // Store v in column j below the diagonal, v0 on the diagonal slot temporarily.
        at(j, j) = v0;
        for (std::int64_t c = j + 1; c < n; ++c) {
            double dot = 0.0;
            for (std::int64_t i = j; i < m; ++i) dot += at(i, j) * at(i, c);
            dot *= tau[static_cast<std::size_t>(j)];
            for (std::int64_t i = j; i < m; ++i) at(i, c) -= dot * at(i, j);
        }
    }

    // Accumulate Q = H_0 ... H_{n-1} * [I_n; 0] by applying reflectors backwards.
    std::vector<double> q(static_cast<std::size_t>(m * n), 0.0);
    auto qat = [&](std::int64_t i, std::int64_t j) -> double& {
        return q[static_cast<std::size_t>(i * n + j)];
    };
    for (std::int64_t j = 0; j < n; ++j) qat(j, j) = 1.0;
    for (std::int64_t j = n - 1; j >= 0; --j) {
        const double t = tau[static_cast<std::size_t>(j)];
        if (t == 0.0) continue;
        for (std::int64_t c = 0; c < n; ++c) {
            double dot = 0.0;
            for (std::int64_t i = j; i < m; ++i) dot += at(i, j) * qat(i, c);
            dot *= t;
            for (std::int64_t i = j; i < m; ++i) qat(i, c) -= dot * at(i, j);
        }
    }
    // Column sign fix: make R's diagonal positive.
    for (std::int64_t j = 0; j < n; ++j)
        if (!neg[static_cast<std::size_t>(j)])
            for (std::int64_t i = 0; i < m; ++i) qat(i, j) = -qat(i, j);
    a.swap(q);
}

// Cyclic Jacobi eigendecomposition of a symmetric n x n matrix. Eigenvalues are
// returned ascending; if eigvecs is non-null it receives the matrix whose
// COLUMNS are the corresponding eigenvectors.
inline std::vector<double> symmetric_eigenvalues(std::int64_t n, std::vector<double> a,
                                                 std::vector<double>* eigvecs = nullptr,
                                                 int max_sweeps = 64) {
    auto at = [&](std::int64_t i, std::int64_t j) -> double& {
        return a[static_cast<std::size_t>(i * n + j)];
    };
    std::vector<double> v;
    if (eigvecs) {
        v.assign(static_cast<std::size_t>(n * n), 0.0);
        for (std::int64_t i = 0; i < n; ++i) v[static_cast<std::size_t>(i * n + i)] = 1.0;
    }
    auto vat = [&](std::int64_t i, std::int64_t j) -> double& {
        return v[static_cast<std::size_t>(i * n + j)];
    };

    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = i + 1; j < n; ++j) off += at(i, j) * at(i, j);
        if (off <= 1e-30) break;

        for (std::int64_t p = 0; p < n - 1; ++p) {
            for (std::int64_t q = p + 1; q < n; ++q) {
                const double apq = at(p, q);
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::int64_t i = 0; i < n; ++i) {
                    const double aip = at(i, p), aiq = at(i, q);
                    at(i, p) = c * aip - s * aiq;
                    at(i, q) = s * aip + c * aiq;
                }
                for (std::int64_t j = 0; j < n; ++j) {
                    const double apj = at(p, j), aqj = at(q, j);
                    at(p, j) = c * apj - s * aqj;
                    at(q, j) = s * apj + c * aqj;
                }
                if (eigvecs)
                    for (std::int64_t i = 0; i < n; ++i) {
                        const double vip = vat(i, p), viq = vat(i, q);
                        vat(i, p) = c * vip - s * viq;
                        vat(i, q) = s * vip + c * viq;
                    }
            }
        }
    }

    std::vector<double> lam(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) lam[static_cast<std::size_t>(i)] = at(i, i);
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::sort(order.begin(), order.end(), [&](std::int64_t x, std::int64_t y) {
        return lam[static_cast<std::size_t>(x)] < lam[static_cast<std::size_t>(y)];
    });
    std::vector<double> sorted(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i)
        sorted[static_cast<std::size_t>(i)] = lam[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
    if (eigvecs) {
        eigvecs->assign(static_cast<std::size_t>(n * n), 0.0);
        for (std::int64_t j = 0; j < n; ++j) {
            const std::int64_t src = order[static_cast<std::size_t>(j)];
            for (std::int64_t i = 0; i < n; ++i)
                (*eigvecs)[static_cast<std::size_t>(i * n + j)] = vat(i, src);
        }
    }
    return sorted;
}

// Nearest matrix with orthonormal columns in Frobenius norm: the orthogonal
// polar factor of the m x n matrix (m >= n), via the scaled Newton-Schulz
// iteration X <- X (3I - X^T X)/2. The input is pre-scaled below 1/sigma_max so
// the iteration contracts; convergence is quadratic near the manifold.
inline void polar_orthonormal(std::int64_t m, std::int64_t n, std::vector<double>& x,
                              double tol = 1e-15, int max_iter = 200) {
    if (m < n) throw ValidationError("polar_orthonormal: needs rows >= cols");
    double fro = 0.0;
    for (double v : x) fro += v * v;
    fro = std::sqrt(fro);
    if (fro == 0.0) throw NumericalError("polar_orthonormal: zero matrix has no polar factor");
    const double inv = 1.0 / fro; // ||X||_F >= sigma_max, so inv * X has sigma_max <= 1
    for (double& v : x) v *= inv;

    std::vector<double> gram(static_cast<std::size_t>(n * n));
    std::vector<double> next(static_cast<std::size_t>(m * n));
    for (int it = 0; it < max_iter; ++it) {
        matmul(n, m, n, x.data(), true, x.data(), false, gram.data()); // X^T X
        double resid = 0.0;
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < n; ++j) {
                const double d = gram[static_cast<std::size_t>(i * n + j)] - (i == j ? 1.0 : 0.0);
                resid = std::max(resid, std::abs(d));
            }
        if (resid <= tol) return;
        // next = X (3I - gram)/2
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < n; ++j) {
                double g = -0.5 * gram[static_cast<std::size_t>(i * n + j)];
                if (i == j) g += 1.5;
                gram[static_cast<std::size_t>(i * n + j)] = g;
            }
        matmul(m, n, n, x.data(), gram.data(), next.data());
        x.swap(next);
    }
    throw NumericalError("polar_orthonormal: Newton-Schulz did not converge");
}

// max |M^T M - I| for a column-isometry candidate, the Eq.-style constraint residual.
inline double isometry_residual(std::int64_t m, std::int64_t n, const double* x) {
    std::vector<double> gram(static_cast<std::size_t>(n * n));
    matmul(n, m, n, x, true, x, false, gram.data());
    double worst = 0.0;
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < n; ++j) {
            const double d = gram[static_cast<std::size_t>(i * n + j)] - (i == j ? 1.0 : 0.0);
            worst = std::max(worst, std::abs(d));
        }
    return worst;
}

inline double isometry_residual(const Tensor& t, std::int64_t rows, std::int64_t cols) {
    if (rows * cols != t.size()) throw ValidationError("isometry_residual: size mismatch");
    return isometry_residual(rows, cols, t.data.data());
}

} // namespace tnmera
