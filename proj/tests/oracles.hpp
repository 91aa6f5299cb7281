#pragma once

// Independent reference implementations used only by tests. These deliberately
// avoid the library's code paths: contraction by explicit index enumeration,
// singular values by one-sided Jacobi, max-flow by Edmonds-Karp.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <queue>
#include <vector>

#include "tnmera/tensor.hpp"

namespace oracle {

// Nested-loop tensor contraction over all index tuples.
inline tnmera::Tensor naive_contract(const tnmera::Tensor& a, const tnmera::Tensor& b,
                                     const tnmera::AxisPairing& pairing) {
    const int ra = a.rank(), rb = b.rank();
    std::vector<int> a_partner(ra, -1), b_partner(rb, -1);
    for (auto [x, y] : pairing) {
        a_partner[x] = y;
        b_partner[y] = x;
    }
    std::vector<int> free_a, free_b;
    for (int d = 0; d < ra; ++d)
        if (a_partner[d] < 0) free_a.push_back(d);
    for (int d = 0; d < rb; ++d)
        if (b_partner[d] < 0) free_b.push_back(d);

    std::vector<std::int64_t> out_shape;
    for (int d : free_a) out_shape.push_back(a.shape[d]);
    for (int d : free_b) out_shape.push_back(b.shape[d]);
    tnmera::Tensor out(out_shape.empty() ? std::vector<std::int64_t>{} : out_shape);

    std::vector<std::int64_t> k_extents;
    for (auto [x, y] : pairing) {
        (void)y;
        k_extents.push_back(a.shape[x]);
    }

    const auto sa = tnmera::row_major_strides(a.shape);
    const auto sb = tnmera::row_major_strides(b.shape);

    std::vector<std::int64_t> oidx(out_shape.size(), 0);
    for (std::int64_t flat = 0; flat < out.size(); ++flat) {
        // Decode the output multi-index.
        std::int64_t rem = flat;
        for (int d = static_cast<int>(out_shape.size()) - 1; d >= 0; --d) {
            oidx[d] = rem % out_shape[d];
            rem /= out_shape[d];
        }
        double acc = 0.0;
        std::vector<std::int64_t> kidx(pairing.size(), 0);
        while (true) {
            std::int64_t ia = 0, ib = 0;
            for (std::size_t d = 0; d < free_a.size(); ++d) ia += oidx[d] * sa[free_a[d]];
            for (std::size_t d = 0; d < free_b.size(); ++d)
                ib += oidx[free_a.size() + d] * sb[free_b[d]];
            for (std::size_t d = 0; d < pairing.size(); ++d) {
                ia += kidx[d] * sa[pairing[d].first];
                ib += kidx[d] * sb[pairing[d].second];
            }
            acc += a.data[ia] * b.data[ib];
            // Advance the contracted odometer.
            int d = static_cast<int>(pairing.size()) - 1;
            for (; d >= 0; --d) {
                if (++kidx[d] < k_extents[d]) break;
                kidx[d] = 0;
            }
            if (d < 0) break;
        }
        out.data[flat] = acc;
    }
    return out;
}

// One-sided Jacobi SVD; returns singular values descending. If polar is given,
// it receives U V^T (the nearest column-orthonormal matrix).
inline std::vector<double> jacobi_svd(std::int64_t m, std::int64_t n, std::vector<double> a,
                                      std::vector<double>* polar = nullptr) {
    // Work on columns of A (m x n, row-major). V accumulates the rotations.
    std::vector<double> v(n * n, 0.0);
    for (std::int64_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
    auto col_dot = [&](std::int64_t i, std::int64_t j) {
        double s = 0.0;
        for (std::int64_t r = 0; r < m; ++r) s += a[r * n + i] * a[r * n + j];
        return s;
    };
    for (int sweep = 0; sweep < 60; ++sweep) {
        double off = 0.0;
        for (std::int64_t i = 0; i < n - 1; ++i)
            for (std::int64_t j = i + 1; j < n; ++j) {
                const double apq = col_dot(i, j);
                off = std::max(off, std::abs(apq));
                if (std::abs(apq) < 1e-30) continue;
                const double app = col_dot(i, i), aqq = col_dot(j, j);
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0 ? 1.0 : -1.0) /
                                 (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double c = 1.0 / std::sqrt(1.0 + t * t), s = t * c;
                for (std::int64_t r = 0; r < m; ++r) {
                    const double x = a[r * n + i], y = a[r * n + j];
                    a[r * n + i] = c * x - s * y;
                    a[r * n + j] = s * x + c * y;
                }
                for (std::int64_t r = 0; r < n; ++r) {
                    const double x = v[r * n + i], y = v[r * n + j];
                    v[r * n + i] = c * x - s * y;
                    v[r * n + j] = s * x + c * y;
                }
            }
        if (off < 1e-15) break;
    }
    std::vector<double> sigma(n);
    for (std::int64_t j = 0; j < n; ++j) sigma[j] = std::sqrt(std::max(0.0, col_dot(j, j)));
    if (polar) {
        // U = A diag(1/sigma); polar = U V^T.
        std::vector<double> u = a;
        for (std::int64_t j = 0; j < n; ++j) {
            const double inv = sigma[j] > 1e-300 ? 1.0 / sigma[j] : 0.0;
            for (std::int64_t r = 0; r < m; ++r) u[r * n + j] *= inv;
        }
        polar->assign(m * n, 0.0);
        for (std::int64_t r = 0; r < m; ++r)
            for (std::int64_t cidx = 0; cidx < n; ++cidx) {
                double s = 0.0;
                for (std::int64_t k = 0; k < n; ++k) s += u[r * n + k] * v[cidx * n + k];
                (*polar)[r * n + cidx] = s;
            }
    }
    std::sort(sigma.begin(), sigma.end(), std::greater<>());
    return sigma;
}

// Edmonds-Karp max flow on an adjacency-matrix capacity graph.
inline double ek_max_flow(std::vector<std::vector<double>> cap, int s, int t) {
    const int n = static_cast<int>(cap.size());
    double flow = 0.0;
    while (true) {
        std::vector<int> parent(n, -1);
        parent[s] = s;
        std::queue<int> q;
        q.push(s);
        while (!q.empty() && parent[t] < 0) {
            const int u = q.front();
            q.pop();
            for (int w = 0; w < n; ++w)
                if (parent[w] < 0 && cap[u][w] > 1e-12) {
                    parent[w] = u;
                    q.push(w);
                }
        }
        if (parent[t] < 0) break;
        double aug = 1e300;
        for (int w = t; w != s; w = parent[w]) aug = std::min(aug, cap[parent[w]][w]);
        for (int w = t; w != s; w = parent[w]) {
            cap[parent[w]][w] -= aug;
            cap[w][parent[w]] += aug;
        }
        flow += aug;
    }
    return flow;
}

} // namespace oracle
