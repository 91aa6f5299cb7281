#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tnmera/errors.hpp"

#ifdef TNMERA_USE_BLAS
#include <cblas.h>
#endif

namespace tnmera {

// Dense tensor of doubles, row-major. Immutable by convention once built: all
// operations below return fresh values. Rank 0 (scalar) is a valid tensor with
// one data element.
struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<double> data;

    Tensor() : shape{}, data(1, 0.0) {}

    explicit Tensor(std::vector<std::int64_t> s) : shape(std::move(s)) {
        data.assign(check_shape(shape), 0.0);
    }

    Tensor(std::vector<std::int64_t> s, std::vector<double> d)
        : shape(std::move(s)), data(std::move(d)) {
        if (check_shape(shape) != static_cast<std::int64_t>(data.size()))
            throw ValidationError("tensor: shape does not match data length");
    }

    static Tensor scalar(double v) {
        Tensor t;
        t.data[0] = v;
        return t;
    }

    int rank() const { return static_cast<int>(shape.size()); }
    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
    std::int64_t extent(int axis) const { return shape[static_cast<std::size_t>(axis)]; }

    double& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

    // Multi-index access, for tests and small code paths; row-major.
    double at(std::initializer_list<std::int64_t> idx) const {
        std::int64_t flat = 0;
        int axis = 0;
        for (std::int64_t i : idx) flat = flat * shape[static_cast<std::size_t>(axis++)] + i;
        return data[static_cast<std::size_t>(flat)];
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << '[';
        for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
        os << ']';
        return os.str();
    }

private:
    static std::int64_t check_shape(const std::vector<std::int64_t>& s) {
        std::int64_t n = 1;
        for (std::int64_t e : s) {
            if (e < 1) throw ValidationError("tensor: extents must be >= 1");
            n *= e;
        }
        return n;
    }
};

// One contracted leg: (axis in a, axis in b).
using AxisPair = std::pair<int, int>;
using AxisPairing = std::vector<AxisPair>;

inline std::int64_t numel(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (std::int64_t e : shape) n *= e;
    return n;
}

inline std::vector<std::int64_t> row_major_strides(const std::vector<std::int64_t>& shape) {
    std::vector<std::int64_t> st(shape.size());
    std::int64_t acc = 1;
    for (int d = static_cast<int>(shape.size()) - 1; d >= 0; --d) {
        st[static_cast<std::size_t>(d)] = acc;
        acc *= shape[static_cast<std::size_t>(d)];
    }
    return st;
}

// C[m,n] = op(A) * op(B), row-major dense. trans_a reads A as a k x m buffer,
// trans_b reads B as an n x k buffer.
inline void matmul(std::int64_t m, std::int64_t k, std::int64_t n,
                   const double* a, bool trans_a, const double* b, bool trans_b, double* c) {
#ifdef TNMERA_USE_BLAS
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans,
                static_cast<int>(m), static_cast<int>(n), static_cast<int>(k),
                1.0, a, static_cast<int>(trans_a ? m : k), b, static_cast<int>(trans_b ? k : n),
                0.0, c, static_cast<int>(n));
#else
    std::fill(c, c + m * n, 0.0);
    auto aat = [&](std::int64_t i, std::int64_t p) { return trans_a ? a[p * m + i] : a[i * k + p]; };
    for (std::int64_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        for (std::int64_t p = 0; p < k; ++p) {
            const double av = aat(i, p);
            if (av == 0.0) continue;
            if (trans_b) {
                for (std::int64_t j = 0; j < n; ++j) ci[j] += av * b[j * k + p];
            } else {
                const double* bp = b + p * n;
                for (std::int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
            }
        }
    }
#endif
}

inline void matmul(std::int64_t m, std::int64_t k, std::int64_t n,
                   const double* a, const double* b, double* c) {
    matmul(m, k, n, a, false, b, false, c);
}

namespace detail {

inline bool is_identity_perm(const std::vector<int>& perm) {
    for (int d = 0; d < static_cast<int>(perm.size()); ++d)
        if (perm[static_cast<std::size_t>(d)] != d) return false;
    return true;
}

} // namespace detail

// Axis permutation: result axis d is input axis perm[d].
inline Tensor permute(const Tensor& a, const std::vector<int>& perm) {
    const int r = a.rank();
    if (static_cast<int>(perm.size()) != r)
        throw ValidationError("permute: perm length does not match rank");
    std::vector<char> seen(static_cast<std::size_t>(r), 0);
    for (int p : perm) {
        if (p < 0 || p >= r || seen[static_cast<std::size_t>(p)])
            throw ValidationError("permute: not a permutation of 0..rank-1");
        seen[static_cast<std::size_t>(p)] = 1;
    }
    if (detail::is_identity_perm(perm)) return a;

    std::vector<std::int64_t> out_shape(static_cast<std::size_t>(r));
    for (int d = 0; d < r; ++d)
        out_shape[static_cast<std::size_t>(d)] = a.shape[static_cast<std::size_t>(perm[static_cast<std::size_t>(d)])];

    Tensor out(out_shape);
    const auto in_strides = row_major_strides(a.shape);
    // Stride of the input as we step along each output axis.
    std::vector<std::int64_t> step(static_cast<std::size_t>(r));
    for (int d = 0; d < r; ++d)
        step[static_cast<std::size_t>(d)] = in_strides[static_cast<std::size_t>(perm[static_cast<std::size_t>(d)])];

    std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
    std::int64_t src = 0;
    const std::int64_t total = out.size();
    for (std::int64_t flat = 0; flat < total; ++flat) {
        out.data[static_cast<std::size_t>(flat)] = a.data[static_cast<std::size_t>(src)];
        for (int d = r - 1; d >= 0; --d) {
            auto ud = static_cast<std::size_t>(d);
            if (++idx[ud] < out_shape[ud]) {
                src += step[ud];
                break;
            }
            src -= step[ud] * (out_shape[ud] - 1);
            idx[ud] = 0;
        }
    }
    return out;
}

inline std::vector<int> inverse_perm(const std::vector<int>& perm) {
    std::vector<int> inv(perm.size());
    for (int d = 0; d < static_cast<int>(perm.size()); ++d)
        inv[static_cast<std::size_t>(perm[static_cast<std::size_t>(d)])] = d;
    return inv;
}

// Same data sequence, new shape; element counts must agree.
inline Tensor reshape(const Tensor& a, std::vector<std::int64_t> new_shape) {
    std::int64_t n = 1;
    for (std::int64_t e : new_shape) {
        if (e < 1) throw ValidationError("reshape: extents must be >= 1");
        n *= e;
    }
    if (n != a.size())
        throw ValidationError("reshape: element count mismatch (" + a.shape_str() + " -> " +
                              Tensor(new_shape).shape_str() + ")");
    return Tensor(std::move(new_shape), a.data);
}

// Pairwise tensor contraction. Result axes: unpaired axes of a (in order),
// then unpaired axes of b (in order). An empty pairing is the outer product.
inline Tensor contract(const Tensor& a, const Tensor& b, const AxisPairing& pairing) {
    const int ra = a.rank(), rb = b.rank();
    std::vector<char> pa(static_cast<std::size_t>(ra), 0), pb(static_cast<std::size_t>(rb), 0);
    for (const auto& [ax_a, ax_b] : pairing) {
        if (ax_a < 0 || ax_a >= ra || ax_b < 0 || ax_b >= rb)
            throw ValidationError("contract: axis out of range");
        if (pa[static_cast<std::size_t>(ax_a)] || pb[static_cast<std::size_t>(ax_b)])
            throw ValidationError("contract: duplicate axis in pairing");
        if (a.shape[static_cast<std::size_t>(ax_a)] != b.shape[static_cast<std::size_t>(ax_b)])
            throw ValidationError("contract: extent mismatch on paired axes (a" + a.shape_str() +
                                  " axis " + std::to_string(ax_a) + ", b" + b.shape_str() +
                                  " axis " + std::to_string(ax_b) + ")");
        pa[static_cast<std::size_t>(ax_a)] = 1;
        pb[static_cast<std::size_t>(ax_b)] = 1;
    }

    std::vector<int> free_a, free_b;
    for (int d = 0; d < ra; ++d)
        if (!pa[static_cast<std::size_t>(d)]) free_a.push_back(d);
    for (int d = 0; d < rb; ++d)
        if (!pb[static_cast<std::size_t>(d)]) free_b.push_back(d);

    std::vector<std::int64_t> out_shape;
    out_shape.reserve(free_a.size() + free_b.size());
    std::int64_t m = 1, k = 1, n = 1;
    for (int d : free_a) {
        out_shape.push_back(a.shape[static_cast<std::size_t>(d)]);
        m *= a.shape[static_cast<std::size_t>(d)];
    }
    for (int d : free_b) out_shape.push_back(b.shape[static_cast<std::size_t>(d)]);
    for (const auto& [ax_a, ax_b] : pairing) {
        (void)ax_b;
        k *= a.shape[static_cast<std::size_t>(ax_a)];
    }
    for (int d : free_b) n *= b.shape[static_cast<std::size_t>(d)];

    // Matrixize: a -> [free_a..., paired (pairing order)], b -> [paired, free_b...].
    std::vector<int> perm_a = free_a, perm_b;
    for (const auto& [ax_a, ax_b] : pairing) {
        (void)ax_b;
        perm_a.push_back(ax_a);
    }
    for (const auto& [ax_a, ax_b] : pairing) {
        (void)ax_a;
        perm_b.push_back(ax_b);
    }
    perm_b.insert(perm_b.end(), free_b.begin(), free_b.end());

    // The GEMM wants a as [free..., paired...] and b as [paired..., free...].
    // The transposed layouts [paired..., free...] / [free..., paired...] are
    // equally usable via the trans flags, which avoids materializing a permuted
    // copy on the most common gradient paths.
    auto matches_layout = [](const std::vector<int>& first, const std::vector<int>& second) {
        int expect = 0;
        for (int ax : first)
            if (ax != expect++) return false;
        for (int ax : second)
            if (ax != expect++) return false;
        return true;
    };
    std::vector<int> paired_a_order, paired_b_order;
    paired_a_order.reserve(pairing.size());
    paired_b_order.reserve(pairing.size());
    for (const auto& [ax_a, ax_b] : pairing) {
        paired_a_order.push_back(ax_a);
        paired_b_order.push_back(ax_b);
    }

    const Tensor* lhs = &a;
    Tensor lhs_storage;
    bool trans_a = false;
    if (!matches_layout(free_a, paired_a_order)) {
        if (matches_layout(paired_a_order, free_a)) {
            trans_a = true;
        } else {
            lhs_storage = permute(a, perm_a);
            lhs = &lhs_storage;
        }
    }
    const Tensor* rhs = &b;
    Tensor rhs_storage;
    bool trans_b = false;
    if (!matches_layout(paired_b_order, free_b)) {
        if (matches_layout(free_b, paired_b_order)) {
            trans_b = true;
        } else {
            rhs_storage = permute(b, perm_b);
            rhs = &rhs_storage;
        }
    }

    Tensor out(std::move(out_shape));
    matmul(m, k, n, lhs->data.data(), trans_a, rhs->data.data(), trans_b, out.data.data());
    return out;
}

// ---- small element-wise helpers used across the library ----

inline void axpy(Tensor& y, double alpha, const Tensor& x) {
    if (y.shape != x.shape) throw ValidationError("axpy: shape mismatch");
    for (std::int64_t i = 0; i < y.size(); ++i) y[i] += alpha * x[i];
}

inline void scale_inplace(Tensor& t, double alpha) {
    for (double& v : t.data) v *= alpha;
}

inline Tensor scaled(const Tensor& t, double alpha) {
    Tensor out = t;
    scale_inplace(out, alpha);
    return out;
}

inline double max_abs(const Tensor& t) {
    double m = 0.0;
    for (double v : t.data) m = std::max(m, std::abs(v));
    return m;
}

inline bool all_finite(const Tensor& t) {
    for (double v : t.data)
        if (!std::isfinite(v)) return false;
    return true;
}

} // namespace tnmera
