#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tnmera/errors.hpp"
#include "tnmera/linalg.hpp"
#include "tnmera/rng.hpp"
#include "tnmera/tensor.hpp"

namespace tnmera {

enum class InitMode { Qr, Noise, IdentityNoise };

inline InitMode parse_init_mode(const std::string& s) {
    if (s == "qr") return InitMode::Qr;
    if (s == "noise") return InitMode::Noise;
    if (s == "identity_noise") return InitMode::IdentityNoise;
    throw ValidationError("unknown init mode: " + s + " (expected qr|noise|identity_noise)");
}

inline std::string to_string(InitMode m) {
    switch (m) {
        case InitMode::Qr: return "qr";
        case InitMode::Noise: return "noise";
        default: return "identity_noise";
    }
}

// Random dim_in x dim_out matrix, column-orthonormal in the constrained modes.
//   qr             orthonormalization of a standard Gaussian matrix
//   noise          i.i.d. Gaussian entries of the given stddev (not isometric)
//   identity_noise truncated identity + Gaussian(std), projected back onto the
//                  isometry set (std = 0 gives the exact truncated identity)
// Callers reshape the result into tensor legs; rows index the in-group.
inline Tensor random_isometry(std::int64_t dim_in, std::int64_t dim_out, InitMode mode,
                              double stddev, Rng& rng) {
    if (dim_in < 1 || dim_out < 1) throw ValidationError("random_isometry: dims must be >= 1");
    if (mode != InitMode::Noise && dim_out > dim_in)
        throw ValidationError("random_isometry: dim_out > dim_in in constrained mode " +
                              to_string(mode));
    if (mode != InitMode::Qr && stddev <= 0.0 && !(mode == InitMode::IdentityNoise && stddev == 0.0))
        throw ValidationError("random_isometry: std must be > 0 in noise modes");

    std::vector<double> m(static_cast<std::size_t>(dim_in * dim_out));
    switch (mode) {
        case InitMode::Qr:
            for (double& v : m) v = rng.gaussian();
            orthonormalize_columns(dim_in, dim_out, m);
            break;
        case InitMode::Noise:
            for (double& v : m) v = rng.gaussian(stddev);
            break;
        case InitMode::IdentityNoise:
            for (std::int64_t i = 0; i < dim_in; ++i)
                for (std::int64_t j = 0; j < dim_out; ++j)
                    m[static_cast<std::size_t>(i * dim_out + j)] =
                        (i == j ? 1.0 : 0.0) + (stddev > 0.0 ? rng.gaussian(stddev) : 0.0);
            if (stddev > 0.0) polar_orthonormal(dim_in, dim_out, m);
            break;
    }
    return Tensor({dim_in, dim_out}, std::move(m));
}

// Axis split for matrixizing a tensor: which axes form the in-group (rows).
// The remaining axes form the out-group (columns), both in ascending axis order.
struct AxisSplit {
    std::vector<int> in_axes;
};

// Nearest isometry in Frobenius norm under the given in/out axis split: the
// orthogonal polar factor of the matrixized tensor, reshaped back.
inline Tensor project_isometry(const Tensor& t, const AxisSplit& split) {
    const int r = t.rank();
    std::vector<char> is_in(static_cast<std::size_t>(r), 0);
    for (int ax : split.in_axes) {
        if (ax < 0 || ax >= r) throw ValidationError("project_isometry: axis out of range");
        if (is_in[static_cast<std::size_t>(ax)])
            throw ValidationError("project_isometry: duplicate axis in split");
        is_in[static_cast<std::size_t>(ax)] = 1;
    }
    std::vector<int> perm;
    std::int64_t rows = 1, cols = 1;
    for (int d = 0; d < r; ++d)
        if (is_in[static_cast<std::size_t>(d)]) {
            perm.push_back(d);
            rows *= t.extent(d);
        }
    std::vector<int> out_axes;
    for (int d = 0; d < r; ++d)
        if (!is_in[static_cast<std::size_t>(d)]) {
            out_axes.push_back(d);
            cols *= t.extent(d);
        }
    if (rows < cols)
        throw ValidationError("project_isometry: out-dimension exceeds in-dimension");
    perm.insert(perm.end(), out_axes.begin(), out_axes.end());

    Tensor mat = permute(t, perm);
    polar_orthonormal(rows, cols, mat.data);
    return permute(mat, inverse_perm(perm));
}

// Convenience for matrices stored as [in, out].
inline Tensor project_isometry(const Tensor& t) {
    if (t.rank() != 2) throw ValidationError("project_isometry: expected rank-2 tensor");
    return project_isometry(t, AxisSplit{{0}});
}

} // namespace tnmera
