#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tnmera/errors.hpp"
#include "tnmera/linalg.hpp"
#include "tnmera/rng.hpp"
#include "tnmera/tensor.hpp"

namespace tnmera {

// Basis convention: computational basis index s over N binary pixels, pixel i
// stored in bit i of s (pixel 0 = least significant bit). With a grid geometry,
// pixel index = row * width + col.

constexpr int kMaxFunctionPixels = 20;

// Bitmask over pixels selecting region A.
struct RegionMask {
    std::uint32_t bits = 0;

    int count() const {
        int c = 0;
        for (std::uint32_t b = bits; b; b &= b - 1) ++c;
        return c;
    }
    bool has(int pixel) const { return (bits >> pixel) & 1u; }
    RegionMask complement(int n) const {
        return {static_cast<std::uint32_t>(~bits & ((1u << n) - 1u))};
    }
};

// Normalized amplitude vector over N binary pixels: a target function viewed
// as a quantum state.
struct FunctionState {
    int num_pixels = 0;
    std::vector<double> amplitudes; // length 2^N, unit L2 norm
    int geom_height = 0;            // optional grid assignment, 0 when absent
    int geom_width = 0;

    bool has_geometry() const { return geom_height > 0 && geom_width > 0; }
};

// |Psi> = sum_s F(s) |s>, normalized. The table length fixes N = log2(len).
inline FunctionState golden_state(const std::vector<double>& truth_table) {
    const std::size_t len = truth_table.size();
    if (len < 2 || (len & (len - 1)) != 0)
        throw ValidationError("golden_state: table length must be a power of two >= 2");
    int n = 0;
    while ((std::size_t(1) << n) < len) ++n;
    if (n > kMaxFunctionPixels)
        throw ValidationError("golden_state: more than " + std::to_string(kMaxFunctionPixels) +
                              " pixels");
    double norm2 = 0.0;
    for (double v : truth_table) norm2 += v * v;
    if (norm2 == 0.0) throw ValidationError("golden_state: table is identically zero");
    const double inv = 1.0 / std::sqrt(norm2);

    FunctionState st;
    st.num_pixels = n;
    st.amplitudes.resize(len);
    for (std::size_t i = 0; i < len; ++i) st.amplitudes[i] = truth_table[i] * inv;
    return st;
}

inline void attach_geometry(FunctionState& st, int height, int width) {
    if (height * width != st.num_pixels)
        throw ValidationError("attach_geometry: H*W must equal the pixel count");
    st.geom_height = height;
    st.geom_width = width;
}

namespace detail {

inline std::uint32_t extract_bits(std::uint32_t s, std::uint32_t mask) {
    std::uint32_t out = 0;
    int pos = 0;
    for (int i = 0; mask >> i; ++i)
        if ((mask >> i) & 1u) {
            out |= ((s >> i) & 1u) << pos;
            ++pos;
        }
    return out;
}

} // namespace detail

// rho_A = Tr_B |Psi><Psi| as a 2^|A| x 2^|A| matrix, indexed by the A-pixels in
// increasing pixel order.
inline Tensor reduced_density_matrix(const FunctionState& st, RegionMask mask_a) {
    const int n = st.num_pixels;
    const std::uint32_t full = (1u << n) - 1u;
    if ((mask_a.bits & ~full) != 0)
        throw ValidationError("reduced_density_matrix: mask selects pixels outside the state");
    const int na = mask_a.count();
    if (na < 1 || na > n - 1)
        throw ValidationError("reduced_density_matrix: region must be a proper nonempty subset");
    if (na > 12) throw ValidationError("reduced_density_matrix: region larger than 12 pixels");

    const std::int64_t da = std::int64_t(1) << na;
    const std::int64_t db = std::int64_t(1) << (n - na);
    const std::uint32_t mask_b = mask_a.complement(n).bits;

    // Psi rearranged as an A x B matrix, then rho = M M^T.
    std::vector<double> mtx(static_cast<std::size_t>(da * db));
    for (std::uint32_t s = 0; s <= full; ++s) {
        const std::uint32_t a = detail::extract_bits(s, mask_a.bits);
        const std::uint32_t b = detail::extract_bits(s, mask_b);
        mtx[static_cast<std::size_t>(a) * db + b] = st.amplitudes[s];
    }
    Tensor rho({da, da});
    matmul(da, db, da, mtx.data(), false, mtx.data(), true, rho.data.data());
    return rho;
}

// Von Neumann entropy in bits: -sum lambda_i log2 lambda_i with 0 log 0 = 0.
// The input must be symmetric positive semidefinite with unit trace (within
// 1e-10); eigenvalues below -1e-10 are rejected, small negatives are clamped.
inline double entropy_bits(const Tensor& rho) {
    if (rho.rank() != 2 || rho.extent(0) != rho.extent(1))
        throw ValidationError("entropy: expected a square matrix");
    const std::int64_t d = rho.extent(0);
    double trace = 0.0;
    for (std::int64_t i = 0; i < d; ++i) trace += rho.at({i, i});
    if (std::abs(trace - 1.0) > 1e-10)
        throw ValidationError("entropy: trace deviates from 1 beyond tolerance");
    for (std::int64_t i = 0; i < d; ++i)
        for (std::int64_t j = i + 1; j < d; ++j)
            if (std::abs(rho.at({i, j}) - rho.at({j, i})) > 1e-10)
                throw ValidationError("entropy: matrix not symmetric");

    const auto lam = symmetric_eigenvalues(d, rho.data);
    double s = 0.0;
    for (double l : lam) {
        if (l < -1e-10) throw NumericalError("entropy: matrix not PSD within tolerance");
        if (l > 1e-300) s -= l * std::log2(l);
    }
    return std::max(s, 0.0);
}

inline double entanglement_entropy_bits(const FunctionState& st, RegionMask mask_a) {
    return entropy_bits(reduced_density_matrix(st, mask_a));
}

// ---- straight cuts on a grid geometry ----

struct StraightCut {
    bool vertical = true; // vertical: A = columns < k; horizontal: A = rows < k
    int k = 1;

    std::string id() const { return (vertical ? "v" : "h") + std::to_string(k); }
};

inline std::vector<StraightCut> all_straight_cuts(int height, int width) {
    std::vector<StraightCut> cuts;
    for (int k = 1; k < width; ++k) cuts.push_back({true, k});
    for (int k = 1; k < height; ++k) cuts.push_back({false, k});
    return cuts;
}

inline RegionMask cut_mask(const StraightCut& cut, int height, int width) {
    RegionMask m;
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c)
            if ((cut.vertical ? c : r) < cut.k) m.bits |= 1u << (r * width + c);
    return m;
}

// Boundary length: 4-connected pixel pairs straddling the cut.
inline int boundary_length(const RegionMask& mask, int height, int width) {
    int l = 0;
    auto in_a = [&](int r, int c) { return mask.has(r * width + c); };
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c) {
            if (c + 1 < width && in_a(r, c) != in_a(r, c + 1)) ++l;
            if (r + 1 < height && in_a(r, c) != in_a(r + 1, c)) ++l;
        }
    return l;
}

// ---- r-local function family ----
//
// Products of strictly positive clause factors, each touching only pixels
// within Chebyshev distance r of its anchor:
//   F(s) = exp( sum_k c_k * prod_{p in K_k} sigma_p(s) ),  sigma = 2 bit - 1.
// The multiplicative structure guarantees the area-law premise by construction.
inline std::vector<double> random_local_function(int height, int width, int r, Rng& rng) {
    const int n = height * width;
    if (n > kMaxFunctionPixels)
        throw ValidationError("random_local_function: grid too large");

    struct Clause {
        std::vector<int> pixels;
        double coeff;
    };
    std::vector<Clause> clauses;
    for (int ar = 0; ar < height; ++ar)
        for (int ac = 0; ac < width; ++ac) {
            Clause cl;
            for (int pr = std::max(0, ar - r); pr <= std::min(height - 1, ar + r); ++pr)
                for (int pc = std::max(0, ac - r); pc <= std::min(width - 1, ac + r); ++pc)
                    if (rng.uniform() < 0.5) cl.pixels.push_back(pr * width + pc);
            if (cl.pixels.empty()) cl.pixels.push_back(ar * width + ac);
            cl.coeff = rng.gaussian(0.7);
            clauses.push_back(std::move(cl));
        }

    std::vector<double> table(std::size_t(1) << n);
    for (std::uint32_t s = 0; s < table.size(); ++s) {
        double expo = 0.0;
        for (const auto& cl : clauses) {
            double prod = cl.coeff;
            for (int p : cl.pixels) prod *= ((s >> p) & 1u) ? 1.0 : -1.0;
            expo += prod;
        }
        table[s] = std::exp(expo);
    }
    return table;
}

// Function of only the pixels inside a centered disk of the given radius; used
// for the object-to-image scaling observation.
inline std::vector<double> disk_object_function(int height, int width, double radius, Rng& rng) {
    const int n = height * width;
    if (n > kMaxFunctionPixels) throw ValidationError("disk_object_function: grid too large");
    const double cr = (height - 1) / 2.0, cc = (width - 1) / 2.0;
    std::vector<int> disk;
    for (int r = 0; r < height; ++r)
        for (int c = 0; c < width; ++c)
            if ((r - cr) * (r - cr) + (c - cc) * (c - cc) <= radius * radius)
                disk.push_back(r * width + c);
    if (disk.empty()) disk.push_back(static_cast<int>(cr) * width + static_cast<int>(cc));

    std::vector<double> sub(std::size_t(1) << disk.size());
    for (auto& v : sub) v = std::exp(rng.gaussian());
    std::vector<double> table(std::size_t(1) << n);
    for (std::uint32_t s = 0; s < table.size(); ++s) {
        std::uint32_t key = 0;
        for (std::size_t i = 0; i < disk.size(); ++i)
            key |= ((s >> disk[i]) & 1u) << i;
        table[s] = sub[key];
    }
    return table;
}

// ---- area-law report ----

struct AreaLawRow {
    std::string cut_id;
    int size_a = 0;
    int boundary = 0;
    double entropy_bits = 0.0;
    double bound_bits = 0.0;
    bool ok = false;
};

struct AreaLawReport {
    std::vector<AreaLawRow> rows;

    bool all_ok() const {
        for (const auto& r : rows)
            if (!r.ok) return false;
        return true;
    }

    std::string to_csv() const {
        std::ostringstream os;
        os << "cut_id,|A|,L_AB,S_bits,bound_bits,ok\n";
        os.precision(12);
        for (const auto& r : rows)
            os << r.cut_id << ',' << r.size_a << ',' << r.boundary << ',' << r.entropy_bits
               << ',' << r.bound_bits << ',' << (r.ok ? 1 : 0) << '\n';
        return os.str();
    }
};

// Checks S_AB <= r * L_AB (bits) for every supplied cut of an r-local function.
inline AreaLawReport area_law_check(const std::vector<double>& truth_table, int height,
                                    int width, int r, const std::vector<StraightCut>& cuts) {
    if (r < 1) throw ValidationError("area_law_check: interaction radius must be >= 1");
    FunctionState st = golden_state(truth_table);
    attach_geometry(st, height, width);

    AreaLawReport report;
    for (const auto& cut : cuts) {
        if (cut.k < 1 || cut.k >= (cut.vertical ? width : height))
            throw ValidationError("area_law_check: cut index outside the grid");
        RegionMask mask = cut_mask(cut, height, width);
        AreaLawRow row;
        row.cut_id = cut.id();
        row.size_a = mask.count();
        row.boundary = boundary_length(mask, height, width);
        row.entropy_bits = entanglement_entropy_bits(st, mask);
        row.bound_bits = static_cast<double>(r) * row.boundary;
        row.ok = row.entropy_bits <= row.bound_bits + 1e-9;
        report.rows.push_back(std::move(row));
    }
    return report;
}

// Entropy of a half-plane cut for disk-object functions at growing radii,
// reported against the r*sqrt(eta) scale. Observation data, not an assertion.
struct DiskScanRow {
    double radius = 0.0;
    double eta = 0.0;        // disk area / image area
    double r_sqrt_eta = 0.0; // interaction radius * sqrt(eta)
    double entropy_bits = 0.0;
};

inline std::vector<DiskScanRow> disk_object_scan(int height, int width, int r,
                                                 const std::vector<double>& radii,
                                                 std::uint64_t seed) {
    std::vector<DiskScanRow> rows;
    Rng rng(seed);
    const StraightCut cut{true, width / 2};
    for (double radius : radii) {
        Rng sub = rng.split(static_cast<std::uint64_t>(rows.size()));
        const auto table = disk_object_function(height, width, radius, sub);
        FunctionState st = golden_state(table);
        attach_geometry(st, height, width);
        DiskScanRow row;
        row.radius = radius;
        row.eta = std::min(1.0, 3.14159265358979323846 * radius * radius / (height * width));
        row.r_sqrt_eta = r * std::sqrt(row.eta);
        row.entropy_bits = entanglement_entropy_bits(st, cut_mask(cut, height, width));
        rows.push_back(row);
    }
    return rows;
}

inline std::string disk_scan_csv(const std::vector<DiskScanRow>& rows) {
    std::ostringstream os;
    os << "radius,eta,r_sqrt_eta,S_bits\n";
    os.precision(12);
    for (const auto& r : rows)
        os << r.radius << ',' << r.eta << ',' << r.r_sqrt_eta << ',' << r.entropy_bits << '\n';
    return os.str();
}

} // namespace tnmera
