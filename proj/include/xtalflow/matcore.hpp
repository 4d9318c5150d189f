#pragma once

// Core domain types: lattice, crystal structure, composition, property
// values, plus periodic geometry (minimum image) and canonical hashing.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "elements.hpp"
#include "errors.hpp"
#include "geometry.hpp"

namespace xtalflow {

inline constexpr std::size_t kDefaultMaxAtoms = 80;

// Right-handed 3x3 cell, rows are edge vectors in Angstrom.
class Lattice {
  public:
    explicit Lattice(const Mat3& rows) : rows_(rows) {
        if (determinant(rows_) <= 0.0)
            throw InvariantError("lattice must be right-handed with positive volume");
        for (const auto& r : rows_)
            if (norm({r[0], r[1], r[2]}) <= 0.1)
                throw InvariantError("lattice row shorter than 0.1 A");
    }

    static Lattice cubic(double a) {
        return Lattice(Mat3{{{a, 0, 0}, {0, a, 0}, {0, 0, a}}});
    }

    const Mat3& rows() const { return rows_; }
    double volume() const { return determinant(rows_); }
    Mat3 inverse_rows() const { return inverse(rows_); }

    Vec3 row(int i) const { return {rows_[i][0], rows_[i][1], rows_[i][2]}; }

    // Cell lengths a, b, c.
    Vec3 lengths() const { return {norm(row(0)), norm(row(1)), norm(row(2))}; }

    // Cell angles alpha, beta, gamma in degrees.
    Vec3 angles() const {
        const Vec3 a = row(0), b = row(1), c = row(2);
        auto ang = [](const Vec3& u, const Vec3& v) {
            double cosv = dot(u, v) / (norm(u) * norm(v));
            cosv = std::clamp(cosv, -1.0, 1.0);
            return std::acos(cosv) * 180.0 / 3.14159265358979323846;
        };
        return {ang(b, c), ang(a, c), ang(a, b)};
    }

    // Metric tensor G = L L^T.
    Mat3 metric() const { return matmul(rows_, transpose(rows_)); }

  private:
    Mat3 rows_;
};

enum class CrystalSystem { Triclinic, Monoclinic, Orthorhombic, Tetragonal, Trigonal, Hexagonal, Cubic };

inline const char* to_string(CrystalSystem s) {
    switch (s) {
        case CrystalSystem::Triclinic: return "triclinic";
        case CrystalSystem::Monoclinic: return "monoclinic";
        case CrystalSystem::Orthorhombic: return "orthorhombic";
        case CrystalSystem::Tetragonal: return "tetragonal";
        case CrystalSystem::Trigonal: return "trigonal";
        case CrystalSystem::Hexagonal: return "hexagonal";
        case CrystalSystem::Cubic: return "cubic";
    }
    return "?";
}

// Classification from lattice parameters alone, most specific first.
// tol is relative on lengths (Angstrom per Angstrom) and absolute in
// degrees on angles, scaled by 90 to keep one knob.
inline CrystalSystem crystal_system(const Lattice& lat, double tol = 1e-3) {
    const Vec3 len = lat.lengths();
    const Vec3 ang = lat.angles();
    const double lscale = std::max({len[0], len[1], len[2]});
    auto len_eq = [&](double x, double y) { return std::abs(x - y) <= tol * lscale; };
    auto ang_eq = [&](double x, double y) { return std::abs(x - y) <= tol * 90.0; };
    auto ang_is = ang_eq;
    const bool all90 = ang_is(ang[0], 90) && ang_is(ang[1], 90) && ang_is(ang[2], 90);
    const bool ab = len_eq(len[0], len[1]), bc = len_eq(len[1], len[2]), ac = len_eq(len[0], len[2]);

    if (all90 && ab && bc) return CrystalSystem::Cubic;
    if (ang_is(ang[0], 90) && ang_is(ang[1], 90) && ang_is(ang[2], 120) && ab)
        return CrystalSystem::Hexagonal;
    if (ab && bc && ang_eq(ang[0], ang[1]) && ang_eq(ang[1], ang[2]) && !all90)
        return CrystalSystem::Trigonal;
    if (all90 && (ab || bc || ac)) return CrystalSystem::Tetragonal;
    if (all90) return CrystalSystem::Orthorhombic;
    const int right = ang_is(ang[0], 90) + ang_is(ang[1], 90) + ang_is(ang[2], 90);
    if (right == 2) return CrystalSystem::Monoclinic;
    return CrystalSystem::Triclinic;
}

// Element counts of a formula unit or a whole cell.
class Composition {
  public:
    Composition() = default;

    explicit Composition(const std::map<int, int>& counts_by_z) {
        for (const auto& [z, c] : counts_by_z) add(ElementId(z), c);
        if (counts_.empty()) throw InvariantError("composition must have at least one entry");
    }

    void add(ElementId e, int count) {
        if (count <= 0) throw UsageError("composition counts must be positive");
        counts_[e.atomic_number()] += count;
    }

    // Parse "Fe2O3"-style formula strings.
    static Composition parse(const std::string& formula) {
        Composition c;
        std::size_t i = 0;
        while (i < formula.size()) {
            if (!std::isupper(static_cast<unsigned char>(formula[i])))
                throw UsageError("cannot parse formula: " + formula);
            std::string sym(1, formula[i++]);
            while (i < formula.size() && std::islower(static_cast<unsigned char>(formula[i])))
                sym += formula[i++];
            std::string digits;
            while (i < formula.size() && std::isdigit(static_cast<unsigned char>(formula[i])))
                digits += formula[i++];
            c.add(ElementId::from_symbol(sym), digits.empty() ? 1 : std::stoi(digits));
        }
        if (c.counts_.empty()) throw UsageError("empty formula");
        return c;
    }

    const std::map<int, int>& counts() const { return counts_; }
    bool empty() const { return counts_.empty(); }

    int total_atoms() const {
        int n = 0;
        for (const auto& [z, c] : counts_) n += c;
        return n;
    }

    std::size_t distinct_elements() const { return counts_.size(); }

    // Counts divided by their gcd, e.g. Fe4O6 -> Fe2O3.
    Composition reduced() const {
        int g = 0;
        for (const auto& [z, c] : counts_) g = std::gcd(g, c);
        Composition out;
        for (const auto& [z, c] : counts_) out.counts_[z] = c / g;
        return out;
    }

    // Canonical key with symbols in alphabetical order, e.g. "Fe2O3".
    std::string key() const {
        std::vector<std::pair<std::string, int>> parts;
        for (const auto& [z, c] : counts_) parts.emplace_back(ElementId(z).symbol(), c);
        std::sort(parts.begin(), parts.end());
        std::ostringstream os;
        for (const auto& [sym, c] : parts) os << sym << c;
        return os.str();
    }

    std::string reduced_key() const { return reduced().key(); }

    friend bool operator==(const Composition& a, const Composition& b) { return a.counts_ == b.counts_; }

  private:
    std::map<int, int> counts_;
};

// Lattice + species + fractional coordinates; the unit of exchange between
// every module. Coordinates are wrapped to [0,1) on construction so one
// normal form backs hashing and RMSD.
class CrystalStructure {
  public:
    CrystalStructure(Lattice lattice, std::vector<ElementId> species, std::vector<Vec3> frac_coords,
                     std::size_t max_atoms = kDefaultMaxAtoms)
        : lattice_(std::move(lattice)), species_(std::move(species)), frac_(std::move(frac_coords)) {
        if (species_.empty()) throw InvariantError("structure needs at least one atom");
        if (species_.size() != frac_.size())
            throw InvariantError("species and frac_coords length mismatch");
        if (species_.size() > max_atoms)
            throw InvariantError("structure exceeds the configured atom maximum");
        for (auto& f : frac_) f = wrap_frac(f);
    }

    const Lattice& lattice() const { return lattice_; }
    const std::vector<ElementId>& species() const { return species_; }
    const std::vector<Vec3>& frac_coords() const { return frac_; }
    std::size_t size() const { return species_.size(); }

    Composition composition() const {
        Composition c;
        std::map<int, int> tally;
        for (const auto& e : species_) tally[e.atomic_number()] += 1;
        return Composition(tally);
    }

    CrystalStructure with_frac_coords(std::vector<Vec3> f) const {
        return CrystalStructure(lattice_, species_, std::move(f));
    }

  private:
    Lattice lattice_;
    std::vector<ElementId> species_;
    std::vector<Vec3> frac_;
};

enum class PropertyKind { FormationEnergy, BandGap };
enum class PropertySource { Oracle, Surrogate, Depot };

inline const char* to_string(PropertyKind k) {
    return k == PropertyKind::FormationEnergy ? "formation_energy" : "band_gap";
}
inline const char* to_string(PropertySource s) {
    switch (s) {
        case PropertySource::Oracle: return "oracle";
        case PropertySource::Surrogate: return "surrogate";
        case PropertySource::Depot: return "depot";
    }
    return "?";
}

struct PropertyValue {
    PropertyKind kind;
    double value;
    PropertySource source;

    PropertyValue(PropertyKind k, double v, PropertySource s) : kind(k), value(v), source(s) {
        if (kind == PropertyKind::BandGap && value < 0.0)
            throw InvariantError("band gap cannot be negative");
    }
};

// Cartesian position of one atom (Angstrom): x = f * L.
inline Vec3 to_cartesian(const CrystalStructure& s, std::size_t atom_index) {
    if (atom_index >= s.size()) throw UsageError("atom index out of range");
    return row_times_mat(s.frac_coords()[atom_index], s.lattice().rows());
}

// Minimum-image distance between atoms i and j over the 27 neighbor-cell
// translations. Sufficient for cells that are not extremely skewed; tests
// back it with a 5^3 brute-force oracle.
inline double min_image_distance(const CrystalStructure& s, std::size_t i, std::size_t j) {
    if (i >= s.size() || j >= s.size()) throw UsageError("atom index out of range");
    const Mat3& L = s.lattice().rows();
    const Vec3 d0 = s.frac_coords()[i] - s.frac_coords()[j];
    double best = std::numeric_limits<double>::infinity();
    for (int a = -1; a <= 1; ++a)
        for (int b = -1; b <= 1; ++b)
            for (int c = -1; c <= 1; ++c) {
                if (i == j && a == 0 && b == 0 && c == 0) continue;
                const Vec3 df{d0[0] + a, d0[1] + b, d0[2] + c};
                best = std::min(best, norm(row_times_mat(df, L)));
            }
    return best;
}

namespace detail {

struct CanonicalAtom {
    int z;
    Vec3 frac;
};

// Sort by species then lexicographic coordinates; shared by hashing and RMSD.
inline std::vector<CanonicalAtom> canonical_atoms(const CrystalStructure& s) {
    std::vector<CanonicalAtom> atoms(s.size());
    for (std::size_t i = 0; i < s.size(); ++i)
        atoms[i] = {s.species()[i].atomic_number(), s.frac_coords()[i]};
    std::sort(atoms.begin(), atoms.end(), [](const CanonicalAtom& a, const CanonicalAtom& b) {
        if (a.z != b.z) return a.z < b.z;
        return a.frac < b.frac;
    });
    return atoms;
}

inline std::uint64_t fnv1a(std::uint64_t h, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xffULL;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::int64_t quantize(double x, double tol) {
    return static_cast<std::int64_t>(std::llround(x / tol));
}

}  // namespace detail

// Deterministic digest of (sorted composition, lattice rounded to tol,
// canonically ordered coordinates rounded to tol). Invariant under atom
// permutation and integer-lattice translation.
inline std::string structure_hash(const CrystalStructure& s, double tol = 1e-3) {
    // quantized bin of a wrapped coordinate; 0.9996 lands in the same bin as
    // 0.0004 at tol 1e-3 so boundary atoms hash stably
    const std::int64_t nbins = detail::quantize(1.0, tol);
    auto bin = [&](double x) {
        std::int64_t q = detail::quantize(x, tol);
        if (q >= nbins) q -= nbins;
        return q;
    };
    struct Key {
        int z;
        std::array<std::int64_t, 3> q;
        bool operator<(const Key& o) const { return std::tie(z, q) < std::tie(o.z, o.q); }
    };
    std::vector<Key> keys(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        const Vec3& f = s.frac_coords()[i];
        keys[i] = {s.species()[i].atomic_number(), {bin(f[0]), bin(f[1]), bin(f[2])}};
    }
    std::sort(keys.begin(), keys.end());

    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& row : s.lattice().rows())
        for (double v : row) h = detail::fnv1a(h, static_cast<std::uint64_t>(detail::quantize(v, tol)));
    for (const auto& k : keys) {
        h = detail::fnv1a(h, static_cast<std::uint64_t>(k.z));
        for (int c = 0; c < 3; ++c) h = detail::fnv1a(h, static_cast<std::uint64_t>(k.q[c]));
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace xtalflow
