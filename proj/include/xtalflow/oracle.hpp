#pragma once

// Deterministic simulated HPC backend. A closed-form pair potential stands
// in for the expensive first-principles code: it is not physical, but it is
// smooth, permutation/translation invariant, and cheap enough to brute-force
// in tests. Latency is an accounting number unless real_latency is set.

#include <chrono>
#include <cmath>
#include <thread>
#include <vector>

#include "matcore.hpp"

namespace xtalflow {

struct OracleConfig {
    double cutoff_radius = 6.0;           // Angstrom
    double pair_strength = 0.4;           // depth scale of the 12-6 term, eV
    double ionic_weight = 0.3;            // electronegativity attraction, eV*A
    double latency_units_per_call = 1470;  // cost units per call (surrogate call = 1)
    double gap_base = 0.3;                // eV
    double gap_chi_scale = 2.0;           // eV per unit mean |chi_i - chi_j|
    double gap_density_scale = 10.0;      // eV per (atom/A^3)
    bool real_latency = false;            // sleep 1 microsecond per cost unit
    static constexpr bool seedless = true;  // the oracle takes no RNG anywhere

    void validate() const {
        if (cutoff_radius <= 0.0) throw InvariantError("oracle cutoff_radius must be positive");
        if (latency_units_per_call < 0.0) throw InvariantError("oracle latency must be >= 0");
    }
};

struct RelaxResult {
    CrystalStructure structure;
    std::vector<double> energy_trace;  // eV/atom, non-increasing
    bool converged = false;
    int steps = 0;  // == energy_trace.size() - 1
};

struct OracleCallKind {
    enum class Type { Energy, Gap, Relax };
    Type type;
    int relax_steps = 0;

    static OracleCallKind energy() { return {Type::Energy, 0}; }
    static OracleCallKind gap() { return {Type::Gap, 0}; }
    static OracleCallKind relax(int steps) { return {Type::Relax, steps}; }
};

inline double cost_of(const OracleCallKind& kind, const OracleConfig& cfg) {
    if (kind.type == OracleCallKind::Type::Relax)
        return cfg.latency_units_per_call * kind.relax_steps;
    return cfg.latency_units_per_call;
}

namespace detail {

inline void maybe_sleep(const OracleConfig& cfg) {
    if (cfg.real_latency && cfg.latency_units_per_call > 0.0)
        std::this_thread::sleep_for(
            std::chrono::microseconds(static_cast<long long>(cfg.latency_units_per_call)));
}

inline void check_overlaps(const CrystalStructure& s) {
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = i + 1; j < s.size(); ++j)
            if (min_image_distance(s, i, j) < 0.1)
                throw OverlapError("atoms " + std::to_string(i) + " and " + std::to_string(j) +
                                   " closer than 0.1 A");
}

}  // namespace detail

// Toy formation energy, eV/atom:
//   E = (1/N) * sum over min-image pairs with d <= cutoff of
//       pair_strength * ((r0/d)^12 - 2 (r0/d)^6) - ionic_weight * |chi_i - chi_j| / d
// with r0 the sum of covalent radii. A one-atom cell has no pairs and is the
// elemental reference at exactly 0.
inline PropertyValue formation_energy(const CrystalStructure& s, const OracleConfig& cfg) {
    cfg.validate();
    detail::check_overlaps(s);
    detail::maybe_sleep(cfg);
    double sum = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const auto& ei = s.species()[i].data();
        for (std::size_t j = i + 1; j < s.size(); ++j) {
            const auto& ej = s.species()[j].data();
            const double d = min_image_distance(s, i, j);
            if (d > cfg.cutoff_radius) continue;
            const double r0 = ei.covalent_radius + ej.covalent_radius;
            const double q6 = std::pow(r0 / d, 6);
            sum += cfg.pair_strength * (q6 * q6 - 2.0 * q6);
            sum -= cfg.ionic_weight * std::abs(ei.electronegativity - ej.electronegativity) / d;
        }
    }
    return PropertyValue(PropertyKind::FormationEnergy, sum / static_cast<double>(s.size()),
                         PropertySource::Oracle);
}

// Toy band gap, eV: max(0, gap_base + gap_chi_scale * mean pairwise
// |chi_i - chi_j| - gap_density_scale * N/volume).
inline PropertyValue band_gap(const CrystalStructure& s, const OracleConfig& cfg) {
    cfg.validate();
    detail::check_overlaps(s);
    detail::maybe_sleep(cfg);
    double chi_sum = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = i + 1; j < s.size(); ++j) {
            chi_sum += std::abs(s.species()[i].data().electronegativity -
                                s.species()[j].data().electronegativity);
            ++pairs;
        }
    const double chi_mean = pairs ? chi_sum / static_cast<double>(pairs) : 0.0;
    const double density = static_cast<double>(s.size()) / s.lattice().volume();
    const double g = cfg.gap_base + cfg.gap_chi_scale * chi_mean - cfg.gap_density_scale * density;
    return PropertyValue(PropertyKind::BandGap, std::max(0.0, g), PropertySource::Oracle);
}

// Central finite-difference gradient of the formation energy with respect to
// fractional coordinates. Exposed so tests can cross-check it.
inline std::vector<Vec3> energy_gradient(const CrystalStructure& s, const OracleConfig& cfg,
                                         double h = 1e-4) {
    std::vector<Vec3> grad(s.size(), Vec3{0, 0, 0});
    std::vector<Vec3> coords = s.frac_coords();
    for (std::size_t a = 0; a < s.size(); ++a) {
        for (int k = 0; k < 3; ++k) {
            const double orig = coords[a][k];
            coords[a][k] = orig + h;
            const double ep = formation_energy(s.with_frac_coords(coords), cfg).value;
            coords[a][k] = orig - h;
            const double em = formation_energy(s.with_frac_coords(coords), cfg).value;
            coords[a][k] = orig;
            grad[a][k] = (ep - em) / (2.0 * h);
        }
    }
    return grad;
}

// Fixed-lattice relaxation: steepest descent on fractional coordinates with
// step halving on uphill moves, so the energy trace never increases.
inline RelaxResult relax(const CrystalStructure& s, const OracleConfig& cfg, int max_steps,
                         double step_size, double tol) {
    if (max_steps < 1) throw UsageError("relax needs max_steps >= 1");
    if (tol <= 0.0) throw UsageError("relax needs tol > 0");
    CrystalStructure cur = s;
    double energy = formation_energy(cur, cfg).value;
    RelaxResult result{cur, {energy}, false, 0};
    for (int iter = 0; iter < max_steps; ++iter) {
        const std::vector<Vec3> grad = energy_gradient(cur, cfg);
        double step = step_size;
        bool improved = false;
        CrystalStructure trial = cur;
        double trial_energy = energy;
        for (int bt = 0; bt < 40 && !improved; ++bt) {
            std::vector<Vec3> coords = cur.frac_coords();
            for (std::size_t a = 0; a < coords.size(); ++a)
                for (int k = 0; k < 3; ++k) coords[a][k] -= step * grad[a][k];
            try {
                CrystalStructure candidate = cur.with_frac_coords(std::move(coords));
                const double e = formation_energy(candidate, cfg).value;
                if (e <= energy) {
                    trial = std::move(candidate);
                    trial_energy = e;
                    improved = true;
                    break;
                }
            } catch (const OverlapError&) {
                // shrink the step until atoms separate again
            }
            step *= 0.5;
        }
        const double decrease = improved ? energy - trial_energy : 0.0;
        if (decrease < tol) {
            result.converged = true;
            break;
        }
        cur = std::move(trial);
        energy = trial_energy;
        result.energy_trace.push_back(energy);
        result.steps += 1;
    }
    result.structure = cur;
    return result;
}

}  // namespace xtalflow
