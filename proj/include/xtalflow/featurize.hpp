#pragma once

// Periodic graph featurization: k-hot node embeddings from binned element
// properties, k-nearest-neighbor edges over periodic images, Gaussian RBF
// expansion of edge distances.

#include <algorithm>
#include <vector>

#include "matcore.hpp"

namespace xtalflow {

// One bit per bin across five property groups; 64 bits total.
//   [0,18)   group
//   [18,25)  period
//   [25,35)  electronegativity decile over the fixed range [0, 4]
//   [35,39)  covalent-radius quartile over the fixed range [0.2, 2.6]
//   [39,64)  atomic-number bin (25 bins over Z = 1..86)
inline constexpr int kNodeFeatureDim = 64;

inline std::array<int, 5> khot_bits(ElementId e) {
    const ElementData& d = e.data();
    auto bin = [](double x, double lo, double hi, int n) {
        int b = static_cast<int>((x - lo) / (hi - lo) * n);
        return std::clamp(b, 0, n - 1);
    };
    return {
        d.group - 1,
        18 + (d.period - 1),
        25 + bin(d.electronegativity, 0.0, 4.0, 10),
        35 + bin(d.covalent_radius, 0.2, 2.6, 4),
        39 + bin(static_cast<double>(d.z - 1), 0.0, 86.0, 25),
    };
}

inline std::vector<double> khot_vector(ElementId e) {
    std::vector<double> v(kNodeFeatureDim, 0.0);
    for (int b : khot_bits(e)) v[static_cast<std::size_t>(b)] = 1.0;
    return v;
}

// Gaussian RBF expansion with n_basis centers evenly spaced on [0, r_max];
// the width equals the center spacing, and a component is exactly 1 when the
// distance sits on its center.
inline std::vector<double> rbf_expand(double distance, int n_basis, double r_max) {
    const double spacing = r_max / static_cast<double>(n_basis - 1);
    std::vector<double> out(static_cast<std::size_t>(n_basis));
    for (int m = 0; m < n_basis; ++m) {
        const double delta = distance - spacing * m;
        out[static_cast<std::size_t>(m)] = std::exp(-delta * delta / (2.0 * spacing * spacing));
    }
    return out;
}

struct GraphEdge {
    int source;       // node i whose neighborhood this edge belongs to
    int neighbor;     // node j (may equal i through a periodic image)
    double distance;  // Angstrom, > 0
};

struct MaterialGraph {
    int n_nodes = 0;
    int k = 0;
    int n_basis = 0;
    double r_max = 0.0;
    std::vector<std::vector<double>> node_features;  // n_nodes x kNodeFeatureDim
    std::vector<GraphEdge> edges;                    // grouped by source, k per node
    std::vector<std::vector<double>> edge_features;  // RBF expansion per edge
};

// Builds the kNN graph over periodic images (+-2 cells per axis). Every node
// gets exactly k outgoing edges; ties are broken on content (distance,
// neighbor species, displacement) so the graph is permutation-stable.
inline MaterialGraph featurize(const CrystalStructure& s, int k, int n_basis, double r_max) {
    if (k < 1) throw UsageError("featurize needs k >= 1");
    if (n_basis < 2) throw UsageError("featurize needs n_basis >= 2");
    if (r_max <= 0.0) throw UsageError("featurize needs r_max > 0");

    const int n = static_cast<int>(s.size());
    MaterialGraph g;
    g.n_nodes = n;
    g.k = k;
    g.n_basis = n_basis;
    g.r_max = r_max;
    g.node_features.reserve(static_cast<std::size_t>(n));
    for (const auto& e : s.species()) g.node_features.push_back(khot_vector(e));

    struct Candidate {
        double distance;
        int z;
        Vec3 disp;
        int j;
        bool operator<(const Candidate& o) const {
            if (distance != o.distance) return distance < o.distance;
            if (z != o.z) return z < o.z;
            return disp < o.disp;
        }
    };

    const Mat3& L = s.lattice().rows();
    for (int i = 0; i < n; ++i) {
        std::vector<Candidate> cands;
        cands.reserve(static_cast<std::size_t>(n) * 125);
        for (int j = 0; j < n; ++j) {
            const Vec3 d0 = s.frac_coords()[j] - s.frac_coords()[i];
            for (int a = -2; a <= 2; ++a)
                for (int b = -2; b <= 2; ++b)
                    for (int c = -2; c <= 2; ++c) {
                        if (i == j && a == 0 && b == 0 && c == 0) continue;
                        const Vec3 disp = row_times_mat({d0[0] + a, d0[1] + b, d0[2] + c}, L);
                        cands.push_back({norm(disp), s.species()[static_cast<std::size_t>(j)].atomic_number(),
                                         disp, j});
                    }
        }
        if (static_cast<int>(cands.size()) < k)
            throw UsageError("k exceeds the available periodic neighbor candidates");
        std::partial_sort(cands.begin(), cands.begin() + k, cands.end());
        if (cands[0].distance > r_max)
            throw EmptyNeighborhoodError("atom " + std::to_string(i) +
                                         " has no neighbor within r_max");
        for (int e = 0; e < k; ++e) {
            g.edges.push_back({i, cands[static_cast<std::size_t>(e)].j,
                               cands[static_cast<std::size_t>(e)].distance});
            g.edge_features.push_back(
                rbf_expand(cands[static_cast<std::size_t>(e)].distance, n_basis, r_max));
        }
    }
    return g;
}

}  // namespace xtalflow
