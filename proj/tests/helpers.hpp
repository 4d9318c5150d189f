#pragma once

// Shared test utilities: deterministic structure generators, brute-force
// oracles kept independent of the library implementations they check, a
// two-sample KS test, and a scoped temp directory.

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "xtalflow/matcore.hpp"
#include "xtalflow/rng.hpp"

namespace testutil {

inline void expect(bool cond, const char* what) {
    if (!cond) throw std::runtime_error(std::string("test helper precondition failed: ") + what);
}

inline std::filesystem::path data_dir() { return XTALFLOW_TEST_DATA_DIR; }

inline nlohmann::json load_goldens() {
    std::ifstream in(data_dir() / "golden" / "goldens_v1.json");
    expect(in.good(), "goldens_v1.json must exist");
    return nlohmann::json::parse(in);
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("xtalflow_test_" + tag + "_" + std::to_string(::getpid()));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

// Every atom gets its own x slot (pairwise gap >= 0.1 fractional), so the
// canonical lexicographic ordering cannot flip under the sub-milliangstrom
// displacements the RMSD tests apply.
inline xtalflow::CrystalStructure random_structure(xtalflow::Rng& rng, int n_min = 2, int n_max = 8) {
    const std::vector<int> pool = {8, 11, 12, 13, 14, 16, 17, 20, 22, 26};
    const int n = rng.uniform_int(n_min, n_max);
    xtalflow::Mat3 rows{};
    for (int i = 0; i < 3; ++i) rows[i][i] = rng.uniform(3.5, 6.0);

    std::vector<int> slots(8);
    for (int i = 0; i < 8; ++i) slots[i] = i;
    for (std::size_t i = slots.size(); i > 1; --i) std::swap(slots[i - 1], slots[rng.below(i)]);

    std::vector<xtalflow::ElementId> species;
    std::vector<xtalflow::Vec3> coords;
    for (int a = 0; a < n; ++a) {
        xtalflow::Vec3 f{0.05 + 0.115 * slots[static_cast<std::size_t>(a)] + rng.uniform(-0.004, 0.004),
                         0.05 + 0.3 * static_cast<double>(rng.below(3)) + rng.uniform(-0.02, 0.02),
                         0.05 + 0.3 * static_cast<double>(rng.below(3)) + rng.uniform(-0.02, 0.02)};
        coords.push_back(f);
        species.push_back(xtalflow::ElementId(pool[rng.below(pool.size())]));
    }
    return xtalflow::CrystalStructure(xtalflow::Lattice(rows), std::move(species), std::move(coords));
}

// Brute-force minimum-image distance over a 5^3 translation search.
inline double min_image_bruteforce(const xtalflow::CrystalStructure& s, std::size_t i, std::size_t j) {
    const auto& L = s.lattice().rows();
    double best = std::numeric_limits<double>::infinity();
    for (int a = -2; a <= 2; ++a)
        for (int b = -2; b <= 2; ++b)
            for (int c = -2; c <= 2; ++c) {
                if (i == j && a == 0 && b == 0 && c == 0) continue;
                const xtalflow::Vec3 df{s.frac_coords()[j][0] - s.frac_coords()[i][0] + a,
                                        s.frac_coords()[j][1] - s.frac_coords()[i][1] + b,
                                        s.frac_coords()[j][2] - s.frac_coords()[i][2] + c};
                best = std::min(best, xtalflow::norm(xtalflow::row_times_mat(df, L)));
            }
    return best;
}

// Exhaustive oxidation-state assignment search (one state per element).
inline bool neutrality_bruteforce(const std::map<int, int>& counts,
                                  const std::map<int, std::vector<int>>& states) {
    std::vector<std::pair<int, int>> items(counts.begin(), counts.end());
    std::function<bool(std::size_t, long)> rec = [&](std::size_t idx, long sum) {
        if (idx == items.size()) return sum == 0;
        for (int st : states.at(items[idx].first))
            if (rec(idx + 1, sum + static_cast<long>(items[idx].second) * st)) return true;
        return false;
    };
    return rec(0, 0);
}

// Two-sample Kolmogorov-Smirnov: true when the null is NOT rejected at the
// given alpha (only 0.01 supported).
inline bool ks_two_sample_accepts(std::vector<double> a, std::vector<double> b, double alpha = 0.01) {
    expect(alpha == 0.01, "only the 0.01 critical value is tabulated");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double n = static_cast<double>(a.size()), m = static_cast<double>(b.size());
    double d = 0.0;
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] <= b[j]) ++i;
        else ++j;
        const double fa = static_cast<double>(i) / n;
        const double fb = static_cast<double>(j) / m;
        d = std::max(d, std::abs(fa - fb));
    }
    const double c_alpha = 1.628;  // c(0.01) = sqrt(-ln(0.005)/2)
    return d <= c_alpha * std::sqrt((n + m) / (n * m));
}

}  // namespace testutil
