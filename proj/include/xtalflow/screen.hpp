#pragma once

// Quality gate between generation and evaluation: component-count filter,
// charge-neutrality search over oxidation states, a bounded self-mapping
// symmetry counter ("order 1" means identity only), RMSD with canonical
// atom correspondence, greedy dedup, and the match discriminator.

#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "featurize.hpp"
#include "matcore.hpp"
#include "rng.hpp"

namespace xtalflow {

// --- charge neutrality ---

struct OxidationTable {
    std::map<int, std::vector<int>> states;  // atomic number -> allowed states

    static OxidationTable defaults() {
        OxidationTable t;
        for (const auto& e : detail::kElements) {
            std::vector<int> s(e.states.begin(), e.states.begin() + e.n_states);
            t.states[e.z] = std::move(s);
        }
        return t;
    }

    static OxidationTable from_json(const nlohmann::json& j) {
        OxidationTable t;
        for (const auto& [sym, arr] : j.items())
            t.states[ElementId::from_symbol(sym).atomic_number()] = arr.get<std::vector<int>>();
        return t;
    }
};

inline bool check_components(const CrystalStructure& s, int max_components = 10) {
    return static_cast<int>(s.composition().distinct_elements()) <= max_components;
}

// Pass iff some assignment of one allowed state per element sums to zero.
// Runs as a reachable-sum sweep, equivalent to exhaustive enumeration.
inline bool check_neutrality(const Composition& comp, const OxidationTable& table) {
    std::set<long> sums{0};
    for (const auto& [z, count] : comp.counts()) {
        const auto it = table.states.find(z);
        if (it == table.states.end())
            throw UnsupportedElementError("no oxidation states for Z=" + std::to_string(z));
        std::set<long> next;
        for (long s : sums)
            for (int st : it->second) next.insert(s + static_cast<long>(count) * st);
        sums = std::move(next);
    }
    return sums.count(0) > 0;
}

// --- symmetry counter ---

namespace detail {

inline const std::vector<Mat3>& signed_permutations() {
    static const std::vector<Mat3> ops = [] {
        std::vector<Mat3> out;
        int perm[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
        for (auto& p : perm)
            for (int sx = -1; sx <= 1; sx += 2)
                for (int sy = -1; sy <= 1; sy += 2)
                    for (int sz = -1; sz <= 1; sz += 2) {
                        Mat3 w{};
                        const int sign[3] = {sx, sy, sz};
                        for (int r = 0; r < 3; ++r) w[r][p[r]] = sign[r];
                        out.push_back(w);
                    }
        return out;
    }();
    return ops;
}

// f' = f W^T + tau applied to every atom must land on a same-species atom
// within tol (per axis, nearest image), bijectively.
inline bool maps_onto_self(const CrystalStructure& s, const Mat3& w, const Vec3& tau, double tol) {
    const std::size_t n = s.size();
    std::vector<bool> used(n, false);
    const Mat3 wt = transpose(w);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 fi = wrap_frac(row_times_mat(s.frac_coords()[i], wt) + tau);
        bool matched = false;
        for (std::size_t p = 0; p < n; ++p) {
            if (used[p] || s.species()[p] != s.species()[i]) continue;
            const Vec3 d = wrap_half(fi - s.frac_coords()[p]);
            if (std::abs(d[0]) <= tol && std::abs(d[1]) <= tol && std::abs(d[2]) <= tol) {
                used[p] = true;
                matched = true;
                break;
            }
        }
        if (!matched) return false;
    }
    return true;
}

}  // namespace detail

// Counts candidate operations (48 signed permutations filtered by lattice
// metric compatibility, composed with translations read off same-species
// atom pairs) that map the structure onto itself. Not a space-group
// determination; order 1 means no symmetry beyond identity.
inline int symmetry_order(const CrystalStructure& s, double tol = 1e-3) {
    const Mat3 g = s.lattice().metric();
    double gmax = 0.0;
    for (const auto& row : g)
        for (double v : row) gmax = std::max(gmax, std::abs(v));
    const double metric_tol = 1e-3 * gmax;

    // anchor on the least frequent species to bound translation candidates
    std::map<int, int> freq;
    for (const auto& e : s.species()) freq[e.atomic_number()] += 1;
    int anchor_z = s.species()[0].atomic_number();
    int best = freq[anchor_z];
    for (const auto& [z, c] : freq)
        if (c < best) {
            best = c;
            anchor_z = z;
        }
    std::size_t anchor = 0;
    while (s.species()[anchor].atomic_number() != anchor_z) ++anchor;

    int order = 0;
    for (const Mat3& w : detail::signed_permutations()) {
        const Mat3 wt = transpose(w);
        const Mat3 gw = matmul(matmul(wt, g), w);
        double diff = 0.0;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) diff = std::max(diff, std::abs(gw[i][j] - g[i][j]));
        if (diff > metric_tol) continue;

        const Vec3 fa = row_times_mat(s.frac_coords()[anchor], wt);
        std::vector<Vec3> taus;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (s.species()[j].atomic_number() != anchor_z) continue;
            taus.push_back(wrap_frac(s.frac_coords()[j] - fa));
        }
        // drop translation candidates that coincide within tol
        std::vector<Vec3> unique_taus;
        for (const auto& t : taus) {
            bool dup = false;
            for (const auto& u : unique_taus) {
                const Vec3 d = wrap_half(t - u);
                if (std::abs(d[0]) <= tol && std::abs(d[1]) <= tol && std::abs(d[2]) <= tol) {
                    dup = true;
                    break;
                }
            }
            if (!dup) unique_taus.push_back(t);
        }
        for (const auto& tau : unique_taus)
            if (detail::maps_onto_self(s, w, tau, tol)) ++order;
    }
    return order;
}

// --- RMSD ---

namespace detail {

inline std::vector<CanonicalAtom> shifted_canonical(const std::vector<CanonicalAtom>& atoms,
                                                    const Vec3& shift) {
    std::vector<CanonicalAtom> out = atoms;
    for (auto& a : out) a.frac = wrap_frac(a.frac + shift);
    std::sort(out.begin(), out.end(), [](const CanonicalAtom& a, const CanonicalAtom& b) {
        if (a.z != b.z) return a.z < b.z;
        return a.frac < b.frac;
    });
    return out;
}

inline double rmsd_for_shift(const std::vector<CanonicalAtom>& a, const std::vector<CanonicalAtom>& b,
                             const Mat3& lattice) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const Vec3 d = wrap_half(a[i].frac - b[i].frac);
        const Vec3 cart = row_times_mat(d, lattice);
        sum += dot(cart, cart);
    }
    return std::sqrt(sum / static_cast<double>(a.size()));
}

}  // namespace detail

// RMSD in Cartesian Angstrom between same-composition structures: canonical
// atom ordering, best rigid translation over candidate shifts (first-atom
// matching in both directions plus the null shift), per-pair minimum-image
// displacement mapped through the average of the two lattices.
inline double rmsd(const CrystalStructure& s1, const CrystalStructure& s2) {
    if (s1.size() != s2.size() || !(s1.composition() == s2.composition()))
        throw IncomparableError("structures differ in composition or atom count");

    Mat3 avg;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            avg[i][j] = 0.5 * (s1.lattice().rows()[i][j] + s2.lattice().rows()[i][j]);

    const auto a1 = detail::canonical_atoms(s1);
    const auto a2 = detail::canonical_atoms(s2);

    // shifts to apply to s1; each is also evaluated mirrored on s2, which
    // makes the result exactly symmetric in the arguments
    std::vector<Vec3> shifts{{0.0, 0.0, 0.0}};
    for (const auto& a : a2)
        if (a.z == a1[0].z) shifts.push_back(a.frac - a1[0].frac);
    for (const auto& a : a1)
        if (a.z == a2[0].z) shifts.push_back(a2[0].frac - a.frac);

    double best = std::numeric_limits<double>::infinity();
    for (const auto& shift : shifts) {
        best = std::min(best, detail::rmsd_for_shift(detail::shifted_canonical(a1, shift), a2, avg));
        const Vec3 neg{-shift[0], -shift[1], -shift[2]};
        best = std::min(best, detail::rmsd_for_shift(detail::shifted_canonical(a2, neg), a1, avg));
    }
    return best;
}

// Match labels for generated samples against a ground truth: strict RMSD < d.
inline std::vector<bool> label_matches(const std::vector<CrystalStructure>& samples,
                                       const CrystalStructure& ground_truth, double d) {
    std::vector<bool> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(rmsd(s, ground_truth) < d);
    return out;
}

// --- dedup ---

// Greedy duplicate filter with persistent memory: a structure is admitted
// iff its digest is unseen and it sits farther than the RMSD threshold from
// every admitted structure of identical cell composition.
class Deduper {
  public:
    explicit Deduper(double rmsd_threshold, double hash_tol = 1e-3)
        : threshold_(rmsd_threshold), hash_tol_(hash_tol) {
        if (threshold_ <= 0.0) throw UsageError("dedup threshold must be positive");
    }

    bool admit(const CrystalStructure& s) {
        const std::string digest = structure_hash(s, hash_tol_);
        if (seen_.count(digest)) return false;
        const std::string comp_key = s.composition().key();
        auto it = kept_.find(comp_key);
        if (it != kept_.end())
            for (const auto& kept : it->second)
                if (rmsd(s, kept) <= threshold_) return false;
        seen_.insert(digest);
        kept_[comp_key].push_back(s);
        return true;
    }

    std::size_t kept_count() const { return seen_.size(); }

  private:
    double threshold_;
    double hash_tol_;
    std::set<std::string> seen_;
    std::map<std::string, std::vector<CrystalStructure>> kept_;
};

inline std::vector<CrystalStructure> dedup(const std::vector<CrystalStructure>& structures,
                                           double rmsd_threshold) {
    Deduper dd(rmsd_threshold);
    std::vector<CrystalStructure> out;
    for (const auto& s : structures)
        if (dd.admit(s)) out.push_back(s);
    return out;
}

// --- screening pipeline ---

struct ScreenOptions {
    int max_components = 10;
    double symmetry_tol = 1e-3;
    double rmsd_threshold = 0.3;
    OxidationTable oxidation = OxidationTable::defaults();
};

struct ScreenReport {
    long input_count = 0;
    long passed_components = 0;
    long passed_neutrality = 0;
    long passed_symmetry = 0;
    long passed_similarity = 0;
    std::vector<std::size_t> survivor_indices;
    double valid_rate = 0.0;
};

inline nlohmann::json screen_report_to_json(const ScreenReport& r) {
    return nlohmann::json{{"schema_version", 1},
                          {"input_count", r.input_count},
                          {"passed", {{"components", r.passed_components},
                                      {"neutrality", r.passed_neutrality},
                                      {"symmetry", r.passed_symmetry},
                                      {"similarity", r.passed_similarity}}},
                          {"survivor_indices", r.survivor_indices},
                          {"valid_rate", r.valid_rate}};
}

// Runs the four filters in sequence. The deduper is caller-owned so its
// memory can persist across generation batches.
inline ScreenReport run_screen(const std::vector<CrystalStructure>& structures,
                               const ScreenOptions& options, Deduper& deduper) {
    ScreenReport r;
    r.input_count = static_cast<long>(structures.size());
    for (std::size_t i = 0; i < structures.size(); ++i) {
        const auto& s = structures[i];
        if (!check_components(s, options.max_components)) continue;
        r.passed_components += 1;
        bool neutral = false;
        try {
            neutral = check_neutrality(s.composition(), options.oxidation);
        } catch (const UnsupportedElementError&) {
            neutral = false;
        }
        if (!neutral) continue;
        r.passed_neutrality += 1;
        if (symmetry_order(s, options.symmetry_tol) <= 1) continue;
        r.passed_symmetry += 1;
        if (!deduper.admit(s)) continue;
        r.passed_similarity += 1;
        r.survivor_indices.push_back(i);
    }
    r.valid_rate = r.input_count ? static_cast<double>(r.survivor_indices.size()) /
                                       static_cast<double>(r.input_count)
                                 : 0.0;
    return r;
}

inline ScreenReport run_screen(const std::vector<CrystalStructure>& structures,
                               const ScreenOptions& options) {
    Deduper dd(options.rmsd_threshold);
    return run_screen(structures, options, dd);
}

// --- match discriminator ---

// Pooled scalar features over the surrogate featurization: mean k-hot node
// vector, mean edge RBF, distance summary, size and packing terms.
inline std::vector<double> pooled_features(const CrystalStructure& s, int k, int n_basis, double r_max) {
    const MaterialGraph g = featurize(s, k, n_basis, r_max);
    std::vector<double> out(static_cast<std::size_t>(kNodeFeatureDim + n_basis + 4), 0.0);
    for (const auto& node : g.node_features)
        for (int b = 0; b < kNodeFeatureDim; ++b) out[static_cast<std::size_t>(b)] += node[static_cast<std::size_t>(b)];
    for (int b = 0; b < kNodeFeatureDim; ++b) out[static_cast<std::size_t>(b)] /= g.n_nodes;
    double dist_sum = 0.0, dist_min = std::numeric_limits<double>::infinity();
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
        for (int b = 0; b < n_basis; ++b)
            out[static_cast<std::size_t>(kNodeFeatureDim + b)] += g.edge_features[e][static_cast<std::size_t>(b)];
        dist_sum += g.edges[e].distance;
        dist_min = std::min(dist_min, g.edges[e].distance);
    }
    for (int b = 0; b < n_basis; ++b)
        out[static_cast<std::size_t>(kNodeFeatureDim + b)] /= static_cast<double>(g.edges.size());
    const std::size_t base = static_cast<std::size_t>(kNodeFeatureDim + n_basis);
    out[base + 0] = dist_sum / static_cast<double>(g.edges.size());
    out[base + 1] = dist_min;
    out[base + 2] = static_cast<double>(s.size()) / static_cast<double>(kDefaultMaxAtoms);
    out[base + 3] = s.lattice().volume() / static_cast<double>(s.size()) / 100.0;
    return out;
}

struct MatchDiscriminator {
    int k = 6;
    int n_basis = 16;
    double r_max = 6.0;
    double rmsd_threshold_d = 0.5;  // labeling threshold, Angstrom
    std::vector<double> weights;
    double bias = 0.0;
    double platt_a = 1.0;  // calibration on held-out scores
    double platt_b = 0.0;
    double holdout_accuracy = 0.0;
    std::vector<double> calibration_bins;  // empirical positive rate per decile
};

struct MdTrainConfig {
    int epochs = 300;
    double learning_rate = 0.1;
    std::uint64_t seed = 0;
    double holdout_fraction = 0.25;
    int k = 6;
    int n_basis = 16;
    double r_max = 6.0;
    double rmsd_threshold_d = 0.5;
};

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace detail

// Logistic regression on pooled graph features with Platt-style calibration
// fit on a held-out split.
inline MatchDiscriminator train_md(const std::vector<std::pair<CrystalStructure, bool>>& labeled,
                                   const MdTrainConfig& config) {
    bool has_pos = false, has_neg = false;
    for (const auto& [s, y] : labeled) (y ? has_pos : has_neg) = true;
    if (!has_pos || !has_neg) throw DegenerateLabelsError("match discriminator needs both classes");

    MatchDiscriminator md;
    md.k = config.k;
    md.n_basis = config.n_basis;
    md.r_max = config.r_max;
    md.rmsd_threshold_d = config.rmsd_threshold_d;

    std::vector<std::vector<double>> feats;
    feats.reserve(labeled.size());
    for (const auto& [s, y] : labeled) feats.push_back(pooled_features(s, md.k, md.n_basis, md.r_max));
    const std::size_t dim = feats[0].size();

    // deterministic split: shuffle then carve off the holdout tail,
    // re-rolling until both splits carry both classes (bounded attempts)
    std::vector<std::size_t> order(labeled.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::size_t holdout_start = order.size();
    for (int attempt = 0; attempt < 64; ++attempt) {
        Rng rng = Rng::derive(config.seed, static_cast<std::uint64_t>(attempt));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        holdout_start = order.size() -
                        std::min(order.size() - 1,
                                 static_cast<std::size_t>(config.holdout_fraction * order.size()));
        bool tp = false, tn = false, hp = false, hn = false;
        for (std::size_t i = 0; i < order.size(); ++i) {
            const bool y = labeled[order[i]].second;
            if (i < holdout_start) (y ? tp : tn) = true;
            else (y ? hp : hn) = true;
        }
        if (tp && tn && (holdout_start == order.size() || (hp || hn))) break;
    }

    md.weights.assign(dim, 0.0);
    md.bias = 0.0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::vector<double> gw(dim, 0.0);
        double gb = 0.0;
        for (std::size_t i = 0; i < holdout_start; ++i) {
            const std::size_t idx = order[i];
            double score = md.bias;
            for (std::size_t d = 0; d < dim; ++d) score += md.weights[d] * feats[idx][d];
            const double p = detail::sigmoid(score);
            const double g = p - (labeled[idx].second ? 1.0 : 0.0);
            for (std::size_t d = 0; d < dim; ++d) gw[d] += g * feats[idx][d];
            gb += g;
        }
        const double scale = config.learning_rate / static_cast<double>(holdout_start);
        for (std::size_t d = 0; d < dim; ++d) md.weights[d] -= scale * gw[d];
        md.bias -= scale * gb;
    }

    // Platt fit on the holdout scores (falls back to identity scaling when
    // the holdout is single-class)
    std::vector<double> scores;
    std::vector<bool> ys;
    for (std::size_t i = holdout_start; i < order.size(); ++i) {
        const std::size_t idx = order[i];
        double score = md.bias;
        for (std::size_t d = 0; d < dim; ++d) score += md.weights[d] * feats[idx][d];
        scores.push_back(score);
        ys.push_back(labeled[idx].second);
    }
    bool hp = false, hn = false;
    for (bool y : ys) (y ? hp : hn) = true;
    if (hp && hn) {
        double a = 1.0, b = 0.0;
        for (int it = 0; it < 500; ++it) {
            double ga = 0.0, gb2 = 0.0;
            for (std::size_t i = 0; i < scores.size(); ++i) {
                const double p = detail::sigmoid(a * scores[i] + b);
                const double g = p - (ys[i] ? 1.0 : 0.0);
                ga += g * scores[i];
                gb2 += g;
            }
            a -= 0.05 * ga / static_cast<double>(scores.size());
            b -= 0.05 * gb2 / static_cast<double>(scores.size());
        }
        md.platt_a = a;
        md.platt_b = b;
    }

    long correct = 0;
    std::array<std::pair<long, long>, 10> bins{};  // (positives, total) per decile
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const double p = detail::sigmoid(md.platt_a * scores[i] + md.platt_b);
        if ((p > 0.5) == ys[i]) ++correct;
        const int b = std::min(9, static_cast<int>(p * 10.0));
        bins[static_cast<std::size_t>(b)].second += 1;
        if (ys[i]) bins[static_cast<std::size_t>(b)].first += 1;
    }
    md.holdout_accuracy = scores.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(scores.size());
    md.calibration_bins.assign(10, 0.0);
    for (int b = 0; b < 10; ++b)
        if (bins[static_cast<std::size_t>(b)].second > 0)
            md.calibration_bins[static_cast<std::size_t>(b)] =
                static_cast<double>(bins[static_cast<std::size_t>(b)].first) /
                static_cast<double>(bins[static_cast<std::size_t>(b)].second);
    return md;
}

inline double md_probability(const MatchDiscriminator& md, const CrystalStructure& s) {
    const auto feats = pooled_features(s, md.k, md.n_basis, md.r_max);
    double score = md.bias;
    for (std::size_t d = 0; d < feats.size(); ++d) score += md.weights[d] * feats[d];
    return detail::sigmoid(md.platt_a * score + md.platt_b);
}

inline nlohmann::json md_to_json(const MatchDiscriminator& md) {
    return nlohmann::json{{"schema_version", 1},
                          {"kind", "match_discriminator"},
                          {"arch", {{"k", md.k}, {"n_basis", md.n_basis}, {"r_max", md.r_max}}},
                          {"rmsd_threshold_d", md.rmsd_threshold_d},
                          {"weights", md.weights},
                          {"bias", md.bias},
                          {"platt_a", md.platt_a},
                          {"platt_b", md.platt_b},
                          {"holdout_accuracy", md.holdout_accuracy},
                          {"calibration_bins", md.calibration_bins}};
}

inline MatchDiscriminator md_from_json(const nlohmann::json& j) {
    if (j.value("kind", "") != std::string("match_discriminator"))
        throw UsageError("not a match-discriminator checkpoint");
    MatchDiscriminator md;
    md.k = j.at("arch").at("k");
    md.n_basis = j.at("arch").at("n_basis");
    md.r_max = j.at("arch").at("r_max");
    md.rmsd_threshold_d = j.at("rmsd_threshold_d");
    md.weights = j.at("weights").get<std::vector<double>>();
    md.bias = j.at("bias");
    md.platt_a = j.at("platt_a");
    md.platt_b = j.at("platt_b");
    md.holdout_accuracy = j.at("holdout_accuracy");
    md.calibration_bins = j.at("calibration_bins").get<std::vector<double>>();
    return md;
}

}  // namespace xtalflow
