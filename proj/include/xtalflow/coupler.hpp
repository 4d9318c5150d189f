#pragma once

// The pattern engine: surrogate, directive and coordinate workflows with
// confidence-gated routing, a bounded worker pool for oracle jobs, cost
// accounting, and the buffered fine-tuning feedback loop.
//
// Pattern-level accounting charges one latency unit-block per oracle
// workflow event (optimize + property as a single "calculation") and one
// unit per AI call; the per-call cost model of the oracle module remains
// available through schedule() for finer-grained bookkeeping.

#include <atomic>
#include <functional>
#include <memory>
#include <optional>
#include <thread>
#include <vector>

#include <json.hpp>

#include "depot.hpp"
#include "diffusion.hpp"
#include "oracle.hpp"
#include "screen.hpp"
#include "surrogate.hpp"

namespace xtalflow {

// --- routing ---

enum class GateKind { Prediction, Generation };
enum class Route { AcceptAI, FallbackOracle };

struct RouteDecision {
    GateKind kind;
    double confidence;
    double threshold;
    Route route;
};

// Prediction gate accepts iff variance < tau; generation gate accepts iff
// p_match > tau. Equality routes to the oracle.
inline RouteDecision decide(GateKind kind, double confidence_value, double tau) {
    const bool accept = kind == GateKind::Prediction ? confidence_value < tau : confidence_value > tau;
    return {kind, confidence_value, tau, accept ? Route::AcceptAI : Route::FallbackOracle};
}

// Picks the largest prediction-gate threshold such that the mean absolute
// error of the accepted predictions stays within error_bound, from observed
// (variance, |error|) pairs on a validation set.
struct TauCalibration {
    double tau = 0.0;
    long accepted = 0;
    double accepted_mean_error = 0.0;
};

inline TauCalibration calibrate_tau_pred(const std::vector<std::pair<double, double>>& variance_error,
                                         double error_bound) {
    if (variance_error.empty()) throw UsageError("calibration needs observations");
    std::vector<double> taus;
    for (const auto& [v, e] : variance_error) taus.push_back(v);
    std::sort(taus.begin(), taus.end());
    taus.erase(std::unique(taus.begin(), taus.end()), taus.end());
    taus.push_back(std::numeric_limits<double>::infinity());

    TauCalibration best{taus.front(), 0, 0.0};  // accepting nothing is always admissible
    for (double tau : taus) {
        double err = 0.0;
        long n = 0;
        for (const auto& [v, e] : variance_error)
            if (v < tau) {
                err += e;
                ++n;
            }
        const double mean = n ? err / static_cast<double>(n) : 0.0;
        if (n == 0 || mean <= error_bound) best = {tau, n, mean};
    }
    return best;
}

// --- bounded worker pool ---

struct RelaxParams {
    int max_steps = 10;
    double step_size = 0.02;
    double tol = 1e-4;
};

struct OracleJob {
    OracleCallKind kind;
    CrystalStructure structure;
};

struct JobResult {
    int task_id = 0;
    std::optional<double> value;        // energy or gap
    std::optional<RelaxResult> relaxed; // for relax jobs
    std::string error;                  // nonempty when the job failed
    double cost_units = 0.0;
};

namespace detail {

// Runs fn(0..n-1) on a bounded pool; slot i of the result vector belongs to
// task i, so output order is independent of interleaving.
inline void parallel_for(long n, int workers, const std::function<void(long)>& fn) {
    if (n <= 0) return;
    const int nw = std::max(1, static_cast<int>(std::min<long>(workers, n)));
    if (nw == 1) {
        for (long i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<long> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(nw));
    for (int w = 0; w < nw; ++w)
        pool.emplace_back([&] {
            for (long i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
        });
    for (auto& t : pool) t.join();
}

}  // namespace detail

// Executes oracle jobs on a bounded pool. Results come back in task-id
// order; per-job failures are captured, never aborting the batch. Costs are
// summed sequentially after the join so totals are reproducible.
inline std::vector<JobResult> schedule(const std::vector<OracleJob>& jobs, const OracleConfig& cfg,
                                       int workers, const RelaxParams& relax_params = {}) {
    if (workers < 1) throw UsageError("schedule needs workers >= 1");
    std::vector<JobResult> results(jobs.size());
    detail::parallel_for(static_cast<long>(jobs.size()), workers, [&](long i) {
        JobResult& r = results[static_cast<std::size_t>(i)];
        r.task_id = static_cast<int>(i);
        const OracleJob& job = jobs[static_cast<std::size_t>(i)];
        try {
            switch (job.kind.type) {
                case OracleCallKind::Type::Energy:
                    r.value = formation_energy(job.structure, cfg).value;
                    r.cost_units = cost_of(OracleCallKind::energy(), cfg);
                    break;
                case OracleCallKind::Type::Gap:
                    r.value = band_gap(job.structure, cfg).value;
                    r.cost_units = cost_of(OracleCallKind::gap(), cfg);
                    break;
                case OracleCallKind::Type::Relax: {
                    RelaxResult rr = relax(job.structure, cfg, relax_params.max_steps,
                                           relax_params.step_size, relax_params.tol);
                    r.cost_units = cost_of(OracleCallKind::relax(rr.steps), cfg);
                    r.value = rr.energy_trace.back();
                    r.relaxed = std::move(rr);
                    break;
                }
            }
        } catch (const std::exception& e) {
            r.error = e.what();
        }
    });
    return results;
}

// --- toy structure source for dataset building ---

struct ToySamplerConfig {
    // Li O F Na Mg Al Si S Cl Ca Ti Fe Cu Zn
    std::vector<int> element_pool = {3, 8, 9, 11, 12, 13, 14, 16, 17, 20, 22, 26, 29, 30};
    int n_min = 2;
    int n_max = 6;
    double a_min = 3.8;
    double a_max = 6.5;
    double hardcore_scale = 0.9;  // pair distance floor as a fraction of r0
};

// Random orthorhombic-ish cell with species from the pool and atoms placed
// no closer than hardcore_scale * (sum of covalent radii).
inline CrystalStructure make_random_structure(Rng& rng, const ToySamplerConfig& cfg) {
    for (int attempt = 0; attempt < 400; ++attempt) {
        Mat3 rows{};
        for (int i = 0; i < 3; ++i) rows[i][i] = rng.uniform(cfg.a_min, cfg.a_max);
        const Lattice lat(rows);
        const int n = rng.uniform_int(cfg.n_min, cfg.n_max);
        std::vector<ElementId> species;
        species.reserve(static_cast<std::size_t>(n));
        for (int a = 0; a < n; ++a)
            species.push_back(ElementId(cfg.element_pool[rng.below(cfg.element_pool.size())]));
        std::vector<Vec3> coords;
        bool ok = true;
        for (int a = 0; a < n && ok; ++a) {
            bool placed = false;
            for (int tries = 0; tries < 60 && !placed; ++tries) {
                const Vec3 cand{rng.uniform(), rng.uniform(), rng.uniform()};
                placed = true;
                for (int b = 0; b < a && placed; ++b) {
                    double dmin = std::numeric_limits<double>::infinity();
                    for (int ix = -1; ix <= 1; ++ix)
                        for (int iy = -1; iy <= 1; ++iy)
                            for (int iz = -1; iz <= 1; ++iz) {
                                const Vec3 df{cand[0] - coords[static_cast<std::size_t>(b)][0] + ix,
                                              cand[1] - coords[static_cast<std::size_t>(b)][1] + iy,
                                              cand[2] - coords[static_cast<std::size_t>(b)][2] + iz};
                                dmin = std::min(dmin, norm(row_times_mat(df, rows)));
                            }
                    const double r0 = species[static_cast<std::size_t>(a)].data().covalent_radius +
                                      species[static_cast<std::size_t>(b)].data().covalent_radius;
                    if (dmin < std::max(1.2, cfg.hardcore_scale * r0)) placed = false;
                }
                if (placed) coords.push_back(cand);
            }
            if (!placed) ok = false;
        }
        if (ok) return CrystalStructure(lat, std::move(species), std::move(coords));
    }
    throw GenerationError("could not place atoms with the configured separation");
}

// Charge-matched binary cells on the CsCl motif: symmetric, neutral, and
// each entry a distinct composition, so a pool of them survives every screen
// filter until the dedup memory saturates. Up to 48 entries.
inline std::vector<CrystalStructure> make_symmetric_binary_pool(std::size_t count) {
    const std::vector<int> plus_one = {3, 11, 19, 37, 55, 47};   // Li Na K Rb Cs Ag
    const std::vector<int> minus_one = {9, 17, 35, 53};          // F Cl Br I
    const std::vector<int> plus_two = {12, 20, 38, 56, 30, 48};  // Mg Ca Sr Ba Zn Cd
    const std::vector<int> minus_two = {8, 16, 34, 52};          // O S Se Te
    std::vector<std::pair<int, int>> pairs;
    for (int c : plus_one)
        for (int a : minus_one) pairs.emplace_back(c, a);
    for (int c : plus_two)
        for (int a : minus_two) pairs.emplace_back(c, a);
    if (count == 0 || count > pairs.size())
        throw UsageError("symmetric binary pool supports 1.." + std::to_string(pairs.size()) +
                         " entries");
    std::vector<CrystalStructure> pool;
    pool.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const double a = 4.0 + 0.01 * static_cast<double>(i);
        pool.emplace_back(Lattice::cubic(a),
                          std::vector<ElementId>{ElementId(pairs[i].first), ElementId(pairs[i].second)},
                          std::vector<Vec3>{{0, 0, 0}, {0.5, 0.5, 0.5}});
    }
    return pool;
}

// --- run report ---

struct PatternRunReport {
    std::string pattern;
    std::uint64_t seed = 0;
    std::string config_digest;
    long iterations = 0;
    long ai_calls = 0;
    long oracle_calls = 0;
    long oracle_failures = 0;
    long buffered = 0;
    long fine_tunes = 0;
    long depot_hits = 0;
    long unique_survivors = 0;
    double ai_cost_units = 0.0;
    double oracle_cost_units = 0.0;
    double total_cost_units = 0.0;
    double cost_if_all_oracle = 0.0;
    double cost_saved_units = 0.0;  // ai-accepted calls x oracle latency
    double speedup = 0.0;
    std::vector<double> valid_rate_series;
    std::vector<std::string> output_ids;
    nlohmann::json details = nlohmann::json::object();
    nlohmann::json trace = nlohmann::json::array();
};

inline nlohmann::json report_to_json(const PatternRunReport& r) {
    return nlohmann::json{{"schema_version", 1},
                          {"pattern", r.pattern},
                          {"seed", r.seed},
                          {"config_digest", r.config_digest},
                          {"iterations", r.iterations},
                          {"ai_calls", r.ai_calls},
                          {"oracle_calls", r.oracle_calls},
                          {"oracle_failures", r.oracle_failures},
                          {"buffered", r.buffered},
                          {"fine_tunes", r.fine_tunes},
                          {"depot_hits", r.depot_hits},
                          {"unique_survivors", r.unique_survivors},
                          {"ai_cost_units", r.ai_cost_units},
                          {"oracle_cost_units", r.oracle_cost_units},
                          {"total_cost_units", r.total_cost_units},
                          {"cost_if_all_oracle", r.cost_if_all_oracle},
                          {"cost_saved_units", r.cost_saved_units},
                          {"speedup", r.speedup},
                          {"valid_rate_series", r.valid_rate_series},
                          {"output_ids", r.output_ids},
                          {"details", r.details},
                          {"trace", r.trace}};
}

// --- surrogate pattern ---

struct SurrogatePatternConfig {
    int train_size = 80;
    int eval_size = 40;
    std::uint64_t seed = 0;
    PropertyKind property = PropertyKind::FormationEnergy;
    OracleConfig oracle;
    TrainConfig trainer;
    ToySamplerConfig toy;
    int workers = 1;
};

// Samples a toy dataset, labels it with the oracle, trains the surrogate and
// evaluates the held-out discrepancy. The prediction workload defines the
// speedup: eval_size oracle calls replaced by eval_size unit-cost AI calls.
inline PatternRunReport run_surrogate_pattern(const SurrogatePatternConfig& config) {
    if (config.train_size < 2 || config.eval_size < 1)
        throw UsageError("surrogate pattern needs train_size >= 2 and eval_size >= 1");
    PatternRunReport report;
    report.pattern = "surrogate";
    report.seed = config.seed;

    Rng rng = Rng::derive(config.seed, 0x5a3ba7e);
    std::vector<CrystalStructure> structures;
    structures.reserve(static_cast<std::size_t>(config.train_size + config.eval_size));
    for (int i = 0; i < config.train_size + config.eval_size; ++i)
        structures.push_back(make_random_structure(rng, config.toy));

    // oracle labels for everything (training set + evaluation ground truth)
    std::vector<OracleJob> jobs;
    jobs.reserve(structures.size());
    const auto kind = config.property == PropertyKind::FormationEnergy ? OracleCallKind::energy()
                                                                       : OracleCallKind::gap();
    for (const auto& s : structures) jobs.push_back({kind, s});
    const auto labeled = schedule(jobs, config.oracle, config.workers);
    std::vector<double> labels(structures.size());
    for (const auto& r : labeled) {
        if (!r.error.empty()) throw Error("oracle labeling failed: " + r.error);
        labels[static_cast<std::size_t>(r.task_id)] = *r.value;
    }
    report.oracle_calls = static_cast<long>(structures.size());
    report.oracle_cost_units = static_cast<double>(structures.size()) * config.oracle.latency_units_per_call;

    std::vector<LabeledStructure> train_set, eval_set;
    for (int i = 0; i < config.train_size; ++i)
        train_set.emplace_back(structures[static_cast<std::size_t>(i)], labels[static_cast<std::size_t>(i)]);
    for (int i = config.train_size; i < config.train_size + config.eval_size; ++i)
        eval_set.emplace_back(structures[static_cast<std::size_t>(i)], labels[static_cast<std::size_t>(i)]);

    TrainConfig tc = config.trainer;
    tc.seed = config.seed;
    const SurrogateModel model = train(train_set, tc);

    auto mae_on = [&](const std::vector<LabeledStructure>& set) {
        double abs_sum = 0.0;
        for (const auto& [s, y] : set) abs_sum += std::abs(predict_structure(model, s) - y);
        return abs_sum / static_cast<double>(set.size());
    };
    const double mae_holdout = mae_on(eval_set);
    const double mae_train = mae_on(train_set);

    report.ai_calls = config.eval_size;
    report.ai_cost_units = static_cast<double>(config.eval_size);
    report.iterations = 1;
    report.total_cost_units = report.oracle_cost_units + report.ai_cost_units;
    report.cost_if_all_oracle = static_cast<double>(config.eval_size) * config.oracle.latency_units_per_call;
    report.cost_saved_units = static_cast<double>(report.ai_calls) * config.oracle.latency_units_per_call;
    report.speedup = report.cost_if_all_oracle / report.ai_cost_units;
    report.details = {{"train_size", config.train_size},
                      {"eval_size", config.eval_size},
                      {"mae_holdout", mae_holdout},
                      {"mae_train", mae_train},
                      {"final_train_mae", model.final_train_mae},
                      {"property", to_string(config.property)}};
    return report;
}

// --- directive pattern ---

// Proposal source for the directive loop; the diffusion generator in
// production, a corpus memorizer in narrow-sampler experiments.
class StructureSampler {
  public:
    virtual ~StructureSampler() = default;
    virtual std::vector<CrystalStructure> sample_batch(long count, long sequence_offset,
                                                       GenerationStats& stats) = 0;
};

class DiffusionSampler final : public StructureSampler {
  public:
    DiffusionSampler(DenoiserModel model, std::uint64_t seed, SamplerPolicy policy, int switch_after)
        : model_(std::move(model)), seed_(seed), policy_(policy), switch_after_(switch_after) {}

    std::vector<CrystalStructure> sample_batch(long count, long sequence_offset,
                                               GenerationStats& stats) override {
        SampleOptions opt;
        opt.policy = policy_;
        opt.hybrid_switch_after = switch_after_;
        opt.sequence_offset = sequence_offset;
        SampleBatch batch = sample_ab_initio(model_, count, seed_, opt);
        stats.requested += batch.stats.requested;
        stats.produced += batch.stats.produced;
        stats.lattice_failures += batch.stats.lattice_failures;
        stats.model_evals += batch.stats.model_evals;
        stats.cost_units += batch.stats.cost_units;
        return std::move(batch.structures);
    }

  private:
    DenoiserModel model_;
    std::uint64_t seed_;
    SamplerPolicy policy_;
    int switch_after_;
};

// Replays a fixed pool of structures (with replacement); a deliberately
// narrow generator whose repeats exercise the dedup memory. Under the
// Hybrid policy the first switch_after samples come from the pool (the
// learned prior), after which draws explore: pool entries with a large
// uniform jitter on the coordinates.
class CorpusMemorizingSampler final : public StructureSampler {
  public:
    CorpusMemorizingSampler(std::vector<CrystalStructure> pool, std::uint64_t seed,
                            SamplerPolicy policy = SamplerPolicy::Empirical, int switch_after = 0)
        : pool_(std::move(pool)), seed_(seed), policy_(policy), switch_after_(switch_after) {
        if (pool_.empty()) throw UsageError("memorizing sampler needs a nonempty pool");
    }

    std::vector<CrystalStructure> sample_batch(long count, long sequence_offset,
                                               GenerationStats& stats) override {
        std::vector<CrystalStructure> out;
        out.reserve(static_cast<std::size_t>(count));
        for (long i = 0; i < count; ++i) {
            const long global_index = sequence_offset + i;
            Rng rng = Rng::derive(seed_, static_cast<std::uint64_t>(global_index));
            const CrystalStructure& base = pool_[rng.below(pool_.size())];
            const bool explore =
                policy_ == SamplerPolicy::UniformRandom ||
                (policy_ == SamplerPolicy::Hybrid && global_index >= switch_after_);
            if (!explore) {
                out.push_back(base);
            } else {
                std::vector<Vec3> coords = base.frac_coords();
                for (auto& f : coords)
                    for (int k = 0; k < 3; ++k) f[k] += rng.uniform(-0.2, 0.2);
                out.emplace_back(base.lattice(), base.species(), std::move(coords));
            }
        }
        stats.requested += count;
        stats.produced += count;
        stats.cost_units += static_cast<double>(count);
        return out;
    }

  private:
    std::vector<CrystalStructure> pool_;
    std::uint64_t seed_;
    SamplerPolicy policy_;
    int switch_after_;
};

struct DirectivePatternConfig {
    PropertyKind target_kind = PropertyKind::FormationEnergy;
    double y_target = -1.0;
    int batch = 20;
    int iterations = 5;
    std::uint64_t seed = 0;
    OracleConfig oracle;
    ScreenOptions screen;
    RelaxParams relax;
    bool relax_survivors = true;
    int workers = 1;
};

// Generate -> screen -> relax + evaluate -> rank -> persist loop. The dedup
// memory persists across iterations, which is what drives the valid-rate
// series down when the sampler repeats itself.
inline PatternRunReport run_directive_pattern(const DirectivePatternConfig& config,
                                              StructureSampler& sampler, Depot& depot) {
    if (config.iterations < 1 || config.batch < 1)
        throw UsageError("directive pattern needs iterations >= 1 and batch >= 1");
    PatternRunReport report;
    report.pattern = "directive";
    report.seed = config.seed;

    Deduper deduper(config.screen.rmsd_threshold);
    GenerationStats gen_stats;
    long sequence_offset = 0;
    double best_loss = std::numeric_limits<double>::infinity();
    double best_value = 0.0;
    std::string best_id;
    const auto eval_kind = config.target_kind == PropertyKind::FormationEnergy
                               ? OracleCallKind::energy()
                               : OracleCallKind::gap();

    for (int iter = 0; iter < config.iterations; ++iter) {
        const auto batch = sampler.sample_batch(config.batch, sequence_offset, gen_stats);
        sequence_offset += config.batch;
        report.ai_calls += static_cast<long>(batch.size());
        report.ai_cost_units += static_cast<double>(batch.size());

        const ScreenReport screened = run_screen(batch, config.screen, deduper);
        report.valid_rate_series.push_back(screened.valid_rate);

        // oracle workflow per survivor: optional relax, then the property
        std::vector<CrystalStructure> survivors;
        for (std::size_t idx : screened.survivor_indices) survivors.push_back(batch[idx]);
        std::vector<OracleJob> jobs;
        for (const auto& s : survivors)
            jobs.push_back({config.relax_survivors ? OracleCallKind::relax(config.relax.max_steps)
                                                   : eval_kind,
                            s});
        const auto results = schedule(jobs, config.oracle, config.workers, config.relax);

        nlohmann::json iter_trace{{"iteration", iter},
                                  {"batch", config.batch},
                                  {"passed_components", screened.passed_components},
                                  {"passed_neutrality", screened.passed_neutrality},
                                  {"passed_symmetry", screened.passed_symmetry},
                                  {"passed_similarity", screened.passed_similarity},
                                  {"valid_rate", screened.valid_rate}};
        nlohmann::json evaluated = nlohmann::json::array();
        for (std::size_t i = 0; i < survivors.size(); ++i) {
            const auto& res = results[i];
            if (!res.error.empty()) {
                evaluated.push_back({{"error", res.error}});
                continue;
            }
            CrystalStructure final_structure =
                res.relaxed ? res.relaxed->structure : survivors[i];
            double value;
            if (config.relax_survivors && config.target_kind == PropertyKind::BandGap)
                value = band_gap(final_structure, config.oracle).value;
            else
                value = *res.value;
            report.oracle_calls += 1;
            report.oracle_cost_units += config.oracle.latency_units_per_call;

            DepotRecord rec{"", final_structure,
                            {PropertyValue(config.target_kind, value, PropertySource::Oracle)},
                            Provenance::Generated,
                            ""};
            const auto ids = depot.ingest({std::move(rec)});
            const double loss = std::abs(value - config.y_target);
            if (loss < best_loss) {
                best_loss = loss;
                best_value = value;
                best_id = ids[0];
            }
            report.output_ids.push_back(ids[0]);
            evaluated.push_back({{"id", ids[0]}, {"value", value}, {"loss", loss}});
        }
        iter_trace["evaluated"] = evaluated;
        report.trace.push_back(iter_trace);
    }

    report.iterations = config.iterations;
    report.unique_survivors = static_cast<long>(report.output_ids.size());
    report.total_cost_units = report.ai_cost_units + report.oracle_cost_units;
    report.cost_if_all_oracle =
        static_cast<double>(report.ai_calls) * config.oracle.latency_units_per_call;
    report.cost_saved_units = report.cost_if_all_oracle -
                              static_cast<double>(report.oracle_calls) * config.oracle.latency_units_per_call;
    report.speedup = report.total_cost_units > 0.0 ? report.cost_if_all_oracle / report.total_cost_units : 0.0;
    report.details = {{"target", to_string(config.target_kind)},
                      {"y_target", config.y_target},
                      {"best_id", best_id},
                      {"best_value", best_value},
                      {"best_loss", best_loss},
                      {"generation", {{"requested", gen_stats.requested},
                                      {"produced", gen_stats.produced},
                                      {"lattice_failures", gen_stats.lattice_failures},
                                      {"model_evals", gen_stats.model_evals},
                                      {"cost_units", gen_stats.cost_units}}}};
    return report;
}

// --- coordinate pattern ---

struct CoordinateQuery {
    Composition composition;
    PropertyKind property = PropertyKind::FormationEnergy;
    double bound = 1.0;          // keep results with value < bound
    int max_iterations = 50;
    double tau_pred = 0.1;       // variance gate
    double tau_gen = 0.5;        // p_match gate
    std::size_t flush_threshold = 5;

    void validate() const {
        if (composition.empty()) throw UsageError("coordinate query needs a composition");
        if (max_iterations < 1) throw UsageError("max_iterations must be >= 1");
        if (!(tau_pred > 0.0)) throw UsageError("tau_pred must be > 0");
        if (!(tau_gen > 0.0 && tau_gen < 1.0)) throw UsageError("tau_gen must be in (0,1)");
    }
};

// Everything the coordinate loop consults per iteration: candidate
// generation, both confidences, and the oracle fallback. Live models behind
// it in production; a recorded trace behind it in replay.
class CoordinateSource {
  public:
    virtual ~CoordinateSource() = default;
    virtual std::optional<CrystalStructure> generate(int iteration) = 0;
    virtual double match_probability(const CrystalStructure& candidate, int iteration) = 0;
    virtual Confidence predict(const CrystalStructure& candidate, int iteration) = 0;
    // One oracle workflow: optimize + property. Returns the final structure
    // and its property value.
    virtual std::pair<CrystalStructure, double> oracle_evaluate(const CrystalStructure& candidate,
                                                                int iteration) = 0;
    virtual void fine_tune(const std::vector<FineTuneBuffer::Entry>& entries) = 0;
};

class LiveCoordinateSource final : public CoordinateSource {
  public:
    LiveCoordinateSource(DenoiserModel denoiser, Ensemble ensemble, MatchDiscriminator md,
                         OracleConfig oracle, RelaxParams relax_params, TrainConfig finetune_config,
                         Composition composition, PropertyKind property, std::uint64_t seed)
        : denoiser_(std::move(denoiser)),
          ensemble_(std::move(ensemble)),
          md_(std::move(md)),
          oracle_(oracle),
          relax_params_(relax_params),
          finetune_config_(finetune_config),
          composition_(std::move(composition)),
          property_(property),
          seed_(seed) {}

    std::optional<CrystalStructure> generate(int iteration) override {
        SampleOptions opt;
        opt.sequence_offset = iteration;
        SampleBatch batch = sample_csp(denoiser_, composition_, 1, seed_, opt);
        if (batch.structures.empty()) return std::nullopt;
        return std::move(batch.structures.front());
    }

    // candidates the featurizer cannot handle score as minimum confidence,
    // so the gates route them to the oracle
    double match_probability(const CrystalStructure& candidate, int) override {
        try {
            return md_probability(md_, candidate);
        } catch (const EmptyNeighborhoodError&) {
            return 0.0;
        }
    }

    Confidence predict(const CrystalStructure& candidate, int) override {
        try {
            const auto& m = ensemble_.members.front();
            return confidence(ensemble_, featurize(candidate, m.k, m.n_basis, m.r_max));
        } catch (const EmptyNeighborhoodError&) {
            return {0.0, std::numeric_limits<double>::infinity()};
        }
    }

    std::pair<CrystalStructure, double> oracle_evaluate(const CrystalStructure& candidate,
                                                        int) override {
        const RelaxResult rr =
            relax(candidate, oracle_, relax_params_.max_steps, relax_params_.step_size, relax_params_.tol);
        const double value = property_ == PropertyKind::FormationEnergy
                                 ? rr.energy_trace.back()
                                 : band_gap(rr.structure, oracle_).value;
        return {rr.structure, value};
    }

    void fine_tune(const std::vector<FineTuneBuffer::Entry>& entries) override {
        std::vector<LabeledStructure> buffer;
        const auto& m = ensemble_.members.front();
        for (const auto& e : entries) {
            try {
                (void)featurize(e.structure, m.k, m.n_basis, m.r_max);
                buffer.emplace_back(e.structure, e.value.value);
            } catch (const EmptyNeighborhoodError&) {
                // oracle result on a cell the featurizer cannot represent;
                // nothing to learn from it
            }
        }
        if (buffer.empty()) return;
        for (auto& member : ensemble_.members) member = xtalflow::fine_tune(member, buffer, finetune_config_);
    }

    const Ensemble& ensemble() const { return ensemble_; }

  private:
    DenoiserModel denoiser_;
    Ensemble ensemble_;
    MatchDiscriminator md_;
    OracleConfig oracle_;
    RelaxParams relax_params_;
    TrainConfig finetune_config_;
    Composition composition_;
    PropertyKind property_;
    std::uint64_t seed_;
};

// Recorded trace: per-iteration candidate structure, confidences and oracle
// values. The gating arithmetic, dedup, buffering and final screening run
// live against the recorded inputs.
class ReplayCoordinateSource final : public CoordinateSource {
  public:
    explicit ReplayCoordinateSource(const nlohmann::json& fixture) {
        if (fixture.value("kind", "") != std::string("coordinate_trace"))
            throw UsageError("not a coordinate trace fixture");
        for (const auto& entry : fixture.at("entries")) {
            Entry e;
            if (entry.contains("structure") && !entry.at("structure").is_null())
                e.structure = structure_from_json(entry.at("structure"));
            e.p_match = entry.value("p_match", 0.0);
            e.variance = entry.value("variance", 0.0);
            e.mean = entry.value("mean", 0.0);
            e.oracle_value = entry.value("oracle_value", 0.0);
            entries_.push_back(std::move(e));
        }
    }

    std::optional<CrystalStructure> generate(int iteration) override {
        const Entry& e = at(iteration);
        return e.structure;
    }

    double match_probability(const CrystalStructure&, int iteration) override {
        return at(iteration).p_match;
    }

    Confidence predict(const CrystalStructure&, int iteration) override {
        const Entry& e = at(iteration);
        return {e.mean, e.variance};
    }

    std::pair<CrystalStructure, double> oracle_evaluate(const CrystalStructure& candidate,
                                                        int iteration) override {
        return {candidate, at(iteration).oracle_value};
    }

    void fine_tune(const std::vector<FineTuneBuffer::Entry>&) override {}

  private:
    struct Entry {
        std::optional<CrystalStructure> structure;
        double p_match = 0.0;
        double variance = 0.0;
        double mean = 0.0;
        double oracle_value = 0.0;
    };

    const Entry& at(int iteration) const {
        if (iteration < 0 || iteration >= static_cast<int>(entries_.size()))
            throw UsageError("replay trace has no entry for iteration " + std::to_string(iteration));
        return entries_[static_cast<std::size_t>(iteration)];
    }

    std::vector<Entry> entries_;
};

struct CoordinateRunResult {
    PatternRunReport report;
    std::vector<DepotRecord> depot_matches;
    std::vector<std::string> survivor_ids;
};

// Steps: depot lookup, then per iteration CSP-generate -> dedup -> MD gate ->
// ensemble gate -> oracle fallback with buffering and periodic fine-tuning;
// finally symmetry and property-bound screening of everything evaluated.
inline CoordinateRunResult run_coordinate_pattern(const CoordinateQuery& query,
                                                  CoordinateSource& source, Depot& depot,
                                                  const ScreenOptions& screen_options,
                                                  const OracleConfig& oracle_config,
                                                  std::uint64_t seed) {
    query.validate();
    CoordinateRunResult result;
    PatternRunReport& report = result.report;
    report.pattern = "coordinate";
    report.seed = seed;

    result.depot_matches = depot.search_composition(query.composition);
    report.depot_hits = static_cast<long>(result.depot_matches.size());
    for (const auto& rec : result.depot_matches)
        report.trace.push_back({{"stage", "depot"}, {"id", rec.id}, {"route", "hit"}});

    Deduper deduper(screen_options.rmsd_threshold);
    FineTuneBuffer buffer(query.flush_threshold);

    struct Evaluated {
        CrystalStructure structure;
        double value;
        PropertySource source;
    };
    std::vector<Evaluated> evaluated;

    // one oracle workflow (optimize + property); failures are recorded on
    // the trace instead of aborting the run
    auto oracle_fallback = [&](const CrystalStructure& candidate, int iteration, nlohmann::json& t,
                               const char* route) {
        try {
            auto [structure, value] = source.oracle_evaluate(candidate, iteration);
            report.oracle_calls += 1;
            report.oracle_cost_units += oracle_config.latency_units_per_call;
            PropertyValue pv(query.property, value, PropertySource::Oracle);
            buffer.push({structure_hash(structure), structure, pv});
            report.buffered += 1;
            t["route"] = route;
            t["value"] = value;
            evaluated.push_back({std::move(structure), value, PropertySource::Oracle});
        } catch (const Error& e) {
            report.oracle_failures += 1;
            t["route"] = "oracle_failed";
            t["error"] = e.what();
        }
    };

    for (int iteration = 0; iteration < query.max_iterations; ++iteration) {
        nlohmann::json t{{"iteration", iteration}, {"stage", "generate"}};
        std::optional<CrystalStructure> candidate = source.generate(iteration);
        if (!candidate) {
            t["route"] = "generation_failed";
            report.trace.push_back(std::move(t));
            continue;
        }
        if (!deduper.admit(*candidate)) {
            t["route"] = "duplicate";
            report.trace.push_back(std::move(t));
            continue;
        }

        const double pm = source.match_probability(*candidate, iteration);
        const RouteDecision gen_gate = decide(GateKind::Generation, pm, query.tau_gen);
        t["p_match"] = pm;

        if (gen_gate.route == Route::FallbackOracle) {
            oracle_fallback(*candidate, iteration, t, "oracle_generation_gate");
        } else {
            const Confidence conf = source.predict(*candidate, iteration);
            const RouteDecision pred_gate = decide(GateKind::Prediction, conf.variance, query.tau_pred);
            t["variance"] = conf.variance;
            if (pred_gate.route == Route::AcceptAI) {
                report.ai_calls += 1;
                report.ai_cost_units += 1.0;
                evaluated.push_back({*candidate, conf.mean, PropertySource::Surrogate});
                t["route"] = "accept_ai";
                t["value"] = conf.mean;
            } else {
                oracle_fallback(*candidate, iteration, t, "oracle_prediction_gate");
            }
        }
        if (buffer.flush_due()) {
            source.fine_tune(buffer.flush());
            report.fine_tunes += 1;
        }
        report.trace.push_back(std::move(t));
    }

    // final screening: symmetry and the property bound (dedup already ran
    // incrementally on admission)
    std::vector<DepotRecord> to_ingest;
    for (const auto& ev : evaluated) {
        if (symmetry_order(ev.structure, screen_options.symmetry_tol) <= 1) continue;
        if (!(ev.value < query.bound)) continue;
        to_ingest.push_back(DepotRecord{"",
                                        ev.structure,
                                        {PropertyValue(query.property, ev.value, ev.source)},
                                        Provenance::Generated,
                                        ""});
    }
    // ingest is idempotent on digests, so repeated ids mark candidates that
    // converged to the same cell; keep the first occurrence only
    std::set<std::string> seen_ids;
    for (auto& id : depot.ingest(std::move(to_ingest)))
        if (seen_ids.insert(id).second) result.survivor_ids.push_back(std::move(id));
    report.unique_survivors = static_cast<long>(result.survivor_ids.size());
    report.output_ids = result.survivor_ids;
    report.iterations = query.max_iterations;
    report.total_cost_units = report.ai_cost_units + report.oracle_cost_units;
    report.cost_if_all_oracle = static_cast<double>(report.ai_calls + report.oracle_calls) *
                                oracle_config.latency_units_per_call;
    report.cost_saved_units =
        static_cast<double>(report.ai_calls) * oracle_config.latency_units_per_call;
    report.speedup =
        report.total_cost_units > 0.0 ? report.cost_if_all_oracle / report.total_cost_units : 0.0;
    report.details = {{"composition", query.composition.key()},
                      {"property", to_string(query.property)},
                      {"bound", query.bound},
                      {"tau_pred", query.tau_pred},
                      {"tau_gen", query.tau_gen},
                      {"flush_threshold", query.flush_threshold},
                      {"avoided_oracle_calls", report.ai_calls}};
    return result;
}

}  // namespace xtalflow
