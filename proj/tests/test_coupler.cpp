#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include "xtalflow/config.hpp"
#include "xtalflow/coupler.hpp"

#include "helpers.hpp"

using namespace xtalflow;

namespace {

nlohmann::json load_fixture() {
    std::ifstream in(testutil::data_dir() / "fixtures" / "fe2o3_trace.json");
    REQUIRE(in.good());
    return nlohmann::json::parse(in);
}

CoordinateQuery query_from_fixture(const nlohmann::json& fixture) {
    const auto& q = fixture.at("query");
    CoordinateQuery query;
    query.composition = Composition::parse(q.at("composition").get<std::string>());
    query.bound = q.at("bound");
    query.max_iterations = q.at("max_iterations");
    query.tau_pred = q.at("tau_pred");
    query.tau_gen = q.at("tau_gen");
    query.flush_threshold = q.at("flush_threshold");
    return query;
}

std::vector<CrystalStructure> binary_pool(std::size_t count) {
    return make_symmetric_binary_pool(count);
}

std::vector<CrystalStructure> nacl_corpus(int count, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<CrystalStructure> out;
    for (int i = 0; i < count; ++i) {
        Mat3 rows{};
        for (int k = 0; k < 3; ++k) rows[k][k] = rng.uniform(4.0, 5.5);
        out.emplace_back(Lattice(rows), std::vector<ElementId>{ElementId(11), ElementId(17)},
                         std::vector<Vec3>{{rng.uniform(0.0, 0.2), 0.1, 0.1}, {0.5, 0.55, 0.6}});
    }
    return out;
}

}  // namespace

TEST_CASE("route decisions") {
    CHECK(decide(GateKind::Prediction, 0.0, 0.5).route == Route::AcceptAI);
    CHECK(decide(GateKind::Prediction, 0.5, 0.5).route == Route::FallbackOracle);  // equality
    CHECK(decide(GateKind::Prediction, 0.7, 0.5).route == Route::FallbackOracle);
    CHECK(decide(GateKind::Generation, 0.9, 0.5).route == Route::AcceptAI);
    CHECK(decide(GateKind::Generation, 0.5, 0.5).route == Route::FallbackOracle);  // equality
    CHECK(decide(GateKind::Generation, 0.2, 0.5).route == Route::FallbackOracle);
    // an infinite prediction threshold accepts any finite variance
    CHECK(decide(GateKind::Prediction, 1e12, std::numeric_limits<double>::infinity()).route ==
          Route::AcceptAI);
}

TEST_CASE("tau calibration against an error bound") {
    // (variance, |error|) observations: low-variance points are accurate
    std::vector<std::pair<double, double>> obs = {
        {0.01, 0.02}, {0.02, 0.05}, {0.05, 0.10}, {0.10, 0.08}, {0.20, 0.60}, {0.50, 0.90},
    };
    const auto cal = calibrate_tau_pred(obs, 0.12);
    CHECK(cal.tau == 0.20);  // accepts the first four, not the noisy tail
    CHECK(cal.accepted == 4);
    CHECK(cal.accepted_mean_error <= 0.12);

    // impossible bound degenerates to accepting nothing
    const auto none = calibrate_tau_pred({{0.1, 5.0}, {0.2, 6.0}}, 0.01);
    CHECK(none.accepted == 0);

    CHECK_THROWS_AS(calibrate_tau_pred({}, 0.1), UsageError);
}

TEST_CASE("scheduler") {
    OracleConfig cfg;
    cfg.latency_units_per_call = 5.0;
    Rng rng(401);

    SECTION("empty batch") {
        CHECK(schedule({}, cfg, 4).empty());
    }

    SECTION("results are ordered and worker count is invisible") {
        std::vector<OracleJob> jobs;
        for (int i = 0; i < 24; ++i)
            jobs.push_back({i % 2 ? OracleCallKind::energy() : OracleCallKind::gap(),
                            testutil::random_structure(rng, 2, 5)});
        const auto serial = schedule(jobs, cfg, 1);
        const auto parallel = schedule(jobs, cfg, 8);
        REQUIRE(serial.size() == parallel.size());
        for (std::size_t i = 0; i < serial.size(); ++i) {
            CHECK(serial[i].task_id == static_cast<int>(i));
            CHECK(parallel[i].task_id == static_cast<int>(i));
            REQUIRE(serial[i].value.has_value());
            CHECK(*serial[i].value == *parallel[i].value);
        }
    }

    SECTION("cost accounting is work, not wall time") {
        std::vector<OracleJob> jobs(100, {OracleCallKind::energy(),
                                          testutil::random_structure(rng, 2, 4)});
        for (int workers : {1, 8}) {
            const auto results = schedule(jobs, cfg, workers);
            double total = 0.0;
            for (const auto& r : results) total += r.cost_units;
            CHECK(total == 500.0);
        }
    }

    SECTION("per-task errors do not abort the batch") {
        CrystalStructure overlapping(Lattice::cubic(4.0), {ElementId(8), ElementId(8)},
                                     {{0, 0, 0}, {0.005, 0, 0}});
        std::vector<OracleJob> jobs{{OracleCallKind::energy(), testutil::random_structure(rng, 2, 4)},
                                    {OracleCallKind::energy(), overlapping}};
        const auto results = schedule(jobs, cfg, 2);
        CHECK(results[0].error.empty());
        CHECK_FALSE(results[1].error.empty());
        CHECK_FALSE(results[1].value.has_value());
    }

    SECTION("relax jobs carry the per-step cost") {
        std::vector<OracleJob> jobs{{OracleCallKind::relax(3), testutil::random_structure(rng, 2, 3)}};
        RelaxParams rp{3, 0.02, 1e-9};
        const auto results = schedule(jobs, cfg, 1, rp);
        REQUIRE(results[0].relaxed.has_value());
        CHECK(results[0].cost_units == 5.0 * results[0].relaxed->steps);
    }

    CHECK_THROWS_AS(schedule({}, cfg, 0), UsageError);
}

TEST_CASE("surrogate pattern") {
    SurrogatePatternConfig pc;
    pc.train_size = 30;
    pc.eval_size = 10;
    pc.seed = 5;
    pc.trainer.epochs = 120;
    pc.trainer.learning_rate = 0.02;

    SECTION("speedup is the accounting identity") {
        pc.oracle.latency_units_per_call = 886;
        CHECK(run_surrogate_pattern(pc).speedup == 886.0);
        pc.oracle.latency_units_per_call = 8245;
        CHECK(run_surrogate_pattern(pc).speedup == 8245.0);
        pc.oracle.latency_units_per_call = 1;
        CHECK(run_surrogate_pattern(pc).speedup == 1.0);
    }

    SECTION("counters and report shape") {
        pc.oracle.latency_units_per_call = 100;
        const auto report = run_surrogate_pattern(pc);
        CHECK(report.pattern == "surrogate");
        CHECK(report.ai_calls == pc.eval_size);
        CHECK(report.oracle_calls == pc.train_size + pc.eval_size);
        CHECK(report.total_cost_units ==
              Catch::Approx(report.oracle_cost_units + report.ai_cost_units));
        CHECK(report.details.at("mae_holdout").get<double>() > 0.0);
    }

    SECTION("an overfit model scores better on its own training set") {
        SurrogatePatternConfig over = pc;
        over.train_size = 12;
        over.eval_size = 24;
        over.trainer.epochs = 800;
        over.trainer.learning_rate = 0.05;
        const auto report = run_surrogate_pattern(over);
        CHECK(report.details.at("mae_train").get<double>() <
              report.details.at("mae_holdout").get<double>());
    }

    CHECK_THROWS_AS(run_surrogate_pattern(SurrogatePatternConfig{.train_size = 1}), UsageError);
}

TEST_CASE("directive pattern") {
    testutil::TempDir tmp("directive");

    DirectivePatternConfig pc;
    pc.seed = 11;
    pc.oracle.latency_units_per_call = 50;
    pc.relax = {2, 0.02, 1e-6};

    SECTION("single iteration yields a single valid-rate sample") {
        Depot depot(tmp.path / "one");
        CorpusMemorizingSampler sampler(binary_pool(10), pc.seed);
        pc.batch = 10;
        pc.iterations = 1;
        const auto report = run_directive_pattern(pc, sampler, depot);
        CHECK(report.valid_rate_series.size() == 1);
        CHECK(report.iterations == 1);
    }

    SECTION("a planted optimum is found") {
        Depot depot(tmp.path / "planted");
        const auto pool = binary_pool(12);
        // target: the relaxed oracle energy of one pool member
        const auto rr = relax(pool[7], pc.oracle, pc.relax.max_steps, pc.relax.step_size, pc.relax.tol);
        pc.y_target = rr.energy_trace.back();
        pc.batch = 30;
        pc.iterations = 2;
        CorpusMemorizingSampler sampler(pool, pc.seed);
        const auto report = run_directive_pattern(pc, sampler, depot);
        CHECK(report.details.at("best_loss").get<double>() <= 0.1);
    }

    SECTION("a memorizing sampler under the hybrid policy drives the valid rate strictly down") {
        Depot depot(tmp.path / "decline");
        pc.batch = 40;
        pc.iterations = 6;
        pc.seed = 22;
        pc.relax_survivors = false;  // dedup mechanics are what is under test
        CorpusMemorizingSampler sampler(binary_pool(48), pc.seed, SamplerPolicy::Hybrid,
                                        5 * pc.batch);
        const auto report = run_directive_pattern(pc, sampler, depot);
        REQUIRE(report.valid_rate_series.size() == 6);
        for (std::size_t i = 1; i < report.valid_rate_series.size(); ++i)
            CHECK(report.valid_rate_series[i] < report.valid_rate_series[i - 1]);
    }

    SECTION("zero survivors in an iteration is recorded, not fatal") {
        Depot depot(tmp.path / "zero");
        // every batch repeats one structure: iteration 2+ has no survivors
        CorpusMemorizingSampler sampler(binary_pool(1), pc.seed);
        pc.batch = 5;
        pc.iterations = 3;
        const auto report = run_directive_pattern(pc, sampler, depot);
        REQUIRE(report.valid_rate_series.size() == 3);
        CHECK(report.valid_rate_series[1] == 0.0);
        CHECK(report.valid_rate_series[2] == 0.0);
    }
}

TEST_CASE("coordinate pattern replay") {
    const auto fixture = load_fixture();
    const auto query = query_from_fixture(fixture);
    const OracleConfig oracle;  // latency only feeds the cost fields
    const ScreenOptions screen;

    SECTION("the recorded trace reproduces the published counters") {
        testutil::TempDir tmp("replay");
        Depot depot(tmp.path);
        ReplayCoordinateSource source(fixture);
        const auto result = run_coordinate_pattern(query, source, depot, screen, oracle, 7);
        CHECK(result.report.iterations == 50);
        CHECK(result.report.ai_calls == 9);
        CHECK(result.report.oracle_calls == 5);
        CHECK(result.report.unique_survivors == 14);
        CHECK(result.report.buffered == 5);
        CHECK(result.report.fine_tunes == 1);
        CHECK(result.report.depot_hits == 0);

        // conservation: every recorded property value routed through a gate
        long valued = 0;
        for (const auto& t : result.report.trace)
            if (t.contains("value")) ++valued;
        CHECK(valued == result.report.ai_calls + result.report.oracle_calls);

        // avoided-work identity
        CHECK(result.report.cost_saved_units ==
              Catch::Approx(9.0 * oracle.latency_units_per_call));
    }

    SECTION("a pre-seeded depot returns its matches before any generation") {
        testutil::TempDir tmp("replay_seeded");
        Depot depot(tmp.path);
        auto fe2o3 = [](double a) {
            return CrystalStructure(
                Lattice::cubic(a),
                {ElementId(26), ElementId(26), ElementId(8), ElementId(8), ElementId(8)},
                {{0, 0, 0}, {0.5, 0.5, 0.5}, {0.25, 0.25, 0.25}, {0.75, 0.75, 0.75}, {0.5, 0.5, 0}});
        };
        depot.ingest({DepotRecord{"mat_81324", fe2o3(3.7), {}, Provenance::Corpus, ""},
                      DepotRecord{"mat_88226", fe2o3(3.8), {}, Provenance::Corpus, ""}});
        ReplayCoordinateSource source(fixture);
        const auto result = run_coordinate_pattern(query, source, depot, screen, oracle, 7);
        CHECK(result.report.depot_hits == 2);
        REQUIRE(result.depot_matches.size() == 2);
        CHECK(result.depot_matches[0].id == "mat_81324");
        CHECK(result.depot_matches[1].id == "mat_88226");
    }

    SECTION("gating monotonicity over a threshold grid") {
        std::vector<long> pred_calls;
        for (double tau : {0.01, 0.1, 0.3, 0.36, 1.0}) {
            testutil::TempDir tmp("replay_grid");
            Depot depot(tmp.path);
            ReplayCoordinateSource source(fixture);
            CoordinateQuery q = query;
            q.tau_pred = tau;
            pred_calls.push_back(run_coordinate_pattern(q, source, depot, screen, oracle, 7)
                                     .report.oracle_calls);
        }
        for (std::size_t i = 1; i < pred_calls.size(); ++i)
            CHECK(pred_calls[i] <= pred_calls[i - 1]);
        CHECK(pred_calls.front() == 14);  // everything fell to the oracle
        CHECK(pred_calls.back() == 0);

        // raising the generation threshold can only add oracle work
        std::vector<long> gen_calls;
        for (double tau : {0.1, 0.5, 0.91, 0.92, 0.99}) {
            testutil::TempDir tmp("replay_grid_gen");
            Depot depot(tmp.path);
            ReplayCoordinateSource source(fixture);
            CoordinateQuery q = query;
            q.tau_gen = tau;
            gen_calls.push_back(run_coordinate_pattern(q, source, depot, screen, oracle, 7)
                                    .report.oracle_calls);
        }
        for (std::size_t i = 1; i < gen_calls.size(); ++i) CHECK(gen_calls[i] >= gen_calls[i - 1]);
        // the recorded p_match is 0.92: at tau_gen == 0.92 the equality routes
        // every candidate to the oracle
        CHECK(gen_calls.back() == 14);
        CHECK(gen_calls[3] == 14);
    }
}

TEST_CASE("coordinate pattern live") {
    const auto corpus = nacl_corpus(6, 19);
    const auto comp = Composition::parse("NaCl");
    OracleConfig oracle;
    oracle.latency_units_per_call = 100;

    DenoiserTrainConfig dtc;
    dtc.T = 6;
    dtc.epochs = 15;
    dtc.max_atoms = 2;
    dtc.hidden = 24;
    dtc.seed = 3;
    dtc.lambdas.composition = 0.0;
    const auto denoiser = train_denoiser(corpus, dtc).model;

    TrainConfig tc;
    tc.epochs = 25;
    tc.learning_rate = 0.02;
    tc.seed = 3;
    std::vector<LabeledStructure> labeled;
    for (const auto& s : corpus) labeled.emplace_back(s, formation_energy(s, oracle).value);
    const auto ensemble = train_ensemble(labeled, tc, 2);

    // MD over jittered positives and scrambled negatives
    std::vector<std::pair<CrystalStructure, bool>> md_data;
    Rng jrng(23);
    for (const auto& s : corpus) {
        auto close = s.frac_coords();
        for (auto& f : close)
            for (int k = 0; k < 3; ++k) f[k] += 0.002 * jrng.gauss();
        md_data.emplace_back(s.with_frac_coords(close), true);
        auto far = s.frac_coords();
        for (auto& f : far)
            for (int k = 0; k < 3; ++k) f[k] = jrng.uniform();
        md_data.emplace_back(s.with_frac_coords(far), false);
    }
    MdTrainConfig mdc;
    mdc.seed = 3;
    mdc.epochs = 100;
    const auto md = train_md(md_data, mdc);

    RelaxParams rp{2, 0.02, 1e-6};
    CoordinateQuery query;
    query.composition = comp;
    query.bound = 10.0;
    query.max_iterations = 8;
    query.tau_gen = 1e-9;  // generation gate accepts everything

    SECTION("an infinite prediction threshold never falls back through that gate") {
        testutil::TempDir tmp("live_inf");
        Depot depot(tmp.path);
        query.tau_pred = std::numeric_limits<double>::infinity();
        LiveCoordinateSource source(denoiser, ensemble, md, oracle, rp, tc, comp,
                                    PropertyKind::FormationEnergy, 31);
        const auto result = run_coordinate_pattern(query, source, depot, ScreenOptions{}, oracle, 31);
        long pred_gate_oracle = 0;
        for (const auto& t : result.report.trace)
            if (t.value("route", "") == std::string("oracle_prediction_gate")) ++pred_gate_oracle;
        CHECK(pred_gate_oracle == 0);
        CHECK(result.report.ai_calls > 0);
    }

    SECTION("a zero-ish prediction threshold sends everything to the oracle") {
        testutil::TempDir tmp("live_zero");
        Depot depot(tmp.path);
        query.tau_pred = 1e-18;
        LiveCoordinateSource source(denoiser, ensemble, md, oracle, rp, tc, comp,
                                    PropertyKind::FormationEnergy, 31);
        const auto result = run_coordinate_pattern(query, source, depot, ScreenOptions{}, oracle, 31);
        CHECK(result.report.ai_calls == 0);
        CHECK(result.report.oracle_calls == result.report.buffered);
        // five buffered entries trigger the flush threshold
        if (result.report.buffered >= 5) CHECK(result.report.fine_tunes >= 1);
    }

    SECTION("identical seeds reproduce the report byte for byte") {
        auto run_once = [&](const std::filesystem::path& dir) {
            Depot depot(dir);
            CoordinateQuery q = query;
            q.tau_pred = 0.05;
            LiveCoordinateSource source(denoiser, ensemble, md, oracle, rp, tc, comp,
                                        PropertyKind::FormationEnergy, 31);
            auto result = run_coordinate_pattern(q, source, depot, ScreenOptions{}, oracle, 31);
            return report_to_json(result.report).dump();
        };
        testutil::TempDir a("live_det_a"), b("live_det_b");
        CHECK(run_once(a.path) == run_once(b.path));
    }
}
