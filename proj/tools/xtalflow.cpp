// Command-line entry point: training, generation, screening, depot access,
// pattern runs and trace replay. Exit codes: 0 success, 2 configuration or
// usage problems, 1 runtime failures.

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>

#include <CLI11.hpp>

#include "xtalflow/config.hpp"
#include "xtalflow/coupler.hpp"
#include "xtalflow/io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonArgs {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int workers = 0;  // 0 = from config
    bool real_latency = false;
};

xtalflow::GlobalConfig load_effective_config(const CommonArgs& args) {
    xtalflow::GlobalConfig cfg =
        args.config_path.empty() ? xtalflow::default_config() : xtalflow::load_config(args.config_path);
    if (args.seed_set) {
        cfg.seed = args.seed;
        cfg.effective["seed"] = args.seed;
    }
    if (args.workers > 0) {
        cfg.workers = args.workers;
        cfg.effective["workers"] = args.workers;
    }
    if (args.real_latency) {
        cfg.oracle.real_latency = true;
        cfg.effective["oracle"]["real_latency"] = true;
    }
    return cfg;
}

void print_banner(const xtalflow::GlobalConfig& cfg) {
    std::cout << "config digest: " << xtalflow::config_digest(cfg) << "  seed: " << cfg.seed << "\n";
}

void write_json_file(const json& j, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw xtalflow::StorageError("cannot write " + path);
    out << j.dump(2) << "\n";
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw xtalflow::StorageError("cannot open " + path);
    return json::parse(in);
}

xtalflow::PropertyKind property_from_config(const std::string& name) {
    return name == "band_gap" ? xtalflow::PropertyKind::BandGap
                              : xtalflow::PropertyKind::FormationEnergy;
}

// Random structures with exactly the given species multiset; used to
// bootstrap CSP corpora for a query composition.
std::vector<xtalflow::CrystalStructure> composition_corpus(const xtalflow::Composition& comp,
                                                           int count, std::uint64_t seed,
                                                           const xtalflow::ToySamplerConfig& toy) {
    std::vector<int> zs;
    for (const auto& [z, c] : comp.counts())
        for (int i = 0; i < c; ++i) zs.push_back(z);
    std::vector<xtalflow::CrystalStructure> out;
    xtalflow::Rng rng = xtalflow::Rng::derive(seed, 0xc0590);
    for (int i = 0; i < count; ++i) {
        xtalflow::ToySamplerConfig fixed = toy;
        fixed.n_min = fixed.n_max = static_cast<int>(zs.size());
        for (int attempt = 0; attempt < 200; ++attempt) {
            xtalflow::CrystalStructure s = xtalflow::make_random_structure(rng, fixed);
            (void)attempt;
            // rebuild with the requested species, keeping the geometry
            std::vector<xtalflow::ElementId> species;
            for (int z : zs) species.push_back(xtalflow::ElementId(z));
            try {
                out.emplace_back(s.lattice(), species, s.frac_coords());
                break;
            } catch (const xtalflow::Error&) {
                continue;
            }
        }
    }
    if (out.empty()) throw xtalflow::GenerationError("could not build a composition corpus");
    return out;
}

std::vector<xtalflow::LabeledStructure> labeled_toy_dataset(const xtalflow::GlobalConfig& cfg,
                                                            int count, std::uint64_t stream,
                                                            xtalflow::PropertyKind property) {
    xtalflow::Rng rng = xtalflow::Rng::derive(cfg.seed, stream);
    std::vector<xtalflow::LabeledStructure> data;
    xtalflow::ToySamplerConfig toy;
    for (int i = 0; i < count; ++i) {
        const auto s = xtalflow::make_random_structure(rng, toy);
        const double y = property == xtalflow::PropertyKind::FormationEnergy
                             ? xtalflow::formation_energy(s, cfg.oracle).value
                             : xtalflow::band_gap(s, cfg.oracle).value;
        data.emplace_back(s, y);
    }
    return data;
}

xtalflow::DenoiserModel obtain_denoiser(const xtalflow::GlobalConfig& cfg,
                                        const std::vector<xtalflow::CrystalStructure>* corpus) {
    if (!cfg.diffgen.checkpoint.empty())
        return xtalflow::denoiser_from_json(read_json_file(cfg.diffgen.checkpoint));
    std::vector<xtalflow::CrystalStructure> local;
    if (!corpus) {
        xtalflow::Rng rng = xtalflow::Rng::derive(cfg.seed, 0xd1f);
        xtalflow::ToySamplerConfig toy;
        toy.n_max = std::min(toy.n_max, cfg.diffgen.trainer.max_atoms);
        for (int i = 0; i < cfg.diffgen.corpus_size; ++i)
            local.push_back(xtalflow::make_random_structure(rng, toy));
        corpus = &local;
    }
    xtalflow::DenoiserTrainConfig tc = cfg.diffgen.trainer;
    tc.seed = cfg.seed;
    std::cerr << "training denoiser in-run (" << corpus->size() << " corpus structures, "
              << tc.epochs << " epochs)\n";
    return xtalflow::train_denoiser(*corpus, tc).model;
}

xtalflow::SamplerPolicy policy_from_config(const std::string& name) {
    if (name == "uniform") return xtalflow::SamplerPolicy::UniformRandom;
    if (name == "hybrid") return xtalflow::SamplerPolicy::Hybrid;
    return xtalflow::SamplerPolicy::Empirical;
}

int cmd_train_surrogate(const CommonArgs& args, const std::string& out_path) {
    const auto cfg = load_effective_config(args);
    print_banner(cfg);
    const auto property = property_from_config(cfg.coupler.property);
    const auto data = labeled_toy_dataset(cfg, cfg.coupler.train_size, 0x7a11, property);
    xtalflow::TrainConfig tc = cfg.surrogate.trainer;
    tc.seed = cfg.seed;
    const auto ensemble = xtalflow::train_ensemble(data, tc, cfg.surrogate.ensemble_size);
    write_json_file(xtalflow::ensemble_to_json(ensemble), out_path);
    std::cout << "wrote ensemble checkpoint (" << ensemble.members.size() << " members) to "
              << out_path << "\n";
    std::cout << "final train MAE of member 0: " << ensemble.members[0].final_train_mae << "\n";
    return 0;
}

int cmd_train_denoiser(const CommonArgs& args, const std::string& out_path,
                       const std::string& composition) {
    auto cfg = load_effective_config(args);
    cfg.diffgen.checkpoint.clear();  // always train here
    print_banner(cfg);
    xtalflow::DenoiserModel model;
    if (!composition.empty()) {
        const auto comp = xtalflow::Composition::parse(composition);
        xtalflow::DenoiserTrainConfig tc = cfg.diffgen.trainer;
        tc.seed = cfg.seed;
        tc.lambdas.composition = 0.0;  // CSP training: composition stays clean
        const auto corpus =
            composition_corpus(comp, cfg.diffgen.corpus_size, cfg.seed, xtalflow::ToySamplerConfig{});
        model = xtalflow::train_denoiser(corpus, tc).model;
    } else {
        model = obtain_denoiser(cfg, nullptr);
    }
    write_json_file(xtalflow::denoiser_to_json(model), out_path);
    std::cout << "wrote denoiser checkpoint to " << out_path << "\n";
    return 0;
}

int cmd_generate(const CommonArgs& args, const std::string& mode, long count,
                 const std::string& out_dir, const std::string& composition) {
    const auto cfg = load_effective_config(args);
    print_banner(cfg);
    const auto model = obtain_denoiser(cfg, nullptr);
    fs::create_directories(out_dir);

    xtalflow::SampleOptions opt;
    opt.policy = policy_from_config(cfg.diffgen.policy);
    opt.hybrid_switch_after = cfg.diffgen.switch_after;

    xtalflow::SampleBatch batch;
    if (mode == "csp") {
        if (composition.empty()) throw xtalflow::ConfigError("csp mode needs --composition");
        batch = xtalflow::sample_csp(model, xtalflow::Composition::parse(composition), count,
                                     cfg.seed, opt);
    } else {
        batch = xtalflow::sample_ab_initio(model, count, cfg.seed, opt);
    }

    json manifest{{"schema_version", 1},
                  {"mode", mode},
                  {"seed", cfg.seed},
                  {"requested", batch.stats.requested},
                  {"produced", batch.stats.produced},
                  {"lattice_failures", batch.stats.lattice_failures},
                  {"model_evals", batch.stats.model_evals},
                  {"cost_units", batch.stats.cost_units}};
    json files = json::array();
    for (std::size_t i = 0; i < batch.structures.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "sample_%05zu.json", i);
        xtalflow::write_structure_file(batch.structures[i], fs::path(out_dir) / name);
        files.push_back(name);
    }
    manifest["files"] = files;
    write_json_file(manifest, (fs::path(out_dir) / "manifest.json").string());
    std::cout << "generated " << batch.stats.produced << "/" << batch.stats.requested
              << " structures into " << out_dir << "\n";
    return 0;
}

int cmd_screen(const CommonArgs& args, const std::string& in_dir, const std::string& out_path) {
    const auto cfg = load_effective_config(args);
    print_banner(cfg);
    std::vector<xtalflow::CrystalStructure> structures;
    std::vector<std::string> names;
    std::vector<fs::path> paths;
    for (const auto& entry : fs::directory_iterator(in_dir)) {
        if (!entry.is_regular_file()) continue;
        if (entry.path().filename() == "manifest.json") continue;
        paths.push_back(entry.path());
    }
    std::sort(paths.begin(), paths.end());
    for (const auto& p : paths) {
        try {
            structures.push_back(xtalflow::read_structure_file(p));
            names.push_back(p.filename().string());
        } catch (const xtalflow::Error& e) {
            std::cerr << "skipping " << p << ": " << e.what() << "\n";
        }
    }
    const auto report = xtalflow::run_screen(structures, cfg.screen);
    json j = xtalflow::screen_report_to_json(report);
    json survivors = json::array();
    for (std::size_t idx : report.survivor_indices) survivors.push_back(names[idx]);
    j["survivor_files"] = survivors;
    write_json_file(j, out_path);
    std::cout << "screened " << structures.size() << " structures, " << report.survivor_indices.size()
              << " survived (valid rate " << report.valid_rate << ")\n";
    return 0;
}

int cmd_depot(const CommonArgs& args, const std::string& action,
              const std::vector<std::string>& files, const std::string& composition,
              const std::string& digest) {
    const auto cfg = load_effective_config(args);
    print_banner(cfg);
    xtalflow::Depot depot(cfg.depot_path);
    if (action == "ingest") {
        std::vector<xtalflow::DepotRecord> records;
        for (const auto& f : files)
            records.push_back({"", xtalflow::read_structure_file(f), {}, xtalflow::Provenance::Corpus, ""});
        const auto ids = depot.ingest(std::move(records));
        json j = json::array();
        for (const auto& id : ids) j.push_back(id);
        std::cout << j.dump() << "\n";
    } else if (action == "search") {
        json j = json::array();
        if (!digest.empty()) {
            if (const auto rec = depot.search_digest(digest)) j.push_back(rec->id);
        } else if (!composition.empty()) {
            for (const auto& rec : depot.search_composition(xtalflow::Composition::parse(composition)))
                j.push_back(rec.id);
        } else {
            throw xtalflow::ConfigError("depot search needs --composition or --digest");
        }
        std::cout << j.dump() << "\n";
    } else {  // stats
        const auto st = depot.stats();
        json j{{"total_records", st.total_records},
               {"element_histogram", st.element_histogram},
               {"atom_count_histogram", json::object()},
               {"crystal_system_fractions", st.crystal_system_fractions}};
        for (const auto& [n, c] : st.atom_count_histogram) j["atom_count_histogram"][std::to_string(n)] = c;
        std::cout << j.dump(2) << "\n";
    }
    return 0;
}

int cmd_run(const CommonArgs& args, const std::string& pattern, const std::string& report_path) {
    const auto cfg = load_effective_config(args);
    print_banner(cfg);
    const auto property = property_from_config(cfg.coupler.property);
    xtalflow::PatternRunReport report;

    if (pattern == "surrogate") {
        xtalflow::SurrogatePatternConfig pc;
        pc.train_size = cfg.coupler.train_size;
        pc.eval_size = cfg.coupler.eval_size;
        pc.seed = cfg.seed;
        pc.property = property;
        pc.oracle = cfg.oracle;
        pc.trainer = cfg.surrogate.trainer;
        pc.workers = cfg.workers;
        report = xtalflow::run_surrogate_pattern(pc);
    } else if (pattern == "directive") {
        xtalflow::DirectivePatternConfig pc;
        pc.target_kind = property;
        pc.y_target = cfg.coupler.y_target;
        pc.batch = cfg.coupler.batch;
        pc.iterations = cfg.coupler.iterations;
        pc.seed = cfg.seed;
        pc.oracle = cfg.oracle;
        pc.screen = cfg.screen;
        pc.relax = {cfg.coupler.relax_max_steps, cfg.coupler.relax_step_size, cfg.coupler.relax_tol};
        pc.relax_survivors = cfg.coupler.relax_survivors;
        pc.workers = cfg.workers;
        xtalflow::Depot depot(cfg.depot_path);
        std::unique_ptr<xtalflow::StructureSampler> sampler;
        if (cfg.coupler.sampler == "memorizing") {
            auto pool = xtalflow::make_symmetric_binary_pool(
                static_cast<std::size_t>(cfg.coupler.pool_size));
            sampler = std::make_unique<xtalflow::CorpusMemorizingSampler>(
                std::move(pool), cfg.seed, policy_from_config(cfg.diffgen.policy),
                cfg.diffgen.switch_after);
        } else {
            sampler = std::make_unique<xtalflow::DiffusionSampler>(
                obtain_denoiser(cfg, nullptr), cfg.seed, policy_from_config(cfg.diffgen.policy),
                cfg.diffgen.switch_after);
        }
        report = xtalflow::run_directive_pattern(pc, *sampler, depot);
    } else if (pattern == "coordinate") {
        const auto comp = xtalflow::Composition::parse(cfg.coupler.composition);
        xtalflow::Depot depot(cfg.depot_path);

        // models: from checkpoints when configured, trained in-run otherwise
        const auto corpus =
            composition_corpus(comp, cfg.diffgen.corpus_size, cfg.seed, xtalflow::ToySamplerConfig{});
        xtalflow::DenoiserModel denoiser;
        if (!cfg.diffgen.checkpoint.empty()) {
            denoiser = xtalflow::denoiser_from_json(read_json_file(cfg.diffgen.checkpoint));
        } else {
            xtalflow::DenoiserTrainConfig dtc = cfg.diffgen.trainer;
            dtc.seed = cfg.seed;
            dtc.lambdas.composition = 0.0;
            std::cerr << "training CSP denoiser in-run\n";
            denoiser = xtalflow::train_denoiser(corpus, dtc).model;
        }
        xtalflow::Ensemble ensemble;
        xtalflow::TrainConfig tc = cfg.surrogate.trainer;
        tc.seed = cfg.seed;
        if (!cfg.surrogate.checkpoint.empty()) {
            ensemble = xtalflow::ensemble_from_json(read_json_file(cfg.surrogate.checkpoint));
        } else {
            std::vector<xtalflow::LabeledStructure> data;
            for (const auto& s : corpus)
                data.emplace_back(s, property == xtalflow::PropertyKind::FormationEnergy
                                         ? xtalflow::formation_energy(s, cfg.oracle).value
                                         : xtalflow::band_gap(s, cfg.oracle).value);
            std::cerr << "training ensemble in-run\n";
            ensemble = xtalflow::train_ensemble(data, tc, cfg.surrogate.ensemble_size);
        }

        // match discriminator: label CSP samples against the corpus ground
        // truths; fall back to jittered labels if one class is missing
        std::vector<std::pair<xtalflow::CrystalStructure, bool>> labeled;
        for (std::size_t g = 0; g < std::min<std::size_t>(corpus.size(), 4); ++g) {
            xtalflow::SampleOptions opt;
            opt.sequence_offset = static_cast<long>(1000 + g * 5);
            const auto batch = xtalflow::sample_csp(denoiser, comp, 5, cfg.seed ^ 0x3d5ULL, opt);
            const auto labels = xtalflow::label_matches(batch.structures, corpus[g], cfg.coupler.md_rmsd_d);
            for (std::size_t i = 0; i < batch.structures.size(); ++i) {
                try {
                    // samples the featurizer cannot represent make no MD training points
                    (void)xtalflow::featurize(batch.structures[i], tc.k, tc.n_basis, tc.r_max);
                    labeled.emplace_back(batch.structures[i], labels[i]);
                } catch (const xtalflow::EmptyNeighborhoodError&) {
                }
            }
        }
        bool has_pos = false, has_neg = false;
        for (const auto& [s, y] : labeled) (y ? has_pos : has_neg) = true;
        if (!has_pos || !has_neg) {
            xtalflow::Rng jrng = xtalflow::Rng::derive(cfg.seed, 0x3113);
            for (std::size_t g = 0; g < corpus.size(); ++g) {
                auto coords = corpus[g].frac_coords();
                for (auto& c : coords)
                    for (int kdim = 0; kdim < 3; ++kdim) c[kdim] += 0.002 * jrng.gauss();
                labeled.emplace_back(corpus[g].with_frac_coords(coords), true);
                auto far = corpus[g].frac_coords();
                for (auto& c : far)
                    for (int kdim = 0; kdim < 3; ++kdim) c[kdim] = jrng.uniform();
                labeled.emplace_back(corpus[g].with_frac_coords(far), false);
            }
        }
        xtalflow::MdTrainConfig mdc;
        mdc.seed = cfg.seed;
        mdc.epochs = cfg.coupler.md_epochs;
        mdc.learning_rate = cfg.coupler.md_learning_rate;
        mdc.k = tc.k;
        mdc.n_basis = tc.n_basis;
        mdc.r_max = tc.r_max;
        mdc.rmsd_threshold_d = cfg.coupler.md_rmsd_d;
        const auto md = xtalflow::train_md(labeled, mdc);

        xtalflow::CoordinateQuery query;
        query.composition = comp;
        query.property = property;
        query.bound = cfg.coupler.bound;
        query.max_iterations = cfg.coupler.max_iterations;
        query.tau_pred = cfg.coupler.tau_pred;
        query.tau_gen = cfg.coupler.tau_gen;
        query.flush_threshold = static_cast<std::size_t>(cfg.coupler.flush_threshold);

        xtalflow::RelaxParams relax_params{cfg.coupler.relax_max_steps, cfg.coupler.relax_step_size,
                                           cfg.coupler.relax_tol};
        xtalflow::LiveCoordinateSource source(std::move(denoiser), std::move(ensemble), md, cfg.oracle,
                                              relax_params, tc, comp, property, cfg.seed);
        report = xtalflow::run_coordinate_pattern(query, source, depot, cfg.screen, cfg.oracle,
                                                  cfg.seed).report;
    } else {
        throw xtalflow::ConfigError("unknown pattern: " + pattern);
    }

    report.config_digest = xtalflow::config_digest(cfg);
    write_json_file(xtalflow::report_to_json(report), report_path);
    std::cout << "pattern " << report.pattern << ": ai_calls=" << report.ai_calls
              << " oracle_calls=" << report.oracle_calls << " speedup=" << report.speedup << "\n";
    std::cout << "report written to " << report_path << "\n";
    return 0;
}

int cmd_replay(const CommonArgs& args, const std::string& fixture_path,
               const std::string& report_path) {
    const auto cfg = load_effective_config(args);
    print_banner(cfg);
    const json fixture = read_json_file(fixture_path);
    xtalflow::ReplayCoordinateSource source(fixture);

    xtalflow::CoordinateQuery query;
    const auto& q = fixture.at("query");
    query.composition = xtalflow::Composition::parse(q.at("composition").get<std::string>());
    query.property = property_from_config(q.value("property", "formation_energy"));
    query.bound = q.value("bound", 1.0);
    query.max_iterations = q.value("max_iterations", 50);
    query.tau_pred = q.value("tau_pred", 0.1);
    query.tau_gen = q.value("tau_gen", 0.5);
    query.flush_threshold = q.value("flush_threshold", 5);

    // replay runs against an ephemeral depot so it never pollutes the store
    const fs::path tmp = fs::temp_directory_path() /
                         ("xtalflow_replay_" + std::to_string(static_cast<long>(::getpid())));
    fs::remove_all(tmp);
    xtalflow::Depot depot(tmp);
    auto result = xtalflow::run_coordinate_pattern(query, source, depot, cfg.screen, cfg.oracle, cfg.seed);
    fs::remove_all(tmp);

    result.report.config_digest = xtalflow::config_digest(cfg);
    if (!report_path.empty()) write_json_file(xtalflow::report_to_json(result.report), report_path);
    std::cout << "replay: iterations=" << result.report.iterations
              << " ai_calls=" << result.report.ai_calls
              << " oracle_calls=" << result.report.oracle_calls
              << " unique_survivors=" << result.report.unique_survivors << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"xtalflow: HPC-AI coupling patterns over a toy crystal domain"};
    app.require_subcommand(1);

    CommonArgs common;
    app.add_option("--config", common.config_path, "config file (TOML-style or JSON)");
    auto* seed_opt = app.add_option("--seed", common.seed, "seed override");
    app.add_option("--workers", common.workers, "worker pool size override");
    app.add_flag("--real-latency", common.real_latency, "actually sleep per oracle call");
    app.fallthrough();

    // train-surrogate
    auto* ts = app.add_subcommand("train-surrogate", "train the property-prediction ensemble");
    std::string ts_out = "surrogate.ckpt.json";
    ts->add_option("--out", ts_out, "checkpoint output path");

    // train-denoiser
    auto* td = app.add_subcommand("train-denoiser", "train the diffusion generator");
    std::string td_out = "denoiser.ckpt.json";
    std::string td_comp;
    td->add_option("--out", td_out, "checkpoint output path");
    td->add_option("--composition", td_comp, "train a CSP model for this composition");

    // generate
    auto* gen = app.add_subcommand("generate", "sample structures from the generator");
    std::string gen_mode = "ab-initio", gen_out = "generated", gen_comp;
    long gen_count = 10;
    gen->add_option("--mode", gen_mode, "ab-initio or csp")
        ->check(CLI::IsMember({"ab-initio", "csp"}));
    gen->add_option("--count", gen_count, "number of samples");
    gen->add_option("--out", gen_out, "output directory");
    gen->add_option("--composition", gen_comp, "composition for csp mode");

    // screen
    auto* sc = app.add_subcommand("screen", "run validity filters over a directory");
    std::string sc_in, sc_out = "report.json";
    sc->add_option("--in", sc_in, "input directory")->required();
    sc->add_option("--out", sc_out, "report output path");

    // depot
    auto* dp = app.add_subcommand("depot", "structure store operations");
    dp->require_subcommand(1);
    auto* dpi = dp->add_subcommand("ingest", "add structure files");
    std::vector<std::string> dpi_files;
    dpi->add_option("files", dpi_files, "structure files (JSON or POSCAR)")->required();
    auto* dps = dp->add_subcommand("search", "look up records");
    std::string dps_comp, dps_digest;
    dps->add_option("--composition", dps_comp, "reduced-formula search");
    dps->add_option("--digest", dps_digest, "digest search");
    dp->add_subcommand("stats", "corpus statistics");

    // run
    auto* run = app.add_subcommand("run", "execute a coupling pattern");
    run->require_subcommand(1);
    std::string run_report = "run_report.json";
    run->add_option("--report", run_report, "report output path");
    auto* run_sur = run->add_subcommand("surrogate", "train + evaluate the surrogate pattern");
    auto* run_dir = run->add_subcommand("directive", "generate-screen-evaluate loop");
    auto* run_coo = run->add_subcommand("coordinate", "confidence-gated hybrid loop");

    // replay
    auto* rp = app.add_subcommand("replay", "run a recorded coordinate trace");
    std::string rp_fixture, rp_report;
    rp->add_option("fixture", rp_fixture, "trace fixture JSON")->required();
    rp->add_option("--report", rp_report, "report output path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // help exits 0, every parse problem is a usage error
    }

    common.seed_set = seed_opt->count() > 0;

    try {
        if (ts->parsed()) return cmd_train_surrogate(common, ts_out);
        if (td->parsed()) return cmd_train_denoiser(common, td_out, td_comp);
        if (gen->parsed()) return cmd_generate(common, gen_mode, gen_count, gen_out, gen_comp);
        if (sc->parsed()) return cmd_screen(common, sc_in, sc_out);
        if (dp->parsed()) {
            std::string action = dpi->parsed() ? "ingest" : dps->parsed() ? "search" : "stats";
            return cmd_depot(common, action, dpi_files, dps_comp, dps_digest);
        }
        if (run->parsed()) {
            std::string pattern = run_sur->parsed() ? "surrogate"
                                  : run_dir->parsed() ? "directive" : "coordinate";
            (void)run_coo;
            return cmd_run(common, pattern, run_report);
        }
        if (rp->parsed()) return cmd_replay(common, rp_fixture, rp_report);
    } catch (const xtalflow::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const xtalflow::UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
