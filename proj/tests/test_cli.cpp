#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "xtalflow/io.hpp"

#include "helpers.hpp"

namespace {

struct CliResult {
    int exit_code;
    std::string out;
    std::string err;
};

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// runs the CLI with cwd set to `dir`, capturing stdout/stderr
CliResult run_cli(const std::filesystem::path& dir, const std::string& args,
                  const std::string& env_prefix = "") {
    const auto out_path = dir / "_stdout.txt";
    const auto err_path = dir / "_stderr.txt";
    std::string cmd = "cd " + dir.string() + " && " + env_prefix + " " + XTALFLOW_CLI_PATH + " " +
                      args + " > _stdout.txt 2> _stderr.txt";
    const int raw = std::system(cmd.c_str());
    CliResult r;
    r.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.out = slurp(out_path);
    r.err = slurp(err_path);
    return r;
}

}  // namespace

TEST_CASE("cli help and usage errors") {
    testutil::TempDir tmp("cli_usage");
    CHECK(run_cli(tmp.path, "--help").exit_code == 0);
    CHECK(run_cli(tmp.path, "no-such-command").exit_code == 2);
    CHECK(run_cli(tmp.path, "").exit_code == 2);
}

TEST_CASE("malformed config names the offending key and exits 2") {
    testutil::TempDir tmp("cli_badcfg");
    {
        std::ofstream cfg(tmp.path / "bad.toml");
        cfg << "[oracle]\ncutoff_radius = 6.0\nlatency_per_call = 886\n";
    }
    const auto r = run_cli(tmp.path, "run surrogate --config bad.toml");
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("latency_per_call") != std::string::npos);

    {
        std::ofstream cfg(tmp.path / "bad2.toml");
        cfg << "[nonsense]\nx = 1\n";
    }
    const auto r2 = run_cli(tmp.path, "run surrogate --config bad2.toml");
    CHECK(r2.exit_code == 2);
    CHECK(r2.err.find("nonsense") != std::string::npos);
}

TEST_CASE("run surrogate is reproducible byte for byte") {
    testutil::TempDir a("cli_det_a"), b("cli_det_b");
    std::string cfg_text =
        "seed = 3\n[oracle]\nlatency_units_per_call = 886\n[surrogate]\nepochs = 40\n"
        "[coupler]\ntrain_size = 12\neval_size = 6\n";
    for (const auto& dir : {a.path, b.path}) {
        std::ofstream cfg(dir / "cfg.toml");
        cfg << cfg_text;
    }
    const auto ra = run_cli(a.path, "run surrogate --config cfg.toml --report report.json");
    const auto rb = run_cli(b.path, "run surrogate --config cfg.toml --report report.json");
    REQUIRE(ra.exit_code == 0);
    REQUIRE(rb.exit_code == 0);
    const std::string report_a = slurp(a.path / "report.json");
    CHECK_FALSE(report_a.empty());
    CHECK(report_a == slurp(b.path / "report.json"));

    const auto j = nlohmann::json::parse(report_a);
    CHECK(j.at("speedup") == 886.0);
    CHECK(j.at("schema_version") == 1);

    // the banner carries the effective config digest and seed
    CHECK(ra.out.find("config digest:") != std::string::npos);
    CHECK(ra.out.find("seed: 3") != std::string::npos);
}

TEST_CASE("seed flag and environment override change the effective config") {
    testutil::TempDir tmp("cli_seed");
    {
        std::ofstream cfg(tmp.path / "cfg.toml");
        cfg << "seed = 1\n[surrogate]\nepochs = 5\n[coupler]\ntrain_size = 6\neval_size = 3\n";
    }
    const auto base = run_cli(tmp.path, "run surrogate --config cfg.toml --report r1.json");
    REQUIRE(base.exit_code == 0);
    CHECK(base.out.find("seed: 1") != std::string::npos);

    const auto flagged = run_cli(tmp.path, "run surrogate --config cfg.toml --seed 9 --report r2.json");
    CHECK(flagged.out.find("seed: 9") != std::string::npos);
    CHECK(nlohmann::json::parse(slurp(tmp.path / "r2.json")).at("seed") == 9);

    const auto env = run_cli(tmp.path, "run surrogate --config cfg.toml --report r3.json",
                             "XTALFLOW_SEED=5");
    CHECK(env.out.find("seed: 5") != std::string::npos);
}

TEST_CASE("replay subcommand reproduces the recorded counters") {
    testutil::TempDir tmp("cli_replay");
    const auto fixture = testutil::data_dir() / "fixtures" / "fe2o3_trace.json";
    const auto r = run_cli(tmp.path, "replay " + fixture.string() + " --report rep.json");
    REQUIRE(r.exit_code == 0);
    const auto j = nlohmann::json::parse(slurp(tmp.path / "rep.json"));
    CHECK(j.at("ai_calls") == 9);
    CHECK(j.at("oracle_calls") == 5);
    CHECK(j.at("iterations") == 50);
    CHECK(j.at("unique_survivors") == 14);
}

TEST_CASE("depot subcommands") {
    testutil::TempDir tmp("cli_depot");
    // one canonical JSON structure and one POSCAR
    xtalflow::CrystalStructure nacl(xtalflow::Lattice::cubic(4.1),
                                    {xtalflow::ElementId(11), xtalflow::ElementId(17)},
                                    {{0, 0, 0}, {0.5, 0.5, 0.5}});
    xtalflow::write_structure_file(nacl, tmp.path / "nacl.json");
    {
        std::ofstream poscar(tmp.path / "mgo.vasp");
        poscar << "MgO cell\n1.0\n4.2 0 0\n0 4.2 0\n0 0 4.2\nMg O\n1 1\nDirect\n"
               << "0.0 0.0 0.0\n0.5 0.5 0.5\n";
    }
    {
        std::ofstream cfg(tmp.path / "cfg.toml");
        cfg << "[depot]\npath = \"store\"\n";
    }
    auto r = run_cli(tmp.path, "depot --config cfg.toml ingest nacl.json mgo.vasp");
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.find("mat_000001") != std::string::npos);
    CHECK(r.out.find("mat_000002") != std::string::npos);

    r = run_cli(tmp.path, "depot --config cfg.toml search --composition NaCl");
    CHECK(r.out.find("mat_000001") != std::string::npos);
    r = run_cli(tmp.path, "depot --config cfg.toml search --composition KBr");
    CHECK(r.out.find("mat_") == std::string::npos);

    r = run_cli(tmp.path, "depot --config cfg.toml stats");
    const auto stats_start = r.out.find('{');
    REQUIRE(stats_start != std::string::npos);
    const auto j = nlohmann::json::parse(r.out.substr(stats_start));
    CHECK(j.at("total_records") == 2);
    CHECK(j.at("crystal_system_fractions").at("cubic") == 1.0);
}

TEST_CASE("generate then screen round trip") {
    testutil::TempDir tmp("cli_genscreen");
    {
        std::ofstream cfg(tmp.path / "cfg.toml");
        cfg << "seed = 4\n[diffgen]\nT = 8\nepochs = 10\nhidden = 24\nmax_atoms = 4\ncorpus_size = 4\n";
    }
    auto r = run_cli(tmp.path,
                     "generate --config cfg.toml --mode csp --composition NaCl --count 5 --out gen");
    REQUIRE(r.exit_code == 0);
    const auto manifest = nlohmann::json::parse(slurp(tmp.path / "gen" / "manifest.json"));
    CHECK(manifest.at("requested") == 5);
    CHECK(manifest.at("mode") == "csp");
    CHECK(manifest.at("files").size() == manifest.at("produced").get<std::size_t>());

    r = run_cli(tmp.path, "screen --config cfg.toml --in gen --out screen.json");
    REQUIRE(r.exit_code == 0);
    const auto report = nlohmann::json::parse(slurp(tmp.path / "screen.json"));
    CHECK(report.at("input_count") == manifest.at("produced"));
    CHECK(report.at("schema_version") == 1);
}

TEST_CASE("train-denoiser and generate from checkpoint") {
    testutil::TempDir tmp("cli_ckpt");
    {
        std::ofstream cfg(tmp.path / "cfg.toml");
        cfg << "seed = 2\n[diffgen]\nT = 6\nepochs = 8\nhidden = 24\nmax_atoms = 3\ncorpus_size = 3\n";
    }
    auto r = run_cli(tmp.path, "train-denoiser --config cfg.toml --out dn.json");
    REQUIRE(r.exit_code == 0);
    {
        std::ofstream cfg(tmp.path / "cfg2.toml");
        cfg << "seed = 2\n[diffgen]\nT = 6\nhidden = 24\nmax_atoms = 3\ncheckpoint = \"dn.json\"\n";
    }
    r = run_cli(tmp.path, "generate --config cfg2.toml --count 3 --out gen2");
    REQUIRE(r.exit_code == 0);
    CHECK(std::filesystem::exists(tmp.path / "gen2" / "manifest.json"));
}
