#pragma once

// Global configuration: one file, sections per module, strict validation
// (unknown keys are rejected by name). TOML-style `key = value` sections or
// an equivalent JSON object are both accepted. Environment variables with
// the XTALFLOW_ prefix override file values, e.g. XTALFLOW_SEED or
// XTALFLOW_ORACLE_LATENCY_UNITS_PER_CALL.

#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "coupler.hpp"

namespace xtalflow {

namespace detail {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline nlohmann::json parse_toml_scalar(const std::string& raw, const std::string& key) {
    const std::string v = trim(raw);
    if (v.empty()) throw ConfigError("empty value for key '" + key + "'");
    if (v == "true") return true;
    if (v == "false") return false;
    if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
    try {
        std::size_t pos = 0;
        if (v.find_first_of(".eE") == std::string::npos &&
            v.find("inf") == std::string::npos && v.find("nan") == std::string::npos) {
            const long long n = std::stoll(v, &pos);
            if (pos == v.size()) return n;
        }
        const double d = std::stod(v, &pos);
        if (pos == v.size()) return d;
    } catch (const std::exception&) {
    }
    throw ConfigError("cannot parse value '" + v + "' for key '" + key + "'");
}

// Minimal TOML subset: comments, [section] headers, scalar key = value.
inline nlohmann::json parse_toml_subset(std::istream& in) {
    nlohmann::json root = nlohmann::json::object();
    nlohmann::json* section = &root;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        if (t.front() == '[') {
            if (t.back() != ']') throw ConfigError("bad section header at line " + std::to_string(lineno));
            const std::string name = trim(t.substr(1, t.size() - 2));
            if (name.empty()) throw ConfigError("empty section name at line " + std::to_string(lineno));
            root[name] = root.value(name, nlohmann::json::object());
            section = &root[name];
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ConfigError("expected key = value at line " + std::to_string(lineno));
        const std::string key = trim(t.substr(0, eq));
        if (key.empty()) throw ConfigError("empty key at line " + std::to_string(lineno));
        (*section)[key] = parse_toml_scalar(t.substr(eq + 1), key);
    }
    return root;
}

inline std::string upper(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return s;
}

}  // namespace detail

struct GlobalConfig {
    std::uint64_t seed = 0;
    int workers = 1;

    OracleConfig oracle;

    struct SurrogateSection {
        TrainConfig trainer;
        int ensemble_size = 4;
        std::string confidence_method = "ensemble";  // or "mc_dropout"
        int mc_passes = 16;
        double mc_drop_rate = 0.1;
        std::string checkpoint;  // optional path; empty -> train in-run
    } surrogate;

    struct DiffgenSection {
        DenoiserTrainConfig trainer;
        std::string policy = "empirical";  // empirical | uniform | hybrid
        int switch_after = 0;
        std::string checkpoint;  // optional path; empty -> train in-run
        int corpus_size = 12;    // bootstrap corpus when training in-run
    } diffgen;

    ScreenOptions screen;
    std::string oxidation_table_path;

    struct CouplerSection {
        // surrogate pattern
        int train_size = 80;
        int eval_size = 40;
        std::string property = "formation_energy";
        // directive pattern
        double y_target = -1.0;
        int batch = 20;
        int iterations = 5;
        std::string sampler = "diffusion";  // diffusion | memorizing
        int pool_size = 40;                 // memorizing sampler pool
        bool relax_survivors = true;
        int relax_max_steps = 5;
        double relax_step_size = 0.02;
        double relax_tol = 1e-4;
        // coordinate pattern
        std::string composition = "Fe2O3";
        double bound = 1.0;
        int max_iterations = 50;
        double tau_pred = 0.1;
        double tau_gen = 0.5;
        int flush_threshold = 5;
        double md_rmsd_d = 0.5;
        int md_epochs = 200;
        double md_learning_rate = 0.1;
    } coupler;

    std::string depot_path = "depot";

    // effective config as JSON (post-override), for the digest
    nlohmann::json effective = nlohmann::json::object();
};

namespace detail {

struct KeySpec {
    const char* section;  // "" for top level
    const char* key;
};

inline const std::vector<KeySpec>& known_keys() {
    static const std::vector<KeySpec> keys = {
        {"", "seed"},
        {"", "workers"},
        {"oracle", "cutoff_radius"},
        {"oracle", "pair_strength"},
        {"oracle", "ionic_weight"},
        {"oracle", "latency_units_per_call"},
        {"oracle", "gap_base"},
        {"oracle", "gap_chi_scale"},
        {"oracle", "gap_density_scale"},
        {"oracle", "real_latency"},
        {"surrogate", "k"},
        {"surrogate", "n_basis"},
        {"surrogate", "r_max"},
        {"surrogate", "m"},
        {"surrogate", "epochs"},
        {"surrogate", "learning_rate"},
        {"surrogate", "batch"},
        {"surrogate", "clip_norm"},
        {"surrogate", "ensemble_size"},
        {"surrogate", "confidence_method"},
        {"surrogate", "mc_passes"},
        {"surrogate", "mc_drop_rate"},
        {"surrogate", "checkpoint"},
        {"diffgen", "T"},
        {"diffgen", "epochs"},
        {"diffgen", "learning_rate"},
        {"diffgen", "batch"},
        {"diffgen", "hidden"},
        {"diffgen", "max_atoms"},
        {"diffgen", "clip_norm"},
        {"diffgen", "lambda_lattice"},
        {"diffgen", "lambda_coords"},
        {"diffgen", "lambda_composition"},
        {"diffgen", "policy"},
        {"diffgen", "switch_after"},
        {"diffgen", "checkpoint"},
        {"diffgen", "corpus_size"},
        {"screen", "max_components"},
        {"screen", "symmetry_tol"},
        {"screen", "rmsd_threshold"},
        {"screen", "oxidation_table"},
        {"coupler", "train_size"},
        {"coupler", "eval_size"},
        {"coupler", "property"},
        {"coupler", "y_target"},
        {"coupler", "batch"},
        {"coupler", "iterations"},
        {"coupler", "sampler"},
        {"coupler", "pool_size"},
        {"coupler", "relax_survivors"},
        {"coupler", "relax_max_steps"},
        {"coupler", "relax_step_size"},
        {"coupler", "relax_tol"},
        {"coupler", "composition"},
        {"coupler", "bound"},
        {"coupler", "max_iterations"},
        {"coupler", "tau_pred"},
        {"coupler", "tau_gen"},
        {"coupler", "flush_threshold"},
        {"coupler", "md_rmsd_d"},
        {"coupler", "md_epochs"},
        {"coupler", "md_learning_rate"},
        {"depot", "path"},
    };
    return keys;
}

inline void reject_unknown(const nlohmann::json& root) {
    std::set<std::string> sections;
    std::set<std::string> flat;
    for (const auto& ks : known_keys()) {
        if (ks.section[0] == '\0') flat.insert(ks.key);
        else {
            sections.insert(ks.section);
            flat.insert(std::string(ks.section) + "." + ks.key);
        }
    }
    for (const auto& [key, value] : root.items()) {
        if (value.is_object()) {
            if (!sections.count(key)) throw ConfigError("unknown config section '" + key + "'");
            for (const auto& [k2, v2] : value.items())
                if (!flat.count(key + "." + k2))
                    throw ConfigError("unknown config key '" + key + "." + k2 + "'");
        } else if (!flat.count(key)) {
            throw ConfigError("unknown config key '" + key + "'");
        }
    }
}

inline void apply_env_overrides(nlohmann::json& root) {
    for (const auto& ks : known_keys()) {
        std::string name = "XTALFLOW_";
        if (ks.section[0] != '\0') name += upper(ks.section) + "_";
        name += upper(ks.key);
        const char* v = std::getenv(name.c_str());
        if (!v) continue;
        const nlohmann::json parsed = parse_toml_scalar(v, name);
        if (ks.section[0] == '\0') root[ks.key] = parsed;
        else root[std::string(ks.section)][ks.key] = parsed;
    }
}

template <typename T>
T get_or(const nlohmann::json& root, const char* section, const char* key, T fallback) {
    const nlohmann::json* obj = &root;
    if (section[0] != '\0') {
        const auto it = root.find(section);
        if (it == root.end()) return fallback;
        obj = &*it;
    }
    const auto it = obj->find(key);
    if (it == obj->end()) return fallback;
    try {
        return it->get<T>();
    } catch (const nlohmann::json::exception&) {
        const std::string where = section[0] ? std::string(section) + "." + key : std::string(key);
        throw ConfigError("config key '" + where + "' has the wrong type");
    }
}

}  // namespace detail

inline GlobalConfig config_from_json(nlohmann::json root) {
    detail::apply_env_overrides(root);
    detail::reject_unknown(root);
    GlobalConfig c;
    using detail::get_or;
    c.seed = get_or<std::uint64_t>(root, "", "seed", c.seed);
    c.workers = get_or<int>(root, "", "workers", c.workers);
    if (c.workers < 1) throw ConfigError("workers must be >= 1");

    c.oracle.cutoff_radius = get_or(root, "oracle", "cutoff_radius", c.oracle.cutoff_radius);
    c.oracle.pair_strength = get_or(root, "oracle", "pair_strength", c.oracle.pair_strength);
    c.oracle.ionic_weight = get_or(root, "oracle", "ionic_weight", c.oracle.ionic_weight);
    c.oracle.latency_units_per_call =
        get_or(root, "oracle", "latency_units_per_call", c.oracle.latency_units_per_call);
    c.oracle.gap_base = get_or(root, "oracle", "gap_base", c.oracle.gap_base);
    c.oracle.gap_chi_scale = get_or(root, "oracle", "gap_chi_scale", c.oracle.gap_chi_scale);
    c.oracle.gap_density_scale = get_or(root, "oracle", "gap_density_scale", c.oracle.gap_density_scale);
    c.oracle.real_latency = get_or(root, "oracle", "real_latency", c.oracle.real_latency);
    c.oracle.validate();

    auto& sur = c.surrogate;
    sur.trainer.k = get_or(root, "surrogate", "k", sur.trainer.k);
    sur.trainer.n_basis = get_or(root, "surrogate", "n_basis", sur.trainer.n_basis);
    sur.trainer.r_max = get_or(root, "surrogate", "r_max", sur.trainer.r_max);
    sur.trainer.m = get_or(root, "surrogate", "m", sur.trainer.m);
    sur.trainer.epochs = get_or(root, "surrogate", "epochs", sur.trainer.epochs);
    sur.trainer.learning_rate = get_or(root, "surrogate", "learning_rate", sur.trainer.learning_rate);
    sur.trainer.batch = get_or(root, "surrogate", "batch", sur.trainer.batch);
    sur.trainer.clip_norm = get_or(root, "surrogate", "clip_norm", sur.trainer.clip_norm);
    sur.ensemble_size = get_or(root, "surrogate", "ensemble_size", sur.ensemble_size);
    sur.confidence_method = get_or(root, "surrogate", "confidence_method", sur.confidence_method);
    if (sur.confidence_method != "ensemble" && sur.confidence_method != "mc_dropout")
        throw ConfigError("surrogate.confidence_method must be 'ensemble' or 'mc_dropout'");
    sur.mc_passes = get_or(root, "surrogate", "mc_passes", sur.mc_passes);
    sur.mc_drop_rate = get_or(root, "surrogate", "mc_drop_rate", sur.mc_drop_rate);
    sur.checkpoint = get_or(root, "surrogate", "checkpoint", sur.checkpoint);

    auto& dg = c.diffgen;
    dg.trainer.T = get_or(root, "diffgen", "T", dg.trainer.T);
    dg.trainer.epochs = get_or(root, "diffgen", "epochs", dg.trainer.epochs);
    dg.trainer.learning_rate = get_or(root, "diffgen", "learning_rate", dg.trainer.learning_rate);
    dg.trainer.batch = get_or(root, "diffgen", "batch", dg.trainer.batch);
    dg.trainer.hidden = get_or(root, "diffgen", "hidden", dg.trainer.hidden);
    dg.trainer.max_atoms = get_or(root, "diffgen", "max_atoms", dg.trainer.max_atoms);
    dg.trainer.clip_norm = get_or(root, "diffgen", "clip_norm", dg.trainer.clip_norm);
    dg.trainer.lambdas.lattice = get_or(root, "diffgen", "lambda_lattice", dg.trainer.lambdas.lattice);
    dg.trainer.lambdas.coords = get_or(root, "diffgen", "lambda_coords", dg.trainer.lambdas.coords);
    dg.trainer.lambdas.composition =
        get_or(root, "diffgen", "lambda_composition", dg.trainer.lambdas.composition);
    dg.policy = get_or(root, "diffgen", "policy", dg.policy);
    if (dg.policy != "empirical" && dg.policy != "uniform" && dg.policy != "hybrid")
        throw ConfigError("diffgen.policy must be 'empirical', 'uniform' or 'hybrid'");
    dg.switch_after = get_or(root, "diffgen", "switch_after", dg.switch_after);
    dg.checkpoint = get_or(root, "diffgen", "checkpoint", dg.checkpoint);
    dg.corpus_size = get_or(root, "diffgen", "corpus_size", dg.corpus_size);

    c.screen.max_components = get_or(root, "screen", "max_components", c.screen.max_components);
    c.screen.symmetry_tol = get_or(root, "screen", "symmetry_tol", c.screen.symmetry_tol);
    c.screen.rmsd_threshold = get_or(root, "screen", "rmsd_threshold", c.screen.rmsd_threshold);
    c.oxidation_table_path = get_or(root, "screen", "oxidation_table", c.oxidation_table_path);
    if (!c.oxidation_table_path.empty()) {
        std::ifstream in(c.oxidation_table_path);
        if (!in) throw ConfigError("screen.oxidation_table path not resolvable: " + c.oxidation_table_path);
        c.screen.oxidation = OxidationTable::from_json(nlohmann::json::parse(in));
    }

    auto& cp = c.coupler;
    cp.train_size = get_or(root, "coupler", "train_size", cp.train_size);
    cp.eval_size = get_or(root, "coupler", "eval_size", cp.eval_size);
    cp.property = get_or(root, "coupler", "property", cp.property);
    if (cp.property != "formation_energy" && cp.property != "band_gap")
        throw ConfigError("coupler.property must be 'formation_energy' or 'band_gap'");
    cp.y_target = get_or(root, "coupler", "y_target", cp.y_target);
    cp.batch = get_or(root, "coupler", "batch", cp.batch);
    cp.iterations = get_or(root, "coupler", "iterations", cp.iterations);
    cp.sampler = get_or(root, "coupler", "sampler", cp.sampler);
    if (cp.sampler != "diffusion" && cp.sampler != "memorizing")
        throw ConfigError("coupler.sampler must be 'diffusion' or 'memorizing'");
    cp.pool_size = get_or(root, "coupler", "pool_size", cp.pool_size);
    cp.relax_survivors = get_or(root, "coupler", "relax_survivors", cp.relax_survivors);
    cp.relax_max_steps = get_or(root, "coupler", "relax_max_steps", cp.relax_max_steps);
    cp.relax_step_size = get_or(root, "coupler", "relax_step_size", cp.relax_step_size);
    cp.relax_tol = get_or(root, "coupler", "relax_tol", cp.relax_tol);
    cp.composition = get_or(root, "coupler", "composition", cp.composition);
    cp.bound = get_or(root, "coupler", "bound", cp.bound);
    cp.max_iterations = get_or(root, "coupler", "max_iterations", cp.max_iterations);
    cp.tau_pred = get_or(root, "coupler", "tau_pred", cp.tau_pred);
    cp.tau_gen = get_or(root, "coupler", "tau_gen", cp.tau_gen);
    cp.flush_threshold = get_or(root, "coupler", "flush_threshold", cp.flush_threshold);
    cp.md_rmsd_d = get_or(root, "coupler", "md_rmsd_d", cp.md_rmsd_d);
    cp.md_epochs = get_or(root, "coupler", "md_epochs", cp.md_epochs);
    cp.md_learning_rate = get_or(root, "coupler", "md_learning_rate", cp.md_learning_rate);

    c.depot_path = get_or(root, "depot", "path", c.depot_path);

    c.effective = std::move(root);
    return c;
}

inline GlobalConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    const auto first = text.find_first_not_of(" \t\r\n");
    nlohmann::json root;
    if (first != std::string::npos && text[first] == '{') {
        try {
            root = nlohmann::json::parse(text);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("config JSON parse error: ") + e.what());
        }
    } else {
        std::istringstream is(text);
        root = detail::parse_toml_subset(is);
    }
    return config_from_json(std::move(root));
}

inline GlobalConfig default_config() { return config_from_json(nlohmann::json::object()); }

// Digest of the effective (post-override) configuration, printed with every
// run for reproducibility.
inline std::string config_digest(const GlobalConfig& c) {
    const std::string dump = c.effective.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char ch : dump) h = detail::fnv1a(h, static_cast<std::uint64_t>(static_cast<unsigned char>(ch)));
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace xtalflow
