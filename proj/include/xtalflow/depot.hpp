#pragma once

// Persistent structure/property store backed by one JSON file per record
// under <dir>/records/, written via temp-file + atomic rename. Indexes are
// rebuilt from the record files on open; <dir>/index.json is a convenience
// snapshot, never authoritative.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "io.hpp"
#include "matcore.hpp"

namespace xtalflow {

enum class Provenance { Corpus, Oracle, Generated };

inline const char* to_string(Provenance p) {
    switch (p) {
        case Provenance::Corpus: return "corpus";
        case Provenance::Oracle: return "oracle";
        case Provenance::Generated: return "generated";
    }
    return "?";
}

inline Provenance provenance_from_string(const std::string& s) {
    if (s == "corpus") return Provenance::Corpus;
    if (s == "oracle") return Provenance::Oracle;
    if (s == "generated") return Provenance::Generated;
    throw UsageError("unknown provenance: " + s);
}

struct DepotRecord {
    std::string id;  // empty on ingest -> assigned sequentially
    CrystalStructure structure;
    std::vector<PropertyValue> properties;
    Provenance provenance = Provenance::Corpus;
    std::string created_at;
};

namespace detail {

inline nlohmann::json property_to_json(const PropertyValue& p) {
    return nlohmann::json{{"kind", to_string(p.kind)}, {"value", p.value}, {"source", to_string(p.source)}};
}

inline PropertyValue property_from_json(const nlohmann::json& j) {
    const std::string kind = j.at("kind");
    const std::string source = j.at("source");
    PropertyKind k = kind == "formation_energy" ? PropertyKind::FormationEnergy : PropertyKind::BandGap;
    PropertySource s = source == "oracle" ? PropertySource::Oracle
                       : source == "surrogate" ? PropertySource::Surrogate : PropertySource::Depot;
    return PropertyValue(k, j.at("value").get<double>(), s);
}

inline std::string iso_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t tt = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&tt, &tm);
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace detail

struct DepotStats {
    long total_records = 0;
    std::map<std::string, long> element_histogram;     // symbol -> atom count
    std::map<int, long> atom_count_histogram;          // N -> records
    std::map<std::string, double> crystal_system_fractions;
};

class Depot {
  public:
    explicit Depot(std::filesystem::path dir) : dir_(std::move(dir)) {
        namespace fs = std::filesystem;
        std::error_code ec;
        fs::create_directories(records_dir(), ec);
        if (ec) throw StorageError("cannot create depot directory: " + dir_.string());
        for (const auto& entry : fs::directory_iterator(records_dir())) {
            if (entry.path().extension() != ".json") continue;
            try {
                std::ifstream in(entry.path());
                nlohmann::json j = nlohmann::json::parse(in);
                DepotRecord rec{j.at("id").get<std::string>(),
                                structure_from_json(j.at("structure")),
                                {},
                                provenance_from_string(j.at("provenance").get<std::string>()),
                                j.value("created_at", "")};
                for (const auto& pj : j.at("properties")) rec.properties.push_back(detail::property_from_json(pj));
                index_record(std::move(rec));
            } catch (const nlohmann::json::exception& e) {
                throw StorageError("corrupt depot record " + entry.path().string() + ": " + e.what());
            }
        }
    }

    // Assigns sequential ids (or keeps an unused explicit id), indexes by
    // digest and reduced formula, and persists each record atomically.
    // Idempotent: an already-present digest returns the existing id.
    std::vector<std::string> ingest(std::vector<DepotRecord> records) {
        std::vector<std::string> ids;
        ids.reserve(records.size());
        for (auto& rec : records) {
            const std::string digest = structure_hash(rec.structure);
            if (const auto it = by_digest_.find(digest); it != by_digest_.end()) {
                ids.push_back(it->second);
                continue;
            }
            if (rec.id.empty() || records_.count(rec.id)) rec.id = next_id();
            if (rec.created_at.empty()) rec.created_at = detail::iso_now();
            persist(rec);
            ids.push_back(rec.id);
            index_record(std::move(rec));
        }
        write_index_snapshot();
        return ids;
    }

    std::optional<DepotRecord> search_digest(const std::string& digest) const {
        const auto it = by_digest_.find(digest);
        if (it == by_digest_.end()) return std::nullopt;
        return records_.at(it->second);
    }

    // All records whose reduced formula matches (Fe4O6 finds Fe2O3).
    std::vector<DepotRecord> search_composition(const Composition& comp) const {
        std::vector<DepotRecord> out;
        const auto it = by_formula_.find(comp.reduced_key());
        if (it == by_formula_.end()) return out;
        for (const auto& id : it->second) out.push_back(records_.at(id));
        return out;
    }

    DepotStats stats() const {
        DepotStats st;
        st.total_records = static_cast<long>(records_.size());
        std::map<std::string, long> systems;
        for (const auto& [id, rec] : records_) {
            for (const auto& e : rec.structure.species()) st.element_histogram[e.symbol()] += 1;
            st.atom_count_histogram[static_cast<int>(rec.structure.size())] += 1;
            systems[to_string(crystal_system(rec.structure.lattice()))] += 1;
        }
        for (const auto& [name, count] : systems)
            st.crystal_system_fractions[name] =
                static_cast<double>(count) / static_cast<double>(records_.size());
        return st;
    }

    std::size_t size() const { return records_.size(); }
    const std::filesystem::path& dir() const { return dir_; }

    std::vector<std::string> all_ids() const {
        std::vector<std::string> ids;
        ids.reserve(records_.size());
        for (const auto& [id, rec] : records_) ids.push_back(id);
        return ids;
    }

    const DepotRecord& record(const std::string& id) const {
        const auto it = records_.find(id);
        if (it == records_.end()) throw StorageError("no such depot record: " + id);
        return it->second;
    }

  private:
    std::filesystem::path records_dir() const { return dir_ / "records"; }

    std::string next_id() {
        char buf[32];
        std::snprintf(buf, sizeof buf, "mat_%06ld", ++id_counter_);
        while (records_.count(buf)) std::snprintf(buf, sizeof buf, "mat_%06ld", ++id_counter_);
        return buf;
    }

    void index_record(DepotRecord rec) {
        // track the numeric suffix so sequential ids continue after reopen
        if (rec.id.rfind("mat_", 0) == 0) {
            const long n = std::strtol(rec.id.c_str() + 4, nullptr, 10);
            id_counter_ = std::max(id_counter_, n);
        }
        by_digest_[structure_hash(rec.structure)] = rec.id;
        by_formula_[rec.structure.composition().reduced_key()].push_back(rec.id);
        records_.emplace(rec.id, std::move(rec));
    }

    void persist(const DepotRecord& rec) const {
        nlohmann::json j{{"schema_version", 1},
                         {"id", rec.id},
                         {"structure", structure_to_json(rec.structure)},
                         {"provenance", to_string(rec.provenance)},
                         {"created_at", rec.created_at}};
        j["properties"] = nlohmann::json::array();
        for (const auto& p : rec.properties) j["properties"].push_back(detail::property_to_json(p));
        const auto final_path = records_dir() / (rec.id + ".json");
        const auto tmp_path = records_dir() / (rec.id + ".json.tmp");
        {
            std::ofstream out(tmp_path);
            if (!out) throw StorageError("cannot write " + tmp_path.string());
            out << j.dump(2) << "\n";
        }
        std::error_code ec;
        std::filesystem::rename(tmp_path, final_path, ec);
        if (ec) throw StorageError("cannot commit " + final_path.string());
    }

    void write_index_snapshot() const {
        nlohmann::json j{{"schema_version", 1}};
        j["by_digest"] = by_digest_;
        nlohmann::json formulas;
        for (const auto& [key, ids] : by_formula_) formulas[key] = ids;
        j["by_formula"] = formulas;
        const auto tmp_path = dir_ / "index.json.tmp";
        {
            std::ofstream out(tmp_path);
            if (!out) return;  // snapshot is best-effort
            out << j.dump(2) << "\n";
        }
        std::error_code ec;
        std::filesystem::rename(tmp_path, dir_ / "index.json", ec);
    }

    std::filesystem::path dir_;
    std::map<std::string, DepotRecord> records_;
    std::map<std::string, std::string> by_digest_;
    std::map<std::string, std::vector<std::string>> by_formula_;
    long id_counter_ = 0;
};

// Queue of oracle-labeled low-confidence samples awaiting a fine-tune pass.
class FineTuneBuffer {
  public:
    struct Entry {
        std::string structure_id;
        CrystalStructure structure;
        PropertyValue value;
    };

    explicit FineTuneBuffer(std::size_t flush_threshold) : threshold_(flush_threshold) {}

    void push(Entry entry) {
        if (entry.value.source != PropertySource::Oracle)
            throw UsageError("fine-tune buffer accepts oracle-sourced values only");
        pending_.push_back(std::move(entry));
    }

    bool flush_due() const { return pending_.size() >= threshold_; }
    std::size_t size() const { return pending_.size(); }

    std::vector<Entry> flush() {
        std::vector<Entry> out;
        out.swap(pending_);
        return out;
    }

  private:
    std::size_t threshold_;
    std::vector<Entry> pending_;
};

}  // namespace xtalflow
