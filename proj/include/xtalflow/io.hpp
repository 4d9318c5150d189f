#pragma once

// Structure file I/O. Canonical format is a JSON document with fields
// `lattice` (3x3 row-major, Angstrom), `species` (element symbols) and
// `frac_coords` (Nx3). POSCAR-style plain text is supported as an import
// converter.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "matcore.hpp"

namespace xtalflow {

inline nlohmann::json structure_to_json(const CrystalStructure& s) {
    nlohmann::json j;
    j["lattice"] = s.lattice().rows();
    nlohmann::json species = nlohmann::json::array();
    for (const auto& e : s.species()) species.push_back(e.symbol());
    j["species"] = std::move(species);
    j["frac_coords"] = s.frac_coords();
    return j;
}

inline CrystalStructure structure_from_json(const nlohmann::json& j) {
    if (!j.contains("lattice") || !j.contains("species") || !j.contains("frac_coords"))
        throw UsageError("structure JSON needs lattice, species and frac_coords");
    Mat3 rows = j.at("lattice").get<Mat3>();
    std::vector<ElementId> species;
    for (const auto& sym : j.at("species")) species.push_back(ElementId::from_symbol(sym.get<std::string>()));
    std::vector<Vec3> frac = j.at("frac_coords").get<std::vector<Vec3>>();
    return CrystalStructure(Lattice(rows), std::move(species), std::move(frac));
}

// POSCAR import: comment line, scale, 3 lattice rows, symbol line, count
// line, optional selective-dynamics flag, then Direct or Cartesian coords.
inline CrystalStructure structure_from_poscar(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    auto next_line = [&]() -> std::string {
        while (std::getline(in, line)) {
            if (line.find_first_not_of(" \t\r\n") != std::string::npos) return line;
        }
        throw UsageError("truncated POSCAR file");
    };
    next_line();  // comment
    double scale = std::stod(next_line());
    if (scale <= 0.0) throw UsageError("POSCAR volume-style negative scale not supported");
    Mat3 rows;
    for (int i = 0; i < 3; ++i) {
        std::istringstream ls(next_line());
        for (int j = 0; j < 3; ++j) {
            ls >> rows[i][j];
            rows[i][j] *= scale;
        }
        if (!ls) throw UsageError("bad POSCAR lattice row");
    }
    std::istringstream symline(next_line());
    std::vector<std::string> symbols;
    for (std::string tok; symline >> tok;) symbols.push_back(tok);
    if (symbols.empty() || std::isdigit(static_cast<unsigned char>(symbols[0][0])))
        throw UsageError("POSCAR without a symbol line is not supported");
    std::istringstream cntline(next_line());
    std::vector<int> counts;
    for (int c; cntline >> c;) counts.push_back(c);
    if (counts.size() != symbols.size()) throw UsageError("POSCAR symbol/count mismatch");

    std::string mode = next_line();
    if (mode[0] == 'S' || mode[0] == 's') mode = next_line();  // selective dynamics
    const bool direct = (mode[0] == 'D' || mode[0] == 'd');
    const bool cartesian = (mode[0] == 'C' || mode[0] == 'c' || mode[0] == 'K' || mode[0] == 'k');
    if (!direct && !cartesian) throw UsageError("POSCAR coordinate mode not recognized: " + mode);

    std::vector<ElementId> species;
    std::vector<Vec3> frac;
    const Lattice lat(rows);
    const Mat3 inv = lat.inverse_rows();
    for (std::size_t s = 0; s < symbols.size(); ++s) {
        const ElementId elem = ElementId::from_symbol(symbols[s]);
        for (int k = 0; k < counts[s]; ++k) {
            std::istringstream cs(next_line());
            Vec3 v;
            cs >> v[0] >> v[1] >> v[2];
            if (!cs) throw UsageError("bad POSCAR coordinate line");
            if (cartesian) v = row_times_mat(v * scale, inv);
            species.push_back(elem);
            frac.push_back(v);
        }
    }
    return CrystalStructure(lat, std::move(species), std::move(frac));
}

// Reads .json (canonical) or POSCAR-style text, sniffing by content.
inline CrystalStructure read_structure_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw StorageError("cannot open " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{')
        return structure_from_json(nlohmann::json::parse(text));
    return structure_from_poscar(text);
}

inline void write_structure_file(const CrystalStructure& s, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw StorageError("cannot write " + path.string());
    out << structure_to_json(s).dump(2) << "\n";
}

}  // namespace xtalflow
