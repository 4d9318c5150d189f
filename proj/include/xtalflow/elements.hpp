#pragma once

// Embedded element property table for Z = 1..86 (H through Rn).
// Electronegativity is the Pauling value (0.0 where none is defined, i.e.
// the lighter noble gases). Covalent radii follow the widely used Cordero
// single-bond values in Angstrom. Oxidation states list the common states
// only, capped at six per element; they feed the charge-neutrality screen.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "errors.hpp"

namespace xtalflow {

inline constexpr int kMaxAtomicNumber = 86;

struct ElementData {
    int z;
    const char* symbol;
    int period;
    int group;  // lanthanides carried as group 3
    double electronegativity;
    double covalent_radius;
    std::array<std::int8_t, 6> states;
    int n_states;
};

namespace detail {

inline constexpr std::array<ElementData, kMaxAtomicNumber> kElements = {{
    {1, "H", 1, 1, 2.20, 0.31, {-1, 1, 0, 0, 0, 0}, 2},
    {2, "He", 1, 18, 0.00, 0.28, {0, 0, 0, 0, 0, 0}, 1},
    {3, "Li", 2, 1, 0.98, 1.28, {1, 0, 0, 0, 0, 0}, 1},
    {4, "Be", 2, 2, 1.57, 0.96, {2, 0, 0, 0, 0, 0}, 1},
    {5, "B", 2, 13, 2.04, 0.84, {3, 0, 0, 0, 0, 0}, 1},
    {6, "C", 2, 14, 2.55, 0.76, {-4, -2, 2, 4, 0, 0}, 4},
    {7, "N", 2, 15, 3.04, 0.71, {-3, 3, 5, 0, 0, 0}, 3},
    {8, "O", 2, 16, 3.44, 0.66, {-2, 0, 0, 0, 0, 0}, 1},
    {9, "F", 2, 17, 3.98, 0.57, {-1, 0, 0, 0, 0, 0}, 1},
    {10, "Ne", 2, 18, 0.00, 0.58, {0, 0, 0, 0, 0, 0}, 1},
    {11, "Na", 3, 1, 0.93, 1.66, {1, 0, 0, 0, 0, 0}, 1},
    {12, "Mg", 3, 2, 1.31, 1.41, {2, 0, 0, 0, 0, 0}, 1},
    {13, "Al", 3, 13, 1.61, 1.21, {3, 0, 0, 0, 0, 0}, 1},
    {14, "Si", 3, 14, 1.90, 1.11, {-4, 4, 0, 0, 0, 0}, 2},
    {15, "P", 3, 15, 2.19, 1.07, {-3, 3, 5, 0, 0, 0}, 3},
    {16, "S", 3, 16, 2.58, 1.05, {-2, 4, 6, 0, 0, 0}, 3},
    {17, "Cl", 3, 17, 3.16, 1.02, {-1, 1, 3, 5, 7, 0}, 5},
    {18, "Ar", 3, 18, 0.00, 1.06, {0, 0, 0, 0, 0, 0}, 1},
    {19, "K", 4, 1, 0.82, 2.03, {1, 0, 0, 0, 0, 0}, 1},
    {20, "Ca", 4, 2, 1.00, 1.76, {2, 0, 0, 0, 0, 0}, 1},
    {21, "Sc", 4, 3, 1.36, 1.70, {3, 0, 0, 0, 0, 0}, 1},
    {22, "Ti", 4, 4, 1.54, 1.60, {2, 3, 4, 0, 0, 0}, 3},
    {23, "V", 4, 5, 1.63, 1.53, {2, 3, 4, 5, 0, 0}, 4},
    {24, "Cr", 4, 6, 1.66, 1.39, {2, 3, 6, 0, 0, 0}, 3},
    {25, "Mn", 4, 7, 1.55, 1.39, {2, 3, 4, 7, 0, 0}, 4},
    {26, "Fe", 4, 8, 1.83, 1.32, {2, 3, 0, 0, 0, 0}, 2},
    {27, "Co", 4, 9, 1.88, 1.26, {2, 3, 0, 0, 0, 0}, 2},
    {28, "Ni", 4, 10, 1.91, 1.24, {2, 0, 0, 0, 0, 0}, 1},
    {29, "Cu", 4, 11, 1.90, 1.32, {1, 2, 0, 0, 0, 0}, 2},
    {30, "Zn", 4, 12, 1.65, 1.22, {2, 0, 0, 0, 0, 0}, 1},
    {31, "Ga", 4, 13, 1.81, 1.22, {3, 0, 0, 0, 0, 0}, 1},
    {32, "Ge", 4, 14, 2.01, 1.20, {-4, 2, 4, 0, 0, 0}, 3},
    {33, "As", 4, 15, 2.18, 1.19, {-3, 3, 5, 0, 0, 0}, 3},
    {34, "Se", 4, 16, 2.55, 1.20, {-2, 4, 6, 0, 0, 0}, 3},
    {35, "Br", 4, 17, 2.96, 1.20, {-1, 1, 3, 5, 0, 0}, 4},
    {36, "Kr", 4, 18, 3.00, 1.16, {0, 0, 0, 0, 0, 0}, 1},
    {37, "Rb", 5, 1, 0.82, 2.20, {1, 0, 0, 0, 0, 0}, 1},
    {38, "Sr", 5, 2, 0.95, 1.95, {2, 0, 0, 0, 0, 0}, 1},
    {39, "Y", 5, 3, 1.22, 1.90, {3, 0, 0, 0, 0, 0}, 1},
    {40, "Zr", 5, 4, 1.33, 1.75, {4, 0, 0, 0, 0, 0}, 1},
    {41, "Nb", 5, 5, 1.60, 1.64, {3, 5, 0, 0, 0, 0}, 2},
    {42, "Mo", 5, 6, 2.16, 1.54, {2, 3, 4, 6, 0, 0}, 4},
    {43, "Tc", 5, 7, 1.90, 1.47, {4, 7, 0, 0, 0, 0}, 2},
    {44, "Ru", 5, 8, 2.20, 1.46, {2, 3, 4, 0, 0, 0}, 3},
    {45, "Rh", 5, 9, 2.28, 1.42, {3, 0, 0, 0, 0, 0}, 1},
    {46, "Pd", 5, 10, 2.20, 1.39, {2, 4, 0, 0, 0, 0}, 2},
    {47, "Ag", 5, 11, 1.93, 1.45, {1, 0, 0, 0, 0, 0}, 1},
    {48, "Cd", 5, 12, 1.69, 1.44, {2, 0, 0, 0, 0, 0}, 1},
    {49, "In", 5, 13, 1.78, 1.42, {1, 3, 0, 0, 0, 0}, 2},
    {50, "Sn", 5, 14, 1.96, 1.39, {2, 4, 0, 0, 0, 0}, 2},
    {51, "Sb", 5, 15, 2.05, 1.39, {-3, 3, 5, 0, 0, 0}, 3},
    {52, "Te", 5, 16, 2.10, 1.38, {-2, 4, 6, 0, 0, 0}, 3},
    {53, "I", 5, 17, 2.66, 1.39, {-1, 1, 5, 7, 0, 0}, 4},
    {54, "Xe", 5, 18, 2.60, 1.40, {0, 0, 0, 0, 0, 0}, 1},
    {55, "Cs", 6, 1, 0.79, 2.44, {1, 0, 0, 0, 0, 0}, 1},
    {56, "Ba", 6, 2, 0.89, 2.15, {2, 0, 0, 0, 0, 0}, 1},
    {57, "La", 6, 3, 1.10, 2.07, {3, 0, 0, 0, 0, 0}, 1},
    {58, "Ce", 6, 3, 1.12, 2.04, {3, 4, 0, 0, 0, 0}, 2},
    {59, "Pr", 6, 3, 1.13, 2.03, {3, 0, 0, 0, 0, 0}, 1},
    {60, "Nd", 6, 3, 1.14, 2.01, {3, 0, 0, 0, 0, 0}, 1},
    {61, "Pm", 6, 3, 1.13, 1.99, {3, 0, 0, 0, 0, 0}, 1},
    {62, "Sm", 6, 3, 1.17, 1.98, {2, 3, 0, 0, 0, 0}, 2},
    {63, "Eu", 6, 3, 1.20, 1.98, {2, 3, 0, 0, 0, 0}, 2},
    {64, "Gd", 6, 3, 1.20, 1.96, {3, 0, 0, 0, 0, 0}, 1},
    {65, "Tb", 6, 3, 1.22, 1.94, {3, 4, 0, 0, 0, 0}, 2},
    {66, "Dy", 6, 3, 1.22, 1.92, {3, 0, 0, 0, 0, 0}, 1},
    {67, "Ho", 6, 3, 1.23, 1.92, {3, 0, 0, 0, 0, 0}, 1},
    {68, "Er", 6, 3, 1.24, 1.89, {3, 0, 0, 0, 0, 0}, 1},
    {69, "Tm", 6, 3, 1.25, 1.90, {2, 3, 0, 0, 0, 0}, 2},
    {70, "Yb", 6, 3, 1.10, 1.87, {2, 3, 0, 0, 0, 0}, 2},
    {71, "Lu", 6, 3, 1.27, 1.87, {3, 0, 0, 0, 0, 0}, 1},
    {72, "Hf", 6, 4, 1.30, 1.75, {4, 0, 0, 0, 0, 0}, 1},
    {73, "Ta", 6, 5, 1.50, 1.70, {5, 0, 0, 0, 0, 0}, 1},
    {74, "W", 6, 6, 2.36, 1.62, {4, 6, 0, 0, 0, 0}, 2},
    {75, "Re", 6, 7, 1.90, 1.51, {4, 7, 0, 0, 0, 0}, 2},
    {76, "Os", 6, 8, 2.20, 1.44, {4, 0, 0, 0, 0, 0}, 1},
    {77, "Ir", 6, 9, 2.20, 1.41, {3, 4, 0, 0, 0, 0}, 2},
    {78, "Pt", 6, 10, 2.28, 1.36, {2, 4, 0, 0, 0, 0}, 2},
    {79, "Au", 6, 11, 2.54, 1.36, {1, 3, 0, 0, 0, 0}, 2},
    {80, "Hg", 6, 12, 2.00, 1.32, {1, 2, 0, 0, 0, 0}, 2},
    {81, "Tl", 6, 13, 1.62, 1.45, {1, 3, 0, 0, 0, 0}, 2},
    {82, "Pb", 6, 14, 2.33, 1.46, {2, 4, 0, 0, 0, 0}, 2},
    {83, "Bi", 6, 15, 2.02, 1.48, {3, 5, 0, 0, 0, 0}, 2},
    {84, "Po", 6, 16, 2.00, 1.40, {-2, 2, 4, 0, 0, 0}, 3},
    {85, "At", 6, 17, 2.20, 1.50, {-1, 1, 0, 0, 0, 0}, 2},
    {86, "Rn", 6, 18, 0.00, 1.50, {0, 0, 0, 0, 0, 0}, 1},
}};

}  // namespace detail

// Identity of a chemical element; constructible only for Z in [1, 86].
class ElementId {
  public:
    explicit ElementId(int atomic_number) : z_(atomic_number) {
        if (z_ < 1 || z_ > kMaxAtomicNumber)
            throw UnsupportedElementError("atomic number out of table range: " + std::to_string(z_));
    }

    static ElementId from_symbol(std::string_view symbol) {
        for (const auto& e : detail::kElements)
            if (symbol == e.symbol) return ElementId(e.z);
        throw UnsupportedElementError("unknown element symbol: " + std::string(symbol));
    }

    int atomic_number() const { return z_; }
    const ElementData& data() const { return detail::kElements[static_cast<std::size_t>(z_ - 1)]; }
    std::string symbol() const { return data().symbol; }

    friend bool operator==(ElementId a, ElementId b) { return a.z_ == b.z_; }
    friend bool operator!=(ElementId a, ElementId b) { return a.z_ != b.z_; }
    friend bool operator<(ElementId a, ElementId b) { return a.z_ < b.z_; }

  private:
    int z_;
};

}  // namespace xtalflow
