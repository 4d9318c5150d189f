#include <catch2/catch_amalgamated.hpp>

#include "xtalflow/io.hpp"
#include "xtalflow/matcore.hpp"

#include "helpers.hpp"

using namespace xtalflow;

TEST_CASE("element table") {
    CHECK(ElementId(26).symbol() == "Fe");
    CHECK(ElementId::from_symbol("O").atomic_number() == 8);
    CHECK(ElementId(86).symbol() == "Rn");
    CHECK_THROWS_AS(ElementId(0), UnsupportedElementError);
    CHECK_THROWS_AS(ElementId(87), UnsupportedElementError);
    CHECK_THROWS_AS(ElementId::from_symbol("Xx"), UnsupportedElementError);
    // every supported element carries at least one oxidation state
    for (int z = 1; z <= kMaxAtomicNumber; ++z) CHECK(ElementId(z).data().n_states >= 1);
}

TEST_CASE("lattice invariants") {
    CHECK_THROWS_AS(Lattice(Mat3{{{1, 0, 0}, {0, 1, 0}, {0, 0, 0}}}), InvariantError);
    // left-handed cell rejected
    CHECK_THROWS_AS(Lattice(Mat3{{{0, 1, 0}, {1, 0, 0}, {0, 0, 1}}}), InvariantError);
    CHECK_THROWS_AS(Lattice(Mat3{{{0.05, 0, 0}, {0, 1, 0}, {0, 0, 1}}}), InvariantError);
    const Lattice lat = Lattice::cubic(4.0);
    CHECK(lat.volume() == Catch::Approx(64.0));
}

TEST_CASE("structure invariants and wrapping") {
    const Lattice lat = Lattice::cubic(3.0);
    CHECK_THROWS_AS(CrystalStructure(lat, {}, {}), InvariantError);
    CHECK_THROWS_AS(CrystalStructure(lat, {ElementId(8)}, {{0, 0, 0}, {0.5, 0.5, 0.5}}), InvariantError);
    std::vector<ElementId> many(81, ElementId(8));
    std::vector<Vec3> coords(81, Vec3{0, 0, 0});
    CHECK_THROWS_AS(CrystalStructure(lat, many, coords), InvariantError);

    CrystalStructure s(lat, {ElementId(8)}, {{1.25, -0.25, 2.0}});
    CHECK(s.frac_coords()[0][0] == Catch::Approx(0.25));
    CHECK(s.frac_coords()[0][1] == Catch::Approx(0.75));
    CHECK(s.frac_coords()[0][2] == Catch::Approx(0.0));
}

TEST_CASE("to_cartesian") {
    CrystalStructure ident(Lattice::cubic(1.0), {ElementId(29)}, {{0.5, 0.5, 0.5}});
    const Vec3 a = to_cartesian(ident, 0);
    CHECK(a[0] == Catch::Approx(0.5));
    CHECK(a[1] == Catch::Approx(0.5));
    CHECK(a[2] == Catch::Approx(0.5));

    CrystalStructure cubic4(Lattice::cubic(4.0), {ElementId(29)}, {{0.25, 0, 0}});
    const Vec3 b = to_cartesian(cubic4, 0);
    CHECK(b[0] == Catch::Approx(1.0));
    CHECK(b[1] == Catch::Approx(0.0));

    CrystalStructure tri(Lattice(Mat3{{{2, 0, 0}, {1, 2, 0}, {0, 1, 2}}}), {ElementId(29)},
                         {{0.5, 0.5, 0.5}});
    const Vec3 c = to_cartesian(tri, 0);
    CHECK(c[0] == Catch::Approx(1.5));
    CHECK(c[1] == Catch::Approx(1.5));
    CHECK(c[2] == Catch::Approx(1.0));

    CHECK_THROWS_AS(to_cartesian(tri, 1), UsageError);
}

TEST_CASE("to_cartesian round trip through the inverse") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const auto s = testutil::random_structure(rng);
        const Mat3 inv = s.lattice().inverse_rows();
        for (std::size_t i = 0; i < s.size(); ++i) {
            const Vec3 back = row_times_mat(to_cartesian(s, i), inv);
            for (int k = 0; k < 3; ++k)
                CHECK(std::abs(back[k] - s.frac_coords()[i][k]) < 1e-10);
        }
    }
}

TEST_CASE("min_image_distance") {
    CrystalStructure s(Lattice::cubic(2.0), {ElementId(8), ElementId(8)},
                       {{0.1, 0, 0}, {0.9, 0, 0}});
    CHECK(min_image_distance(s, 0, 1) == Catch::Approx(0.4));

    CrystalStructure same(Lattice::cubic(2.0), {ElementId(8), ElementId(8)},
                          {{0.3, 0.3, 0.3}, {0.3, 0.3, 0.3}});
    CHECK(min_image_distance(same, 0, 1) == Catch::Approx(0.0).margin(1e-12));

    // self-image distance is the shortest lattice translation
    CrystalStructure one(Lattice::cubic(2.0), {ElementId(8)}, {{0.2, 0.7, 0.1}});
    CHECK(min_image_distance(one, 0, 0) == Catch::Approx(2.0));

    // skewed cell against the 5^3 brute-force oracle
    CrystalStructure skew(Lattice(Mat3{{{4.0, 0, 0}, {2.2, 3.6, 0}, {1.1, 0.7, 3.9}}}),
                          {ElementId(11), ElementId(17)}, {{0.05, 0.95, 0.5}, {0.9, 0.1, 0.02}});
    CHECK(min_image_distance(skew, 0, 1) ==
          Catch::Approx(testutil::min_image_bruteforce(skew, 0, 1)).epsilon(1e-12));
}

TEST_CASE("min_image_distance properties") {
    Rng rng(7);
    for (int trial = 0; trial < 40; ++trial) {
        const auto s = testutil::random_structure(rng, 2, 6);
        // symmetry, exhaustive over pairs
        for (std::size_t i = 0; i < s.size(); ++i)
            for (std::size_t j = 0; j < s.size(); ++j)
                CHECK(min_image_distance(s, i, j) == Catch::Approx(min_image_distance(s, j, i)));
        // never exceeds half the longest body diagonal
        const auto& L = s.lattice().rows();
        double longest = 0.0;
        for (int sx = -1; sx <= 1; sx += 2)
            for (int sy = -1; sy <= 1; sy += 2) {
                const Vec3 d{L[0][0] * sx + L[1][0] * sy + L[2][0],
                             L[0][1] * sx + L[1][1] * sy + L[2][1],
                             L[0][2] * sx + L[1][2] * sy + L[2][2]};
                longest = std::max(longest, norm(d));
            }
        for (std::size_t i = 0; i < s.size(); ++i)
            for (std::size_t j = i + 1; j < s.size(); ++j)
                CHECK(min_image_distance(s, i, j) <= longest / 2.0 + 1e-9);
    }
}

TEST_CASE("structure_hash") {
    Rng rng(13);
    const auto s = testutil::random_structure(rng, 4, 8);

    // permutation invariance
    std::vector<std::size_t> perm(s.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    std::vector<ElementId> species;
    std::vector<Vec3> coords;
    for (std::size_t i : perm) {
        species.push_back(s.species()[i]);
        coords.push_back(s.frac_coords()[i]);
    }
    const CrystalStructure permuted(s.lattice(), species, coords);
    CHECK(structure_hash(s) == structure_hash(permuted));

    // integer lattice translation wraps to the same stored coordinates
    std::vector<Vec3> shifted = s.frac_coords();
    for (auto& f : shifted) f[0] += 1.0;
    CHECK(structure_hash(s) == structure_hash(s.with_frac_coords(shifted)));

    // moving one atom by 10x the tolerance changes the digest
    std::vector<Vec3> moved = s.frac_coords();
    moved[0][2] += 10.0 * 1e-3;
    CHECK(structure_hash(s, 1e-3) != structure_hash(s.with_frac_coords(moved), 1e-3));
}

TEST_CASE("structure_hash invariance property") {
    Rng rng(17);
    for (int trial = 0; trial < 30; ++trial) {
        const auto s = testutil::random_structure(rng, 2, 6);
        std::vector<Vec3> shifted = s.frac_coords();
        const double dx = static_cast<double>(rng.uniform_int(-3, 3));
        const double dy = static_cast<double>(rng.uniform_int(-3, 3));
        for (auto& f : shifted) {
            f[0] += dx;
            f[1] += dy;
        }
        CHECK(structure_hash(s) == structure_hash(s.with_frac_coords(shifted)));
    }
}

TEST_CASE("composition") {
    const Composition c = Composition::parse("Fe2O3");
    CHECK(c.total_atoms() == 5);
    CHECK(c.distinct_elements() == 2);
    CHECK(c.key() == "Fe2O3");
    CHECK(Composition::parse("Fe4O6").reduced_key() == "Fe2O3");
    CHECK(Composition::parse("NaCl").key() == "Cl1Na1");
    CHECK_THROWS_AS(Composition::parse("2Fe"), UsageError);
    CHECK_THROWS_AS(Composition::parse("Fe0O3"), UsageError);
}

TEST_CASE("crystal system classification") {
    auto mk = [](Mat3 rows) { return Lattice(rows); };
    CHECK(crystal_system(Lattice::cubic(4)) == CrystalSystem::Cubic);
    CHECK(crystal_system(mk({{{4, 0, 0}, {0, 4, 0}, {0, 0, 6}}})) == CrystalSystem::Tetragonal);
    CHECK(crystal_system(mk({{{4, 0, 0}, {0, 5, 0}, {0, 0, 6}}})) == CrystalSystem::Orthorhombic);
    // hexagonal: a = b, gamma = 120
    CHECK(crystal_system(mk({{{4, 0, 0}, {-2, 3.4641016151377544, 0}, {0, 0, 6}}})) ==
          CrystalSystem::Hexagonal);
    // monoclinic: single non-right angle
    CHECK(crystal_system(mk({{{4, 0, 0}, {0, 5, 0}, {1.0, 0, 5.9}}})) == CrystalSystem::Monoclinic);
    // triclinic: everything generic
    CHECK(crystal_system(mk({{{4, 0, 0}, {1.2, 4.8, 0}, {0.7, 1.1, 5.6}}})) == CrystalSystem::Triclinic);
    // trigonal/rhombohedral: equal lengths, equal non-right angles
    const double c30 = 0.2588190451;  // cos(75 deg)
    Mat3 rh{{{4, 0, 0},
             {4 * c30, 4 * std::sqrt(1 - c30 * c30), 0},
             {4 * c30, 4 * (c30 - c30 * c30) / std::sqrt(1 - c30 * c30), 0}}};
    rh[2][2] = std::sqrt(16.0 - rh[2][0] * rh[2][0] - rh[2][1] * rh[2][1]);
    CHECK(crystal_system(Lattice(rh)) == CrystalSystem::Trigonal);
}

TEST_CASE("structure json round trip") {
    Rng rng(23);
    const auto s = testutil::random_structure(rng);
    const auto j = structure_to_json(s);
    const auto back = structure_from_json(j);
    REQUIRE(back.size() == s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        CHECK(back.species()[i] == s.species()[i]);
        for (int k = 0; k < 3; ++k)
            CHECK(back.frac_coords()[i][k] == Catch::Approx(s.frac_coords()[i][k]).margin(1e-12));
    }
    CHECK_THROWS_AS(structure_from_json(nlohmann::json{{"lattice", 1}}), UsageError);
}

TEST_CASE("poscar import") {
    const std::string poscar =
        "rutile-like test cell\n"
        "1.0\n"
        "  4.00 0.00 0.00\n"
        "  0.00 4.00 0.00\n"
        "  0.00 0.00 3.00\n"
        "  Ti O\n"
        "  1 2\n"
        "Direct\n"
        "  0.0 0.0 0.0\n"
        "  0.3 0.3 0.0\n"
        "  0.7 0.7 0.0\n";
    const auto s = structure_from_poscar(poscar);
    REQUIRE(s.size() == 3);
    CHECK(s.species()[0].symbol() == "Ti");
    CHECK(s.species()[1].symbol() == "O");
    CHECK(s.frac_coords()[1][0] == Catch::Approx(0.3));

    const std::string cart =
        "cartesian variant\n"
        "2.0\n"
        "  2.00 0.00 0.00\n"
        "  0.00 2.00 0.00\n"
        "  0.00 0.00 2.00\n"
        "  Cu\n"
        "  1\n"
        "Cartesian\n"
        "  1.0 1.0 1.0\n";
    const auto sc = structure_from_poscar(cart);
    CHECK(sc.frac_coords()[0][0] == Catch::Approx(0.5));  // 2.0 A in a 4 A cell

    CHECK_THROWS_AS(structure_from_poscar("only a comment\n"), UsageError);
}
