#include <catch2/catch_amalgamated.hpp>

#include "xtalflow/coupler.hpp"
#include "xtalflow/oracle.hpp"
#include "xtalflow/surrogate.hpp"

#include "helpers.hpp"

using namespace xtalflow;

namespace {

// labels stay bounded because the toy sampler enforces a hardcore floor
std::vector<LabeledStructure> oracle_dataset(int count, std::uint64_t seed) {
    const OracleConfig oc;
    Rng rng(seed);
    const ToySamplerConfig toy;
    std::vector<LabeledStructure> data;
    while (static_cast<int>(data.size()) < count) {
        const auto s = make_random_structure(rng, toy);
        data.emplace_back(s, formation_energy(s, oc).value);
    }
    return data;
}

CrystalStructure permuted_copy(const CrystalStructure& s, Rng& rng) {
    std::vector<std::size_t> perm(s.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    std::vector<ElementId> species;
    std::vector<Vec3> coords;
    for (std::size_t i : perm) {
        species.push_back(s.species()[i]);
        coords.push_back(s.frac_coords()[i]);
    }
    return CrystalStructure(s.lattice(), species, coords);
}

}  // namespace

TEST_CASE("k-hot embedding") {
    const auto goldens = testutil::load_goldens();
    const auto fe_bits = khot_bits(ElementId(26));
    std::vector<int> got(fe_bits.begin(), fe_bits.end());
    std::sort(got.begin(), got.end());
    CHECK(got == goldens.at("fe_khot_bits").get<std::vector<int>>());

    const auto v = khot_vector(ElementId(26));
    double sum = 0.0;
    for (double x : v) sum += x;
    CHECK(sum == 5.0);  // one bit per property group
    CHECK(v.size() == static_cast<std::size_t>(kNodeFeatureDim));
}

TEST_CASE("rbf expansion") {
    const int n_basis = 8;
    const double r_max = 6.0;
    const double spacing = r_max / (n_basis - 1);
    for (int m = 0; m < n_basis; ++m) {
        const auto v = rbf_expand(spacing * m, n_basis, r_max);
        CHECK(v[static_cast<std::size_t>(m)] == Catch::Approx(1.0));
    }
}

TEST_CASE("featurize") {
    SECTION("single atom uses periodic self-images") {
        CrystalStructure one(Lattice::cubic(3.0), {ElementId(29)}, {{0.2, 0.2, 0.2}});
        const auto g = featurize(one, 1, 8, 6.0);
        REQUIRE(g.edges.size() == 1);
        CHECK(g.edges[0].source == 0);
        CHECK(g.edges[0].neighbor == 0);
        CHECK(g.edges[0].distance == Catch::Approx(3.0));
    }

    SECTION("every node carries exactly k edges with positive distances") {
        Rng rng(61);
        const auto s = testutil::random_structure(rng, 2, 6);
        const int k = 5;
        const auto g = featurize(s, k, 8, 6.0);
        REQUIRE(g.edges.size() == s.size() * static_cast<std::size_t>(k));
        for (const auto& e : g.edges) CHECK(e.distance > 0.0);
        for (int i = 0; i < g.n_nodes; ++i)
            for (int e = 0; e < k; ++e) CHECK(g.edges[static_cast<std::size_t>(i * k + e)].source == i);
    }

    SECTION("empty neighborhood") {
        CrystalStructure one(Lattice::cubic(5.0), {ElementId(29)}, {{0, 0, 0}});
        CHECK_THROWS_AS(featurize(one, 1, 8, 2.0), EmptyNeighborhoodError);
    }

    CHECK_THROWS_AS(featurize(CrystalStructure(Lattice::cubic(3), {ElementId(8)}, {{0, 0, 0}}), 0, 8, 6.0),
                    UsageError);
}

TEST_CASE("attention weights") {
    SECTION("softmax of a singleton is 1 regardless of weights") {
        SurrogateModel model;
        model.k = 1;
        model.init_weights(5);
        CrystalStructure one(Lattice::cubic(3.0), {ElementId(29)}, {{0, 0, 0}});
        const auto attn = attention_weights(model, featurize(one, 1, model.n_basis, model.r_max));
        REQUIRE(attn.size() == 1);
        CHECK(attn[0] == 1.0);
    }

    SECTION("identical edge features split evenly") {
        SurrogateModel m2;
        m2.k = 2;
        m2.init_weights(6);
        CrystalStructure one(Lattice::cubic(3.0), {ElementId(29)}, {{0, 0, 0}});
        const auto attn = attention_weights(m2, featurize(one, 2, m2.n_basis, m2.r_max));
        REQUIRE(attn.size() == 2);
        CHECK(attn[0] == Catch::Approx(0.5).margin(1e-12));
        CHECK(attn[1] == Catch::Approx(0.5).margin(1e-12));
    }

    SECTION("each neighborhood sums to 1 within 1e-12") {
        SurrogateModel m6;
        m6.k = 6;
        m6.init_weights(7);
        Rng rng(67);
        for (int trial = 0; trial < 20; ++trial) {
            const auto s = testutil::random_structure(rng, 2, 7);
            const auto g = featurize(s, m6.k, m6.n_basis, m6.r_max);
            const auto attn = attention_weights(m6, g);
            for (std::size_t i = 0; i < s.size(); ++i) {
                double sum = 0.0;
                for (int e = 0; e < m6.k; ++e)
                    sum += attn[i * static_cast<std::size_t>(m6.k) + static_cast<std::size_t>(e)];
                CHECK(std::abs(sum - 1.0) < 1e-12);
            }
        }
    }
}

TEST_CASE("prediction invariances") {
    SurrogateModel model;
    model.init_weights(9);
    Rng rng(71);
    for (int trial = 0; trial < 25; ++trial) {
        const auto s = testutil::random_structure(rng, 2, 8);
        const double base = predict_structure(model, s);

        const auto p = permuted_copy(s, rng);
        CHECK(std::abs(predict_structure(model, p) - base) < 1e-10);

        std::vector<Vec3> shifted = s.frac_coords();
        const Vec3 t{rng.uniform(), rng.uniform(), rng.uniform()};
        for (auto& f : shifted)
            for (int k = 0; k < 3; ++k) f[k] += t[k];
        CHECK(std::abs(predict_structure(model, s.with_frac_coords(shifted)) - base) < 1e-10);
    }

    // graph/model mismatch is a usage error
    const auto s = testutil::random_structure(rng, 2, 4);
    const auto g = featurize(s, model.k + 1, model.n_basis, model.r_max);
    CHECK_THROWS_AS(predict(model, g), UsageError);
}

TEST_CASE("analytic gradients match central finite differences") {
    SurrogateModel model;
    model.m = 8;
    model.n_basis = 8;
    model.k = 4;
    model.init_weights(13);
    Rng rng(77);
    const auto s = testutil::random_structure(rng, 3, 6);
    const auto graph = featurize(s, model.k, model.n_basis, model.r_max);
    const double target = -1.0;

    auto loss_of = [&](const SurrogateModel& m) {
        const double err = predict(m, graph) - target;
        return err * err;
    };

    SurrogateGrad grad(model);
    const auto fw = detail::forward(model, graph);
    detail::backward(model, graph, fw, 2.0 * (fw.prediction - target), grad);

    auto param_refs = [](SurrogateModel& m) {
        std::vector<double*> out;
        for (auto& w : m.phi) out.push_back(&w);
        for (auto& w : m.alpha) out.push_back(&w);
        for (auto& w : m.w_msg) out.push_back(&w);
        out.push_back(&m.b_msg);
        out.push_back(&m.a_out);
        out.push_back(&m.b_out);
        return out;
    };
    std::vector<double> grad_flat;
    for (double g : grad.phi) grad_flat.push_back(g);
    for (double g : grad.alpha) grad_flat.push_back(g);
    for (double g : grad.w_msg) grad_flat.push_back(g);
    grad_flat.push_back(grad.b_msg);
    grad_flat.push_back(grad.a_out);
    grad_flat.push_back(grad.b_out);

    // many phi rows belong to elements absent from the structure and carry
    // exactly zero gradient; keep probing until 10 informative ones checked
    const double h = 1e-6;
    int checked = 0;
    Rng pick(79);
    for (int probe = 0; probe < 200 && checked < 10; ++probe) {
        const std::size_t idx = pick.below(grad_flat.size());
        SurrogateModel mp = model;
        auto refs = param_refs(mp);
        *refs[idx] += h;
        const double lp = loss_of(mp);
        *refs[idx] -= 2 * h;
        const double lm = loss_of(mp);
        const double fd = (lp - lm) / (2 * h);
        if (std::abs(fd) > 1e-10) {
            CHECK(std::abs(grad_flat[idx] - fd) / std::abs(fd) < 1e-5);
            ++checked;
        }
    }
    CHECK(checked == 10);
}

TEST_CASE("training") {
    SECTION("constant labels are fit everywhere") {
        Rng rng(83);
        const ToySamplerConfig toy;
        std::vector<LabeledStructure> data;
        for (int i = 0; i < 10; ++i) data.emplace_back(make_random_structure(rng, toy), 1.7);
        TrainConfig tc;
        tc.epochs = 6000;
        tc.learning_rate = 0.25;
        tc.batch = 10;
        tc.seed = 1;
        tc.m = 8;
        tc.n_basis = 8;
        tc.k = 4;
        tc.weight_decay = 3e-3;  // pulls the message weights to zero on a flat target
        const auto model = train(data, tc);
        for (const auto& [s, y] : data) CHECK(std::abs(predict_structure(model, s) - 1.7) < 1e-3);
        for (int i = 0; i < 5; ++i)
            CHECK(std::abs(predict_structure(model, make_random_structure(rng, toy)) - 1.7) < 1e-3);
    }

    SECTION("training reduces MAE below initialization") {
        const auto data = oracle_dataset(200, 87);
        TrainConfig tc;
        tc.epochs = 60;
        tc.learning_rate = 0.02;
        tc.seed = 2;
        SurrogateModel init;
        init.k = tc.k;
        init.n_basis = tc.n_basis;
        init.r_max = tc.r_max;
        init.m = tc.m;
        init.init_weights(tc.seed);
        double init_mae = 0.0;
        for (const auto& [s, y] : data) init_mae += std::abs(predict_structure(init, s) - y);
        init_mae /= static_cast<double>(data.size());

        const auto model = train(data, tc);
        CHECK(model.final_train_mae < init_mae);
        CHECK(model.epochs_trained == tc.epochs);
        CHECK_FALSE(model.dataset_digest.empty());
    }

    SECTION("divergence raises with the epoch index") {
        const auto data = oracle_dataset(8, 91);
        TrainConfig tc;
        tc.epochs = 50;
        tc.learning_rate = 1e18;
        tc.clip_norm = 0.0;  // disable clipping so the blow-up is observable
        CHECK_THROWS_AS(train(data, tc), TrainingDivergedError);
    }

    CHECK_THROWS_AS(train({}, TrainConfig{}), UsageError);
}

TEST_CASE("ensemble confidence") {
    SECTION("population variance formula") {
        SurrogateModel a;
        a.init_weights(1);
        a.a_out = 0.0;
        a.b_out = 0.0;  // predicts 0
        SurrogateModel b = a;
        b.b_out = 2.0;  // predicts 2
        Ensemble e{{a, b}};
        Rng rng(95);
        const auto s = testutil::random_structure(rng, 2, 4);
        const auto c = confidence(e, featurize(s, a.k, a.n_basis, a.r_max));
        CHECK(c.mean == Catch::Approx(1.0));
        CHECK(c.variance == Catch::Approx(1.0));
    }

    SECTION("single member and identical members have zero variance") {
        SurrogateModel a;
        a.init_weights(3);
        Rng rng(97);
        const auto s = testutil::random_structure(rng, 2, 5);
        const auto g = featurize(s, a.k, a.n_basis, a.r_max);
        CHECK(confidence(Ensemble{{a}}, g).variance == 0.0);
        CHECK(confidence(Ensemble{{a, a, a}}, g).variance == Catch::Approx(0.0).margin(1e-24));
    }

    SECTION("variance is nonnegative across random inputs") {
        const auto data = oracle_dataset(30, 101);
        TrainConfig tc;
        tc.epochs = 20;
        tc.learning_rate = 0.02;
        const auto e = train_ensemble(data, tc, 3);
        Rng rng(103);
        for (int trial = 0; trial < 10; ++trial) {
            const auto s = testutil::random_structure(rng, 2, 5);
            const auto g = featurize(s, tc.k, tc.n_basis, tc.r_max);
            CHECK(confidence(e, g).variance >= 0.0);
        }
        CHECK_THROWS_AS(confidence(Ensemble{}, featurize(data[0].first, tc.k, tc.n_basis, tc.r_max)),
                        UsageError);
    }

    SECTION("mc dropout knob") {
        SurrogateModel a;
        a.init_weights(5);
        Rng rng(107);
        const auto s = testutil::random_structure(rng, 2, 5);
        const auto g = featurize(s, a.k, a.n_basis, a.r_max);
        const auto one = confidence_mc_dropout(a, g, 1, 0.2, 42);
        CHECK(one.variance == 0.0);
        const auto many = confidence_mc_dropout(a, g, 16, 0.2, 42);
        CHECK(many.variance >= 0.0);
        // deterministic in the seed
        const auto again = confidence_mc_dropout(a, g, 16, 0.2, 42);
        CHECK(many.mean == again.mean);
        CHECK(many.variance == again.variance);
    }
}

TEST_CASE("fine tuning") {
    const auto data = oracle_dataset(40, 113);
    TrainConfig tc;
    tc.epochs = 40;
    tc.learning_rate = 0.02;
    tc.seed = 7;
    const auto model = train(data, tc);

    SECTION("fine-tuning on the training set keeps MAE within 10%") {
        TrainConfig ftc = tc;
        ftc.epochs = 10;
        const auto tuned = fine_tune(model, data, ftc);
        CHECK(tuned.finetune_generation == 1);
        double mae = 0.0;
        for (const auto& [s, y] : data) mae += std::abs(predict_structure(tuned, s) - y);
        mae /= static_cast<double>(data.size());
        CHECK(mae <= model.final_train_mae * 1.10 + 1e-12);
    }

    SECTION("zero-epoch fine-tune is a no-op on the weights") {
        TrainConfig ftc = tc;
        ftc.epochs = 0;
        const auto tuned = fine_tune(model, {data[0]}, ftc);
        CHECK(tuned.phi == model.phi);
        CHECK(tuned.alpha == model.alpha);
        CHECK(tuned.w_msg == model.w_msg);
        CHECK(tuned.b_out == model.b_out);
        CHECK(tuned.finetune_generation == model.finetune_generation + 1);
    }

    SECTION("oracle labels on low-confidence structures shrink ensemble variance") {
        const auto e = train_ensemble(data, tc, 3);
        const auto buffer = oracle_dataset(10, 127);  // unseen structures
        std::vector<double> before;
        for (const auto& [s, y] : buffer)
            before.push_back(confidence(e, featurize(s, tc.k, tc.n_basis, tc.r_max)).variance);

        Ensemble tuned = e;
        TrainConfig ftc = tc;
        ftc.epochs = 60;
        for (auto& member : tuned.members) member = fine_tune(member, buffer, ftc);

        std::vector<double> after;
        for (const auto& [s, y] : buffer)
            after.push_back(confidence(tuned, featurize(s, tc.k, tc.n_basis, tc.r_max)).variance);

        auto median = [](std::vector<double> v) {
            std::sort(v.begin(), v.end());
            return v[v.size() / 2];
        };
        CHECK(median(after) < median(before));
    }

    CHECK_THROWS_AS(fine_tune(model, {}, tc), UsageError);
}

TEST_CASE("checkpoint round trip") {
    const auto data = oracle_dataset(10, 131);
    TrainConfig tc;
    tc.epochs = 5;
    const auto model = train(data, tc);
    const auto restored = surrogate_from_json(surrogate_to_json(model));
    Rng rng(137);
    for (int trial = 0; trial < 5; ++trial) {
        const auto s = testutil::random_structure(rng, 2, 5);
        CHECK(predict_structure(restored, s) == predict_structure(model, s));
    }
    CHECK(restored.dataset_digest == model.dataset_digest);

    const auto ens = train_ensemble(data, tc, 2);
    const auto ens2 = ensemble_from_json(ensemble_to_json(ens));
    CHECK(ens2.members.size() == 2);

    CHECK_THROWS_AS(surrogate_from_json(nlohmann::json{{"kind", "denoiser"}}), UsageError);
}
