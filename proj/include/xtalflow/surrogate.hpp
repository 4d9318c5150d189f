#pragma once

// Trainable property predictor over the featurized graph: per-edge scalar
// attention (leaky ReLU + softmax over each neighborhood), learned scalar
// messages, mean aggregation over neighbors then nodes, affine output head.
// Gradients are hand-rolled reverse mode; tests cross-check them against
// central finite differences.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "featurize.hpp"
#include "rng.hpp"

namespace xtalflow {

inline constexpr double kLeakySlope = 0.01;

struct SurrogateModel {
    // architecture
    int h = kNodeFeatureDim;  // node feature width
    int m = 16;               // node projection width
    int k = 6;                // neighbors per node
    int n_basis = 16;         // RBF centers
    double r_max = 6.0;       // Angstrom

    // weights
    std::vector<double> phi;    // h x m, row-major: phi[s*m + t]
    std::vector<double> alpha;  // q = n_basis + m
    std::vector<double> w_msg;  // q
    double b_msg = 0.0;
    double a_out = 1.0;
    double b_out = 0.0;

    // training metadata
    std::uint64_t seed = 0;
    int epochs_trained = 0;
    int finetune_generation = 0;
    double final_train_mae = 0.0;
    std::string dataset_digest;

    int q() const { return n_basis + m; }

    std::size_t parameter_count() const {
        return static_cast<std::size_t>(h) * m + 2 * static_cast<std::size_t>(q()) + 3;
    }

    void init_weights(std::uint64_t init_seed) {
        seed = init_seed;
        Rng rng(init_seed);
        phi.assign(static_cast<std::size_t>(h) * m, 0.0);
        for (auto& w : phi) w = 0.1 * rng.gauss();
        alpha.assign(static_cast<std::size_t>(q()), 0.0);
        for (auto& w : alpha) w = 0.1 * rng.gauss();
        w_msg.assign(static_cast<std::size_t>(q()), 0.0);
        for (auto& w : w_msg) w = 0.1 * rng.gauss();
        b_msg = 0.0;
        a_out = 1.0;
        b_out = 0.0;
    }
};

struct SurrogateGrad {
    std::vector<double> phi, alpha, w_msg;
    double b_msg = 0.0, a_out = 0.0, b_out = 0.0;

    explicit SurrogateGrad(const SurrogateModel& model)
        : phi(model.phi.size(), 0.0), alpha(model.alpha.size(), 0.0), w_msg(model.w_msg.size(), 0.0) {}
};

namespace detail {

struct Forward {
    double prediction = 0.0;
    // cached activations for the backward pass
    std::vector<std::vector<double>> proj;   // n_nodes x m, phi(h_i)
    std::vector<std::vector<double>> f;      // per edge, q
    std::vector<double> zeta;                // per edge
    std::vector<double> attn;                // per edge, softmax within node
    std::vector<double> msg;                 // per edge
    std::vector<double> node_value;          // per node
};

inline void check_compatible(const SurrogateModel& model, const MaterialGraph& graph) {
    if (graph.k != model.k || graph.n_basis != model.n_basis)
        throw UsageError("graph was featurized with different (k, n_basis) than the model");
}

// Optional multiplicative mask on the edge feature vector (MC dropout).
inline Forward forward(const SurrogateModel& model, const MaterialGraph& graph,
                       const std::vector<std::vector<double>>* edge_mask = nullptr) {
    check_compatible(model, graph);
    const int m = model.m, nb = model.n_basis, q = model.q();
    Forward fw;
    fw.proj.resize(graph.node_features.size());
    for (std::size_t i = 0; i < graph.node_features.size(); ++i) {
        fw.proj[i].assign(static_cast<std::size_t>(m), 0.0);
        const auto& hfeat = graph.node_features[i];
        for (int s = 0; s < model.h; ++s) {
            if (hfeat[static_cast<std::size_t>(s)] == 0.0) continue;
            const double hv = hfeat[static_cast<std::size_t>(s)];
            for (int t = 0; t < m; ++t)
                fw.proj[i][static_cast<std::size_t>(t)] += hv * model.phi[static_cast<std::size_t>(s) * m + t];
        }
    }

    const std::size_t ne = graph.edges.size();
    fw.f.resize(ne);
    fw.zeta.resize(ne);
    fw.msg.resize(ne);
    fw.attn.resize(ne);
    for (std::size_t e = 0; e < ne; ++e) {
        const GraphEdge& edge = graph.edges[e];
        auto& fe = fw.f[e];
        fe.assign(static_cast<std::size_t>(q), 0.0);
        for (int r = 0; r < nb; ++r) fe[static_cast<std::size_t>(r)] = graph.edge_features[e][static_cast<std::size_t>(r)];
        const auto& pi = fw.proj[static_cast<std::size_t>(edge.source)];
        const auto& pj = fw.proj[static_cast<std::size_t>(edge.neighbor)];
        for (int t = 0; t < m; ++t) fe[static_cast<std::size_t>(nb + t)] = pi[static_cast<std::size_t>(t)] + pj[static_cast<std::size_t>(t)];
        if (edge_mask)
            for (int r = 0; r < q; ++r) fe[static_cast<std::size_t>(r)] *= (*edge_mask)[e][static_cast<std::size_t>(r)];
        double z = 0.0, v = model.b_msg;
        for (int r = 0; r < q; ++r) {
            const double fr = fe[static_cast<std::size_t>(r)];
            const double u = fr > 0.0 ? fr : kLeakySlope * fr;
            z += model.alpha[static_cast<std::size_t>(r)] * u;
            v += model.w_msg[static_cast<std::size_t>(r)] * fr;
        }
        fw.zeta[e] = z;
        fw.msg[e] = v;
    }

    // softmax per neighborhood, then mean aggregation
    fw.node_value.assign(graph.node_features.size(), 0.0);
    double total = 0.0;
    const int k = model.k;
    for (int i = 0; i < graph.n_nodes; ++i) {
        const std::size_t base = static_cast<std::size_t>(i) * k;
        double zmax = fw.zeta[base];
        for (int e = 1; e < k; ++e) zmax = std::max(zmax, fw.zeta[base + e]);
        double denom = 0.0;
        for (int e = 0; e < k; ++e) {
            fw.attn[base + e] = std::exp(fw.zeta[base + e] - zmax);
            denom += fw.attn[base + e];
        }
        double node = 0.0;
        for (int e = 0; e < k; ++e) {
            fw.attn[base + e] /= denom;
            node += fw.attn[base + e] * fw.msg[base + e];
        }
        node /= static_cast<double>(k);
        fw.node_value[static_cast<std::size_t>(i)] = node;
        total += node;
    }
    const double pooled = total / static_cast<double>(graph.n_nodes);
    fw.prediction = model.a_out * pooled + model.b_out;
    return fw;
}

// Accumulates d(prediction)/d(theta) scaled by `upstream` into `grad`.
inline void backward(const SurrogateModel& model, const MaterialGraph& graph, const Forward& fw,
                     double upstream, SurrogateGrad& grad) {
    const int m = model.m, nb = model.n_basis, q = model.q(), k = model.k;
    const int n = graph.n_nodes;
    double pooled = 0.0;
    for (double v : fw.node_value) pooled += v;
    pooled /= static_cast<double>(n);

    grad.a_out += upstream * pooled;
    grad.b_out += upstream;
    const double g_pooled = upstream * model.a_out;

    std::vector<double> g_proj(static_cast<std::size_t>(n) * m, 0.0);
    for (int i = 0; i < n; ++i) {
        const std::size_t base = static_cast<std::size_t>(i) * k;
        const double g_node = g_pooled / static_cast<double>(n);

        // d node / d attn_e = msg_e / k ; d node / d msg_e = attn_e / k
        double dot = 0.0;  // sum_e attn_e * g_attn_e for softmax backward
        std::vector<double> g_attn(static_cast<std::size_t>(k));
        for (int e = 0; e < k; ++e) {
            g_attn[static_cast<std::size_t>(e)] = g_node * fw.msg[base + e] / static_cast<double>(k);
            dot += fw.attn[base + e] * g_attn[static_cast<std::size_t>(e)];
        }
        for (int e = 0; e < k; ++e) {
            const std::size_t eid = base + e;
            const double g_msg = g_node * fw.attn[eid] / static_cast<double>(k);
            const double g_zeta = fw.attn[eid] * (g_attn[static_cast<std::size_t>(e)] - dot);

            grad.b_msg += g_msg;
            const auto& fe = fw.f[eid];
            const GraphEdge& edge = graph.edges[eid];
            for (int r = 0; r < q; ++r) {
                const double fr = fe[static_cast<std::size_t>(r)];
                const double u = fr > 0.0 ? fr : kLeakySlope * fr;
                grad.alpha[static_cast<std::size_t>(r)] += g_zeta * u;
                grad.w_msg[static_cast<std::size_t>(r)] += g_msg * fr;
                // gradient into the edge feature itself
                const double g_f = g_zeta * model.alpha[static_cast<std::size_t>(r)] * (fr > 0.0 ? 1.0 : kLeakySlope) +
                                   g_msg * model.w_msg[static_cast<std::size_t>(r)];
                if (r >= nb) {
                    const int t = r - nb;
                    g_proj[static_cast<std::size_t>(edge.source) * m + t] += g_f;
                    g_proj[static_cast<std::size_t>(edge.neighbor) * m + t] += g_f;
                }
            }
        }
    }
    // phi gradient through the sparse k-hot features
    for (int i = 0; i < n; ++i) {
        const auto& hfeat = graph.node_features[static_cast<std::size_t>(i)];
        for (int s = 0; s < model.h; ++s) {
            const double hv = hfeat[static_cast<std::size_t>(s)];
            if (hv == 0.0) continue;
            for (int t = 0; t < m; ++t)
                grad.phi[static_cast<std::size_t>(s) * m + t] += hv * g_proj[static_cast<std::size_t>(i) * m + t];
        }
    }
}

}  // namespace detail

// Permutation-invariant property prediction on a featurized graph.
inline double predict(const SurrogateModel& model, const MaterialGraph& graph) {
    return detail::forward(model, graph).prediction;
}

inline double predict_structure(const SurrogateModel& model, const CrystalStructure& s) {
    return predict(model, featurize(s, model.k, model.n_basis, model.r_max));
}

// Attention weights per edge (softmax within each neighborhood); exposed for
// the invariant tests.
inline std::vector<double> attention_weights(const SurrogateModel& model, const MaterialGraph& graph) {
    return detail::forward(model, graph).attn;
}

struct TrainConfig {
    int epochs = 200;
    double learning_rate = 0.01;
    int batch = 8;
    std::uint64_t seed = 0;
    // featurization / architecture, used when training from scratch
    int k = 6;
    int n_basis = 16;
    double r_max = 6.0;
    int m = 16;
    double clip_norm = 10.0;
    double weight_decay = 1e-4;  // L2 on phi/alpha/w_msg; biases and head excluded
};

using LabeledStructure = std::pair<CrystalStructure, double>;

namespace detail {

inline std::string dataset_digest(const std::vector<LabeledStructure>& data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [s, y] : data) {
        for (char c : structure_hash(s)) h = fnv1a(h, static_cast<std::uint64_t>(c));
        std::uint64_t bits;
        static_assert(sizeof bits == sizeof y);
        std::memcpy(&bits, &y, sizeof bits);
        h = fnv1a(h, bits);
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

inline void apply_sgd(SurrogateModel& model, SurrogateGrad& grad, double lr, double clip_norm,
                      double weight_decay) {
    double sq = grad.b_msg * grad.b_msg + grad.a_out * grad.a_out + grad.b_out * grad.b_out;
    for (double g : grad.phi) sq += g * g;
    for (double g : grad.alpha) sq += g * g;
    for (double g : grad.w_msg) sq += g * g;
    const double nrm = std::sqrt(sq);
    const double scale = (clip_norm > 0.0 && nrm > clip_norm) ? clip_norm / nrm : 1.0;
    const double step = lr * scale;
    for (std::size_t i = 0; i < model.phi.size(); ++i)
        model.phi[i] -= step * grad.phi[i] + lr * weight_decay * model.phi[i];
    for (std::size_t i = 0; i < model.alpha.size(); ++i)
        model.alpha[i] -= step * grad.alpha[i] + lr * weight_decay * model.alpha[i];
    for (std::size_t i = 0; i < model.w_msg.size(); ++i)
        model.w_msg[i] -= step * grad.w_msg[i] + lr * weight_decay * model.w_msg[i];
    model.b_msg -= step * grad.b_msg;
    model.a_out -= step * grad.a_out;
    model.b_out -= step * grad.b_out;
}

// Minibatch SGD on mean squared error, continuing from the given weights.
inline void run_training(SurrogateModel& model, const std::vector<LabeledStructure>& data,
                         int epochs, double lr, int batch, double clip_norm, double weight_decay,
                         std::uint64_t seed) {
    if (data.empty()) return;
    std::vector<MaterialGraph> graphs;
    graphs.reserve(data.size());
    for (const auto& [s, y] : data) graphs.push_back(featurize(s, model.k, model.n_basis, model.r_max));

    Rng rng(seed ^ 0x5eedf00dULL);
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    const int bsz = std::max(1, batch);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        // Fisher-Yates with the deterministic stream
        for (std::size_t i = order.size(); i > 1; --i) {
            const std::size_t j = rng.below(i);
            std::swap(order[i - 1], order[j]);
        }
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(bsz)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(bsz));
            SurrogateGrad grad(model);
            for (std::size_t idx = start; idx < end; ++idx) {
                const std::size_t i = order[idx];
                const auto fw = forward(model, graphs[i]);
                const double err = fw.prediction - data[i].second;
                loss_sum += err * err;
                backward(model, graphs[i], fw, 2.0 * err / static_cast<double>(end - start), grad);
            }
            apply_sgd(model, grad, lr, clip_norm, weight_decay);
        }
        if (!std::isfinite(loss_sum))
            throw TrainingDivergedError("training loss is not finite", epoch);
        model.epochs_trained += 1;
    }
    double abs_sum = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i)
        abs_sum += std::abs(forward(model, graphs[i]).prediction - data[i].second);
    model.final_train_mae = abs_sum / static_cast<double>(data.size());
}

}  // namespace detail

// Trains a fresh model by minibatch SGD on mean squared error.
inline SurrogateModel train(const std::vector<LabeledStructure>& dataset, const TrainConfig& config) {
    if (dataset.size() < 2) throw UsageError("training needs at least 2 samples");
    for (const auto& [s, y] : dataset)
        if (!std::isfinite(y)) throw UsageError("training labels must be finite");
    SurrogateModel model;
    model.k = config.k;
    model.n_basis = config.n_basis;
    model.r_max = config.r_max;
    model.m = config.m;
    model.init_weights(config.seed);
    model.dataset_digest = detail::dataset_digest(dataset);
    detail::run_training(model, dataset, config.epochs, config.learning_rate, config.batch,
                         config.clip_norm, config.weight_decay, config.seed);
    return model;
}

// Continues training from the current weights on buffer plus an optional
// replay subset; bumps the fine-tune generation counter.
inline SurrogateModel fine_tune(const SurrogateModel& model, const std::vector<LabeledStructure>& buffer,
                                const TrainConfig& config,
                                const std::vector<LabeledStructure>& replay = {}) {
    if (buffer.empty()) throw UsageError("fine_tune needs a nonempty buffer");
    SurrogateModel out = model;
    std::vector<LabeledStructure> data = buffer;
    data.insert(data.end(), replay.begin(), replay.end());
    detail::run_training(out, data, config.epochs, config.learning_rate, config.batch,
                         config.clip_norm, config.weight_decay, config.seed);
    out.finetune_generation += 1;
    out.dataset_digest = detail::dataset_digest(data);
    return out;
}

struct Ensemble {
    std::vector<SurrogateModel> members;
};

inline Ensemble train_ensemble(const std::vector<LabeledStructure>& dataset, const TrainConfig& config,
                               int members) {
    if (members < 1) throw UsageError("ensemble needs at least one member");
    Ensemble e;
    for (int t = 0; t < members; ++t) {
        TrainConfig c = config;
        c.seed = config.seed + static_cast<std::uint64_t>(t);
        e.members.push_back(train(dataset, c));
    }
    return e;
}

struct Confidence {
    double mean = 0.0;
    double variance = 0.0;  // population form (divisor T)
};

inline Confidence confidence(const Ensemble& ensemble, const MaterialGraph& graph) {
    if (ensemble.members.empty()) throw UsageError("ensemble is empty");
    const double T = static_cast<double>(ensemble.members.size());
    Confidence c;
    std::vector<double> ys;
    ys.reserve(ensemble.members.size());
    for (const auto& mdl : ensemble.members) ys.push_back(predict(mdl, graph));
    for (double y : ys) c.mean += y;
    c.mean /= T;
    for (double y : ys) c.variance += (y - c.mean) * (y - c.mean);
    c.variance /= T;
    return c;
}

// MC-dropout alternative: T stochastic passes with Bernoulli masks on the
// edge features (inverted dropout scaling).
inline Confidence confidence_mc_dropout(const SurrogateModel& model, const MaterialGraph& graph,
                                        int passes, double drop_rate, std::uint64_t seed) {
    if (passes < 1) throw UsageError("mc dropout needs passes >= 1");
    if (drop_rate < 0.0 || drop_rate >= 1.0) throw UsageError("drop_rate must be in [0, 1)");
    Confidence c;
    std::vector<double> ys(static_cast<std::size_t>(passes));
    const double keep = 1.0 - drop_rate;
    for (int t = 0; t < passes; ++t) {
        Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(t));
        std::vector<std::vector<double>> mask(graph.edges.size());
        for (auto& row : mask) {
            row.assign(static_cast<std::size_t>(model.q()), 0.0);
            for (auto& v : row) v = rng.uniform() < drop_rate ? 0.0 : 1.0 / keep;
        }
        ys[static_cast<std::size_t>(t)] = detail::forward(model, graph, &mask).prediction;
    }
    for (double y : ys) c.mean += y;
    c.mean /= static_cast<double>(passes);
    for (double y : ys) c.variance += (y - c.mean) * (y - c.mean);
    c.variance /= static_cast<double>(passes);
    return c;
}

// --- checkpoint container (shared JSON scheme with the denoiser) ---

inline nlohmann::json surrogate_to_json(const SurrogateModel& m) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["kind"] = "surrogate";
    j["arch"] = {{"h", m.h}, {"m", m.m}, {"k", m.k}, {"n_basis", m.n_basis}, {"r_max", m.r_max}};
    j["weights"] = {{"phi", m.phi},   {"alpha", m.alpha}, {"w_msg", m.w_msg},
                    {"b_msg", m.b_msg}, {"a_out", m.a_out}, {"b_out", m.b_out}};
    j["meta"] = {{"seed", m.seed},
                 {"epochs_trained", m.epochs_trained},
                 {"finetune_generation", m.finetune_generation},
                 {"final_train_mae", m.final_train_mae},
                 {"dataset_digest", m.dataset_digest}};
    return j;
}

inline SurrogateModel surrogate_from_json(const nlohmann::json& j) {
    if (j.value("kind", "") != std::string("surrogate")) throw UsageError("not a surrogate checkpoint");
    SurrogateModel m;
    const auto& arch = j.at("arch");
    m.h = arch.at("h");
    m.m = arch.at("m");
    m.k = arch.at("k");
    m.n_basis = arch.at("n_basis");
    m.r_max = arch.at("r_max");
    const auto& w = j.at("weights");
    m.phi = w.at("phi").get<std::vector<double>>();
    m.alpha = w.at("alpha").get<std::vector<double>>();
    m.w_msg = w.at("w_msg").get<std::vector<double>>();
    m.b_msg = w.at("b_msg");
    m.a_out = w.at("a_out");
    m.b_out = w.at("b_out");
    const auto& meta = j.at("meta");
    m.seed = meta.at("seed");
    m.epochs_trained = meta.at("epochs_trained");
    m.finetune_generation = meta.at("finetune_generation");
    m.final_train_mae = meta.at("final_train_mae");
    m.dataset_digest = meta.at("dataset_digest");
    if (m.phi.size() != static_cast<std::size_t>(m.h) * m.m ||
        m.alpha.size() != static_cast<std::size_t>(m.n_basis + m.m) ||
        m.w_msg.size() != static_cast<std::size_t>(m.n_basis + m.m))
        throw UsageError("surrogate checkpoint has inconsistent weight shapes");
    return m;
}

inline nlohmann::json ensemble_to_json(const Ensemble& e) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["kind"] = "ensemble";
    j["members"] = nlohmann::json::array();
    for (const auto& m : e.members) j["members"].push_back(surrogate_to_json(m));
    return j;
}

inline Ensemble ensemble_from_json(const nlohmann::json& j) {
    if (j.value("kind", "") != std::string("ensemble")) throw UsageError("not an ensemble checkpoint");
    Ensemble e;
    for (const auto& mj : j.at("members")) e.members.push_back(surrogate_from_json(mj));
    if (e.members.empty()) throw UsageError("ensemble checkpoint has no members");
    return e;
}

}  // namespace xtalflow
