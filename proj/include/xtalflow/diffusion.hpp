#pragma once

// DDPM structure generator. The composition channel follows the standard
// Gaussian diffusion equations over a one-hot relaxation; lattice and
// fractional-coordinate channels run the same plain Gaussian process (a
// documented fidelity reduction: no periodic/E(3)-equivariant treatment).
// Fractional coordinates are wrapped mod 1 after every reverse step and the
// sampled lattice is projected back to a usable right-handed cell.

#include <cmath>
#include <cstring>
#include <map>
#include <vector>

#include <json.hpp>

#include "matcore.hpp"
#include "rng.hpp"

namespace xtalflow {

struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;       // beta[t] for t in [1, T]; beta[0] unused
    std::vector<double> alpha_bar;  // alpha_bar[t] for t in [0, T]; alpha_bar[0] = 1

    void validate() const {
        if (T < 2 || beta.size() != static_cast<std::size_t>(T + 1) ||
            alpha_bar.size() != static_cast<std::size_t>(T + 1))
            throw InvariantError("noise schedule arrays inconsistent with T");
        for (int t = 1; t <= T; ++t) {
            if (!(beta[static_cast<std::size_t>(t)] > 0.0 && beta[static_cast<std::size_t>(t)] < 1.0))
                throw InvariantError("beta out of (0,1)");
            if (!(alpha_bar[static_cast<std::size_t>(t)] < alpha_bar[static_cast<std::size_t>(t - 1)]))
                throw InvariantError("alpha_bar must be strictly decreasing");
        }
    }
};

// Cosine alpha-bar schedule: f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2),
// alpha_bar_t = f(t)/f(0), beta_t = 1 - alpha_bar_t/alpha_bar_{t-1} clipped
// to (1e-8, 0.999). alpha_bar is rebuilt from the clipped betas so the
// product identity holds exactly.
inline NoiseSchedule cosine_schedule(int T, double s = 0.008) {
    if (T < 2) throw UsageError("cosine_schedule needs T >= 2");
    constexpr double pi = 3.14159265358979323846;
    auto f = [&](double t) {
        const double u = (t / static_cast<double>(T) + s) / (1.0 + s);
        const double c = std::cos(u * pi / 2.0);
        return c * c;
    };
    NoiseSchedule sched;
    sched.T = T;
    sched.beta.assign(static_cast<std::size_t>(T + 1), 0.0);
    sched.alpha_bar.assign(static_cast<std::size_t>(T + 1), 1.0);
    const double f0 = f(0.0);
    double prev = 1.0;
    for (int t = 1; t <= T; ++t) {
        const double raw = f(static_cast<double>(t)) / f0;
        double beta_t = 1.0 - raw / prev;
        beta_t = std::clamp(beta_t, 1e-8, 0.999);
        sched.beta[static_cast<std::size_t>(t)] = beta_t;
        sched.alpha_bar[static_cast<std::size_t>(t)] =
            sched.alpha_bar[static_cast<std::size_t>(t - 1)] * (1.0 - beta_t);
        prev = raw;
    }
    sched.validate();
    return sched;
}

// One-shot forward noising: x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps.
// t = 0 is allowed and returns x_0.
inline std::vector<double> forward_diffuse(const std::vector<double>& x0, int t,
                                           const std::vector<double>& noise,
                                           const NoiseSchedule& sched) {
    if (t < 0 || t > sched.T) throw UsageError("forward_diffuse: t out of range");
    if (noise.size() != x0.size()) throw UsageError("forward_diffuse: shape mismatch");
    const double abar = sched.alpha_bar[static_cast<std::size_t>(t)];
    const double a = std::sqrt(abar), b = std::sqrt(1.0 - abar);
    std::vector<double> out(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + b * noise[i];
    return out;
}

// One reverse step: mu + sigma * noise with the standard posterior mean and
// variance; the noise term is suppressed at t = 1.
inline std::vector<double> reverse_step(const std::vector<double>& xt, int t,
                                        const std::vector<double>& eps_hat,
                                        const NoiseSchedule& sched,
                                        const std::vector<double>& noise) {
    if (t < 1 || t > sched.T) throw UsageError("reverse_step: t out of range");
    if (eps_hat.size() != xt.size() || noise.size() != xt.size())
        throw UsageError("reverse_step: shape mismatch");
    const double beta = sched.beta[static_cast<std::size_t>(t)];
    const double abar_t = sched.alpha_bar[static_cast<std::size_t>(t)];
    const double abar_prev = sched.alpha_bar[static_cast<std::size_t>(t - 1)];
    const double inv_sqrt_alpha = 1.0 / std::sqrt(1.0 - beta);
    const double eps_coef = beta / std::sqrt(1.0 - abar_t);
    const double sigma = t == 1 ? 0.0 : std::sqrt(beta * (1.0 - abar_prev) / (1.0 - abar_t));
    std::vector<double> out(xt.size());
    for (std::size_t i = 0; i < xt.size(); ++i)
        out[i] = inv_sqrt_alpha * (xt[i] - eps_coef * eps_hat[i]) + sigma * noise[i];
    return out;
}

struct Lambdas {
    double lattice = 1.0;
    double coords = 1.0;
    double composition = 10.0;  // larger than the others in ab-initio mode
};

struct ChannelLosses {
    double lattice = 0.0;
    double coords = 0.0;
    double composition = 0.0;
};

inline double mse(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw UsageError("mse: shape mismatch");
    if (a.empty()) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return s / static_cast<double>(a.size());
}

inline double combined_loss(const ChannelLosses& per_channel, const Lambdas& lambdas) {
    return lambdas.lattice * per_channel.lattice + lambdas.coords * per_channel.coords +
           lambdas.composition * per_channel.composition;
}

struct DiffusionLoss {
    ChannelLosses per_channel;
    double combined = 0.0;
};

// Composition-channel loss from predicted vs. true noise, combined with the
// externally computed lattice/coordinate channel losses.
inline DiffusionLoss diffusion_loss(const std::vector<double>& eps, const std::vector<double>& eps_hat,
                                    double lattice_loss, double coords_loss, const Lambdas& lambdas) {
    DiffusionLoss out;
    out.per_channel.lattice = lattice_loss;
    out.per_channel.coords = coords_loss;
    out.per_channel.composition = mse(eps, eps_hat);
    out.combined = combined_loss(out.per_channel, lambdas);
    return out;
}

// Empirical distribution over atoms-per-cell.
struct SizeDistribution {
    std::vector<double> prob;  // prob[n] for n in [0, max]; prob[0] = 0

    static SizeDistribution from_counts(const std::map<int, int>& counts) {
        SizeDistribution d;
        int maxn = 0, total = 0;
        for (const auto& [n, c] : counts) {
            if (n < 1) throw UsageError("size distribution support starts at 1");
            maxn = std::max(maxn, n);
            total += c;
        }
        if (total == 0) throw UsageError("size distribution needs at least one count");
        d.prob.assign(static_cast<std::size_t>(maxn + 1), 0.0);
        for (const auto& [n, c] : counts)
            d.prob[static_cast<std::size_t>(n)] = static_cast<double>(c) / total;
        return d;
    }

    int max_n() const { return static_cast<int>(prob.size()) - 1; }

    int sample(Rng& rng) const {
        const double u = rng.uniform();
        double acc = 0.0;
        for (std::size_t n = 1; n < prob.size(); ++n) {
            acc += prob[n];
            if (u < acc) return static_cast<int>(n);
        }
        return max_n();
    }
};

enum class SamplerPolicy { Empirical, UniformRandom, Hybrid };

struct SampleOptions {
    SamplerPolicy policy = SamplerPolicy::Empirical;
    int hybrid_switch_after = 0;  // samples drawn before Hybrid switches to uniform
    long sequence_offset = 0;     // global item index of the first sample in this call
};

enum class GenerationMode { AbInitio, Csp };

struct GenerationStats {
    long requested = 0;
    long produced = 0;
    long lattice_failures = 0;
    long model_evals = 0;
    double cost_units = 0.0;  // one unit per denoiser evaluation
};

// Counter arithmetic for throughput reporting.
inline double structures_per_hour(const GenerationStats& stats, double units_per_second) {
    if (stats.cost_units <= 0.0) return 0.0;
    return static_cast<double>(stats.produced) / (stats.cost_units / units_per_second) * 3600.0;
}

// Two-hidden-layer MLP denoiser over the padded fixed-size state with a
// sinusoidal timestep embedding.
struct DenoiserModel {
    int T = 100;
    int max_atoms = 8;
    int n_elements = kMaxAtomicNumber;  // one-hot width of the composition channel
    int hidden = 96;
    int time_dim = 16;
    double lattice_scale = 10.0;  // state stores rows/lattice_scale
    Lambdas lambdas;
    NoiseSchedule schedule;
    SizeDistribution size_dist;

    std::vector<double> w1, b1, w2, b2, w3, b3;

    std::uint64_t seed = 0;
    int epochs_trained = 0;
    std::string dataset_digest;

    int comp_dim() const { return n_elements * max_atoms; }
    int coord_dim() const { return max_atoms * 3; }
    int state_dim() const { return comp_dim() + 9 + coord_dim(); }
    int input_dim() const { return state_dim() + max_atoms + time_dim; }

    void init_weights(std::uint64_t init_seed) {
        seed = init_seed;
        Rng rng(init_seed);
        auto fill = [&](std::vector<double>& w, int fan_in, std::size_t size) {
            w.assign(size, 0.0);
            const double scale = std::sqrt(2.0 / fan_in);
            for (auto& v : w) v = scale * rng.gauss();
        };
        fill(w1, input_dim(), static_cast<std::size_t>(input_dim()) * hidden);
        b1.assign(static_cast<std::size_t>(hidden), 0.0);
        fill(w2, hidden, static_cast<std::size_t>(hidden) * hidden);
        b2.assign(static_cast<std::size_t>(hidden), 0.0);
        fill(w3, hidden, static_cast<std::size_t>(hidden) * state_dim());
        b3.assign(static_cast<std::size_t>(state_dim()), 0.0);
    }

    std::vector<double> time_embedding(int t) const {
        std::vector<double> emb(static_cast<std::size_t>(time_dim));
        for (int i = 0; i < time_dim / 2; ++i) {
            const double freq = std::pow(10000.0, -2.0 * i / time_dim);
            emb[static_cast<std::size_t>(2 * i)] = std::sin(t * freq);
            emb[static_cast<std::size_t>(2 * i + 1)] = std::cos(t * freq);
        }
        return emb;
    }

    // Predicted per-channel noise for the flattened state (composition,
    // lattice, coords), given the presence mask.
    std::vector<double> predict_noise(const std::vector<double>& state,
                                      const std::vector<double>& mask, int t) const {
        if (state.size() != static_cast<std::size_t>(state_dim()) ||
            mask.size() != static_cast<std::size_t>(max_atoms))
            throw UsageError("denoiser state/mask shape mismatch");
        std::vector<double> in;
        in.reserve(static_cast<std::size_t>(input_dim()));
        in.insert(in.end(), state.begin(), state.end());
        in.insert(in.end(), mask.begin(), mask.end());
        const auto emb = time_embedding(t);
        in.insert(in.end(), emb.begin(), emb.end());

        std::vector<double> h1(static_cast<std::size_t>(hidden)), h2(static_cast<std::size_t>(hidden));
        for (int j = 0; j < hidden; ++j) {
            double acc = b1[static_cast<std::size_t>(j)];
            for (int i = 0; i < input_dim(); ++i)
                acc += in[static_cast<std::size_t>(i)] * w1[static_cast<std::size_t>(i) * hidden + j];
            h1[static_cast<std::size_t>(j)] = acc > 0.0 ? acc : 0.0;
        }
        for (int j = 0; j < hidden; ++j) {
            double acc = b2[static_cast<std::size_t>(j)];
            for (int i = 0; i < hidden; ++i)
                acc += h1[static_cast<std::size_t>(i)] * w2[static_cast<std::size_t>(i) * hidden + j];
            h2[static_cast<std::size_t>(j)] = acc > 0.0 ? acc : 0.0;
        }
        std::vector<double> out(static_cast<std::size_t>(state_dim()));
        for (int j = 0; j < state_dim(); ++j) {
            double acc = b3[static_cast<std::size_t>(j)];
            for (int i = 0; i < hidden; ++i)
                acc += h2[static_cast<std::size_t>(i)] * w3[static_cast<std::size_t>(i) * state_dim() + j];
            out[static_cast<std::size_t>(j)] = acc;
        }
        return out;
    }
};

namespace detail {

struct EncodedStructure {
    std::vector<double> comp;    // n_elements x max_atoms, atom-major
    std::vector<double> lattice; // 9, divided by lattice_scale
    std::vector<double> coords;  // max_atoms x 3, wrapped
    std::vector<double> mask;    // max_atoms
    int n_atoms = 0;
};

inline EncodedStructure encode_structure(const CrystalStructure& s, const DenoiserModel& model) {
    const int n = static_cast<int>(s.size());
    if (n > model.max_atoms) throw UsageError("structure larger than the denoiser max_atoms");
    EncodedStructure enc;
    enc.n_atoms = n;
    enc.comp.assign(static_cast<std::size_t>(model.comp_dim()), 0.0);
    enc.lattice.assign(9, 0.0);
    enc.coords.assign(static_cast<std::size_t>(model.coord_dim()), 0.0);
    enc.mask.assign(static_cast<std::size_t>(model.max_atoms), 0.0);
    for (int a = 0; a < n; ++a) {
        const int z = s.species()[static_cast<std::size_t>(a)].atomic_number();
        enc.comp[static_cast<std::size_t>(a) * model.n_elements + (z - 1)] = 1.0;
        for (int k = 0; k < 3; ++k)
            enc.coords[static_cast<std::size_t>(a) * 3 + k] = s.frac_coords()[static_cast<std::size_t>(a)][k];
        enc.mask[static_cast<std::size_t>(a)] = 1.0;
    }
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            enc.lattice[static_cast<std::size_t>(i) * 3 + j] = s.lattice().rows()[i][j] / model.lattice_scale;
    return enc;
}

// Clamp row norms to [1, 20] Angstrom and blend toward the diagonal of the
// row norms until the cell is right-handed with usable volume.
inline Mat3 repair_lattice(const std::vector<double>& raw, double lattice_scale) {
    Mat3 L;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            const double v = raw[static_cast<std::size_t>(i) * 3 + j] * lattice_scale;
            if (!std::isfinite(v)) throw GenerationError("non-finite lattice entry");
            L[i][j] = v;
        }
    for (int i = 0; i < 3; ++i) {
        double nr = norm({L[i][0], L[i][1], L[i][2]});
        if (nr < 1e-8) {
            L[i] = {0.0, 0.0, 0.0};
            L[i][i] = 1.0;
            nr = 1.0;
        }
        const double target = std::clamp(nr, 1.0, 20.0);
        for (int j = 0; j < 3; ++j) L[i][j] *= target / nr;
    }
    if (determinant(L) < 0.0) {
        for (int j = 0; j < 3; ++j) L[2][j] = -L[2][j];
    }
    Vec3 norms{norm({L[0][0], L[0][1], L[0][2]}), norm({L[1][0], L[1][1], L[1][2]}),
               norm({L[2][0], L[2][1], L[2][2]})};
    for (int attempt = 0; attempt <= 8; ++attempt) {
        const double blend = attempt / 8.0;
        Mat3 cand{};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                cand[i][j] = (1.0 - blend) * L[i][j] + blend * (i == j ? norms[i] : 0.0);
        if (determinant(cand) > 0.5) return cand;
    }
    throw GenerationError("lattice repair failed");
}

}  // namespace detail

struct DenoiserTrainConfig {
    int T = 100;
    int epochs = 200;
    double learning_rate = 1e-3;
    int batch = 4;
    std::uint64_t seed = 0;
    Lambdas lambdas;
    int max_atoms = 8;
    int hidden = 96;
    double clip_norm = 10.0;
};

struct TrainDenoiserResult {
    DenoiserModel model;
    SizeDistribution size_distribution;
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

// Trains the denoiser to predict the per-channel noise at a uniformly drawn
// timestep. When lambdas.composition is 0 (CSP training) the composition
// channel stays clean in the input state, mirroring generation.
inline TrainDenoiserResult train_denoiser(const std::vector<CrystalStructure>& corpus,
                                          const DenoiserTrainConfig& config) {
    if (corpus.empty()) throw UsageError("train_denoiser needs a nonempty corpus");
    DenoiserModel model;
    model.T = config.T;
    model.max_atoms = config.max_atoms;
    model.hidden = config.hidden;
    model.lambdas = config.lambdas;
    model.schedule = cosine_schedule(config.T);
    model.init_weights(config.seed);

    std::map<int, int> size_counts;
    std::vector<detail::EncodedStructure> encoded;
    encoded.reserve(corpus.size());
    for (const auto& s : corpus) {
        encoded.push_back(detail::encode_structure(s, model));
        size_counts[static_cast<int>(s.size())] += 1;
    }
    model.size_dist = SizeDistribution::from_counts(size_counts);

    {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto& s : corpus)
            for (char c : structure_hash(s)) h = detail::fnv1a(h, static_cast<std::uint64_t>(c));
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
        model.dataset_digest = buf;
    }

    const bool noise_comp = config.lambdas.composition > 0.0;
    const int sd = model.state_dim(), id = model.input_dim(), hid = model.hidden;
    Rng rng(config.seed ^ 0xd1ff05e0ULL);

    std::vector<std::size_t> order(encoded.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    // flat gradient buffers reused across steps
    std::vector<double> gw1(model.w1.size()), gb1(model.b1.size()), gw2(model.w2.size()),
        gb2(model.b2.size()), gw3(model.w3.size()), gb3(model.b3.size());

    TrainDenoiserResult result;
    double first_epoch_loss = 0.0, last_epoch_loss = 0.0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
        double epoch_loss = 0.0;
        std::size_t start = 0;
        while (start < order.size()) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(std::max(1, config.batch)));
            std::fill(gw1.begin(), gw1.end(), 0.0);
            std::fill(gb1.begin(), gb1.end(), 0.0);
            std::fill(gw2.begin(), gw2.end(), 0.0);
            std::fill(gb2.begin(), gb2.end(), 0.0);
            std::fill(gw3.begin(), gw3.end(), 0.0);
            std::fill(gb3.begin(), gb3.end(), 0.0);
            const double bscale = 1.0 / static_cast<double>(end - start);

            for (std::size_t idx = start; idx < end; ++idx) {
                const auto& enc = encoded[order[idx]];
                const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(model.T)));

                std::vector<double> eps(static_cast<std::size_t>(sd), 0.0);
                std::vector<double> state(static_cast<std::size_t>(sd), 0.0);
                // composition block
                for (int p = 0; p < model.comp_dim(); ++p) {
                    const int atom = p / model.n_elements;
                    const bool active = enc.mask[static_cast<std::size_t>(atom)] > 0.0;
                    double e = 0.0;
                    if (active && noise_comp) e = rng.gauss();
                    eps[static_cast<std::size_t>(p)] = e;
                }
                // lattice block
                for (int p = 0; p < 9; ++p) eps[static_cast<std::size_t>(model.comp_dim() + p)] = rng.gauss();
                // coordinate block
                for (int p = 0; p < model.coord_dim(); ++p) {
                    const int atom = p / 3;
                    eps[static_cast<std::size_t>(model.comp_dim() + 9 + p)] =
                        enc.mask[static_cast<std::size_t>(atom)] > 0.0 ? rng.gauss() : 0.0;
                }
                const double abar = model.schedule.alpha_bar[static_cast<std::size_t>(t)];
                const double ca = std::sqrt(abar), cb = std::sqrt(1.0 - abar);
                for (int p = 0; p < model.comp_dim(); ++p) {
                    const double x0 = enc.comp[static_cast<std::size_t>(p)];
                    state[static_cast<std::size_t>(p)] =
                        noise_comp ? ca * x0 + cb * eps[static_cast<std::size_t>(p)] : x0;
                }
                for (int p = 0; p < 9; ++p) {
                    const std::size_t at = static_cast<std::size_t>(model.comp_dim() + p);
                    state[at] = ca * enc.lattice[static_cast<std::size_t>(p)] + cb * eps[at];
                }
                for (int p = 0; p < model.coord_dim(); ++p) {
                    const std::size_t at = static_cast<std::size_t>(model.comp_dim() + 9 + p);
                    state[at] = ca * enc.coords[static_cast<std::size_t>(p)] + cb * eps[at];
                }

                // manual forward with cached activations
                std::vector<double> in;
                in.reserve(static_cast<std::size_t>(id));
                in.insert(in.end(), state.begin(), state.end());
                in.insert(in.end(), enc.mask.begin(), enc.mask.end());
                const auto emb = model.time_embedding(t);
                in.insert(in.end(), emb.begin(), emb.end());

                std::vector<double> h1(static_cast<std::size_t>(hid)), h2(static_cast<std::size_t>(hid));
                for (int j = 0; j < hid; ++j) {
                    double acc = model.b1[static_cast<std::size_t>(j)];
                    for (int i2 = 0; i2 < id; ++i2)
                        acc += in[static_cast<std::size_t>(i2)] * model.w1[static_cast<std::size_t>(i2) * hid + j];
                    h1[static_cast<std::size_t>(j)] = acc > 0.0 ? acc : 0.0;
                }
                for (int j = 0; j < hid; ++j) {
                    double acc = model.b2[static_cast<std::size_t>(j)];
                    for (int i2 = 0; i2 < hid; ++i2)
                        acc += h1[static_cast<std::size_t>(i2)] * model.w2[static_cast<std::size_t>(i2) * hid + j];
                    h2[static_cast<std::size_t>(j)] = acc > 0.0 ? acc : 0.0;
                }
                std::vector<double> out(static_cast<std::size_t>(sd));
                for (int j = 0; j < sd; ++j) {
                    double acc = model.b3[static_cast<std::size_t>(j)];
                    for (int i2 = 0; i2 < hid; ++i2)
                        acc += h2[static_cast<std::size_t>(i2)] * model.w3[static_cast<std::size_t>(i2) * sd + j];
                    out[static_cast<std::size_t>(j)] = acc;
                }

                // masked per-channel squared error and its gradient
                int active_atoms = 0;
                for (double mval : enc.mask) active_atoms += mval > 0.0 ? 1 : 0;
                const double comp_count = noise_comp ? static_cast<double>(active_atoms * model.n_elements) : 0.0;
                const double coord_count = static_cast<double>(active_atoms * 3);
                ChannelLosses losses;
                std::vector<double> gout(static_cast<std::size_t>(sd), 0.0);
                for (int p = 0; p < sd; ++p) {
                    const bool comp_block = p < model.comp_dim();
                    const bool lattice_block = !comp_block && p < model.comp_dim() + 9;
                    const int atom = comp_block ? p / model.n_elements
                                                : (lattice_block ? -1 : (p - model.comp_dim() - 9) / 3);
                    const bool active = lattice_block || enc.mask[static_cast<std::size_t>(atom)] > 0.0;
                    if (!active) continue;
                    if (comp_block && !noise_comp) continue;
                    const double diff = out[static_cast<std::size_t>(p)] - eps[static_cast<std::size_t>(p)];
                    double lambda, count;
                    if (comp_block) {
                        losses.composition += diff * diff / comp_count;
                        lambda = config.lambdas.composition;
                        count = comp_count;
                    } else if (lattice_block) {
                        losses.lattice += diff * diff / 9.0;
                        lambda = config.lambdas.lattice;
                        count = 9.0;
                    } else {
                        losses.coords += diff * diff / coord_count;
                        lambda = config.lambdas.coords;
                        count = coord_count;
                    }
                    gout[static_cast<std::size_t>(p)] = bscale * lambda * 2.0 * diff / count;
                }
                epoch_loss += combined_loss(losses, config.lambdas);

                // backprop
                std::vector<double> gh2(static_cast<std::size_t>(hid), 0.0);
                for (int j = 0; j < sd; ++j) {
                    const double g = gout[static_cast<std::size_t>(j)];
                    if (g == 0.0) continue;
                    gb3[static_cast<std::size_t>(j)] += g;
                    for (int i2 = 0; i2 < hid; ++i2) {
                        gw3[static_cast<std::size_t>(i2) * sd + j] += g * h2[static_cast<std::size_t>(i2)];
                        gh2[static_cast<std::size_t>(i2)] += g * model.w3[static_cast<std::size_t>(i2) * sd + j];
                    }
                }
                std::vector<double> gh1(static_cast<std::size_t>(hid), 0.0);
                for (int j = 0; j < hid; ++j) {
                    if (h2[static_cast<std::size_t>(j)] <= 0.0) continue;
                    const double g = gh2[static_cast<std::size_t>(j)];
                    gb2[static_cast<std::size_t>(j)] += g;
                    for (int i2 = 0; i2 < hid; ++i2) {
                        gw2[static_cast<std::size_t>(i2) * hid + j] += g * h1[static_cast<std::size_t>(i2)];
                        gh1[static_cast<std::size_t>(i2)] += g * model.w2[static_cast<std::size_t>(i2) * hid + j];
                    }
                }
                for (int j = 0; j < hid; ++j) {
                    if (h1[static_cast<std::size_t>(j)] <= 0.0) continue;
                    const double g = gh1[static_cast<std::size_t>(j)];
                    gb1[static_cast<std::size_t>(j)] += g;
                    for (int i2 = 0; i2 < id; ++i2)
                        gw1[static_cast<std::size_t>(i2) * hid + j] += g * in[static_cast<std::size_t>(i2)];
                }
            }

            // clip and apply
            double sq = 0.0;
            for (double g : gw1) sq += g * g;
            for (double g : gb1) sq += g * g;
            for (double g : gw2) sq += g * g;
            for (double g : gb2) sq += g * g;
            for (double g : gw3) sq += g * g;
            for (double g : gb3) sq += g * g;
            const double nrm = std::sqrt(sq);
            const double step = config.learning_rate *
                                ((config.clip_norm > 0.0 && nrm > config.clip_norm) ? config.clip_norm / nrm : 1.0);
            for (std::size_t i = 0; i < model.w1.size(); ++i) model.w1[i] -= step * gw1[i];
            for (std::size_t i = 0; i < model.b1.size(); ++i) model.b1[i] -= step * gb1[i];
            for (std::size_t i = 0; i < model.w2.size(); ++i) model.w2[i] -= step * gw2[i];
            for (std::size_t i = 0; i < model.b2.size(); ++i) model.b2[i] -= step * gb2[i];
            for (std::size_t i = 0; i < model.w3.size(); ++i) model.w3[i] -= step * gw3[i];
            for (std::size_t i = 0; i < model.b3.size(); ++i) model.b3[i] -= step * gb3[i];
            start = end;
        }
        if (!std::isfinite(epoch_loss)) throw TrainingDivergedError("denoiser loss is not finite", epoch);
        if (epoch == 0) first_epoch_loss = epoch_loss;
        last_epoch_loss = epoch_loss;
        model.epochs_trained += 1;
    }
    result.model = std::move(model);
    result.size_distribution = result.model.size_dist;
    result.initial_loss = first_epoch_loss;
    result.final_loss = last_epoch_loss;
    return result;
}

struct SampleBatch {
    std::vector<CrystalStructure> structures;
    GenerationStats stats;
};

// Runs the full reverse chain per item. Items derive their own RNG stream
// from (seed, global item index) so batches are reproducible regardless of
// execution order or batch splitting.
inline SampleBatch sample(const DenoiserModel& model, GenerationMode mode,
                          const Composition& csp_composition, long count, std::uint64_t seed,
                          const SampleOptions& options = {}) {
    if (count < 1) throw UsageError("sample needs count >= 1");
    model.schedule.validate();
    SampleBatch batch;
    batch.stats.requested = count;

    int csp_n = 0;
    std::vector<int> csp_z;
    if (mode == GenerationMode::Csp) {
        if (csp_composition.empty()) throw UsageError("CSP mode needs a composition");
        csp_n = csp_composition.total_atoms();
        if (csp_n > model.max_atoms) throw UsageError("CSP composition exceeds max_atoms");
        for (const auto& [z, c] : csp_composition.counts())
            for (int i = 0; i < c; ++i) csp_z.push_back(z);
    }

    for (long item = 0; item < count; ++item) {
        const long global_index = options.sequence_offset + item;
        Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(global_index));

        int n_atoms;
        if (mode == GenerationMode::Csp) {
            n_atoms = csp_n;
        } else {
            SamplerPolicy pol = options.policy;
            if (pol == SamplerPolicy::Hybrid)
                pol = global_index < options.hybrid_switch_after ? SamplerPolicy::Empirical
                                                                 : SamplerPolicy::UniformRandom;
            n_atoms = pol == SamplerPolicy::Empirical
                          ? model.size_dist.sample(rng)
                          : 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(model.max_atoms)));
        }

        std::vector<double> mask(static_cast<std::size_t>(model.max_atoms), 0.0);
        for (int a = 0; a < n_atoms; ++a) mask[static_cast<std::size_t>(a)] = 1.0;

        const int sd = model.state_dim();
        std::vector<double> state(static_cast<std::size_t>(sd), 0.0);
        // initial noise on the active positions
        for (int p = 0; p < model.comp_dim(); ++p) {
            const int atom = p / model.n_elements;
            if (atom >= n_atoms) continue;
            if (mode == GenerationMode::Csp) continue;  // held constant below
            state[static_cast<std::size_t>(p)] = rng.gauss();
        }
        if (mode == GenerationMode::Csp)
            for (int a = 0; a < n_atoms; ++a)
                state[static_cast<std::size_t>(a) * model.n_elements + (csp_z[static_cast<std::size_t>(a)] - 1)] = 1.0;
        for (int p = 0; p < 9; ++p) state[static_cast<std::size_t>(model.comp_dim() + p)] = rng.gauss();
        for (int p = 0; p < model.coord_dim(); ++p) {
            const int atom = p / 3;
            if (atom < n_atoms)
                state[static_cast<std::size_t>(model.comp_dim() + 9 + p)] = rng.gauss();
        }

        for (int t = model.T; t >= 1; --t) {
            const std::vector<double> eps_hat = model.predict_noise(state, mask, t);
            batch.stats.model_evals += 1;
            const double beta = model.schedule.beta[static_cast<std::size_t>(t)];
            const double abar_t = model.schedule.alpha_bar[static_cast<std::size_t>(t)];
            const double abar_prev = model.schedule.alpha_bar[static_cast<std::size_t>(t - 1)];
            const double inv_sqrt_alpha = 1.0 / std::sqrt(1.0 - beta);
            const double eps_coef = beta / std::sqrt(1.0 - abar_t);
            const double sigma = t == 1 ? 0.0 : std::sqrt(beta * (1.0 - abar_prev) / (1.0 - abar_t));
            for (int p = 0; p < sd; ++p) {
                const bool comp_block = p < model.comp_dim();
                const bool lattice_block = !comp_block && p < model.comp_dim() + 9;
                const int atom = comp_block ? p / model.n_elements
                                            : (lattice_block ? -1 : (p - model.comp_dim() - 9) / 3);
                if (!lattice_block && atom >= n_atoms) continue;
                if (comp_block && mode == GenerationMode::Csp) continue;
                double v = inv_sqrt_alpha *
                           (state[static_cast<std::size_t>(p)] - eps_coef * eps_hat[static_cast<std::size_t>(p)]);
                if (sigma > 0.0) v += sigma * rng.gauss();
                if (!comp_block && !lattice_block) v = wrap_frac(v);
                state[static_cast<std::size_t>(p)] = v;
            }
        }
        batch.stats.cost_units += static_cast<double>(model.T);

        try {
            std::vector<ElementId> species;
            species.reserve(static_cast<std::size_t>(n_atoms));
            for (int a = 0; a < n_atoms; ++a) {
                if (mode == GenerationMode::Csp) {
                    species.push_back(ElementId(csp_z[static_cast<std::size_t>(a)]));
                } else {
                    int best = 0;
                    double best_v = -std::numeric_limits<double>::infinity();
                    for (int e = 0; e < model.n_elements; ++e) {
                        const double v = state[static_cast<std::size_t>(a) * model.n_elements + e];
                        if (v > best_v) {
                            best_v = v;
                            best = e;
                        }
                    }
                    species.push_back(ElementId(best + 1));
                }
            }
            std::vector<double> lattice_flat(state.begin() + model.comp_dim(),
                                             state.begin() + model.comp_dim() + 9);
            const Mat3 rows = detail::repair_lattice(lattice_flat, model.lattice_scale);
            std::vector<Vec3> coords(static_cast<std::size_t>(n_atoms));
            for (int a = 0; a < n_atoms; ++a)
                for (int kk = 0; kk < 3; ++kk)
                    coords[static_cast<std::size_t>(a)][kk] =
                        state[static_cast<std::size_t>(model.comp_dim() + 9 + a * 3 + kk)];
            batch.structures.emplace_back(Lattice(rows), std::move(species), std::move(coords));
            batch.stats.produced += 1;
        } catch (const GenerationError&) {
            batch.stats.lattice_failures += 1;
        }
    }
    return batch;
}

inline SampleBatch sample_ab_initio(const DenoiserModel& model, long count, std::uint64_t seed,
                                    const SampleOptions& options = {}) {
    return sample(model, GenerationMode::AbInitio, Composition{}, count, seed, options);
}

inline SampleBatch sample_csp(const DenoiserModel& model, const Composition& comp, long count,
                              std::uint64_t seed, const SampleOptions& options = {}) {
    return sample(model, GenerationMode::Csp, comp, count, seed, options);
}

// --- checkpoint container ---

inline nlohmann::json denoiser_to_json(const DenoiserModel& m) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["kind"] = "denoiser";
    j["arch"] = {{"T", m.T},
                 {"max_atoms", m.max_atoms},
                 {"n_elements", m.n_elements},
                 {"hidden", m.hidden},
                 {"time_dim", m.time_dim},
                 {"lattice_scale", m.lattice_scale},
                 {"lambda_lattice", m.lambdas.lattice},
                 {"lambda_coords", m.lambdas.coords},
                 {"lambda_composition", m.lambdas.composition}};
    j["weights"] = {{"w1", m.w1}, {"b1", m.b1}, {"w2", m.w2}, {"b2", m.b2}, {"w3", m.w3}, {"b3", m.b3}};
    j["size_dist"] = m.size_dist.prob;
    j["meta"] = {{"seed", m.seed}, {"epochs_trained", m.epochs_trained}, {"dataset_digest", m.dataset_digest}};
    return j;
}

inline DenoiserModel denoiser_from_json(const nlohmann::json& j) {
    if (j.value("kind", "") != std::string("denoiser")) throw UsageError("not a denoiser checkpoint");
    DenoiserModel m;
    const auto& arch = j.at("arch");
    m.T = arch.at("T");
    m.max_atoms = arch.at("max_atoms");
    m.n_elements = arch.at("n_elements");
    m.hidden = arch.at("hidden");
    m.time_dim = arch.at("time_dim");
    m.lattice_scale = arch.at("lattice_scale");
    m.lambdas.lattice = arch.at("lambda_lattice");
    m.lambdas.coords = arch.at("lambda_coords");
    m.lambdas.composition = arch.at("lambda_composition");
    m.schedule = cosine_schedule(m.T);
    const auto& w = j.at("weights");
    m.w1 = w.at("w1").get<std::vector<double>>();
    m.b1 = w.at("b1").get<std::vector<double>>();
    m.w2 = w.at("w2").get<std::vector<double>>();
    m.b2 = w.at("b2").get<std::vector<double>>();
    m.w3 = w.at("w3").get<std::vector<double>>();
    m.b3 = w.at("b3").get<std::vector<double>>();
    m.size_dist.prob = j.at("size_dist").get<std::vector<double>>();
    const auto& meta = j.at("meta");
    m.seed = meta.at("seed");
    m.epochs_trained = meta.at("epochs_trained");
    m.dataset_digest = meta.at("dataset_digest");
    if (m.w1.size() != static_cast<std::size_t>(m.input_dim()) * m.hidden ||
        m.w3.size() != static_cast<std::size_t>(m.hidden) * m.state_dim())
        throw UsageError("denoiser checkpoint has inconsistent weight shapes");
    return m;
}

}  // namespace xtalflow
