#include "dynmix/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>

#include <nlohmann/json.hpp>

#include "dynmix/rng.hpp"

namespace dynmix::train {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

double logsumexp(const std::vector<double>& v) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : v) mx = std::max(mx, x);
    if (!std::isfinite(mx)) return mx;
    double acc = 0.0;
    for (double x : v) acc += std::exp(x - mx);
    return mx + std::log(acc);
}

std::vector<double> onehot(int k, int z) {
    std::vector<double> v(k, 0.0);
    v[z] = 1.0;
    return v;
}

}  // namespace

void TrainConfig::validate() const {
    require(k >= 1 && k <= 200, "config: k must be in [1,200]");
    require(sigma > 0, "config: sigma must be positive");
    require(use_gate || (gamma >= 0.0 && gamma <= 1.0), "config: gamma must be in [0,1]");
    require(hidden_dim >= 1, "config: hidden_dim must be >= 1");
    require(epochs >= 0, "config: epochs must be >= 0");
    require(batch_size >= 1, "config: batch_size must be >= 1");
    require(lr > 0, "config: lr must be positive");
    require(temperature_start > 0 && temperature_end > 0, "config: temperatures must be positive");
    require(patience >= 0, "config: patience must be >= 0");
    require(samples_S >= 1, "config: samples_S must be >= 1");
    require(window == 0 || window >= 2, "config: window must be 0 or >= 2");
    require(horizon >= 1, "config: horizon must be >= 1");
    require(sigma_warmup_epochs >= 0, "config: sigma_warmup_epochs must be >= 0");
    require(restarts >= 1, "config: restarts must be >= 1");
    require(probe_epochs >= 0, "config: probe_epochs must be >= 0");
}

double TrainConfig::temperature_at(int epoch) const {
    if (epochs <= 1) return temperature_end;
    double frac = static_cast<double>(epoch) / static_cast<double>(epochs - 1);
    return temperature_start + (temperature_end - temperature_start) * frac;
}

double TrainConfig::sigma_at(int epoch) const {
    if (sigma_warmup_epochs <= 0 || epoch >= sigma_warmup_epochs) return sigma;
    double start = std::min(1.0, sigma);
    double frac = static_cast<double>(epoch + 1) / static_cast<double>(sigma_warmup_epochs);
    return std::exp(std::log(start) + (std::log(sigma) - std::log(start)) * frac);
}

ModelParams ModelParams::init(const TrainConfig& cfg, int d) {
    cfg.validate();
    require(d >= 1, "ModelParams: d must be >= 1");
    rng::Engine eng(rng::derive_seed(cfg.seed, "init"));
    ModelParams mp;
    mp.d = d;
    mp.config = cfg;
    mp.pre = impute::PreImputeParams::init(d);
    mp.gen = model::GenParams::init(cfg.cell, cfg.k, cfg.hidden_dim, eng, 0.1);
    mp.basis = model::MixtureBasis::init(cfg.k, d, cfg.sigma, eng, 0.1);
    mp.inf = infer::InferParams::init(cfg.cell, d, cfg.k, cfg.hidden_dim, eng, 0.1);
    return mp;
}

std::vector<ad::Parameter*> ModelParams::parameters() {
    std::vector<ad::Parameter*> out;
    out.push_back(&pre.alpha_raw);
    out.push_back(&pre.rho);
    for (auto* p : gen.parameters()) out.push_back(p);
    out.push_back(&basis.means);
    for (auto* p : inf.parameters()) out.push_back(p);
    return out;
}

std::vector<const ad::Parameter*> ModelParams::parameters() const {
    std::vector<const ad::Parameter*> out;
    for (auto* p : const_cast<ModelParams*>(this)->parameters()) out.push_back(p);
    return out;
}

namespace {

// Extracts the h part of a cell state (identity for GRU, first half for LSTM).
ad::Var state_h(ad::Graph& g, const model::Cell& cell, ad::Var state) {
    if (cell.state_dim() == cell.hid) return state;
    std::vector<ad::Var> hs;
    hs.reserve(cell.hid);
    for (int i = 0; i < cell.hid; ++i) hs.push_back(g.at(state, i));
    return g.pack(hs);
}

struct ElboBuild {
    std::vector<std::vector<ad::Var>> row_logits;  // [t][cond]; t=0 has one row
    std::vector<ad::Var> marginal;                 // [t] k-vectors
    std::vector<ad::Var> gate;                     // [t] scalars (gate mode only)
};

}  // namespace

ad::Var build_neg_elbo(ad::Graph& g, const data::MtsSample& sample, ModelParams& params,
                       const ElboOptions& opts) {
    require(opts.temperature > 0, "elbo: temperature must be positive");
    require(opts.samples_S >= 1, "elbo: samples_S must be >= 1");
    const int d = sample.d();
    const int w = sample.w();
    const int k = params.config.k;
    const int S = opts.exact_kl ? 1 : opts.samples_S;
    const double sigma = params.basis.sigma;
    const bool gate_mode = params.config.use_gate;
    const double gamma = params.config.gamma;
    require(d == params.d, "elbo: sample dimension mismatch");

    ad::Var alpha_raw = g.param(params.pre.alpha_raw);
    ad::Var rho = g.param(params.pre.rho);
    ad::Var means = g.param(params.basis.means);
    auto inf_cell = params.inf.cell.bind(g);
    auto inf_head = params.inf.head.bind(g);
    auto inf_gate = params.inf.gate.bind(g);
    auto gen_cell = params.gen.cell.bind(g);
    auto gen_head = params.gen.head.bind(g);

    std::vector<ad::Var> cols = impute::build_dense_columns(g, sample, alpha_raw, rho);

    rng::Engine noise_eng(opts.seed);
    auto noise_row = [&](int sp, int t) {
        std::vector<double> n(k);
        if (opts.fixed_gumbel) {
            for (int r = 0; r < k; ++r) n[r] = opts.fixed_gumbel->at(sp * w + t, r);
        } else {
            for (int r = 0; r < k; ++r) n[r] = noise_eng.gumbel();
        }
        return n;
    };

    // Inference sweep: encoder states, conditional-table logits, gate values
    // and S relaxed ancestral sample paths.
    ElboBuild b;
    b.row_logits.resize(w);
    if (gate_mode) b.gate.resize(w);
    std::vector<std::vector<ad::Var>> srow_logits(S, std::vector<ad::Var>(w));
    std::vector<std::vector<ad::Var>> zsample(S, std::vector<ad::Var>(w));

    // The head consumes [h; z]. Split W1 [h; z] into a per-step base from h
    // plus a per-conditioning column of W1, so each extra conditioning value
    // costs one add instead of a full affine.
    const int inf_hid = params.inf.cell.hid;
    ad::Var zero_k = g.constant(ad::Tensor::zeros({k}));
    ad::Var zero_hid = g.constant(ad::Tensor::zeros({inf_hid}));
    ad::Var zero_b = g.constant(ad::Tensor::zeros({inf_hid}));
    std::vector<ad::Var> w1_cols(k);
    for (int s = 0; s < k; ++s) w1_cols[s] = g.col(inf_head.w[0], inf_hid + s);
    auto head_out = [&](ad::Var pre) {
        return g.affine(g.tanh(pre), inf_head.w[2], inf_head.w[3]);
    };

    ad::Var state = g.constant(ad::Tensor::zeros({params.inf.cell.state_dim()}));
    for (int t = 0; t < w; ++t) {
        state = params.inf.cell.step(g, inf_cell, cols[t], state);
        ad::Var h = state_h(g, params.inf.cell, state);
        if (gate_mode)
            b.gate[t] = g.at(g.sigmoid(params.inf.gate.apply(g, inf_gate, h)), 0);
        ad::Var base = g.affine(g.concat(h, zero_k), inf_head.w[0], inf_head.w[1]);
        int n_rows = t == 0 ? 1 : k;
        b.row_logits[t].resize(n_rows);
        for (int s = 0; s < n_rows; ++s)
            b.row_logits[t][s] = t == 0 ? head_out(base) : head_out(g.add(base, w1_cols[s]));
        for (int sp = 0; sp < S; ++sp) {
            ad::Var logits;
            if (t == 0) {
                logits = b.row_logits[0][0];
            } else {
                ad::Var zpart = g.affine(g.concat(zero_hid, zsample[sp][t - 1]),
                                         inf_head.w[0], zero_b);
                logits = head_out(g.add(base, zpart));
            }
            srow_logits[sp][t] = logits;
            ad::Var noisy = g.add(logits, g.constant(ad::Tensor::vec(noise_row(sp, t))));
            zsample[sp][t] = g.softmax(g.scale(noisy, 1.0 / opts.temperature));
        }
    }

    // Forward marginalization over the conditional table.
    b.marginal.resize(w);
    b.marginal[0] = g.softmax(b.row_logits[0][0]);
    std::vector<std::vector<ad::Var>> row_probs(w);
    row_probs[0] = {b.marginal[0]};
    for (int t = 1; t < w; ++t) {
        row_probs[t].resize(k);
        for (int s = 0; s < k; ++s) row_probs[t][s] = g.softmax(b.row_logits[t][s]);
        ad::Var acc = g.smul(g.at(b.marginal[t - 1], 0), row_probs[t][0]);
        for (int s = 1; s < k; ++s)
            acc = g.add(acc, g.smul(g.at(b.marginal[t - 1], s), row_probs[t][s]));
        b.marginal[t] = acc;
    }

    // Masked per-component log densities of the raw observations.
    std::vector<ad::Var> loglik(w);
    for (int t = 0; t < w; ++t) {
        std::vector<double> xcol(d);
        std::vector<uint8_t> mcol(d);
        int n_obs = 0;
        for (int i = 0; i < d; ++i) {
            mcol[i] = sample.mask.at(i, t);
            xcol[i] = mcol[i] ? sample.values.at(i, t) : 0.0;
            n_obs += mcol[i] ? 1 : 0;
        }
        double cterm = n_obs * 0.5 * (std::log(sigma) - kLog2Pi);
        std::vector<ad::Var> lr(k);
        for (int r = 0; r < k; ++r) {
            ad::Var sq = g.masked_sqdist(xcol, mcol, g.row(means, r));
            lr[r] = g.add_scalar(g.scale(sq, -0.5 * sigma), cterm);
        }
        loglik[t] = g.pack(lr);
    }

    // Reconstruction + basis terms, weighted per step.
    ad::Var pmu = g.constant(ad::Tensor::vec(params.basis.basis_probs));
    ad::Var total = g.scalar(0.0);
    for (int t = 0; t < w; ++t) {
        ad::Var rec = g.dot(b.marginal[t], loglik[t]);
        ad::Var bas = g.dot(pmu, loglik[t]);
        if (gate_mode) {
            ad::Var gt = b.gate[t];
            total = g.add(total, g.mul(g.add_scalar(g.neg(gt), 1.0), rec));
            total = g.add(total, g.mul(gt, bas));
        } else {
            total = g.add(total, g.scale(rec, 1.0 - gamma));
            total = g.add(total, g.scale(bas, gamma));
        }
    }

    // KL against the uniform prior on z_1.
    ad::Var log_q1 = g.log_softmax(b.row_logits[0][0]);
    ad::Var prior_kl = g.dot(b.marginal[0], g.add_scalar(log_q1, std::log(double(k))));
    total = g.sub(total, prior_kl);

    // Per-step posterior-vs-transition KL terms.
    if (!opts.exact_kl) {
        ad::Var klsum = g.scalar(0.0);
        for (int sp = 0; sp < S; ++sp) {
            ad::Var tstate = g.constant(ad::Tensor::zeros({params.gen.cell.state_dim()}));
            for (int t1 = 1; t1 < w; ++t1) {
                tstate = params.gen.cell.step(g, gen_cell, zsample[sp][t1 - 1], tstate);
                ad::Var p_logits =
                    params.gen.head.apply(g, gen_head, state_h(g, params.gen.cell, tstate));
                ad::Var q = g.softmax(srow_logits[sp][t1]);
                ad::Var kl = g.dot(
                    q, g.sub(g.log_softmax(srow_logits[sp][t1]), g.log_softmax(p_logits)));
                klsum = g.add(klsum, kl);
            }
        }
        total = g.sub(total, g.scale(klsum, 1.0 / S));
    } else {
        struct PathNode {
            ad::Var weight;
            ad::Var hidden;
            int last;
        };
        std::vector<PathNode> nodes;
        ad::Var zero_state = g.constant(ad::Tensor::zeros({params.gen.cell.state_dim()}));
        for (int s = 0; s < k; ++s) {
            ad::Var hs = params.gen.cell.step(
                g, gen_cell, g.constant(ad::Tensor::vec(onehot(k, s))), zero_state);
            nodes.push_back({g.at(b.marginal[0], s), hs, s});
        }
        ad::Var klsum = g.scalar(0.0);
        for (int t1 = 1; t1 < w; ++t1) {
            std::vector<ad::Var> qlogrow(k);
            for (int s = 0; s < k; ++s) qlogrow[s] = g.log_softmax(b.row_logits[t1][s]);
            std::vector<PathNode> next;
            for (const PathNode& nd : nodes) {
                ad::Var p_logits =
                    params.gen.head.apply(g, gen_head, state_h(g, params.gen.cell, nd.hidden));
                ad::Var kl = g.dot(row_probs[t1][nd.last],
                                   g.sub(qlogrow[nd.last], g.log_softmax(p_logits)));
                klsum = g.add(klsum, g.mul(nd.weight, kl));
            }
            if (t1 + 1 < w) {
                std::vector<PathNode> grown;
                for (const PathNode& nd : nodes)
                    for (int s = 0; s < k; ++s) {
                        ad::Var cw = g.mul(nd.weight, g.at(row_probs[t1][nd.last], s));
                        ad::Var ch = params.gen.cell.step(
                            g, gen_cell, g.constant(ad::Tensor::vec(onehot(k, s))), nd.hidden);
                        grown.push_back({cw, ch, s});
                    }
                next = std::move(grown);
            }
            nodes = std::move(next);
        }
        total = g.sub(total, klsum);
    }

    ad::Var neg = g.neg(total);
    if (!std::isfinite(g.value(neg))) throw NonFiniteError("elbo: non-finite loss");
    return neg;
}

double elbo(const data::MtsSample& sample, ModelParams& params, const ElboOptions& opts) {
    ad::Graph g;
    return g.value(build_neg_elbo(g, sample, params, opts));
}

double exact_log_marginal(const data::MtsSample& sample, const ModelParams& params,
                          double gamma) {
    const int k = params.config.k;
    const int w = sample.w();
    require(gamma >= 0.0 && gamma <= 1.0, "exact_log_marginal: gamma must be in [0,1]");
    double paths = std::pow(double(k), double(w));
    require(paths <= 4096.0 + 0.5, "exact_log_marginal: k^w exceeds the 4096-path guard");

    // Per-step, per-component masked log densities.
    Mat L(w, k);
    for (int t = 0; t < w; ++t) {
        std::vector<double> xcol(sample.d());
        std::vector<uint8_t> mcol(sample.d());
        for (int i = 0; i < sample.d(); ++i) {
            mcol[i] = sample.mask.at(i, t);
            xcol[i] = mcol[i] ? sample.values.at(i, t) : 0.0;
        }
        for (int r = 0; r < k; ++r) L.at(t, r) = model::emit_loglik(xcol, mcol, r, params.basis);
    }

    const std::vector<double>& pmu = params.basis.basis_probs;
    std::vector<double> uniform(k, 1.0 / k);
    std::vector<double> totals;
    totals.reserve(static_cast<size_t>(paths));

    // Depth-first over transition paths; emissions mix each step's
    // transition distribution with the basis.
    std::function<void(int, const std::vector<double>&, const std::vector<double>&, double,
                       double)>
        rec = [&](int t1, const std::vector<double>& hidden, const std::vector<double>& pt,
                  double logw, double emacc) {
            std::vector<double> terms(k);
            for (int r = 0; r < k; ++r)
                terms[r] = std::log((1.0 - gamma) * pt[r] + gamma * pmu[r]) + L.at(t1 - 1, r);
            emacc += logsumexp(terms);
            if (t1 == w) {
                for (int z = 0; z < k; ++z) totals.push_back(logw + std::log(pt[z]) + emacc);
                return;
            }
            for (int z = 0; z < k; ++z) {
                model::TransitionState st{hidden, onehot(k, z)};
                auto [next, pn] = model::transition_step(st, params.gen);
                rec(t1 + 1, next.hidden, pn, logw + std::log(pt[z]), emacc);
            }
        };
    std::vector<double> h0(params.gen.cell.state_dim(), 0.0);
    rec(1, h0, uniform, 0.0, 0.0);
    return logsumexp(totals);
}

namespace {

struct Adam {
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int t = 0;
    std::vector<std::vector<double>> m, v;

    explicit Adam(const std::vector<ad::Parameter*>& params) {
        for (auto* p : params) {
            m.emplace_back(p->value.data.size(), 0.0);
            v.emplace_back(p->value.data.size(), 0.0);
        }
    }

    void step(const std::vector<ad::Parameter*>& params, double lr) {
        ++t;
        double c1 = 1.0 - std::pow(beta1, t);
        double c2 = 1.0 - std::pow(beta2, t);
        for (size_t pi = 0; pi < params.size(); ++pi) {
            ad::Parameter* p = params[pi];
            for (size_t i = 0; i < p->value.data.size(); ++i) {
                double gr = p->grad.data[i];
                m[pi][i] = beta1 * m[pi][i] + (1.0 - beta1) * gr;
                v[pi][i] = beta2 * v[pi][i] + (1.0 - beta2) * gr * gr;
                double mhat = m[pi][i] / c1;
                double vhat = v[pi][i] / c2;
                p->value.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }
};

data::MtsSample windowed(const data::MtsSample& s, int window) {
    if (window <= 0 || s.w() <= window) return s;
    return s.prefix(window);
}

// Mean marginal membership over every temporal feature of the given samples.
std::vector<double> basis_from_marginals(const std::vector<data::MtsSample>& samples,
                                         ModelParams& mp, std::vector<double>* gate_acc) {
    std::vector<std::vector<double>> memberships;
    for (const auto& s : samples) {
        impute::DenseMts dense = impute::dense_impute(s, mp.pre);
        infer::InferenceResult fwd = infer::infer_forward(dense, s.ref_times, mp.inf, 1.0, 0);
        for (int t = 0; t < s.w(); ++t) {
            std::vector<double> row(mp.config.k);
            for (int r = 0; r < mp.config.k; ++r) row[r] = fwd.seq.marginals.at(t, r);
            memberships.push_back(std::move(row));
        }
        if (gate_acc)
            for (double gv : fwd.gates) gate_acc->push_back(gv);
    }
    return infer::estimate_basis_probs(memberships);
}

}  // namespace

namespace {

// One training run: parameters, optimizer state and tracking. Kept behind a
// unique_ptr so Parameter addresses stay stable.
struct RunState {
    ModelParams mp;
    std::unique_ptr<Adam> adam;
    std::vector<EpochLog> log;
    ModelParams best;
    double best_valid = std::numeric_limits<double>::infinity();
    int best_epoch = -1;
    int since_best = 0;
    bool stopped = false;
    uint64_t run_seed = 0;
};

void run_epochs(RunState& st, const TrainConfig& cfg,
                const std::vector<data::MtsSample>& tr,
                const std::vector<data::MtsSample>& va, int from_epoch, int to_epoch) {
    std::vector<ad::Parameter*> params = st.mp.parameters();
    for (int epoch = from_epoch; epoch < to_epoch && !st.stopped; ++epoch) {
        double tau = cfg.temperature_at(epoch);
        st.mp.basis.sigma = cfg.sigma_at(epoch);
        std::vector<size_t> order(tr.size());
        for (size_t i = 0; i < tr.size(); ++i) order[i] = i;
        rng::Engine shuffle_eng(rng::derive_seed(st.run_seed, "shuffle", epoch));
        rng::shuffle(order, shuffle_eng);

        double epoch_loss = 0.0;
        size_t epoch_n = 0;
        std::vector<double> gate_values;

        for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
            size_t stop = std::min(order.size(), start + cfg.batch_size);
            std::vector<data::MtsSample> batch;
            for (size_t j = start; j < stop; ++j) batch.push_back(tr[order[j]]);

            st.mp.basis.basis_probs =
                basis_from_marginals(batch, st.mp, cfg.use_gate ? &gate_values : nullptr);

            for (auto* p : params) p->zero_grad();
            double batch_loss = 0.0;
            for (size_t j = start; j < stop; ++j) {
                ElboOptions opts;
                opts.temperature = tau;
                opts.samples_S = cfg.samples_S;
                opts.seed = rng::derive_seed(st.run_seed, "elbo",
                                             static_cast<uint64_t>(epoch) * 1000003ULL +
                                                 order[j]);
                try {
                    ad::Graph g;
                    ad::Var loss = build_neg_elbo(g, tr[order[j]], st.mp, opts);
                    batch_loss += g.value(loss);
                    g.backward(loss);
                } catch (const NonFiniteError& e) {
                    throw TrainDivergence("diverged at epoch " + std::to_string(epoch + 1) +
                                          ", batch " +
                                          std::to_string(start / cfg.batch_size + 1) + ": " +
                                          e.what());
                }
            }
            double inv = 1.0 / static_cast<double>(stop - start);
            for (auto* p : params)
                for (double& gr : p->grad.data) gr *= inv;
            st.adam->step(params, cfg.lr);
            st.mp.pre.pin_rho_diagonal();
            epoch_loss += batch_loss;
            epoch_n += stop - start;
        }

        // Epoch-end estimate over the full train split; used for validation
        // and carried into the checkpoint.
        st.mp.basis.basis_probs = basis_from_marginals(tr, st.mp, nullptr);

        st.mp.basis.sigma = cfg.sigma;  // validation always at the target precision
        double valid_loss = 0.0;
        for (size_t i = 0; i < va.size(); ++i) {
            ElboOptions opts;
            opts.temperature = cfg.temperature_end;
            opts.samples_S = cfg.samples_S;
            opts.seed = rng::derive_seed(st.run_seed, "valid", i);
            valid_loss += elbo(va[i], st.mp, opts);
        }
        valid_loss /= static_cast<double>(va.size());

        EpochLog el;
        el.epoch = epoch + 1;
        el.train_neg_elbo = epoch_loss / static_cast<double>(epoch_n);
        el.valid_neg_elbo = valid_loss;
        el.lr = cfg.lr;
        if (cfg.use_gate) {
            double gs = 0.0;
            for (double gv : gate_values) gs += gv;
            el.gate_mean = gate_values.empty() ? 0.5 : gs / double(gate_values.size());
        } else {
            el.gate_mean = cfg.gamma;
        }
        st.log.push_back(el);

        if (epoch + 1 <= cfg.sigma_warmup_epochs) continue;  // warmup is not tracked
        if (valid_loss < st.best_valid) {
            st.best_valid = valid_loss;
            st.best = st.mp;
            st.best_epoch = epoch + 1;
            st.since_best = 0;
        } else {
            ++st.since_best;
            if (st.since_best > cfg.patience) st.stopped = true;
        }
    }
}

std::unique_ptr<RunState> make_run(const TrainConfig& cfg, int d, int restart) {
    auto st = std::make_unique<RunState>();
    st->run_seed = restart == 0 ? cfg.seed : rng::derive_seed(cfg.seed, "restart", restart);
    TrainConfig init_cfg = cfg;
    init_cfg.seed = st->run_seed;
    st->mp = ModelParams::init(init_cfg, d);
    st->mp.config = cfg;  // the checkpoint echoes the user-facing config
    st->adam = std::make_unique<Adam>(st->mp.parameters());
    st->best = st->mp;
    return st;
}

}  // namespace

TrainResult fit(const std::vector<data::MtsSample>& train_samples,
                const std::vector<data::MtsSample>& valid_samples, const TrainConfig& cfg,
                int d) {
    cfg.validate();
    require(!train_samples.empty(), "train: empty train split");
    require(!valid_samples.empty(), "train: empty valid split");

    TrainResult res;
    if (cfg.epochs == 0) {
        res.params = ModelParams::init(cfg, d);
        return res;
    }

    std::vector<data::MtsSample> tr, va;
    for (const auto& s : train_samples) tr.push_back(windowed(s, cfg.window));
    for (const auto& s : valid_samples) va.push_back(windowed(s, cfg.window));

    int restarts = std::max(1, cfg.restarts);
    std::unique_ptr<RunState> chosen;
    if (restarts == 1) {
        chosen = make_run(cfg, d, 0);
        run_epochs(*chosen, cfg, tr, va, 0, cfg.epochs);
    } else {
        // Probe each restart briefly, keep the one with the best validation
        // score, then spend the remaining budget on it alone.
        int probe = cfg.probe_epochs > 0 ? cfg.probe_epochs : cfg.sigma_warmup_epochs + 10;
        probe = std::min(std::max(probe, cfg.sigma_warmup_epochs + 1), cfg.epochs);
        std::vector<std::unique_ptr<RunState>> runs;
        for (int r = 0; r < restarts; ++r) {
            runs.push_back(make_run(cfg, d, r));
            run_epochs(*runs.back(), cfg, tr, va, 0, probe);
        }
        size_t win = 0;
        for (size_t r = 1; r < runs.size(); ++r)
            if (runs[r]->log.back().valid_neg_elbo < runs[win]->log.back().valid_neg_elbo)
                win = r;
        chosen = std::move(runs[win]);
        run_epochs(*chosen, cfg, tr, va, probe, cfg.epochs);
    }

    // With every epoch inside the warmup nothing is tracked; fall back to
    // the final state.
    res.params = chosen->best_epoch >= 0 ? std::move(chosen->best) : std::move(chosen->mp);
    res.params.basis.sigma = cfg.sigma;
    res.log = std::move(chosen->log);
    res.best_epoch = chosen->best_epoch;
    res.best_valid = chosen->best_valid;
    return res;
}

void write_training_log(const std::string& path, const std::vector<EpochLog>& log) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write file: " + path);
    out << "epoch,train_neg_elbo,valid_neg_elbo,gate_mean,lr\n";
    char buf[256];
    for (const EpochLog& e : log) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g\n", e.epoch,
                      e.train_neg_elbo, e.valid_neg_elbo, e.gate_mean, e.lr);
        out << buf;
    }
}

namespace {

nlohmann::json tensor_to_json(const ad::Tensor& t) {
    nlohmann::json j;
    j["shape"] = t.shape;
    j["data"] = t.data;
    return j;
}

ad::Tensor tensor_from_json(const nlohmann::json& j) {
    ad::Tensor t;
    t.shape = j.at("shape").get<std::vector<int>>();
    t.data = j.at("data").get<std::vector<double>>();
    if (static_cast<int>(t.data.size()) != t.size())
        throw CheckpointError("tensor payload size mismatch");
    return t;
}

constexpr const char* kSchemaVersion = "v1";

}  // namespace

void checkpoint_save(const ModelParams& params, const std::string& path) {
    nlohmann::json j;
    j["schema_version"] = kSchemaVersion;
    j["d"] = params.d;
    const TrainConfig& c = params.config;
    j["config"] = {{"k", c.k},
                   {"gamma", c.gamma},
                   {"use_gate", c.use_gate},
                   {"sigma", c.sigma},
                   {"hidden_dim", c.hidden_dim},
                   {"window", c.window},
                   {"horizon", c.horizon},
                   {"epochs", c.epochs},
                   {"batch_size", c.batch_size},
                   {"lr", c.lr},
                   {"seed", c.seed},
                   {"temperature_start", c.temperature_start},
                   {"temperature_end", c.temperature_end},
                   {"patience", c.patience},
                   {"samples_S", c.samples_S},
                   {"sigma_warmup_epochs", c.sigma_warmup_epochs},
                   {"restarts", c.restarts},
                   {"probe_epochs", c.probe_epochs},
                   {"cell", c.cell == model::CellType::Gru ? "gru" : "lstm"}};
    j["basis_probs"] = params.basis.basis_probs;
    nlohmann::json tensors = nlohmann::json::object();
    for (const ad::Parameter* p : params.parameters()) tensors[p->name] = tensor_to_json(p->value);
    j["tensors"] = std::move(tensors);
    if (params.norm_stats) {
        j["norm_stats"] = {{"mean", params.norm_stats->mean}, {"std", params.norm_stats->std}};
    }

    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw Error("cannot write file: " + tmp);
        out << j.dump(1);
        out << '\n';
        if (!out) throw Error("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

ModelParams checkpoint_load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("corrupt checkpoint: " + std::string(e.what()));
    }
    try {
        std::string version = j.at("schema_version").get<std::string>();
        if (version != kSchemaVersion)
            throw CheckpointError("checkpoint schema version '" + version +
                                  "' does not match reader '" + kSchemaVersion + "'");
        TrainConfig c;
        const nlohmann::json& jc = j.at("config");
        c.k = jc.at("k").get<int>();
        c.gamma = jc.at("gamma").get<double>();
        c.use_gate = jc.at("use_gate").get<bool>();
        c.sigma = jc.at("sigma").get<double>();
        c.hidden_dim = jc.at("hidden_dim").get<int>();
        c.window = jc.at("window").get<int>();
        c.horizon = jc.at("horizon").get<int>();
        c.epochs = jc.at("epochs").get<int>();
        c.batch_size = jc.at("batch_size").get<int>();
        c.lr = jc.at("lr").get<double>();
        c.seed = jc.at("seed").get<uint64_t>();
        c.temperature_start = jc.at("temperature_start").get<double>();
        c.temperature_end = jc.at("temperature_end").get<double>();
        c.patience = jc.at("patience").get<int>();
        c.samples_S = jc.at("samples_S").get<int>();
        c.sigma_warmup_epochs = jc.value("sigma_warmup_epochs", 0);
        c.restarts = jc.value("restarts", 1);
        c.probe_epochs = jc.value("probe_epochs", 0);
        c.cell = jc.at("cell").get<std::string>() == "lstm" ? model::CellType::Lstm
                                                            : model::CellType::Gru;
        int d = j.at("d").get<int>();
        ModelParams mp = ModelParams::init(c, d);
        mp.basis.basis_probs = j.at("basis_probs").get<std::vector<double>>();
        const nlohmann::json& tensors = j.at("tensors");
        for (ad::Parameter* p : mp.parameters()) {
            if (!tensors.contains(p->name))
                throw CheckpointError("checkpoint missing tensor " + p->name);
            ad::Tensor t = tensor_from_json(tensors.at(p->name));
            if (t.shape != p->value.shape)
                throw CheckpointError("checkpoint tensor shape mismatch for " + p->name);
            p->value = std::move(t);
            p->zero_grad();
        }
        if (j.contains("norm_stats")) {
            data::NormStats st;
            st.mean = j.at("norm_stats").at("mean").get<std::vector<double>>();
            st.std = j.at("norm_stats").at("std").get<std::vector<double>>();
            mp.norm_stats = std::move(st);
        }
        return mp;
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError("corrupt checkpoint: " + std::string(e.what()));
    }
}

}  // namespace dynmix::train
