#include "dynmix/generative.hpp"

#include <cmath>

namespace dynmix::model {

namespace {

ad::Tensor random_matrix(int rows, int cols, rng::Engine& eng, double scale) {
    ad::Tensor t = ad::Tensor::zeros({rows, cols});
    for (double& v : t.data) v = scale * eng.normal();
    return t;
}

std::vector<double> softmax_plain(std::vector<double> v) {
    double mx = *std::max_element(v.begin(), v.end());
    double z = 0.0;
    for (double& x : v) {
        x = std::exp(x - mx);
        z += x;
    }
    for (double& x : v) x /= z;
    return v;
}

// y = W x + b, mirroring Graph::affine accumulation order exactly.
std::vector<double> affine_plain(const ad::Tensor& W, const ad::Tensor& b,
                                 std::span<const double> x) {
    int m = W.shape[0], n = W.shape[1];
    std::vector<double> out(m);
    for (int i = 0; i < m; ++i) {
        double acc = b.data[i];
        const double* wrow = &W.data[static_cast<size_t>(i) * n];
        for (int j = 0; j < n; ++j) acc += wrow[j] * x[j];
        out[i] = acc;
    }
    return out;
}

}  // namespace

Cell Cell::init(CellType type, int in_dim, int hid, const std::string& prefix,
                rng::Engine& eng, double scale) {
    Cell c;
    c.type = type;
    c.in_dim = in_dim;
    c.hid = hid;
    auto push_gate = [&](const std::string& gate) {
        c.w.emplace_back(prefix + ".W" + gate, random_matrix(hid, in_dim, eng, scale));
        c.w.emplace_back(prefix + ".U" + gate, random_matrix(hid, hid, eng, scale));
        c.w.emplace_back(prefix + ".b" + gate, ad::Tensor::zeros({hid}));
    };
    if (type == CellType::Gru) {
        push_gate("r");
        push_gate("z");
        push_gate("c");
    } else {
        push_gate("i");
        push_gate("f");
        push_gate("o");
        push_gate("g");
    }
    return c;
}

std::vector<ad::Parameter*> Cell::parameters() {
    std::vector<ad::Parameter*> out;
    for (auto& p : w) out.push_back(&p);
    return out;
}

Cell::Bound Cell::bind(ad::Graph& g) const {
    Bound b;
    for (const auto& p : w) b.w.push_back(g.param(const_cast<ad::Parameter&>(p)));
    return b;
}

ad::Var Cell::step(ad::Graph& g, const Bound& b, ad::Var x, ad::Var state) const {
    ad::Var zero_b = g.constant(ad::Tensor::zeros({hid}));
    auto gate_pre = [&](int base, ad::Var hin) {
        return g.add(g.affine(x, b.w[base], b.w[base + 2]), g.affine(hin, b.w[base + 1], zero_b));
    };
    if (type == CellType::Gru) {
        ad::Var r = g.sigmoid(gate_pre(0, state));
        ad::Var z = g.sigmoid(gate_pre(3, state));
        ad::Var c = g.tanh(g.add(g.affine(x, b.w[6], b.w[8]),
                                 g.affine(g.mul(r, state), b.w[7], zero_b)));
        return g.add(g.mul(g.add_scalar(g.neg(z), 1.0), state), g.mul(z, c));
    }
    // LSTM: state = [h; c]
    {
        std::vector<ad::Var> hs, cs;
        for (int i = 0; i < hid; ++i) hs.push_back(g.at(state, i));
        for (int i = 0; i < hid; ++i) cs.push_back(g.at(state, hid + i));
        ad::Var hprev = g.pack(hs);
        ad::Var cprev = g.pack(cs);
        ad::Var ig = g.sigmoid(gate_pre(0, hprev));
        ad::Var fg = g.sigmoid(gate_pre(3, hprev));
        ad::Var og = g.sigmoid(gate_pre(6, hprev));
        ad::Var gg = g.tanh(gate_pre(9, hprev));
        ad::Var cnew = g.add(g.mul(fg, cprev), g.mul(ig, gg));
        ad::Var hnew = g.mul(og, g.tanh(cnew));
        return g.concat(hnew, cnew);
    }
}

std::vector<double> Cell::step_plain(std::span<const double> x,
                                     std::span<const double> state) const {
    auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    auto gate_pre = [&](int base, std::span<const double> hin) {
        std::vector<double> a = affine_plain(w[base].value, w[base + 2].value, x);
        const ad::Tensor& U = w[base + 1].value;
        for (int i = 0; i < hid; ++i) {
            double acc = 0.0;
            const double* urow = &U.data[static_cast<size_t>(i) * hid];
            for (int j = 0; j < hid; ++j) acc += urow[j] * hin[j];
            a[i] += acc;
        }
        return a;
    };
    if (type == CellType::Gru) {
        std::vector<double> r = gate_pre(0, state);
        std::vector<double> z = gate_pre(3, state);
        for (double& v : r) v = sig(v);
        for (double& v : z) v = sig(v);
        std::vector<double> rh(hid);
        for (int i = 0; i < hid; ++i) rh[i] = r[i] * state[i];
        std::vector<double> c = affine_plain(w[6].value, w[8].value, x);
        const ad::Tensor& Uc = w[7].value;
        for (int i = 0; i < hid; ++i) {
            double acc = 0.0;
            const double* urow = &Uc.data[static_cast<size_t>(i) * hid];
            for (int j = 0; j < hid; ++j) acc += urow[j] * rh[j];
            c[i] = std::tanh(c[i] + acc);
        }
        std::vector<double> out(hid);
        for (int i = 0; i < hid; ++i) out[i] = (1.0 - z[i]) * state[i] + z[i] * c[i];
        return out;
    }
    std::span<const double> hprev = state.subspan(0, hid);
    std::span<const double> cprev = state.subspan(hid, hid);
    std::vector<double> ig = gate_pre(0, hprev), fg = gate_pre(3, hprev);
    std::vector<double> og = gate_pre(6, hprev), gg = gate_pre(9, hprev);
    std::vector<double> out(2 * hid);
    for (int i = 0; i < hid; ++i) {
        double iv = sig(ig[i]), fv = sig(fg[i]), ov = sig(og[i]), gv = std::tanh(gg[i]);
        double cnew = fv * cprev[i] + iv * gv;
        out[i] = ov * std::tanh(cnew);
        out[hid + i] = cnew;
    }
    return out;
}

Mlp Mlp::init(int in_dim, int hid, int out_dim, const std::string& prefix, rng::Engine& eng,
              double scale) {
    Mlp m;
    m.in_dim = in_dim;
    m.hid = hid;
    m.out_dim = out_dim;
    m.w.emplace_back(prefix + ".W1", random_matrix(hid, in_dim, eng, scale));
    m.w.emplace_back(prefix + ".b1", ad::Tensor::zeros({hid}));
    m.w.emplace_back(prefix + ".W2", random_matrix(out_dim, hid, eng, scale));
    m.w.emplace_back(prefix + ".b2", ad::Tensor::zeros({out_dim}));
    return m;
}

std::vector<ad::Parameter*> Mlp::parameters() {
    std::vector<ad::Parameter*> out;
    for (auto& p : w) out.push_back(&p);
    return out;
}

Mlp::Bound Mlp::bind(ad::Graph& g) const {
    Bound b;
    for (const auto& p : w) b.w.push_back(g.param(const_cast<ad::Parameter&>(p)));
    return b;
}

ad::Var Mlp::apply(ad::Graph& g, const Bound& b, ad::Var x) const {
    return g.affine(g.tanh(g.affine(x, b.w[0], b.w[1])), b.w[2], b.w[3]);
}

std::vector<double> Mlp::apply_plain(std::span<const double> x) const {
    std::vector<double> h = affine_plain(w[0].value, w[1].value, x);
    for (double& v : h) v = std::tanh(v);
    return affine_plain(w[2].value, w[3].value, h);
}

std::vector<double> MixtureBasis::mean_row(int z) const {
    int d = dim();
    std::vector<double> out(d);
    for (int j = 0; j < d; ++j) out[j] = means.value.data[static_cast<size_t>(z) * d + j];
    return out;
}

void MixtureBasis::validate() const {
    require(sigma > 0, "MixtureBasis: sigma must be positive");
    require(k() >= 1, "MixtureBasis: k must be >= 1");
    require(static_cast<int>(basis_probs.size()) == k(), "MixtureBasis: basis_probs length");
    double sum = 0.0;
    for (double p : basis_probs) {
        require(p >= 0, "MixtureBasis: negative basis probability");
        sum += p;
    }
    require(std::abs(sum - 1.0) < 1e-9, "MixtureBasis: basis_probs must sum to 1");
}

MixtureBasis MixtureBasis::init(int k, int d, double sigma, rng::Engine& eng, double scale) {
    MixtureBasis b;
    b.means = ad::Parameter("basis.means", random_matrix(k, d, eng, scale));
    b.basis_probs.assign(k, 1.0 / k);
    b.sigma = sigma;
    return b;
}

GenParams GenParams::init(CellType type, int k, int hidden, rng::Engine& eng, double scale) {
    GenParams p;
    p.cell = Cell::init(type, k, hidden, "gen.cell", eng, scale);
    p.head = Mlp::init(hidden, hidden, k, "gen.head", eng, scale);
    return p;
}

std::vector<ad::Parameter*> GenParams::parameters() {
    std::vector<ad::Parameter*> out = cell.parameters();
    for (auto* p : head.parameters()) out.push_back(p);
    return out;
}

std::pair<TransitionState, std::vector<double>> transition_step(const TransitionState& state,
                                                                const GenParams& params) {
    require(static_cast<int>(state.hidden.size()) == params.cell.state_dim(),
            "transition_step: bad hidden size");
    require(static_cast<int>(state.last_z.size()) == params.cell.in_dim,
            "transition_step: bad last_z size");
    TransitionState next;
    next.hidden = params.cell.step_plain(state.last_z, state.hidden);
    next.last_z = state.last_z;
    std::span<const double> head_in(next.hidden.data(),
                                    static_cast<size_t>(params.head.in_dim));
    std::vector<double> probs = softmax_plain(params.head.apply_plain(head_in));
    for (double p : probs)
        if (!std::isfinite(p)) throw NonFiniteError("transition_step: non-finite output");
    return {std::move(next), std::move(probs)};
}

std::vector<double> dynamic_mixture(const std::vector<double>& trans,
                                    const std::vector<double>& basis_probs, double gamma) {
    require(gamma >= 0.0 && gamma <= 1.0, "dynamic_mixture: gamma must be in [0,1]");
    require(trans.size() == basis_probs.size(), "dynamic_mixture: size mismatch");
    std::vector<double> psi(trans.size());
    for (size_t i = 0; i < trans.size(); ++i)
        psi[i] = (1.0 - gamma) * trans[i] + gamma * basis_probs[i];
    return psi;
}

double emit_loglik(std::span<const double> x_col, std::span<const uint8_t> mask_col, int z,
                   const MixtureBasis& basis) {
    require(z >= 0 && z < basis.k(), "emit_loglik: z out of range");
    require(x_col.size() == mask_col.size(), "emit_loglik: size mismatch");
    int d = basis.dim();
    int n_obs = 0;
    double sq = 0.0;
    for (int i = 0; i < d; ++i) {
        if (!mask_col[i]) continue;
        ++n_obs;
        double dlt = x_col[i] - basis.means.value.data[static_cast<size_t>(z) * d + i];
        sq += dlt * dlt;
    }
    if (n_obs == 0) return 0.0;
    constexpr double log_2pi = 1.8378770664093454835606594728112;
    return -0.5 * basis.sigma * sq + n_obs * 0.5 * (std::log(basis.sigma) - log_2pi);
}

SampledSequence sample_sequence(const GenParams& params, const MixtureBasis& basis,
                                double gamma, int w, uint64_t seed) {
    basis.validate();
    require(w >= 1, "sample_sequence: w must be >= 1");
    int k = basis.k(), d = basis.dim();
    rng::Engine eng(seed);
    double noise_std = 1.0 / std::sqrt(basis.sigma);

    SampledSequence out;
    out.z_path.resize(w);
    out.e_path.resize(w);
    out.x = Mat(d, w);

    std::vector<double> uniform(k, 1.0 / k);
    auto emit = [&](int t, const std::vector<double>& dyn) {
        std::vector<double> psi = dynamic_mixture(dyn, basis.basis_probs, gamma);
        int ze = eng.categorical(psi);
        out.e_path[t] = ze;
        for (int i = 0; i < d; ++i)
            out.x.at(i, t) = basis.means.value.data[static_cast<size_t>(ze) * d + i] +
                             noise_std * eng.normal();
    };

    int z1 = static_cast<int>(eng.uniform_int(static_cast<size_t>(k)));
    out.z_path[0] = z1;
    emit(0, uniform);

    TransitionState state;
    state.hidden.assign(params.cell.state_dim(), 0.0);
    state.last_z.assign(k, 0.0);
    state.last_z[z1] = 1.0;
    for (int t = 1; t < w; ++t) {
        auto [next, trans] = transition_step(state, params);
        int zt = eng.categorical(trans);
        out.z_path[t] = zt;
        emit(t, trans);
        state = std::move(next);
        state.last_z.assign(k, 0.0);
        state.last_z[zt] = 1.0;
    }
    return out;
}

Rollout forecast_rollout(TransitionState state, const GenParams& params,
                         const MixtureBasis& basis, double gamma, int r, bool hard_sample,
                         uint64_t seed) {
    basis.validate();
    require(r >= 1, "forecast_rollout: r must be >= 1");
    int k = basis.k(), d = basis.dim();
    rng::Engine eng(seed);
    Rollout out;
    out.psi = Mat(r, k);
    out.xhat = Mat(d, r);
    for (int step = 0; step < r; ++step) {
        auto [next, trans] = transition_step(state, params);
        std::vector<double> psi = dynamic_mixture(trans, basis.basis_probs, gamma);
        for (int i = 0; i < k; ++i) out.psi.at(step, i) = psi[i];
        std::vector<double> feedback;
        if (hard_sample) {
            int z = eng.categorical(psi);
            feedback.assign(k, 0.0);
            feedback[z] = 1.0;
            for (int j = 0; j < d; ++j)
                out.xhat.at(j, step) = basis.means.value.data[static_cast<size_t>(z) * d + j];
        } else {
            feedback = psi;
            for (int j = 0; j < d; ++j) {
                double acc = 0.0;
                for (int i = 0; i < k; ++i)
                    acc += psi[i] * basis.means.value.data[static_cast<size_t>(i) * d + j];
                out.xhat.at(j, step) = acc;
            }
        }
        state = std::move(next);
        state.last_z = std::move(feedback);
    }
    return out;
}

}  // namespace dynmix::model
