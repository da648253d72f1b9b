#include "dynmix/inference.hpp"

#include <algorithm>
#include <cmath>

namespace dynmix::infer {

namespace {

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

}  // namespace

InferParams InferParams::init(model::CellType type, int d, int k, int hidden, rng::Engine& eng,
                              double scale) {
    InferParams p;
    p.cell = model::Cell::init(type, d, hidden, "infer.cell", eng, scale);
    p.head = model::Mlp::init(hidden + k, hidden, k, "infer.head", eng, scale);
    p.gate = model::Mlp::init(hidden, hidden, 1, "infer.gate", eng, scale);
    return p;
}

std::vector<ad::Parameter*> InferParams::parameters() {
    std::vector<ad::Parameter*> out = cell.parameters();
    for (auto* p : head.parameters()) out.push_back(p);
    for (auto* p : gate.parameters()) out.push_back(p);
    return out;
}

std::vector<double> gumbel_noise(size_t k, rng::Engine& eng) {
    std::vector<double> g(k);
    for (double& v : g) v = eng.gumbel();
    return g;
}

std::vector<double> gumbel_softmax(const std::vector<double>& logits, double temperature,
                                   const std::vector<double>& noise) {
    require(temperature > 0, "gumbel_softmax: temperature must be positive");
    require(logits.size() == noise.size(), "gumbel_softmax: size mismatch");
    std::vector<double> v(logits.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = (logits[i] + noise[i]) / temperature;
    return softmax_plain(std::move(v));
}

Mat marginals(const std::vector<Mat>& conditionals) {
    require(!conditionals.empty(), "marginals: empty conditional table");
    int k = conditionals[0].cols;
    int w = static_cast<int>(conditionals.size());
    Mat out(w, k);
    for (int r = 0; r < k; ++r) out.at(0, r) = conditionals[0].at(0, r);
    for (int t = 1; t < w; ++t) {
        require(conditionals[t].rows == k && conditionals[t].cols == k,
                "marginals: conditional table must be k x k");
        for (int r = 0; r < k; ++r) {
            double acc = 0.0;
            for (int s = 0; s < k; ++s) acc += conditionals[t].at(s, r) * out.at(t - 1, s);
            out.at(t, r) = acc;
        }
    }
    return out;
}

std::vector<double> estimate_basis_probs(const std::vector<std::vector<double>>& memberships) {
    require(!memberships.empty(), "estimate_basis_probs: empty batch");
    size_t k = memberships[0].size();
    std::vector<double> p(k, 0.0);
    for (const auto& row : memberships) {
        require(row.size() == k, "estimate_basis_probs: ragged rows");
        for (size_t i = 0; i < k; ++i) p[i] += row[i];
    }
    for (double& v : p) v /= static_cast<double>(memberships.size());
    return p;
}

InferenceResult infer_forward(const impute::DenseMts& dense,
                              const std::vector<double>& /*ref_times*/,
                              const InferParams& params, double temperature, uint64_t seed) {
    require(temperature > 0, "infer_forward: temperature must be positive");
    int d = dense.values.rows;
    int w = dense.values.cols;
    int k = params.k();
    int hid = params.cell.hid;
    require(params.cell.in_dim == d, "infer_forward: input dimension mismatch");

    rng::Engine eng(seed);
    InferenceResult out;
    out.hidden = Mat(w, params.cell.state_dim());
    out.gates.resize(w);
    out.seq.conditionals.resize(w);
    out.seq.samples = Mat(w, k);

    // h~_{t+1} = RNN(x_t, h~_t): the step-t state consumes the previous
    // step's feature; the first state sees a zero input.
    std::vector<double> state(params.cell.state_dim(), 0.0);
    std::vector<double> xcur(d, 0.0);
    std::vector<double> sample_prev(k, 0.0);  // z_0 = 0
    for (int t = 0; t < w; ++t) {
        for (int j = 0; j < d; ++j) xcur[j] = dense.values.at(j, t);
        state = params.cell.step_plain(xcur, state);
        for (int j = 0; j < params.cell.state_dim(); ++j) out.hidden.at(t, j) = state[j];
        std::span<const double> h(state.data(), static_cast<size_t>(hid));

        std::vector<double> gate_out = params.gate.apply_plain(h);
        out.gates[t] = 1.0 / (1.0 + std::exp(-gate_out[0]));

        // Conditional rows for every conditioning value of z_{t-1}; at t = 0
        // only the z_0 = 0 row exists.
        std::vector<double> head_in(hid + k);
        std::copy(h.begin(), h.end(), head_in.begin());
        int n_rows = t == 0 ? 1 : k;
        out.seq.conditionals[t] = Mat(n_rows, k);
        for (int s = 0; s < n_rows; ++s) {
            std::fill(head_in.begin() + hid, head_in.end(), 0.0);
            if (t > 0) head_in[hid + s] = 1.0;
            std::vector<double> probs = softmax_plain(params.head.apply_plain(head_in));
            for (int r = 0; r < k; ++r) out.seq.conditionals[t].at(s, r) = probs[r];
        }

        // Ancestral relaxed sample path conditioned on the previous draw.
        std::copy(sample_prev.begin(), sample_prev.end(), head_in.begin() + hid);
        std::vector<double> logits = params.head.apply_plain(head_in);
        std::vector<double> drawn = gumbel_softmax(logits, temperature, gumbel_noise(k, eng));
        for (int r = 0; r < k; ++r) out.seq.samples.at(t, r) = drawn[r];
        sample_prev = std::move(drawn);
    }
    out.seq.marginals = marginals(out.seq.conditionals);
    return out;
}

}  // namespace dynmix::infer
