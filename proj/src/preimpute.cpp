#include "dynmix/preimpute.hpp"

#include <algorithm>
#include <cmath>

namespace dynmix::impute {

namespace {

double softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

// Indices of observed steps per variable; values are only ever read through
// these lists, so masked placeholders cannot leak into any computation.
std::vector<std::vector<int>> observed_steps(const data::MtsSample& s) {
    std::vector<std::vector<int>> obs(s.d());
    for (int i = 0; i < s.d(); ++i)
        for (int t = 0; t < s.w(); ++t)
            if (s.mask.at(i, t)) obs[i].push_back(t);
    return obs;
}

}  // namespace

PreImputeParams PreImputeParams::init(int d, double alpha0) {
    require(alpha0 > 0, "PreImputeParams: alpha0 must be positive");
    double raw = std::log(std::expm1(alpha0));
    PreImputeParams p;
    p.alpha_raw = ad::Parameter("preimpute.alpha_raw",
                                ad::Tensor({d}, std::vector<double>(d, raw)));
    ad::Tensor rho = ad::Tensor::zeros({d, d});
    for (int i = 0; i < d; ++i) rho.data[static_cast<size_t>(i) * d + i] = 1.0;
    p.rho = ad::Parameter("preimpute.rho", std::move(rho));
    return p;
}

void PreImputeParams::pin_rho_diagonal() {
    int d = this->d();
    for (int i = 0; i < d; ++i) rho.value.data[static_cast<size_t>(i) * d + i] = 1.0;
}

std::vector<double> PreImputeParams::alphas() const {
    std::vector<double> out(alpha_raw.value.data.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = softplus(alpha_raw.value.data[i]);
    return out;
}

double kernel(double t_star, double t, double alpha) {
    require(alpha > 0, "kernel: alpha must be positive");
    double dlt = t_star - t;
    return std::exp(-alpha * dlt * dlt);
}

double intensity(double t_star, const std::vector<uint8_t>& mask_col,
                 const std::vector<double>& ref_times, double alpha) {
    require(alpha > 0, "intensity: alpha must be positive");
    require(mask_col.size() == ref_times.size(), "intensity: length mismatch");
    double acc = 0.0;
    for (size_t t = 0; t < mask_col.size(); ++t)
        if (mask_col[t]) acc += kernel(t_star, ref_times[t], alpha);
    return acc;
}

SmoothResult smooth(const data::MtsSample& sample, const PreImputeParams& params) {
    int d = sample.d(), w = sample.w();
    require(params.d() == d, "smooth: parameter dimension mismatch");
    auto obs = observed_steps(sample);
    std::vector<double> alpha = params.alphas();
    SmoothResult out;
    out.xbar = Mat(d, w, 0.0);
    out.lambda = Mat(d, w, 0.0);
    for (int i = 0; i < d; ++i) {
        if (obs[i].empty()) continue;  // xbar stays 0, lambda stays 0
        for (int ts = 0; ts < w; ++ts) {
            double t_star = sample.ref_times[ts];
            // Shift exponents by their max so the normalized weights stay
            // well-defined even when every kernel value underflows.
            double mx = -std::numeric_limits<double>::infinity();
            for (int o : obs[i]) {
                double dlt = t_star - sample.ref_times[o];
                mx = std::max(mx, -alpha[i] * dlt * dlt);
            }
            double wsum = 0.0, vsum = 0.0;
            for (int o : obs[i]) {
                double dlt = t_star - sample.ref_times[o];
                double wgt = std::exp(-alpha[i] * dlt * dlt - mx);
                wsum += wgt;
                vsum += wgt * sample.values.at(i, o);
            }
            out.xbar.at(i, ts) = vsum / wsum;
            out.lambda.at(i, ts) = std::exp(mx) * wsum;
        }
    }
    return out;
}

DenseMts merge(const data::MtsSample& sample, const SmoothResult& sm,
               const PreImputeParams& params) {
    int d = sample.d(), w = sample.w();
    auto obs = observed_steps(sample);
    std::vector<double> alpha = params.alphas();
    DenseMts out;
    out.values = Mat(d, w, 0.0);
    out.source_mask = sample.mask;
    for (int i = 0; i < d; ++i) {
        for (int ts = 0; ts < w; ++ts) {
            if (sample.mask.at(i, ts)) {
                out.values.at(i, ts) = sample.values.at(i, ts);
                continue;
            }
            if (obs[i].empty()) continue;  // no observations at all: impute 0
            double t_star = sample.ref_times[ts];
            // All intensities in the ratio use variable i's mask, with every
            // bandwidth alpha_j. A shared exponent shift cancels exactly.
            double mx = -std::numeric_limits<double>::infinity();
            for (int j = 0; j < d; ++j)
                for (int o : obs[i]) {
                    double dlt = t_star - sample.ref_times[o];
                    mx = std::max(mx, -alpha[j] * dlt * dlt);
                }
            double num = 0.0, den = 0.0;
            for (int j = 0; j < d; ++j) {
                double lam = 0.0;
                for (int o : obs[i]) {
                    double dlt = t_star - sample.ref_times[o];
                    lam += std::exp(-alpha[j] * dlt * dlt - mx);
                }
                num += params.rho.value.data[static_cast<size_t>(i) * d + j] * lam *
                       sm.xbar.at(j, ts);
                den += lam;
            }
            out.values.at(i, ts) = num / den;
        }
    }
    if (!out.values.a.empty())
        for (double v : out.values.a)
            if (!std::isfinite(v)) throw NonFiniteError("merge: non-finite output");
    return out;
}

DenseMts dense_impute(const data::MtsSample& sample, const PreImputeParams& params) {
    return merge(sample, smooth(sample, params), params);
}

std::vector<ad::Var> build_dense_columns(ad::Graph& g, const data::MtsSample& sample,
                                         ad::Var alpha_raw, ad::Var rho) {
    int d = sample.d(), w = sample.w();
    auto obs = observed_steps(sample);
    ad::Var alpha = g.softplus(alpha_raw);
    std::vector<double> alpha_now(d);
    for (int i = 0; i < d; ++i) alpha_now[i] = g.tensor(alpha).data[i];
    std::vector<ad::Var> alpha_i(d);
    for (int i = 0; i < d; ++i) alpha_i[i] = g.at(alpha, i);

    // Squared time gaps from each reference step to variable i's observations.
    auto gaps = [&](int i, int ts) {
        std::vector<double> out(obs[i].size());
        for (size_t o = 0; o < obs[i].size(); ++o) {
            double dlt = sample.ref_times[ts] - sample.ref_times[obs[i][o]];
            out[o] = dlt * dlt;
        }
        return out;
    };

    // Smoothed estimate xbar_j(t*) for every variable/step; constants where
    // a variable has no observations.
    std::vector<std::vector<ad::Var>> xbar(d, std::vector<ad::Var>(w));
    for (int j = 0; j < d; ++j) {
        std::vector<double> vals;
        for (int o : obs[j]) vals.push_back(sample.values.at(j, o));
        for (int ts = 0; ts < w; ++ts) {
            if (obs[j].empty()) {
                xbar[j][ts] = g.scalar(0.0);
                continue;
            }
            std::vector<double> g2 = gaps(j, ts);
            double mx = 0.0;
            for (double q : g2) mx = std::max(mx, -alpha_now[j] * q);
            ad::Var expo = g.add_scalar(g.neg(g.smul(alpha_i[j], g.constant(ad::Tensor::vec(g2)))), -mx);
            ad::Var wgt = g.exp(expo);
            xbar[j][ts] = g.div(g.dot(wgt, g.constant(ad::Tensor::vec(vals))), g.sum(wgt));
        }
    }

    std::vector<ad::Var> cols(w);
    for (int ts = 0; ts < w; ++ts) {
        std::vector<ad::Var> entries(d);
        for (int i = 0; i < d; ++i) {
            if (sample.mask.at(i, ts)) {
                entries[i] = g.scalar(sample.values.at(i, ts));
                continue;
            }
            if (obs[i].empty()) {
                entries[i] = g.scalar(0.0);
                continue;
            }
            std::vector<double> g2 = gaps(i, ts);
            double mx = -std::numeric_limits<double>::infinity();
            for (int j = 0; j < d; ++j)
                for (double q : g2) mx = std::max(mx, -alpha_now[j] * q);
            ad::Var cgaps = g.constant(ad::Tensor::vec(g2));
            ad::Var num = g.scalar(0.0);
            ad::Var den = g.scalar(0.0);
            for (int j = 0; j < d; ++j) {
                ad::Var expo = g.add_scalar(g.neg(g.smul(alpha_i[j], cgaps)), -mx);
                ad::Var lam = g.sum(g.exp(expo));
                ad::Var rho_ij = g.at(rho, i * d + j);
                num = g.add(num, g.mul(g.mul(rho_ij, lam), xbar[j][ts]));
                den = g.add(den, lam);
            }
            entries[i] = g.div(num, den);
        }
        cols[ts] = g.pack(entries);
    }
    return cols;
}

}  // namespace dynmix::impute
