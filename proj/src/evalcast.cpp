#include "dynmix/evalcast.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "dynmix/rng.hpp"

namespace dynmix::eval {

ForecastResult forecast(const train::ModelParams& params, const data::MtsSample& prefix, int r) {
    require(r >= 1, "forecast: horizon must be >= 1");
    const int w = prefix.w();
    const int k = params.config.k;

    impute::DenseMts dense = impute::dense_impute(prefix, params.pre);
    infer::InferenceResult fwd =
        infer::infer_forward(dense, prefix.ref_times, params.inf, 1.0, 0);

    // Roll the transition RNN over the inferred soft assignments so its
    // hidden state reflects the window, then seed with the final marginal.
    model::TransitionState state;
    state.hidden.assign(params.gen.cell.state_dim(), 0.0);
    for (int t = 0; t + 1 < w; ++t) {
        std::vector<double> zt(k);
        for (int i = 0; i < k; ++i) zt[i] = fwd.seq.marginals.at(t, i);
        state.last_z = std::move(zt);
        auto [next, probs] = model::transition_step(state, params.gen);
        state.hidden = std::move(next.hidden);
    }
    state.last_z.resize(k);
    for (int i = 0; i < k; ++i) state.last_z[i] = fwd.seq.marginals.at(w - 1, i);

    double gamma = params.config.use_gate ? fwd.gates.back() : params.config.gamma;
    model::Rollout roll = model::forecast_rollout(state, params.gen, params.basis, gamma, r);
    return {std::move(roll.xhat), std::move(roll.psi)};
}

MetricReport score(const Mat& predictions, const Mat& target_values,
                   const MaskMat& target_mask) {
    require(predictions.rows == target_values.rows && predictions.cols == target_values.cols,
            "score: prediction/target shape mismatch");
    require(target_values.rows == target_mask.rows && target_values.cols == target_mask.cols,
            "score: target/mask shape mismatch");
    double se = 0.0, ae = 0.0;
    size_t n = 0;
    for (int i = 0; i < predictions.rows; ++i)
        for (int t = 0; t < predictions.cols; ++t) {
            if (!target_mask.at(i, t)) continue;
            double e = predictions.at(i, t) - target_values.at(i, t);
            se += e * e;
            ae += std::abs(e);
            ++n;
        }
    if (n == 0) throw UndefinedMetricsError("score: no observed target entries");
    MetricReport rep;
    rep.rmse = std::sqrt(se / static_cast<double>(n));
    rep.mae = ae / static_cast<double>(n);
    rep.n_scored = n;
    return rep;
}

std::pair<double, double> imputation_eval(const train::ModelParams& params,
                                          const std::vector<data::MtsSample>& samples,
                                          double hold_out_frac, uint64_t seed) {
    require(hold_out_frac > 0.0 && hold_out_frac < 1.0,
            "imputation_eval: hold_out_frac must be in (0,1)");
    double se_before = 0.0, se_after = 0.0;
    size_t n = 0;
    const int k = params.config.k;
    const int d = params.d;
    for (size_t si = 0; si < samples.size(); ++si) {
        const data::MtsSample& s = samples[si];
        data::MtsSample hidden = data::corrupt(s, hold_out_frac,
                                               rng::derive_seed(seed, "holdout", si));
        impute::DenseMts dense = impute::dense_impute(hidden, params.pre);
        infer::InferenceResult fwd =
            infer::infer_forward(dense, hidden.ref_times, params.inf, 1.0, 0);
        for (int i = 0; i < s.d(); ++i)
            for (int t = 0; t < s.w(); ++t) {
                if (!s.mask.at(i, t) || hidden.mask.at(i, t)) continue;  // only held-out cells
                double truth = s.values.at(i, t);
                double before = dense.values.at(i, t);
                double after = 0.0;
                for (int r = 0; r < k; ++r)
                    after += fwd.seq.marginals.at(t, r) *
                             params.basis.means.value.data[static_cast<size_t>(r) * d + i];
                se_before += (before - truth) * (before - truth);
                se_after += (after - truth) * (after - truth);
                ++n;
            }
    }
    if (n == 0) throw UndefinedMetricsError("imputation_eval: nothing was held out");
    return {std::sqrt(se_before / static_cast<double>(n)),
            std::sqrt(se_after / static_cast<double>(n))};
}

BaselinePredictions baselines(const data::MtsSample& prefix, int r) {
    require(r >= 1, "baselines: horizon must be >= 1");
    int d = prefix.d();
    BaselinePredictions out;
    out.mean = Mat(d, r, 0.0);
    out.locf = Mat(d, r, 0.0);
    for (int i = 0; i < d; ++i) {
        double sum = 0.0;
        size_t n = 0;
        double last = 0.0;
        bool any = false;
        for (int t = 0; t < prefix.w(); ++t)
            if (prefix.mask.at(i, t)) {
                sum += prefix.values.at(i, t);
                ++n;
                last = prefix.values.at(i, t);
                any = true;
            }
        double mean = any ? sum / static_cast<double>(n) : 0.0;
        double carry = any ? last : 0.0;
        for (int t = 0; t < r; ++t) {
            out.mean.at(i, t) = mean;
            out.locf.at(i, t) = carry;
        }
    }
    return out;
}

namespace {

struct PooledScore {
    double se = 0.0, ae = 0.0;
    size_t n = 0;
    void add(const Mat& pred, const data::MtsSample& s, int from, int len) {
        for (int i = 0; i < s.d(); ++i)
            for (int t = 0; t < len; ++t) {
                if (!s.mask.at(i, from + t)) continue;
                double e = pred.at(i, t) - s.values.at(i, from + t);
                se += e * e;
                ae += std::abs(e);
                ++n;
            }
    }
    MetricReport report() const {
        if (n == 0) throw UndefinedMetricsError("no observed target entries in split");
        return {std::sqrt(se / double(n)), ae / double(n), n};
    }
};

}  // namespace

SplitEvaluation evaluate_split(const train::ModelParams& params,
                               const std::vector<data::MtsSample>& test,
                               const data::ForecastTask& task) {
    require(task.window >= 2 && task.horizon >= 1, "evaluate_split: bad task");
    PooledScore sm, sb, sl;
    for (const data::MtsSample& s : test) {
        require(s.w() >= task.window + task.horizon,
                "evaluate_split: sample shorter than window + horizon");
        data::MtsSample prefix = s.prefix(task.window);
        ForecastResult fr = forecast(params, prefix, task.horizon);
        BaselinePredictions bp = baselines(prefix, task.horizon);
        sm.add(fr.predictions, s, task.window, task.horizon);
        sb.add(bp.mean, s, task.window, task.horizon);
        sl.add(bp.locf, s, task.window, task.horizon);
    }
    return {sm.report(), sb.report(), sl.report()};
}

std::vector<SweepRow> robustness_sweep(const train::TrainConfig& base_config,
                                       const data::Splits& splits, int d,
                                       const data::ForecastTask& task,
                                       const std::vector<double>& deltas,
                                       const std::vector<uint64_t>& seeds) {
    for (double dl : deltas)
        require(dl >= 0.0 && dl < 1.0, "robustness_sweep: deltas must lie in [0,1)");
    std::vector<SweepRow> rows;
    for (uint64_t seed : seeds) {
        for (double delta : deltas) {
            std::vector<data::MtsSample> tr, va;
            for (size_t i = 0; i < splits.train.size(); ++i)
                tr.push_back(data::corrupt(splits.train[i], delta,
                                           rng::derive_seed(seed, "sweep-train", i)));
            for (size_t i = 0; i < splits.valid.size(); ++i)
                va.push_back(data::corrupt(splits.valid[i], delta,
                                           rng::derive_seed(seed, "sweep-valid", i)));
            train::TrainConfig cfg = base_config;
            cfg.seed = seed;
            train::TrainResult res = train::fit(tr, va, cfg, d);
            SplitEvaluation ev = evaluate_split(res.params, splits.test, task);
            rows.push_back({"dynmix", delta, seed, ev.model.rmse, ev.model.mae,
                            ev.model.n_scored});
        }
        // Baselines read only the untouched test prefixes: one row per seed.
        SplitEvaluation ev0;
        {
            PooledScore sb, sl;
            for (const data::MtsSample& s : splits.test) {
                data::MtsSample prefix = s.prefix(task.window);
                BaselinePredictions bp = baselines(prefix, task.horizon);
                sb.add(bp.mean, s, task.window, task.horizon);
                sl.add(bp.locf, s, task.window, task.horizon);
            }
            ev0.mean_baseline = sb.report();
            ev0.locf_baseline = sl.report();
        }
        rows.push_back({"mean", 0.0, seed, ev0.mean_baseline.rmse, ev0.mean_baseline.mae,
                        ev0.mean_baseline.n_scored});
        rows.push_back({"locf", 0.0, seed, ev0.locf_baseline.rmse, ev0.locf_baseline.mae,
                        ev0.locf_baseline.n_scored});
    }
    return rows;
}

void write_metrics_csv(const std::string& path, const std::vector<SweepRow>& rows,
                       const std::string& dataset) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write file: " + path);
    out << "dataset,model,delta,seed,rmse,mae,n_scored\n";
    char buf[256];
    for (const SweepRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%s,%.17g,%llu,%.17g,%.17g,%zu\n", dataset.c_str(),
                      r.model.c_str(), r.delta, static_cast<unsigned long long>(r.seed), r.rmse,
                      r.mae, r.n_scored);
        out << buf;
    }
}

}  // namespace dynmix::eval
