#ifndef DYNMIX_EVALCAST_HPP
#define DYNMIX_EVALCAST_HPP

#include <string>
#include <vector>

#include "dynmix/trainer.hpp"

namespace dynmix::eval {

struct ForecastResult {
    Mat predictions;  // d x r
    Mat psi_path;     // r x k
};

struct MetricReport {
    double rmse = 0.0;
    double mae = 0.0;
    size_t n_scored = 0;
};

struct UndefinedMetricsError : Error {
    explicit UndefinedMetricsError(const std::string& msg) : Error(msg) {}
};

/// Forecasts r steps past an observed prefix: pre-impute, filter with the
/// inference network, seed the transition state with the final inferred
/// marginal, then roll out deterministically.
ForecastResult forecast(const train::ModelParams& params, const data::MtsSample& prefix, int r);

/// Pooled masked RMSE/MAE over all observed target entries.
MetricReport score(const Mat& predictions, const Mat& target_values, const MaskMat& target_mask);

/// Hides a fraction of observed entries, then scores the pre-imputation
/// output (before) and the inference-marginal mixture-mean reconstruction
/// (after) at exactly those entries. Returns (rmse_before, rmse_after).
std::pair<double, double> imputation_eval(const train::ModelParams& params,
                                          const std::vector<data::MtsSample>& samples,
                                          double hold_out_frac, uint64_t seed);

struct BaselinePredictions {
    Mat mean;  // per-variable observed prefix mean, repeated
    Mat locf;  // last observed value carried forward
};

/// Naive anchors; a variable with no prefix observations predicts 0.
BaselinePredictions baselines(const data::MtsSample& prefix, int r);

struct SweepRow {
    std::string model;
    double delta = 0.0;
    uint64_t seed = 0;
    double rmse = 0.0;
    double mae = 0.0;
    size_t n_scored = 0;
};

/// For each (delta, seed): corrupt train+valid, retrain from scratch, score
/// on the untouched test targets. Baseline rows are emitted once per seed.
std::vector<SweepRow> robustness_sweep(const train::TrainConfig& base_config,
                                       const data::Splits& splits, int d,
                                       const data::ForecastTask& task,
                                       const std::vector<double>& deltas,
                                       const std::vector<uint64_t>& seeds);

/// Scores a trained model over a test split: pooled over every sample's
/// observed horizon entries. Also reports the naive baselines.
struct SplitEvaluation {
    MetricReport model;
    MetricReport mean_baseline;
    MetricReport locf_baseline;
};
SplitEvaluation evaluate_split(const train::ModelParams& params,
                               const std::vector<data::MtsSample>& test,
                               const data::ForecastTask& task);

void write_metrics_csv(const std::string& path, const std::vector<SweepRow>& rows,
                       const std::string& dataset);

}  // namespace dynmix::eval

#endif
