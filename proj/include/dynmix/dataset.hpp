#ifndef DYNMIX_DATASET_HPP
#define DYNMIX_DATASET_HPP

#include <optional>
#include <string>
#include <vector>

#include "dynmix/common.hpp"

namespace dynmix::data {

/// One sparse multivariate time-series sample: d variables over w reference
/// time steps. values and mask share the d x w layout; entries with mask = 0
/// hold the missing placeholder and are never read downstream.
struct MtsSample {
    std::string id;
    Mat values;             // d x w
    MaskMat mask;           // d x w
    std::vector<double> ref_times;  // strictly increasing, length w

    int d() const { return values.rows; }
    int w() const { return values.cols; }

    /// Checks the type invariants; throws InvalidArgument on violation.
    void validate() const;

    /// First `steps` columns as a new sample.
    MtsSample prefix(int steps) const;
};

/// Observed-window / forecast-horizon split of a sample.
struct ForecastTask {
    int window = 1;
    int horizon = 1;
};

struct SplitSpec {
    double train_frac = 0.7;
    double valid_frac = 0.1;
    double test_frac = 0.2;
    uint64_t seed = 0;
};

struct Splits {
    std::vector<MtsSample> train;
    std::vector<MtsSample> valid;
    std::vector<MtsSample> test;
};

/// Per-variable mean/std computed from train-split observed entries only.
/// A zero std is replaced by 1 before any division.
struct NormStats {
    std::vector<double> mean;
    std::vector<double> std;

    static NormStats compute(const std::vector<MtsSample>& train_samples, int d);
};

struct EmptyDatasetError : Error {
    explicit EmptyDatasetError(const std::string& msg) : Error(msg) {}
};

struct ConflictError : Error {
    explicit ConflictError(const std::string& msg) : Error(msg) {}
};

/// Reads long-format CSV `sample_id,time,variable,value`. One sample per
/// distinct sample_id; d is the dataset-wide max variable index + 1;
/// ref_times are the sorted distinct times per sample.
std::vector<MtsSample> load_long_csv(const std::string& path);

/// Reads wide-format CSV `sample_id,time,v0,v1,...` where empty cells or nan
/// mark missing entries.
std::vector<MtsSample> load_wide_csv(const std::string& path);

/// Writes the observed (sample,time,variable,value) set in long format.
void write_long_csv(const std::string& path, const std::vector<MtsSample>& samples);

/// Drops round(delta * n_observed) observed entries uniformly without
/// replacement. Deterministic per seed; the input sample is not modified.
MtsSample corrupt(const MtsSample& sample, double delta, uint64_t seed);

/// Deterministic shuffle followed by floor-sized allocation; remainder
/// samples go to train.
Splits split(const std::vector<MtsSample>& samples, const SplitSpec& spec);

/// Replaces observed entries by (x - mean_i) / std_i; masked entries are
/// untouched.
std::vector<MtsSample> normalize(const std::vector<MtsSample>& samples, const NormStats& stats);

/// Re-grids every sample onto the union of reference times across the
/// dataset: columns a sample never observed become fully masked. Needed when
/// sparse long-format files drop whole time steps, so that window/horizon
/// column indices align in absolute time across samples.
std::vector<MtsSample> align_to_grid(const std::vector<MtsSample>& samples);

/// Ground truth returned by synthesize, exportable as JSON.
struct GroundTruth {
    Mat means;                               // k x d
    Mat transition;                          // k x k, row-stochastic
    std::vector<double> basis_probs;         // k
    std::vector<std::vector<int>> paths;           // n x w transition states
    std::vector<std::vector<int>> emission_paths;  // n x w emitting components

    std::string to_json() const;
};

struct SynthOptions {
    std::optional<int> fixed_z1;        // collapses the z1 prior to one state
    std::optional<Mat> transition;      // overrides the built-in matrix
    std::optional<Mat> means;           // overrides the built-in means
};

/// Draws n length-w samples from the model's own generative process with a
/// fixed first-order transition matrix standing in for the learned
/// transition network and uniform basis probabilities. Emission component
/// z~_t is drawn from psi_t = (1-gamma) * transition-row + gamma * basis;
/// features come from N(mu_{z~}, sigma^-1 I). Samples are fully observed;
/// apply corrupt() for missingness.
std::pair<std::vector<MtsSample>, GroundTruth> synthesize(int k, int d, int w, int n,
                                                          double sigma, double gamma,
                                                          uint64_t seed,
                                                          const SynthOptions& opts = {});

}  // namespace dynmix::data

#endif
