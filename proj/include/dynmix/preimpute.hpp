#ifndef DYNMIX_PREIMPUTE_HPP
#define DYNMIX_PREIMPUTE_HPP

#include <vector>

#include "dynmix/dataset.hpp"
#include "dynmix/graph.hpp"

namespace dynmix::impute {

/// Trainable pre-imputation parameters. Bandwidths are stored unconstrained;
/// the effective alpha_i = softplus(alpha_raw_i) stays positive under
/// gradient training. rho's diagonal is pinned to 1 after every update.
struct PreImputeParams {
    ad::Parameter alpha_raw;  // d
    ad::Parameter rho;        // d x d, identity at init

    static PreImputeParams init(int d, double alpha0 = 1.0);

    void pin_rho_diagonal();
    std::vector<double> alphas() const;
    int d() const { return static_cast<int>(alpha_raw.value.data.size()); }
};

/// Densely parameterized MTS: observed entries pass through exactly, missing
/// entries carry the merge output. No entry is ever NaN.
struct DenseMts {
    Mat values;
    MaskMat source_mask;
};

/// Gaussian kernel weight e^{-alpha (t* - t)^2}.
double kernel(double t_star, double t, double alpha);

/// Observation intensity at t*: sum of kernel weights over observed steps of
/// one variable. Zero iff the variable has no observations.
double intensity(double t_star, const std::vector<uint8_t>& mask_col,
                 const std::vector<double>& ref_times, double alpha);

struct SmoothResult {
    Mat xbar;    // d x w kernel-smoothed estimate; 0 where a variable has no observations
    Mat lambda;  // d x w intensity with each variable's own bandwidth
};

/// Per-variable kernel smoothing over the reference grid.
SmoothResult smooth(const data::MtsSample& sample, const PreImputeParams& params);

/// Cross-variable merge: observed entries pass through; a missing entry of
/// variable i becomes the intensity-weighted, rho-mixed combination of the
/// smoothed columns. A variable with no observations at all imputes 0.
DenseMts merge(const data::MtsSample& sample, const SmoothResult& sm,
               const PreImputeParams& params);

/// smooth + merge in one call.
DenseMts dense_impute(const data::MtsSample& sample, const PreImputeParams& params);

/// Tape version of smooth+merge: returns one d-vector Var per time step,
/// differentiable w.r.t. alpha_raw and rho. Observed entries are constants
/// equal to the observed values.
std::vector<ad::Var> build_dense_columns(ad::Graph& g, const data::MtsSample& sample,
                                         ad::Var alpha_raw, ad::Var rho);

}  // namespace dynmix::impute

#endif
