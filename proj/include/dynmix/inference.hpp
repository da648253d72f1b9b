#ifndef DYNMIX_INFERENCE_HPP
#define DYNMIX_INFERENCE_HPP

#include <vector>

#include "dynmix/generative.hpp"
#include "dynmix/preimpute.hpp"

namespace dynmix::infer {

/// Structured inference network: recurrent encoder over the imputed series,
/// a softmax head over [hidden; previous cluster vector], and a sigmoid gate
/// head over the hidden state.
struct InferParams {
    model::Cell cell;  // input dim d
    model::Mlp head;   // (hidden + k) -> k
    model::Mlp gate;   // hidden -> 1

    static InferParams init(model::CellType type, int d, int k, int hidden, rng::Engine& eng,
                            double scale = 0.1);
    std::vector<ad::Parameter*> parameters();
    int k() const { return head.out_dim; }
};

/// Posterior quantities over one window.
/// conditionals[0] is 1 x k (z_0 enters as the zero vector); conditionals[t]
/// for t >= 1 is k x k with row s = q(z_{t+1} = . | z_t = s, x_{1:t+1}).
/// marginals row t is q(z_{t+1} | x_{1:t+1}) from the forward recursion;
/// samples row t is the relaxed one-hot draw along the ancestral path.
struct CategoricalSeq {
    std::vector<Mat> conditionals;
    Mat marginals;
    Mat samples;
};

struct InferenceResult {
    CategoricalSeq seq;
    Mat hidden;                 // w x hidden-dim encoder states
    std::vector<double> gates;  // per-step gate values, each in (0,1)
};

/// Forward pass of the inference network over a dense window.
/// Deterministic given the seed; marginals do not depend on it.
InferenceResult infer_forward(const impute::DenseMts& dense,
                              const std::vector<double>& ref_times, const InferParams& params,
                              double temperature, uint64_t seed);

/// Relaxed one-hot draw: softmax((logits + g) / tau) with g i.i.d.
/// Gumbel(0,1). The noise argument doubles as the test hook (zeros give the
/// noise-free path).
std::vector<double> gumbel_softmax(const std::vector<double>& logits, double temperature,
                                   const std::vector<double>& noise);

std::vector<double> gumbel_noise(size_t k, rng::Engine& eng);

/// Forward marginalization: q(z_1) = q(z_1|z_0); then
/// q(z_{t+1} = r) = sum_s q(z_{t+1} = r | z_t = s) q(z_t = s).
Mat marginals(const std::vector<Mat>& conditionals);

/// Basis-probability estimate: the mean of per-feature membership rows.
std::vector<double> estimate_basis_probs(const std::vector<std::vector<double>>& memberships);

}  // namespace dynmix::infer

#endif
