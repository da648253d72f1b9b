#ifndef DYNMIX_GENERATIVE_HPP
#define DYNMIX_GENERATIVE_HPP

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dynmix/common.hpp"
#include "dynmix/graph.hpp"
#include "dynmix/rng.hpp"

namespace dynmix::model {

enum class CellType { Gru, Lstm };

/// Recurrent cell built from the tape op set. GRU by default; LSTM behind a
/// config switch (its state vector carries [h; c]).
struct Cell {
    CellType type = CellType::Gru;
    int in_dim = 0;
    int hid = 0;
    std::vector<ad::Parameter> w;

    static Cell init(CellType type, int in_dim, int hid, const std::string& prefix,
                     rng::Engine& eng, double scale);

    int state_dim() const { return type == CellType::Gru ? hid : 2 * hid; }
    std::vector<ad::Parameter*> parameters();

    struct Bound {
        std::vector<ad::Var> w;
    };
    Bound bind(ad::Graph& g) const;
    ad::Var step(ad::Graph& g, const Bound& b, ad::Var x, ad::Var state) const;

    std::vector<double> step_plain(std::span<const double> x,
                                   std::span<const double> state) const;
};

/// One-hidden-layer perceptron head: affine, tanh, affine.
struct Mlp {
    int in_dim = 0;
    int hid = 0;
    int out_dim = 0;
    std::vector<ad::Parameter> w;  // W1, b1, W2, b2

    static Mlp init(int in_dim, int hid, int out_dim, const std::string& prefix,
                    rng::Engine& eng, double scale);

    std::vector<ad::Parameter*> parameters();

    struct Bound {
        std::vector<ad::Var> w;
    };
    Bound bind(ad::Graph& g) const;
    ad::Var apply(ad::Graph& g, const Bound& b, ad::Var x) const;

    std::vector<double> apply_plain(std::span<const double> x) const;
};

/// Static basis mixture: component means, basis probabilities and the shared
/// isotropic precision sigma (a fixed hyperparameter, not trained).
struct MixtureBasis {
    ad::Parameter means;              // k x d
    std::vector<double> basis_probs;  // k, simplex
    double sigma = 1.0;

    int k() const { return means.value.shape[0]; }
    int dim() const { return means.value.shape[1]; }
    std::vector<double> mean_row(int z) const;
    void validate() const;

    static MixtureBasis init(int k, int d, double sigma, rng::Engine& eng, double scale = 0.1);
};

/// Transition network: recurrent cell over cluster vectors plus a softmax
/// MLP head producing p(z_{t+1} | z_{1:t}).
struct GenParams {
    Cell cell;  // input dim k
    Mlp head;   // hidden -> k

    static GenParams init(CellType type, int k, int hidden, rng::Engine& eng,
                          double scale = 0.1);
    std::vector<ad::Parameter*> parameters();
};

/// Recurrent filtering state: cell state plus the cluster vector fed next.
struct TransitionState {
    std::vector<double> hidden;  // cell state, zeros at start
    std::vector<double> last_z;  // one-hot or soft simplex vector
};

/// Advances the transition RNN one step. Returns the updated state (same
/// last_z; the caller installs the next cluster vector) and the k-simplex
/// p(z_{t+1} | z_{1:t}).
std::pair<TransitionState, std::vector<double>> transition_step(const TransitionState& state,
                                                                const GenParams& params);

/// psi = (1 - gamma) * trans + gamma * basis_probs.
std::vector<double> dynamic_mixture(const std::vector<double>& trans,
                                    const std::vector<double>& basis_probs, double gamma);

/// Masked isotropic Gaussian log density of one temporal feature under
/// component z. A fully masked step contributes 0.
double emit_loglik(std::span<const double> x_col, std::span<const uint8_t> mask_col, int z,
                   const MixtureBasis& basis);

struct SampledSequence {
    std::vector<int> z_path;   // transition draws
    std::vector<int> e_path;   // emission draws from psi
    Mat x;                     // d x w
};

/// Ancestral draw of a length-w sequence from the generative process:
/// z_1 uniform, transition consumes z, emission consumes z~ from psi.
SampledSequence sample_sequence(const GenParams& params, const MixtureBasis& basis,
                                double gamma, int w, uint64_t seed);

struct Rollout {
    Mat psi;   // r x k
    Mat xhat;  // d x r
};

/// Deterministic forecast rollout: each step computes the transition
/// distribution, mixes it with the basis, emits the psi-weighted mixture
/// mean, and feeds psi back as the next cluster input. With hard_sample set,
/// a one-hot draw replaces psi in both emission and feedback (ancestral
/// simulation mode).
Rollout forecast_rollout(TransitionState state, const GenParams& params,
                         const MixtureBasis& basis, double gamma, int r,
                         bool hard_sample = false, uint64_t seed = 0);

}  // namespace dynmix::model

#endif
