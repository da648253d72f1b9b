#ifndef DYNMIX_TRAINER_HPP
#define DYNMIX_TRAINER_HPP

#include <optional>
#include <string>
#include <vector>

#include "dynmix/dataset.hpp"
#include "dynmix/generative.hpp"
#include "dynmix/inference.hpp"
#include "dynmix/preimpute.hpp"

namespace dynmix::train {

struct TrainConfig {
    int k = 3;
    double gamma = 1e-2;   // ignored when use_gate is set
    bool use_gate = false;
    double sigma = 1.0;
    int hidden_dim = 16;
    int window = 0;  // 0 uses each sample's full length
    int horizon = 1;
    int epochs = 100;
    int batch_size = 32;
    double lr = 1e-3;
    uint64_t seed = 1;
    double temperature_start = 1.0;
    double temperature_end = 0.3;
    int patience = 10;
    int samples_S = 1;
    model::CellType cell = model::CellType::Gru;
    // Deterministic-annealing warmup: the training-time precision climbs
    // geometrically from min(1, sigma) to sigma over this many epochs, which
    // keeps early responsibilities soft and avoids merged-component optima.
    // Validation tracking starts once the warmup is over. 0 disables.
    int sigma_warmup_epochs = 0;
    // Restart selection: train `restarts` fresh initializations for a short
    // probe phase, keep the one with the best validation score, and spend
    // the remaining epochs on it. probe_epochs = 0 derives the probe length
    // from the warmup. Mixture models occasionally merge components from an
    // unlucky initialization; validation cleanly separates such runs.
    int restarts = 1;
    int probe_epochs = 0;

    void validate() const;
    double temperature_at(int epoch) const;
    double sigma_at(int epoch) const;
};

/// The full trainable bundle: pre-imputation, generative and inference
/// parameters plus the basis mixture.
struct ModelParams {
    int d = 0;
    TrainConfig config;
    impute::PreImputeParams pre;
    model::GenParams gen;
    model::MixtureBasis basis;
    infer::InferParams inf;
    std::optional<data::NormStats> norm_stats;

    static ModelParams init(const TrainConfig& cfg, int d);
    std::vector<ad::Parameter*> parameters();
    std::vector<const ad::Parameter*> parameters() const;
};

struct ElboOptions {
    bool exact_kl = false;  // enumerate q over prefixes instead of sampling
    double temperature = 0.5;
    uint64_t seed = 0;
    int samples_S = 1;
    const Mat* fixed_gumbel = nullptr;  // (S*w) x k noise matrix test hook
};

/// Builds the negative ELBO for one sample on the tape. Reconstruction and
/// basis terms are weighted by the analytic marginals; KL expectations use
/// relaxed ancestral samples or, in exact mode, full prefix enumeration.
/// Likelihood terms are masked with the sample's raw mask.
ad::Var build_neg_elbo(ad::Graph& g, const data::MtsSample& sample, ModelParams& params,
                       const ElboOptions& opts);

/// Negative ELBO value without gradients.
double elbo(const data::MtsSample& sample, ModelParams& params, const ElboOptions& opts);

/// Exact log marginal likelihood by enumerating all k^w transition paths;
/// each path multiplies per-step emission mixtures psi_t. Guarded to
/// k^w <= 4096. Log-space throughout.
double exact_log_marginal(const data::MtsSample& sample, const ModelParams& params,
                          double gamma);

struct EpochLog {
    int epoch = 0;
    double train_neg_elbo = 0.0;
    double valid_neg_elbo = 0.0;
    double gate_mean = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    ModelParams params;
    std::vector<EpochLog> log;
    int best_epoch = -1;
    double best_valid = 0.0;
};

struct TrainDivergence : Error {
    explicit TrainDivergence(const std::string& msg) : Error(msg) {}
};

/// Adam on the mean negative ELBO per batch with early stopping on the
/// validation ELBO. rho's diagonal is re-pinned after every step; the basis
/// probabilities are re-estimated from the current inference marginals per
/// batch. Fully deterministic per config seed.
TrainResult fit(const std::vector<data::MtsSample>& train_samples,
                  const std::vector<data::MtsSample>& valid_samples, const TrainConfig& cfg,
                  int d);

void write_training_log(const std::string& path, const std::vector<EpochLog>& log);

struct CheckpointError : Error {
    explicit CheckpointError(const std::string& msg) : Error(msg) {}
};

/// Schema-versioned JSON checkpoint; save/load round-trips are bit-exact.
void checkpoint_save(const ModelParams& params, const std::string& path);
ModelParams checkpoint_load(const std::string& path);

}  // namespace dynmix::train

#endif
