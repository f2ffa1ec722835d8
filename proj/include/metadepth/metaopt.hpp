#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "metadepth/arch.hpp"
#include "metadepth/dataset.hpp"
#include "metadepth/params.hpp"
#include "metadepth/rng.hpp"
#include "metadepth/tasks.hpp"

namespace metadepth {

/// Named rng substreams. Every consumer of randomness inside a training run
/// owns one of these, so toggling a feature never shifts another feature's
/// draws (e.g. task sampling is identical with augmentation on or off).
inline constexpr std::uint64_t kTaskStreamId = 0x7A5C;
inline constexpr std::uint64_t kOnlineAugStreamId = 0x0A06;
inline constexpr std::uint64_t kTaskAugStreamId = 0xA9A1;
inline constexpr std::uint64_t kShuffleStreamId = 0x5FF1;
inline constexpr std::uint64_t kFlipStreamId = 0xF11F;

/// Loss above this (or any non-finite loss) aborts with DivergenceError.
inline constexpr double kDivergenceLossLimit = 1e6;

struct MetaConfig {
    int epochs = 5;           // N
    int iters_per_epoch = 0;  // T; 0 means floor(|dataset| / task_size)
    int inner_steps = 4;      // L
    int task_size = 32;       // K
    double alpha = 1e-3;      // inner-loop learning rate
    double beta = 0.5;        // meta step size in [0,1]
    bool use_online_aug = false;
    bool use_mixup = false;
    bool use_channel_shuffle = false;
    double keep_prob = 0.95;     // channel-shuffle Bernoulli keep probability
    double mixup_beta_a = 0.5;   // mix-up Beta shape; only (0.5, 0.5) is
    double mixup_beta_b = 0.5;   // implemented (arcsine law)
    std::uint64_t seed = 0;
};

void validate(const MetaConfig& cfg);

enum class AugChoice { none, mixup, channel_shuffle };
const char* aug_choice_name(AugChoice c);

struct TrainLogEntry {
    std::int64_t iteration = 0;  // global update index, 0-based
    int epoch = 0;               // 0-based
    double loss = 0.0;           // loss at the pre-update parameters on the fresh batch
    AugChoice aug = AugChoice::none;
    double lr = 0.0;
    int grad_evals = 0;  // gradient computations performed by this update
};

struct TrainLog {
    std::vector<TrainLogEntry> entries;
    std::vector<double> epoch_seconds;
    std::vector<double> epoch_val_rmse;  // filled when a validation set is given
    std::uint64_t seed = 0;
    std::string dataset_hash;

    void to_csv(std::ostream& out) const;  // iteration,epoch,loss,aug,lr,grad_evals
};

template <typename T>
struct TrainResult {
    ParamVector<T> params;
    TrainLog log;
};

/// Exploration phase: exactly `inner_steps` SGD steps at lr alpha on the
/// task's (optionally online-augmented, re-randomized per step) masked L2
/// loss, starting from a copy of theta_meta. theta_meta is unmodified.
/// first_loss receives the step-1 loss when non-null.
template <typename T>
ParamVector<T> inner_loop(const ParamVector<T>& theta_meta, const FineGrainedTask<T>& task,
                          const MetaConfig& cfg, const ArchConfig& arch, RngStream& aug_rng,
                          long long iter = 0, double* first_loss = nullptr);

/// Mix-up at the bottleneck: per-sample lambda blends the encoder outputs
/// (bottleneck and skip features) of B and B' and the depth targets with the
/// same lambda, then takes one SGD step at lr alpha over all parameters.
template <typename T>
ParamVector<T> mixup_step_with_lambdas(const ParamVector<T>& theta, const FineGrainedTask<T>& b,
                                       const FineGrainedTask<T>& b_prime, const std::vector<T>& lambdas,
                                       const MetaConfig& cfg, const ArchConfig& arch, long long iter = 0);

/// Draws lambda_k ~ Beta(0.5, 0.5) per sample, then mixup_step_with_lambdas.
template <typename T>
ParamVector<T> mixup_step(const ParamVector<T>& theta, const FineGrainedTask<T>& b,
                          const FineGrainedTask<T>& b_prime, const MetaConfig& cfg, const ArchConfig& arch,
                          RngStream& rng, long long iter = 0);

/// Channel shuffle at the bottleneck: channels with keep[c] == 0 are replaced
/// by B''s bottleneck channels (skip features stay B's), supervised by B's
/// own depth; one SGD step at lr alpha.
template <typename T>
ParamVector<T> channel_shuffle_step_with_mask(const ParamVector<T>& theta, const FineGrainedTask<T>& b,
                                              const FineGrainedTask<T>& b_prime,
                                              const std::vector<std::uint8_t>& keep, const MetaConfig& cfg,
                                              const ArchConfig& arch, long long iter = 0);

/// Draws one Bernoulli(keep_prob) mask over the p bottleneck channels,
/// shared across the batch, then channel_shuffle_step_with_mask.
template <typename T>
ParamVector<T> channel_shuffle_step(const ParamVector<T>& theta, const FineGrainedTask<T>& b,
                                    const FineGrainedTask<T>& b_prime, const MetaConfig& cfg,
                                    const ArchConfig& arch, RngStream& rng, long long iter = 0);

/// Picks one enabled augmentation (fair coin when both are on) and applies
/// it; returns theta_l untouched when neither is enabled.
template <typename T>
std::pair<ParamVector<T>, AugChoice> task_augment(const ParamVector<T>& theta_l, const FineGrainedTask<T>& b,
                                                  const FineGrainedTask<T>& b_prime, const MetaConfig& cfg,
                                                  const ArchConfig& arch, RngStream& rng, long long iter = 0);

/// Reptile interpolation theta_meta - beta * (theta_meta - theta_aug).
/// beta = 0 returns theta_meta exactly; beta = 1 returns theta_aug exactly.
template <typename T>
ParamVector<T> meta_update(const ParamVector<T>& theta_meta, const ParamVector<T>& theta_aug, T beta) {
    return axpy_interpolate(theta_meta, theta_aug, beta);
}

/// First-stage meta-initialization: epochs x iters_per_epoch meta-iterations
/// of {draw task (pair) -> inner loop -> task augmentation -> interpolation}.
/// Divergence propagates as DivergenceError with the meta-iteration index.
template <typename T>
TrainResult<T> meta_learn(const Dataset<T>& dataset, const MetaConfig& cfg, const ParamVector<T>& theta_init,
                          const ArchConfig& arch);

struct SupervisedConfig {
    double lr = 3e-4;
    int batch_size = 32;
    int max_epochs = 30;
    int patience = 5;  // epochs without val-RMSE improvement tolerated; <= 0 disables
    double weight_decay = 0.0;
    bool flip_aug = true;
    int accum_steps = 4;  // used by the gradient-accumulation baseline only
    std::uint64_t seed = 0;
};

void validate(const SupervisedConfig& cfg);

/// Second-stage training: epoch-shuffled mini-batch SGD on the masked L2
/// loss, flip-only augmentation. With a validation set, evaluates RMSE each
/// epoch and returns the best parameters seen (early stop after `patience`
/// bad epochs); otherwise runs max_epochs and returns the final parameters.
template <typename T>
TrainResult<T> supervised_train(const Dataset<T>& train, const Dataset<T>* val,
                                const ParamVector<T>& theta_init, const SupervisedConfig& cfg,
                                const ArchConfig& arch);

/// First-stage baseline: supervised training under coupled L2 decay
/// (cfg.weight_decay). With wd = 0 this is supervised_train exactly.
template <typename T>
TrainResult<T> baseline_wd_pretrain(const Dataset<T>& train, const Dataset<T>* val,
                                    const ParamVector<T>& theta_init, const SupervisedConfig& cfg,
                                    const ArchConfig& arch);

/// First-stage baseline: gradients of accum_steps successive mini-batches
/// accumulate at fixed parameters, then one update. The logged lr is the
/// effective accum_steps x lr rate of the equivalent large-batch step.
template <typename T>
TrainResult<T> baseline_grad_accum(const Dataset<T>& train, const Dataset<T>* val,
                                   const ParamVector<T>& theta_init, const SupervisedConfig& cfg,
                                   const ArchConfig& arch);

template <typename T>
struct FomamlResult {
    ParamVector<T> params;
    TrainLog log;
    bool diverged = false;
    long long diverged_at = -1;
};

/// First-order MAML for the convergence comparison: inner steps on the first
/// half of the task, then theta <- theta - beta * grad of the second-half
/// loss at the adapted parameters. Here beta is a raw learning rate.
/// Divergence is recorded in the result, not thrown.
template <typename T>
FomamlResult<T> fomaml_meta_learn(const Dataset<T>& dataset, const MetaConfig& cfg,
                                  const ParamVector<T>& theta_init, const ArchConfig& arch);

}  // namespace metadepth
