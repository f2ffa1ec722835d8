#include "metadepth/metaopt.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "metadepth/errors.hpp"
#include "metadepth/metrics.hpp"
#include "metadepth/ops.hpp"

namespace metadepth {

void validate(const MetaConfig& cfg) {
    if (cfg.epochs < 0) throw UsageError("epochs must be >= 0, got " + std::to_string(cfg.epochs));
    if (cfg.iters_per_epoch < 0)
        throw UsageError("iters_per_epoch must be >= 0, got " + std::to_string(cfg.iters_per_epoch));
    if (cfg.inner_steps < 1)
        throw UsageError("inner_steps must be >= 1, got " + std::to_string(cfg.inner_steps));
    if (cfg.task_size < 1) throw UsageError("task_size must be >= 1, got " + std::to_string(cfg.task_size));
    if (!(cfg.alpha > 0.0)) throw UsageError("alpha must be positive, got " + std::to_string(cfg.alpha));
    if (!(cfg.beta >= 0.0 && cfg.beta <= 1.0))
        throw UsageError("beta must lie in [0,1], got " + std::to_string(cfg.beta));
    if (!(cfg.keep_prob >= 0.0 && cfg.keep_prob <= 1.0))
        throw UsageError("keep_prob must lie in [0,1], got " + std::to_string(cfg.keep_prob));
    if (cfg.mixup_beta_a != 0.5 || cfg.mixup_beta_b != 0.5)
        throw UsageError("only the Beta(0.5,0.5) mix-up law is implemented");
}

void validate(const SupervisedConfig& cfg) {
    if (!(cfg.lr > 0.0)) throw UsageError("lr must be positive, got " + std::to_string(cfg.lr));
    if (cfg.batch_size < 1)
        throw UsageError("batch_size must be >= 1, got " + std::to_string(cfg.batch_size));
    if (cfg.max_epochs < 0)
        throw UsageError("max_epochs must be >= 0, got " + std::to_string(cfg.max_epochs));
    if (cfg.weight_decay < 0.0)
        throw UsageError("weight_decay must be >= 0, got " + std::to_string(cfg.weight_decay));
    if (cfg.accum_steps < 1)
        throw UsageError("accum_steps must be >= 1, got " + std::to_string(cfg.accum_steps));
}

const char* aug_choice_name(AugChoice c) {
    switch (c) {
        case AugChoice::none: return "none";
        case AugChoice::mixup: return "mixup";
        default: return "channel_shuffle";
    }
}

void TrainLog::to_csv(std::ostream& out) const {
    out << "iteration,epoch,loss,aug,lr,grad_evals\n";
    for (const auto& e : entries)
        out << e.iteration << ',' << e.epoch << ',' << e.loss << ',' << aug_choice_name(e.aug) << ','
            << e.lr << ',' << e.grad_evals << '\n';
}

namespace {

void check_divergence(double loss, long long iter) {
    if (!std::isfinite(loss) || loss > kDivergenceLossLimit)
        throw DivergenceError("training loss " + std::to_string(loss) + " exceeded the stability limit",
                              iter);
}

/// Mask that is 1 only where both depth maps carry valid supervision.
template <typename T>
Tensor<T> both_valid(const Tensor<T>& a, const Tensor<T>& b) {
    Tensor<T> mask(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* m = mask.data();
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) m[i] = (pa[i] > T(0) && pb[i] > T(0)) ? T(1) : T(0);
    return mask;
}

/// One SGD step on the masked L2 loss of a batch. Returns the stepped
/// parameters and the (pre-step) loss value. theta is unmodified.
template <typename T>
std::pair<ParamVector<T>, double> grad_step(const ParamVector<T>& theta, const ArchConfig& arch,
                                            const Batch<T>& batch, T lr, T wd, long long iter) {
    ParamVector<T> params = theta.clone();
    params.set_requires_grad(true);
    Tape<T> tape;
    TapeScope<T> scope(tape);
    Tensor<T> pred = forward(batch.images, params, arch);
    MaskedLoss<T> loss = l2_loss(pred, batch.depths, valid_mask(batch.depths));
    if (loss.valid_count == 0) throw EmptyEvaluation("batch carries no valid depth pixel");
    const double lv = static_cast<double>(loss.value.item());
    check_divergence(lv, iter);
    backward(loss.value);
    return {sgd_step(params, params, lr, wd), lv};
}

}  // namespace

template <typename T>
ParamVector<T> inner_loop(const ParamVector<T>& theta_meta, const FineGrainedTask<T>& task,
                          const MetaConfig& cfg, const ArchConfig& arch, RngStream& aug_rng,
                          long long iter, double* first_loss) {
    validate(cfg);
    ParamVector<T> theta = theta_meta.clone();
    for (int l = 0; l < cfg.inner_steps; ++l) {
        // Aug is re-randomized at every exploration step.
        const Batch<T> batch = cfg.use_online_aug ? to_batch(online_augment(task, aug_rng).samples)
                                                  : to_batch(task.samples);
        auto [next, loss] = grad_step(theta, arch, batch, T(cfg.alpha), T(0), iter);
        theta = std::move(next);
        if (l == 0 && first_loss) *first_loss = loss;
    }
    return theta;
}

template <typename T>
ParamVector<T> mixup_step_with_lambdas(const ParamVector<T>& theta, const FineGrainedTask<T>& b,
                                       const FineGrainedTask<T>& b_prime, const std::vector<T>& lambdas,
                                       const MetaConfig& cfg, const ArchConfig& arch, long long iter) {
    if (b.samples.size() != b_prime.samples.size())
        throw AlignmentError("mix-up needs equally sized tasks, got " + std::to_string(b.samples.size()) +
                             " vs " + std::to_string(b_prime.samples.size()));
    if (lambdas.size() != b.samples.size())
        throw AlignmentError("one lambda per sample required, got " + std::to_string(lambdas.size()) +
                             " for " + std::to_string(b.samples.size()) + " samples");

    ParamVector<T> params = theta.clone();
    params.set_requires_grad(true);
    const Batch<T> batch_b = to_batch(b.samples);
    const Batch<T> batch_p = to_batch(b_prime.samples);
    if (batch_b.images.shape() != batch_p.images.shape())
        throw AlignmentError("mix-up tasks disagree in image shape: " + shape_str(batch_b.images.shape()) +
                             " vs " + shape_str(batch_p.images.shape()));

    Tape<T> tape;
    TapeScope<T> scope(tape);
    const Bottleneck<T> phi_b = encode(batch_b.images, params, arch);
    const Bottleneck<T> phi_p = encode(batch_p.images, params, arch);

    Bottleneck<T> mixed;
    mixed.features = blend_batch(phi_b.features, phi_p.features, lambdas);
    for (std::size_t i = 0; i < phi_b.skip_features.size(); ++i)
        mixed.skip_features.push_back(blend_batch(phi_b.skip_features[i], phi_p.skip_features[i], lambdas));

    const Tensor<T> targets = blend_batch(batch_b.depths, batch_p.depths, lambdas);
    const Tensor<T> mask = both_valid(batch_b.depths, batch_p.depths);

    Tensor<T> pred = decode(mixed, params, arch);
    MaskedLoss<T> loss = l2_loss(pred, targets, mask);
    if (loss.valid_count == 0) throw EmptyEvaluation("mixed batch carries no valid depth pixel");
    check_divergence(static_cast<double>(loss.value.item()), iter);
    backward(loss.value);
    return sgd_step(params, params, T(cfg.alpha));
}

template <typename T>
ParamVector<T> mixup_step(const ParamVector<T>& theta, const FineGrainedTask<T>& b,
                          const FineGrainedTask<T>& b_prime, const MetaConfig& cfg, const ArchConfig& arch,
                          RngStream& rng, long long iter) {
    std::vector<T> lambdas(b.samples.size());
    for (auto& l : lambdas) l = T(rng.beta_half_half());
    return mixup_step_with_lambdas(theta, b, b_prime, lambdas, cfg, arch, iter);
}

template <typename T>
ParamVector<T> channel_shuffle_step_with_mask(const ParamVector<T>& theta, const FineGrainedTask<T>& b,
                                              const FineGrainedTask<T>& b_prime,
                                              const std::vector<std::uint8_t>& keep, const MetaConfig& cfg,
                                              const ArchConfig& arch, long long iter) {
    if (b.samples.size() != b_prime.samples.size())
        throw AlignmentError("channel shuffle needs equally sized tasks, got " +
                             std::to_string(b.samples.size()) + " vs " +
                             std::to_string(b_prime.samples.size()));
    if (static_cast<std::int64_t>(keep.size()) != arch.bottleneck_channels)
        throw AlignmentError("keep mask has " + std::to_string(keep.size()) + " entries for " +
                             std::to_string(arch.bottleneck_channels) + " bottleneck channels");

    ParamVector<T> params = theta.clone();
    params.set_requires_grad(true);
    const Batch<T> batch_b = to_batch(b.samples);
    const Batch<T> batch_p = to_batch(b_prime.samples);
    if (batch_b.images.shape() != batch_p.images.shape())
        throw AlignmentError("channel-shuffle tasks disagree in image shape: " +
                             shape_str(batch_b.images.shape()) + " vs " +
                             shape_str(batch_p.images.shape()));

    Tape<T> tape;
    TapeScope<T> scope(tape);
    const Bottleneck<T> phi_b = encode(batch_b.images, params, arch);
    const Bottleneck<T> phi_p = encode(batch_p.images, params, arch);

    // Substitution happens at the bottleneck only; skip features stay B's,
    // and supervision is B's own ground truth.
    Bottleneck<T> shuffled;
    shuffled.features = select_channels(phi_b.features, phi_p.features, keep);
    shuffled.skip_features = phi_b.skip_features;

    Tensor<T> pred = decode(shuffled, params, arch);
    MaskedLoss<T> loss = l2_loss(pred, batch_b.depths, valid_mask(batch_b.depths));
    if (loss.valid_count == 0) throw EmptyEvaluation("batch carries no valid depth pixel");
    check_divergence(static_cast<double>(loss.value.item()), iter);
    backward(loss.value);
    return sgd_step(params, params, T(cfg.alpha));
}

template <typename T>
ParamVector<T> channel_shuffle_step(const ParamVector<T>& theta, const FineGrainedTask<T>& b,
                                    const FineGrainedTask<T>& b_prime, const MetaConfig& cfg,
                                    const ArchConfig& arch, RngStream& rng, long long iter) {
    std::vector<std::uint8_t> keep(static_cast<std::size_t>(arch.bottleneck_channels));
    for (auto& k : keep) k = rng.bernoulli(cfg.keep_prob) ? 1 : 0;
    return channel_shuffle_step_with_mask(theta, b, b_prime, keep, cfg, arch, iter);
}

template <typename T>
std::pair<ParamVector<T>, AugChoice> task_augment(const ParamVector<T>& theta_l, const FineGrainedTask<T>& b,
                                                  const FineGrainedTask<T>& b_prime, const MetaConfig& cfg,
                                                  const ArchConfig& arch, RngStream& rng, long long iter) {
    AugChoice choice;
    if (cfg.use_mixup && cfg.use_channel_shuffle)
        choice = rng.bernoulli(0.5) ? AugChoice::mixup : AugChoice::channel_shuffle;
    else if (cfg.use_mixup)
        choice = AugChoice::mixup;
    else if (cfg.use_channel_shuffle)
        choice = AugChoice::channel_shuffle;
    else
        return {theta_l, AugChoice::none};

    if (choice == AugChoice::mixup)
        return {mixup_step(theta_l, b, b_prime, cfg, arch, rng, iter), choice};
    return {channel_shuffle_step(theta_l, b, b_prime, cfg, arch, rng, iter), choice};
}

template <typename T>
TrainResult<T> meta_learn(const Dataset<T>& dataset, const MetaConfig& cfg, const ParamVector<T>& theta_init,
                          const ArchConfig& arch) {
    validate(cfg);
    const int iters = cfg.iters_per_epoch > 0
                          ? cfg.iters_per_epoch
                          : static_cast<int>(dataset.size() / static_cast<std::size_t>(cfg.task_size));
    if (cfg.epochs > 0 && iters == 0)
        throw UsageError("dataset of " + std::to_string(dataset.size()) +
                         " samples is smaller than one task of " + std::to_string(cfg.task_size));

    RngStream task_rng(cfg.seed, kTaskStreamId);
    RngStream online_rng(cfg.seed, kOnlineAugStreamId);
    RngStream aug_rng(cfg.seed, kTaskAugStreamId);
    const bool pair_needed = cfg.use_mixup || cfg.use_channel_shuffle;

    TrainResult<T> result{theta_init.clone(), {}};
    result.log.seed = cfg.seed;
    result.log.dataset_hash = dataset.content_hash();

    long long iter = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        for (int t = 0; t < iters; ++t, ++iter) {
            FineGrainedTask<T> b, b_prime;
            if (pair_needed) {
                auto pair = sample_task_pair(dataset, cfg.task_size, iter, task_rng);
                b = std::move(pair.first);
                b_prime = std::move(pair.second);
            } else {
                b = sample_task(dataset, cfg.task_size, iter, task_rng);
            }

            double first_loss = 0.0;
            ParamVector<T> theta_l = inner_loop(result.params, b, cfg, arch, online_rng, iter, &first_loss);
            auto [theta_aug, choice] = task_augment(theta_l, b, b_prime, cfg, arch, aug_rng, iter);
            result.params = meta_update(result.params, theta_aug, T(cfg.beta));

            result.log.entries.push_back({iter, epoch, first_loss, choice, cfg.alpha,
                                          cfg.inner_steps + (choice != AugChoice::none ? 1 : 0)});
        }
        const auto t1 = std::chrono::steady_clock::now();
        result.log.epoch_seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    return result;
}

namespace {

/// Shared engine for the supervised trainers. accum_steps > 1 accumulates
/// that many successive batch gradients at fixed parameters before one
/// update (sum of gradients at the base lr, i.e. the mean at accum x lr).
// Early stopping tracks plain RMSE rather than the scoring protocol: RMSE
// stays defined when a collapsed intermediate model emits zero depth, while
// the log-based protocol metrics would reject such predictions outright.
// Pixel validity and the equal-weight per-image average mirror evaluate_model.
template <typename T>
double validation_rmse(const ParamVector<T>& params, const ArchConfig& arch, const Dataset<T>& val) {
    const EvalConfig ec{};
    double sum = 0.0;
    std::size_t images = 0;
    for (const auto& sample : val) {
        Tensor<T> input(Shape{1, sample.image.dim(0), sample.image.dim(1), sample.image.dim(2)});
        std::copy(sample.image.data(), sample.image.data() + sample.image.numel(), input.data());
        const Tensor<T> pred = forward(input, params, arch);
        const T* p = pred.data();
        const T* g = sample.depth.data();
        double se = 0.0;
        std::int64_t valid = 0;
        for (std::int64_t k = 0; k < pred.numel(); ++k) {
            const double gv = static_cast<double>(g[k]);
            if (gv < ec.min_depth || gv > ec.depth_cap) continue;
            const double d = static_cast<double>(p[k]) - gv;
            se += d * d;
            ++valid;
        }
        if (valid == 0) continue;
        sum += std::sqrt(se / static_cast<double>(valid));
        ++images;
    }
    if (images == 0) throw EmptyEvaluation("every validation image was skipped (no valid pixels)");
    return sum / static_cast<double>(images);
}

template <typename T>
TrainResult<T> run_supervised(const Dataset<T>& train, const Dataset<T>* val,
                              const ParamVector<T>& theta_init, const SupervisedConfig& cfg,
                              const ArchConfig& arch, int accum_steps) {
    validate(cfg);
    const std::size_t batches_per_epoch = train.size() / static_cast<std::size_t>(cfg.batch_size);
    if (cfg.max_epochs > 0 && batches_per_epoch == 0)
        throw UsageError("dataset of " + std::to_string(train.size()) +
                         " samples is smaller than one batch of " + std::to_string(cfg.batch_size));

    RngStream shuffle_rng(cfg.seed, kShuffleStreamId);
    RngStream flip_rng(cfg.seed, kFlipStreamId);

    TrainResult<T> result{theta_init.clone(), {}};
    result.log.seed = cfg.seed;
    result.log.dataset_hash = train.content_hash();

    ParamVector<T> best = result.params.clone();
    double best_rmse = std::numeric_limits<double>::infinity();
    int bad_epochs = 0;
    const double effective_lr = cfg.lr * accum_steps;

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    long long update = 0;
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        // Fisher-Yates reshuffle per epoch.
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle_rng.uniform_int(i))]);

        std::size_t next = 0;
        const std::size_t updates_per_epoch = batches_per_epoch / static_cast<std::size_t>(accum_steps);
        for (std::size_t u = 0; u < updates_per_epoch; ++u, ++update) {
            ParamVector<T> work = result.params.clone();
            work.set_requires_grad(true);
            double loss_sum = 0.0;
            for (int a = 0; a < accum_steps; ++a) {
                std::vector<RgbdSample<T>> samples;
                samples.reserve(static_cast<std::size_t>(cfg.batch_size));
                for (int k = 0; k < cfg.batch_size; ++k) {
                    const RgbdSample<T>& s = train[order[next++]];
                    if (cfg.flip_aug && flip_rng.bernoulli(0.5)) {
                        AugParams p;
                        p.flip = true;
                        samples.push_back(augment_sample(s, p));
                    } else {
                        samples.push_back(s);
                    }
                }
                const Batch<T> batch = to_batch(samples);
                Tape<T> tape;
                TapeScope<T> scope(tape);
                Tensor<T> pred = forward(batch.images, work, arch);
                MaskedLoss<T> loss = l2_loss(pred, batch.depths, valid_mask(batch.depths));
                if (loss.valid_count == 0) throw EmptyEvaluation("batch carries no valid depth pixel");
                const double lv = static_cast<double>(loss.value.item());
                check_divergence(lv, update);
                loss_sum += lv;
                backward(loss.value);  // accumulates into work's grad buffers
            }
            result.params = sgd_step(work, work, T(cfg.lr), T(cfg.weight_decay));
            result.log.entries.push_back({update, epoch, loss_sum / accum_steps, AugChoice::none,
                                          effective_lr, accum_steps});
        }
        const auto t1 = std::chrono::steady_clock::now();
        result.log.epoch_seconds.push_back(std::chrono::duration<double>(t1 - t0).count());

        if (val != nullptr && !val->empty()) {
            const double rmse = validation_rmse(result.params, arch, *val);
            result.log.epoch_val_rmse.push_back(rmse);
            if (rmse < best_rmse) {
                best_rmse = rmse;
                best = result.params.clone();
                bad_epochs = 0;
            } else if (cfg.patience > 0 && ++bad_epochs >= cfg.patience) {
                break;
            }
        }
    }
    if (val != nullptr && !val->empty() && cfg.max_epochs > 0) result.params = std::move(best);
    return result;
}

}  // namespace

template <typename T>
TrainResult<T> supervised_train(const Dataset<T>& train, const Dataset<T>* val,
                                const ParamVector<T>& theta_init, const SupervisedConfig& cfg,
                                const ArchConfig& arch) {
    return run_supervised(train, val, theta_init, cfg, arch, 1);
}

template <typename T>
TrainResult<T> baseline_wd_pretrain(const Dataset<T>& train, const Dataset<T>* val,
                                    const ParamVector<T>& theta_init, const SupervisedConfig& cfg,
                                    const ArchConfig& arch) {
    return run_supervised(train, val, theta_init, cfg, arch, 1);
}

template <typename T>
TrainResult<T> baseline_grad_accum(const Dataset<T>& train, const Dataset<T>* val,
                                   const ParamVector<T>& theta_init, const SupervisedConfig& cfg,
                                   const ArchConfig& arch) {
    return run_supervised(train, val, theta_init, cfg, arch, cfg.accum_steps);
}

template <typename T>
FomamlResult<T> fomaml_meta_learn(const Dataset<T>& dataset, const MetaConfig& cfg,
                                  const ParamVector<T>& theta_init, const ArchConfig& arch) {
    validate(cfg);
    if (cfg.task_size < 2 || cfg.task_size % 2 != 0)
        throw UsageError("the support/query split needs an even task_size >= 2, got " +
                         std::to_string(cfg.task_size));
    const int iters = cfg.iters_per_epoch > 0
                          ? cfg.iters_per_epoch
                          : static_cast<int>(dataset.size() / static_cast<std::size_t>(cfg.task_size));
    if (cfg.epochs > 0 && iters == 0)
        throw UsageError("dataset of " + std::to_string(dataset.size()) +
                         " samples is smaller than one task of " + std::to_string(cfg.task_size));

    RngStream task_rng(cfg.seed, kTaskStreamId);
    FomamlResult<T> result{theta_init.clone(), {}, false, -1};
    result.log.seed = cfg.seed;
    result.log.dataset_hash = dataset.content_hash();

    const std::size_t half = static_cast<std::size_t>(cfg.task_size) / 2;
    long long iter = 0;
    for (int epoch = 0; epoch < cfg.epochs && !result.diverged; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        for (int t = 0; t < iters; ++t, ++iter) {
            FineGrainedTask<T> task = sample_task(dataset, cfg.task_size, iter, task_rng);
            FineGrainedTask<T> support{{task.samples.begin(), task.samples.begin() + half}, iter};
            FineGrainedTask<T> query{{task.samples.begin() + half, task.samples.end()}, iter};

            double support_loss = std::numeric_limits<double>::quiet_NaN();
            try {
                const Batch<T> sbatch = to_batch(support.samples);
                ParamVector<T> theta_l = result.params.clone();
                for (int l = 0; l < cfg.inner_steps; ++l) {
                    auto [next, lv] = grad_step(theta_l, arch, sbatch, T(cfg.alpha), T(0), iter);
                    theta_l = std::move(next);
                    if (l == 0) support_loss = lv;
                }

                // Query gradient at the adapted point, applied to the
                // meta-parameters: theta <- theta - beta * grad_query(theta_L).
                theta_l.set_requires_grad(true);
                const Batch<T> qbatch = to_batch(query.samples);
                Tape<T> tape;
                TapeScope<T> scope(tape);
                Tensor<T> pred = forward(qbatch.images, theta_l, arch);
                MaskedLoss<T> loss = l2_loss(pred, qbatch.depths, valid_mask(qbatch.depths));
                if (loss.valid_count == 0) throw EmptyEvaluation("query batch carries no valid pixel");
                check_divergence(static_cast<double>(loss.value.item()), iter);
                backward(loss.value);
                result.params = sgd_step(result.params, theta_l, T(cfg.beta));
            } catch (const DivergenceError& e) {
                result.diverged = true;
                result.diverged_at = e.iteration;
            }

            result.log.entries.push_back({iter, epoch, support_loss, AugChoice::none, cfg.alpha,
                                          cfg.inner_steps + 1});
            if (result.diverged) break;
        }
        const auto t1 = std::chrono::steady_clock::now();
        result.log.epoch_seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    return result;
}

#define METADEPTH_INSTANTIATE_METAOPT(T)                                                                  \
    template ParamVector<T> inner_loop<T>(const ParamVector<T>&, const FineGrainedTask<T>&,               \
                                          const MetaConfig&, const ArchConfig&, RngStream&, long long,    \
                                          double*);                                                       \
    template ParamVector<T> mixup_step_with_lambdas<T>(const ParamVector<T>&, const FineGrainedTask<T>&,  \
                                                       const FineGrainedTask<T>&, const std::vector<T>&,  \
                                                       const MetaConfig&, const ArchConfig&, long long);  \
    template ParamVector<T> mixup_step<T>(const ParamVector<T>&, const FineGrainedTask<T>&,               \
                                          const FineGrainedTask<T>&, const MetaConfig&, const ArchConfig&, \
                                          RngStream&, long long);                                         \
    template ParamVector<T> channel_shuffle_step_with_mask<T>(                                            \
        const ParamVector<T>&, const FineGrainedTask<T>&, const FineGrainedTask<T>&,                      \
        const std::vector<std::uint8_t>&, const MetaConfig&, const ArchConfig&, long long);               \
    template ParamVector<T> channel_shuffle_step<T>(const ParamVector<T>&, const FineGrainedTask<T>&,     \
                                                    const FineGrainedTask<T>&, const MetaConfig&,         \
                                                    const ArchConfig&, RngStream&, long long);            \
    template std::pair<ParamVector<T>, AugChoice> task_augment<T>(                                        \
        const ParamVector<T>&, const FineGrainedTask<T>&, const FineGrainedTask<T>&, const MetaConfig&,   \
        const ArchConfig&, RngStream&, long long);                                                        \
    template TrainResult<T> meta_learn<T>(const Dataset<T>&, const MetaConfig&, const ParamVector<T>&,    \
                                          const ArchConfig&);                                             \
    template TrainResult<T> supervised_train<T>(const Dataset<T>&, const Dataset<T>*,                     \
                                                const ParamVector<T>&, const SupervisedConfig&,           \
                                                const ArchConfig&);                                       \
    template TrainResult<T> baseline_wd_pretrain<T>(const Dataset<T>&, const Dataset<T>*,                 \
                                                    const ParamVector<T>&, const SupervisedConfig&,       \
                                                    const ArchConfig&);                                   \
    template TrainResult<T> baseline_grad_accum<T>(const Dataset<T>&, const Dataset<T>*,                  \
                                                   const ParamVector<T>&, const SupervisedConfig&,        \
                                                   const ArchConfig&);                                    \
    template FomamlResult<T> fomaml_meta_learn<T>(const Dataset<T>&, const MetaConfig&,                   \
                                                  const ParamVector<T>&, const ArchConfig&);

METADEPTH_INSTANTIATE_METAOPT(float)
METADEPTH_INSTANTIATE_METAOPT(double)

#undef METADEPTH_INSTANTIATE_METAOPT

}  // namespace metadepth
