#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "roda/adapter.hpp"
#include "roda/feature_store.hpp"
#include "roda/memory_bank.hpp"
#include "roda/transport.hpp"

namespace roda::alignment {

enum class AugmentPolicy { None, Copy, Jitter };

AugmentPolicy augment_policy_from_string(const std::string& s);
std::string to_string(AugmentPolicy p);

enum class Method { RobustOt, ContinuousOt, Hungarian, MomentMatch, GaussianKl };

Method method_from_string(const std::string& s);
std::string to_string(Method m);

struct AdaptConfig {
    double learning_rate = 0.1;
    int epochs = 14;
    int batch_size = 8;            // samples per minibatch
    double epsilon = 0.05;         // Sinkhorn eps as a multiple of mean(C) per batch
    AugmentPolicy policy = AugmentPolicy::Jitter;
    int views = 4;                 // V
    double sigma_aug = 0.05;
    uint64_t seed = 0;
    int sinkhorn_max_iter = 150;
    double sinkhorn_tol = 1e-4;
    // Return the average of the per-epoch-end parameters over the last
    // ceil(epochs/2) epochs instead of the endpoint. The endpoint is noisy
    // enough to mask the augmentation effect; averaging was calibrated in.
    bool tail_average = true;
    // Independently seeded optimization runs whose final parameters are
    // averaged. Single trajectories wander enough (shuffle order, jitter
    // draws) that small method-to-method gaps drown; restarts were sized so
    // the calibrated gaps clear seed noise.
    int restarts = 2;
    // Ridge pulling (scale, shift) toward the identity, applied in the update
    // rule, not the loss. Shifts that are invisible to a per-channel affine
    // (isotropic noise) leave flat directions where plain SGD random-walks;
    // the ridge bounds that drift.
    double weight_decay = 0.1;
};

void validate(const AdaptConfig& cfg);

struct StepRecord {
    int step = 0;
    double loss = 0.0;
    double residual = 0.0;       // Sinkhorn marginal residual; 0 for non-OT methods
    int pairs = 0;               // assignment size; 0 for continuous/statistical losses
    int anomalous_pairs = -1;    // pairs on labeled-anomalous rows; -1 = labels absent
    double grad_norm = 0.0;      // L2 norm of the raw (unnormalized) gradient
};

struct AdaptTrace {
    std::vector<StepRecord> steps;
};

void save_trace(const AdaptTrace& trace, const std::string& path);

// Entropic solve settings used inside the adaptation loop. epsilon_rel scales
// the mean of the current cost matrix.
struct EntropicParams {
    double epsilon_rel = 0.05;
    int max_iter = 150;
    double tol = 1e-4;
};

// policy none: unchanged. copy: V replicas per sample. jitter: V views per
// sample, each adding zero-mean noise with per-channel std sigma_aug times the
// per-channel std of the batch; the noise stream is keyed by (sample_id, view)
// so a view is reproducible in isolation.
feature_store::FeatureSet augment_batch(const feature_store::FeatureSet& batch,
                                        AugmentPolicy policy, int views, double sigma_aug,
                                        uint64_t seed);

struct RobustLossResult {
    double loss = 0.0;
    transport::DiscreteAssignment pairs;
    transport::CostMatrix cost;
    transport::TransportPlan plan;
};

// cost_matrix (with adapter) -> sinkhorn -> discretize -> assignment cost.
RobustLossResult robust_sinkhorn_loss(const AffineAdapter& adapter, const Matrix& batch_patches,
                                      const memory_bank::MemoryBank& bank,
                                      const EntropicParams& params);

// Envelope gradient of the assignment cost with pairs held fixed: for each
// pair, v = scale*z + shift - m, contributing v/|v| to grad_shift and
// (v/|v|)*z to grad_scale. Pairs with |v| < 1e-12 contribute zero.
std::pair<std::vector<double>, std::vector<double>> loss_gradient(
    const AffineAdapter& adapter, const Matrix& batch_patches,
    const memory_bank::MemoryBank& bank, const transport::DiscreteAssignment& pairs);

struct LossGrad {
    double loss = 0.0;
    std::vector<double> grad_scale;
    std::vector<double> grad_shift;
};

// Gradient of <gamma, C(adapter)> with gamma held fixed (continuous ablation).
LossGrad continuous_plan_gradient(const AffineAdapter& adapter, const Matrix& batch_patches,
                                  const memory_bank::MemoryBank& bank,
                                  const transport::TransportPlan& plan);

// Mean / covariance L2 matching against the bank prototypes (population
// covariances), with analytic gradients.
LossGrad moment_matching_loss(const AffineAdapter& adapter, const Matrix& batch_patches,
                              const memory_bank::MemoryBank& bank);

// KL(N_batch || N_bank) between Gaussians fitted to the adapted batch and the
// prototypes; covariances ridged by 1e-4 * mean diagonal before inversion.
LossGrad gaussian_kl_loss(const AffineAdapter& adapter, const Matrix& batch_patches,
                          const memory_bank::MemoryBank& bank);

// Minibatch gradient descent on the adapter (the bank stays fixed): per epoch,
// seeded-shuffled minibatches; per batch, augment, one solve, one step.
std::pair<AffineAdapter, AdaptTrace> adapt(const memory_bank::MemoryBank& bank,
                                           const feature_store::FeatureSet& train,
                                           const AdaptConfig& cfg, Method method);

void save_adapter(const AffineAdapter& adapter, const std::string& meta_path);
AffineAdapter load_adapter(const std::string& meta_path);

}  // namespace roda::alignment
