#pragma once

#include "mvssl/augment.hpp"
#include "mvssl/common.hpp"
#include "mvssl/datagen.hpp"
#include "mvssl/netcore.hpp"

#include <functional>
#include <vector>

namespace mvssl {

struct GradientAccumulator {
    Mat grads;              // same shape as ModelParams::W
    long sample_count = 0;
};

// Samples stacked row-wise: rows [n*P, (n+1)*P) of X are the patches of sample n.
struct PackedBatch {
    std::vector<const Sample*> samples;
    Mat X;
    int P = 0;

    int size() const { return static_cast<int>(samples.size()); }
};

PackedBatch pack(const std::vector<const Sample*>& samples);

// Weighted cross-entropy over a packed batch whose patches are scaled per row by
// `scale` (null means unscaled). `preact` holds X * W^T for the unscaled rows.
// Samples with weight 0 are skipped entirely. Returns sum_n w_n * CE_n and, when
// grad is non-null, overwrites it with sum_n w_n * grad CE_n.
double masked_cross_entropy(const ModelParams& params, const Mat& X, const Mat& preact, int P, const Vec* scale,
                            const std::vector<int>& targets, const Vec& weights, Mat* grad);

// Gradient of -log logit_target(F, X) for one sample.
GradientAccumulator grad_cross_entropy(const ModelParams& params, const Mat& patches, int target);

struct LossAndGrad {
    GradientAccumulator grad;
    double loss = 0.0;
};

// Mean over the batch of the cross-entropy on identity-augmented inputs.
LossAndGrad grad_supervised_batch(const ModelParams& params, const std::vector<const Sample*>& batch);
LossAndGrad grad_supervised_batch(const ModelParams& params, const PackedBatch& batch);

struct GateDecision {
    bool pass = false;
    double weight = 0.0;
};

using GateFn = std::function<GateDecision(int pseudo_label, double confidence)>;

// Strong augmentation for sample `index` of the batch given its pseudo-label.
// `preact` holds the sample's weak pre-activations (P x km).
using AugFn = std::function<AugOutcome(const Sample& s, int pseudo_label, int index,
                                       const Eigen::Ref<const Mat>& preact)>;

struct PseudoLabelBatchStats {
    long total = 0;
    long passed = 0;
    long correct = 0;           // passers whose pseudo-label equals the retained label
    double weight_sum = 0.0;
    double max_confidence = 0.0;
    std::vector<int> pseudo;    // per sample
    std::vector<double> confidence;
};

struct UnsupervisedResult {
    GradientAccumulator grad;
    double loss = 0.0;
    PseudoLabelBatchStats stats;
    // Frozen decisions, enough to re-evaluate the same masked loss.
    std::vector<int> targets;
    Vec weights;
    Vec scale;
};

UnsupervisedResult grad_unsupervised_batch(const ModelParams& params, const PackedBatch& batch, const GateFn& gate,
                                           const AugFn& aug);

// Re-evaluates the masked unsupervised loss with the gate and augmentation frozen.
double unsupervised_loss_frozen(const ModelParams& params, const PackedBatch& batch, const UnsupervisedResult& frozen);

ModelParams gd_step(const ModelParams& params, const GradientAccumulator& grad_s, const GradientAccumulator& grad_u,
                    double eta, double lambda);

struct FdOptions {
    int coordinates = 200;
    double step = 1e-6;
    // Relative error is |a - n| / max(|a|, |n|, floor).
    double floor = 1e-6;
    std::uint64_t seed = 1;
    // Rows of W excluded from sampling (kernels with a pre-activation near a kink).
    std::vector<bool> excluded_rows;
};

struct FdReport {
    double max_rel_error = 0.0;
    int checked = 0;
    int excluded = 0;
    bool pass = false;
};

using LossClosure = std::function<long double(const Mat& W)>;

FdReport finite_diff_check(const Mat& W, const Mat& analytic, const LossClosure& loss, double tolerance,
                           const FdOptions& opts = {});

// Kernel rows having any (scaled) pre-activation within `margin` of 0 or varrho.
std::vector<bool> kink_rows(const ModelParams& params, const Mat& X, const Vec* scale, double margin = 1e-4);

}  // namespace mvssl
