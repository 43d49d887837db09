#pragma once

#include "mvssl/common.hpp"
#include "mvssl/datagen.hpp"
#include "mvssl/netcore.hpp"

#include <optional>
#include <vector>

namespace mvssl {

enum class AugMode { Identity, Modeled, SemanticOracle, SemanticAttention };

struct StrongAugConfig {
    AugMode mode = AugMode::Modeled;
    double pi1 = 0.5;
    double pi2 = 0.3;

    void validate() const;
};

enum class Removed { None, Feature, NoisyPatches };

// Every augmentation here multiplies each patch by a scalar, so an outcome is
// stored as per-patch scales; apply() materializes the patches.
struct AugOutcome {
    Vec scale;                    // length P
    Removed removed = Removed::None;
    int removed_feature = -1;     // feature id when removed == Feature
    std::optional<std::pair<int, int>> draws;  // (eps1, eps2) for the modeled mode
    bool fallback = false;        // attention fallback fired

    Mat apply(const Sample& s) const;
};

// Learned slot per class from the lottery set, -1 where the class has no entry.
using Lottery = std::vector<int>;

Mat weak_augment(const Sample& s);

AugOutcome identity_outcome(const Sample& s);

AugOutcome strong_modeled(const Sample& s, const StrongAugConfig& cfg, Rng& rng);

// Removes the patches of v_{cls, lottery[cls]}; cls defaults to the sample label.
// Throws ConfigError when the class has no lottery entry.
AugOutcome sa_cutout_oracle(const Sample& s, const Lottery& lottery, std::optional<int> cls = std::nullopt);

// Attention a_v = sum_r sum_{p in block(v)} relu_bar(<w_{b,r}, x_p>) over features present;
// the block with the largest attention is zeroed (ties by feature id). When every
// attention is zero, the first present block of class b (or the first block) is zeroed.
AugOutcome sa_cutout_attention(const Sample& s, const ModelParams& params, int pseudo_label);

// Same, with pre-activations of the sample's patches already computed (P x km).
AugOutcome sa_cutout_attention_pre(const Sample& s, const ModelParams& params, int pseudo_label,
                                   const Eigen::Ref<const Mat>& preact);

}  // namespace mvssl
