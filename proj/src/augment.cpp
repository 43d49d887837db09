#include "mvssl/augment.hpp"

#include <algorithm>

namespace mvssl {

void StrongAugConfig::validate() const {
    if (!(pi1 >= 0.0 && pi1 <= 1.0)) throw ConfigError("augmentation: pi1 must lie in [0,1]");
    if (!(pi2 >= 0.0 && pi2 <= 1.0)) throw ConfigError("augmentation: pi2 must lie in [0,1]");
}

Mat AugOutcome::apply(const Sample& s) const { return scale.asDiagonal() * s.patches; }

Mat weak_augment(const Sample& s) { return s.patches; }

AugOutcome identity_outcome(const Sample& s) {
    AugOutcome o;
    o.scale = Vec::Ones(s.P());
    return o;
}

namespace {

void require_map(const Sample& s) {
    if (s.features.size() < 2 || s.blocks.size() != s.features.size())
        throw ConfigError("augmentation: sample carries no patch map");
}

void zero_block(AugOutcome& o, const Sample& s, int f) {
    const int idx = s.find_feature(f);
    if (idx < 0) return;
    for (int p : s.blocks[idx]) o.scale(p) = 0.0;
}

}  // namespace

AugOutcome strong_modeled(const Sample& s, const StrongAugConfig& cfg, Rng& rng) {
    require_map(s);
    const int e1 = bernoulli(rng, cfg.pi1) ? 0 : 1;
    const int e2 = bernoulli(rng, cfg.pi2) ? 0 : 1;

    AugOutcome o;
    o.draws = std::make_pair(e1, e2);
    o.scale = Vec::Constant(s.P(), static_cast<double>(1 - e2));
    const int y = s.label;
    if (s.view == View::Multi) {
        const double s1 = std::max(e1, e2), s2 = std::max(1 - e1, e2);
        for (int p : s.blocks[s.find_feature(feature_id(y, 0))]) o.scale(p) = s1;
        for (int p : s.blocks[s.find_feature(feature_id(y, 1))]) o.scale(p) = s2;
        if (e2 == 1) {
            o.removed = Removed::NoisyPatches;
        } else {
            o.removed = Removed::Feature;
            o.removed_feature = feature_id(y, e1 == 0 ? 0 : 1);
        }
    } else {
        const int main = feature_id(y, s.main_slot);
        const auto& blk = s.blocks[s.find_feature(main)];
        if (e2 == 0) {
            o.scale.setOnes();
            for (int p : blk) o.scale(p) = 0.0;
            o.removed = Removed::Feature;
            o.removed_feature = main;
        } else {
            o.scale.setZero();
            for (int p : blk) o.scale(p) = 1.0;
            o.removed = Removed::NoisyPatches;
        }
    }
    return o;
}

AugOutcome sa_cutout_oracle(const Sample& s, const Lottery& lottery, std::optional<int> cls) {
    require_map(s);
    const int c = cls.value_or(s.label);
    if (c < 0 || c >= static_cast<int>(lottery.size()) || lottery[c] < 0)
        throw ConfigError("sa_cutout_oracle: class " + std::to_string(c) + " has no lottery entry");
    AugOutcome o = identity_outcome(s);
    o.removed = Removed::Feature;
    o.removed_feature = feature_id(c, lottery[c]);
    zero_block(o, s, o.removed_feature);
    return o;
}

AugOutcome sa_cutout_attention_pre(const Sample& s, const ModelParams& params, int b,
                                   const Eigen::Ref<const Mat>& preact) {
    require_map(s);
    if (b < 0 || b >= params.k) throw ConfigError("sa_cutout_attention: pseudo-label out of range");
    int best = -1;
    double best_att = 0.0;
    // Features are scanned in id order so ties resolve to the lowest (class, slot).
    std::vector<int> order(s.features.size());
    for (std::size_t j = 0; j < order.size(); ++j) order[j] = static_cast<int>(j);
    std::sort(order.begin(), order.end(), [&](int a, int c) { return s.features[a] < s.features[c]; });
    for (int j : order) {
        double a = 0.0;
        for (int r = 0; r < params.m; ++r)
            for (int p : s.blocks[j]) a += relu_bar(preact(p, b * params.m + r), params.act);
        if (a > best_att) {
            best_att = a;
            best = j;
        }
    }
    AugOutcome o = identity_outcome(s);
    o.removed = Removed::Feature;
    if (best < 0) {
        o.fallback = true;
        best = order.front();
        for (int j : order)
            if (feature_class(s.features[j]) == b) {
                best = j;
                break;
            }
    }
    o.removed_feature = s.features[best];
    for (int p : s.blocks[best]) o.scale(p) = 0.0;
    return o;
}

AugOutcome sa_cutout_attention(const Sample& s, const ModelParams& params, int pseudo_label) {
    Mat pre = s.patches * params.W.transpose();
    return sa_cutout_attention_pre(s, params, pseudo_label, pre);
}

}  // namespace mvssl
