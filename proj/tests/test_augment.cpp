#include "mvssl/augment.hpp"
#include "mvssl/diagnostics.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace mvssl;

namespace {

struct Fixture {
    DistributionParams dist = DistributionParams::defaults(8, 64, 32);
    FeatureBank bank = build_feature_bank(8, 64, 3);

    Sample draw(View v, std::uint64_t seed, std::optional<int> slot = std::nullopt) const {
        Rng rng(seed);
        return sample_point(dist, bank, v, rng, slot);
    }
};

// Searches rng seeds until the modeled draws equal (e1, e2).
AugOutcome modeled_with(const Sample& s, int e1, int e2) {
    StrongAugConfig cfg;
    for (std::uint64_t seed = 0;; ++seed) {
        Rng rng(seed);
        AugOutcome o = strong_modeled(s, cfg, rng);
        if (o.draws == std::make_pair(e1, e2)) return o;
    }
}

bool block_is(const AugOutcome& o, const Sample& s, int f, double v) {
    const int j = s.find_feature(f);
    for (int p : s.blocks[j])
        if (o.scale(p) != v) return false;
    return true;
}

}  // namespace

TEST_SUITE("augment") {

TEST_CASE("weak augmentation is the identity") {
    Fixture fx;
    const Sample s = fx.draw(View::Multi, 1);
    CHECK(weak_augment(s) == s.patches);
    Sample t = s;
    t.patches = weak_augment(s);
    CHECK(weak_augment(t) == s.patches);
    Sample empty;
    empty.patches = Mat(0, 4);
    CHECK(weak_augment(empty).rows() == 0);
    CHECK(identity_outcome(s).apply(s) == s.patches);
}

TEST_CASE("modeled branches on multi-view samples") {
    Fixture fx;
    const Sample s = fx.draw(View::Multi, 2);
    const int y = s.label, f1 = feature_id(y, 0), f2 = feature_id(y, 1);
    const auto owner = s.patch_owner();
    auto others = [&](const AugOutcome& o, double v) {
        for (int p = 0; p < s.P(); ++p)
            if (owner[p] != f1 && owner[p] != f2 && o.scale(p) != v) return false;
        return true;
    };

    for (int e1 : {0, 1}) {
        const AugOutcome o = modeled_with(s, e1, 1);
        CHECK(block_is(o, s, f1, 1.0));
        CHECK(block_is(o, s, f2, 1.0));
        CHECK(others(o, 0.0));
        CHECK(o.removed == Removed::NoisyPatches);
    }
    const AugOutcome a = modeled_with(s, 0, 0);
    CHECK(block_is(a, s, f1, 0.0));
    CHECK(block_is(a, s, f2, 1.0));
    CHECK(others(a, 1.0));
    CHECK(a.removed_feature == f1);
    const AugOutcome b = modeled_with(s, 1, 0);
    CHECK(block_is(b, s, f1, 1.0));
    CHECK(block_is(b, s, f2, 0.0));
    CHECK(b.removed_feature == f2);

    for (int e1 : {0, 1})
        for (int e2 : {0, 1}) {
            const AugOutcome o = modeled_with(s, e1, e2);
            CHECK_FALSE((block_is(o, s, f1, 0.0) && block_is(o, s, f2, 0.0)));
            CHECK(o.apply(s).rows() == s.P());
            CHECK(o.apply(s).cols() == s.patches.cols());
        }
}

TEST_CASE("modeled branches on single-view samples") {
    Fixture fx;
    const Sample s = fx.draw(View::Single, 3, 1);
    const int main_f = feature_id(s.label, 1);
    const AugOutcome rm = modeled_with(s, 0, 0);
    CHECK(block_is(rm, s, main_f, 0.0));
    CHECK(rm.removed_feature == main_f);
    const AugOutcome keep = modeled_with(s, 0, 1);
    CHECK(block_is(keep, s, main_f, 1.0));
    CHECK(keep.scale.sum() == doctest::Approx(s.blocks[s.find_feature(main_f)].size()));
}

TEST_CASE("modeled removal frequencies") {
    Fixture fx;
    const Sample m = fx.draw(View::Multi, 4);
    const Sample sv = fx.draw(View::Single, 5);
    StrongAugConfig cfg;
    Rng rng(99);
    const int N = 100000;
    int slot1 = 0, slot2 = 0, noisy = 0, single = 0;
    for (int i = 0; i < N; ++i) {
        const AugOutcome o = strong_modeled(m, cfg, rng);
        if (o.removed_feature == feature_id(m.label, 0)) ++slot1;
        if (o.removed_feature == feature_id(m.label, 1)) ++slot2;
        if (o.removed == Removed::NoisyPatches) ++noisy;
        if (strong_modeled(sv, cfg, rng).removed == Removed::Feature) ++single;
    }
    auto within = [&](int count, double p) {
        return std::abs(count - N * p) <= 4.0 * std::sqrt(N * p * (1 - p));
    };
    CHECK(std::abs(slot1 / double(N) - 0.15) <= 0.005);
    CHECK(within(slot1, 0.15));
    CHECK(within(slot2, 0.15));
    CHECK(within(noisy, 0.7));
    CHECK(within(single, 0.3));
}

TEST_CASE("oracle cut removes exactly the lottery feature") {
    Fixture fx;
    const Sample s = fx.draw(View::Multi, 6);
    Lottery lot(8, 0);
    const AugOutcome o = sa_cutout_oracle(s, lot);
    const Mat out = o.apply(s);
    const auto owner = s.patch_owner();
    for (int p = 0; p < s.P(); ++p) {
        if (owner[p] == feature_id(s.label, 0))
            CHECK(out.row(p).isZero(0.0));
        else
            CHECK(out.row(p) == s.patches.row(p));
    }
    Sample again = s;
    again.patches = out;
    CHECK(sa_cutout_oracle(again, lot).apply(again) == out);

    Lottery missing(8, -1);
    CHECK_THROWS_AS(sa_cutout_oracle(s, missing), ConfigError);
}

TEST_CASE("oracle cut on a single-view sample leaves only noise for its main slot") {
    Fixture fx;
    const Sample s = fx.draw(View::Single, 7, 0);
    Lottery lot(8, 1);
    lot[s.label] = 0;
    const AugOutcome o = sa_cutout_oracle(s, lot);
    const Mat z = z_scores(s, 8, &o);
    CHECK(z(s.label, 0) == 0.0);
    CHECK(z(s.label, 1) == doctest::Approx(s.mass(feature_id(s.label, 1))));
}

TEST_CASE("oracle agrees with the modeled outcome on feature patches") {
    Fixture fx;
    const Sample s = fx.draw(View::Multi, 8);
    for (int slot : {0, 1}) {
        Lottery lot(8, slot);
        const AugOutcome oracle_cut = sa_cutout_oracle(s, lot);
        const AugOutcome modeled = modeled_with(s, slot == 0 ? 0 : 1, 0);
        const auto owner = s.patch_owner();
        for (int p = 0; p < s.P(); ++p)
            if (owner[p] == feature_id(s.label, 0) || owner[p] == feature_id(s.label, 1))
                CHECK(oracle_cut.scale(p) == modeled.scale(p));
    }
}

TEST_CASE("attention cut follows the aligned kernel") {
    Fixture fx;
    const Sample s = fx.draw(View::Multi, 9);
    const int b = s.label;
    ModelParams p = init_params(8, 3, 64, {3, 0.13}, 0.0, 1);
    p.kernel(b, 0) = 0.5 * fx.bank.vec(b, 0);
    const auto att = oracle::attention(s, p, b);
    std::size_t best = 0;
    for (std::size_t j = 1; j < att.size(); ++j)
        if (att[j] > att[best]) best = j;
    CHECK(s.features[best] == feature_id(b, 0));
    const AugOutcome o = sa_cutout_attention(s, p, b);
    CHECK_FALSE(o.fallback);
    CHECK(o.removed_feature == feature_id(b, 0));
    CHECK(block_is(o, s, feature_id(b, 0), 0.0));
    CHECK(o.scale.sum() == doctest::Approx(s.P() - fx.dist.C_p));
}

TEST_CASE("zero kernels trigger the attention fallback") {
    Fixture fx;
    const Sample s = fx.draw(View::Multi, 10);
    const ModelParams p = init_params(8, 3, 64, {3, 0.13}, 0.0, 1);
    const AugOutcome o = sa_cutout_attention(s, p, s.label);
    CHECK(o.fallback);
    CHECK(feature_class(o.removed_feature) == s.label);
    CHECK_THROWS_AS(sa_cutout_attention(s, p, 99), ConfigError);
}

TEST_CASE("augmentation probabilities are validated") {
    StrongAugConfig c;
    c.pi1 = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.pi1 = 0.5;
    c.pi2 = -0.1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

}  // TEST_SUITE
