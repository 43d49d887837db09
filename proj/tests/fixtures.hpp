#pragma once
// Small random instances shared by the gradient tests and the acceptance run.

#include "mvssl/datagen.hpp"
#include "mvssl/netcore.hpp"

#include <vector>

namespace fixtures {

struct Instance {
    mvssl::DistributionParams dist;
    mvssl::FeatureBank bank;
    std::vector<mvssl::Sample> samples;
    mvssl::ModelParams params;
};

// k=3, m=2, d=16, P=8. Patch noise is raised so that no patch is nearly zero
// (those would pin every kernel near the kink at 0), and the kernels are large
// enough to populate both activation branches.
inline Instance make_instance(std::uint64_t seed, int n = 4) {
    using namespace mvssl;
    Instance in;
    in.dist = DistributionParams::defaults(3, 16, 8);
    in.dist.C_p = 1;
    in.dist.gamma = 0.05;
    in.dist.sigma_p = 0.05;
    in.bank = build_feature_bank(3, 16, seed);
    in.samples = sample_many(in.dist, in.bank, std::nullopt, n, seed, Partition::Test);
    in.params = init_params(3, 2, 16, {3, 0.3}, 0.25, seed);
    return in;
}

}  // namespace fixtures
