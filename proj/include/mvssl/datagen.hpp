#pragma once

#include "mvssl/common.hpp"

#include <json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace mvssl {

// Features are addressed by a flat id f = 2*cls + slot, with cls in [0,k) and
// slot in {0,1}.
inline int feature_id(int cls, int slot) { return 2 * cls + slot; }
inline int feature_class(int f) { return f / 2; }
inline int feature_slot(int f) { return f % 2; }

struct DistributionParams {
    int k = 16;
    int d = 256;
    int P = 64;
    double s_rate = 1.0;
    int C_p = 2;
    double gamma = 1e-4;
    double sigma_p = 0.0;
    double mu = 0.05;
    double rho = 0.0;
    double Gamma_sv = 0.0;
    double z_main_hi = 1.5;
    double z_noise_lo = 0.2;
    double z_noise_hi = 0.4;
    int q_moment = 3;

    // Desk-scale defaults derived from k and d.
    static DistributionParams defaults(int k = 16, int d = 256, int P = 64);

    // Throws ConfigError naming the violated rule.
    void validate() const;

    double pure_noise_std() const;
};

void to_json(nlohmann::json& j, const DistributionParams& p);
void from_json(const nlohmann::json& j, DistributionParams& p);

class FeatureBank {
public:
    FeatureBank() = default;
    FeatureBank(int k, Mat vectors);

    int k() const { return k_; }
    int d() const { return static_cast<int>(vectors_.cols()); }
    // Row f holds v_{f/2, f%2}.
    const Mat& vectors() const { return vectors_; }
    auto vec(int cls, int slot) const { return vectors_.row(feature_id(cls, slot)); }

private:
    int k_ = 0;
    Mat vectors_;
};

FeatureBank build_feature_bank(int k, int d, std::uint64_t seed, bool canonical = false);

enum class View { Multi, Single };

struct Sample {
    int label = 0;
    View view = View::Multi;
    int main_slot = 0;           // meaningful for single-view only
    Mat patches;                 // P x d
    std::vector<int> features;   // feature ids present, main features first
    std::vector<std::vector<int>> blocks;   // patch indices per entry of features
    std::vector<std::vector<double>> coeffs;  // z_p per entry of blocks
    Mat noise_coeffs;            // P x 2k, alpha_{p,v'}; zero on a patch's own feature

    int P() const { return static_cast<int>(patches.rows()); }
    // Index into features/blocks for feature id f, or -1.
    int find_feature(int f) const;
    double mass(int f) const;
    // Feature id owning patch p, or -1 for a pure-noise patch.
    std::vector<int> patch_owner() const;
};

enum class MassKind { MainMulti, NoisyMulti, MainSingle, MinorSingle, NoisySingle };

std::pair<double, double> mass_interval(MassKind kind, const DistributionParams& params);

std::vector<double> draw_feature_mass(MassKind kind, int C_p, const DistributionParams& params, Rng& rng);

// forced_slot pins the main slot of a single-view draw (balanced test sets).
Sample sample_point(const DistributionParams& params, const FeatureBank& bank,
                    std::optional<View> forced_view, Rng& rng,
                    std::optional<int> forced_slot = std::nullopt);

struct Counts {
    int labeled_multi = 0;
    int labeled_single = 0;
    int unlabeled_multi = 0;
    int unlabeled_single = 0;
};

void to_json(nlohmann::json& j, const Counts& c);
void from_json(const nlohmann::json& j, Counts& c);

struct Dataset {
    DistributionParams params;
    Counts counts;
    std::uint64_t seed = 0;
    bool canonical_bank = false;
    FeatureBank bank;
    std::vector<Sample> labeled_multi;
    std::vector<Sample> labeled_single;
    std::vector<Sample> unlabeled_multi;
    std::vector<Sample> unlabeled_single;

    std::vector<const Sample*> labeled() const;
    std::vector<const Sample*> unlabeled() const;
};

// Partition tags used when deriving per-sample seeds.
enum class Partition : std::uint64_t { LabeledMulti = 1, LabeledSingle, UnlabeledMulti, UnlabeledSingle, Test };

Sample sample_indexed(const DistributionParams& params, const FeatureBank& bank,
                      std::optional<View> forced_view, std::uint64_t seed, Partition part,
                      std::uint64_t index);

// Draws n samples with per-index seeds. With balanced_slots, single-view draws
// alternate their main slot so both slots are equally represented.
std::vector<Sample> sample_many(const DistributionParams& params, const FeatureBank& bank,
                                std::optional<View> forced_view, int n, std::uint64_t seed,
                                Partition part, bool balanced_slots = false);

Dataset sample_dataset(const DistributionParams& params, const FeatureBank& bank, const Counts& counts,
                       std::uint64_t seed);

inline constexpr std::uint32_t kDatasetVersion = 1;

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace mvssl
