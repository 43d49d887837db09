#pragma once

#include "mvssl/augment.hpp"
#include "mvssl/common.hpp"
#include "mvssl/datagen.hpp"
#include "mvssl/netcore.hpp"

#include <json.hpp>

#include <optional>
#include <utility>
#include <vector>

namespace mvssl {

struct FeatureCorrelationReport {
    Mat phi;        // k x 2, sum_r [<w_{i,r}, v_{i,l}>]^+
    Mat lambda_il;  // k x 2, max_r [<w_{i,r}, v_{i,l}>]^+
    Vec lambda_i;   // per-class max of lambda_il
    Lottery lottery;  // winning slot per class or -1
};

// 1 + 2/ln^2(m); infinite for m = 1.
double lottery_margin(int m);

FeatureCorrelationReport compute_phi(const ModelParams& params, const FeatureBank& bank);

struct Thresholds {
    double c_hi = 0.0;
    double c_lo = 0.0;
};

// c_hi = 0.75 ln k, c_lo = max(1/ln^2 k, 3 m sigma0).
Thresholds default_thresholds(int k, int m, double sigma0);

// k x 2 matrix of remaining per-feature mass, optionally after an augmentation.
Mat z_scores(const Sample& s, int k, const AugOutcome* aug = nullptr);

// (k*m) x 2 matrix, row i*m + r holds V_{i,r,1}, V_{i,r,2}.
Mat v_scores(const ModelParams& params, const Sample& s, const AugOutcome* aug = nullptr);

// |F_i(X) - sum_l Phi_{i,l} Z_{i,l}(X)| per class.
Vec function_approx_residual(const ModelParams& params, const FeatureBank& bank, const Sample& s);

struct AuditTolerances {
    double c_a = 5.0;
    double c_b = 5.0;
    double c_c = 5.0;
    double c_d_lo = 0.2;   // lower bound c_d_lo * sigma0
    double c_d_hi = 0.0;   // absolute upper bound; 0 means 5 ln k
    double c_e = 5.0;
};

struct InductionAudit {
    double a = 0.0, b = 0.0, c = 0.0, d = 0.0, e = 0.0;  // max violation per item
    double a_measured = 0.0, b_measured = 0.0, c_measured = 0.0;
    double phi_min = 0.0, phi_max = 0.0, corr_min = 0.0;
    AuditTolerances tolerances;
    double gamma = 0.0;

    bool clean() const { return a == 0.0 && b == 0.0 && c == 0.0 && d == 0.0 && e == 0.0; }
};

InductionAudit induction_audit(const ModelParams& params, const FeatureBank& bank,
                               const std::vector<const Sample*>& samples, double gamma,
                               const AuditTolerances& tol = {});

struct PseudoLabelAudit {
    long total = 0, passed = 0, correct = 0;
    long passed_multi = 0, correct_multi = 0, passed_single = 0, correct_single = 0;

    double pass_fraction() const { return total ? static_cast<double>(passed) / total : 0.0; }
    // 1 when nothing passes (no wrong pseudo-labels were issued).
    double correct_fraction() const { return passed ? static_cast<double>(correct) / passed : 1.0; }
};

PseudoLabelAudit pseudo_label_audit(const ModelParams& params, const std::vector<const Sample*>& samples,
                                    double threshold);

struct PhaseReport {
    std::optional<long> phase1_complete_at;
    std::optional<long> phase2_complete_at;
    Thresholds thresholds;
};

bool phase1_predicate(const Mat& phi, const Thresholds& th);
bool phase2_predicate(const Mat& phi, const Thresholds& th);

PhaseReport phase_detect(const std::vector<std::pair<long, Mat>>& phi_timeline, const Thresholds& th);

// Fraction of classes with exactly one slot >= c_hi and the other <= c_lo.
double clean_lottery_fraction(const Mat& phi, const Thresholds& th);
// Fraction of classes with both slots >= c_hi.
double both_learned_fraction(const Mat& phi, const Thresholds& th);

nlohmann::json to_json(const PhaseReport& r);
nlohmann::json to_json(const InductionAudit& a);

}  // namespace mvssl
