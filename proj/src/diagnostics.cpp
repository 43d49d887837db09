#include "mvssl/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mvssl {

double lottery_margin(int m) {
    if (m <= 1) return std::numeric_limits<double>::infinity();
    const double l = std::log(static_cast<double>(m));
    return 1.0 + 2.0 / (l * l);
}

FeatureCorrelationReport compute_phi(const ModelParams& params, const FeatureBank& bank) {
    if (bank.k() != params.k || bank.d() != params.d) throw ConfigError("compute_phi: bank does not match network");
    const int k = params.k, m = params.m;
    Mat corr = params.W * bank.vectors().transpose();  // (k*m) x 2k
    FeatureCorrelationReport rep;
    rep.phi = Mat::Zero(k, 2);
    rep.lambda_il = Mat::Zero(k, 2);
    rep.lambda_i = Vec::Zero(k);
    rep.lottery.assign(k, -1);
    const double margin = lottery_margin(m);
    for (int i = 0; i < k; ++i) {
        for (int l = 0; l < 2; ++l) {
            double sum = 0.0, mx = 0.0;
            for (int r = 0; r < m; ++r) {
                const double c = std::max(corr(i * m + r, feature_id(i, l)), 0.0);
                sum += c;
                mx = std::max(mx, c);
            }
            rep.phi(i, l) = sum;
            rep.lambda_il(i, l) = mx;
        }
        rep.lambda_i(i) = rep.lambda_il.row(i).maxCoeff();
        for (int l = 0; l < 2; ++l) {
            const double own = rep.lambda_il(i, l), other = rep.lambda_il(i, 1 - l);
            // Strict dominance keeps at most one slot per class (and none for all-zero rows).
            if (own > 0.0 && std::isfinite(margin) && own >= other * margin && own > other) rep.lottery[i] = l;
        }
    }
    return rep;
}

Thresholds default_thresholds(int k, int m, double sigma0) {
    const double l = std::log(static_cast<double>(std::max(k, 2)));
    return {0.75 * l, std::max(1.0 / (l * l), 3.0 * m * sigma0)};
}

Mat z_scores(const Sample& s, int k, const AugOutcome* aug) {
    if (s.blocks.size() != s.features.size() || s.coeffs.size() != s.features.size())
        throw ConfigError("z_scores: sample carries no ground truth");
    Mat Z = Mat::Zero(k, 2);
    for (std::size_t j = 0; j < s.features.size(); ++j) {
        double sum = 0.0;
        for (std::size_t c = 0; c < s.blocks[j].size(); ++c) {
            const double sc = aug ? aug->scale(s.blocks[j][c]) : 1.0;
            sum += sc * s.coeffs[j][c];
        }
        Z(feature_class(s.features[j]), feature_slot(s.features[j])) = sum;
    }
    return Z;
}

Mat v_scores(const ModelParams& params, const Sample& s, const AugOutcome* aug) {
    if (s.blocks.size() != s.features.size() || s.coeffs.size() != s.features.size())
        throw ConfigError("v_scores: sample carries no ground truth");
    const int m = params.m;
    Mat V = Mat::Zero(params.k * m, 2);
    for (std::size_t j = 0; j < s.features.size(); ++j) {
        const int i = feature_class(s.features[j]), l = feature_slot(s.features[j]);
        for (int r = 0; r < m; ++r) {
            double sum = 0.0;
            for (std::size_t c = 0; c < s.blocks[j].size(); ++c) {
                const int p = s.blocks[j][c];
                const double sc = aug ? aug->scale(p) : 1.0;
                const double z = sc * params.kernel(i, r).dot(s.patches.row(p));
                sum += relu_bar_prime(z, params.act) * sc * s.coeffs[j][c];
            }
            V(i * m + r, l) = sum;
        }
    }
    return V;
}

Vec function_approx_residual(const ModelParams& params, const FeatureBank& bank, const Sample& s) {
    const auto phi = compute_phi(params, bank).phi;
    const Mat Z = z_scores(s, params.k);
    const ScoreVector sv = forward(params, s.patches);
    Vec res(params.k);
    for (int i = 0; i < params.k; ++i) res(i) = std::abs(sv.scores(i) - (phi(i, 0) * Z(i, 0) + phi(i, 1) * Z(i, 1)));
    return res;
}

InductionAudit induction_audit(const ModelParams& params, const FeatureBank& bank,
                               const std::vector<const Sample*>& samples, double gamma, const AuditTolerances& tol) {
    const int k = params.k, m = params.m;
    InductionAudit out;
    out.tolerances = tol;
    out.gamma = gamma;
    const double s0 = params.sigma0;
    Mat corr = params.W * bank.vectors().transpose();

    for (const Sample* sp : samples) {
        const Sample& s = *sp;
        Mat pre = s.patches * params.W.transpose();  // P x km
        const auto owner = s.patch_owner();
        std::vector<double> zp(s.P(), 0.0);
        for (std::size_t j = 0; j < s.features.size(); ++j)
            for (std::size_t c = 0; c < s.blocks[j].size(); ++c) zp[s.blocks[j][c]] = s.coeffs[j][c];
        for (int p = 0; p < s.P(); ++p) {
            for (int i = 0; i < k; ++i) {
                for (int r = 0; r < m; ++r) {
                    const double z = pre(p, i * m + r);
                    if (owner[p] < 0) {
                        out.c_measured = std::max(out.c_measured, std::abs(z));
                    } else if (feature_class(owner[p]) == i) {
                        const double dev = std::abs(z - corr(i * m + r, owner[p]) * zp[p]);
                        out.a_measured = std::max(out.a_measured, dev);
                    } else {
                        out.b_measured = std::max(out.b_measured, std::abs(z));
                    }
                }
            }
        }
    }
    out.a = std::max(0.0, out.a_measured - tol.c_a * s0);
    out.b = std::max(0.0, out.b_measured - tol.c_b * s0);
    out.c = std::max(0.0, out.c_measured - tol.c_c * s0 * gamma * k);

    const auto rep = compute_phi(params, bank);
    out.phi_min = rep.phi.minCoeff();
    out.phi_max = rep.phi.maxCoeff();
    const double hi = tol.c_d_hi > 0.0 ? tol.c_d_hi : 5.0 * std::log(static_cast<double>(std::max(k, 2)));
    out.d = std::max({0.0, tol.c_d_lo * s0 - out.phi_min, out.phi_max - hi});

    out.corr_min = std::numeric_limits<double>::infinity();
    for (int i = 0; i < k; ++i)
        for (int r = 0; r < m; ++r)
            for (int l = 0; l < 2; ++l) out.corr_min = std::min(out.corr_min, corr(i * m + r, feature_id(i, l)));
    out.e = std::max(0.0, -tol.c_e * s0 - out.corr_min);
    return out;
}

PseudoLabelAudit pseudo_label_audit(const ModelParams& params, const std::vector<const Sample*>& samples,
                                    double threshold) {
    PseudoLabelAudit a;
    for (const Sample* s : samples) {
        const Prediction pr = predict(forward(params, s->patches));
        ++a.total;
        if (pr.confidence < threshold) continue;
        const bool ok = pr.cls == s->label;
        ++a.passed;
        a.correct += ok;
        if (s->view == View::Multi) {
            ++a.passed_multi;
            a.correct_multi += ok;
        } else {
            ++a.passed_single;
            a.correct_single += ok;
        }
    }
    return a;
}

bool phase1_predicate(const Mat& phi, const Thresholds& th) {
    for (Eigen::Index i = 0; i < phi.rows(); ++i) {
        const double hi = std::max(phi(i, 0), phi(i, 1)), lo = std::min(phi(i, 0), phi(i, 1));
        if (!(hi >= th.c_hi && lo <= th.c_lo)) return false;
    }
    return phi.rows() > 0;
}

bool phase2_predicate(const Mat& phi, const Thresholds& th) { return phi.size() > 0 && phi.minCoeff() >= th.c_hi; }

PhaseReport phase_detect(const std::vector<std::pair<long, Mat>>& phi_timeline, const Thresholds& th) {
    PhaseReport r;
    r.thresholds = th;
    for (const auto& [t, phi] : phi_timeline) {
        if (!r.phase1_complete_at && phase1_predicate(phi, th)) r.phase1_complete_at = t;
        if (!r.phase2_complete_at && phase2_predicate(phi, th)) r.phase2_complete_at = t;
    }
    return r;
}

double clean_lottery_fraction(const Mat& phi, const Thresholds& th) {
    if (phi.rows() == 0) return 0.0;
    int n = 0;
    for (Eigen::Index i = 0; i < phi.rows(); ++i) {
        const double hi = std::max(phi(i, 0), phi(i, 1)), lo = std::min(phi(i, 0), phi(i, 1));
        n += (hi >= th.c_hi && lo <= th.c_lo);
    }
    return static_cast<double>(n) / phi.rows();
}

double both_learned_fraction(const Mat& phi, const Thresholds& th) {
    if (phi.rows() == 0) return 0.0;
    int n = 0;
    for (Eigen::Index i = 0; i < phi.rows(); ++i) n += (phi.row(i).minCoeff() >= th.c_hi);
    return static_cast<double>(n) / phi.rows();
}

nlohmann::json to_json(const PhaseReport& r) {
    nlohmann::json j;
    j["phase1_complete_at"] = r.phase1_complete_at ? nlohmann::json(*r.phase1_complete_at) : nlohmann::json(nullptr);
    j["phase2_complete_at"] = r.phase2_complete_at ? nlohmann::json(*r.phase2_complete_at) : nlohmann::json(nullptr);
    j["c_hi"] = r.thresholds.c_hi;
    j["c_lo"] = r.thresholds.c_lo;
    return j;
}

nlohmann::json to_json(const InductionAudit& a) {
    return nlohmann::json{{"violation_a", a.a},       {"violation_b", a.b},       {"violation_c", a.c},
                          {"violation_d", a.d},       {"violation_e", a.e},       {"measured_a", a.a_measured},
                          {"measured_b", a.b_measured}, {"measured_c", a.c_measured}, {"phi_min", a.phi_min},
                          {"phi_max", a.phi_max},     {"corr_min", a.corr_min}};
}

}  // namespace mvssl
