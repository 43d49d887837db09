#pragma once

#include "mvssl/common.hpp"

#include <json.hpp>

#include <algorithm>
#include <string>
#include <utility>
#include <vector>

namespace mvssl {

struct ActivationParams {
    int q = 3;
    double varrho = 0.1;

    void validate() const;
};

namespace detail {
inline double ipow(double x, int n) {
    double r = 1.0;
    for (int i = 0; i < n; ++i) r *= x;
    return r;
}
}  // namespace detail

// Smoothed ReLU with its constants precomputed. Q > 0 fixes the power at
// compile time so hot loops vectorize; Q = 0 reads it at run time.
template <int Q = 0>
struct ActKernel {
    int q;
    double varrho, c1, inv_varrho, offset;

    explicit ActKernel(const ActivationParams& a)
        : q(Q > 0 ? Q : a.q),
          varrho(a.varrho),
          c1(1.0 / (q * detail::ipow(a.varrho, q - 1))),
          inv_varrho(1.0 / a.varrho),
          offset((1.0 - 1.0 / q) * a.varrho) {}

    double pw(double x, int n) const {
        if constexpr (Q > 0) {
            double r = 1.0;
            for (int i = 0; i < n; ++i) r *= x;
            return r;
        } else {
            return detail::ipow(x, n);
        }
    }
    // Branch-free forms: the clamp covers the polynomial piece and the
    // linear excess is added separately.
    double value(double z) const {
        const double zc = std::clamp(z, 0.0, varrho);
        return pw(zc, Q > 0 ? Q : q) * c1 + std::max(z - varrho, 0.0);
    }
    double deriv(double z) const { return pw(std::clamp(z, 0.0, varrho) * inv_varrho, (Q > 0 ? Q : q) - 1); }

    // Elementwise forms over a whole pre-activation matrix.
    Mat values(const Mat& z) const {
        const auto zc = z.array().max(0.0).min(varrho);
        const auto lin = (z.array() - varrho).max(0.0);
        if constexpr (Q == 3) {
            return (zc * zc * zc * c1 + lin).matrix();
        } else if constexpr (Q == 4) {
            return (zc.square().square() * c1 + lin).matrix();
        } else {
            return (zc.pow(static_cast<double>(q)) * c1 + lin).matrix();
        }
    }
    Mat derivs(const Mat& z) const {
        const auto u = z.array().max(0.0).min(varrho) * inv_varrho;
        if constexpr (Q == 3) {
            return u.square().matrix();
        } else if constexpr (Q == 4) {
            return (u * u * u).matrix();
        } else {
            return u.pow(static_cast<double>(q - 1)).matrix();
        }
    }
};

// Smoothed ReLU: 0 below 0, z^q / (q varrho^(q-1)) on [0, varrho], z - (1 - 1/q) varrho above.
inline double relu_bar(double z, const ActivationParams& act) { return ActKernel<>(act).value(z); }
inline double relu_bar_prime(double z, const ActivationParams& act) { return ActKernel<>(act).deriv(z); }

// 1/ln^2(k) clamped to [0.05, 0.5].
double default_varrho(int k);
// k^(-1/(q-2)).
double default_sigma0(int k, int q);

struct ModelParams {
    int k = 0;
    int m = 0;
    int d = 0;
    ActivationParams act;
    double sigma0 = 0.0;
    // Row i*m + r holds w_{i,r}.
    Mat W;

    auto kernel(int i, int r) { return W.row(i * m + r); }
    auto kernel(int i, int r) const { return W.row(i * m + r); }
};

ModelParams init_params(int k, int m, int d, const ActivationParams& act, double sigma0, std::uint64_t seed);

struct ScoreVector {
    Vec scores;
    Vec logits;
};

// Numerically stable softmax (max subtraction).
Vec softmax(const Vec& scores);

ScoreVector forward(const ModelParams& params, const Mat& patches);

// Batched scores for n samples of P patches stacked row-wise in X (n*P x d).
Mat forward_scores(const ModelParams& params, const Mat& X, int P);
Mat scores_from_preact(const ModelParams& params, const Mat& preact, int P);
// Same, starting from activated values.
Mat scores_from_activations(const ModelParams& params, const Mat& act, int P);

struct Prediction {
    int cls = 0;
    double confidence = 0.0;
};

// Argmax with ties resolved to the lowest class index.
Prediction predict(const ScoreVector& score);
Prediction predict_logits(const Eigen::Ref<const Vec>& logits);

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const ModelParams& params, long iteration, const std::string& path);
std::pair<ModelParams, long> load_checkpoint(const std::string& path);

}  // namespace mvssl
