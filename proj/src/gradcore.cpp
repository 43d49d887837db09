#include "mvssl/gradcore.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mvssl {

PackedBatch pack(const std::vector<const Sample*>& samples) {
    PackedBatch b;
    b.samples = samples;
    if (samples.empty()) return b;
    b.P = samples.front()->P();
    const auto d = samples.front()->patches.cols();
    b.X.resize(static_cast<Eigen::Index>(samples.size()) * b.P, d);
    for (std::size_t n = 0; n < samples.size(); ++n) {
        if (samples[n]->P() != b.P || samples[n]->patches.cols() != d)
            throw ConfigError("pack: samples differ in shape");
        b.X.middleRows(static_cast<Eigen::Index>(n) * b.P, b.P) = samples[n]->patches;
    }
    return b;
}

namespace {

template <int Q>
double masked_ce_impl(const ModelParams& params, const Mat& X, const Mat& preact, int P, const Vec* scale,
                      const std::vector<int>& targets, const Vec& weights, Mat* grad) {
    const ActKernel<Q> f(params.act);
    const int k = params.k, m = params.m;
    const Eigen::Index n = preact.rows() / P;
    Mat scaled;
    if (scale) scaled.noalias() = scale->asDiagonal() * preact;
    const Mat& z = scale ? scaled : preact;
    const Mat F = scores_from_activations(params, f.values(z), P);
    // C holds dLoss/dpre; it starts as the activation derivative and is scaled in place.
    Mat C;
    if (grad) C = f.derivs(z);

    double loss = 0.0;
    Eigen::RowVectorXd coef_wide(k * m);
    for (Eigen::Index s = 0; s < n; ++s) {
        const double w = weights(s);
        if (w == 0.0) {
            if (grad) C.middleRows(s * P, P).setZero();
            continue;
        }
        const auto Fs = F.row(s);
        const double mx = Fs.maxCoeff();
        const double zs = (Fs.array() - mx).exp().sum();
        const int t = targets[s];
        loss += w * (std::log(zs) + mx - Fs(t));
        if (!grad) continue;
        Eigen::RowVectorXd coef = (Fs.array() - mx).exp() / zs;
        coef(t) -= 1.0;
        coef *= w;
        for (int i = 0; i < k; ++i) coef_wide.segment(i * m, m).setConstant(coef(i));
        auto Cb = C.middleRows(s * P, P);
        Cb.array().rowwise() *= coef_wide.array();
        if (scale) Cb = scale->segment(s * P, P).asDiagonal() * Cb;
    }
    if (grad) grad->noalias() = C.transpose() * X;
    return loss;
}

}  // namespace

double masked_cross_entropy(const ModelParams& params, const Mat& X, const Mat& preact, int P, const Vec* scale,
                            const std::vector<int>& targets, const Vec& weights, Mat* grad) {
    if (X.cols() != params.d) throw ConfigError("gradient: dimension mismatch");
    switch (params.act.q) {
    case 3: return masked_ce_impl<3>(params, X, preact, P, scale, targets, weights, grad);
    case 4: return masked_ce_impl<4>(params, X, preact, P, scale, targets, weights, grad);
    default: return masked_ce_impl<0>(params, X, preact, P, scale, targets, weights, grad);
    }
}

GradientAccumulator grad_cross_entropy(const ModelParams& params, const Mat& patches, int target) {
    if (patches.cols() != params.d) throw ConfigError("gradient: dimension mismatch");
    if (target < 0 || target >= params.k) throw ConfigError("gradient: target out of range");
    GradientAccumulator g;
    g.sample_count = 1;
    if (patches.rows() == 0) {
        g.grads = Mat::Zero(params.W.rows(), params.W.cols());
        return g;
    }
    Mat pre = patches * params.W.transpose();
    masked_cross_entropy(params, patches, pre, static_cast<int>(patches.rows()), nullptr, {target}, Vec::Ones(1),
                         &g.grads);
    return g;
}

LossAndGrad grad_supervised_batch(const ModelParams& params, const PackedBatch& batch) {
    if (batch.size() == 0) throw ConfigError("grad_supervised_batch: empty batch");
    std::vector<int> targets(batch.size());
    for (int n = 0; n < batch.size(); ++n) targets[n] = batch.samples[n]->label;
    Mat pre = batch.X * params.W.transpose();
    LossAndGrad out;
    out.loss = masked_cross_entropy(params, batch.X, pre, batch.P, nullptr, targets, Vec::Ones(batch.size()),
                                    &out.grad.grads);
    const double inv = 1.0 / batch.size();
    out.loss *= inv;
    out.grad.grads *= inv;
    out.grad.sample_count = batch.size();
    return out;
}

LossAndGrad grad_supervised_batch(const ModelParams& params, const std::vector<const Sample*>& batch) {
    if (batch.empty()) throw ConfigError("grad_supervised_batch: empty batch");
    return grad_supervised_batch(params, pack(batch));
}

UnsupervisedResult grad_unsupervised_batch(const ModelParams& params, const PackedBatch& batch, const GateFn& gate,
                                           const AugFn& aug) {
    const int n = batch.size();
    if (n == 0) throw ConfigError("grad_unsupervised_batch: empty batch");
    const int P = batch.P, km = params.k * params.m;
    Mat pre = batch.X * params.W.transpose();
    Mat F = scores_from_preact(params, pre, P);

    UnsupervisedResult out;
    auto& st = out.stats;
    st.total = n;
    st.pseudo.resize(n);
    st.confidence.resize(n);
    out.targets.assign(n, 0);
    out.weights = Vec::Zero(n);
    out.scale = Vec::Ones(static_cast<Eigen::Index>(n) * P);

    for (int s = 0; s < n; ++s) {
        const Vec logits = softmax(F.row(s).transpose());
        const Prediction pr = predict_logits(logits);
        st.pseudo[s] = pr.cls;
        st.confidence[s] = pr.confidence;
        st.max_confidence = std::max(st.max_confidence, pr.confidence);
        const GateDecision g = gate(pr.cls, pr.confidence);
        if (!g.pass || g.weight == 0.0) continue;
        ++st.passed;
        st.weight_sum += g.weight;
        if (pr.cls == batch.samples[s]->label) ++st.correct;
        out.targets[s] = pr.cls;
        out.weights(s) = g.weight;
        const AugOutcome o = aug(*batch.samples[s], pr.cls, s, pre.block(static_cast<Eigen::Index>(s) * P, 0, P, km));
        out.scale.segment(static_cast<Eigen::Index>(s) * P, P) = o.scale;
    }

    out.loss = masked_cross_entropy(params, batch.X, pre, P, &out.scale, out.targets, out.weights, &out.grad.grads);
    const double inv = 1.0 / n;
    out.loss *= inv;
    out.grad.grads *= inv;
    out.grad.sample_count = n;
    return out;
}

double unsupervised_loss_frozen(const ModelParams& params, const PackedBatch& batch, const UnsupervisedResult& frozen) {
    Mat pre = batch.X * params.W.transpose();
    return masked_cross_entropy(params, batch.X, pre, batch.P, &frozen.scale, frozen.targets, frozen.weights,
                                nullptr) /
           batch.size();
}

ModelParams gd_step(const ModelParams& params, const GradientAccumulator& grad_s, const GradientAccumulator& grad_u,
                    double eta, double lambda) {
    ModelParams next = params;
    if (grad_s.grads.size() > 0) {
        if (grad_s.grads.rows() != params.W.rows() || grad_s.grads.cols() != params.W.cols())
            throw ConfigError("gd_step: supervised gradient shape mismatch");
        next.W -= eta * grad_s.grads;
    }
    if (lambda != 0.0 && grad_u.grads.size() > 0) {
        if (grad_u.grads.rows() != params.W.rows() || grad_u.grads.cols() != params.W.cols())
            throw ConfigError("gd_step: unsupervised gradient shape mismatch");
        next.W -= (lambda * eta) * grad_u.grads;
    }
    return next;
}

FdReport finite_diff_check(const Mat& W, const Mat& analytic, const LossClosure& loss, double tolerance,
                           const FdOptions& opts) {
    FdReport rep;
    std::vector<Eigen::Index> pool;
    for (Eigen::Index i = 0; i < W.size(); ++i) {
        const auto row = i / W.cols();
        if (!opts.excluded_rows.empty() && opts.excluded_rows[row]) {
            ++rep.excluded;
            continue;
        }
        pool.push_back(i);
    }
    Rng rng(derive_seed(opts.seed, 0xfdu));
    std::shuffle(pool.begin(), pool.end(), rng);
    const auto count = std::min<std::size_t>(pool.size(), static_cast<std::size_t>(std::max(opts.coordinates, 0)));

    Mat w = W;
    for (std::size_t j = 0; j < count; ++j) {
        const Eigen::Index idx = pool[j];
        const double orig = w.data()[idx];
        w.data()[idx] = orig + opts.step;
        const long double up = loss(w);
        w.data()[idx] = orig - opts.step;
        const long double dn = loss(w);
        w.data()[idx] = orig;
        const double num = static_cast<double>((up - dn) / (2.0L * opts.step));
        const double an = analytic.data()[idx];
        const double denom = std::max({std::abs(an), std::abs(num), opts.floor});
        rep.max_rel_error = std::max(rep.max_rel_error, std::abs(an - num) / denom);
        ++rep.checked;
    }
    rep.pass = rep.checked > 0 && rep.max_rel_error <= tolerance;
    return rep;
}

std::vector<bool> kink_rows(const ModelParams& params, const Mat& X, const Vec* scale, double margin) {
    Mat pre = X * params.W.transpose();
    std::vector<bool> out(params.W.rows(), false);
    for (Eigen::Index r = 0; r < pre.rows(); ++r) {
        const double sc = scale ? (*scale)(r) : 1.0;
        for (Eigen::Index c = 0; c < pre.cols(); ++c) {
            const double z = sc * pre(r, c);
            if (sc != 0.0 && (std::abs(z) < margin || std::abs(z - params.act.varrho) < margin)) out[c] = true;
        }
    }
    return out;
}

}  // namespace mvssl
