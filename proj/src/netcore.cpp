#include "mvssl/netcore.hpp"

#include "mvssl/container.hpp"

#include <algorithm>
#include <cmath>

namespace mvssl {

void ActivationParams::validate() const {
    if (q < 3) throw ConfigError("activation: q must be >= 3");
    if (!(varrho > 0.0 && varrho < 1.0)) throw ConfigError("activation: varrho must lie in (0,1)");
}

double default_varrho(int k) {
    const double l = std::log(static_cast<double>(std::max(k, 2)));
    return std::clamp(1.0 / (l * l), 0.05, 0.5);
}

double default_sigma0(int k, int q) { return std::pow(static_cast<double>(k), -1.0 / (q - 2)); }

ModelParams init_params(int k, int m, int d, const ActivationParams& act, double sigma0, std::uint64_t seed) {
    act.validate();
    if (k < 1 || m < 1 || d < 1) throw ConfigError("network: k, m, d must be positive");
    if (sigma0 < 0.0) throw ConfigError("network: sigma0 must be >= 0");
    ModelParams p;
    p.k = k;
    p.m = m;
    p.d = d;
    p.act = act;
    p.sigma0 = sigma0;
    p.W = Mat::Zero(k * m, d);
    if (sigma0 > 0.0) {
        Rng rng(derive_seed(seed, 0x1417u));
        std::normal_distribution<double> g(0.0, sigma0);
        for (Eigen::Index i = 0; i < p.W.size(); ++i) p.W.data()[i] = g(rng);
    }
    return p;
}

Vec softmax(const Vec& scores) {
    const double mx = scores.maxCoeff();
    Vec e = (scores.array() - mx).exp();
    return e / e.sum();
}

Mat scores_from_activations(const ModelParams& params, const Mat& act, int P) {
    const Eigen::Index n = act.rows() / P;
    Mat F(n, params.k);
    for (Eigen::Index s = 0; s < n; ++s) {
        const Eigen::RowVectorXd acc = act.middleRows(s * P, P).colwise().sum();
        for (int i = 0; i < params.k; ++i) F(s, i) = acc.segment(i * params.m, params.m).sum();
    }
    return F;
}

Mat scores_from_preact(const ModelParams& params, const Mat& preact, int P) {
    switch (params.act.q) {
    case 3: return scores_from_activations(params, ActKernel<3>(params.act).values(preact), P);
    case 4: return scores_from_activations(params, ActKernel<4>(params.act).values(preact), P);
    default: return scores_from_activations(params, ActKernel<>(params.act).values(preact), P);
    }
}

Mat forward_scores(const ModelParams& params, const Mat& X, int P) {
    if (X.cols() != params.d) throw ConfigError("forward: patch dimension does not match kernels");
    if (P <= 0 || X.rows() % P != 0) throw ConfigError("forward: row count is not a multiple of P");
    Mat pre = X * params.W.transpose();
    return scores_from_preact(params, pre, P);
}

ScoreVector forward(const ModelParams& params, const Mat& patches) {
    if (patches.cols() != params.d) throw ConfigError("forward: patch dimension does not match kernels");
    ScoreVector out;
    if (patches.rows() == 0) {
        out.scores = Vec::Zero(params.k);
    } else {
        Mat F = forward_scores(params, patches, static_cast<int>(patches.rows()));
        out.scores = F.row(0).transpose();
    }
    out.logits = softmax(out.scores);
    return out;
}

Prediction predict_logits(const Eigen::Ref<const Vec>& logits) {
    Prediction p;
    p.cls = 0;
    p.confidence = logits(0);
    for (Eigen::Index i = 1; i < logits.size(); ++i) {
        if (logits(i) > p.confidence) {
            p.cls = static_cast<int>(i);
            p.confidence = logits(i);
        }
    }
    return p;
}

Prediction predict(const ScoreVector& score) { return predict_logits(score.logits); }

namespace {
const std::string kCheckpointMagic = "MVSSLNET1";
}

void save_checkpoint(const ModelParams& params, long iteration, const std::string& path) {
    Container c;
    c.header = {{"k", params.k},          {"m", params.m},           {"d", params.d},
                {"q", params.act.q},      {"varrho", params.act.varrho}, {"sigma0", params.sigma0},
                {"iteration", iteration}};
    c.payload.assign(params.W.data(), params.W.data() + params.W.size());
    write_container(path, kCheckpointMagic, kCheckpointVersion, c);
}

std::pair<ModelParams, long> load_checkpoint(const std::string& path) {
    Container c = read_container(path, kCheckpointMagic, kCheckpointVersion);
    ModelParams p;
    long it = 0;
    try {
        p.k = c.header.at("k").get<int>();
        p.m = c.header.at("m").get<int>();
        p.d = c.header.at("d").get<int>();
        p.act.q = c.header.at("q").get<int>();
        p.act.varrho = c.header.at("varrho").get<double>();
        p.sigma0 = c.header.at("sigma0").get<double>();
        it = c.header.at("iteration").get<long>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": malformed checkpoint header: " + e.what());
    }
    const auto n = static_cast<std::size_t>(p.k) * p.m * p.d;
    if (c.payload.size() != n) throw DataError(path + ": checkpoint payload size mismatch");
    p.W = Eigen::Map<const Mat>(c.payload.data(), p.k * p.m, p.d);
    return {p, it};
}

}  // namespace mvssl
