#include "mvssl/trainers.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

namespace mvssl {

std::string to_string(Regime r) {
    switch (r) {
    case Regime::SL: return "SL";
    case Regime::FixMatch: return "FixMatch";
    case Regime::SAFixMatchOracle: return "SAFixMatchOracle";
    case Regime::SAFixMatchAttention: return "SAFixMatchAttention";
    }
    return "?";
}

std::string to_string(ScheduleKind k) {
    switch (k) {
    case ScheduleKind::Constant: return "Constant";
    case ScheduleKind::FlexMatch: return "FlexMatch";
    case ScheduleKind::FreeMatch: return "FreeMatch";
    case ScheduleKind::SoftMatch: return "SoftMatch";
    case ScheduleKind::Dash: return "Dash";
    }
    return "?";
}

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

}  // namespace

Regime parse_regime(const std::string& s) {
    const std::string l = lower(s);
    if (l == "sl") return Regime::SL;
    if (l == "fixmatch") return Regime::FixMatch;
    if (l == "safixmatchoracle" || l == "sa-oracle" || l == "sa_oracle") return Regime::SAFixMatchOracle;
    if (l == "safixmatchattention" || l == "sa-attention" || l == "sa_attention") return Regime::SAFixMatchAttention;
    throw ConfigError("unknown regime '" + s + "'");
}

ScheduleKind parse_schedule(const std::string& s) {
    const std::string l = lower(s);
    if (l == "constant") return ScheduleKind::Constant;
    if (l == "flexmatch") return ScheduleKind::FlexMatch;
    if (l == "freematch") return ScheduleKind::FreeMatch;
    if (l == "softmatch") return ScheduleKind::SoftMatch;
    if (l == "dash") return ScheduleKind::Dash;
    throw ConfigError("unknown threshold schedule '" + s + "'");
}

ThresholdSchedule ThresholdSchedule::constant(double tau) {
    ThresholdSchedule s;
    s.kind = ScheduleKind::Constant;
    s.tau = tau;
    return s;
}

ThresholdSchedule ThresholdSchedule::flexmatch(double tau, int k) {
    ThresholdSchedule s;
    s.kind = ScheduleKind::FlexMatch;
    s.tau = tau;
    s.beta.assign(k, 1.0);
    return s;
}

ThresholdSchedule ThresholdSchedule::freematch(double ema, long warmup) {
    ThresholdSchedule s;
    s.kind = ScheduleKind::FreeMatch;
    s.ema = ema;
    s.warmup = warmup;
    return s;
}

ThresholdSchedule ThresholdSchedule::softmatch(double ema, long warmup, double sigma_w) {
    ThresholdSchedule s = freematch(ema, warmup);
    s.kind = ScheduleKind::SoftMatch;
    s.sigma_w = sigma_w;
    return s;
}

ThresholdSchedule ThresholdSchedule::dash(double rho0, double decay) {
    ThresholdSchedule s;
    s.kind = ScheduleKind::Dash;
    s.rho0 = rho0;
    s.rho_t = rho0;
    s.decay = decay;
    return s;
}

void ThresholdSchedule::validate() const {
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("schedule: tau must lie in (0,1]");
    if (!(ema >= 0.0 && ema < 1.0)) throw ConfigError("schedule: EMA momentum must lie in [0,1)");
    if (warmup < 0) throw ConfigError("schedule: warmup must be >= 0");
    if (!(sigma_w > 0.0)) throw ConfigError("schedule: sigma_w must be > 0");
    if (!(rho0 >= 0.0)) throw ConfigError("schedule: rho0 must be >= 0");
    if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError("schedule: decay must lie in (0,1]");
    if (!(tau_init >= 0.0 && tau_init <= 1.0)) throw ConfigError("schedule: tau_init must lie in [0,1]");
}

void ThresholdSchedule::reset(int k) {
    if (kind == ScheduleKind::FlexMatch && static_cast<int>(beta.size()) != k) beta.assign(k, 1.0);
    if (kind == ScheduleKind::FreeMatch || kind == ScheduleKind::SoftMatch) {
        tau_t = 1.0;
        started = false;
        if (tau_init == 0.0) tau_init = 1.0 / k;
    }
    if (kind == ScheduleKind::Dash) rho_t = rho0;
}

GateDecision ThresholdSchedule::decide(int b, double conf, long t) const {
    switch (kind) {
    case ScheduleKind::Constant:
        return {conf >= tau, 1.0};
    case ScheduleKind::FlexMatch: {
        const double bb = b >= 0 && b < static_cast<int>(beta.size()) ? beta[b] : 1.0;
        return {conf >= bb * tau, 1.0};
    }
    case ScheduleKind::FreeMatch:
        if (t < warmup || !started) return {false, 0.0};
        return {conf >= tau_t, 1.0};
    case ScheduleKind::SoftMatch: {
        if (t < warmup || !started) return {false, 0.0};
        if (conf >= tau_t) return {true, 1.0};
        const double dlt = tau_t - conf;
        return {true, std::exp(-dlt * dlt / (2.0 * sigma_w * sigma_w))};
    }
    case ScheduleKind::Dash:
        return {-std::log(conf) < rho_t, 1.0};
    }
    return {false, 0.0};
}

void ThresholdSchedule::update(const PseudoLabelBatchStats& stats, long t, int k) {
    switch (kind) {
    case ScheduleKind::Constant:
        break;
    case ScheduleKind::FlexMatch: {
        std::vector<double> count(k, 0.0);
        for (std::size_t n = 0; n < stats.pseudo.size(); ++n)
            if (stats.confidence[n] >= tau) count[stats.pseudo[n]] += 1.0;
        const double mx = *std::max_element(count.begin(), count.end());
        beta.assign(k, 1.0);
        if (mx > 0.0)
            for (int b = 0; b < k; ++b) beta[b] = count[b] / mx;
        break;
    }
    case ScheduleKind::FreeMatch:
    case ScheduleKind::SoftMatch:
        // The EMA starts one step before warmup ends so the first gated
        // iteration already sees an updated threshold.
        if (t + 1 < warmup) break;
        if (!started) {
            tau_t = tau_init;
            started = true;
        }
        tau_t = ema * tau_t + (1.0 - ema) * stats.max_confidence;
        break;
    case ScheduleKind::Dash:
        rho_t *= decay;
        break;
    }
}

double ThresholdSchedule::current_tau() const {
    switch (kind) {
    case ScheduleKind::Constant: return tau;
    case ScheduleKind::FlexMatch: {
        if (beta.empty()) return tau;
        return tau * std::accumulate(beta.begin(), beta.end(), 0.0) / beta.size();
    }
    case ScheduleKind::FreeMatch:
    case ScheduleKind::SoftMatch: return started ? tau_t : 1.0;
    case ScheduleKind::Dash: return std::exp(-rho_t);
    }
    return tau;
}

GateDecision threshold_value(const ThresholdSchedule& s, long t, int b, double conf) { return s.decide(b, conf, t); }

ThresholdSchedule update_schedule(ThresholdSchedule s, const PseudoLabelBatchStats& stats, long t, int k) {
    s.update(stats, t, k);
    return s;
}

void TrainConfig::validate() const {
    if (!(eta > 0.0)) throw ConfigError("train: eta must be > 0");
    if (T1 < 0 || T2 < 0) throw ConfigError("train: T1 and T2 must be >= 0");
    if (!(lambda >= 0.0)) throw ConfigError("train: lambda must be >= 0");
    if (eval_every < 1) throw ConfigError("train: eval_every must be >= 1");
    if (!batch.full_batch && (batch.B < 1 || !(batch.mu_ratio > 0.0)))
        throw ConfigError("train: mini-batch sizes must be positive");
    schedule.validate();
    aug.validate();
}

void MetricsTimeline::write_csv(std::ostream& out) const {
    out << kTimelineHeader << "\n";
    char buf[512];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%ld,%.10g,%.10g,%.6f,%.6f,%.6f,%.10g,%.10g,%.10g,%.10g,%.6f,%.6f\n", r.iter,
                      r.loss_s, r.loss_u, r.acc_train, r.acc_test_multi, r.acc_test_single, r.phi_min, r.phi_max,
                      r.phi_second_min, r.tau_t, r.gate_pass_frac, r.pseudo_correct_frac);
        out << buf;
    }
}

void MetricsTimeline::write_phi_jsonl(std::ostream& out) const {
    for (const auto& [t, phi] : phi) {
        nlohmann::json rows = nlohmann::json::array();
        for (Eigen::Index i = 0; i < phi.rows(); ++i) rows.push_back({phi(i, 0), phi(i, 1)});
        out << nlohmann::json{{"t", t}, {"phi", rows}}.dump() << "\n";
    }
}

MetricsTimeline MetricsTimeline::read_csv(std::istream& in) {
    MetricsTimeline tl;
    std::string line;
    if (!std::getline(in, line)) throw DataError("timeline CSV: empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kTimelineHeader) throw DataError("timeline CSV: header does not match the timeline schema");
    long lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<double> v;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                v.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw DataError("timeline CSV: bad number on line " + std::to_string(lineno));
            }
        }
        if (v.size() != 12) throw DataError("timeline CSV: wrong column count on line " + std::to_string(lineno));
        TimelineRow r;
        r.iter = static_cast<long>(v[0]);
        r.loss_s = v[1];
        r.loss_u = v[2];
        r.acc_train = v[3];
        r.acc_test_multi = v[4];
        r.acc_test_single = v[5];
        r.phi_min = v[6];
        r.phi_max = v[7];
        r.phi_second_min = v[8];
        r.tau_t = v[9];
        r.gate_pass_frac = v[10];
        r.pseudo_correct_frac = v[11];
        tl.rows.push_back(r);
    }
    if (tl.rows.empty()) throw DataError("timeline CSV: no data rows");
    return tl;
}

nlohmann::json to_json(const EvalReport& r) {
    return nlohmann::json{{"n_multi", r.n_multi},
                          {"n_single", r.n_single},
                          {"multi_view_accuracy", r.multi_view_accuracy},
                          {"single_view_accuracy", r.single_view_accuracy},
                          {"accuracy", r.accuracy},
                          {"margin_min", r.margin_min},
                          {"margin_mean", r.margin_mean},
                          {"margin_median", r.margin_median},
                          {"loss_multi", r.loss_multi},
                          {"loss_single", r.loss_single}};
}

namespace {

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    const auto mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + mid, v.end());
    double hi = v[mid];
    if (v.size() % 2 == 1) return hi;
    const double lo = *std::max_element(v.begin(), v.begin() + mid);
    return 0.5 * (lo + hi);
}

}  // namespace

EvalReport evaluate(const ModelParams& params, const std::vector<const Sample*>& samples) {
    if (samples.empty()) throw ConfigError("evaluate: empty sample set");
    const PackedBatch b = pack(samples);
    const Mat F = forward_scores(params, b.X, b.P);
    EvalReport r;
    long ok_multi = 0, ok_single = 0;
    std::vector<double> margins;
    for (int n = 0; n < b.size(); ++n) {
        const Sample& s = *samples[n];
        const Vec f = F.row(n).transpose();
        const Vec logits = softmax(f);
        const Prediction pr = predict_logits(logits);
        const bool ok = pr.cls == s.label;
        const double mx = f.maxCoeff();
        const double ce = std::log((f.array() - mx).exp().sum()) + mx - f(s.label);
        if (s.view == View::Multi) {
            ++r.n_multi;
            ok_multi += ok;
            r.loss_multi += ce;
        } else {
            ++r.n_single;
            ok_single += ok;
            r.loss_single += ce;
        }
        if (ok) {
            double other = -std::numeric_limits<double>::infinity();
            for (int j = 0; j < params.k; ++j)
                if (j != s.label) other = std::max(other, f(j));
            margins.push_back(params.k > 1 ? f(s.label) - other : 0.0);
        }
    }
    if (r.n_multi) {
        r.multi_view_accuracy = static_cast<double>(ok_multi) / r.n_multi;
        r.loss_multi /= r.n_multi;
    }
    if (r.n_single) {
        r.single_view_accuracy = static_cast<double>(ok_single) / r.n_single;
        r.loss_single /= r.n_single;
    }
    r.accuracy = static_cast<double>(ok_multi + ok_single) / samples.size();
    if (!margins.empty()) {
        r.margin_min = *std::min_element(margins.begin(), margins.end());
        r.margin_mean = std::accumulate(margins.begin(), margins.end(), 0.0) / margins.size();
        r.margin_median = median(margins);
    }
    return r;
}

EvalReport evaluate(const ModelParams& params, const std::vector<Sample>& samples) {
    std::vector<const Sample*> ptrs;
    ptrs.reserve(samples.size());
    for (const auto& s : samples) ptrs.push_back(&s);
    return evaluate(params, ptrs);
}

EvalReport evaluate_fresh(const ModelParams& params, const DistributionParams& dist, const FeatureBank& bank, int n,
                          std::uint64_t seed, std::optional<View> view) {
    if (n <= 0) throw ConfigError("evaluate: empty sample set (n must be > 0)");
    const bool balanced = view && *view == View::Single;
    return evaluate(params, sample_many(dist, bank, view, n, seed, Partition::Test, balanced));
}

namespace {

double accuracy_of(const Mat& F, const std::vector<const Sample*>& samples) {
    if (samples.empty()) return 0.0;
    long ok = 0;
    for (Eigen::Index n = 0; n < F.rows(); ++n) {
        Eigen::Index arg = 0;
        for (Eigen::Index i = 1; i < F.cols(); ++i)
            if (F(n, i) > F(n, arg)) arg = i;
        ok += (arg == samples[n]->label);
    }
    return static_cast<double>(ok) / samples.size();
}

std::vector<const Sample*> pointers(const std::vector<Sample>& v) {
    std::vector<const Sample*> out;
    out.reserve(v.size());
    for (const auto& s : v) out.push_back(&s);
    return out;
}

std::vector<const Sample*> draw_minibatch(const std::vector<const Sample*>& pool, int size, Rng& rng) {
    std::vector<const Sample*> out;
    if (pool.empty() || size <= 0) return out;
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    out.reserve(size);
    for (int i = 0; i < size; ++i) out.push_back(pool[pick(rng)]);
    return out;
}

}  // namespace

TrainResult train_run(const TrainConfig& config, const ModelParams& init, const Dataset& dataset,
                      const EvalHook& hook) {
    config.validate();
    const int k = init.k;
    if (dataset.params.k != k || dataset.params.d != init.d || dataset.bank.k() != k)
        throw ConfigError("train: dataset and network disagree on k or d");

    TrainResult res;
    ModelParams W = init;
    const Thresholds th = config.thresholds.value_or(default_thresholds(k, init.m, init.sigma0));
    ThresholdSchedule schedule = config.schedule;
    schedule.reset(k);

    // An empty budget records nothing: the caller evaluates the initial network.
    if (config.T1 + config.T2 == 0) {
        res.params = W;
        res.phase.thresholds = th;
        return res;
    }

    const bool unsup = config.regime != Regime::SL;
    const double lambda = unsup ? config.lambda : 0.0;
    const auto labeled = dataset.labeled();
    const auto unlabeled = dataset.unlabeled();
    const bool full = config.batch.full_batch;

    PackedBatch lab_full, unl_full;
    if (full) {
        if (!labeled.empty()) lab_full = pack(labeled);
        if (unsup && !unlabeled.empty()) unl_full = pack(unlabeled);
    }
    const PackedBatch lab_eval = full ? PackedBatch{} : (labeled.empty() ? PackedBatch{} : pack(labeled));

    const auto test_multi = sample_many(dataset.params, dataset.bank, View::Multi, config.n_test_multi,
                                        derive_seed(config.seed, 0x7e57u, 1), Partition::Test);
    const auto test_single = sample_many(dataset.params, dataset.bank, View::Single, config.n_test_single,
                                         derive_seed(config.seed, 0x7e57u, 2), Partition::Test, true);
    const auto tm_ptr = pointers(test_multi), ts_ptr = pointers(test_single);
    const PackedBatch tm = tm_ptr.empty() ? PackedBatch{} : pack(tm_ptr);
    const PackedBatch ts = ts_ptr.empty() ? PackedBatch{} : pack(ts_ptr);

    Lottery lottery;
    ModelParams attention_snapshot;
    bool have_snapshot = false;
    const long T = config.T1 + config.T2;

    for (long t = 0; t <= T; ++t) {
        const bool last = t == T;
        const bool eval = last || t % config.eval_every == 0;

        if (t == config.T1) {
            lottery = compute_phi(W, dataset.bank).lottery;
            res.lottery_snapshot = lottery;
            attention_snapshot = W;
            have_snapshot = true;
        }

        PackedBatch lab_mb, unl_mb;
        if (!full) {
            Rng brng(derive_seed(config.seed, 0xb47c4u, static_cast<std::uint64_t>(t)));
            auto lb = draw_minibatch(labeled, config.batch.B, brng);
            if (!lb.empty()) lab_mb = pack(lb);
            if (unsup) {
                auto ub = draw_minibatch(unlabeled, static_cast<int>(std::lround(config.batch.mu_ratio * config.batch.B)),
                                         brng);
                if (!ub.empty()) unl_mb = pack(ub);
            }
        }
        const PackedBatch& lab = full ? lab_full : lab_mb;
        const PackedBatch& unl = full ? unl_full : unl_mb;

        LossAndGrad sup;
        if (lab.size() > 0) {
            sup = grad_supervised_batch(W, lab);
        } else {
            sup.grad.grads = Mat::Zero(W.W.rows(), W.W.cols());
        }

        UnsupervisedResult un;
        un.grad.grads = Mat::Zero(W.W.rows(), W.W.cols());
        const bool run_unsup = unsup && unl.size() > 0;
        if (run_unsup) {
            const GateFn gate = [&](int b, double conf) { return schedule.decide(b, conf, t); };
            AugFn aug;
            const std::uint64_t step_seed = derive_seed(config.seed, 0xa09u, static_cast<std::uint64_t>(t));
            switch (config.regime) {
            case Regime::FixMatch:
                aug = [&](const Sample& s, int, int idx, const Eigen::Ref<const Mat>&) {
                    if (config.aug.mode == AugMode::Identity) return identity_outcome(s);
                    Rng rng(derive_seed(step_seed, static_cast<std::uint64_t>(idx)));
                    return strong_modeled(s, config.aug, rng);
                };
                break;
            case Regime::SAFixMatchOracle:
                aug = [&](const Sample& s, int b, int, const Eigen::Ref<const Mat>&) {
                    if (t < config.T1 || b < 0 || b >= static_cast<int>(lottery.size()) || lottery[b] < 0)
                        return identity_outcome(s);
                    return sa_cutout_oracle(s, lottery, b);
                };
                break;
            case Regime::SAFixMatchAttention:
                aug = [&](const Sample& s, int b, int, const Eigen::Ref<const Mat>& pre) {
                    if (config.attention_online) return sa_cutout_attention_pre(s, W, b, pre);
                    if (!have_snapshot) return identity_outcome(s);
                    return sa_cutout_attention(s, attention_snapshot, b);
                };
                break;
            case Regime::SL:
                break;
            }
            un = grad_unsupervised_batch(W, unl, gate, aug);
        }

        if (!std::isfinite(sup.loss) || !std::isfinite(un.loss))
            throw DivergenceError("non-finite loss at iteration " + std::to_string(t));

        if (eval) {
            TimelineRow row;
            row.iter = t;
            row.loss_s = sup.loss;
            row.loss_u = un.loss;
            const PackedBatch& le = full ? lab_full : lab_eval;
            if (le.size() > 0) row.acc_train = accuracy_of(forward_scores(W, le.X, le.P), le.samples);
            if (tm.size() > 0) row.acc_test_multi = accuracy_of(forward_scores(W, tm.X, tm.P), tm.samples);
            if (ts.size() > 0) row.acc_test_single = accuracy_of(forward_scores(W, ts.X, ts.P), ts.samples);
            const Mat phi = compute_phi(W, dataset.bank).phi;
            row.phi_min = phi.minCoeff();
            row.phi_max = phi.maxCoeff();
            row.phi_second_min = phi.rowwise().minCoeff().minCoeff();
            row.tau_t = unsup ? schedule.current_tau() : 0.0;
            if (run_unsup) {
                row.gate_pass_frac = static_cast<double>(un.stats.passed) / un.stats.total;
                row.pseudo_correct_frac =
                    un.stats.passed ? static_cast<double>(un.stats.correct) / un.stats.passed : 1.0;
            }
            res.timeline.rows.push_back(row);
            res.timeline.phi.emplace_back(t, phi);
            if (!res.first_min_phi_crossing && row.phi_min > th.c_lo) res.first_min_phi_crossing = t;
            if (hook && !hook(t, W, row)) break;
        }
        if (last) break;

        ModelParams next = gd_step(W, sup.grad, un.grad, config.eta, lambda);
        if (!next.W.allFinite()) throw DivergenceError("non-finite parameters at iteration " + std::to_string(t));

        if (config.audit_descent) {
            const double before = sup.loss + lambda * un.loss;
            double after = lab.size() > 0 ? grad_supervised_batch(next, lab).loss : 0.0;
            if (run_unsup && lambda != 0.0) after += lambda * unsupervised_loss_frozen(next, unl, un);
            res.descent_max_increase = std::max(res.descent_max_increase, after - before);
        }

        if (run_unsup) schedule.update(un.stats, t, k);
        W = std::move(next);
        res.iterations = t + 1;
    }

    res.params = W;
    res.phase = phase_detect(res.timeline.phi, th);
    return res;
}

}  // namespace mvssl
