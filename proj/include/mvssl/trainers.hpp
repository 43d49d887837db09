#pragma once

#include "mvssl/augment.hpp"
#include "mvssl/common.hpp"
#include "mvssl/datagen.hpp"
#include "mvssl/diagnostics.hpp"
#include "mvssl/gradcore.hpp"
#include "mvssl/netcore.hpp"

#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace mvssl {

enum class Regime { SL, FixMatch, SAFixMatchOracle, SAFixMatchAttention };
enum class ScheduleKind { Constant, FlexMatch, FreeMatch, SoftMatch, Dash };

std::string to_string(Regime r);
std::string to_string(ScheduleKind k);
Regime parse_regime(const std::string& s);
ScheduleKind parse_schedule(const std::string& s);

struct ThresholdSchedule {
    ScheduleKind kind = ScheduleKind::Constant;
    double tau = 0.95;
    // FlexMatch: per-class scale in [0,1], recomputed from confident-prediction counts.
    std::vector<double> beta;
    // FreeMatch / SoftMatch.
    double ema = 0.999;
    double tau_t = 1.0;
    double tau_init = 0.0;  // EMA start value at the end of warmup; 0 means 1/k
    long warmup = 0;
    double sigma_w = 0.1;
    bool started = false;
    // Dash.
    double rho0 = 0.5;
    double decay = 0.999;
    double rho_t = 0.5;

    static ThresholdSchedule constant(double tau);
    static ThresholdSchedule flexmatch(double tau, int k);
    static ThresholdSchedule freematch(double ema, long warmup);
    static ThresholdSchedule softmatch(double ema, long warmup, double sigma_w = 0.1);
    static ThresholdSchedule dash(double rho0 = 0.5, double decay = 0.999);

    void validate() const;
    // Prepares per-class state; called once before training.
    void reset(int k);

    GateDecision decide(int b, double conf, long t) const;
    void update(const PseudoLabelBatchStats& stats, long t, int k);
    // Representative threshold for logging.
    double current_tau() const;
};

// Stand-alone forms of the two schedule operations.
GateDecision threshold_value(const ThresholdSchedule& s, long t, int b, double conf);
ThresholdSchedule update_schedule(ThresholdSchedule s, const PseudoLabelBatchStats& stats, long t, int k);

struct BatchMode {
    bool full_batch = true;
    int B = 64;
    double mu_ratio = 7.0;
};

struct TrainConfig {
    Regime regime = Regime::FixMatch;
    ThresholdSchedule schedule;
    double eta = 0.05;
    double lambda = 1.0;
    long T1 = 4000;
    long T2 = 4000;
    StrongAugConfig aug;
    BatchMode batch;
    std::uint64_t seed = 0;
    long eval_every = 100;
    int n_test_multi = 500;
    int n_test_single = 500;
    // Attention variant: recompute attention from the live kernels each iteration,
    // or from the Phase-I-end snapshot.
    bool attention_online = true;
    // Evaluate the frozen-randomness objective after each step and track increases.
    bool audit_descent = false;
    std::optional<Thresholds> thresholds;

    void validate() const;
};

struct TimelineRow {
    long iter = 0;
    double loss_s = 0.0;
    double loss_u = 0.0;
    double acc_train = 0.0;
    double acc_test_multi = 0.0;
    double acc_test_single = 0.0;
    double phi_min = 0.0;         // over all 2k entries
    double phi_max = 0.0;
    double phi_second_min = 0.0;  // min over classes of the smaller slot
    double tau_t = 0.0;
    double gate_pass_frac = 0.0;
    double pseudo_correct_frac = 0.0;
};

struct MetricsTimeline {
    std::vector<TimelineRow> rows;
    std::vector<std::pair<long, Mat>> phi;  // Phi snapshot per row

    void write_csv(std::ostream& out) const;
    void write_phi_jsonl(std::ostream& out) const;
    static MetricsTimeline read_csv(std::istream& in);
};

inline const char* kTimelineHeader =
    "iter,loss_s,loss_u,acc_train,acc_test_multi,acc_test_single,phi_min,phi_max,phi_second_min,tau_t,"
    "gate_pass_frac,pseudo_correct_frac";

struct EvalReport {
    long n_multi = 0;
    long n_single = 0;
    double multi_view_accuracy = 0.0;
    double single_view_accuracy = 0.0;
    double accuracy = 0.0;
    double margin_min = 0.0;
    double margin_mean = 0.0;
    double margin_median = 0.0;
    double loss_multi = 0.0;
    double loss_single = 0.0;
};

nlohmann::json to_json(const EvalReport& r);

EvalReport evaluate(const ModelParams& params, const std::vector<const Sample*>& samples);
EvalReport evaluate(const ModelParams& params, const std::vector<Sample>& samples);
// Fresh draws: n samples with the view forced when given (balanced slots for single-view).
EvalReport evaluate_fresh(const ModelParams& params, const DistributionParams& dist, const FeatureBank& bank, int n,
                          std::uint64_t seed, std::optional<View> view = std::nullopt);

struct TrainResult {
    ModelParams params;
    MetricsTimeline timeline;
    PhaseReport phase;
    Lottery lottery_snapshot;   // lottery set frozen at T1 (oracle regime)
    long iterations = 0;
    double descent_max_increase = 0.0;
    // First evaluated iteration at which min Phi exceeds c_lo.
    std::optional<long> first_min_phi_crossing;
};

// Invoked after every evaluation row; returning false stops training early.
using EvalHook = std::function<bool(long iter, const ModelParams&, const TimelineRow&)>;

TrainResult train_run(const TrainConfig& config, const ModelParams& init, const Dataset& dataset,
                      const EvalHook& hook = {});

}  // namespace mvssl
