// Acceptance run: one PASS/FAIL line per criterion AC-1..AC-10.
// Statistical criteria take medians over seeds 1..N of the reference config.

#include "fixtures.hpp"
#include "oracles.hpp"

#include "mvssl/expcli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

using namespace mvssl;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

std::string list(const std::vector<double>& v, const char* f = "%.3f") {
    std::string out = "[";
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? " " : "") + fmt(f, v[i]);
    return out + "]";
}

struct Verdicts {
    int passed = 0, failed = 0;

    void line(const std::string& id, bool pass, const std::string& detail) {
        std::printf("%-6s %s  %s\n", id.c_str(), pass ? "PASS" : "FAIL", detail.c_str());
        std::fflush(stdout);
        (pass ? passed : failed) += 1;
    }
};

void note(const std::string& msg) { log_message(LogLevel::Info, msg); }

// Runs tasks on up to `jobs` threads.
void run_parallel(std::vector<std::function<void()>>& tasks, int jobs) {
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next++) < tasks.size();) tasks[i]();
    };
    std::vector<std::thread> pool;
    for (int j = 1; j < std::min<int>(jobs, static_cast<int>(tasks.size())); ++j) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
}

// ---- training runs on the reference config ----

struct RunSpec {
    std::string name;
    Regime regime = Regime::FixMatch;
    std::optional<ThresholdSchedule> schedule;
    std::optional<int> n_unlabeled;
    std::optional<long> T1, T2;
    bool audit_pseudo = false;
};

struct Run {
    std::uint64_t seed = 0;
    ExperimentConfig config;
    FeatureBank bank;
    TrainResult res;
    Thresholds th;
    std::vector<std::pair<long, PseudoLabelAudit>> audits;
    double seconds = 0.0;

    double both() const { return both_learned_fraction(compute_phi(res.params, bank).phi, th); }
    double clean() const { return clean_lottery_fraction(compute_phi(res.params, bank).phi, th); }
    EvalReport fresh(int n, std::uint64_t tag, std::optional<View> view) const {
        return evaluate_fresh(res.params, config.distribution, bank, n, derive_seed(seed, 0xacce, tag), view);
    }
};

Run execute(const ExperimentConfig& base, std::uint64_t seed, const RunSpec& spec) {
    Run r;
    r.seed = seed;
    r.config = base;
    ExperimentConfig& c = r.config;
    c.seed = seed;
    if (spec.n_unlabeled) {
        c.counts.unlabeled_single = static_cast<int>(std::lround(*spec.n_unlabeled * c.distribution.mu));
        c.counts.unlabeled_multi = *spec.n_unlabeled - c.counts.unlabeled_single;
    }
    c.train.regime = spec.regime;
    if (spec.schedule) c.train.schedule = *spec.schedule;
    if (spec.T1) c.train.T1 = *spec.T1;
    if (spec.T2) c.train.T2 = *spec.T2;
    c.validate();

    r.bank = bank_for(c);
    const Dataset ds = sample_dataset(c.distribution, r.bank, c.counts, seed);
    const ModelParams init =
        init_params(c.distribution.k, c.network.m, c.distribution.d, c.activation(), c.sigma0(), seed);
    TrainConfig tc = c.train;
    tc.seed = seed;
    r.th = c.resolved_thresholds();
    tc.thresholds = r.th;

    std::vector<const Sample*> unl;
    for (const auto& s : ds.unlabeled_multi) unl.push_back(&s);
    for (const auto& s : ds.unlabeled_single) unl.push_back(&s);
    EvalHook hook;
    if (spec.audit_pseudo)
        hook = [&](long t, const ModelParams& W, const TimelineRow&) {
            r.audits.emplace_back(t, pseudo_label_audit(W, unl, c.eval.tau));
            return true;
        };

    const auto t0 = Clock::now();
    r.res = train_run(tc, init, ds, hook);
    r.seconds = since(t0);
    note(fmt("%s seed=%llu done in %.1fs", spec.name.c_str(), static_cast<unsigned long long>(seed), r.seconds));
    return r;
}

void execute_all(const ExperimentConfig& base, const std::vector<RunSpec>& specs, int seeds, int jobs,
                 std::vector<std::vector<Run>>& out) {
    out.assign(specs.size(), std::vector<Run>(seeds));
    std::vector<std::function<void()>> tasks;
    for (std::size_t s = 0; s < specs.size(); ++s)
        for (int i = 0; i < seeds; ++i)
            tasks.emplace_back([&, s, i] { out[s][i] = execute(base, i + 1, specs[s]); });
    run_parallel(tasks, jobs);
}

template <class F>
std::vector<double> collect(const std::vector<Run>& runs, F f) {
    std::vector<double> v;
    for (const auto& r : runs) v.push_back(f(r));
    return v;
}

double max_seconds(const std::vector<Run>& runs) {
    double m = 0.0;
    for (const auto& r : runs) m = std::max(m, r.seconds);
    return m;
}

// Crossing iteration, or one past the budget when min Phi never exceeds c_lo.
double crossing(const Run& r) {
    const auto& c = r.res.first_min_phi_crossing;
    return c ? static_cast<double>(*c) : static_cast<double>(r.config.train.T1 + r.config.train.T2 + 1);
}

// ---- exact criteria ----

void ac1(Verdicts& v) {
    const auto t0 = Clock::now();
    double worst = 0.0;
    long checked = 0;
    bool empty = false;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const fixtures::Instance in = fixtures::make_instance(seed, 6);
        std::vector<const Sample*> ptr;
        for (const auto& s : in.samples) ptr.push_back(&s);
        const PackedBatch b = pack(ptr);
        FdOptions opt;
        opt.coordinates = 96;
        opt.seed = seed;

        const LossAndGrad sup = grad_supervised_batch(in.params, b);
        auto loss_s = [&](const Mat& W) {
            long double acc = 0;
            for (const auto& s : in.samples) acc += oracle::cross_entropy(in.params, W, s.patches, s.label);
            return acc / in.samples.size();
        };
        opt.excluded_rows = kink_rows(in.params, b.X, nullptr);
        const FdReport rs = finite_diff_check(in.params.W, sup.grad.grads, loss_s, 1e-6, opt);

        // Frozen gate (all pass) and frozen modeled augmentation.
        StrongAugConfig cfg;
        GateFn gate = [](int, double) { return GateDecision{true, 1.0}; };
        AugFn aug = [&](const Sample& s, int, int index, const Eigen::Ref<const Mat>&) {
            Rng rng(derive_seed(seed, 77, index));
            return strong_modeled(s, cfg, rng);
        };
        const UnsupervisedResult u = grad_unsupervised_batch(in.params, b, gate, aug);
        auto loss_u = [&](const Mat& W) {
            long double acc = 0;
            for (int s = 0; s < b.size(); ++s) {
                std::vector<long double> scale(b.P);
                for (int p = 0; p < b.P; ++p) scale[p] = u.scale(s * b.P + p);
                acc += u.weights(s) * oracle::cross_entropy(in.params, W, in.samples[s].patches, u.targets[s], scale);
            }
            return acc / b.size();
        };
        opt.excluded_rows = kink_rows(in.params, b.X, &u.scale);
        const FdReport ru = finite_diff_check(in.params.W, u.grad.grads, loss_u, 1e-6, opt);

        worst = std::max({worst, rs.max_rel_error, ru.max_rel_error});
        checked += rs.checked + ru.checked;
        empty = empty || rs.checked == 0 || ru.checked == 0;
    }
    const double secs = since(t0);
    v.line("AC-1", !empty && worst <= 1e-6 && secs < 10.0,
           fmt("max rel err %.2e (<= 1e-6) over %ld coords, 20 instances, %.2fs (< 10s)", worst, checked, secs));
}

void ac2(Verdicts& v) {
    const auto t0 = Clock::now();
    double jump = 0.0;
    for (int q : {3, 4, 5})
        for (double varrho : {default_varrho(16), 0.05, 0.5}) {
            const ActivationParams a{q, varrho};
            const double e = 1e-15;
            jump = std::max({jump, std::abs(relu_bar(-e, a) - relu_bar(e, a)),
                             std::abs(relu_bar(varrho * (1 - e), a) - relu_bar(varrho * (1 + e), a)),
                             std::abs(relu_bar_prime(-e, a) - relu_bar_prime(e, a)),
                             std::abs(relu_bar_prime(varrho * (1 - e), a) - relu_bar_prime(varrho * (1 + e), a))});
        }
    Rng rng(2);
    const ActivationParams a{3, default_varrho(16)};
    int bad = 0;
    for (int i = 0; i < 10000; ++i) {
        double z1 = uniform(rng, -1, 2), z2 = uniform(rng, -1, 2);
        if (z1 > z2) std::swap(z1, z2);
        bad += relu_bar(z1, a) > relu_bar(z2, a) || relu_bar_prime(z1, a) > relu_bar_prime(z2, a);
    }
    const double secs = since(t0);
    v.line("AC-2", jump <= 1e-12 && bad == 0 && secs < 1.0,
           fmt("max joint jump %.1e (<= 1e-12), %d monotonicity violations in 1e4 pairs, %.3fs (< 1s)", jump, bad,
               secs));
}

void ac10(Verdicts& v, const ExperimentConfig& ref) {
    const auto t0 = Clock::now();
    int violations = 0, freq_fail = 0;
    double worst_z = 0.0;
    const int N = 10000;
    std::vector<DistributionParams> dists{ref.distribution, DistributionParams::defaults(16, 256, 64)};
    for (std::size_t di = 0; di < dists.size(); ++di) {
        const DistributionParams& dp = dists[di];
        const int k = dp.k;
        const FeatureBank bank = build_feature_bank(k, dp.d, 100 + di);
        if (oracle::gram_error(bank) > 1e-10) ++violations;
        const auto samples = sample_many(dp, bank, std::nullopt, N, 200 + di, Partition::Test);
        long single = 0, slot0 = 0;
        std::vector<long> label(k, 0), incl(2 * k, 0), opportunities(2 * k, 0);
        for (const auto& s : samples) {
            violations += oracle::sample_violations(s, dp);
            ++label[s.label];
            if (s.view == View::Single) {
                ++single;
                slot0 += s.main_slot == 0;
            }
            for (int f = 0; f < 2 * k; ++f) {
                if (feature_class(f) == s.label) continue;
                ++opportunities[f];
                incl[f] += s.find_feature(f) >= 0;
            }
        }
        auto check = [&](long count, long n, double p) {
            const double sd = std::sqrt(n * p * (1 - p));
            const double z = sd > 0 ? std::abs(count - n * p) / sd : 0.0;
            worst_z = std::max(worst_z, z);
            freq_fail += z > 4.0;
        };
        check(single, N, dp.mu);
        check(slot0, single, 0.5);
        for (int i = 0; i < k; ++i) check(label[i], N, 1.0 / k);
        for (int f = 0; f < 2 * k; ++f) check(incl[f], opportunities[f], dp.s_rate);
    }
    const double secs = since(t0);
    v.line("AC-10", violations == 0 && freq_fail == 0 && secs < 30.0,
           fmt("%d invariant violations in 2x1e4 samples, %d frequencies beyond 4 sigma (worst %.2f), %.1fs (< 30s)",
               violations, freq_fail, worst_z, secs));
}

// Small full-batch config for the descent audit.
ExperimentConfig descent_config() {
    ExperimentConfig c;
    c.distribution = DistributionParams::defaults(4, 16, 12);
    c.distribution.C_p = 1;
    c.counts = {16, 0, 64, 0};
    c.network.m = 2;
    c.network.sigma0 = 0.01;
    c.train.eta = 0.1;
    c.train.T1 = 300;
    c.train.T2 = 300;
    c.train.eval_every = 100;
    c.train.n_test_multi = c.train.n_test_single = 50;
    c.train.audit_descent = true;
    return c;
}

void ac8(Verdicts& v) {
    double worst = 0.0;
    bool identical = true;
    for (Regime r : {Regime::SL, Regime::FixMatch, Regime::SAFixMatchOracle}) {
        RunSpec spec;
        spec.name = "descent-" + to_string(r);
        spec.regime = r;
        const ExperimentConfig c = descent_config();
        const Run a = execute(c, 3, spec), b = execute(c, 3, spec);
        worst = std::max(worst, a.res.descent_max_increase);
        std::ostringstream ca, cb;
        a.res.timeline.write_csv(ca);
        b.res.timeline.write_csv(cb);
        identical = identical && a.res.params.W == b.res.params.W && ca.str() == cb.str();
    }
    v.line("AC-8", worst <= 1e-9 && identical,
           fmt("max frozen-objective increase per step %.2e (<= 1e-9), repeated runs %s", worst,
               identical ? "bitwise identical" : "DIFFER"));
}

// Threshold-variant settings for AC-9.
std::vector<std::pair<std::string, ThresholdSchedule>> variants(const ExperimentConfig& ref) {
    const int k = ref.distribution.k;
    return {{"FlexMatch", ThresholdSchedule::flexmatch(ref.train.schedule.tau, k)},
            {"FreeMatch", ThresholdSchedule::freematch(0.999, 0)},
            {"SoftMatch", ThresholdSchedule::softmatch(0.999, 0)},
            {"Dash", ThresholdSchedule::dash(0.5, 0.999)}};
}

bool selected(const std::set<std::string>& only, const std::string& id) { return only.empty() || only.count(id); }

}  // namespace

int main(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"Acceptance checks for the multi-view semi-supervised learning simulator"};
    std::string config_path = std::string(MVSSL_SOURCE_DIR) + "/configs/acceptance.toml";
    std::vector<std::string> only_list;
    int jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    int seeds = 5;
    double eps_fa = 0.5;
    app.add_option("--config", config_path, "reference config");
    app.add_option("--only", only_list, "criteria to run, e.g. AC-3 AC-4")->delimiter(',');
    app.add_option("--jobs", jobs, "parallel training runs")->check(CLI::PositiveNumber);
    app.add_option("--seeds", seeds, "seeds per statistical criterion")->check(CLI::PositiveNumber);
    app.add_option("--eps-fa", eps_fa, "function-approximation tolerance for AC-7");
    CLI11_PARSE(app, argc, argv);
    const std::set<std::string> only(only_list.begin(), only_list.end());

    ExperimentConfig ref;
    try {
        ref = load_config(config_path);
        ref.validate();
    } catch (const std::runtime_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    const double ln_k = std::log(static_cast<double>(ref.distribution.k));

    Verdicts v;
    if (selected(only, "AC-1")) ac1(v);
    if (selected(only, "AC-2")) ac2(v);
    if (selected(only, "AC-10")) ac10(v, ref);
    if (selected(only, "AC-8")) ac8(v);

    // Training runs, shared between criteria.
    const bool need_sl = selected(only, "AC-3");
    const bool need_fm = selected(only, "AC-4") || selected(only, "AC-5") || selected(only, "AC-6") ||
                         selected(only, "AC-7") || selected(only, "AC-9");
    const bool need_sa = selected(only, "AC-5");
    const bool need_var = selected(only, "AC-9");

    std::vector<RunSpec> specs;
    int i_sl = -1, i_fm = -1, i_sa = -1, i_var = -1;
    if (need_sl) {
        i_sl = static_cast<int>(specs.size());
        RunSpec s;
        s.name = "SL";
        s.regime = Regime::SL;
        s.T1 = 5000;
        s.T2 = 0;
        specs.push_back(s);
    }
    if (need_fm) {
        i_fm = static_cast<int>(specs.size());
        RunSpec s;
        s.name = "FixMatch";
        s.audit_pseudo = true;
        specs.push_back(s);
    }
    if (need_sa) {
        i_sa = static_cast<int>(specs.size());
        RunSpec s;
        s.name = "SA-FixMatchOracle";
        s.regime = Regime::SAFixMatchOracle;
        const int n_u = ref.counts.unlabeled_multi + ref.counts.unlabeled_single;
        const double frac = std::max(ref.train.aug.pi1 * ref.train.aug.pi2, (1 - ref.train.aug.pi1) * ref.train.aug.pi2);
        s.n_unlabeled = static_cast<int>(std::lround(frac * n_u));
        specs.push_back(s);
    }
    if (need_var) {
        i_var = static_cast<int>(specs.size());
        for (const auto& [name, sched] : variants(ref)) {
            RunSpec s;
            s.name = name;
            s.schedule = sched;
            specs.push_back(s);
        }
    }
    std::vector<std::vector<Run>> runs;
    if (!specs.empty()) execute_all(ref, specs, seeds, jobs, runs);

    if (need_sl) {
        const auto& r = runs[i_sl];
        const auto clean = collect(r, [](const Run& x) { return x.clean(); });
        const auto multi = collect(r, [](const Run& x) { return x.fresh(2000, 1, View::Multi).multi_view_accuracy; });
        const auto single = collect(r, [](const Run& x) { return x.fresh(2000, 2, View::Single).single_view_accuracy; });
        const double c = median(clean), m = median(multi), s = median(single), t = max_seconds(r);
        v.line("AC-3", c >= 0.9 && m >= 0.95 && s >= 0.35 && s <= 0.65 && t <= 600.0,
               fmt("median clean lottery %.3f (>= 0.9) %s, multi %.3f (>= 0.95), single %.3f (in [0.35, 0.65]), "
                   "max %.0fs/seed (<= 600s)",
                   c, list(clean, "%.2f").c_str(), m, s, t));
    }

    std::vector<double> fm_single;
    if (need_fm) {
        const auto& r = runs[i_fm];
        fm_single = collect(r, [](const Run& x) { return x.fresh(2000, 2, View::Single).single_view_accuracy; });
        if (selected(only, "AC-4")) {
            const auto both = collect(r, [](const Run& x) { return x.both(); });
            const auto multi = collect(r, [](const Run& x) { return x.fresh(2000, 1, View::Multi).multi_view_accuracy; });
            const auto margin = collect(r, [](const Run& x) { return x.fresh(2000, 3, std::nullopt).margin_median; });
            const double b = median(both), s = median(fm_single), m = median(multi), g = median(margin);
            const double t = max_seconds(r);
            v.line("AC-4", b >= 0.9 && s >= 0.9 && m >= 0.95 && g >= 0.5 * ln_k && t <= 1200.0,
                   fmt("median both-learned %.3f (>= 0.9) %s, single %.3f (>= 0.9), multi %.3f (>= 0.95), "
                       "margin %.2f (>= %.3f), max %.0fs/seed (<= 1200s)",
                       b, list(both, "%.2f").c_str(), s, m, g, 0.5 * ln_k, t));
        }
        if (selected(only, "AC-6")) {
            std::vector<double> frac, passed;
            int fallback = 0;
            for (const auto& x : r) {
                long at = x.config.train.T1;
                if (x.res.phase.phase1_complete_at)
                    at = *x.res.phase.phase1_complete_at;
                else
                    ++fallback;
                // Audit row at or just after the phase boundary.
                const PseudoLabelAudit* a = nullptr;
                for (const auto& [t, audit] : x.audits)
                    if (t >= at) {
                        a = &audit;
                        break;
                    }
                frac.push_back(a ? a->correct_fraction() : 0.0);
                passed.push_back(a ? a->pass_fraction() : 0.0);
            }
            const double f = median(frac);
            v.line("AC-6", f >= 0.99,
                   fmt("median pseudo-label correct fraction at Phase-I end %.4f (>= 0.99) %s, pass fraction %s, "
                       "%d/%zu runs used T1 as the boundary",
                       f, list(frac, "%.3f").c_str(), list(passed, "%.2f").c_str(), fallback, r.size()));
        }
        if (selected(only, "AC-7")) {
            std::vector<double> med;
            for (const auto& x : r) {
                const auto samples = sample_many(x.config.distribution, x.bank, View::Multi, 500,
                                                 derive_seed(x.seed, 0xacce, 4), Partition::Test);
                std::vector<double> res;
                for (const auto& s : samples) res.push_back(function_approx_residual(x.res.params, x.bank, s).maxCoeff());
                med.push_back(median(res));
            }
            const double e = median(med);
            v.line("AC-7", e <= eps_fa,
                   fmt("median max_i residual %.3f (<= eps_fa %.3f) %s", e, eps_fa, list(med).c_str()));
        }
    }

    if (need_sa) {
        const auto& sa = runs[i_sa];
        const auto& fm = runs[i_fm];
        const auto sa_single = collect(sa, [](const Run& x) { return x.fresh(2000, 2, View::Single).single_view_accuracy; });
        std::vector<double> gap;
        for (std::size_t i = 0; i < sa.size(); ++i) gap.push_back(std::abs(sa_single[i] - fm_single[i]));
        const double b_sa = median(collect(sa, [](const Run& x) { return x.both(); }));
        const double b_fm = median(collect(fm, [](const Run& x) { return x.both(); }));
        const double g = median(gap);
        const int n_c = sa.front().config.counts.unlabeled_multi + sa.front().config.counts.unlabeled_single;
        v.line("AC-5", g <= 0.05 && b_sa >= 0.9 && b_fm >= 0.9,
               fmt("N_c=%d: median |single gap| %.3f (<= 0.05) SA %s vs FixMatch %s, both-learned SA %.3f FixMatch "
                   "%.3f (>= 0.9)",
                   n_c, g, list(sa_single).c_str(), list(fm_single).c_str(), b_sa, b_fm));
    }

    if (need_var) {
        const auto vars = variants(ref);
        bool ok = true;
        std::string detail;
        double free_cross = 0.0;
        for (std::size_t j = 0; j < vars.size(); ++j) {
            const auto& r = runs[i_var + j];
            const double b = median(collect(r, [](const Run& x) { return x.both(); }));
            ok = ok && b >= 0.9;
            detail += fmt("%s %.3f, ", vars[j].first.c_str(), b);
            if (vars[j].first == "FreeMatch") free_cross = median(collect(r, crossing));
        }
        const double fm_cross = median(collect(runs[i_fm], crossing));
        ok = ok && free_cross <= fm_cross;
        v.line("AC-9", ok,
               fmt("median both-learned %s(>= 0.9); median min-Phi crossing FreeMatch %.0f (<= Constant %.0f)",
                   detail.c_str(), free_cross, fm_cross));
    }

    std::printf("%d passed, %d failed\n", v.passed, v.failed);
    return v.failed == 0 ? 0 : 1;
}
