#include "mvssl/expcli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

namespace mvssl {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::mutex g_log_mutex;

LogLevel parse_level(const char* s) {
    if (!s) return LogLevel::Info;
    const std::string v = s;
    if (v == "error") return LogLevel::Error;
    if (v == "warn") return LogLevel::Warn;
    if (v == "debug") return LogLevel::Debug;
    return LogLevel::Info;
}

const char* level_name(LogLevel l) {
    switch (l) {
    case LogLevel::Error: return "error";
    case LogLevel::Warn: return "warn";
    case LogLevel::Info: return "info";
    case LogLevel::Debug: return "debug";
    }
    return "?";
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create directory '" + dir + "': " + ec.message());
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write '" + path + "'");
    return out;
}

}  // namespace

LogLevel log_level() {
    static const LogLevel level = parse_level(std::getenv("MVSSL_LOG"));
    return level;
}

void log_message(LogLevel level, const std::string& msg) {
    if (static_cast<int>(level) > static_cast<int>(log_level())) return;
    std::lock_guard<std::mutex> lock(g_log_mutex);
    std::cerr << "[" << level_name(level) << "] " << msg << "\n";
}

json to_json(const PseudoLabelAudit& a) {
    return json{{"total", a.total},
                {"passed", a.passed},
                {"correct", a.correct},
                {"passed_multi", a.passed_multi},
                {"correct_multi", a.correct_multi},
                {"passed_single", a.passed_single},
                {"correct_single", a.correct_single},
                {"pass_fraction", a.pass_fraction()},
                {"correct_fraction", a.correct_fraction()}};
}

json to_json(const RunSummary& s) {
    json j{{"config_hash", s.config_hash},
           {"regime", s.regime},
           {"schedule", s.schedule},
           {"eval", to_json(s.eval)},
           {"phase", to_json(s.phase)},
           {"pseudo_labels", to_json(s.pseudo_labels)},
           {"pseudo_label_tau", s.pseudo_label_tau},
           {"clean_lottery_fraction", s.clean_lottery},
           {"both_learned_fraction", s.both_learned},
           {"iterations", s.iterations},
           {"wall_seconds", s.wall_seconds},
           {"artifacts", s.artifacts}};
    j["first_min_phi_crossing"] = s.first_min_phi_crossing ? json(*s.first_min_phi_crossing) : json(nullptr);
    return j;
}

void print_summary(const RunSummary& s, std::ostream& out) {
    auto opt = [](const std::optional<long>& v) { return v ? std::to_string(*v) : std::string("-"); };
    char buf[160];
    auto line = [&](const char* key, const std::string& val) {
        std::snprintf(buf, sizeof buf, "  %-26s %s\n", key, val.c_str());
        out << buf;
    };
    auto num = [](double v) {
        char b[32];
        std::snprintf(b, sizeof b, "%.4f", v);
        return std::string(b);
    };
    out << "run " << s.config_hash << "\n";
    line("regime", s.regime + " / " + s.schedule);
    line("iterations", std::to_string(s.iterations));
    line("multi-view accuracy", num(s.eval.multi_view_accuracy));
    line("single-view accuracy", num(s.eval.single_view_accuracy));
    line("median margin", num(s.eval.margin_median));
    line("clean lottery fraction", num(s.clean_lottery));
    line("both-learned fraction", num(s.both_learned));
    line("phase1_complete_at", opt(s.phase.phase1_complete_at));
    line("phase2_complete_at", opt(s.phase.phase2_complete_at));
    line("pseudo-label correct", num(s.pseudo_labels.correct_fraction()) + " of " +
                                     std::to_string(s.pseudo_labels.passed) + " passing");
    line("wall clock (s)", num(s.wall_seconds));
}

FeatureBank bank_for(const ExperimentConfig& c) {
    return build_feature_bank(c.distribution.k, c.distribution.d, c.seed, c.canonical_bank);
}

void cmd_generate(const ExperimentConfig& c, const std::string& out_path) {
    c.validate();
    const auto parent = fs::path(out_path).parent_path();
    if (!parent.empty()) ensure_dir(parent.string());
    Dataset ds = sample_dataset(c.distribution, bank_for(c), c.counts, c.seed);
    ds.canonical_bank = c.canonical_bank;
    save_dataset(ds, out_path);
    log_message(LogLevel::Info, "wrote dataset " + out_path);
}

RunSummary cmd_train(const ExperimentConfig& c, const std::string& dataset_path, const std::string& out_dir) {
    c.validate();
    const Dataset ds = load_dataset(dataset_path);
    if (ds.params.k != c.distribution.k || ds.params.d != c.distribution.d)
        throw ConfigError("train: dataset (k=" + std::to_string(ds.params.k) + ", d=" + std::to_string(ds.params.d) +
                          ") does not match config (k=" + std::to_string(c.distribution.k) +
                          ", d=" + std::to_string(c.distribution.d) + ")");
    ensure_dir(out_dir);

    const auto start = std::chrono::steady_clock::now();
    const ModelParams init = init_params(c.distribution.k, c.network.m, c.distribution.d, c.activation(), c.sigma0(),
                                         c.seed);
    TrainConfig tc = c.train;
    tc.seed = c.seed;
    tc.thresholds = c.resolved_thresholds();
    log_message(LogLevel::Info, "training " + to_string(tc.regime) + " for " + std::to_string(tc.T1 + tc.T2) +
                                    " iterations");
    const TrainResult res = train_run(tc, init, ds, [&](long t, const ModelParams&, const TimelineRow& r) {
        char buf[200];
        std::snprintf(buf, sizeof buf, "iter %ld loss_s=%.4g loss_u=%.4g acc_multi=%.3f acc_single=%.3f phi_min=%.3g",
                      t, r.loss_s, r.loss_u, r.acc_test_multi, r.acc_test_single, r.phi_min);
        log_message(LogLevel::Debug, buf);
        return true;
    });

    RunSummary s;
    s.config_hash = config_hash(c);
    s.regime = to_string(tc.regime);
    s.schedule = to_string(tc.schedule.kind);
    auto multi = sample_many(ds.params, ds.bank, View::Multi, c.eval.n, derive_seed(c.seed, 0xe7a1u, 1),
                             Partition::Test);
    auto single = sample_many(ds.params, ds.bank, View::Single, c.eval.n, derive_seed(c.seed, 0xe7a1u, 2),
                              Partition::Test, true);
    multi.insert(multi.end(), std::make_move_iterator(single.begin()), std::make_move_iterator(single.end()));
    s.eval = evaluate(res.params, multi);
    s.phase = res.phase;
    s.pseudo_label_tau = c.eval.tau;
    const auto unl = ds.unlabeled();
    if (!unl.empty()) s.pseudo_labels = pseudo_label_audit(res.params, unl, c.eval.tau);
    const Mat phi = compute_phi(res.params, ds.bank).phi;
    const Thresholds th = *tc.thresholds;
    s.clean_lottery = clean_lottery_fraction(phi, th);
    s.both_learned = both_learned_fraction(phi, th);
    s.first_min_phi_crossing = res.first_min_phi_crossing;
    s.iterations = res.iterations;
    s.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    const fs::path dir(out_dir);
    s.artifacts = {{"timeline", (dir / "timeline.csv").string()},
                   {"phi", (dir / "phi.jsonl").string()},
                   {"checkpoint", (dir / "model.ckpt").string()},
                   {"summary", (dir / "summary.json").string()},
                   {"config", (dir / "config.json").string()}};
    {
        auto out = open_out(s.artifacts["timeline"]);
        res.timeline.write_csv(out);
    }
    {
        auto out = open_out(s.artifacts["phi"]);
        res.timeline.write_phi_jsonl(out);
    }
    save_checkpoint(res.params, res.iterations, s.artifacts["checkpoint"]);
    {
        auto out = open_out(s.artifacts["config"]);
        out << config_to_json(c).dump(2) << "\n";
    }
    {
        // Wall clock and absolute paths are excluded so that repeated runs write identical files.
        json j = to_json(s);
        j.erase("wall_seconds");
        for (auto& [name, path] : j["artifacts"].items()) path = fs::path(path.get<std::string>()).filename().string();
        auto out = open_out(s.artifacts["summary"]);
        out << j.dump(2) << "\n";
    }
    return s;
}

EvalReport cmd_eval(const std::string& checkpoint, const EvalSource& src, int n, std::uint64_t seed,
                    const std::string& out_path) {
    if (n <= 0) throw ConfigError("eval: empty evaluation set (n must be > 0)");
    const auto [params, iter] = load_checkpoint(checkpoint);
    (void)iter;

    DistributionParams dist;
    FeatureBank bank;
    std::optional<Dataset> ds;
    if (src.dataset_path) {
        ds = load_dataset(*src.dataset_path);
        dist = ds->params;
        bank = ds->bank;
    } else if (src.config) {
        src.config->validate();
        dist = src.config->distribution;
        bank = bank_for(*src.config);
    } else {
        throw ConfigError("eval: need a dataset or a config");
    }
    if (params.k != bank.k() || params.d != bank.d())
        throw ConfigError("eval: checkpoint (k=" + std::to_string(params.k) + ", d=" + std::to_string(params.d) +
                          ") does not match the feature bank (k=" + std::to_string(bank.k()) +
                          ", d=" + std::to_string(bank.d()) + ")");

    EvalReport r;
    if (src.fixed) {
        if (!ds) throw ConfigError("eval: fixed-set evaluation needs a dataset");
        auto all = ds->labeled();
        const auto unl = ds->unlabeled();
        all.insert(all.end(), unl.begin(), unl.end());
        if (all.empty()) throw ConfigError("eval: dataset has no samples");
        if (static_cast<int>(all.size()) > n) all.resize(n);
        r = evaluate(params, all);
    } else {
        auto multi = sample_many(dist, bank, View::Multi, n, derive_seed(seed, 0xe7a1u, 1), Partition::Test);
        auto single = sample_many(dist, bank, View::Single, n, derive_seed(seed, 0xe7a1u, 2), Partition::Test, true);
        multi.insert(multi.end(), std::make_move_iterator(single.begin()), std::make_move_iterator(single.end()));
        r = evaluate(params, multi);
    }
    if (!out_path.empty()) {
        auto out = open_out(out_path);
        out << to_json(r).dump(2) << "\n";
    }
    return r;
}

std::vector<SweepCell> expand_sweep(const ExperimentConfig& c) {
    std::size_t total = 1;
    for (const auto& [name, values] : c.sweep.axes) {
        total *= values.size();
        if (total > static_cast<std::size_t>(c.sweep.max_cells))
            throw ConfigError("sweep: grid exceeds max_cells=" + std::to_string(c.sweep.max_cells));
    }
    std::vector<SweepCell> cells;
    cells.reserve(total);
    for (std::size_t idx = 0; idx < total; ++idx) {
        SweepCell cell;
        cell.index = static_cast<int>(idx);
        cell.config = c;
        cell.config.sweep = {};
        std::size_t rem = idx;
        // Last axis varies fastest.
        std::vector<std::pair<std::string, nlohmann::json>> picks;
        for (auto it = c.sweep.axes.rbegin(); it != c.sweep.axes.rend(); ++it) {
            picks.emplace_back(it->first, it->second[rem % it->second.size()]);
            rem /= it->second.size();
        }
        std::reverse(picks.begin(), picks.end());
        ExperimentConfig& cc = cell.config;
        auto number = [](const std::string& name, const json& v) {
            if (!v.is_number()) throw ConfigError("config: sweep." + name + ": expected numbers");
            return v.get<double>();
        };
        for (const auto& [name, v] : picks) {
            cell.values[name] = v;
            if (name == "eta") {
                cc.train.eta = number(name, v);
            } else if (name == "tau") {
                cc.train.schedule.tau = number(name, v);
            } else if (name == "pi1") {
                cc.train.aug.pi1 = number(name, v);
            } else if (name == "pi2") {
                cc.train.aug.pi2 = number(name, v);
            } else if (name == "seed") {
                cc.seed = static_cast<std::uint64_t>(number(name, v));
            } else if (name == "regime") {
                if (!v.is_string()) throw ConfigError("config: sweep.regime: expected strings");
                cc.train.regime = parse_regime(v.get<std::string>());
            } else if (name == "schedule") {
                if (!v.is_string()) throw ConfigError("config: sweep.schedule: expected strings");
                cc.train.schedule.kind = parse_schedule(v.get<std::string>());
                cc.train.schedule.reset(cc.distribution.k);
            }
        }
        // N_u last: the "N_c" keyword depends on the (possibly swept) pi1 and pi2.
        for (const auto& [name, v] : picks) {
            if (name != "N_u") continue;
            const long base = static_cast<long>(c.counts.unlabeled_multi) + c.counts.unlabeled_single;
            long nu = 0;
            if (v.is_string() && v.get<std::string>() == "N_c") {
                const double p1 = cc.train.aug.pi1, p2 = cc.train.aug.pi2;
                nu = std::lround(std::max(p1 * p2, (1.0 - p1) * p2) * base);
            } else if (v.is_string() && v.get<std::string>() == "N_u") {
                nu = base;
            } else {
                nu = static_cast<long>(number(name, v));
            }
            if (nu < 0) throw ConfigError("config: sweep.N_u: must be >= 0");
            cc.counts.unlabeled_single = static_cast<int>(std::lround(nu * cc.distribution.mu));
            cc.counts.unlabeled_multi = static_cast<int>(nu) - cc.counts.unlabeled_single;
        }
        cc.validate();
        cells.push_back(std::move(cell));
    }
    return cells;
}

std::vector<SweepRow> cmd_sweep(const ExperimentConfig& c, const std::string& out_dir, int jobs) {
    c.validate();
    auto cells = expand_sweep(c);
    ensure_dir(out_dir);
    std::vector<SweepRow> rows(cells.size());
    std::vector<std::exception_ptr> errors(cells.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) {
            try {
                char name[32];
                std::snprintf(name, sizeof name, "cell_%03d", cells[i].index);
                const std::string dir = (fs::path(out_dir) / name).string();
                ensure_dir(dir);
                const std::string data = (fs::path(dir) / "dataset.bin").string();
                cmd_generate(cells[i].config, data);
                rows[i].cell = cells[i];
                rows[i].summary = cmd_train(cells[i].config, data, dir);
                log_message(LogLevel::Info, std::string("finished ") + name);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const int n_threads = std::max(1, std::min<int>(jobs, static_cast<int>(cells.size())));
    std::vector<std::thread> pool;
    for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);

    auto out = open_out((fs::path(out_dir) / "sweep.csv").string());
    out << "cell";
    for (const auto& [name, values] : c.sweep.axes) out << "," << name;
    out << ",config_hash,multi_view_accuracy,single_view_accuracy,margin_median,clean_lottery_fraction,"
           "both_learned_fraction,phase1_complete_at,phase2_complete_at,first_min_phi_crossing,"
           "pseudo_label_correct_fraction\n";
    auto opt = [](const std::optional<long>& v) { return v ? std::to_string(*v) : std::string(); };
    for (const auto& r : rows) {
        out << r.cell.index;
        for (const auto& [name, v] : r.cell.values) out << "," << (v.is_string() ? v.get<std::string>() : v.dump());
        const auto& s = r.summary;
        char buf[256];
        std::snprintf(buf, sizeof buf, ",%s,%.6f,%.6f,%.6f,%.6f,%.6f,", s.config_hash.c_str(),
                      s.eval.multi_view_accuracy, s.eval.single_view_accuracy, s.eval.margin_median, s.clean_lottery,
                      s.both_learned);
        out << buf << opt(s.phase.phase1_complete_at) << "," << opt(s.phase.phase2_complete_at) << ","
            << opt(s.first_min_phi_crossing) << ",";
        std::snprintf(buf, sizeof buf, "%.6f\n", s.pseudo_labels.correct_fraction());
        out << buf;
    }
    return rows;
}

}  // namespace mvssl
