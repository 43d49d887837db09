#include "mvssl/container.hpp"
#include "mvssl/expcli.hpp"

#include <toml.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace mvssl {

namespace {

using nlohmann::json;

[[noreturn]] void field_error(const std::string& path, const std::string& what) {
    throw ConfigError("config: " + path + ": " + what);
}

void reject_unknown(const json& j, const std::string& path, const std::set<std::string>& known) {
    if (!j.is_object()) field_error(path, "expected a table");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key())) field_error(path.empty() ? it.key() : path + "." + it.key(), "unknown key");
}

template <typename T>
void read(const json& j, const std::string& key, const std::string& path, T& out) {
    if (!j.contains(key)) return;
    const json& v = j.at(key);
    const std::string where = path.empty() ? key : path + "." + key;
    try {
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) field_error(where, "expected a boolean");
            out = v.get<bool>();
        } else if constexpr (std::is_integral_v<T>) {
            if (!v.is_number()) field_error(where, "expected an integer");
            const double d = v.get<double>();
            if (std::floor(d) != d) field_error(where, "expected an integer");
            out = static_cast<T>(d);
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) field_error(where, "expected a number");
            out = v.get<double>();
        } else {
            if (!v.is_string()) field_error(where, "expected a string");
            out = v.get<std::string>();
        }
    } catch (const json::exception& e) {
        field_error(where, e.what());
    }
}

json sub(const json& j, const std::string& key) {
    if (!j.contains(key)) return json::object();
    return j.at(key);
}

AugMode parse_aug_mode(const std::string& s) {
    if (s == "Modeled") return AugMode::Modeled;
    if (s == "Identity") return AugMode::Identity;
    if (s == "SemanticOracle") return AugMode::SemanticOracle;
    if (s == "SemanticAttention") return AugMode::SemanticAttention;
    throw ConfigError("config: train.aug.mode: unknown mode '" + s + "'");
}

std::string aug_mode_name(AugMode m) {
    switch (m) {
    case AugMode::Modeled: return "Modeled";
    case AugMode::Identity: return "Identity";
    case AugMode::SemanticOracle: return "SemanticOracle";
    case AugMode::SemanticAttention: return "SemanticAttention";
    }
    return "?";
}

const std::set<std::string> kAxes = {"eta", "tau", "pi1", "pi2", "N_u", "regime", "seed", "schedule"};

}  // namespace

ActivationParams ExperimentConfig::activation() const {
    ActivationParams a;
    a.q = network.q;
    a.varrho = network.varrho.value_or(default_varrho(distribution.k));
    return a;
}

double ExperimentConfig::sigma0() const {
    return network.sigma0.value_or(default_sigma0(distribution.k, network.q));
}

Thresholds ExperimentConfig::resolved_thresholds() const {
    return thresholds.value_or(default_thresholds(distribution.k, network.m, sigma0()));
}

void ExperimentConfig::validate() const {
    distribution.validate();
    if (counts.labeled_multi < 0 || counts.labeled_single < 0 || counts.unlabeled_multi < 0 ||
        counts.unlabeled_single < 0)
        field_error("counts", "sample counts must be >= 0");
    if (network.m < 1) field_error("network.m", "must be >= 1");
    try {
        activation().validate();
    } catch (const ConfigError& e) {
        field_error("network", e.what());
    }
    if (!(sigma0() > 0.0)) field_error("network.sigma0", "must be > 0");
    try {
        train.validate();
    } catch (const ConfigError& e) {
        field_error("train", e.what());
    }
    const Thresholds th = resolved_thresholds();
    if (!(th.c_lo > 0.0 && th.c_hi > th.c_lo)) field_error("thresholds", "need 0 < c_lo < c_hi");
    if (eval.n < 1) field_error("eval.n", "must be >= 1");
    if (!(eval.tau > 0.0 && eval.tau <= 1.0)) field_error("eval.tau", "must lie in (0,1]");
    if (sweep.max_cells < 1) field_error("sweep.max_cells", "must be >= 1");
    for (const auto& [name, values] : sweep.axes) {
        if (!kAxes.count(name)) field_error("sweep." + name, "not a sweepable axis");
        if (values.empty()) field_error("sweep." + name, "axis has no values");
    }
}

ExperimentConfig config_from_json(const json& j) {
    reject_unknown(j, "", {"seed", "out_dir", "canonical_bank", "distribution", "counts", "network", "train",
                           "thresholds", "eval", "sweep"});
    ExperimentConfig c;
    read(j, "seed", "", c.seed);
    read(j, "out_dir", "", c.out_dir);
    read(j, "canonical_bank", "", c.canonical_bank);

    const json jd = sub(j, "distribution");
    reject_unknown(jd, "distribution", {"k", "d", "P", "s_rate", "C_p", "gamma", "sigma_p", "mu", "rho", "Gamma_sv",
                                        "z_main_hi", "z_noise_lo", "z_noise_hi", "q_moment"});
    int k = 16, d = 256, P = 64;
    read(jd, "k", "distribution", k);
    read(jd, "d", "distribution", d);
    read(jd, "P", "distribution", P);
    if (k < 2) field_error("distribution.k", "must be >= 2");
    if (d < 1) field_error("distribution.d", "must be >= 1");
    DistributionParams& dp = c.distribution;
    dp = DistributionParams::defaults(k, d, P);
    read(jd, "s_rate", "distribution", dp.s_rate);
    read(jd, "C_p", "distribution", dp.C_p);
    read(jd, "gamma", "distribution", dp.gamma);
    read(jd, "sigma_p", "distribution", dp.sigma_p);
    read(jd, "mu", "distribution", dp.mu);
    read(jd, "rho", "distribution", dp.rho);
    read(jd, "Gamma_sv", "distribution", dp.Gamma_sv);
    read(jd, "z_main_hi", "distribution", dp.z_main_hi);
    read(jd, "z_noise_lo", "distribution", dp.z_noise_lo);
    read(jd, "z_noise_hi", "distribution", dp.z_noise_hi);
    read(jd, "q_moment", "distribution", dp.q_moment);

    // Default counts: N_l = 4k and N_u = 64k, each split by mu.
    const json jc = sub(j, "counts");
    reject_unknown(jc, "counts", {"N_l", "N_u", "labeled_multi", "labeled_single", "unlabeled_multi",
                                  "unlabeled_single"});
    long nl = 4L * k, nu = 64L * k;
    read(jc, "N_l", "counts", nl);
    read(jc, "N_u", "counts", nu);
    c.counts.labeled_single = static_cast<int>(std::lround(nl * dp.mu));
    c.counts.labeled_multi = static_cast<int>(nl) - c.counts.labeled_single;
    c.counts.unlabeled_single = static_cast<int>(std::lround(nu * dp.mu));
    c.counts.unlabeled_multi = static_cast<int>(nu) - c.counts.unlabeled_single;
    read(jc, "labeled_multi", "counts", c.counts.labeled_multi);
    read(jc, "labeled_single", "counts", c.counts.labeled_single);
    read(jc, "unlabeled_multi", "counts", c.counts.unlabeled_multi);
    read(jc, "unlabeled_single", "counts", c.counts.unlabeled_single);

    const json jn = sub(j, "network");
    reject_unknown(jn, "network", {"m", "q", "varrho", "sigma0"});
    read(jn, "m", "network", c.network.m);
    read(jn, "q", "network", c.network.q);
    if (jn.contains("varrho")) {
        double v = 0.0;
        read(jn, "varrho", "network", v);
        c.network.varrho = v;
    }
    if (jn.contains("sigma0")) {
        double v = 0.0;
        read(jn, "sigma0", "network", v);
        c.network.sigma0 = v;
    }

    const json jt = sub(j, "train");
    reject_unknown(jt, "train", {"regime", "eta", "lambda", "T1", "T2", "eval_every", "n_test_multi",
                                 "n_test_single", "attention_online", "audit_descent", "schedule", "aug", "batch"});
    TrainConfig& t = c.train;
    std::string regime = to_string(t.regime);
    read(jt, "regime", "train", regime);
    try {
        t.regime = parse_regime(regime);
    } catch (const ConfigError& e) {
        field_error("train.regime", e.what());
    }
    read(jt, "eta", "train", t.eta);
    read(jt, "lambda", "train", t.lambda);
    read(jt, "T1", "train", t.T1);
    read(jt, "T2", "train", t.T2);
    read(jt, "eval_every", "train", t.eval_every);
    read(jt, "n_test_multi", "train", t.n_test_multi);
    read(jt, "n_test_single", "train", t.n_test_single);
    read(jt, "attention_online", "train", t.attention_online);
    read(jt, "audit_descent", "train", t.audit_descent);

    const json js = sub(jt, "schedule");
    reject_unknown(js, "train.schedule", {"kind", "tau", "ema", "warmup", "sigma_w", "tau_init", "rho0", "decay"});
    std::string kind = "Constant";
    read(js, "kind", "train.schedule", kind);
    ScheduleKind sk{};
    try {
        sk = parse_schedule(kind);
    } catch (const ConfigError& e) {
        field_error("train.schedule.kind", e.what());
    }
    ThresholdSchedule s;
    s.kind = sk;
    read(js, "tau", "train.schedule", s.tau);
    read(js, "ema", "train.schedule", s.ema);
    read(js, "warmup", "train.schedule", s.warmup);
    read(js, "sigma_w", "train.schedule", s.sigma_w);
    read(js, "tau_init", "train.schedule", s.tau_init);
    read(js, "rho0", "train.schedule", s.rho0);
    read(js, "decay", "train.schedule", s.decay);
    s.rho_t = s.rho0;
    if (sk == ScheduleKind::FlexMatch) s.beta.assign(k, 1.0);
    t.schedule = s;

    const json ja = sub(jt, "aug");
    reject_unknown(ja, "train.aug", {"mode", "pi1", "pi2"});
    std::string mode = "Modeled";
    read(ja, "mode", "train.aug", mode);
    t.aug.mode = parse_aug_mode(mode);
    t.aug.pi1 = 0.5;
    t.aug.pi2 = 0.3;
    read(ja, "pi1", "train.aug", t.aug.pi1);
    read(ja, "pi2", "train.aug", t.aug.pi2);

    const json jb = sub(jt, "batch");
    reject_unknown(jb, "train.batch", {"full_batch", "B", "mu_ratio"});
    read(jb, "full_batch", "train.batch", t.batch.full_batch);
    read(jb, "B", "train.batch", t.batch.B);
    read(jb, "mu_ratio", "train.batch", t.batch.mu_ratio);

    if (j.contains("thresholds")) {
        const json jh = j.at("thresholds");
        reject_unknown(jh, "thresholds", {"c_hi", "c_lo"});
        Thresholds th = default_thresholds(k, c.network.m, c.sigma0());
        read(jh, "c_hi", "thresholds", th.c_hi);
        read(jh, "c_lo", "thresholds", th.c_lo);
        c.thresholds = th;
    }

    const json je = sub(j, "eval");
    reject_unknown(je, "eval", {"n", "tau"});
    read(je, "n", "eval", c.eval.n);
    read(je, "tau", "eval", c.eval.tau);

    const json jw = sub(j, "sweep");
    if (!jw.is_object()) field_error("sweep", "expected a table");
    for (auto it = jw.begin(); it != jw.end(); ++it) {
        if (it.key() == "max_cells") {
            read(jw, "max_cells", "sweep", c.sweep.max_cells);
            continue;
        }
        if (!kAxes.count(it.key())) field_error("sweep." + it.key(), "not a sweepable axis");
        if (!it->is_array()) field_error("sweep." + it.key(), "expected an array of values");
        c.sweep.axes[it.key()] = it->get<std::vector<json>>();
    }
    return c;
}

json config_to_json(const ExperimentConfig& c) {
    const TrainConfig& t = c.train;
    const Thresholds th = c.resolved_thresholds();
    json sweep = json::object();
    sweep["max_cells"] = c.sweep.max_cells;
    for (const auto& [name, values] : c.sweep.axes) sweep[name] = values;
    return json{
        {"seed", c.seed},
        {"out_dir", c.out_dir},
        {"canonical_bank", c.canonical_bank},
        {"distribution", c.distribution},
        {"counts", c.counts},
        {"network",
         {{"m", c.network.m}, {"q", c.network.q}, {"varrho", c.activation().varrho}, {"sigma0", c.sigma0()}}},
        {"train",
         {{"regime", to_string(t.regime)},
          {"eta", t.eta},
          {"lambda", t.lambda},
          {"T1", t.T1},
          {"T2", t.T2},
          {"eval_every", t.eval_every},
          {"n_test_multi", t.n_test_multi},
          {"n_test_single", t.n_test_single},
          {"attention_online", t.attention_online},
          {"audit_descent", t.audit_descent},
          {"schedule",
           {{"kind", to_string(t.schedule.kind)},
            {"tau", t.schedule.tau},
            {"ema", t.schedule.ema},
            {"warmup", t.schedule.warmup},
            {"sigma_w", t.schedule.sigma_w},
            {"tau_init", t.schedule.tau_init},
            {"rho0", t.schedule.rho0},
            {"decay", t.schedule.decay}}},
          {"aug", {{"mode", aug_mode_name(t.aug.mode)}, {"pi1", t.aug.pi1}, {"pi2", t.aug.pi2}}},
          {"batch", {{"full_batch", t.batch.full_batch}, {"B", t.batch.B}, {"mu_ratio", t.batch.mu_ratio}}}}},
        {"thresholds", {{"c_hi", th.c_hi}, {"c_lo", th.c_lo}}},
        {"eval", {{"n", c.eval.n}, {"tau", c.eval.tau}}},
        {"sweep", sweep}};
}

ExperimentConfig parse_config(const std::string& text, ConfigFormat fmt) {
    json j;
    if (fmt == ConfigFormat::Json) {
        try {
            j = json::parse(text);
        } catch (const json::parse_error& e) {
            throw ConfigError(std::string("config: JSON parse error: ") + e.what());
        }
    } else {
        try {
            const toml::table tbl = toml::parse(text);
            std::ostringstream os;
            os << toml::json_formatter{tbl};
            j = json::parse(os.str());
        } catch (const toml::parse_error& e) {
            std::ostringstream msg;
            msg << "config: TOML parse error at line " << e.source().begin.line << ": " << e.description();
            throw ConfigError(msg.str());
        }
    }
    ExperimentConfig c = config_from_json(j);
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("config: cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    const bool is_json = path.size() >= 5 && path.substr(path.size() - 5) == ".json";
    return parse_config(ss.str(), is_json ? ConfigFormat::Json : ConfigFormat::Toml);
}

std::string config_hash(const ExperimentConfig& c) {
    const std::string s = config_to_json(c).dump();
    char buf[9];
    std::snprintf(buf, sizeof buf, "%08x", crc32_of(s.data(), s.size()));
    return buf;
}

}  // namespace mvssl
