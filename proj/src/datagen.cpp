#include "mvssl/datagen.hpp"

#include "mvssl/container.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace mvssl {

namespace {

double ln2k(int k) {
    const double l = std::log(static_cast<double>(k));
    return l * l;
}

}  // namespace

DistributionParams DistributionParams::defaults(int k, int d, int P) {
    DistributionParams p;
    p.k = k;
    p.d = d;
    p.P = P;
    const double polylog = k > 1 ? ln2k(k) : 1.0;
    p.s_rate = std::clamp(polylog / k, 0.0, 1.0);
    p.C_p = 2;
    p.gamma = 1e-4;
    p.sigma_p = 1.0 / (std::sqrt(static_cast<double>(d)) * polylog);
    p.mu = 0.05;
    p.rho = std::pow(static_cast<double>(k), -0.01);
    p.Gamma_sv = 1.0 / polylog;
    return p;
}

void DistributionParams::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("distribution: " + msg); };
    if (k < 1) fail("k must be >= 1");
    if (d < 2 * k) fail("d >= 2k is required for 2k orthonormal features (d=" + std::to_string(d) +
                        ", 2k=" + std::to_string(2 * k) + ")");
    if (C_p < 1) fail("C_p must be >= 1");
    if (!(s_rate >= 0.0 && s_rate <= 1.0)) fail("s_rate must lie in [0,1]");
    const double expected = (2.0 + s_rate * (2.0 * k - 2.0)) * C_p;
    if (P < expected)
        fail("P >= (2 + expected noisy features) * C_p is required (P=" + std::to_string(P) +
             ", needed " + std::to_string(expected) + ")");
    if (!(mu >= 0.0 && mu <= 1.0)) fail("mu must lie in [0,1]");
    if (!(rho > 0.0 && rho < 1.0)) fail("rho must lie in (0,1)");
    if (!(gamma >= 0.0)) fail("gamma must be >= 0");
    if (!(sigma_p >= 0.0)) fail("sigma_p must be >= 0");
    if (!(Gamma_sv > 0.0)) fail("Gamma_sv must be > 0");
    if (!(z_main_hi >= 1.0)) fail("z_main_hi must be >= 1");
    if (!(z_noise_hi <= 0.4)) fail("z_noise_hi must be <= 0.4");
    if (!(z_noise_lo > 0.0 && z_noise_lo <= z_noise_hi)) fail("z_noise_lo must lie in (0, z_noise_hi]");
    if (q_moment < 1) fail("q_moment must be >= 1");
}

double DistributionParams::pure_noise_std() const {
    return gamma * k / std::sqrt(static_cast<double>(d));
}

void to_json(nlohmann::json& j, const DistributionParams& p) {
    j = nlohmann::json{{"k", p.k},
                       {"d", p.d},
                       {"P", p.P},
                       {"s_rate", p.s_rate},
                       {"C_p", p.C_p},
                       {"gamma", p.gamma},
                       {"sigma_p", p.sigma_p},
                       {"mu", p.mu},
                       {"rho", p.rho},
                       {"Gamma_sv", p.Gamma_sv},
                       {"z_main_hi", p.z_main_hi},
                       {"z_noise_lo", p.z_noise_lo},
                       {"z_noise_hi", p.z_noise_hi},
                       {"q_moment", p.q_moment}};
}

void from_json(const nlohmann::json& j, DistributionParams& p) {
    j.at("k").get_to(p.k);
    j.at("d").get_to(p.d);
    j.at("P").get_to(p.P);
    j.at("s_rate").get_to(p.s_rate);
    j.at("C_p").get_to(p.C_p);
    j.at("gamma").get_to(p.gamma);
    j.at("sigma_p").get_to(p.sigma_p);
    j.at("mu").get_to(p.mu);
    j.at("rho").get_to(p.rho);
    j.at("Gamma_sv").get_to(p.Gamma_sv);
    j.at("z_main_hi").get_to(p.z_main_hi);
    j.at("z_noise_lo").get_to(p.z_noise_lo);
    j.at("z_noise_hi").get_to(p.z_noise_hi);
    j.at("q_moment").get_to(p.q_moment);
}

void to_json(nlohmann::json& j, const Counts& c) {
    j = nlohmann::json{{"labeled_multi", c.labeled_multi},
                       {"labeled_single", c.labeled_single},
                       {"unlabeled_multi", c.unlabeled_multi},
                       {"unlabeled_single", c.unlabeled_single}};
}

void from_json(const nlohmann::json& j, Counts& c) {
    j.at("labeled_multi").get_to(c.labeled_multi);
    j.at("labeled_single").get_to(c.labeled_single);
    j.at("unlabeled_multi").get_to(c.unlabeled_multi);
    j.at("unlabeled_single").get_to(c.unlabeled_single);
}

FeatureBank::FeatureBank(int k, Mat vectors) : k_(k), vectors_(std::move(vectors)) {
    if (vectors_.rows() != 2 * k) throw ConfigError("feature bank needs 2k rows");
}

FeatureBank build_feature_bank(int k, int d, std::uint64_t seed, bool canonical) {
    if (d < 2 * k)
        throw ConfigError("feature bank: d >= 2k is required (d=" + std::to_string(d) + ", 2k=" +
                          std::to_string(2 * k) + ")");
    const int n = 2 * k;
    if (canonical) return FeatureBank(k, Mat::Identity(n, d));

    Rng rng(derive_seed(seed, 0xfeedu));
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::MatrixXd a(d, n);
    for (int c = 0; c < n; ++c)
        for (int r = 0; r < d; ++r) a(r, c) = g(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, n);
    Mat v = q.transpose();
    for (int f = 0; f < n; ++f) v.row(f).normalize();
    return FeatureBank(k, std::move(v));
}

int Sample::find_feature(int f) const {
    auto it = std::find(features.begin(), features.end(), f);
    return it == features.end() ? -1 : static_cast<int>(it - features.begin());
}

double Sample::mass(int f) const {
    const int idx = find_feature(f);
    if (idx < 0) return 0.0;
    return std::accumulate(coeffs[idx].begin(), coeffs[idx].end(), 0.0);
}

std::vector<int> Sample::patch_owner() const {
    std::vector<int> owner(P(), -1);
    for (std::size_t j = 0; j < features.size(); ++j)
        for (int p : blocks[j]) owner[p] = features[j];
    return owner;
}

std::pair<double, double> mass_interval(MassKind kind, const DistributionParams& params) {
    switch (kind) {
    case MassKind::MainMulti:
    case MassKind::MainSingle:
        return {1.0, params.z_main_hi};
    case MassKind::NoisyMulti:
        return {params.z_noise_lo, params.z_noise_hi};
    case MassKind::MinorSingle:
        return {params.rho, 2.0 * params.rho};
    case MassKind::NoisySingle:
        return {0.5 * params.Gamma_sv, params.Gamma_sv};
    }
    return {0.0, 0.0};
}

std::vector<double> draw_feature_mass(MassKind kind, int C_p, const DistributionParams& params, Rng& rng) {
    const auto [lo, hi] = mass_interval(kind, params);
    const double total = uniform(rng, lo, hi);
    std::vector<double> z(C_p, 0.0);
    if (C_p == 1) {
        z[0] = total;
        return z;
    }
    // One dominant patch keeps the q-th moment of the block near the sum.
    const double u = uniform(rng, 0.8, 1.0);
    z[0] = u * total;
    std::vector<double> w(C_p - 1);
    double wsum = 0.0;
    for (auto& x : w) {
        x = uniform(rng, 0.0, 1.0);
        wsum += x;
    }
    const double rest = total - z[0];
    for (int j = 1; j < C_p; ++j) z[j] = wsum > 0.0 ? rest * w[j - 1] / wsum : rest / (C_p - 1);
    return z;
}

Sample sample_point(const DistributionParams& params, const FeatureBank& bank, std::optional<View> forced_view,
                    Rng& rng, std::optional<int> forced_slot) {
    const int k = params.k, d = params.d, P = params.P, C_p = params.C_p;
    if (bank.k() != k || bank.d() != d) throw ConfigError("feature bank does not match distribution (k, d)");

    Sample s;
    s.label = std::uniform_int_distribution<int>(0, k - 1)(rng);
    s.view = forced_view ? *forced_view : (bernoulli(rng, params.mu) ? View::Single : View::Multi);
    const int slot_draw = std::uniform_int_distribution<int>(0, 1)(rng);
    s.main_slot = s.view == View::Single ? forced_slot.value_or(slot_draw) : 0;

    s.features = {feature_id(s.label, 0), feature_id(s.label, 1)};
    for (int f = 0; f < 2 * k; ++f) {
        if (feature_class(f) == s.label) continue;
        if (bernoulli(rng, params.s_rate)) s.features.push_back(f);
    }
    const int needed = static_cast<int>(s.features.size()) * C_p;
    if (needed > P)
        throw DataError("patch assignment failed: " + std::to_string(s.features.size()) + " features x C_p=" +
                        std::to_string(C_p) + " exceed P=" + std::to_string(P));

    std::vector<int> perm(P);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);

    s.blocks.resize(s.features.size());
    s.coeffs.resize(s.features.size());
    for (std::size_t j = 0; j < s.features.size(); ++j) {
        s.blocks[j].assign(perm.begin() + static_cast<long>(j) * C_p, perm.begin() + static_cast<long>(j + 1) * C_p);
        MassKind kind;
        if (j < 2) {
            if (s.view == View::Multi)
                kind = MassKind::MainMulti;
            else
                kind = static_cast<int>(j) == s.main_slot ? MassKind::MainSingle : MassKind::MinorSingle;
        } else {
            kind = s.view == View::Multi ? MassKind::NoisyMulti : MassKind::NoisySingle;
        }
        s.coeffs[j] = draw_feature_mass(kind, C_p, params, rng);
    }

    s.patches = Mat::Zero(P, d);
    const std::vector<int> owner = s.patch_owner();
    s.noise_coeffs = Mat::Zero(P, 2 * k);
    if (params.gamma > 0.0) {
        for (int p = 0; p < P; ++p)
            for (int f = 0; f < 2 * k; ++f)
                if (f != owner[p]) s.noise_coeffs(p, f) = uniform(rng, 0.0, params.gamma);
    }

    s.patches = s.noise_coeffs * bank.vectors();
    for (std::size_t j = 0; j < s.features.size(); ++j)
        for (int c = 0; c < C_p; ++c)
            s.patches.row(s.blocks[j][c]) += s.coeffs[j][c] * bank.vectors().row(s.features[j]);

    const double pure_std = params.pure_noise_std();
    for (int p = 0; p < P; ++p) {
        const double sd = owner[p] >= 0 ? params.sigma_p : pure_std;
        if (sd <= 0.0) continue;
        std::normal_distribution<double> g(0.0, sd);
        for (int c = 0; c < d; ++c) s.patches(p, c) += g(rng);
    }
    return s;
}

Sample sample_indexed(const DistributionParams& params, const FeatureBank& bank, std::optional<View> forced_view,
                      std::uint64_t seed, Partition part, std::uint64_t index) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(part), index));
    return sample_point(params, bank, forced_view, rng);
}

std::vector<Sample> sample_many(const DistributionParams& params, const FeatureBank& bank,
                                std::optional<View> forced_view, int n, std::uint64_t seed, Partition part,
                                bool balanced_slots) {
    std::vector<Sample> out;
    out.reserve(std::max(n, 0));
    for (int i = 0; i < n; ++i) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(part), static_cast<std::uint64_t>(i)));
        std::optional<int> slot;
        if (balanced_slots) slot = i % 2;
        out.push_back(sample_point(params, bank, forced_view, rng, slot));
    }
    return out;
}

std::vector<const Sample*> Dataset::labeled() const {
    std::vector<const Sample*> out;
    for (const auto& s : labeled_multi) out.push_back(&s);
    for (const auto& s : labeled_single) out.push_back(&s);
    return out;
}

std::vector<const Sample*> Dataset::unlabeled() const {
    std::vector<const Sample*> out;
    for (const auto& s : unlabeled_multi) out.push_back(&s);
    for (const auto& s : unlabeled_single) out.push_back(&s);
    return out;
}

Dataset sample_dataset(const DistributionParams& params, const FeatureBank& bank, const Counts& counts,
                       std::uint64_t seed) {
    if (counts.labeled_multi < 0 || counts.labeled_single < 0 || counts.unlabeled_multi < 0 ||
        counts.unlabeled_single < 0)
        throw ConfigError("counts must be nonnegative");
    params.validate();
    Dataset ds;
    ds.params = params;
    ds.counts = counts;
    ds.seed = seed;
    ds.bank = bank;
    ds.labeled_multi = sample_many(params, bank, View::Multi, counts.labeled_multi, seed, Partition::LabeledMulti);
    ds.labeled_single = sample_many(params, bank, View::Single, counts.labeled_single, seed, Partition::LabeledSingle);
    ds.unlabeled_multi = sample_many(params, bank, View::Multi, counts.unlabeled_multi, seed, Partition::UnlabeledMulti);
    ds.unlabeled_single =
        sample_many(params, bank, View::Single, counts.unlabeled_single, seed, Partition::UnlabeledSingle);
    return ds;
}

namespace {

const std::string kDatasetMagic = "MVSSLDS1";

nlohmann::json sample_meta(const Sample& s) {
    return nlohmann::json{{"label", s.label},
                          {"view", s.view == View::Multi ? "multi" : "single"},
                          {"main_slot", s.main_slot},
                          {"features", s.features},
                          {"blocks", s.blocks}};
}

void append(std::vector<double>& out, const Mat& m) { out.insert(out.end(), m.data(), m.data() + m.size()); }

std::filesystem::path sidecar_path(const std::string& path) {
    std::filesystem::path p(path);
    return p.replace_extension(".meta.json");
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
    Container c;
    c.header["params"] = ds.params;
    c.header["counts"] = ds.counts;
    c.header["seed"] = ds.seed;
    c.header["canonical_bank"] = ds.canonical_bank;
    append(c.payload, ds.bank.vectors());

    nlohmann::json parts = nlohmann::json::object();
    auto emit = [&](const char* name, const std::vector<Sample>& v) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& s : v) {
            arr.push_back(sample_meta(s));
            append(c.payload, s.patches);
            for (const auto& z : s.coeffs) c.payload.insert(c.payload.end(), z.begin(), z.end());
            append(c.payload, s.noise_coeffs);
        }
        parts[name] = std::move(arr);
    };
    emit("labeled_multi", ds.labeled_multi);
    emit("labeled_single", ds.labeled_single);
    emit("unlabeled_multi", ds.unlabeled_multi);
    emit("unlabeled_single", ds.unlabeled_single);
    c.header["samples"] = std::move(parts);

    write_container(path, kDatasetMagic, kDatasetVersion, c);

    nlohmann::json meta = c.header;
    meta.erase("samples");
    meta["format"] = kDatasetMagic;
    meta["version"] = kDatasetVersion;
    meta["payload_doubles"] = c.payload.size();
    meta["crc32"] = crc32_of(c.payload.data(), c.payload.size() * sizeof(double));
    std::ofstream side(sidecar_path(path));
    if (!side) throw DataError(sidecar_path(path).string() + ": cannot open for writing");
    side << meta.dump(2) << "\n";
}

Dataset load_dataset(const std::string& path) {
    Container c = read_container(path, kDatasetMagic, kDatasetVersion);
    Dataset ds;
    try {
        ds.params = c.header.at("params").get<DistributionParams>();
        ds.counts = c.header.at("counts").get<Counts>();
        ds.seed = c.header.at("seed").get<std::uint64_t>();
        ds.canonical_bank = c.header.at("canonical_bank").get<bool>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": malformed header: " + e.what());
    }
    const int k = ds.params.k, d = ds.params.d, P = ds.params.P;
    std::size_t pos = 0;
    auto take = [&](Eigen::Index rows, Eigen::Index cols) {
        const auto n = static_cast<std::size_t>(rows * cols);
        if (pos + n > c.payload.size()) throw DataError(path + ": payload shorter than header implies");
        Mat m = Eigen::Map<const Mat>(c.payload.data() + pos, rows, cols);
        pos += n;
        return m;
    };
    ds.bank = FeatureBank(k, take(2 * k, d));

    auto read_part = [&](const char* name, std::vector<Sample>& out) {
        for (const auto& meta : c.header.at("samples").at(name)) {
            Sample s;
            s.label = meta.at("label").get<int>();
            s.view = meta.at("view").get<std::string>() == "multi" ? View::Multi : View::Single;
            s.main_slot = meta.at("main_slot").get<int>();
            s.features = meta.at("features").get<std::vector<int>>();
            s.blocks = meta.at("blocks").get<std::vector<std::vector<int>>>();
            s.patches = take(P, d);
            for (const auto& b : s.blocks) {
                Mat z = take(1, static_cast<Eigen::Index>(b.size()));
                s.coeffs.emplace_back(z.data(), z.data() + z.size());
            }
            s.noise_coeffs = take(P, 2 * k);
            out.push_back(std::move(s));
        }
    };
    try {
        read_part("labeled_multi", ds.labeled_multi);
        read_part("labeled_single", ds.labeled_single);
        read_part("unlabeled_multi", ds.unlabeled_multi);
        read_part("unlabeled_single", ds.unlabeled_single);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": malformed sample table: " + e.what());
    }
    if (pos != c.payload.size()) throw DataError(path + ": payload longer than header implies");
    return ds;
}

}  // namespace mvssl
