#pragma once

#include "mvssl/datagen.hpp"
#include "mvssl/diagnostics.hpp"
#include "mvssl/netcore.hpp"
#include "mvssl/trainers.hpp"

#include <json.hpp>

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mvssl {

enum class LogLevel { Error = 0, Warn = 1, Info = 2, Debug = 3 };

// Read once from MVSSL_LOG (error|warn|info|debug); info when unset.
LogLevel log_level();
void log_message(LogLevel level, const std::string& msg);

struct NetworkConfig {
    int m = 6;
    int q = 3;
    std::optional<double> varrho;  // default_varrho(k) when absent
    std::optional<double> sigma0;  // default_sigma0(k, q) when absent
};

struct EvalConfig {
    int n = 2000;        // fresh draws per view for the final report
    double tau = 0.95;   // pseudo-label audit threshold
};

struct SweepSpec {
    // Axis name to values; the grid is the cartesian product in key order.
    std::map<std::string, std::vector<nlohmann::json>> axes;
    int max_cells = 64;
};

struct ExperimentConfig {
    DistributionParams distribution = DistributionParams::defaults();
    Counts counts;
    NetworkConfig network;
    TrainConfig train;
    std::optional<Thresholds> thresholds;
    EvalConfig eval;
    SweepSpec sweep;
    std::string out_dir = "out";
    std::uint64_t seed = 1;
    bool canonical_bank = false;

    ActivationParams activation() const;
    double sigma0() const;
    Thresholds resolved_thresholds() const;
    // Throws ConfigError naming the offending field.
    void validate() const;
};

enum class ConfigFormat { Toml, Json };

// Missing keys take defaults; distribution defaults follow from k, d and P.
ExperimentConfig config_from_json(const nlohmann::json& j);
// Fully resolved form: every default is written out.
nlohmann::json config_to_json(const ExperimentConfig& c);
ExperimentConfig parse_config(const std::string& text, ConfigFormat fmt);
// Format chosen by extension (.json, else TOML).
ExperimentConfig load_config(const std::string& path);
// CRC32 of the resolved JSON dump, as 8 hex digits.
std::string config_hash(const ExperimentConfig& c);

struct RunSummary {
    std::string config_hash;
    std::string regime;
    std::string schedule;
    EvalReport eval;
    PhaseReport phase;
    PseudoLabelAudit pseudo_labels;
    double pseudo_label_tau = 0.95;
    double clean_lottery = 0.0;
    double both_learned = 0.0;
    std::optional<long> first_min_phi_crossing;
    long iterations = 0;
    double wall_seconds = 0.0;
    std::map<std::string, std::string> artifacts;
};

nlohmann::json to_json(const RunSummary& s);
nlohmann::json to_json(const PseudoLabelAudit& a);
void print_summary(const RunSummary& s, std::ostream& out);

FeatureBank bank_for(const ExperimentConfig& c);
void cmd_generate(const ExperimentConfig& c, const std::string& out_path);
// Artifacts land in out_dir: summary.json, timeline.csv, phi.jsonl, model.ckpt.
RunSummary cmd_train(const ExperimentConfig& c, const std::string& dataset_path, const std::string& out_dir);

struct EvalSource {
    std::optional<std::string> dataset_path;      // bank and distribution from a dataset file
    std::optional<ExperimentConfig> config;       // or from a config
    bool fixed = false;                           // evaluate the dataset's own samples
};

// Writes the report as JSON to out_path when non-empty.
EvalReport cmd_eval(const std::string& checkpoint, const EvalSource& src, int n, std::uint64_t seed,
                    const std::string& out_path = "");

struct SweepCell {
    int index = 0;
    std::map<std::string, nlohmann::json> values;
    ExperimentConfig config;
};

std::vector<SweepCell> expand_sweep(const ExperimentConfig& c);

struct SweepRow {
    SweepCell cell;
    RunSummary summary;
};

// Cells run on up to `jobs` threads; each owns out_dir/cell_NNN. Writes out_dir/sweep.csv.
std::vector<SweepRow> cmd_sweep(const ExperimentConfig& c, const std::string& out_dir, int jobs);

struct PlotSeries {
    std::string label;
    MetricsTimeline timeline;
};

// Writes <prefix>_phi.svg, <prefix>_accuracy.svg and <prefix>_tau.svg; returns the paths.
std::vector<std::string> cmd_plot(const std::vector<std::string>& csv_paths, const std::string& out_prefix,
                                  std::optional<Thresholds> guides = std::nullopt);

}  // namespace mvssl
