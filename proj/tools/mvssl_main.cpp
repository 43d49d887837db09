// Command-line front end: generate | train | eval | sweep | plot.
#include "mvssl/expcli.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace mvssl;

namespace {

enum Exit { kOk = 0, kConfig = 2, kData = 3, kDivergence = 4 };

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    int jobs = 1;
    std::string out;
};

ExperimentConfig load_with_overrides(const Globals& g) {
    if (g.config.empty()) throw ConfigError("--config is required");
    ExperimentConfig c = load_config(g.config);
    if (g.seed) c.seed = *g.seed;
    c.validate();
    return c;
}

}  // namespace

int main(int argc, char** argv) {
    tune_allocator();
    CLI::App app{"Multi-view semi-supervised learning experiments"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config, "Experiment config (TOML or .json)");
    app.add_option("--seed", g.seed, "Override the config seed");
    app.add_option("--jobs", g.jobs, "Parallel sweep cells")->check(CLI::PositiveNumber);
    app.add_option("--out", g.out, "Output path or directory");

    auto* gen = app.add_subcommand("generate", "Sample a dataset");

    auto* train = app.add_subcommand("train", "Train on a dataset");
    std::string dataset;
    train->add_option("--dataset", dataset, "Dataset file")->required();

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
    std::string checkpoint, eval_dataset;
    int n = 2000;
    bool fixed = false;
    eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    eval->add_option("--dataset", eval_dataset, "Take bank and distribution from a dataset");
    eval->add_option("-n", n, "Fresh draws per view, or cap for --fixed");
    eval->add_flag("--fixed", fixed, "Evaluate the dataset's own samples");

    auto* sweep = app.add_subcommand("sweep", "Run a parameter grid");

    auto* plot = app.add_subcommand("plot", "Render timeline CSVs to SVG");
    std::vector<std::string> csvs;
    plot->add_option("timelines", csvs, "Timeline CSV files (several overlay)")->required();
    std::optional<double> c_hi, c_lo;
    plot->add_option("--c-hi", c_hi, "Upper guide line");
    plot->add_option("--c-lo", c_lo, "Lower guide line");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kConfig;
    }

    try {
        if (gen->parsed()) {
            const auto c = load_with_overrides(g);
            const std::string out = g.out.empty() ? c.out_dir + "/dataset.bin" : g.out;
            cmd_generate(c, out);
            std::cout << out << "\n";
        } else if (train->parsed()) {
            const auto c = load_with_overrides(g);
            const RunSummary s = cmd_train(c, dataset, g.out.empty() ? c.out_dir : g.out);
            print_summary(s, std::cout);
        } else if (eval->parsed()) {
            EvalSource src;
            src.fixed = fixed;
            if (!eval_dataset.empty()) {
                src.dataset_path = eval_dataset;
            } else {
                src.config = load_with_overrides(g);
            }
            const std::uint64_t seed = g.seed.value_or(src.config ? src.config->seed : 1);
            const EvalReport r = cmd_eval(checkpoint, src, n, seed, g.out);
            std::cout << to_json(r).dump(2) << "\n";
        } else if (sweep->parsed()) {
            const auto c = load_with_overrides(g);
            const auto rows = cmd_sweep(c, g.out.empty() ? c.out_dir : g.out, g.jobs);
            for (const auto& r : rows) {
                std::cout << "cell " << r.cell.index;
                for (const auto& [k, v] : r.cell.values) std::cout << " " << k << "=" << v.dump();
                std::cout << "\n";
                print_summary(r.summary, std::cout);
            }
        } else if (plot->parsed()) {
            std::optional<Thresholds> guides;
            if (!g.config.empty()) guides = load_with_overrides(g).resolved_thresholds();
            if (c_hi || c_lo) {
                Thresholds t = guides.value_or(Thresholds{});
                if (c_hi) t.c_hi = *c_hi;
                if (c_lo) t.c_lo = *c_lo;
                guides = t;
            }
            for (const auto& p : cmd_plot(csvs, g.out.empty() ? "timeline" : g.out, guides)) std::cout << p << "\n";
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (const DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return kDivergence;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kData;
    }
    return kOk;
}
