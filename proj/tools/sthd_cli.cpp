// Command-line entry point: sthd <subcommand> [options] [--key=value ...]
#include <cstdio>
#include <fstream>
#include <iostream>
#include <malloc.h>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sthd/correlation.hpp"
#include "sthd/experiment.hpp"

namespace {

using nlohmann::json;

struct CommonOptions {
    std::string config_path;
    std::string report_path;
    bool print_config = false;
};

void add_common(CLI::App* cmd, CommonOptions& opts) {
    cmd->add_option("-c,--config", opts.config_path, "config file of 'key = value' lines");
    cmd->add_option("-o,--report", opts.report_path, "write the JSON report here instead of stdout");
    cmd->add_flag("--print-config", opts.print_config, "print every config key with its resolved value and exit");
    cmd->allow_extras();
    cmd->footer("Any config key can be overridden as --key=value.");
}

sthd::ExperimentConfig build_config(const CLI::App* cmd, const CommonOptions& opts) {
    sthd::ExperimentConfig config = opts.config_path.empty() ? sthd::ExperimentConfig{}
                                                             : sthd::load_config(opts.config_path);
    const auto extras = cmd->remaining();
    for (std::size_t i = 0; i < extras.size(); ++i) {
        const std::string& arg = extras[i];
        if (arg.rfind("--", 0) != 0) throw std::invalid_argument("unexpected argument '" + arg + "'");
        const auto eq = arg.find('=');
        if (eq != std::string::npos) {
            config.set(arg.substr(2, eq - 2), arg.substr(eq + 1));
        } else if (i + 1 < extras.size()) {
            config.set(arg.substr(2), extras[++i]);
        } else {
            throw std::invalid_argument("override '" + arg + "' has no value");
        }
    }
    config.validate();
    return config;
}

void write_text(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
}

void emit_report(const CommonOptions& opts, const json& report) { write_text(opts.report_path, report.dump(2) + "\n"); }

template <typename T, typename Parse>
std::vector<T> split_list(const std::string& text, Parse parse) {
    std::vector<T> out;
    std::istringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (!item.empty()) out.push_back(parse(item));
    }
    return out;
}

int fail(std::string_view command, std::string_view kind, const std::string& message, int code) {
    json err{{"error", kind}, {"command", command}, {"message", message}};
    std::cerr << err.dump() << std::endl;
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    // Training allocates and frees multi-megabyte activations every step; keep
    // them on the heap instead of paying an mmap and page faults each time.
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    CLI::App app{"STHD forecasting toolkit: correlation ranking, ReIndex training and evaluation"};
    app.require_subcommand(1);

    CommonOptions train_opts;
    auto* train = app.add_subcommand("train", "train over every configured seed and report test metrics");
    add_common(train, train_opts);

    CommonOptions eval_opts;
    std::string checkpoint;
    auto* evaluate = app.add_subcommand("evaluate", "evaluate a saved checkpoint on the test split");
    add_common(evaluate, eval_opts);
    evaluate->add_option("--checkpoint", checkpoint, "checkpoint stem (without .bin/.manifest)")->required();

    CommonOptions corr_opts;
    std::string neighbors_path, matrix_path;
    auto* correlate = app.add_subcommand("correlate", "compute Pearson correlations and top-K neighbor lists");
    add_common(correlate, corr_opts);
    correlate->add_option("--neighbors", neighbors_path, "write the neighbor index text here (default stdout)");
    correlate->add_option("--matrix", matrix_path, "also write the full correlation matrix as CSV");

    CommonOptions ablate_opts;
    std::string modes_text = "related,unrelated,none";
    auto* ablate = app.add_subcommand("ablate", "compare related, unrelated, no-neighbor and ReIndex-off runs");
    add_common(ablate, ablate_opts);
    ablate->add_option("--modes", modes_text, "comma list of related|unrelated|none|reindex_off")
        ->capture_default_str();

    CommonOptions sweep_opts;
    std::string k_text, csv_path;
    auto* sweep = app.add_subcommand("sweep-k", "train and evaluate across K values");
    add_common(sweep, sweep_opts);
    sweep->add_option("--k-values", k_text, "comma list of K values")->required();
    sweep->add_option("--csv", csv_path, "plot-data CSV output (k,seed,horizon,rmse,wrmspe,mae,wape)");

    std::size_t bench_channels = 4000, bench_steps = 200;
    std::uint64_t bench_seed = 0;
    std::string bench_workers = "1,2,4,8";
    std::string bench_report;
    auto* bench = app.add_subcommand("bench-corr", "time the parallel correlation engine against the serial oracle");
    bench->add_option("--channels", bench_channels)->capture_default_str();
    bench->add_option("--steps", bench_steps)->capture_default_str();
    bench->add_option("--seed", bench_seed)->capture_default_str();
    bench->add_option("--workers", bench_workers, "comma list of worker counts")->capture_default_str();
    bench->add_option("-o,--report", bench_report);

    CommonOptions gen_opts;
    std::string gen_out;
    auto* generate = app.add_subcommand("generate", "write the configured synthetic dataset as CSV");
    add_common(generate, gen_opts);
    generate->add_option("--out", gen_out, "CSV output path (default stdout)");

    std::string command = "sthd";
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail(command, "usage", e.what(), 2);
    }

    try {
        for (const auto& [cmd, opts] : {std::pair{train, &train_opts}, std::pair{evaluate, &eval_opts},
                                        std::pair{correlate, &corr_opts}, std::pair{ablate, &ablate_opts},
                                        std::pair{sweep, &sweep_opts}, std::pair{generate, &gen_opts}}) {
            if (*cmd && opts->print_config) {
                command = cmd->get_name();
                std::cout << build_config(cmd, *opts).to_text();
                return 0;
            }
        }
        if (*train) {
            command = "train";
            emit_report(train_opts, sthd::train_report(build_config(train, train_opts)));
        } else if (*evaluate) {
            command = "evaluate";
            emit_report(eval_opts, sthd::evaluate_checkpoint(build_config(evaluate, eval_opts), checkpoint));
        } else if (*correlate) {
            command = "correlate";
            const auto config = build_config(correlate, corr_opts);
            const auto dataset = sthd::load_dataset(config, config.seeds.front());
            const auto corr = sthd::pearson_matrix(dataset, sthd::SplitRange::train,
                                                   sthd::resolve_workers(config.workers));
            const auto index = config.ablation == sthd::AblationMode::unrelated
                                   ? sthd::bottom_k_neighbors(corr, config.k, config.score_mode)
                                   : sthd::top_k_neighbors(corr, config.k, config.score_mode);
            write_text(neighbors_path, index.to_text(dataset.channel_ids()));
            if (!matrix_path.empty()) write_text(matrix_path, sthd::correlation_to_csv(corr, dataset.channel_ids()));
        } else if (*ablate) {
            command = "ablate";
            const auto modes = split_list<sthd::AblationMode>(
                modes_text, [](const std::string& s) { return sthd::parse_ablation_mode(s); });
            emit_report(ablate_opts, sthd::run_ablation(build_config(ablate, ablate_opts), modes));
        } else if (*sweep) {
            command = "sweep-k";
            const auto config = build_config(sweep, sweep_opts);
            const auto ks = split_list<std::size_t>(k_text, [](const std::string& s) { return std::stoull(s); });
            const auto result = sthd::run_k_sweep(config, ks);
            emit_report(sweep_opts, result.report);
            if (!csv_path.empty()) write_text(csv_path, result.csv);
        } else if (*bench) {
            command = "bench-corr";
            sthd::SyntheticSpec spec;
            spec.num_channels = bench_channels;
            spec.num_steps = bench_steps;
            spec.num_groups = std::min<std::size_t>(8, bench_channels);
            spec.seed = bench_seed;
            spec.split_fractions = {1.0, 0.0};
            const auto workers = split_list<std::size_t>(
                bench_workers, [](const std::string& s) { return static_cast<std::size_t>(std::stoull(s)); });
            const auto result = sthd::benchmark_correlation(sthd::generate_synthetic(spec), workers);
            json report{{"schema_version", sthd::report_schema_version},
                        {"kind", "bench_corr"},
                        {"M", result.num_channels},
                        {"T", result.num_steps},
                        {"hardware_threads", std::thread::hardware_concurrency()},
                        {"reference_seconds", result.reference_seconds},
                        {"max_abs_diff", result.max_abs_diff},
                        {"verified", result.verified}};
            for (const auto& run : result.runs) {
                report["runs"].push_back({{"workers", run.workers}, {"seconds", run.seconds}, {"speedup", run.speedup}});
            }
            write_text(bench_report, report.dump(2) + "\n");
        } else if (*generate) {
            command = "generate";
            const auto config = build_config(generate, gen_opts);
            write_text(gen_out, sthd::to_csv(sthd::load_dataset(config, config.seeds.front())));
        }
    } catch (const std::invalid_argument& e) {
        return fail(command, "invalid_argument", e.what(), 2);
    } catch (const std::exception& e) {
        return fail(command, "runtime_error", e.what(), 1);
    }
    return 0;
}
