#include "ddpc/deepc.hpp"
#include "ddpc/hankel.hpp"
#include "ddpc/harness.hpp"
#include "ddpc/io.hpp"
#include "ddpc/qp.hpp"

#include <CLI11.hpp>

#include <Eigen/SVD>

#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

namespace {

struct CommonArgs {
    std::string config_path;
    std::string variant;
    std::uint64_t seed = 0;
    int jobs = 1;
    int rep = 0;
    CLI::Option* seed_opt = nullptr;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_rep)
{
    cmd->add_option("--config", args.config_path, "JSON experiment config")
        ->required();
    cmd->add_option("--variant", args.variant,
                    "override the configured controller variant");
    args.seed_opt = cmd->add_option("--seed", args.seed, "override the master seed");
    cmd->add_option("--jobs", args.jobs, "worker threads")
        ->check(CLI::PositiveNumber);
    if (with_rep)
        cmd->add_option("--rep", args.rep, "repetition index")
            ->check(CLI::NonNegativeNumber);
}

ddpc::LoadedConfig load_with_overrides(const CommonArgs& args)
{
    auto loaded = ddpc::load_experiment_config(args.config_path);
    if (!args.variant.empty())
        loaded.experiment.variant = ddpc::variant_from_name(args.variant);
    if (args.seed_opt != nullptr && args.seed_opt->count() > 0)
        loaded.experiment.master_seed = args.seed;
    loaded.experiment.validate();
    return loaded;
}

void print_stats_line(const ddpc::VariantStats& stats)
{
    std::cout << std::left << std::setw(14) << ddpc::variant_name(stats.variant)
              << " mean=" << stats.mean << " std=" << stats.stddev
              << " median=" << stats.median << " failed=" << stats.n_failed << '/'
              << stats.repetitions;
    if (stats.variant != ddpc::Variant::MpcOracle)
        std::cout << " lambda_y=" << stats.lambda_y
                  << " lambda_g=" << stats.lambda_g;
    std::cout << '\n';
}

int run_gen_data(const CommonArgs& args, const std::string& out_prefix)
{
    const auto loaded = load_with_overrides(args);
    const auto trajectories =
        ddpc::collect_experiment_data(loaded.experiment, args.rep);
    for (std::size_t i = 0; i < trajectories.size(); ++i) {
        const std::string path = out_prefix + std::to_string(i) + ".csv";
        ddpc::write_text_file(path, ddpc::format_trajectory_csv(trajectories[i]));
    }
    std::cout << "wrote " << trajectories.size() << " trajectories of length "
              << loaded.experiment.T << " to " << out_prefix << "*.csv\n";
    return 0;
}

int run_average(const CommonArgs& args, const std::string& out_path)
{
    const auto loaded = load_with_overrides(args);
    const auto blocks = ddpc::prepare_data(loaded.experiment, args.rep);
    ddpc::save_data_blocks(out_path, blocks);
    std::cout << "data blocks: Np=" << blocks.Np << " Nf=" << blocks.Nf
              << " columns=" << blocks.L << " -> " << out_path << '\n';
    return 0;
}

int run_single(const CommonArgs& args, const std::string& out_path,
               const std::string& dump_path)
{
    const auto loaded = load_with_overrides(args);
    const auto& cfg = loaded.experiment;
    if (!dump_path.empty())
        ddpc::write_text_file(dump_path, ddpc::format_experiment_config(cfg));

    const auto result = ddpc::run_experiment(cfg, args.rep);
    if (!out_path.empty())
        ddpc::write_text_file(out_path, ddpc::format_run_csv(result));
    if (result.failed) {
        std::cerr << "run failed: " << result.failure_reason << '\n';
        return 3;
    }
    std::cout << "variant=" << ddpc::variant_name(result.variant)
              << " rep=" << result.rep << " J=" << result.J
              << " fallbacks=" << result.fallback_count;
    if (cfg.variant == ddpc::Variant::AveragedEkf)
        std::cout << " degenerate_laws=" << result.degenerate_law_steps;
    std::cout << '\n';
    return 0;
}

int run_sweep(const CommonArgs& args, std::string out_path)
{
    const auto loaded = load_with_overrides(args);
    if (!loaded.has_sweep)
        throw ddpc::ContractError("sweep: the config has no \"sweep\" section");

    if (loaded.sweep.lambda_mode) {
        if (out_path.empty())
            out_path = "lambda_table.csv";
        const auto table = ddpc::sweep_lambda(loaded.experiment, args.jobs);
        ddpc::write_text_file(out_path, ddpc::format_lambda_csv(table));
        std::cout << "best lambda_y=" << table.best_lambda_y
                  << " lambda_g=" << table.best_lambda_g << " (" << table.cells.size()
                  << " cells -> " << out_path << ")\n";
        return 0;
    }

    if (out_path.empty())
        out_path = "sweep.csv";
    const char* name = ddpc::sweep_parameter_name(loaded.sweep.parameter);
    const auto points =
        ddpc::sweep_parameter(loaded.experiment, loaded.sweep.parameter,
                              loaded.sweep.grid, loaded.sweep.variants, args.jobs);
    ddpc::write_text_file(out_path, ddpc::format_sweep_csv(name, points));
    std::cout << "swept " << name << " over " << loaded.sweep.grid.size()
              << " values x " << loaded.sweep.variants.size() << " variants -> "
              << out_path << '\n';
    for (const auto& point : points) {
        std::cout << name << '=' << point.value << ' ';
        print_stats_line(point.stats);
    }
    return 0;
}

int run_baseline(const CommonArgs& args, const std::string& out_path)
{
    const auto loaded = load_with_overrides(args);
    ddpc::ExperimentConfig cfg = loaded.experiment;
    if (cfg.variant == ddpc::Variant::MpcOracle)
        throw ddpc::ContractError(
            "baseline: pick a data-driven variant to compare against the oracle");

    const auto stats = ddpc::monte_carlo(cfg, args.jobs);
    ddpc::ExperimentConfig oracle_cfg = cfg;
    oracle_cfg.variant = ddpc::Variant::MpcOracle;
    const auto oracle = ddpc::monte_carlo(oracle_cfg, args.jobs);
    const auto cmp = ddpc::paired_compare(stats, oracle);

    print_stats_line(stats);
    print_stats_line(oracle);
    std::cout << "paired sign test: variant costlier in " << cmp.wins_a << " of "
              << cmp.pairs << " pairs, mean diff=" << cmp.mean_diff
              << ", p=" << cmp.p_value << '\n';
    if (!out_path.empty()) {
        ddpc::write_text_file(out_path,
                              ddpc::format_baseline_json(stats, oracle, cmp));
        std::cout << "summary -> " << out_path << '\n';
    }
    return 0;
}

int run_check(const CommonArgs& args)
{
    const auto loaded = load_with_overrides(args);
    const auto& cfg = loaded.experiment;

    const auto trajectories = ddpc::collect_experiment_data(cfg, args.rep);
    const auto& input = trajectories.front().inputs;
    const int required = cfg.deepc.Np + cfg.deepc.Nf + cfg.model.n;
    int achieved = 0;
    for (int order = 1; order <= required; ++order) {
        const auto hankel = ddpc::build_block_hankel(input, order);
        if (!ddpc::is_persistently_exciting(hankel))
            break;
        achieved = order;
    }

    const auto blocks = ddpc::prepare_data(cfg, args.rep);
    ddpc::Mat stacked(blocks.Up.rows() + blocks.Uf.rows() + blocks.Yp.rows() +
                          blocks.Yf.rows(),
                      blocks.L);
    stacked << blocks.Up, blocks.Uf, blocks.Yp, blocks.Yf;
    const int rank = ddpc::numerical_rank(stacked);
    const int exact_rank =
        cfg.model.m * (cfg.deepc.Np + cfg.deepc.Nf) + cfg.model.n;

    const auto pqp = ddpc::assemble_parametric_qp(blocks, cfg.deepc);
    Eigen::JacobiSVD<ddpc::Mat> svd(pqp.P);
    const auto& sv = svd.singularValues();
    const double cond = sv(0) / sv(sv.size() - 1);

    const int bound = (cfg.model.m + 1) * required + 1;
    std::cout << "trajectory length: T=" << cfg.T << " (bound " << bound << ")\n"
              << "excitation: persistently exciting up to order " << achieved
              << " (required " << required << ")\n"
              << "data blocks: " << stacked.rows() << " rows x " << blocks.L
              << " columns, rank " << rank << " (" << exact_rank
              << " for noise-free data)\n"
              << "condensed hessian: condition number " << cond << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"data-driven predictive control laboratory"};
    app.require_subcommand(1);
    std::cout << std::setprecision(10);

    CommonArgs gen_args, avg_args, run_args, sweep_args, base_args, check_args;
    std::string gen_prefix = "dataset_";
    std::string avg_out = "blocks.txt";
    std::string run_out, run_dump, sweep_out, base_out;

    auto* gen = app.add_subcommand(
        "gen-data", "collect one repetition's offline trajectories");
    add_common(gen, gen_args, true);
    gen->add_option("--out", gen_prefix, "output file prefix");

    auto* avg = app.add_subcommand(
        "average", "assemble and store the (averaged) data blocks");
    add_common(avg, avg_args, true);
    avg->add_option("--out", avg_out, "output file");

    auto* run = app.add_subcommand("run", "run one closed-loop repetition");
    add_common(run, run_args, true);
    run->add_option("--out", run_out, "trajectory CSV output");
    run->add_option("--dump-config", run_dump, "write the effective config as JSON");

    auto* sweep = app.add_subcommand(
        "sweep", "run the sweep described by the config's sweep section");
    add_common(sweep, sweep_args, false);
    sweep->add_option("--out", sweep_out, "result CSV output");

    auto* base = app.add_subcommand(
        "baseline", "compare the configured variant against the model-based oracle");
    add_common(base, base_args, false);
    base->add_option("--out", base_out, "summary JSON output");

    auto* check = app.add_subcommand(
        "check", "report excitation, rank, and conditioning of one dataset");
    add_common(check, check_args, true);

    int status = 0;
    gen->callback([&] { status = run_gen_data(gen_args, gen_prefix); });
    avg->callback([&] { status = run_average(avg_args, avg_out); });
    run->callback([&] { status = run_single(run_args, run_out, run_dump); });
    sweep->callback([&] { status = run_sweep(sweep_args, sweep_out); });
    base->callback([&] { status = run_baseline(base_args, base_out); });
    check->callback([&] { status = run_check(check_args); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : 2;
    } catch (const ddpc::IoError& err) {
        std::cerr << "io error: " << err.what() << '\n';
        return 4;
    } catch (const ddpc::QpInfeasible& err) {
        std::cerr << "infeasible: " << err.what() << '\n';
        return 3;
    } catch (const ddpc::ContractError& err) {
        std::cerr << "config error: " << err.what() << '\n';
        return 2;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << '\n';
        return 1;
    }
    return status;
}
