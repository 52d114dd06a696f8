#pragma once

#include "ddpc/harness.hpp"
#include "ddpc/lti_sim.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace ddpc {

/// Thrown when a file cannot be read or written.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Optional "sweep" section of a config file. `lambda_mode` asks for the
/// regularization grid table; otherwise `parameter` is swept over `grid`
/// for each listed variant.
struct SweepRequest {
    bool lambda_mode = false;
    SweepParameter parameter = SweepParameter::AveragedCount;
    std::vector<double> grid;
    std::vector<Variant> variants;
};

struct LoadedConfig {
    ExperimentConfig experiment;
    bool has_sweep = false;
    SweepRequest sweep;
};

/// Parses a JSON config. Every field is optional and falls back to the
/// benchmark defaults; unknown keys are rejected. Matrices are arrays of
/// rows; vectors and the weight matrices also accept a single number
/// (replicated, respectively scaled identity). Throws ContractError on
/// malformed content.
LoadedConfig parse_experiment_config(const std::string& json_text);
LoadedConfig load_experiment_config(const std::string& path);

/// Round-trip counterpart of the parser: the full effective config as JSON.
std::string format_experiment_config(const ExperimentConfig& cfg);

std::string format_run_csv(const ExperimentResult& result);
std::string format_trajectory_csv(const Trajectory& traj);
std::string format_lambda_csv(const LambdaTable& table);
std::string format_sweep_csv(const std::string& parameter,
                             const std::vector<SweepPoint>& points);

/// JSON object with the summary statistics of one variant.
std::string format_stats_json(const VariantStats& stats);

/// JSON document bundling a variant, the model-based baseline it was paired
/// against, and the sign-test comparison.
std::string format_baseline_json(const VariantStats& stats,
                                 const VariantStats& oracle,
                                 const PairedComparison& cmp);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

} // namespace ddpc
