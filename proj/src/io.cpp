#include "ddpc/io.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <initializer_list>
#include <iomanip>
#include <limits>
#include <sstream>

namespace ddpc {

namespace {

using nlohmann::json;

void check_keys(const json& obj, const std::string& where,
                std::initializer_list<const char*> allowed)
{
    for (const auto& item : obj.items()) {
        bool known = false;
        for (const char* key : allowed)
            if (item.key() == key) {
                known = true;
                break;
            }
        if (!known)
            throw ContractError("config: unknown key \"" + item.key() + "\" in " +
                                where);
    }
}

double as_number(const json& j, const std::string& where)
{
    if (!j.is_number())
        throw ContractError("config: " + where + " must be a number");
    return j.get<double>();
}

int as_int(const json& j, const std::string& where)
{
    if (!j.is_number_integer())
        throw ContractError("config: " + where + " must be an integer");
    return j.get<int>();
}

bool as_bool(const json& j, const std::string& where)
{
    if (!j.is_boolean())
        throw ContractError("config: " + where + " must be a boolean");
    return j.get<bool>();
}

std::string as_string(const json& j, const std::string& where)
{
    if (!j.is_string())
        throw ContractError("config: " + where + " must be a string");
    return j.get<std::string>();
}

Mat as_matrix(const json& j, const std::string& where)
{
    if (j.is_number())
        return Mat::Constant(1, 1, j.get<double>());
    if (!j.is_array() || j.empty())
        throw ContractError("config: " + where + " must be an array of rows");
    const auto rows = static_cast<Index>(j.size());
    Index cols = -1;
    Mat out;
    for (Index i = 0; i < rows; ++i) {
        const json& row = j[static_cast<std::size_t>(i)];
        if (!row.is_array() || row.empty())
            throw ContractError("config: " + where + " rows must be arrays");
        if (cols < 0) {
            cols = static_cast<Index>(row.size());
            out.resize(rows, cols);
        } else if (static_cast<Index>(row.size()) != cols) {
            throw ContractError("config: " + where + " rows have unequal length");
        }
        for (Index c = 0; c < cols; ++c)
            out(i, c) = as_number(row[static_cast<std::size_t>(c)],
                                  where + " entry");
    }
    return out;
}

Vec as_vector(const json& j, const std::string& where, Index size)
{
    if (j.is_number())
        return Vec::Constant(size, j.get<double>());
    if (!j.is_array())
        throw ContractError("config: " + where + " must be an array or number");
    if (static_cast<Index>(j.size()) != size) {
        std::ostringstream msg;
        msg << "config: " << where << " must have " << size << " entries";
        throw ContractError(msg.str());
    }
    Vec out(size);
    for (Index i = 0; i < size; ++i)
        out(i) = as_number(j[static_cast<std::size_t>(i)], where + " entry");
    return out;
}

Mat as_weight(const json& j, const std::string& where, Index dim)
{
    if (j.is_number())
        return j.get<double>() * Mat::Identity(dim, dim);
    Mat W = as_matrix(j, where);
    if (W.rows() != dim || W.cols() != dim) {
        std::ostringstream msg;
        msg << "config: " << where << " must be " << dim << "x" << dim;
        throw ContractError(msg.str());
    }
    return W;
}

std::vector<double> as_number_list(const json& j, const std::string& where)
{
    if (!j.is_array() || j.empty())
        throw ContractError("config: " + where + " must be a nonempty array");
    std::vector<double> out;
    out.reserve(j.size());
    for (const json& v : j)
        out.push_back(as_number(v, where + " entry"));
    return out;
}

json matrix_to_json(const Mat& M)
{
    json rows = json::array();
    for (Index i = 0; i < M.rows(); ++i) {
        json row = json::array();
        for (Index c = 0; c < M.cols(); ++c)
            row.push_back(M(i, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

json vector_to_json(const Vec& v)
{
    json out = json::array();
    for (Index i = 0; i < v.size(); ++i)
        out.push_back(v(i));
    return out;
}

std::ostringstream csv_stream()
{
    std::ostringstream out;
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    return out;
}

void append_columns(std::ostringstream& out, const char* prefix, Index count)
{
    for (Index i = 0; i < count; ++i)
        out << ',' << prefix << i;
}

void append_values(std::ostringstream& out, const Vec& v)
{
    for (Index i = 0; i < v.size(); ++i)
        out << ',' << v(i);
}

} // namespace

LoadedConfig parse_experiment_config(const std::string& json_text)
{
    json root;
    try {
        root = json::parse(json_text);
    } catch (const json::parse_error& err) {
        throw ContractError(std::string("config: invalid JSON: ") + err.what());
    }
    if (!root.is_object())
        throw ContractError("config: top level must be an object");
    check_keys(root, "the top level",
               {"model", "noise", "deepc", "T", "N", "Nsim", "reference", "variant",
                "repetitions", "tuning_repetitions", "master_seed", "lambda_y_grid",
                "lambda_g_grid", "noise_free_online", "pe_amplitude",
                "warmup_amplitude", "x0_stddev", "ekf", "sweep"});

    LoadedConfig loaded;
    ExperimentConfig& cfg = loaded.experiment;
    cfg = default_experiment_config();

    if (root.contains("model")) {
        const json& jm = root["model"];
        check_keys(jm, "model", {"A", "B", "C", "D"});
        for (const char* key : {"A", "B", "C"})
            if (!jm.contains(key))
                throw ContractError(std::string("config: model needs \"") + key +
                                    "\"");
        Mat A = as_matrix(jm["A"], "model.A");
        Mat B = as_matrix(jm["B"], "model.B");
        Mat C = as_matrix(jm["C"], "model.C");
        Mat D = jm.contains("D") ? as_matrix(jm["D"], "model.D")
                                 : Mat::Zero(C.rows(), B.cols());
        cfg.model = LtiModel::make(std::move(A), std::move(B), std::move(C),
                                   std::move(D));
    }
    const Index m = cfg.model.m, p = cfg.model.p;

    if (root.contains("noise")) {
        const json& jn = root["noise"];
        check_keys(jn, "noise", {"sigma_w2", "sigma_v2"});
        if (jn.contains("sigma_w2"))
            cfg.noise.sigma_w2 = as_number(jn["sigma_w2"], "noise.sigma_w2");
        if (jn.contains("sigma_v2"))
            cfg.noise.sigma_v2 = as_number(jn["sigma_v2"], "noise.sigma_v2");
    }

    // Defaults sized for the benchmark plant would not fit another model, so
    // resize the weight and bound defaults before applying overrides.
    if (root.contains("model")) {
        cfg.deepc.Q = Mat::Identity(p, p);
        cfg.deepc.R = Mat::Identity(m, m);
        cfg.deepc.u_min = Vec::Constant(m, -1000.0);
        cfg.deepc.u_max = Vec::Constant(m, 1000.0);
        cfg.deepc.y_min = Vec::Constant(p, -1000.0);
        cfg.deepc.y_max = Vec::Constant(p, 1000.0);
    }

    if (root.contains("deepc")) {
        const json& jd = root["deepc"];
        check_keys(jd, "deepc", {"Np", "Nf", "Nc", "Q", "R", "lambda_y", "lambda_g",
                                 "u_min", "u_max", "y_min", "y_max"});
        if (jd.contains("Np"))
            cfg.deepc.Np = as_int(jd["Np"], "deepc.Np");
        if (jd.contains("Nf"))
            cfg.deepc.Nf = as_int(jd["Nf"], "deepc.Nf");
        if (jd.contains("Nc"))
            cfg.deepc.Nc = as_int(jd["Nc"], "deepc.Nc");
        if (jd.contains("Q"))
            cfg.deepc.Q = as_weight(jd["Q"], "deepc.Q", p);
        if (jd.contains("R"))
            cfg.deepc.R = as_weight(jd["R"], "deepc.R", m);
        if (jd.contains("lambda_y"))
            cfg.deepc.lambda_y = as_number(jd["lambda_y"], "deepc.lambda_y");
        if (jd.contains("lambda_g"))
            cfg.deepc.lambda_g = as_number(jd["lambda_g"], "deepc.lambda_g");
        if (jd.contains("u_min"))
            cfg.deepc.u_min = as_vector(jd["u_min"], "deepc.u_min", m);
        if (jd.contains("u_max"))
            cfg.deepc.u_max = as_vector(jd["u_max"], "deepc.u_max", m);
        if (jd.contains("y_min"))
            cfg.deepc.y_min = as_vector(jd["y_min"], "deepc.y_min", p);
        if (jd.contains("y_max"))
            cfg.deepc.y_max = as_vector(jd["y_max"], "deepc.y_max", p);
    }

    if (root.contains("reference")) {
        const json& jr = root["reference"];
        check_keys(jr, "reference", {"amplitude", "omega"});
        if (jr.contains("amplitude"))
            cfg.reference.amplitude = as_number(jr["amplitude"], "reference.amplitude");
        if (jr.contains("omega"))
            cfg.reference.omega = as_number(jr["omega"], "reference.omega");
    }

    if (root.contains("ekf")) {
        const json& je = root["ekf"];
        check_keys(je, "ekf",
                   {"process_scale", "shift_scale", "measurement_scale",
                    "initial_scale"});
        if (je.contains("process_scale"))
            cfg.ekf.process_scale = as_number(je["process_scale"], "ekf.process_scale");
        if (je.contains("shift_scale"))
            cfg.ekf.shift_scale = as_number(je["shift_scale"], "ekf.shift_scale");
        if (je.contains("measurement_scale"))
            cfg.ekf.measurement_scale =
                as_number(je["measurement_scale"], "ekf.measurement_scale");
        if (je.contains("initial_scale"))
            cfg.ekf.initial_scale = as_number(je["initial_scale"], "ekf.initial_scale");
    }

    if (root.contains("T"))
        cfg.T = as_int(root["T"], "T");
    if (root.contains("N"))
        cfg.N = as_int(root["N"], "N");
    if (root.contains("Nsim"))
        cfg.Nsim = as_int(root["Nsim"], "Nsim");
    if (root.contains("variant"))
        cfg.variant = variant_from_name(as_string(root["variant"], "variant"));
    if (root.contains("repetitions"))
        cfg.repetitions = as_int(root["repetitions"], "repetitions");
    if (root.contains("tuning_repetitions"))
        cfg.tuning_repetitions = as_int(root["tuning_repetitions"],
                                        "tuning_repetitions");
    if (root.contains("master_seed")) {
        const json& js = root["master_seed"];
        if (!js.is_number_integer() ||
            (!js.is_number_unsigned() && js.get<long long>() < 0))
            throw ContractError("config: master_seed must be a nonnegative integer");
        cfg.master_seed = js.get<std::uint64_t>();
    }
    if (root.contains("lambda_y_grid"))
        cfg.lambda_y_grid = as_number_list(root["lambda_y_grid"], "lambda_y_grid");
    if (root.contains("lambda_g_grid"))
        cfg.lambda_g_grid = as_number_list(root["lambda_g_grid"], "lambda_g_grid");
    if (root.contains("noise_free_online"))
        cfg.noise_free_online = as_bool(root["noise_free_online"], "noise_free_online");
    if (root.contains("pe_amplitude"))
        cfg.pe_amplitude = as_number(root["pe_amplitude"], "pe_amplitude");
    if (root.contains("warmup_amplitude"))
        cfg.warmup_amplitude = as_number(root["warmup_amplitude"], "warmup_amplitude");
    if (root.contains("x0_stddev"))
        cfg.x0_stddev = as_number(root["x0_stddev"], "x0_stddev");

    if (root.contains("sweep")) {
        const json& jw = root["sweep"];
        check_keys(jw, "sweep", {"parameter", "grid", "variants"});
        if (!jw.contains("parameter"))
            throw ContractError("config: sweep needs \"parameter\"");
        loaded.has_sweep = true;
        const std::string name = as_string(jw["parameter"], "sweep.parameter");
        if (name == "lambda") {
            loaded.sweep.lambda_mode = true;
            if (jw.contains("grid"))
                throw ContractError("config: the lambda sweep uses the "
                                    "lambda_y_grid/lambda_g_grid fields, not a grid");
        } else {
            loaded.sweep.parameter = sweep_parameter_from_name(name);
            if (!jw.contains("grid"))
                throw ContractError("config: sweep needs \"grid\"");
            loaded.sweep.grid = as_number_list(jw["grid"], "sweep.grid");
        }
        if (jw.contains("variants")) {
            if (!jw["variants"].is_array() || jw["variants"].empty())
                throw ContractError("config: sweep.variants must be a nonempty array");
            for (const json& v : jw["variants"])
                loaded.sweep.variants.push_back(
                    variant_from_name(as_string(v, "sweep.variants entry")));
        } else {
            loaded.sweep.variants.push_back(cfg.variant);
        }
    }

    cfg.validate();
    return loaded;
}

LoadedConfig load_experiment_config(const std::string& path)
{
    return parse_experiment_config(read_text_file(path));
}

std::string format_experiment_config(const ExperimentConfig& cfg)
{
    json root;
    root["model"] = {{"A", matrix_to_json(cfg.model.A)},
                     {"B", matrix_to_json(cfg.model.B)},
                     {"C", matrix_to_json(cfg.model.C)},
                     {"D", matrix_to_json(cfg.model.D)}};
    root["noise"] = {{"sigma_w2", cfg.noise.sigma_w2},
                     {"sigma_v2", cfg.noise.sigma_v2}};
    root["deepc"] = {{"Np", cfg.deepc.Np},
                     {"Nf", cfg.deepc.Nf},
                     {"Nc", cfg.deepc.Nc},
                     {"Q", matrix_to_json(cfg.deepc.Q)},
                     {"R", matrix_to_json(cfg.deepc.R)},
                     {"lambda_y", cfg.deepc.lambda_y},
                     {"lambda_g", cfg.deepc.lambda_g},
                     {"u_min", vector_to_json(cfg.deepc.u_min)},
                     {"u_max", vector_to_json(cfg.deepc.u_max)},
                     {"y_min", vector_to_json(cfg.deepc.y_min)},
                     {"y_max", vector_to_json(cfg.deepc.y_max)}};
    root["T"] = cfg.T;
    root["N"] = cfg.N;
    root["Nsim"] = cfg.Nsim;
    root["reference"] = {{"amplitude", cfg.reference.amplitude},
                         {"omega", cfg.reference.omega}};
    root["variant"] = variant_name(cfg.variant);
    root["repetitions"] = cfg.repetitions;
    root["tuning_repetitions"] = cfg.tuning_repetitions;
    root["master_seed"] = cfg.master_seed;
    root["lambda_y_grid"] = cfg.lambda_y_grid;
    root["lambda_g_grid"] = cfg.lambda_g_grid;
    root["noise_free_online"] = cfg.noise_free_online;
    root["pe_amplitude"] = cfg.pe_amplitude;
    root["warmup_amplitude"] = cfg.warmup_amplitude;
    root["x0_stddev"] = cfg.x0_stddev;
    root["ekf"] = {{"process_scale", cfg.ekf.process_scale},
                   {"shift_scale", cfg.ekf.shift_scale},
                   {"measurement_scale", cfg.ekf.measurement_scale},
                   {"initial_scale", cfg.ekf.initial_scale}};
    return root.dump(2) + "\n";
}

std::string format_run_csv(const ExperimentResult& result)
{
    auto out = csv_stream();
    const bool with_filter = !result.filter.empty();
    const Index m = result.inputs.empty() ? 0 : result.inputs.front().size();
    const Index p = result.outputs.empty() ? 0 : result.outputs.front().size();

    out << 'k';
    append_columns(out, "u_", m);
    append_columns(out, "y_", p);
    append_columns(out, "r_", p);
    if (with_filter)
        out << ",innovation_norm,gain_norm,trace_P";
    out << '\n';

    for (std::size_t k = 0; k < result.inputs.size(); ++k) {
        out << (k + 1);
        append_values(out, result.inputs[k]);
        append_values(out, result.outputs[k]);
        append_values(out, result.reference[k]);
        if (with_filter) {
            const auto& diag = result.filter[k];
            out << ',' << diag.innovation_norm << ',' << diag.gain_norm << ','
                << diag.trace_P;
        }
        out << '\n';
    }
    return out.str();
}

std::string format_trajectory_csv(const Trajectory& traj)
{
    auto out = csv_stream();
    const Index m = traj.inputs.empty() ? 0 : traj.inputs.front().size();
    const Index p = traj.outputs.empty() ? 0 : traj.outputs.front().size();

    out << 'k';
    append_columns(out, "u_", m);
    append_columns(out, "y_", p);
    out << '\n';
    for (std::size_t k = 0; k < traj.inputs.size(); ++k) {
        out << k;
        append_values(out, traj.inputs[k]);
        append_values(out, traj.outputs[k]);
        out << '\n';
    }
    return out.str();
}

std::string format_lambda_csv(const LambdaTable& table)
{
    auto out = csv_stream();
    out << "lambda_y,lambda_g,mean_J,n_ok,n_failed,valid\n";
    for (const auto& cell : table.cells)
        out << cell.lambda_y << ',' << cell.lambda_g << ',' << cell.mean_J << ','
            << cell.n_ok << ',' << cell.n_failed << ',' << (cell.valid ? 1 : 0)
            << '\n';
    return out.str();
}

std::string format_sweep_csv(const std::string& parameter,
                             const std::vector<SweepPoint>& points)
{
    auto out = csv_stream();
    out << "parameter,value,variant,lambda_y,lambda_g,mean_J,std_J,q25,median,q75,"
           "n_ok,n_failed,fallbacks,valid\n";
    for (const auto& point : points) {
        const auto& s = point.stats;
        out << parameter << ',' << point.value << ',' << variant_name(s.variant)
            << ',' << s.lambda_y << ',' << s.lambda_g << ',' << s.mean << ','
            << s.stddev << ',' << s.q25 << ',' << s.median << ',' << s.q75 << ','
            << s.n_ok << ',' << s.n_failed << ',' << s.fallbacks_total << ','
            << (s.valid ? 1 : 0) << '\n';
    }
    return out.str();
}

namespace {

json stats_to_json(const VariantStats& stats)
{
    json root;
    root["variant"] = variant_name(stats.variant);
    root["lambda_y"] = stats.lambda_y;
    root["lambda_g"] = stats.lambda_g;
    root["repetitions"] = stats.repetitions;
    root["n_ok"] = stats.n_ok;
    root["n_failed"] = stats.n_failed;
    root["mean_J"] = stats.mean;
    root["std_J"] = stats.stddev;
    root["q25"] = stats.q25;
    root["median"] = stats.median;
    root["q75"] = stats.q75;
    root["fallbacks"] = stats.fallbacks_total;
    root["valid"] = stats.valid;
    json costs = json::array();
    for (double c : stats.costs)
        costs.push_back(std::isnan(c) ? json() : json(c));
    root["costs"] = std::move(costs);
    return root;
}

} // namespace

std::string format_stats_json(const VariantStats& stats)
{
    return stats_to_json(stats).dump(2) + "\n";
}

std::string format_baseline_json(const VariantStats& stats,
                                 const VariantStats& oracle,
                                 const PairedComparison& cmp)
{
    json root;
    root["variant"] = stats_to_json(stats);
    root["oracle"] = stats_to_json(oracle);
    root["comparison"] = {{"pairs", cmp.pairs},
                          {"mean_diff", cmp.mean_diff},
                          {"wins_variant", cmp.wins_a},
                          {"p_value", cmp.p_value}};
    return root.dump(2) + "\n";
}

std::string read_text_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path + " for reading");
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad())
        throw IoError("error while reading " + path);
    return buf.str();
}

void write_text_file(const std::string& path, const std::string& content)
{
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw IoError("cannot open " + path + " for writing");
    out << content;
    out.flush();
    if (!out)
        throw IoError("error while writing " + path);
}

} // namespace ddpc
