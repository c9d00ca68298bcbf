#pragma once
// Config and artifact plumbing for the command-line front end: a versioned
// JSON experiment config, CSV tables at full double precision, and the JSON
// constants dump. Everything here is deterministic text generation; the CSV
// contract is '.' decimals, '\n' line endings, 17 significant digits.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "nlhom/base.hpp"
#include "nlhom/constants.hpp"
#include "nlhom/kernels.hpp"

namespace nlhom {

/// Raised for anything wrong with a config file: parse failures (with the
/// parser's line diagnostics) and field-level validation, always naming the
/// offending field. The CLI maps this to exit status 2.
class ConfigError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
    int schema = 1;
    std::string kernel_family = "box";  // box | gaussian | exponential
    int d = 1;
    double kernel_param = 0.5;          // radius / sigma / rate by family
    std::string mu_family = "cosine_product";  // constant | cosine_product
    double mu_base = 1.0;
    double mu_alpha = 0.0;              // cosine_product only
    int grid_N = 64;
    int m_max = 10;                     // threshold sweep: xi = delta0 2^{-m}
    int contour_points = 128;
    std::vector<double> eps_list;       // strictly decreasing
    std::string out_dir = "out";
    std::uint64_t seed = 0;
    std::map<std::string, double> tolerances;  // named overrides, may be empty
};

namespace detail {

/// Navigates a dotted path into a json object; wraps every failure into a
/// ConfigError that names the field.
inline const nlohmann::json& config_node(const nlohmann::json& j, const std::string& path) {
    const nlohmann::json* cur = &j;
    std::size_t start = 0;
    while (start <= path.size()) {
        const std::size_t dot = path.find('.', start);
        const std::string key =
            path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (!cur->is_object() || !cur->contains(key))
            throw ConfigError("config field " + path + ": missing");
        cur = &(*cur)[key];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    return *cur;
}

template <class T>
T config_field(const nlohmann::json& j, const std::string& path) {
    try {
        return config_node(j, path).get<T>();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError("config field " + path + ": " + e.what());
    }
}

}  // namespace detail

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    c.schema = detail::config_field<int>(j, "schema");
    if (c.schema != 1) throw ConfigError("config field schema: unsupported version");

    c.kernel_family = detail::config_field<std::string>(j, "kernel.family");
    if (c.kernel_family != "box" && c.kernel_family != "gaussian" &&
        c.kernel_family != "exponential")
        throw ConfigError("config field kernel.family: unknown family '" + c.kernel_family +
                          "'");
    c.d = detail::config_field<int>(j, "kernel.d");
    if (c.d < 1 || c.d > 3) throw ConfigError("config field kernel.d: must be 1, 2, or 3");
    c.kernel_param = detail::config_field<double>(j, "kernel.param");
    if (!(c.kernel_param > 0))
        throw ConfigError("config field kernel.param: must be positive");

    c.mu_family = detail::config_field<std::string>(j, "mu.family");
    if (c.mu_family == "constant") {
        c.mu_base = detail::config_field<double>(j, "mu.base");
        c.mu_alpha = 0.0;
    } else if (c.mu_family == "cosine_product") {
        c.mu_base = detail::config_field<double>(j, "mu.base");
        c.mu_alpha = detail::config_field<double>(j, "mu.alpha");
    } else {
        throw ConfigError("config field mu.family: unknown family '" + c.mu_family + "'");
    }
    if (!(c.mu_base > 0)) throw ConfigError("config field mu.base: must be positive");

    c.grid_N = detail::config_field<int>(j, "grid_N");
    if (c.grid_N < 8 || c.grid_N % 2 != 0)
        throw ConfigError("config field grid_N: must be an even integer >= 8");

    c.m_max = detail::config_field<int>(j, "threshold.m_max");
    if (c.m_max < 2 || c.m_max > 24)
        throw ConfigError("config field threshold.m_max: must be between 2 and 24");
    c.contour_points = detail::config_field<int>(j, "threshold.contour_points");
    if (c.contour_points < 64)
        throw ConfigError("config field threshold.contour_points: must be >= 64");

    c.eps_list = detail::config_field<std::vector<double>>(j, "rates.eps");
    if (c.eps_list.empty()) throw ConfigError("config field rates.eps: must be nonempty");
    for (std::size_t i = 0; i < c.eps_list.size(); ++i) {
        if (!(c.eps_list[i] > 0))
            throw ConfigError("config field rates.eps: values must be positive");
        if (i > 0 && !(c.eps_list[i] < c.eps_list[i - 1]))
            throw ConfigError("config field rates.eps: values must decrease strictly");
    }

    c.out_dir = detail::config_field<std::string>(j, "out_dir");
    c.seed = detail::config_field<std::uint64_t>(j, "seed");
    if (j.contains("tolerances"))
        c.tolerances =
            detail::config_field<std::map<std::string, double>>(j, "tolerances");
    return c;
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["schema"] = c.schema;
    j["kernel"] = {{"family", c.kernel_family}, {"d", c.d}, {"param", c.kernel_param}};
    if (c.mu_family == "constant")
        j["mu"] = {{"family", c.mu_family}, {"base", c.mu_base}};
    else
        j["mu"] = {{"family", c.mu_family}, {"base", c.mu_base}, {"alpha", c.mu_alpha}};
    j["grid_N"] = c.grid_N;
    j["threshold"] = {{"m_max", c.m_max}, {"contour_points", c.contour_points}};
    j["rates"] = {{"eps", c.eps_list}};
    j["out_dir"] = c.out_dir;
    j["seed"] = c.seed;
    j["tolerances"] = c.tolerances;
    return j;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    return config_from_json(j);
}

inline KernelSpec kernel_from_config(const ExperimentConfig& c) {
    if (c.kernel_family == "box") return KernelSpec::box(c.d, c.kernel_param);
    if (c.kernel_family == "gaussian") return KernelSpec::gaussian(c.d, c.kernel_param);
    return KernelSpec::exponential(c.d, c.kernel_param);
}

inline MuSpec mu_from_config(const ExperimentConfig& c) {
    if (c.mu_family == "constant") return MuSpec::constant(c.mu_base);
    return MuSpec::cosine_product(c.mu_base, c.mu_alpha);
}

inline Grid grid_from_config(const ExperimentConfig& c) { return make_grid(c.d, c.grid_N); }

/// 17 significant digits, '.' decimal, no locale surprises.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Full CSV text: header line plus one line per row, '\n' endings including
/// a trailing one.
inline std::string csv_table(const std::vector<std::string>& header,
                             const std::vector<std::vector<double>>& rows) {
    std::ostringstream os;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (i) os << ',';
        os << header[i];
    }
    os << '\n';
    for (const auto& row : rows) {
        if (row.size() != header.size())
            throw std::invalid_argument("csv row width does not match the header");
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) os << ',';
            os << format_double(row[i]);
        }
        os << '\n';
    }
    return os.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);  // binary keeps '\n' untranslated
    if (!out) throw std::runtime_error("cannot write " + path);
    out << content;
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

/// Constants dump keyed by the symbol names used throughout the reports.
inline nlohmann::json constants_to_json(const ConstantsBundle<double>& c) {
    nlohmann::json j;
    j["d"] = c.d;
    j["mu_minus"] = c.mu_minus;
    j["mu_plus"] = c.mu_plus;
    j["M0"] = c.m0;
    j["M1"] = c.m1;
    j["M2"] = c.m2;
    j["M3"] = c.m3;
    j["M4"] = c.m4;
    j["C_pi"] = c.c_pi;
    j["C_r_a"] = c.c_r_a;
    j["M_cal"] = c.m_cal;
    j["r_a"] = c.r_a;
    j["C_a"] = c.c_a;
    j["delta0"] = c.delta0;
    j["d0_bound"] = c.d0_bound;
    j["C1"] = c.c1;
    j["C2"] = c.c2;
    j["C3"] = c.c3;
    j["C4"] = c.c4;
    j["C5"] = c.c5;
    j["C6"] = c.c6;
    j["C_tilde_2pi"] = c.c_tilde_2pi;
    j["frak_C"] = c.frak_c;
    j["C5_tilde"] = c.c5_tilde;
    j["C6_tilde"] = c.c6_tilde;
    j["bold_C1"] = c.bold_c1;
    j["bold_C2"] = c.bold_c2;
    return j;
}

}  // namespace nlhom
