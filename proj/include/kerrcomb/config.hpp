#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "kerrcomb/dsp.hpp"
#include "kerrcomb/params.hpp"

namespace kerrcomb {

using json = nlohmann::json;

struct ThresholdConfig {
    double p_min_w = 1e-5;
    double p_max_w = 1.0;
};

struct SweepConfig {
    std::vector<double> p_over_pth;  // preferred grid, in threshold units
    std::vector<double> p_watts;     // alternative absolute grid
    double omega_hz = 4e6;
    int m_meas = 2;
    int threads = 1;
};

struct OracleConfig {
    int M = 2;
    std::vector<int> cutoff{3, 3, 3, 3, 3};
    double g = 1.0;
    double alpha_pump = 1.0;
    std::vector<double> t_grid;         // evolution times in units of 1/g
    std::vector<double> detuning;       // optional diagonal number terms
    std::size_t max_dim = 2000000;
    int n_random_states = 100;
    std::uint64_t seed = 7;
};

struct DspRunConfig {
    dsp::AcquisitionParams acq{5e9, 125000, 50};
    double omega_hz = 4e6;
    int band_halfwidth = 3;
    std::uint64_t seed = 1;
    double lowpass_hz = 0.0;  // 0 disables the filter stage
    std::string window = "rectangular";

    // synthesis ("injected" dB targets or "simulated" from the comb model)
    std::string synth_mode = "injected";
    double pair1_db = -2.5;
    double pair2_db = -1.0;
    double varc_db = -2.0;
    double p_over_pth = 1.1;  // simulated mode operating point
    std::array<double, 4> dc_levels{1.0, 1.0, 1.0, 1.0};
    std::array<double, 4> delay_samples{0.0, 0.0, 0.0, 0.0};

    std::vector<double> calibration_levels{0.5, 1.0, 2.0, 4.0, 8.0};
    int calibration_n_segments = 200;      // flat source: cheap to average hard
    int calibration_band_halfwidth = 40;
    std::string traces_file;       // input for `dsp process`
    std::string traces_format = "binary";  // or "csv"
    std::string calibration_file;  // slopes used by `dsp process`
};

struct RunConfig {
    SystemParams params;
    ThresholdConfig threshold;
    SweepConfig sweep;
    OracleConfig oracle;
    DspRunConfig dsp;
    std::string output_dir = "out";
    std::uint64_t config_hash = 0;
};

namespace detail {

[[noreturn]] inline void config_fail(const std::string& path, const std::string& what) {
    throw ConfigError(path + ": " + what);
}

inline void reject_unknown_keys(const json& j, const std::set<std::string>& known,
                                const std::string& path) {
    for (const auto& [key, _] : j.items())
        if (!known.count(key)) config_fail(path + "." + key, "unknown key");
}

inline double get_num(const json& j, const std::string& path) {
    if (!j.is_number()) config_fail(path, "expected a number");
    return j.get<double>();
}

// scalar -> flat array, or explicit per-mode array of length 2M+1
inline std::vector<double> mode_array(const json& j, int M, const std::string& path) {
    if (j.is_number()) return flat_mode_array(M, j.get<double>());
    if (j.is_array()) {
        if (static_cast<int>(j.size()) != 2 * M + 1)
            config_fail(path, "expected 2M+1 = " + std::to_string(2 * M + 1) + " entries");
        std::vector<double> out;
        for (std::size_t i = 0; i < j.size(); ++i)
            out.push_back(get_num(j[i], path + "[" + std::to_string(i) + "]"));
        return out;
    }
    config_fail(path, "expected a number or an array");
}

inline std::uint64_t fnv1a_hash(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace detail

inline SystemParams parse_params(const json& j, const std::string& path = "params") {
    detail::reject_unknown_keys(j,
                                {"M", "kappa_total", "kappa_ext", "detuning", "g", "pump_power",
                                 "pump_wavelength", "eta_F", "eta_g", "eta_opt", "eta_pd",
                                 "electronic_noise_rel"},
                                path);
    SystemParams p = default_params();
    if (j.contains("M")) {
        if (!j["M"].is_number_integer()) detail::config_fail(path + ".M", "expected an integer");
        p.M = j["M"].get<int>();
        if (p.M < 1) detail::config_fail(path + ".M", "need at least modes +/-1 (M >= 1)");
        // re-derive the default arrays at the new width before overrides
        const double kt = p.kappa_total[0], ke = p.kappa_ext[0];
        p.kappa_total = flat_mode_array(p.M, kt);
        p.kappa_ext = flat_mode_array(p.M, ke);
        p.detuning = parabolic_detuning(p.M, 0.0, 2.0 * kt);
    }
    if (j.contains("kappa_total"))
        p.kappa_total = detail::mode_array(j["kappa_total"], p.M, path + ".kappa_total");
    if (j.contains("kappa_ext"))
        p.kappa_ext = detail::mode_array(j["kappa_ext"], p.M, path + ".kappa_ext");
    if (j.contains("detuning")) {
        const json& d = j["detuning"];
        if (d.is_object()) {
            detail::reject_unknown_keys(d, {"delta0", "D2"}, path + ".detuning");
            const double delta0 =
                d.contains("delta0") ? detail::get_num(d["delta0"], path + ".detuning.delta0") : 0.0;
            const double D2 = d.contains("D2") ? detail::get_num(d["D2"], path + ".detuning.D2") : 0.0;
            p.detuning = parabolic_detuning(p.M, delta0, D2);
        } else {
            p.detuning = detail::mode_array(d, p.M, path + ".detuning");
        }
    }
    auto opt = [&](const char* key, double& field) {
        if (j.contains(key)) field = detail::get_num(j[key], path + "." + key);
    };
    opt("g", p.g);
    opt("pump_power", p.pump_power);
    opt("pump_wavelength", p.pump_wavelength);
    opt("eta_F", p.eta_F);
    opt("eta_g", p.eta_g);
    opt("eta_opt", p.eta_opt);
    opt("eta_pd", p.eta_pd);
    opt("electronic_noise_rel", p.electronic_noise_rel);
    return validate_params(p);
}

inline RunConfig parse_config(const json& j) {
    detail::reject_unknown_keys(
        j, {"params", "threshold", "sweep", "oracle", "dsp", "output_dir"}, "config");
    RunConfig cfg;
    if (j.contains("params")) cfg.params = parse_params(j["params"]);
    else cfg.params = validate_params(default_params());

    if (j.contains("threshold")) {
        const json& t = j["threshold"];
        detail::reject_unknown_keys(t, {"p_min_w", "p_max_w"}, "threshold");
        if (t.contains("p_min_w")) cfg.threshold.p_min_w = detail::get_num(t["p_min_w"], "threshold.p_min_w");
        if (t.contains("p_max_w")) cfg.threshold.p_max_w = detail::get_num(t["p_max_w"], "threshold.p_max_w");
    }

    if (j.contains("sweep")) {
        const json& s = j["sweep"];
        detail::reject_unknown_keys(
            s, {"p_over_pth", "p_watts", "omega_hz", "m_meas", "threads"}, "sweep");
        auto grid = [&](const char* key, std::vector<double>& out) {
            if (!s.contains(key)) return;
            const json& g = s[key];
            if (g.is_array()) {
                for (std::size_t i = 0; i < g.size(); ++i)
                    out.push_back(detail::get_num(g[i], std::string("sweep.") + key));
            } else if (g.is_object()) {
                detail::reject_unknown_keys(g, {"from", "to", "steps"}, std::string("sweep.") + key);
                const double from = detail::get_num(g.at("from"), "sweep.from");
                const double to = detail::get_num(g.at("to"), "sweep.to");
                const int steps = g.at("steps").get<int>();
                if (steps < 2) detail::config_fail(std::string("sweep.") + key, "steps must be >= 2");
                for (int i = 0; i < steps; ++i)
                    out.push_back(from + (to - from) * double(i) / double(steps - 1));
            } else {
                detail::config_fail(std::string("sweep.") + key, "expected an array or {from,to,steps}");
            }
        };
        grid("p_over_pth", cfg.sweep.p_over_pth);
        grid("p_watts", cfg.sweep.p_watts);
        if (s.contains("omega_hz")) cfg.sweep.omega_hz = detail::get_num(s["omega_hz"], "sweep.omega_hz");
        if (s.contains("m_meas")) cfg.sweep.m_meas = s["m_meas"].get<int>();
        if (s.contains("threads")) cfg.sweep.threads = s["threads"].get<int>();
        if (cfg.sweep.m_meas < 1 || cfg.sweep.m_meas > cfg.params.M)
            detail::config_fail("sweep.m_meas", "must lie in [1, M]");
        if (cfg.sweep.threads < 1) detail::config_fail("sweep.threads", "must be >= 1");
    }

    if (j.contains("oracle")) {
        const json& o = j["oracle"];
        detail::reject_unknown_keys(o,
                                    {"M", "cutoff", "g", "alpha_pump", "t_grid", "detuning",
                                     "max_dim", "n_random_states", "seed"},
                                    "oracle");
        if (o.contains("M")) cfg.oracle.M = o["M"].get<int>();
        if (cfg.oracle.M < 1) detail::config_fail("oracle.M", "need at least modes +/-1");
        cfg.oracle.cutoff.assign(2 * cfg.oracle.M + 1, 3);
        if (o.contains("cutoff")) {
            const json& c = o["cutoff"];
            if (c.is_number_integer()) {
                cfg.oracle.cutoff.assign(2 * cfg.oracle.M + 1, c.get<int>());
            } else if (c.is_array()) {
                if (static_cast<int>(c.size()) != 2 * cfg.oracle.M + 1)
                    detail::config_fail("oracle.cutoff", "expected 2M+1 entries");
                cfg.oracle.cutoff.clear();
                for (const auto& v : c) cfg.oracle.cutoff.push_back(v.get<int>());
            } else {
                detail::config_fail("oracle.cutoff", "expected an integer or an array");
            }
            for (int c2 : cfg.oracle.cutoff)
                if (c2 < 1) detail::config_fail("oracle.cutoff", "trivial space (cutoff < 1)");
        }
        if (o.contains("g")) cfg.oracle.g = detail::get_num(o["g"], "oracle.g");
        if (o.contains("alpha_pump"))
            cfg.oracle.alpha_pump = detail::get_num(o["alpha_pump"], "oracle.alpha_pump");
        if (o.contains("t_grid")) {
            const json& t = o["t_grid"];
            if (t.is_array()) {
                for (const auto& v : t) cfg.oracle.t_grid.push_back(v.get<double>());
            } else if (t.is_object()) {
                detail::reject_unknown_keys(t, {"to", "steps"}, "oracle.t_grid");
                const double to = detail::get_num(t.at("to"), "oracle.t_grid.to");
                const int steps = t.at("steps").get<int>();
                for (int i = 1; i <= steps; ++i) cfg.oracle.t_grid.push_back(to * i / steps);
            } else {
                detail::config_fail("oracle.t_grid", "expected an array or {to,steps}");
            }
        }
        if (o.contains("detuning")) {
            const json& d = o["detuning"];
            if (!d.is_array() || static_cast<int>(d.size()) != 2 * cfg.oracle.M + 1)
                detail::config_fail("oracle.detuning", "expected 2M+1 entries");
            for (const auto& v : d) cfg.oracle.detuning.push_back(v.get<double>());
        }
        if (o.contains("max_dim")) cfg.oracle.max_dim = o["max_dim"].get<std::size_t>();
        if (o.contains("n_random_states"))
            cfg.oracle.n_random_states = o["n_random_states"].get<int>();
        if (o.contains("seed")) cfg.oracle.seed = o["seed"].get<std::uint64_t>();
    }
    if (cfg.oracle.t_grid.empty())
        for (int i = 1; i <= 10; ++i) cfg.oracle.t_grid.push_back(0.2 * i);

    if (j.contains("dsp")) {
        const json& d = j["dsp"];
        detail::reject_unknown_keys(
            d,
            {"sample_rate", "segment_length", "n_segments", "omega_hz", "band_halfwidth", "seed",
             "lowpass_hz", "window", "synth_mode", "pair1_db", "pair2_db", "varc_db", "p_over_pth",
             "dc_levels", "delay_samples", "calibration_levels", "calibration_n_segments",
             "calibration_band_halfwidth", "traces_file", "traces_format", "calibration_file"},
            "dsp");
        auto& c = cfg.dsp;
        if (d.contains("sample_rate")) c.acq.sample_rate = detail::get_num(d["sample_rate"], "dsp.sample_rate");
        if (d.contains("segment_length")) c.acq.segment_length = d["segment_length"].get<std::size_t>();
        if (d.contains("n_segments")) c.acq.n_segments = d["n_segments"].get<int>();
        if (d.contains("omega_hz")) c.omega_hz = detail::get_num(d["omega_hz"], "dsp.omega_hz");
        if (d.contains("band_halfwidth")) c.band_halfwidth = d["band_halfwidth"].get<int>();
        if (d.contains("seed")) c.seed = d["seed"].get<std::uint64_t>();
        if (d.contains("lowpass_hz")) c.lowpass_hz = detail::get_num(d["lowpass_hz"], "dsp.lowpass_hz");
        if (d.contains("window")) {
            c.window = d["window"].get<std::string>();
            if (c.window != "rectangular" && c.window != "hann")
                detail::config_fail("dsp.window", "expected 'rectangular' or 'hann'");
        }
        if (d.contains("synth_mode")) {
            c.synth_mode = d["synth_mode"].get<std::string>();
            if (c.synth_mode != "injected" && c.synth_mode != "simulated")
                detail::config_fail("dsp.synth_mode", "expected 'injected' or 'simulated'");
        }
        if (d.contains("pair1_db")) c.pair1_db = detail::get_num(d["pair1_db"], "dsp.pair1_db");
        if (d.contains("pair2_db")) c.pair2_db = detail::get_num(d["pair2_db"], "dsp.pair2_db");
        if (d.contains("varc_db")) c.varc_db = detail::get_num(d["varc_db"], "dsp.varc_db");
        if (d.contains("p_over_pth")) c.p_over_pth = detail::get_num(d["p_over_pth"], "dsp.p_over_pth");
        auto arr4 = [&](const char* key, std::array<double, 4>& out) {
            if (!d.contains(key)) return;
            const json& a = d[key];
            if (!a.is_array() || a.size() != 4)
                detail::config_fail(std::string("dsp.") + key, "expected 4 entries");
            for (int i = 0; i < 4; ++i) out[i] = a[i].get<double>();
        };
        arr4("dc_levels", c.dc_levels);
        arr4("delay_samples", c.delay_samples);
        if (d.contains("calibration_levels")) {
            c.calibration_levels.clear();
            for (const auto& v : d["calibration_levels"])
                c.calibration_levels.push_back(v.get<double>());
        }
        if (d.contains("calibration_n_segments"))
            c.calibration_n_segments = d["calibration_n_segments"].get<int>();
        if (d.contains("calibration_band_halfwidth"))
            c.calibration_band_halfwidth = d["calibration_band_halfwidth"].get<int>();
        if (d.contains("traces_file")) c.traces_file = d["traces_file"].get<std::string>();
        if (d.contains("traces_format")) {
            c.traces_format = d["traces_format"].get<std::string>();
            if (c.traces_format != "binary" && c.traces_format != "csv")
                detail::config_fail("dsp.traces_format", "expected 'binary' or 'csv'");
        }
        if (d.contains("calibration_file"))
            c.calibration_file = d["calibration_file"].get<std::string>();
    }

    if (j.contains("output_dir")) cfg.output_dir = j["output_dir"].get<std::string>();

    cfg.config_hash = detail::fnv1a_hash(j.dump());
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot open " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config: " + std::string(e.what()));
    }
    return parse_config(j);
}

// the documented default configuration, reproducing the reference hardware
inline json default_config_json() {
    json j;
    const SystemParams p = default_params();
    j["params"] = {{"M", p.M},
                   {"kappa_total", p.kappa_total[0]},
                   {"kappa_ext", p.kappa_ext[0]},
                   {"detuning", {{"delta0", 0.0}, {"D2", 2.0 * p.kappa_total[0]}}},
                   {"g", p.g},
                   {"pump_power", p.pump_power},
                   {"pump_wavelength", p.pump_wavelength},
                   {"eta_F", p.eta_F},
                   {"eta_g", p.eta_g},
                   {"eta_opt", p.eta_opt},
                   {"eta_pd", p.eta_pd},
                   {"electronic_noise_rel", p.electronic_noise_rel}};
    j["threshold"] = {{"p_min_w", 1e-5}, {"p_max_w", 1.0}};
    j["sweep"] = {{"p_over_pth", {{"from", 1.05}, {"to", 1.35}, {"steps", 13}}},
                  {"omega_hz", 4e6},
                  {"m_meas", 2},
                  {"threads", 1}};
    j["oracle"] = {{"M", 2},       {"cutoff", 3},         {"g", 1.0},
                   {"alpha_pump", 1.0}, {"t_grid", {{"to", 2.0}, {"steps", 10}}},
                   {"seed", 7},    {"n_random_states", 100}};
    j["dsp"] = {{"sample_rate", 5e9},
                {"segment_length", 125000},
                {"n_segments", 50},
                {"omega_hz", 4e6},
                {"band_halfwidth", 3},
                {"seed", 1},
                {"lowpass_hz", 20e6},
                {"synth_mode", "injected"},
                {"pair1_db", -2.5},
                {"pair2_db", -1.0},
                {"varc_db", -2.0},
                {"delay_samples", {0.0, 10.0, 0.0, 0.0}},
                {"calibration_levels", {0.5, 1.0, 2.0, 4.0, 8.0}}};
    j["output_dir"] = "out";
    return j;
}

}  // namespace kerrcomb
