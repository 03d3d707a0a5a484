#include "koopwind/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace koopwind {

void ReferenceConfig::validate() const {
    require(samples > 0 && switch_k > 0 && switch_k < samples, "reference: need 0 < switch_k < samples");
    for (double f : base) require(f > 0.0 && f <= 1.0, "reference: factors must lie in (0, 1]");
    for (double f : amplitude) require(f > 0.0 && f <= 1.0, "reference: factors must lie in (0, 1]");
    require(cutoff > 0.0, "reference: cutoff must be positive");
}

double reference_signal(std::size_t k, double p_greedy, std::span<const double> deltap, const ReferenceConfig& cfg) {
    require(k < deltap.size(), "reference_signal: sample beyond the demand sequence");
    const std::size_t regime = k <= cfg.switch_k ? 0 : 1;
    return cfg.base[regime] * p_greedy + cfg.amplitude[regime] * p_greedy * deltap[k];
}

Vector reference_series(double p_greedy, std::span<const double> deltap, const ReferenceConfig& cfg) {
    cfg.validate();
    Vector r(cfg.samples);
    for (std::size_t k = 0; k < r.size(); ++k) r[k] = reference_signal(k, p_greedy, deltap, cfg);
    return r;
}

Vector synth_deltap(std::size_t n, std::uint64_t seed, double cutoff_hz, double dt) {
    require(n > 0, "synth_deltap: empty sequence");
    const Matrix e = generate_excitation(n, 1, -1.0, 1.0, cutoff_hz, dt, seed);
    Vector v(e.values().begin(), e.values().end());
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= double(n);
    double peak = 0.0;
    for (double& x : v) {
        x -= mean;
        peak = std::max(peak, std::abs(x));
    }
    if (peak > 0.0)
        for (double& x : v) x /= peak;
    return v;
}

Vector load_deltap(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw UsageError("cannot open '" + path + "'");
    Vector v;
    std::string line;
    while (std::getline(f, line)) {
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        char* end = nullptr;
        const double x = std::strtod(line.c_str() + first, &end);
        if (end == line.c_str() + first) throw UsageError("deltaP file: bad value '" + line + "'");
        v.push_back(x);
    }
    return v;
}

Vector deltap_for(const ReferenceConfig& cfg, double dt) {
    Vector v = cfg.deltap_file.empty() ? synth_deltap(cfg.samples, cfg.seed, cfg.cutoff, dt) : load_deltap(cfg.deltap_file);
    require(v.size() >= cfg.samples, "deltaP sequence shorter than the reference");
    return v;
}

double tracking_error(const SimLog& log, std::size_t settle) {
    require(log.size() > 0, "tracking_error: empty log");
    const std::size_t first = std::min(settle, log.size() - 1);
    double s = 0.0;
    for (std::size_t k = first; k < log.size(); ++k) s += (log.pref[k] - log.pwf[k]) * (log.pref[k] - log.pwf[k]);
    return std::sqrt(s / double(log.size() - first));
}

double actuator_activity(const SimLog& log, std::size_t settle) {
    require(log.size() > 0, "actuator_activity: empty log");
    const std::size_t first = std::min(std::max<std::size_t>(settle, 1), log.size());
    const std::size_t n = log.size() - std::min(settle, log.size() - 1);
    double s = 0.0;
    for (std::size_t k = first; k < log.size(); ++k)
        for (std::size_t i = 0; i < kTurbines; ++i) s += std::pow(log.ct[k][i] - log.ct[k - 1][i], 2);
    return s / double(n);
}

Metrics compute_metrics(const SimLog& log, std::size_t settle) {
    Metrics m;
    m.te_watts = tracking_error(log, settle);
    m.aa = actuator_activity(log, settle);
    const std::size_t first = std::min(settle, log.size() - 1);
    auto tail = [&](auto get) {
        Vector v;
        for (std::size_t k = first; k < log.size(); ++k) v.push_back(get(k));
        return v;
    };
    try {
        m.vaf["PWF"] = vaf(tail([&](std::size_t k) { return log.pref[k]; }), tail([&](std::size_t k) { return log.pwf[k]; }));
    } catch (const NumericalError&) {
    }
    if (!std::isnan(log.ur_est.back()[0])) {
        for (std::size_t i = 0; i < kTurbines; ++i) {
            try {
                m.vaf["Ur" + std::to_string(i + 1)] = vaf(tail([&](std::size_t k) { return log.ur_true[k][i]; }),
                                                          tail([&](std::size_t k) { return log.ur_est[k][i]; }));
            } catch (const NumericalError&) {
            }
        }
    }
    return m;
}

std::string to_string(ControllerKind c) {
    switch (c) {
        case ControllerKind::QlmpcAe1: return "qlmpc_ae1";
        case ControllerKind::KmpcAe2: return "kmpc_ae2";
        case ControllerKind::QlmpcK24: return "qlmpc_k24_baseline";
    }
    return "?";
}

ControllerKind parse_controller(const std::string& name) {
    for (ControllerKind c : {ControllerKind::QlmpcAe1, ControllerKind::KmpcAe2, ControllerKind::QlmpcK24})
        if (name == to_string(c)) return c;
    throw UsageError("unknown controller '" + name + "'");
}

void ScenarioConfig::validate() const {
    require(scenario == 1 || scenario == 2, "scenario must be 1 or 2");
    require(epsilon > -1.0, "scenario: epsilon must exceed -1");
    plant.validate();
    mpc.validate();
    reference.validate();
    for (double u : u0) require(u >= mpc.u_lb && u <= mpc.u_ub, "scenario: initial input outside the bounds");
}

PlantConfig ScenarioConfig::effective_plant() const {
    PlantConfig p = plant;
    p.cp_offset = scenario == 2 ? epsilon : 0.0;
    return p;
}

const std::string& ScenarioConfig::model_path() const {
    switch (controller) {
        case ControllerKind::QlmpcAe1: return ae1_model;
        case ControllerKind::KmpcAe2: return ae2_model;
        case ControllerKind::QlmpcK24: return k24_model;
    }
    return ae1_model;
}

ScenarioOutcome run_scenario(const ScenarioConfig& cfg) {
    cfg.validate();
    const std::string& path = cfg.model_path();
    if (!std::filesystem::exists(path)) throw UsageError("model file '" + path + "' not found");
    const KoopmanModel model = read_model(path);
    const PlantConfig plant = cfg.effective_plant();

    std::unique_ptr<Controller> ctl;
    if (cfg.controller == ControllerKind::KmpcAe2) {
        ctl = std::make_unique<KmpcController>(model, cfg.mpc, cfg.u0, to_string(cfg.controller));
    } else {
        // The controller's turbine model is the nominal one, whatever the plant's drift.
        PlantConfig nominal = cfg.plant;
        nominal.cp_offset = 0.0;
        ctl = std::make_unique<QlmpcController>(model, TurbineParameters::from(nominal), cfg.mpc, cfg.u0,
                                                TurbinePair{plant.v_inf, plant.v_inf}, to_string(cfg.controller));
    }

    ScenarioOutcome out;
    out.controller = ctl->name();
    out.p_greedy = greedy_power(plant);
    const Vector reference = reference_series(out.p_greedy, deltap_for(cfg.reference, plant.dt), cfg.reference);
    out.log = closed_loop(plant, settled_state(plant, cfg.u0), *ctl, reference, cfg.reference.samples);
    out.metrics = compute_metrics(out.log, cfg.settle);
    return out;
}

std::string format_report(const std::vector<ReportRow>& rows, std::size_t settle) {
    std::ostringstream out;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-9s %-20s %10s %10s %9s\n", "scenario", "controller", "TE [kW]", "AA [1e-3]",
                  "VAF PWF");
    out << buf;
    for (const ReportRow& r : rows) {
        const auto it = r.metrics.vaf.find("PWF");
        const double v = it == r.metrics.vaf.end() ? std::nan("") : it->second;
        std::snprintf(buf, sizeof buf, "%-9d %-20s %10.2f %10.3f %9.2f\n", r.scenario, r.controller.c_str(),
                      r.metrics.te_watts / 1e3, r.metrics.aa * 1e3, v);
        out << buf;
    }
    out << "TE: RMS of P_ref - P_WF; AA: mean squared thrust increment; first " << settle << " samples excluded.\n";
    return out.str();
}

void write_metrics_json(const std::string& path, const ReportRow& row) {
    nlohmann::ordered_json j;
    j["te_watts"] = row.metrics.te_watts;
    j["aa"] = row.metrics.aa;
    j["vaf"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : row.metrics.vaf) j["vaf"][k] = v;
    j["scenario"] = row.scenario;
    j["controller"] = row.controller;
    j["seed"] = row.seed;
    std::ofstream f(path, std::ios::binary);
    if (!f) throw UsageError("cannot open '" + path + "' for writing");
    f << j.dump(2) << '\n';
}

ReportRow read_metrics_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw UsageError("cannot open '" + path + "'");
    try {
        const nlohmann::json j = nlohmann::json::parse(f);
        ReportRow r;
        r.metrics.te_watts = j.at("te_watts").get<double>();
        r.metrics.aa = j.at("aa").get<double>();
        for (const auto& [k, v] : j.at("vaf").items()) r.metrics.vaf[k] = v.get<double>();
        r.scenario = j.at("scenario").get<int>();
        r.controller = j.at("controller").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw UsageError("metrics file '" + path + "': " + e.what());
    }
}

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return {};
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

const std::vector<std::string> kSections{"plant", "training", "mpc", "reference", "scenario", "dataset"};

double to_double(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double x = 0.0;
    try {
        x = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != v.size() || v.empty()) throw UsageError("config: '" + key + "' expects a number, got '" + v + "'");
    return x;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
    const double x = to_double(key, v);
    if (x < 0 || x != std::floor(x)) throw UsageError("config: '" + key + "' expects a nonnegative integer");
    return std::uint64_t(x);
}

std::vector<double> to_list(const std::string& key, const std::string& v) {
    std::vector<double> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(to_double(key, trim(item)));
    return out;
}

template <std::size_t N>
std::array<double, N> to_array(const std::string& key, const std::string& v) {
    const std::vector<double> l = to_list(key, v);
    if (l.size() != N) throw UsageError("config: '" + key + "' expects " + std::to_string(N) + " values");
    std::array<double, N> a{};
    std::copy(l.begin(), l.end(), a.begin());
    return a;
}

[[noreturn]] void unknown(const std::string& section, const std::string& key) {
    throw UsageError("config: unknown key '" + key + "' in [" + section + "]");
}

}  // namespace

ConfigFile ConfigFile::parse(std::istream& in) {
    ConfigFile c;
    std::string line, section;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw UsageError("config line " + std::to_string(n) + ": bad section header");
            section = trim(line.substr(1, line.size() - 2));
            if (std::find(kSections.begin(), kSections.end(), section) == kSections.end())
                throw UsageError("config: unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos || section.empty())
            throw UsageError("config line " + std::to_string(n) + ": expected key = value inside a section");
        c.set(section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return c;
}

ConfigFile ConfigFile::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw UsageError("cannot open config '" + path + "'");
    return parse(f);
}

void ConfigFile::set(const std::string& section, const std::string& key, const std::string& value) {
    sections_[section][key] = value;
}

bool ConfigFile::has(const std::string& section, const std::string& key) const {
    const auto it = sections_.find(section);
    return it != sections_.end() && it->second.count(key);
}

const std::map<std::string, std::string>& ConfigFile::section(const std::string& name) const {
    static const std::map<std::string, std::string> empty;
    const auto it = sections_.find(name);
    return it == sections_.end() ? empty : it->second;
}

void apply_plant(const ConfigFile& c, PlantConfig& p) {
    for (const auto& [k, v] : c.section("plant")) {
        if (k == "v_inf") p.v_inf = to_double(k, v);
        else if (k == "diameter") p.diameter = to_double(k, v);
        else if (k == "spacing") p.spacing = to_double(k, v);
        else if (k == "dt") p.dt = to_double(k, v);
        else if (k == "tau") p.tau = to_double(k, v);
        else if (k == "rho_a") p.rho_a = to_double(k, v);
        else if (k == "n_r") p.n_r = int(to_uint(k, v));
        else if (k == "k_w") p.k_w = to_double(k, v);
        else if (k == "t_mix") p.t_mix = to_double(k, v);
        else if (k == "ct_max") p.ct_max = to_double(k, v);
        else if (k == "cp_offset") p.cp_offset = to_double(k, v);
        else if (k == "rotor_induction") p.rotor_induction = to_double(k, v);
        else if (k == "turbulence") p.turbulence = to_double(k, v);
        else if (k == "noise_seed") p.noise_seed = to_uint(k, v);
        else unknown("plant", k);
    }
    p.validate();
}

void apply_training(const ConfigFile& c, TrainingConfig& t) {
    for (const auto& [k, v] : c.section("training")) {
        if (k == "eta") t.eta = to_double(k, v);
        else if (k == "epochs") t.epochs = int(to_uint(k, v));
        else if (k == "batch") t.batch = to_uint(k, v);
        else if (k == "n_g") t.n_g = to_uint(k, v);
        else if (k == "n_p") t.n_p = to_uint(k, v);
        else if (k == "alpha") t.alpha = to_array<3>(k, v);
        else if (k == "seed") t.seed = to_uint(k, v);
        else if (k == "optimizer") {
            if (v == "adam") t.optimizer = Optimizer::Adam;
            else if (v == "sgd") t.optimizer = Optimizer::Sgd;
            else throw UsageError("config: optimizer must be adam or sgd");
        } else if (k == "encoder_width") t.encoder_width = to_uint(k, v);
        else if (k == "encoder_layers") t.encoder_layers = to_uint(k, v);
        else if (k == "activation") t.activation = parse_activation(v);
        else if (k == "decoder_width") t.decoder_width = to_uint(k, v);
        else if (k == "decoder_layers") t.decoder_layers = to_uint(k, v);
        else if (k == "divergence_factor") t.divergence_factor = to_double(k, v);
        else unknown("training", k);
    }
}

void apply_mpc(const ConfigFile& c, MpcConfig& m) {
    for (const auto& [k, v] : c.section("mpc")) {
        if (k == "n_h") m.n_h = to_uint(k, v);
        else if (k == "q") m.q = to_double(k, v);
        else if (k == "r") m.r = to_double(k, v);
        else if (k == "u_lb") m.u_lb = to_double(k, v);
        else if (k == "u_ub") m.u_ub = to_double(k, v);
        else if (k == "schedule_iters") m.schedule_iters = int(to_uint(k, v));
        else if (k == "du_max") {
            if (v == "off" || v == "none") m.du_max.reset();
            else m.du_max = to_double(k, v);
        } else if (k == "wind_update") m.wind_update = parse_wind_update(v);
        else if (k == "min_thrust") m.min_thrust = to_double(k, v);
        else unknown("mpc", k);
    }
    m.validate();
}

void apply_reference(const ConfigFile& c, ReferenceConfig& r) {
    for (const auto& [k, v] : c.section("reference")) {
        if (k == "samples") r.samples = to_uint(k, v);
        else if (k == "switch_k") r.switch_k = to_uint(k, v);
        else if (k == "base") r.base = to_array<2>(k, v);
        else if (k == "amplitude") r.amplitude = to_array<2>(k, v);
        else if (k == "deltap_file") r.deltap_file = v;
        else if (k == "seed") r.seed = to_uint(k, v);
        else if (k == "cutoff") r.cutoff = to_double(k, v);
        else unknown("reference", k);
    }
    r.validate();
}

void apply_dataset(const ConfigFile& c, DatasetConfig& d) {
    for (const auto& [k, v] : c.section("dataset")) {
        if (k == "samples") d.samples = to_uint(k, v);
        else if (k == "seed") d.seed = to_uint(k, v);
        else if (k == "lo") d.lo = to_double(k, v);
        else if (k == "hi") d.hi = to_double(k, v);
        else if (k == "cutoff") d.cutoff = to_double(k, v);
        else if (k == "train_fraction") d.train_fraction = to_double(k, v);
        else unknown("dataset", k);
    }
    require(d.samples >= 10 && d.lo < d.hi && d.cutoff > 0.0, "dataset: invalid excitation settings");
    require(d.train_fraction > 0.0 && d.train_fraction < 1.0, "dataset: train_fraction must lie in (0, 1)");
}

void apply_scenario(const ConfigFile& c, ScenarioConfig& s) {
    apply_plant(c, s.plant);
    apply_mpc(c, s.mpc);
    apply_reference(c, s.reference);
    for (const auto& [k, v] : c.section("scenario")) {
        if (k == "scenario") s.scenario = int(to_uint(k, v));
        else if (k == "epsilon") s.epsilon = to_double(k, v);
        else if (k == "controller") s.controller = parse_controller(v);
        else if (k == "ae1_model") s.ae1_model = v;
        else if (k == "ae2_model") s.ae2_model = v;
        else if (k == "k24_model") s.k24_model = v;
        else if (k == "u0") s.u0 = to_array<2>(k, v);
        else if (k == "settle") s.settle = to_uint(k, v);
        else if (k == "seed") s.seed = to_uint(k, v);
        else unknown("scenario", k);
    }
    s.validate();
}

KoopmanModel identify_k24(const Dataset& d) {
    return identify_edmd(d.with_states({"Ur1", "Ur2"}), Lifting::physical(2, {2, 5, 10, 20}), {"Ur1", "Ur2"}, true)
        .model;
}

}  // namespace koopwind
