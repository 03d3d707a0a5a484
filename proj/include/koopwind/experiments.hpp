#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "koopwind/autoencoder.hpp"
#include "koopwind/mpc.hpp"
#include "koopwind/plant.hpp"

namespace koopwind {

struct ReferenceConfig {
    std::size_t samples = 1000;
    std::size_t switch_k = 400;
    std::array<double, 2> base{0.8, 0.95};
    std::array<double, 2> amplitude{0.35, 0.15};
    std::string deltap_file;  // empty: synthesize
    std::uint64_t seed = 11;
    double cutoff = 0.02;  // Hz

    void validate() const;
};

/// Farm-power demand at sample k.
double reference_signal(std::size_t k, double p_greedy, std::span<const double> deltap, const ReferenceConfig& cfg);
Vector reference_series(double p_greedy, std::span<const double> deltap, const ReferenceConfig& cfg);

/// Zero-mean band-limited sequence with peak magnitude 1.
Vector synth_deltap(std::size_t n, std::uint64_t seed, double cutoff_hz, double dt = 1.0);
/// One value per line; blank lines and lines starting with '#' are skipped.
Vector load_deltap(const std::string& path);
Vector deltap_for(const ReferenceConfig& cfg, double dt);

/// RMS of P_ref - P_WF over samples [settle, n).
double tracking_error(const SimLog& log, std::size_t settle = 50);
/// Mean of ||u_k - u_{k-1}||^2 over samples [max(settle, 1), n).
double actuator_activity(const SimLog& log, std::size_t settle = 50);

struct Metrics {
    double te_watts = 0.0;
    double aa = 0.0;
    std::map<std::string, double> vaf;  // percent
};

/// TE, AA and VAF of the farm power against the reference (and of the wind
/// estimates when logged), all over samples [settle, n).
Metrics compute_metrics(const SimLog& log, std::size_t settle = 50);

enum class ControllerKind { QlmpcAe1, KmpcAe2, QlmpcK24 };

std::string to_string(ControllerKind c);
ControllerKind parse_controller(const std::string& name);

struct DatasetConfig {
    std::size_t samples = 4000;
    std::uint64_t seed = 7;
    double lo = 0.0;
    double hi = 2.0;
    double cutoff = 0.05;  // Hz
    double train_fraction = 0.75;
};

struct ScenarioConfig {
    int scenario = 1;
    double epsilon = 0.05;  // plant cp offset in scenario 2
    ControllerKind controller = ControllerKind::QlmpcAe1;
    std::string ae1_model = "ae1.model";
    std::string ae2_model = "ae2.model";
    std::string k24_model = "k24.model";
    PlantConfig plant;
    MpcConfig mpc;
    ReferenceConfig reference;
    TurbinePair u0{1.0, 1.0};
    std::size_t settle = 50;
    std::uint64_t seed = 1;

    void validate() const;
    /// The plant actually simulated: epsilon applied in scenario 2 only.
    PlantConfig effective_plant() const;
    const std::string& model_path() const;
};

struct ScenarioOutcome {
    Metrics metrics;
    SimLog log;
    double p_greedy = 0.0;
    std::string controller;
};

/// Builds the plant and controller, synthesizes the reference and runs the
/// closed loop. Model files are checked before the simulation starts.
ScenarioOutcome run_scenario(const ScenarioConfig& cfg);

/// Aligned plain-text table of metrics rows.
struct ReportRow {
    int scenario = 1;
    std::string controller;
    Metrics metrics;
    std::uint64_t seed = 0;
};

std::string format_report(const std::vector<ReportRow>& rows, std::size_t settle = 50);

void write_metrics_json(const std::string& path, const ReportRow& row);
ReportRow read_metrics_json(const std::string& path);

/// `[section]` headers and `key = value` lines; '#' starts a comment.
class ConfigFile {
public:
    static ConfigFile parse(std::istream& in);
    static ConfigFile load(const std::string& path);

    void set(const std::string& section, const std::string& key, const std::string& value);
    bool has(const std::string& section, const std::string& key) const;
    const std::map<std::string, std::string>& section(const std::string& name) const;

private:
    std::map<std::string, std::map<std::string, std::string>> sections_;
};

/// Each throws UsageError on unknown keys or malformed values.
void apply_plant(const ConfigFile& c, PlantConfig& p);
void apply_training(const ConfigFile& c, TrainingConfig& t);
void apply_mpc(const ConfigFile& c, MpcConfig& m);
void apply_reference(const ConfigFile& c, ReferenceConfig& r);
void apply_dataset(const ConfigFile& c, DatasetConfig& d);
void apply_scenario(const ConfigFile& c, ScenarioConfig& s);

/// Physically lifted EDMD wind model: powers, cross terms, moving averages.
KoopmanModel identify_k24(const Dataset& d);

}  // namespace koopwind
