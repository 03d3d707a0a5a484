// Command-line front end: simulate, identify, evaluate, control, report.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "koopwind/experiments.hpp"

using namespace koopwind;

namespace {

struct Options {
    std::string config;
    // simulate
    std::optional<std::size_t> n;
    std::optional<std::uint64_t> seed;
    std::optional<double> epsilon;
    std::string data_out = "data.csv";
    // identify / evaluate
    std::string method;
    std::string data = "data.csv";
    std::string model_out;
    std::string model;
    std::string curve;
    std::optional<std::size_t> lifted;
    std::optional<int> epochs;
    std::optional<std::size_t> from, to;
    // control
    std::optional<int> scenario;
    std::string controller;
    std::string ae1, ae2, k24;
    std::optional<std::size_t> samples;
    std::string prefix = "run";
    // report
    std::vector<std::string> metrics;
    std::string report_out;
};

ConfigFile load(const Options& o) { return o.config.empty() ? ConfigFile{} : ConfigFile::load(o.config); }

std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::size_t split_point(const Dataset& d, const DatasetConfig& dc) {
    return std::size_t(std::floor(dc.train_fraction * double(d.samples())));
}

void print_vaf(const KoopmanModel& m, const Dataset& d, std::size_t begin, std::size_t end) {
    const std::vector<double> v = evaluate_vaf(m, d, begin, end);
    std::printf("%-10s %8s   (samples %zu..%zu)\n", "channel", "VAF [%]", begin, end - 1);
    for (std::size_t i = 0; i < v.size(); ++i) std::printf("%-10s %8.2f\n", m.output_names[i].c_str(), v[i]);
}

int run_simulate(const Options& o) {
    ConfigFile c = load(o);
    if (o.n) c.set("dataset", "samples", std::to_string(*o.n));
    if (o.seed) c.set("dataset", "seed", std::to_string(*o.seed));
    if (o.epsilon) c.set("plant", "cp_offset", num(*o.epsilon));
    PlantConfig p;
    DatasetConfig dc;
    apply_plant(c, p);
    apply_dataset(c, dc);
    const Dataset d = simulate_openloop(p, generate_excitation(dc.samples, 2, dc.lo, dc.hi, dc.cutoff, p.dt, dc.seed));
    write_dataset_csv(o.data_out, d);
    std::printf("wrote %zu samples to %s\n", d.samples(), o.data_out.c_str());
    return 0;
}

int run_identify(const Options& o) {
    ConfigFile c = load(o);
    if (o.lifted) c.set("training", "n_g", std::to_string(*o.lifted));
    if (o.epochs) c.set("training", "epochs", std::to_string(*o.epochs));
    if (o.seed) c.set("training", "seed", std::to_string(*o.seed));
    DatasetConfig dc;
    apply_dataset(c, dc);
    const Dataset d = read_dataset_csv(o.data, 2);
    const std::size_t split = split_point(d, dc);
    const Dataset train = d.slice(0, split);

    KoopmanModel m;
    std::vector<LossBreakdown> curve;
    if (o.method == "edmd") {
        m = identify_k24(train);
    } else if (o.method == "ae1") {
        TrainingConfig t = TrainingConfig::ae1(c.has("training", "n_g") ? std::stoul(c.section("training").at("n_g")) : 24);
        apply_training(c, t);
        TrainingResult r = train_single_level(train, {"Ur1", "Ur2"}, t);
        m = std::move(r.model);
        curve = std::move(r.curve);
    } else if (o.method == "ae2") {
        TrainingConfig t = TrainingConfig::ae2();
        apply_training(c, t);
        TrainingResult r = train_bilevel(train, {"P1", "P2"}, "PWF", t);
        m = std::move(r.model);
        curve = std::move(r.curve);
    } else {
        throw UsageError("identify: method must be edmd, ae1 or ae2");
    }
    const std::string out = o.model_out.empty() ? o.method + ".model" : o.model_out;
    write_model(out, m);
    if (!o.curve.empty() && !curve.empty()) write_training_curve(o.curve, curve);
    std::printf("model %s (n_g = %zu, spectral radius %.4f) written to %s\n", o.method.c_str(), m.n_g(),
                m.spectral_radius, out.c_str());
    print_vaf(m, d, split, d.samples());
    return 0;
}

int run_evaluate(const Options& o) {
    ConfigFile c = load(o);
    DatasetConfig dc;
    apply_dataset(c, dc);
    const KoopmanModel m = read_model(o.model);
    const Dataset d = read_dataset_csv(o.data, 2);
    const std::size_t begin = o.from.value_or(split_point(d, dc));
    const std::size_t end = o.to.value_or(d.samples());
    print_vaf(m, d, begin, end);
    return 0;
}

int run_control(const Options& o) {
    ConfigFile c = load(o);
    if (o.scenario) c.set("scenario", "scenario", std::to_string(*o.scenario));
    if (!o.controller.empty()) c.set("scenario", "controller", o.controller);
    if (o.epsilon) c.set("scenario", "epsilon", num(*o.epsilon));
    if (!o.ae1.empty()) c.set("scenario", "ae1_model", o.ae1);
    if (!o.ae2.empty()) c.set("scenario", "ae2_model", o.ae2);
    if (!o.k24.empty()) c.set("scenario", "k24_model", o.k24);
    if (o.seed) {
        c.set("scenario", "seed", std::to_string(*o.seed));
        c.set("reference", "seed", std::to_string(*o.seed));
    }
    if (o.samples) c.set("reference", "samples", std::to_string(*o.samples));
    ScenarioConfig s;
    apply_scenario(c, s);
    const ScenarioOutcome r = run_scenario(s);
    const ReportRow row{s.scenario, r.controller, r.metrics, s.seed};
    write_simlog(o.prefix + ".csv", r.log);
    write_metrics_json(o.prefix + ".json", row);
    const std::string text = format_report({row}, s.settle);
    std::ofstream(o.prefix + ".txt", std::ios::binary) << text;
    std::fputs(text.c_str(), stdout);
    return 0;
}

int run_report(const Options& o) {
    std::vector<ReportRow> rows;
    for (const std::string& f : o.metrics) rows.push_back(read_metrics_json(f));
    const std::string text = format_report(rows);
    if (!o.report_out.empty()) std::ofstream(o.report_out, std::ios::binary) << text;
    std::fputs(text.c_str(), stdout);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Koopman wind-farm identification and control"};
    app.require_subcommand(1);
    Options o;
    app.add_option("-c,--config", o.config, "Config file with [plant] [training] [mpc] [reference] [scenario] sections");

    auto* sim = app.add_subcommand("simulate", "Generate an open-loop dataset");
    sim->add_option("--n", o.n, "Samples");
    sim->add_option("--seed", o.seed, "Excitation seed");
    sim->add_option("--epsilon", o.epsilon, "Plant power-coefficient offset");
    sim->add_option("-o,--out", o.data_out, "Dataset CSV");

    auto* ident = app.add_subcommand("identify", "Fit and save a model");
    ident->add_option("method", o.method, "edmd | ae1 | ae2")->required();
    ident->add_option("-d,--data", o.data, "Dataset CSV");
    ident->add_option("-o,--out", o.model_out, "Model file (default <method>.model)");
    ident->add_option("--lifted", o.lifted, "Lifted dimension N_g");
    ident->add_option("--epochs", o.epochs, "Training epochs");
    ident->add_option("--seed", o.seed, "Training seed");
    ident->add_option("--curve", o.curve, "Training-curve CSV");

    auto* eval = app.add_subcommand("evaluate", "VAF of a saved model on a dataset");
    eval->add_option("-m,--model", o.model, "Model file")->required();
    eval->add_option("-d,--data", o.data, "Dataset CSV");
    eval->add_option("--from", o.from, "First sample (default: start of the held-out split)");
    eval->add_option("--to", o.to, "End sample (exclusive)");

    auto* ctl = app.add_subcommand("control", "Run a closed-loop scenario");
    ctl->add_option("--scenario", o.scenario, "1 or 2");
    ctl->add_option("--controller", o.controller, "qlmpc_ae1 | kmpc_ae2 | qlmpc_k24_baseline");
    ctl->add_option("--epsilon", o.epsilon, "Plant drift in scenario 2");
    ctl->add_option("--ae1", o.ae1, "AE1 model file");
    ctl->add_option("--ae2", o.ae2, "AE2 model file");
    ctl->add_option("--k24", o.k24, "Physically lifted EDMD model file");
    ctl->add_option("--samples", o.samples, "Closed-loop samples");
    ctl->add_option("--seed", o.seed, "Reference seed");
    ctl->add_option("-o,--out-prefix", o.prefix, "Writes <prefix>.csv, <prefix>.json and <prefix>.txt");

    auto* rep = app.add_subcommand("report", "Aggregate metrics files");
    rep->add_option("metrics", o.metrics, "Metrics JSON files")->required();
    rep->add_option("-o,--out", o.report_out, "Write the table to a file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*sim) return run_simulate(o);
        if (*ident) return run_identify(o);
        if (*eval) return run_evaluate(o);
        if (*ctl) return run_control(o);
        if (*rep) return run_report(o);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
