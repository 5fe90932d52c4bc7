// spanact command line: gen, train, stream-eval, ablate, report.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "spanact/experiment.hpp"
#include "spanact/harness.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace spanact;

namespace {

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = ".";
    bool trace = false;
};

json load_config(const Globals& g) {
    if (g.config.empty()) {
        return json::object();
    }
    return read_json_file(g.config);
}

fs::path out_dir(const Globals& g) {
    fs::path p(g.out);
    fs::create_directories(p);
    return p;
}

std::string require_string(const json& j, const std::string& key) {
    if (!j.contains(key) || !j.at(key).is_string()) {
        throw ConfigError("config needs a string field '" + key + "'");
    }
    return j.at(key).get<std::string>();
}

OracleDenoiser::Params oracle_params(const json& j) {
    OracleDenoiser::Params p;
    p.epsilon = j.value("epsilon", p.epsilon);
    p.boundary_blur = j.value("boundary_blur", p.boundary_blur);
    p.blur_strength = j.value("blur_strength", p.blur_strength);
    p.jitter = j.value("jitter", p.jitter);
    p.seed = j.value("seed", p.seed);
    return p;
}

EvalOptions eval_options(const json& cfg) {
    EvalOptions o = reference_setup().eval;
    if (cfg.contains("engine")) {
        o.engine = engine_config_from_json(cfg.at("engine"), o.engine);
    }
    o.match.iou_threshold = cfg.value("iou_threshold", o.match.iou_threshold);
    validate(o.match);
    return o;
}

// ---------------------------------------------------------------------------

int cmd_gen(const Globals& g) {
    const auto cfg = load_config(g);
    auto suite = suite_config_from_json(cfg, reference_setup().eval_suite);
    if (g.seed) {
        suite.seed = *g.seed;
    }
    const auto corpus = generate_suite(suite);
    const auto path = out_dir(g) / (cfg.value("name", std::string("corpus")) + ".jsonl");
    write_corpus(path.string(), corpus);
    std::cout << "wrote " << corpus.size() << " streams to " << path.string() << '\n';
    return 0;
}

int cmd_train(const Globals& g) {
    const auto cfg = load_config(g);
    const auto ref = reference_setup();
    const auto kind = cfg.value("kind", std::string("denoiser"));
    if (kind != "denoiser" && kind != "ar") {
        throw ConfigError("train kind must be 'denoiser' or 'ar'");
    }
    const auto corpus = read_corpus(require_string(cfg, "corpus"));
    const ModelConfig mc = cfg.contains("model") ? model_config_from_json(cfg.at("model")) : ref.model;
    const auto train_json = cfg.value("train", json::object());
    TrainConfig tc = train_config_from_json(train_json, kind == "ar" ? ref.ar_train : ref.denoiser_train);
    if (g.seed) {
        tc.seed = *g.seed;
    }
    const std::uint64_t init_seed = cfg.value("init_seed", ref.init_seed);
    const auto dir = out_dir(g);
    const std::string name = cfg.value("name", kind);
    auto progress = [&](std::size_t step, double loss) {
        if (g.trace && (step % 100 == 0 || step + 1 == tc.steps)) {
            std::cerr << "step " << step << " loss " << loss << '\n';
        }
    };
    LossCurve curve;
    if (kind == "denoiser") {
        NeuralDenoiser<float> model(mc, init_seed);
        curve = train_denoiser(model, corpus, tc, progress);
        save_checkpoint((dir / (name + ".ckpt.json")).string(), model);
    } else {
        ArScorer<float> model(mc, init_seed);
        curve = train_ar(model, corpus, tc, progress);
        save_checkpoint((dir / (name + ".ckpt.json")).string(), model);
    }
    write_loss_csv((dir / (name + "_loss.csv")).string(), curve);
    std::cout << "trained " << kind << " for " << tc.steps << " steps, final loss " << curve.back().loss << '\n';
    return 0;
}

int cmd_stream_eval(const Globals& g) {
    const auto cfg = load_config(g);
    const auto corpus = read_corpus(require_string(cfg, "corpus"));
    auto opts = eval_options(cfg);
    opts.keep_traces = g.trace;
    const auto mj = cfg.value("model", json{{"kind", "oracle"}});
    const auto kind = mj.value("kind", std::string("oracle"));

    std::unique_ptr<NeuralDenoiser<float>> den;
    std::unique_ptr<ArScorer<float>> ar;
    EvalModel model;
    if (kind == "oracle") {
        auto p = oracle_params(mj);
        if (g.seed) {
            p.seed = *g.seed;
        }
        model = EvalModel::make_oracle(p, mj.value("name", std::string("oracle")));
    } else if (kind == "denoiser") {
        den = std::make_unique<NeuralDenoiser<float>>(load_denoiser<float>(require_string(mj, "checkpoint")));
        model = EvalModel::make_neural(*den, mj.value("name", std::string("denoiser")));
    } else if (kind == "ar") {
        ar = std::make_unique<ArScorer<float>>(load_ar_scorer<float>(require_string(mj, "checkpoint")));
        model = EvalModel::make_ar(*ar, mj.value("name", std::string("ar")));
    } else {
        throw ConfigError("model kind must be oracle, denoiser or ar");
    }

    const auto res = run_eval(corpus, model, opts);
    auto report = report_json(res.report);
    if (cfg.contains("permutations")) {
        std::vector<ActivationSequence> decisions;
        for (const auto& s : res.streams) {
            decisions.push_back(s.decisions);
        }
        const auto band = permutation_baseline(corpus, decisions, cfg.at("permutations").get<std::size_t>(),
                                               g.seed.value_or(1), opts.match);
        report["permutation_baseline"] = {{"mean", band.mean}, {"lo", band.lo}, {"hi", band.hi},
                                          {"permutations", band.permutations}};
    }
    const auto dir = out_dir(g);
    write_text((dir / "report.json").string(), report.dump(2) + "\n");
    write_text((dir / "timing.json").string(), timing_json(res.report).dump(2) + "\n");
    write_text((dir / "transitions.tsv").string(), transitions_tsv(res.report.transitions));
    write_trigger_log((dir / "triggers.jsonl").string(), res.streams, model.name);
    if (g.trace) {
        std::ofstream tr(dir / "trace.jsonl");
        for (const auto& s : res.streams) {
            for (const auto& t : s.traces) {
                auto j = to_json(t);
                j["stream"] = s.id;
                tr << j.dump() << '\n';
            }
        }
    }
    std::cout << model.name << " mean_f1 " << res.report.mean_f1 << " frame_f1 " << res.report.frame_f1 << '\n';
    return 0;
}

int cmd_ablate(const Globals& g, const std::string& suite) {
    const auto cfg = load_config(g);
    const auto corpus = read_corpus(require_string(cfg, "corpus"));
    const auto opts = eval_options(cfg);
    const auto arms_json = cfg.value("arms", json::object());
    std::map<std::string, NeuralDenoiser<float>> loaded;
    ArmModels arms;
    for (const auto& arm : ablation_model_arms(suite)) {
        if (!arms_json.contains(arm)) {
            throw ConfigError("ablation '" + suite + "' needs a checkpoint for arm '" + arm + "'");
        }
        loaded.emplace(arm, load_denoiser<float>(arms_json.at(arm).get<std::string>()));
        arms[arm] = &loaded.at(arm);
    }
    const std::size_t repeats = cfg.value("timing_repeats", std::size_t{3});
    const auto rows = run_ablation(suite, corpus, arms, opts, repeats);
    const bool timing = suite == "k_sweep";
    const auto csv = ablation_csv(rows, timing);
    write_text((out_dir(g) / ("ablation_" + suite + ".csv")).string(), csv);
    std::cout << csv;
    return 0;
}

// CSV reader for the ablation tables written above.
std::vector<std::vector<std::string>> read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open " + path);
    }
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            cells.push_back(cell);
        }
        rows.push_back(cells);
    }
    return rows;
}

int cmd_report(const Globals& g, const std::vector<std::string>& inputs_cli) {
    const auto cfg = load_config(g);
    std::vector<std::string> inputs = inputs_cli;
    for (const auto& p : cfg.value("inputs", std::vector<std::string>{})) {
        inputs.push_back(p);
    }
    if (inputs.empty()) {
        throw ConfigError("report needs input files (positional or config 'inputs')");
    }
    const auto dir = out_dir(g);
    std::ostringstream summary;
    summary.precision(10);
    summary << "model,task,streams,f1,frame_f1,tp,fp,fn,transitions_pre,transitions_during,transitions_post,events\n";
    for (const auto& path : inputs) {
        if (fs::path(path).extension() == ".csv") {
            // Ablation table: latency curve from timing columns, if any.
            const auto rows = read_csv(path);
            if (rows.empty() || rows[0].size() < 8) {
                continue;
            }
            std::string tsv = "x\ty\n";
            for (std::size_t i = 1; i < rows.size(); ++i) {
                auto x = rows[i][0];
                if (x.rfind("K=", 0) == 0) {
                    x = x.substr(2);
                }
                tsv += x + "\t" + rows[i][7] + "\n";
            }
            write_text((dir / ("latency_" + fs::path(path).stem().string() + ".tsv")).string(), tsv);
            continue;
        }
        const auto j = read_json_file(path);
        if (j.value("schema", "") != "spanact.metric_report") {
            throw ConfigError(path + " is not a metric report");
        }
        const auto name = j.at("model").get<std::string>();
        const auto& tr = j.at("transitions");
        const auto& tot = tr.at("totals");
        auto line = [&](const std::string& task, const json& t) {
            summary << name << ',' << task << ',' << t.value("streams", 0) << ',' << t.at("f1").get<double>() << ','
                    << t.at("frame_f1").get<double>() << ',' << t.value("tp", 0) << ',' << t.value("fp", 0) << ','
                    << t.value("fn", 0) << ',' << tot.at("pre").get<long>() << ',' << tot.at("during").get<long>()
                    << ',' << tot.at("post").get<long>() << ',' << tr.at("events").get<long>() << '\n';
        };
        for (const auto& t : j.at("tasks")) {
            line(t.at("task").get<std::string>(), t);
        }
        line("mean", json{{"f1", j.at("mean_f1")}, {"frame_f1", j.at("frame_f1")}});

        std::string tsv = "region\tx\ty\n";
        auto series = [&](const std::string& region, const json& arr, int x0, int dx) {
            for (std::size_t i = 0; i < arr.size(); ++i) {
                tsv += region + "\t" + std::to_string(x0 + static_cast<int>(i) * dx) + "\t" +
                       std::to_string(arr[i].get<long>()) + "\n";
            }
        };
        series("pre", tr.at("pre"), -static_cast<int>(kTransitionHorizon), 1);
        series("during", tr.at("during"), 0, 100 / static_cast<int>(kDuringBins));
        series("post", tr.at("post"), 1, 1);
        write_text((dir / ("transitions_" + name + ".tsv")).string(), tsv);
    }
    write_text((dir / "summary.csv").string(), summary.str());
    std::cout << summary.str();
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"spanact: streaming activation experiments"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    std::uint64_t seed = 0;
    app.add_option("--config", g.config, "JSON config file");
    auto* seed_opt = app.add_option("--seed", seed, "seed override");
    app.add_option("--out", g.out, "output directory");
    app.add_flag("--trace", g.trace, "dump per-frame step traces / training progress");

    auto* gen = app.add_subcommand("gen", "write a synthetic corpus");
    auto* train = app.add_subcommand("train", "train the denoiser or the AR head");
    auto* eval = app.add_subcommand("stream-eval", "run the engine over a corpus");
    auto* ablate = app.add_subcommand("ablate", "run a named ablation suite");
    std::string suite;
    ablate->add_option("suite", suite, "masking | duplication | remasking | tau_sweep | k_sweep")->required();
    auto* report = app.add_subcommand("report", "merge reports into CSV and plot-ready TSV");
    std::vector<std::string> inputs;
    report->add_option("inputs", inputs, "report JSON / ablation CSV files");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }
    if (seed_opt->count() > 0) {
        g.seed = seed;
    }

    try {
        if (gen->parsed()) {
            return cmd_gen(g);
        }
        if (train->parsed()) {
            return cmd_train(g);
        }
        if (eval->parsed()) {
            return cmd_stream_eval(g);
        }
        if (ablate->parsed()) {
            return cmd_ablate(g, suite);
        }
        if (report->parsed()) {
            return cmd_report(g, inputs);
        }
    } catch (const InvalidArgument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "failed: " << e.what() << '\n';
        return 2;
    }
    return 1;
}
