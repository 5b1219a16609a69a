#include "lrco/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "lrco/analysis.hpp"
#include "lrco/gradcheck.hpp"
#include "lrco/run_config.hpp"

namespace lrco::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliError : std::runtime_error {
    CliError(int code, const std::string& message) : std::runtime_error(message), code(code) {}
    int code;
};

const char* kind_of(int code) {
    switch (code) {
        case kUsage: return "usage";
        case kMissingFile: return "missing_file";
        case kInvalidConfig: return "invalid_config";
        case kGradcheckFailed: return "gradcheck_failed";
        case kInvalidData: return "invalid_data";
        default: return "runtime";
    }
}

int report_error(int code, const std::string& message) {
    std::string m;
    for (char c : message) {
        if (c == '"' || c == '\\') m += '\\';
        m += (c == '\n') ? ' ' : c;
    }
    std::cerr << "error code=" << code << " kind=" << kind_of(code) << " message=\"" << m << "\"\n";
    return code;
}

fs::path out_root() {
    const char* env = std::getenv(kOutDirEnv);
    return fs::path(env != nullptr && *env != '\0' ? env : "lrco_out");
}

struct Common {
    std::string config_path;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("-c,--config", c.config_path, "key = value run configuration file");
    app->add_option("-s,--set", c.overrides, "override one key, key=value (repeatable)");
}

RunConfig resolve_config(const Common& c) {
    RunConfig cfg = c.config_path.empty() ? parse_run_config("") : load_run_config(c.config_path);
    for (const std::string& o : c.overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) throw ConfigError(o, "override must be key=value");
        set_config_value(cfg, o.substr(0, eq), o.substr(eq + 1));
    }
    cfg.validate();
    return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << text;
}

json read_json(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw CliError(kInvalidData, path + ": " + e.what());
    }
}

fs::path run_dir(const RunConfig& cfg) {
    fs::path dir = out_root() / cfg.run_id;
    fs::create_directories(dir);
    return dir;
}

struct RunData {
    Dataset source;
    UnlabeledSet target;
    Dataset target_labeled;
    Dataset labeled;  // source plus any labeled target shots
    Dataset target_eval;
};

RunData load_data(const RunConfig& cfg) {
    RunData d;
    if (cfg.data_dir.empty()) {
        Benchmark b = generate_shift_benchmark(cfg.benchmark);
        d.source = std::move(b.source);
        d.target = std::move(b.target);
        d.target_labeled = std::move(b.target_labeled);
    } else {
        const fs::path dir(cfg.data_dir);
        d.source = load_dataset((dir / "source.csv").string());
        d.target = UnlabeledSet::from_evaluation_set(load_dataset((dir / "target.csv").string()));
        if (fs::exists(dir / "target_labeled.csv")) d.target_labeled = load_dataset((dir / "target_labeled.csv").string());
        const std::string expected = cfg.benchmark.hash();
        if (d.source.spec_hash != expected) {
            throw ConfigError("data_dir", "datasets were generated with spec hash " + d.source.spec_hash +
                                              ", config expects " + expected);
        }
    }
    d.labeled = d.source;
    for (const Sample& s : d.target_labeled.samples) d.labeled.samples.push_back(s);
    d.target_eval = d.target.evaluation_set();
    return d;
}

// Checkpoint written by `train`, checked against the active config.
struct LoadedCheckpoint {
    std::size_t step = 0;
    double tau = 0.0;
    ModelState student;
    ModelState teacher;
};

LoadedCheckpoint load_checkpoint(const std::string& path, const std::string& hash) {
    const json j = read_json(path);
    try {
        if (j.at("format") != "lrco-checkpoint-1") throw CliError(kInvalidData, path + ": unknown checkpoint format");
        if (j.at("config_hash") != hash) {
            throw ConfigError("config", "checkpoint was written under config hash " +
                                            j.at("config_hash").get<std::string>() + ", active config is " + hash);
        }
        const json& t = j.at("trainer");
        return {t.at("step").get<std::size_t>(), t.at("tau").get<double>(), model_from_json(t.at("student")),
                model_from_json(t.at("teacher"))};
    } catch (const json::exception& e) {
        throw CliError(kInvalidData, path + ": " + e.what());
    }
}

int cmd_gen_data(const Common& c) {
    const RunConfig cfg = resolve_config(c);
    const std::string hash = config_hash(cfg);
    const fs::path dir = run_dir(cfg) / "data";
    fs::create_directories(dir);
    const Benchmark b = generate_shift_benchmark(cfg.benchmark);
    save_dataset((dir / "source.csv").string(), b.source);
    save_dataset((dir / "target.csv").string(), b.target.evaluation_set());
    if (!b.target_labeled.empty()) save_dataset((dir / "target_labeled.csv").string(), b.target_labeled);
    write_text(dir / "manifest.json",
               json{{"config_hash", hash},
                    {"seed", cfg.benchmark.seed},
                    {"spec_hash", cfg.benchmark.hash()},
                    {"source", b.source.size()},
                    {"target", b.target.size()},
                    {"target_labeled", b.target_labeled.size()}}
                       .dump() +
                   "\n");
    std::cout << json{{"config_hash", hash}, {"data_dir", dir.string()}}.dump() << '\n';
    return kOk;
}

int cmd_train(const Common& c, const std::string& resume_path) {
    const RunConfig cfg = resolve_config(c);
    const std::string hash = config_hash(cfg);
    const fs::path dir = run_dir(cfg);
    const fs::path ckpt_dir = dir / "checkpoints";
    fs::create_directories(ckpt_dir);
    write_text(dir / "config.txt", "# config_hash=" + hash + " seed=" + std::to_string(cfg.train.seed) + "\n" +
                                       canonical_config(cfg));
    const RunData d = load_data(cfg);

    FitOptions opt;
    opt.metrics_path = (dir / "metrics.jsonl").string();
    opt.checkpoint_dir = ckpt_dir.string();
    opt.config_hash = hash;
    if (!resume_path.empty()) {
        json r = read_json(resume_path);
        if (!r.contains("config_hash") || r["config_hash"] != hash) {
            throw ConfigError("config", "resume checkpoint does not match the active config hash " + hash);
        }
        opt.resume = std::move(r);
    }
    const FitData data{&d.labeled, &d.target, &d.source, &d.target_eval};
    const FitResult res = fit(cfg.train, data, opt);
    const fs::path final_path = dir / "final_checkpoint.json";
    write_text(final_path, res.final_checkpoint.dump() + "\n");

    json summary{{"config_hash", hash}, {"seed", cfg.train.seed}, {"checkpoint", final_path.string()},
                 {"step", res.final_checkpoint["trainer"]["step"]}};
    for (auto it = res.history.rbegin(); it != res.history.rend(); ++it) {
        const std::string key = it->split + "_accuracy";
        if (!summary.contains(key)) summary[key] = it->metrics.accuracy;
    }
    std::cout << summary.dump() << '\n';
    return kOk;
}

int cmd_eval(const Common& c, const std::string& checkpoint) {
    const RunConfig cfg = resolve_config(c);
    const std::string hash = config_hash(cfg);
    const LoadedCheckpoint ck = load_checkpoint(checkpoint, hash);
    const RunData d = load_data(cfg);
    const ModelState& m = cfg.train.eval_model == EvalModel::teacher ? ck.teacher : ck.student;
    json out{{"config_hash", hash},
             {"seed", cfg.train.seed},
             {"step", ck.step},
             {"model", cfg.train.eval_model == EvalModel::teacher ? "teacher" : "student"}};
    const std::pair<const char*, const Dataset*> splits[] = {{"source", &d.source}, {"target", &d.target_eval}};
    for (const auto& [name, set] : splits) {
        const EvalMetrics e = evaluate(m, *set);
        out[name] = {{"accuracy", e.accuracy}, {"per_class", e.per_class}, {"mean_confidence", e.mean_confidence},
                     {"count", e.count}};
    }
    write_text(run_dir(cfg) / ("eval_step" + std::to_string(ck.step) + ".json"), out.dump() + "\n");
    std::cout << out.dump() << '\n';
    return kOk;
}

int cmd_analyze(const Common& c, const std::string& checkpoint) {
    const RunConfig cfg = resolve_config(c);
    const std::string hash = config_hash(cfg);
    const std::uint64_t seed = cfg.train.seed;
    const LoadedCheckpoint ck = load_checkpoint(checkpoint, hash);
    const RunData d = load_data(cfg);
    const fs::path dir = run_dir(cfg) / "analysis";
    fs::create_directories(dir);
    const auto path = [&](const char* split, const char* kind) {
        return (dir / analysis_file_name(cfg.run_id, ck.step, split, kind)).string();
    };

    const ModelState& m = ck.teacher;
    json summary{{"config_hash", hash}, {"seed", seed}, {"step", ck.step}};
    const std::pair<const char*, FeatureMode> spaces[] = {{"rerep", FeatureMode::rerep_detached},
                                                          {"raw", FeatureMode::raw}};
    for (const auto& [name, mode] : spaces) {
        const FeatureSnapshot s = snapshot_features(m, d.target_eval, cfg.train.tau, mode);
        const SimilarityReport r = similarity_stats(s.features, s.labels, s.confident);
        const std::string kind = std::string("similarity_") + name;
        write_similarity_csv(path("target", kind.c_str()), r, name, hash, seed);
        summary[kind] = {{"high_within", r.high.within}, {"high_cross", r.high.cross},
                         {"low_within", r.low.within},   {"low_cross", r.low.cross}};
    }

    const std::size_t k_max = std::min<std::size_t>(10, cfg.benchmark.num_classes);
    const MixTopkCurves curves = mix_topk_curves(m, d.target_eval, d.source, cfg.train.tau, cfg.train.alpha, seed, k_max);
    write_topk_csv(path("target", "topk"), curves, hash, seed);
    summary["topk"] = {{"high", curves.high}, {"low", curves.low}};

    // Joint projection of raw unit features, source then target.
    std::vector<Vector> feats;
    std::vector<Domain> domains;
    std::vector<std::size_t> labels;
    std::vector<bool> confident;
    for (const Dataset* set : {&d.source, &d.target_eval}) {
        const FeatureSnapshot s = snapshot_features(m, *set, cfg.train.tau, FeatureMode::raw);
        for (std::size_t i = 0; i < s.features.size(); ++i) {
            feats.push_back(s.features[i]);
            labels.push_back(s.labels[i]);
            confident.push_back(s.confident[i]);
            domains.push_back(set->samples[i].domain);
        }
    }
    write_projection_csv(path("all", "projection"), project_2d(feats), domains, labels, confident, hash, seed);
    std::cout << summary.dump() << '\n';
    return kOk;
}

int cmd_gradcheck(std::uint64_t seed, std::size_t instances) {
    GradcheckOptions opt;
    opt.seed = seed;
    opt.instances_per_shape = instances;
    const GradcheckReport r = run_gradcheck(opt);
    for (const GradcheckTerm& t : r.terms) {
        std::printf("term=%s max_rel_error=%.3e instances=%zu\n", t.name.c_str(), t.max_rel_error, t.instances);
    }
    std::printf("detached_classifier_grad=%.3e seconds=%.2f\n", r.detached_classifier_grad, r.seconds);
    if (!r.passed()) throw CliError(kGradcheckFailed, "gradient check exceeded tolerance 1e-4");
    std::printf("gradcheck ok\n");
    return kOk;
}

}  // namespace

int run(int argc, char** argv) {
    CLI::App app{"Contrastive domain adaptation on synthetic shift benchmarks"};
    app.require_subcommand(1);

    Common gen_c, train_c, eval_c, analyze_c;
    std::string resume, eval_ckpt, analyze_ckpt;
    std::uint64_t gc_seed = 0;
    std::size_t gc_instances = 5;

    CLI::App* gen = app.add_subcommand("gen-data", "generate the benchmark datasets");
    add_common(gen, gen_c);
    CLI::App* train = app.add_subcommand("train", "train one method and write metrics and checkpoints");
    add_common(train, train_c);
    train->add_option("--resume", resume, "checkpoint to continue from");
    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(eval, eval_c);
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
    CLI::App* analyze = app.add_subcommand("analyze", "write similarity, top-k and projection tables");
    add_common(analyze, analyze_c);
    analyze->add_option("--checkpoint", analyze_ckpt, "checkpoint file")->required();
    CLI::App* gc = app.add_subcommand("gradcheck", "compare analytic gradients with finite differences");
    gc->add_option("--seed", gc_seed, "instance seed");
    gc->add_option("--instances", gc_instances, "instances per (K, feature_dim) shape")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return report_error(kUsage, e.what());
    }

    try {
        if (gen->parsed()) return cmd_gen_data(gen_c);
        if (train->parsed()) return cmd_train(train_c, resume);
        if (eval->parsed()) return cmd_eval(eval_c, eval_ckpt);
        if (analyze->parsed()) return cmd_analyze(analyze_c, analyze_ckpt);
        return cmd_gradcheck(gc_seed, gc_instances);
    } catch (const CliError& e) {
        return report_error(e.code, e.what());
    } catch (const IoError& e) {
        return report_error(kMissingFile, e.what());
    } catch (const ConfigError& e) {
        return report_error(kInvalidConfig, e.what());
    } catch (const DatasetParseError& e) {
        return report_error(kInvalidData, e.what());
    } catch (const std::exception& e) {
        return report_error(kRuntime, e.what());
    }
}

}  // namespace lrco::cli
