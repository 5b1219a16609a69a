#include <doctest.h>

#include <array>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "lrco/cli.hpp"
#include "lrco/run_config.hpp"

using namespace lrco;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path fresh_root(const std::string& name) {
    const fs::path root = fs::temp_directory_path() / ("lrco_cli_" + name);
    fs::remove_all(root);
    fs::create_directories(root);
    setenv(cli::kOutDirEnv, root.c_str(), 1);
    return root;
}

int run(std::vector<std::string> args) {
    args.insert(args.begin(), "lrco");
    std::vector<char*> argv;
    for (std::string& a : args) argv.push_back(a.data());
    return cli::run(static_cast<int>(argv.size()), argv.data());
}

// Small, fast run configuration.
fs::path write_config(const fs::path& dir, const std::string& extra = "") {
    const fs::path p = dir / "run.cfg";
    std::ofstream out(p);
    out << "# small run\n"
           "method = mixlrco\n"
           "run_id = small\n"
           "total_steps = 20\n"
           "eval_interval = 10\n"
           "checkpoint_interval = 10\n"
           "labeled_batch = 16\n"
           "unlabeled_batch = 32\n"
           "model.hidden = 16\n"
           "model.feature_dim = 8\n"
           "data.source_per_class = 20\n"
           "data.target_per_class = 20\n"
        << extra;
    return p;
}

std::pair<int, std::string> shell(const std::string& args) {
    const std::string cmd = std::string(LRCO_CLI_PATH) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::string out;
    std::array<char, 256> buf{};
    while (fgets(buf.data(), buf.size(), pipe) != nullptr) out += buf.data();
    const int status = pclose(pipe);
    return {WEXITSTATUS(status), out};
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("config defaults") {
    const RunConfig c = parse_run_config("");
    CHECK(c.train.tau == 0.95);
    CHECK(c.train.t_co == 0.3);
    CHECK(c.train.bank_capacity == 512);
    CHECK(c.train.lambda_co == 0.5);
    CHECK(c.train.lambda_kld == 0.1);
    CHECK(c.train.alpha == 1.0);
    CHECK(c.train.model.t_ce == 0.05);
    CHECK(c.train.model.t_re == 0.05);
    CHECK(c.train.ema_decay == 0.99);
    CHECK(c.train.momentum == 0.9);
    CHECK(c.train.method == Method::mixlrco);
    CHECK(c.benchmark.num_classes == 5);
    CHECK(c.benchmark.shift_degrees == 50.0);
    CHECK(c.train.model.num_classes == c.benchmark.num_classes);
}

TEST_CASE("config parsing errors") {
    CHECK_THROWS_AS(parse_run_config("no_such_key = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("tau = 0.9\ntau = 0.8\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("tau = high\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("method = moco\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("just words\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("ema = maybe\n"), ConfigError);
    try {
        parse_run_config("lr = 0.1\nbogus = 2\n");
    } catch (const ConfigError& e) {
        CHECK(e.key() == "bogus");
    }
    RunConfig bad = parse_run_config("tau = 1.5\n");
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("canonical form round trips and hashes every key") {
    RunConfig c = parse_run_config("data.translation = 1, 2.5\nmodel.hidden = 8,4\n");
    CHECK(c.benchmark.translation == Vector{1, 2.5});
    CHECK(c.train.model.hidden == std::vector<std::size_t>{8, 4});
    const std::string text = canonical_config(c);
    CHECK(canonical_config(parse_run_config(text)) == text);
    const std::string h = config_hash(c);
    for (const std::string& key : config_keys()) {
        CHECK(text.find(key + "=") != std::string::npos);
    }
    set_config_value(c, "lambda_co", "0.25");
    CHECK(config_hash(c) != h);
    CHECK(get_config_value(c, "lambda_co") == "0.25");
}

TEST_CASE("gen-data is reproducible") {
    const fs::path root = fresh_root("gen");
    const fs::path cfg = write_config(root);
    CHECK(run({"gen-data", "-c", cfg.string()}) == cli::kOk);
    const std::string a = slurp(root / "small" / "data" / "source.csv");
    const std::string t = slurp(root / "small" / "data" / "target.csv");
    CHECK(run({"gen-data", "-c", cfg.string()}) == cli::kOk);
    CHECK(slurp(root / "small" / "data" / "source.csv") == a);
    CHECK(slurp(root / "small" / "data" / "target.csv") == t);
    CHECK(slurp(root / "small" / "data" / "manifest.json").find("config_hash") != std::string::npos);

    // Training from the written files matches training from the generator.
    CHECK(run({"train", "-c", cfg.string()}) == cli::kOk);
    RunConfig c = load_run_config(cfg.string());
    const std::string h1 = config_hash(c);
    const std::string data_dir = (root / "small" / "data").string();
    set_config_value(c, "data_dir", data_dir);
    set_config_value(c, "run_id", "fromfiles");
    const std::string h2 = config_hash(c);
    CHECK(run({"train", "-c", cfg.string(), "-s", "data_dir=" + data_dir, "-s", "run_id=fromfiles"}) == cli::kOk);
    const std::string m1 = std::regex_replace(slurp(root / "small" / "metrics.jsonl"), std::regex(h1), "H");
    const std::string m2 = std::regex_replace(slurp(root / "fromfiles" / "metrics.jsonl"), std::regex(h2), "H");
    CHECK_FALSE(m1.empty());
    CHECK(m1 == m2);
}

TEST_CASE("train, eval and analyze") {
    const fs::path root = fresh_root("train");
    const fs::path cfg = write_config(root);
    CHECK(run({"train", "-c", cfg.string()}) == cli::kOk);
    const fs::path dir = root / "small";
    const std::string metrics = slurp(dir / "metrics.jsonl");
    const std::string hash = config_hash(load_run_config(cfg.string()));
    CHECK(metrics.find("\"config_hash\":\"" + hash + "\"") != std::string::npos);
    CHECK(fs::exists(dir / "checkpoints" / "ckpt_step10.json"));
    CHECK(slurp(dir / "config.txt").find("config_hash=" + hash) != std::string::npos);

    CHECK(run({"train", "-c", cfg.string()}) == cli::kOk);
    CHECK(slurp(dir / "metrics.jsonl") == metrics);

    const std::string ckpt = (dir / "final_checkpoint.json").string();
    CHECK(run({"eval", "-c", cfg.string(), "--checkpoint", ckpt}) == cli::kOk);
    CHECK(slurp(dir / "eval_step20.json").find(hash) != std::string::npos);
    CHECK(run({"analyze", "-c", cfg.string(), "--checkpoint", ckpt}) == cli::kOk);
    for (const char* kind : {"similarity_rerep", "similarity_raw", "topk"}) {
        const fs::path f = dir / "analysis" / ("small_step20_target_" + std::string(kind) + ".csv");
        REQUIRE(fs::exists(f));
        CHECK(slurp(f).rfind("# config_hash=" + hash + " seed=0\n", 0) == 0);
    }
    CHECK(fs::exists(dir / "analysis" / "small_step20_all_projection.csv"));

    // Resume from the step-10 checkpoint reproduces the run.
    CHECK(run({"train", "-c", cfg.string(), "--resume", (dir / "checkpoints" / "ckpt_step10.json").string()}) ==
          cli::kOk);
    CHECK(slurp(dir / "metrics.jsonl") == metrics);

    // Overrides change the hash, so the old checkpoint is refused.
    CHECK(run({"eval", "-c", cfg.string(), "-s", "tau=0.9", "--checkpoint", ckpt}) == cli::kInvalidConfig);
}

TEST_CASE("zero steps writes an initial checkpoint") {
    const fs::path root = fresh_root("zero");
    const fs::path cfg = write_config(root);
    CHECK(run({"train", "-c", cfg.string(), "-s", "total_steps=0"}) == cli::kOk);
    const std::string ck = slurp(root / "small" / "final_checkpoint.json");
    CHECK(ck.find("\"step\":0") != std::string::npos);
}

TEST_CASE("error classes have distinct exit codes") {
    const fs::path root = fresh_root("errors");
    const fs::path cfg = write_config(root);
    CHECK(run({"train", "--no-such-flag"}) == cli::kUsage);
    CHECK(run({"frobnicate"}) == cli::kUsage);
    CHECK(run({}) == cli::kUsage);
    CHECK(run({"train", "-c", (root / "missing.cfg").string()}) == cli::kMissingFile);
    CHECK(run({"eval", "-c", cfg.string(), "--checkpoint", (root / "nope.json").string()}) == cli::kMissingFile);
    CHECK(run({"train", "-c", cfg.string(), "-s", "bogus=1"}) == cli::kInvalidConfig);
    CHECK(run({"train", "-c", cfg.string(), "-s", "alpha=-1"}) == cli::kInvalidConfig);
    {
        std::ofstream(root / "bad.json") << "{not json";
    }
    CHECK(run({"eval", "-c", cfg.string(), "--checkpoint", (root / "bad.json").string()}) == cli::kInvalidData);
    fs::create_directories(root / "baddata");
    std::ofstream(root / "baddata" / "source.csv") << "# lrco-dataset input_dim=2 num_classes=2 spec_hash=-\nsource,0,1\n";
    std::ofstream(root / "baddata" / "target.csv") << "";
    CHECK(run({"train", "-c", cfg.string(), "-s", "data_dir=" + (root / "baddata").string()}) == cli::kInvalidData);
}

TEST_CASE("error line is machine parsable") {
    const auto [code, out] = shell("train -s nope=1");
    CHECK(code == cli::kInvalidConfig);
    const std::regex line(R"(error code=4 kind=invalid_config message="[^"]*nope[^"]*"\n)");
    CHECK(std::regex_match(out, line));
    const auto [code2, out2] = shell("train --bogus");
    CHECK(code2 == cli::kUsage);
    CHECK(out2.rfind("error code=2 kind=usage message=", 0) == 0);
}

TEST_CASE("gradcheck subcommand") {
    fresh_root("gradcheck");
    const auto [code, out] = shell("gradcheck --seed 0");
    CHECK(code == cli::kOk);
    for (const char* term : {"ce", "align", "fixmatch", "kld", "naive_contrastive", "rerep_composed", "lrco",
                             "mixlrco", "total_strong", "total_lrco", "total_mixlrco"}) {
        CHECK(out.find(std::string("term=") + term + " ") != std::string::npos);
    }
    CHECK(out.find("gradcheck ok") != std::string::npos);
}

}  // TEST_SUITE
