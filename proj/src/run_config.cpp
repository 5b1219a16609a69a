#include "lrco/run_config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace lrco {

ConfigError::ConfigError(std::string key, const std::string& message)
    : std::runtime_error(key.empty() ? message : key + ": " + message), key_(std::move(key)) {}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
        throw ConfigError(key, "expected a number, got '" + v + "'");
    }
    return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
        throw ConfigError(key, "expected a non-negative integer, got '" + v + "'");
    }
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key, "expected true or false, got '" + v + "'");
}

template <typename T>
std::vector<T> to_list(const std::string& key, const std::string& v, T (*conv)(const std::string&, const std::string&)) {
    std::vector<T> out;
    if (v.empty()) return out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(conv(key, trim(item)));
    return out;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <typename T>
std::string join(const std::vector<T>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ',';
        if constexpr (std::is_floating_point_v<T>) {
            out += fmt(xs[i]);
        } else {
            out += std::to_string(xs[i]);
        }
    }
    return out;
}

std::size_t to_size(const std::string& key, const std::string& v) { return static_cast<std::size_t>(to_u64(key, v)); }

template <typename F>
auto enum_value(const std::string& key, const std::string& v, F parse) {
    try {
        return parse(v);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(key, e.what());
    }
}

struct Field {
    std::function<void(RunConfig&, const std::string&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define LRCO_DOUBLE(name, member)                                                                     \
    {name,                                                                                            \
     {[](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_double(k, v); }, \
      [](const RunConfig& c) { return fmt(c.member); }}}
#define LRCO_SIZE(name, member)                                                                     \
    {name,                                                                                          \
     {[](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_size(k, v); }, \
      [](const RunConfig& c) { return std::to_string(c.member); }}}
#define LRCO_BOOL(name, member)                                                                     \
    {name,                                                                                          \
     {[](RunConfig& c, const std::string& k, const std::string& v) { c.member = to_bool(k, v); }, \
      [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); }}}
#define LRCO_GROUP(name, member)                                                                                \
    {name,                                                                                                      \
     {[](RunConfig& c, const std::string& k, const std::string& v) { c.member = enum_value(k, v, parse_group); }, \
      [](const RunConfig& c) { return std::string(group_name(c.member)); }}}

const std::vector<std::pair<std::string, Field>>& fields() {
    static const std::vector<std::pair<std::string, Field>> table = {
        {"method",
         {[](RunConfig& c, const std::string& k, const std::string& v) { c.train.method = enum_value(k, v, parse_method); },
          [](const RunConfig& c) { return std::string(method_name(c.train.method)); }}},
        {"run_id",
         {[](RunConfig& c, const std::string&, const std::string& v) { c.run_id = v; },
          [](const RunConfig& c) { return c.run_id; }}},
        {"data_dir",
         {[](RunConfig& c, const std::string&, const std::string& v) { c.data_dir = v; },
          [](const RunConfig& c) { return c.data_dir; }}},
        {"seed",
         {[](RunConfig& c, const std::string& k, const std::string& v) { c.train.seed = to_u64(k, v); },
          [](const RunConfig& c) { return std::to_string(c.train.seed); }}},
        LRCO_DOUBLE("tau", train.tau),
        LRCO_DOUBLE("t_ce", train.model.t_ce),
        LRCO_DOUBLE("t_re", train.model.t_re),
        LRCO_DOUBLE("t_co", train.t_co),
        LRCO_SIZE("bank_capacity", train.bank_capacity),
        LRCO_DOUBLE("lambda_co", train.lambda_co),
        LRCO_DOUBLE("lambda_kld", train.lambda_kld),
        LRCO_DOUBLE("lambda_align", train.lambda_align),
        LRCO_DOUBLE("alpha", train.alpha),
        LRCO_DOUBLE("ema_decay", train.ema_decay),
        LRCO_BOOL("ema", train.ema_enabled),
        LRCO_DOUBLE("lr", train.lr),
        LRCO_DOUBLE("momentum", train.momentum),
        LRCO_SIZE("labeled_batch", train.labeled_batch),
        LRCO_SIZE("unlabeled_batch", train.unlabeled_batch),
        LRCO_SIZE("total_steps", train.total_steps),
        LRCO_SIZE("eval_interval", train.eval_interval),
        LRCO_SIZE("checkpoint_interval", train.checkpoint_interval),
        {"eval_model",
         {[](RunConfig& c, const std::string& k, const std::string& v) {
              if (v == "teacher") {
                  c.train.eval_model = EvalModel::teacher;
              } else if (v == "student") {
                  c.train.eval_model = EvalModel::student;
              } else {
                  throw ConfigError(k, "expected teacher or student, got '" + v + "'");
              }
          },
          [](const RunConfig& c) {
              return std::string(c.train.eval_model == EvalModel::teacher ? "teacher" : "student");
          }}},
        {"execution",
         {[](RunConfig& c, const std::string& k, const std::string& v) {
              if (v == "serial") {
                  c.train.execution = Execution::serial;
              } else if (v == "parallel") {
                  c.train.execution = Execution::parallel;
              } else {
                  throw ConfigError(k, "expected serial or parallel, got '" + v + "'");
              }
          },
          [](const RunConfig& c) {
              return std::string(c.train.execution == Execution::serial ? "serial" : "parallel");
          }}},
        {"model.hidden",
         {[](RunConfig& c, const std::string& k, const std::string& v) { c.train.model.hidden = to_list(k, v, &to_size); },
          [](const RunConfig& c) { return join(c.train.model.hidden); }}},
        LRCO_SIZE("model.feature_dim", train.model.feature_dim),
        LRCO_GROUP("ablation.positives", train.ablation.positives),
        LRCO_GROUP("ablation.negatives", train.ablation.negatives),
        LRCO_GROUP("ablation.mix_targets", train.ablation.mix_targets),
        {"ablation.feature",
         {[](RunConfig& c, const std::string& k, const std::string& v) {
              c.train.ablation.feature = enum_value(k, v, parse_feature_mode);
          },
          [](const RunConfig& c) { return std::string(feature_mode_name(c.train.ablation.feature)); }}},
        LRCO_BOOL("ablation.mix_dominant", train.ablation.mix_dominant),
        LRCO_BOOL("tau_schedule.dynamic", train.tau_schedule.dynamic),
        LRCO_DOUBLE("tau_schedule.band_lo", train.tau_schedule.band_lo),
        LRCO_DOUBLE("tau_schedule.band_hi", train.tau_schedule.band_hi),
        LRCO_DOUBLE("tau_schedule.min", train.tau_schedule.min),
        LRCO_DOUBLE("tau_schedule.max", train.tau_schedule.max),
        LRCO_DOUBLE("tau_schedule.step", train.tau_schedule.step),
        LRCO_SIZE("tau_schedule.window", train.tau_schedule.window),
        LRCO_DOUBLE("augment.weak_noise", train.augment.weak_noise),
        LRCO_DOUBLE("augment.strong_noise", train.augment.strong_noise),
        LRCO_DOUBLE("augment.mask_prob", train.augment.mask_prob),
        LRCO_DOUBLE("augment.scale_jitter", train.augment.scale_jitter),
        LRCO_SIZE("data.num_classes", benchmark.num_classes),
        LRCO_SIZE("data.input_dim", benchmark.input_dim),
        LRCO_SIZE("data.source_per_class", benchmark.source_per_class),
        LRCO_SIZE("data.target_per_class", benchmark.target_per_class),
        LRCO_SIZE("data.target_labeled_per_class", benchmark.target_labeled_per_class),
        LRCO_DOUBLE("data.radius", benchmark.radius),
        LRCO_DOUBLE("data.noise", benchmark.noise),
        LRCO_DOUBLE("data.shift_degrees", benchmark.shift_degrees),
        {"data.translation",
         {[](RunConfig& c, const std::string& k, const std::string& v) {
              c.benchmark.translation = to_list(k, v, &to_double);
          },
          [](const RunConfig& c) { return join(c.benchmark.translation); }}},
        {"data.seed",
         {[](RunConfig& c, const std::string& k, const std::string& v) { c.benchmark.seed = to_u64(k, v); },
          [](const RunConfig& c) { return std::to_string(c.benchmark.seed); }}},
    };
    return table;
}

#undef LRCO_DOUBLE
#undef LRCO_SIZE
#undef LRCO_BOOL
#undef LRCO_GROUP

const Field& field(const std::string& key) {
    static const std::map<std::string, const Field*> index = [] {
        std::map<std::string, const Field*> m;
        for (const auto& [k, f] : fields()) m.emplace(k, &f);
        return m;
    }();
    const auto it = index.find(key);
    if (it == index.end()) throw ConfigError(key, "unknown key");
    return *it->second;
}

void sync(RunConfig& c) {
    c.train.model.input_dim = c.benchmark.input_dim;
    c.train.model.num_classes = c.benchmark.num_classes;
}

}  // namespace

void RunConfig::validate() const {
    try {
        benchmark.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError("data", e.what());
    }
    try {
        train.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError("", e.what());
    }
    if (run_id.empty() || run_id.find('/') != std::string::npos) throw ConfigError("run_id", "must be a plain name");
}

std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    for (const auto& [k, f] : fields()) keys.push_back(k);
    return keys;
}

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
    field(key).set(config, key, value);
    sync(config);
}

std::string get_config_value(const RunConfig& config, const std::string& key) { return field(key).get(config); }

RunConfig parse_run_config(const std::string& text) {
    RunConfig c;
    sync(c);
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ConfigError("", "line " + std::to_string(n) + ": expected key = value");
        const std::string key = trim(t.substr(0, eq));
        if (!seen.insert(key).second) throw ConfigError(key, "duplicate key on line " + std::to_string(n));
        set_config_value(c, key, trim(t.substr(eq + 1)));
    }
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

std::string canonical_config(const RunConfig& config) {
    std::string out;
    for (const auto& [k, f] : fields()) out += k + "=" + f.get(config) + "\n";
    return out;
}

std::string config_hash(const RunConfig& config) { return hex64(fnv1a64(canonical_config(config))); }

}  // namespace lrco
