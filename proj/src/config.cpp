#include "sqcl/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "sqcl/error.hpp"

namespace sqcl {

namespace {

const std::map<std::string, std::string>& defaults() {
  static const std::map<std::string, std::string> table = {
      {"version", "1"},
      {"benchmark", "smnist"},          // smnist | pmnist | strokes | featureseq
      {"data.dir", ""},                 // IDX directory / stroke file / feature file
      {"data.source", "auto"},          // auto | files | synth
      {"data.synth_seed", "12345"},
      {"data.train_per_class", "300"},
      {"data.test_per_class", "120"},
      {"data.num_classes", "16"},       // synthetic strokes/featureseq pools
      {"scenario.kind", "auto"},        // auto | class_incremental | domain_incremental | task_incremental
      {"scenario.classes_per_step", "2"},
      {"scenario.num_steps", "0"},      // 0 → derived from the class budget
      {"scenario.class_order_seed", "0"},  // 0 → sorted class ids
      {"scenario.fixed_permutation_seed", "auto"},  // auto → on for smnist
      {"scenario.seed", "1"},
      {"protocol.mode", "direct"},      // direct | select_assess
      {"protocol.validation_steps", "3"},
      {"protocol.max_assessment_steps", "10"},
      {"protocol.shared_stream", "auto"},  // auto → validation==assessment on smnist
      {"protocol.max_points", "0"},     // 0 → no sweep point limit
      {"model.kind", "lstm"},
      {"model.chunk", "28"},            // pixels per timestep on image benchmarks
      {"model.hidden", "64"},
      {"model.layers", "1"},
      {"model.head", "single"},
      {"strategy", "naive"},
      {"strategy.lambda", "1"},
      {"strategy.lwf_alpha_schedule", ""},
      {"strategy.temperature", "2"},
      {"strategy.gamma", "0.5"},
      {"strategy.patterns_per_step", "64"},
      {"strategy.sample_size", "64"},
      {"strategy.replay_k", "20"},
      {"strategy.replay_p", "5"},
      {"strategy.fisher_batching", "per_pattern"},
      {"strategy.task_vector", "auto"},  // auto → on for agem
      {"strategy.unconditional_projection", "false"},
      {"train.optimizer", "adam"},
      {"train.lr", "0.001"},
      {"train.minibatch", "32"},
      {"train.max_epochs", "20"},
      {"train.target_train_acc", "0.99"},
      {"train.online", "auto"},          // auto → on for gem/agem
      {"train.allow_non_online", "false"},
      {"train.clip_norm", "5"},
      {"eval.batch", "256"},
      {"eval.forward_transfer", "false"},
      {"seeds", "1,2,3,4,5"},
      {"output.dir", "runs"},
      {"jobs", "1"},
  };
  return table;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

bool one_of(const std::string& v, std::initializer_list<const char*> options) {
  return std::any_of(options.begin(), options.end(),
                     [&](const char* o) { return v == o; });
}

}  // namespace

const std::map<std::string, std::string>& RunConfig::registered_keys() { return defaults(); }

RunConfig::RunConfig() : values_(defaults()) {}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_string(ss.str());
}

RunConfig RunConfig::from_string(const std::string& text) {
  RunConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw config_error("config line " + std::to_string(lineno) + ": expected key = value");
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key.rfind("grid.", 0) == 0) {
    std::string target = key.substr(5);
    if (!defaults().count(target))
      throw config_error("unknown grid key '" + key + "'");
    grid_[target] = value;
    return;
  }
  if (!defaults().count(key)) throw config_error("unknown config key '" + key + "'");
  values_[key] = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw config_error("unknown config key '" + key + "'");
  return it->second;
}

bool RunConfig::is_default(const std::string& key) const {
  return get(key) == defaults().at(key);
}

int RunConfig::get_int(const std::string& key) const {
  try {
    size_t used = 0;
    int v = std::stoi(get(key), &used);
    if (used != get(key).size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw config_error("field '" + key + "': expected an integer, got '" + get(key) + "'");
  }
}

double RunConfig::get_double(const std::string& key) const {
  try {
    size_t used = 0;
    double v = std::stod(get(key), &used);
    if (used != get(key).size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw config_error("field '" + key + "': expected a number, got '" + get(key) + "'");
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  const auto& v = get(key);
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw config_error("field '" + key + "': expected a boolean, got '" + v + "'");
}

uint64_t RunConfig::get_u64(const std::string& key) const {
  try {
    return std::stoull(get(key));
  } catch (const std::exception&) {
    throw config_error("field '" + key + "': expected an unsigned integer, got '" + get(key) + "'");
  }
}

std::vector<uint64_t> RunConfig::get_u64_list(const std::string& key) const {
  std::vector<uint64_t> out;
  for (const auto& item : split_list(get(key))) {
    try {
      out.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw config_error("field '" + key + "': bad list entry '" + item + "'");
    }
  }
  return out;
}

std::vector<double> RunConfig::get_double_list(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : split_list(get(key))) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw config_error("field '" + key + "': bad list entry '" + item + "'");
    }
  }
  return out;
}

void RunConfig::validate() const {
  if (get("version") != "1") throw config_error("field 'version': unsupported value " + get("version"));
  if (!one_of(get("benchmark"), {"smnist", "pmnist", "strokes", "featureseq"}))
    throw config_error("field 'benchmark': unknown benchmark '" + get("benchmark") + "'");
  if (!one_of(get("data.source"), {"auto", "files", "synth"}))
    throw config_error("field 'data.source': expected auto|files|synth");
  if (!one_of(get("scenario.kind"),
              {"auto", "class_incremental", "domain_incremental", "task_incremental"}))
    throw config_error("field 'scenario.kind': unknown kind");
  if (!one_of(get("protocol.mode"), {"direct", "select_assess"}))
    throw config_error("field 'protocol.mode': expected direct|select_assess");
  if (!one_of(get("model.kind"), {"lstm", "mlp"}))
    throw config_error("field 'model.kind': expected lstm|mlp");
  if (!one_of(get("model.head"), {"single", "multi"}))
    throw config_error("field 'model.head': expected single|multi");
  if (!one_of(get("strategy"),
              {"naive", "joint", "ewc", "mas", "lwf", "gem", "agem", "replay"}))
    throw config_error("field 'strategy': unknown strategy '" + get("strategy") + "'");
  if (!one_of(get("strategy.fisher_batching"), {"per_pattern", "minibatch"}))
    throw config_error("field 'strategy.fisher_batching': expected per_pattern|minibatch");
  if (!one_of(get("strategy.task_vector"), {"auto", "on", "off"}))
    throw config_error("field 'strategy.task_vector': expected auto|on|off");
  if (!one_of(get("train.optimizer"), {"adam", "sgd"}))
    throw config_error("field 'train.optimizer': expected adam|sgd");
  if (!one_of(get("train.online"), {"auto", "on", "off"}))
    throw config_error("field 'train.online': expected auto|on|off");

  get_double("strategy.lambda");
  get_double("strategy.temperature");
  get_double("strategy.gamma");
  get_double("train.lr");
  get_double("train.clip_norm");
  get_double("train.target_train_acc");
  if (get_int("model.hidden") < 1) throw config_error("field 'model.hidden': must be positive");
  if (get_int("model.layers") < 1) throw config_error("field 'model.layers': must be positive");
  if (get_int("train.minibatch") < 1) throw config_error("field 'train.minibatch': must be positive");
  if (get_int("train.max_epochs") < 1) throw config_error("field 'train.max_epochs': must be positive");
  if (get_int("eval.batch") < 1) throw config_error("field 'eval.batch': must be positive");
  if (get_int("jobs") < 1) throw config_error("field 'jobs': must be positive");
  if (get_u64_list("seeds").empty()) throw config_error("field 'seeds': need at least one seed");

  bool image_benchmark = get("benchmark") == "smnist" || get("benchmark") == "pmnist";
  if (image_benchmark) {
    int chunk = get_int("model.chunk");
    if (chunk <= 0 || 784 % chunk != 0)
      throw config_error("field 'model.chunk': " + std::to_string(chunk) + " does not divide 784");
  }
  if (get("scenario.fixed_permutation_seed") != "auto")
    get_u64("scenario.fixed_permutation_seed");

  const std::string& strategy = get("strategy");
  const std::string& online = get("train.online");
  bool online_strategy = strategy == "gem" || strategy == "agem";
  if (online_strategy && online == "off" && !get_bool("train.allow_non_online"))
    throw config_error("field 'train.online': " + strategy +
                       " uses the online regime (2 epochs, minibatch 10); set "
                       "train.allow_non_online=true to override");
  if (get("model.head") == "multi") {
    const std::string& kind = get("scenario.kind");
    if (kind != "task_incremental" && kind != "auto")
      throw config_error("field 'model.head': multi-head models need task labels "
                         "(scenario.kind=task_incremental)");
    if (get("benchmark") == "pmnist")
      throw config_error("field 'model.head': the domain-incremental benchmark keeps one head");
    if (strategy == "joint")
      throw config_error("field 'strategy': joint training uses the single-head reference");
  }
  if (strategy == "joint" && get("protocol.mode") != "direct")
    throw config_error("field 'protocol.mode': joint training has no model-selection stream");
}

std::string RunConfig::serialize() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  for (const auto& [k, v] : grid_) out += "grid." + k + " = " + v + "\n";
  return out;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : values_) j[k] = v;
  for (const auto& [k, v] : grid_) j["grid." + k] = v;
  return j;
}

std::vector<std::pair<std::string, std::vector<std::string>>> RunConfig::grid_axes() const {
  std::vector<std::pair<std::string, std::vector<std::string>>> axes;
  for (const auto& [k, v] : grid_) {
    auto vals = split_list(v);
    if (vals.empty()) throw config_error("grid axis '" + k + "' lists no values");
    axes.emplace_back(k, vals);
  }
  return axes;
}

RunConfig RunConfig::without_grid() const {
  RunConfig copy = *this;
  copy.grid_.clear();
  return copy;
}

}  // namespace sqcl
