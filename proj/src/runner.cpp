#include "sqcl/runner.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "sqcl/error.hpp"
#include "sqcl/io_formats.hpp"
#include "sqcl/protocol.hpp"
#include "sqcl/rng.hpp"
#include "sqcl/synth.hpp"

namespace fs = std::filesystem;

namespace sqcl {

namespace {

uint64_t resolve_fixed_permutation_seed(const RunConfig& config) {
  const std::string& v = config.get("scenario.fixed_permutation_seed");
  if (v != "auto") return std::stoull(v);
  // the image class-incremental runs spread pixel information uniformly
  return config.get("benchmark") == "smnist" ? 1 : 0;
}

std::vector<int> class_order_of(const std::vector<int>& classes, uint64_t order_seed) {
  std::vector<int> order = classes;
  std::sort(order.begin(), order.end());
  if (order_seed != 0) {
    Rng rng(order_seed);
    rng.shuffle(order);
  }
  return order;
}

struct ImagePair {
  ImageSet train;
  ImageSet test;
};

ImagePair image_data(const RunConfig& config, nlohmann::json* manifest) {
  const std::string& dir = config.get("data.dir");
  const std::string& source = config.get("data.source");
  bool use_files = source == "files" || (source == "auto" && !dir.empty());
  ImagePair pair;
  if (use_files) {
    if (dir.empty()) throw config_error("field 'data.dir': required when data.source=files");
    pair.train = read_idx(dir + "/train-images-idx3-ubyte", dir + "/train-labels-idx1-ubyte");
    pair.test = read_idx(dir + "/t10k-images-idx3-ubyte", dir + "/t10k-labels-idx1-ubyte");
    (*manifest)["source"] = "idx:" + dir;
  } else {
    uint64_t seed = config.get_u64("data.synth_seed");
    pair.train = synth_digits(config.get_int("data.train_per_class"), seed);
    pair.test = synth_digits(config.get_int("data.test_per_class"), seed + 1);
    (*manifest)["source"] = "synth-digits";
    (*manifest)["synth_seed"] = seed;
  }
  uint64_t sub_seed = config.get_u64("scenario.seed");
  pair.train = subsample_per_class(pair.train, config.get_int("data.train_per_class"), sub_seed);
  pair.test = subsample_per_class(pair.test, config.get_int("data.test_per_class"), sub_seed + 1);
  (*manifest)["train_per_class"] = config.get_int("data.train_per_class");
  (*manifest)["test_per_class"] = config.get_int("data.test_per_class");
  return pair;
}

SplitSequences sequence_data(const RunConfig& config, nlohmann::json* manifest) {
  const std::string& benchmark = config.get("benchmark");
  const std::string& dir = config.get("data.dir");
  const std::string& source = config.get("data.source");
  bool use_files = source == "files" || (source == "auto" && !dir.empty());
  int train_pc = config.get_int("data.train_per_class");
  int test_pc = config.get_int("data.test_per_class");

  LabeledSequences pool;
  if (use_files) {
    if (dir.empty()) throw config_error("field 'data.dir': required when data.source=files");
    pool = benchmark == "strokes" ? read_strokes(dir) : read_featureseq(dir);
    (*manifest)["source"] = "file:" + dir;
  } else {
    uint64_t seed = config.get_u64("data.synth_seed");
    int classes = config.get_int("data.num_classes");
    pool = synth_sequences(benchmark == "strokes" ? SynthKind::stroke_like
                                                  : SynthKind::spectrogram_like,
                           classes, train_pc + test_pc, seed);
    (*manifest)["source"] = "synth";
    (*manifest)["synth_seed"] = seed;
  }

  // held-out split from one pool: class structure is tied to the pool
  SplitSequences split;
  std::map<int, int> seen;
  for (auto& item : pool.items) {
    int k = seen[item.label]++;
    if (k < train_pc)
      split.train.items.push_back(std::move(item));
    else if (k < train_pc + test_pc)
      split.test.items.push_back(std::move(item));
  }
  (*manifest)["train_per_class"] = train_pc;
  (*manifest)["test_per_class"] = test_pc;
  return split;
}

}  // namespace

PreparedData prepare(const RunConfig& config) {
  config.validate();
  PreparedData out;
  out.data_manifest["benchmark"] = config.get("benchmark");
  const std::string& benchmark = config.get("benchmark");
  uint64_t scenario_seed = config.get_u64("scenario.seed");
  std::string kind = config.get("scenario.kind");

  if (benchmark == "smnist" || benchmark == "pmnist") {
    ImagePair images = image_data(config, &out.data_manifest);
    int chunk = config.get_int("model.chunk");
    if (benchmark == "pmnist") {
      if (kind == "auto") kind = "domain_incremental";
      if (kind != "domain_incremental")
        throw config_error("field 'scenario.kind': pmnist is the domain-incremental benchmark");
      int steps = config.get_int("scenario.num_steps");
      if (steps == 0) steps = 10;
      out.scenario = build_domain_incremental(images.train, images.test, steps, scenario_seed,
                                              chunk);
      return out;
    }
    if (kind == "auto") kind = "class_incremental";
    if (kind == "domain_incremental")
      throw config_error("field 'scenario.kind': smnist is a new-classes benchmark");
    bool multi_task = kind == "task_incremental";
    std::set<int> labels(images.train.labels.begin(), images.train.labels.end());
    auto order = class_order_of({labels.begin(), labels.end()},
                                config.get_u64("scenario.class_order_seed"));
    int cps = config.get_int("scenario.classes_per_step");
    int steps = config.get_int("scenario.num_steps");
    if (steps == 0) steps = static_cast<int>(order.size()) / cps;
    SplitSequences seqs{chunk_images(images.train, chunk), chunk_images(images.test, chunk)};
    out.scenario = build_class_incremental(seqs, cps, steps, order, scenario_seed, multi_task);
    uint64_t perm_seed = resolve_fixed_permutation_seed(config);
    if (perm_seed != 0) apply_fixed_permutation(&out.scenario, perm_seed);

    if (config.get("protocol.mode") == "select_assess") {
      // the short image stream reuses itself for selection and assessment
      bool shared = config.get("protocol.shared_stream") == "true" ||
                    config.get("protocol.shared_stream") == "auto";
      if (!shared)
        throw config_error("field 'protocol.shared_stream': the 5-step image stream cannot "
                           "hold out validation steps");
      out.validation = out.scenario;
      out.data_manifest["shared_selection_stream"] = true;
    }
    return out;
  }

  // sequence benchmarks (strokes / featureseq)
  if (kind == "auto") kind = "class_incremental";
  if (kind == "domain_incremental")
    throw config_error("field 'scenario.kind': sequence benchmarks are new-classes streams");
  bool multi_task = kind == "task_incremental";
  SplitSequences data = sequence_data(config, &out.data_manifest);
  auto order = class_order_of(data.train.class_set(), config.get_u64("scenario.class_order_seed"));
  int cps = config.get_int("scenario.classes_per_step");

  if (config.get("protocol.mode") == "select_assess") {
    bool shared = config.get("protocol.shared_stream") == "true";
    if (shared) {
      int steps = config.get_int("scenario.num_steps");
      if (steps == 0) steps = static_cast<int>(order.size()) / cps;
      out.scenario = build_class_incremental(data, cps, steps, order, scenario_seed, multi_task);
      out.validation = out.scenario;
      out.data_manifest["shared_selection_stream"] = true;
    } else {
      auto streams = holdout_split(data, order, cps, config.get_int("protocol.validation_steps"),
                                   config.get_int("protocol.max_assessment_steps"), scenario_seed,
                                   multi_task);
      assert_no_leakage(streams.validation, streams.assessment);
      out.validation = std::move(streams.validation);
      out.scenario = std::move(streams.assessment);
    }
  } else {
    int steps = config.get_int("scenario.num_steps");
    if (steps == 0) steps = static_cast<int>(order.size()) / cps;
    out.scenario = build_class_incremental(data, cps, steps, order, scenario_seed, multi_task);
  }
  return out;
}

namespace {

std::string timestamp_utc() {
  auto now = std::chrono::system_clock::now();
  std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y%m%dT%H%M%S", std::gmtime(&t));
  auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()) % 1000;
  std::snprintf(buf + std::strlen(buf), 8, ".%03d", static_cast<int>(ms.count()));
  return buf;
}

void append_journal(const std::string& out_dir, const nlohmann::json& entry) {
  std::ofstream j(out_dir + "/journal.jsonl", std::ios::app);
  if (!j) throw io_error("cannot append to " + out_dir + "/journal.jsonl");
  j << entry.dump() << "\n";
}

struct JournalState {
  std::set<std::string> grid_done;
  std::vector<std::pair<std::string, double>> grid_table;
  std::set<uint64_t> seeds_done;
  std::vector<RunRecord> records;
};

JournalState load_journal(const std::string& out_dir) {
  JournalState state;
  std::ifstream j(out_dir + "/journal.jsonl");
  if (!j) return state;
  std::string line;
  while (std::getline(j, line)) {
    if (line.empty()) continue;
    auto entry = nlohmann::json::parse(line, nullptr, false);
    if (entry.is_discarded()) throw format_error(out_dir + "/journal.jsonl: corrupt entry");
    if (entry.at("type") == "grid") {
      state.grid_done.insert(entry.at("config").get<std::string>());
      state.grid_table.emplace_back(entry.at("config").get<std::string>(),
                                    entry.at("acc").get<double>());
    } else if (entry.at("type") == "record") {
      uint64_t seed = entry.at("seed").get<uint64_t>();
      std::ifstream rec(out_dir + "/" + entry.at("file").get<std::string>());
      if (!rec) throw io_error("journal names a missing record file " +
                               entry.at("file").get<std::string>());
      state.records.push_back(RunRecord::from_json(nlohmann::json::parse(rec)));
      state.seeds_done.insert(seed);
    }
  }
  return state;
}

}  // namespace

RunOutput execute(const RunConfig& config_in, const std::string& out_root, int jobs,
                  const std::string& resume_dir) {
  RunConfig config = config_in;
  std::string out_dir = resume_dir;
  JournalState journal;
  if (!resume_dir.empty()) {
    config = RunConfig::load(resume_dir + "/config.snapshot.cfg");
    journal = load_journal(resume_dir);
  }
  config.validate();
  PreparedData data = prepare(config);

  if (out_dir.empty()) {
    out_dir = out_root + "/" + timestamp_utc() + "-" + config.get("benchmark") + "-" +
              config.get("strategy");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw io_error("cannot create " + out_dir + ": " + ec.message());
    std::ofstream snap(out_dir + "/config.snapshot.cfg");
    snap << config.serialize();
    if (!snap) throw io_error("cannot write config snapshot in " + out_dir);
  }
  {
    nlohmann::json manifest;
    manifest["data"] = data.data_manifest;
    manifest["scenario"] = data.scenario.manifest;
    if (data.validation) manifest["validation_scenario"] = data.validation->manifest;
    std::ofstream m(out_dir + "/manifest.json");
    m << manifest.dump(2) << "\n";
  }

  RunOutput out;
  out.out_dir = out_dir;
  RunConfig run_config = config.without_grid();

  if (config.get("protocol.mode") == "select_assess" || config.has_grid()) {
    if (!data.validation)
      throw config_error("field 'protocol.mode': grid search needs select_assess streams");
    GridResult grid = grid_search(
        config, *data.validation, jobs, config.get_int("protocol.max_points"), journal.grid_done,
        journal.grid_table, [&](const RunConfig& point, double acc) {
          append_journal(out_dir, {{"type", "grid"}, {"config", point.serialize()}, {"acc", acc}});
        });
    run_config = grid.best;
    nlohmann::json table = nlohmann::json::array();
    for (const auto& [cfg, acc] : grid.table) table.push_back({{"config", cfg}, {"acc", acc}});
    out.grid_table = {{"best", grid.best.serialize()},
                      {"best_acc", grid.best_acc},
                      {"points", table}};
    std::ofstream g(out_dir + "/grid_table.json");
    g << out.grid_table.dump(2) << "\n";
  }

  out.records = journal.records;
  auto seeds = config.get_u64_list("seeds");
  auto fresh = run_assessment(run_config, data.scenario, seeds, jobs, journal.seeds_done,
                              [&](const RunRecord& record) {
                                std::string file = "record-" + std::to_string(record.seed) + ".json";
                                std::ofstream r(out_dir + "/" + file);
                                r << record.to_json().dump(2) << "\n";
                                if (!r) throw io_error("cannot write " + file);
                                append_journal(out_dir, {{"type", "record"},
                                                         {"seed", record.seed},
                                                         {"file", file}});
                              });
  out.records.insert(out.records.end(), fresh.begin(), fresh.end());
  std::sort(out.records.begin(), out.records.end(),
            [](const RunRecord& a, const RunRecord& b) { return a.seed < b.seed; });

  {
    nlohmann::json all = nlohmann::json::array();
    for (const auto& r : out.records) all.push_back(r.to_json());
    std::ofstream recs(out_dir + "/records.json");
    recs << all.dump(2) << "\n";
  }
  emit_report(out.records, out_dir);

  std::ofstream latest(out_root + "/latest");
  latest << out_dir << "\n";
  return out;
}

void make_data(const std::string& kind, const std::string& out_path, uint64_t seed,
               int num_classes, int per_class_train, int per_class_test) {
  nlohmann::json manifest;
  manifest["kind"] = kind;
  manifest["seed"] = seed;
  manifest["per_class_train"] = per_class_train;
  manifest["per_class_test"] = per_class_test;

  if (kind == "digits-idx") {
    std::error_code ec;
    fs::create_directories(out_path, ec);
    if (ec) throw io_error("cannot create " + out_path + ": " + ec.message());
    ImageSet train = synth_digits(per_class_train, seed);
    ImageSet test = synth_digits(per_class_test, seed + 1);
    write_idx(train, out_path + "/train-images-idx3-ubyte", out_path + "/train-labels-idx1-ubyte");
    write_idx(test, out_path + "/t10k-images-idx3-ubyte", out_path + "/t10k-labels-idx1-ubyte");
    manifest["num_classes"] = 10;
    manifest["template_accuracy"] = template_classifier_accuracy(train, test);
    std::ofstream m(out_path + "/manifest.json");
    m << manifest.dump(2) << "\n";
    return;
  }

  SynthKind synth_kind;
  if (kind == "strokes")
    synth_kind = SynthKind::stroke_like;
  else if (kind == "featureseq")
    synth_kind = SynthKind::spectrogram_like;
  else
    throw config_error("make-data kind must be strokes|featureseq|digits-idx, got '" + kind + "'");

  LabeledSequences pool =
      synth_sequences(synth_kind, num_classes, per_class_train + per_class_test, seed);
  LabeledSequences train, test;
  std::map<int, int> seen;
  for (auto& item : pool.items) {
    (seen[item.label]++ < per_class_train ? train : test).items.push_back(std::move(item));
  }
  std::string train_path = out_path, test_path = out_path;
  auto dot = out_path.find_last_of('.');
  std::string stem = dot == std::string::npos ? out_path : out_path.substr(0, dot);
  std::string ext = dot == std::string::npos ? ".txt" : out_path.substr(dot);
  train_path = stem + ".train" + ext;
  test_path = stem + ".test" + ext;
  if (synth_kind == SynthKind::stroke_like) {
    write_strokes(train, train_path);
    write_strokes(test, test_path);
  } else {
    write_featureseq(train, train_path);
    write_featureseq(test, test_path);
  }
  manifest["num_classes"] = num_classes;
  manifest["train_file"] = train_path;
  manifest["test_file"] = test_path;
  manifest["template_accuracy"] = template_classifier_accuracy(train, test);
  std::ofstream m(stem + ".manifest.json");
  m << manifest.dump(2) << "\n";
}

void write_report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
  if (run_dirs.empty()) throw config_error("report needs at least one run directory");
  std::vector<RunRecord> records;
  std::set<std::string> benchmarks;
  for (const auto& dir : run_dirs) {
    std::ifstream in(dir + "/records.json");
    if (!in) throw io_error(dir + " holds no records.json");
    auto parsed = nlohmann::json::parse(in, nullptr, false);
    if (parsed.is_discarded()) throw format_error(dir + "/records.json is corrupt");
    for (const auto& j : parsed) {
      RunRecord r = RunRecord::from_json(j);
      benchmarks.insert(r.config_snapshot.value("benchmark", "?"));
      records.push_back(std::move(r));
    }
  }
  if (benchmarks.size() > 1) {
    std::string all;
    for (const auto& b : benchmarks) all += (all.empty() ? "" : ", ") + b;
    throw config_error("refusing to aggregate mixed benchmarks: " + all);
  }
  emit_report(records, out_dir);
}

namespace {

int verify_run_dir(const std::string& dir) {
  int checks = 0;
  std::ifstream in(dir + "/records.json");
  if (!in) throw protocol_error(dir + ": missing records.json");
  auto parsed = nlohmann::json::parse(in, nullptr, false);
  if (parsed.is_discarded()) throw format_error(dir + "/records.json is corrupt");

  RunConfig snapshot = RunConfig::load(dir + "/config.snapshot.cfg");
  snapshot.validate();
  ++checks;

  for (const auto& j : parsed) {
    RunRecord r = RunRecord::from_json(j);
    for (int i = 0; i < r.matrix.num_steps(); ++i)
      for (int t = 0; t < r.matrix.num_steps(); ++t)
        if (r.matrix.present(i, t)) {
          if (r.matrix.at(i, t) < 0.0 || r.matrix.at(i, t) > 1.0)
            throw protocol_error(dir + ": accuracy entry out of [0,1]");
          ++checks;
        }
    double acc = acc_metric(r.matrix);
    const auto& last = r.matrix.R.back();
    double mean = 0;
    for (double v : last) mean += v;
    mean /= static_cast<double>(last.size());
    if (std::abs(acc - mean) > 1e-12)
      throw protocol_error(dir + ": ACC does not match the last accuracy row");
    ++checks;
  }

  std::ifstream mf(dir + "/manifest.json");
  if (mf) {
    auto manifest = nlohmann::json::parse(mf, nullptr, false);
    if (manifest.is_discarded()) throw format_error(dir + "/manifest.json is corrupt");
    if (manifest.contains("validation_scenario") && manifest.contains("scenario") &&
        !manifest.value("data", nlohmann::json::object())
             .value("shared_selection_stream", false)) {
      std::set<int> val, assess;
      for (const auto& s : manifest["validation_scenario"].value("steps", nlohmann::json::array()))
        for (int c : s.value("classes", std::vector<int>{})) val.insert(c);
      for (const auto& s : manifest["scenario"].value("steps", nlohmann::json::array()))
        for (int c : s.value("classes", std::vector<int>{})) assess.insert(c);
      for (int c : val)
        if (assess.count(c))
          throw protocol_error(dir + ": validation class " + std::to_string(c) +
                               " leaks into assessment");
      ++checks;
    }
  }
  return checks;
}

}  // namespace

int verify_artifacts(const std::vector<std::string>& paths) {
  if (paths.empty()) throw config_error("verify needs at least one artifact path");
  int checks = 0;
  for (const auto& path : paths) {
    if (fs::is_directory(path)) {
      if (fs::exists(path + "/records.json")) {
        checks += verify_run_dir(path);
      } else if (fs::exists(path + "/train-images-idx3-ubyte")) {
        auto set = read_idx(path + "/train-images-idx3-ubyte", path + "/train-labels-idx1-ubyte");
        if (set.size() == 0) throw protocol_error(path + ": empty IDX payload");
        ++checks;
      } else {
        throw config_error(path + ": directory holds no recognizable artifacts");
      }
      continue;
    }
    if (!fs::exists(path)) throw io_error(path + ": no such artifact");
    if (path.size() > 5 && path.substr(path.size() - 5) == ".ckpt") {
      read_checkpoint(path);
      ++checks;
      continue;
    }
    // try the text formats in order
    try {
      auto ds = read_strokes(path);
      (void)ds;
      ++checks;
      continue;
    } catch (const format_error&) {
    }
    auto ds = read_featureseq(path);
    (void)ds;
    ++checks;
  }
  return checks;
}

}  // namespace sqcl
