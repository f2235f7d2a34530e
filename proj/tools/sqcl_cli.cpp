// Command-line shell over the sqcl C API.
#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sqcl/sqcl.h"

namespace {

int report_failure(sqcl_status status) {
  std::fprintf(stderr, "error: %s\n", sqcl_last_error());
  switch (status) {
    case SQCL_ERROR_CONFIG:
    case SQCL_ERROR_INVALID_ARGUMENT:
      return 2;
    default:
      return 1;
  }
}

struct ConfigHandle {
  sqcl_config* ptr = nullptr;
  ~ConfigHandle() { sqcl_config_free(ptr); }
};

struct ResultHandle {
  sqcl_result* ptr = nullptr;
  ~ResultHandle() { sqcl_result_free(ptr); }
};

int print_result_summary(const sqcl_result* result) {
  char out_dir[4096];
  if (sqcl_result_out_dir(result, out_dir, sizeof(out_dir)) == SQCL_OK)
    std::printf("outputs: %s\n", out_dir);
  int runs = sqcl_result_num_runs(result);
  for (int i = 0; i < runs; ++i) {
    uint64_t seed = 0;
    double acc = 0.0;
    if (sqcl_result_seed(result, i, &seed) != SQCL_OK ||
        sqcl_result_acc(result, i, &acc) != SQCL_OK)
      return report_failure(SQCL_ERROR_RUNTIME);
    std::printf("seed %llu: ACC %.4f\n", static_cast<unsigned long long>(seed), acc);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sqcl: continual-learning experiments on sequence classifiers"};
  app.require_subcommand(1);

  // run ----------------------------------------------------------------------
  auto* run = app.add_subcommand("run", "execute a configured experiment");
  std::string config_path, resume_dir, out_root = "runs";
  std::vector<std::string> overrides;
  int jobs = 0;
  run->add_option("--config", config_path, "run configuration file");
  run->add_option("--resume", resume_dir, "output directory of an interrupted sweep");
  run->add_option("--set", overrides, "override a config key (key=value), repeatable");
  run->add_option("--out", out_root, "output root directory");
  run->add_option("--jobs", jobs, "worker threads (0 = config value)");

  // make-data ------------------------------------------------------------------
  auto* make = app.add_subcommand("make-data", "emit a synthetic dataset");
  std::string kind, data_out;
  uint64_t seed = 1;
  int classes = 16, per_train = 200, per_test = 50;
  make->add_option("--kind", kind, "strokes | featureseq | digits-idx")->required();
  make->add_option("--out", data_out, "output file (or directory for digits-idx)")->required();
  make->add_option("--seed", seed, "generator seed");
  make->add_option("--classes", classes, "number of classes (sequence kinds)");
  make->add_option("--train", per_train, "training patterns per class");
  make->add_option("--test", per_test, "test patterns per class");

  // report ----------------------------------------------------------------------
  auto* report = app.add_subcommand("report", "aggregate run directories into tables and charts");
  std::vector<std::string> report_dirs;
  std::string report_out = "report";
  report->add_option("dirs", report_dirs, "run output directories")->required();
  report->add_option("--out", report_out, "report output directory");

  // verify ----------------------------------------------------------------------
  auto* verify = app.add_subcommand("verify", "run the invariant suite on artifacts");
  std::vector<std::string> verify_paths;
  verify->add_option("paths", verify_paths, "run directories, data files or checkpoints")
      ->required();

  CLI11_PARSE(app, argc, argv);

  if (run->parsed()) {
    if (config_path.empty() == resume_dir.empty()) {
      std::fprintf(stderr, "error: run needs exactly one of --config or --resume\n");
      return 2;
    }
    ResultHandle result;
    if (!resume_dir.empty()) {
      sqcl_status status = sqcl_resume(resume_dir.c_str(), jobs, &result.ptr);
      if (status != SQCL_OK) return report_failure(status);
      return print_result_summary(result.ptr);
    }
    ConfigHandle config;
    sqcl_status status = sqcl_config_load(config_path.c_str(), &config.ptr);
    if (status != SQCL_OK) return report_failure(status);
    for (const auto& kv : overrides) {
      auto eq = kv.find('=');
      if (eq == std::string::npos) {
        std::fprintf(stderr, "error: --set expects key=value, got '%s'\n", kv.c_str());
        return 2;
      }
      status = sqcl_config_set(config.ptr, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str());
      if (status != SQCL_OK) return report_failure(status);
    }
    status = sqcl_config_validate(config.ptr);
    if (status != SQCL_OK) return report_failure(status);
    status = sqcl_run(config.ptr, out_root.c_str(), jobs, &result.ptr);
    if (status != SQCL_OK) return report_failure(status);
    return print_result_summary(result.ptr);
  }

  if (make->parsed()) {
    sqcl_status status =
        sqcl_make_data(kind.c_str(), data_out.c_str(), seed, classes, per_train, per_test);
    if (status != SQCL_OK) return report_failure(status);
    std::printf("wrote %s dataset to %s\n", kind.c_str(), data_out.c_str());
    return 0;
  }

  if (report->parsed()) {
    std::vector<const char*> dirs;
    for (const auto& d : report_dirs) dirs.push_back(d.c_str());
    sqcl_status status =
        sqcl_report(dirs.data(), static_cast<int>(dirs.size()), report_out.c_str());
    if (status != SQCL_OK) return report_failure(status);
    std::printf("report written to %s\n", report_out.c_str());
    return 0;
  }

  if (verify->parsed()) {
    std::vector<const char*> paths;
    for (const auto& p : verify_paths) paths.push_back(p.c_str());
    int checks = 0;
    sqcl_status status = sqcl_verify(paths.data(), static_cast<int>(paths.size()), &checks);
    if (status != SQCL_OK) return report_failure(status);
    std::printf("verify: %d checks passed\n", checks);
    return 0;
  }

  return 0;
}
