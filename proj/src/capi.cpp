#include "sqcl/sqcl.h"

#include <cstring>
#include <string>
#include <vector>

#include "sqcl/config.hpp"
#include "sqcl/error.hpp"
#include "sqcl/evaluation.hpp"
#include "sqcl/runner.hpp"

#define SQCL_API __attribute__((visibility("default")))

namespace {

thread_local std::string g_last_error;

sqcl_status fail(sqcl_status code, const std::string& message) {
  g_last_error = message;
  return code;
}

template <typename Fn>
sqcl_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return SQCL_OK;
  } catch (const sqcl::config_error& e) {
    return fail(SQCL_ERROR_CONFIG, e.what());
  } catch (const sqcl::format_error& e) {
    return fail(SQCL_ERROR_FORMAT, e.what());
  } catch (const sqcl::io_error& e) {
    return fail(SQCL_ERROR_IO, e.what());
  } catch (const sqcl::protocol_error& e) {
    return fail(SQCL_ERROR_PROTOCOL, e.what());
  } catch (const sqcl::numeric_error& e) {
    return fail(SQCL_ERROR_NUMERIC, e.what());
  } catch (const sqcl::dimension_error& e) {
    return fail(SQCL_ERROR_INVALID_ARGUMENT, e.what());
  } catch (const std::exception& e) {
    return fail(SQCL_ERROR_RUNTIME, e.what());
  }
}

sqcl_status copy_out(const std::string& value, char* buffer, size_t buffer_len) {
  if (!buffer || buffer_len == 0)
    return fail(SQCL_ERROR_INVALID_ARGUMENT, "output buffer is null or empty");
  if (value.size() + 1 > buffer_len)
    return fail(SQCL_ERROR_INVALID_ARGUMENT,
                "output buffer too small (" + std::to_string(value.size() + 1) + " bytes needed)");
  std::memcpy(buffer, value.c_str(), value.size() + 1);
  return SQCL_OK;
}

}  // namespace

struct sqcl_config {
  sqcl::RunConfig impl;
};

struct sqcl_result {
  sqcl::RunOutput impl;
};

extern "C" {

SQCL_API const char* sqcl_version(void) { return "1.0.0"; }

SQCL_API const char* sqcl_last_error(void) { return g_last_error.c_str(); }

SQCL_API sqcl_status sqcl_config_create(sqcl_config** out) {
  if (!out) return fail(SQCL_ERROR_INVALID_ARGUMENT, "out is null");
  return guarded([&] { *out = new sqcl_config{sqcl::RunConfig()}; });
}

SQCL_API sqcl_status sqcl_config_load(const char* path, sqcl_config** out) {
  if (!path || !out) return fail(SQCL_ERROR_INVALID_ARGUMENT, "path/out is null");
  return guarded([&] { *out = new sqcl_config{sqcl::RunConfig::load(path)}; });
}

SQCL_API sqcl_status sqcl_config_set(sqcl_config* config, const char* key, const char* value) {
  if (!config || !key || !value)
    return fail(SQCL_ERROR_INVALID_ARGUMENT, "config/key/value is null");
  return guarded([&] { config->impl.set(key, value); });
}

SQCL_API sqcl_status sqcl_config_get(const sqcl_config* config, const char* key, char* buffer,
                                     size_t buffer_len) {
  if (!config || !key) return fail(SQCL_ERROR_INVALID_ARGUMENT, "config/key is null");
  sqcl_status status = SQCL_OK;
  sqcl_status guard = guarded([&] { status = copy_out(config->impl.get(key), buffer, buffer_len); });
  return guard != SQCL_OK ? guard : status;
}

SQCL_API sqcl_status sqcl_config_validate(const sqcl_config* config) {
  if (!config) return fail(SQCL_ERROR_INVALID_ARGUMENT, "config is null");
  return guarded([&] { config->impl.validate(); });
}

SQCL_API void sqcl_config_free(sqcl_config* config) { delete config; }

SQCL_API sqcl_status sqcl_run(const sqcl_config* config, const char* out_root, int jobs,
                              sqcl_result** out) {
  if (!config || !out_root || !out)
    return fail(SQCL_ERROR_INVALID_ARGUMENT, "config/out_root/out is null");
  return guarded([&] {
    int effective_jobs = jobs > 0 ? jobs : config->impl.get_int("jobs");
    *out = new sqcl_result{sqcl::execute(config->impl, out_root, effective_jobs)};
  });
}

SQCL_API sqcl_status sqcl_resume(const char* run_dir, int jobs, sqcl_result** out) {
  if (!run_dir || !out) return fail(SQCL_ERROR_INVALID_ARGUMENT, "run_dir/out is null");
  return guarded([&] {
    sqcl::RunConfig config = sqcl::RunConfig::load(std::string(run_dir) + "/config.snapshot.cfg");
    int effective_jobs = jobs > 0 ? jobs : config.get_int("jobs");
    *out = new sqcl_result{sqcl::execute(config, "", effective_jobs, run_dir)};
  });
}

SQCL_API int sqcl_result_num_runs(const sqcl_result* result) {
  return result ? static_cast<int>(result->impl.records.size()) : 0;
}

SQCL_API sqcl_status sqcl_result_seed(const sqcl_result* result, int run, uint64_t* out) {
  if (!result || !out || run < 0 || run >= sqcl_result_num_runs(result))
    return fail(SQCL_ERROR_INVALID_ARGUMENT, "bad result/run index");
  *out = result->impl.records[static_cast<size_t>(run)].seed;
  g_last_error.clear();
  return SQCL_OK;
}

SQCL_API sqcl_status sqcl_result_acc(const sqcl_result* result, int run, double* out) {
  if (!result || !out || run < 0 || run >= sqcl_result_num_runs(result))
    return fail(SQCL_ERROR_INVALID_ARGUMENT, "bad result/run index");
  return guarded(
      [&] { *out = sqcl::acc_metric(result->impl.records[static_cast<size_t>(run)].matrix); });
}

SQCL_API sqcl_status sqcl_result_num_steps(const sqcl_result* result, int run, int* out) {
  if (!result || !out || run < 0 || run >= sqcl_result_num_runs(result))
    return fail(SQCL_ERROR_INVALID_ARGUMENT, "bad result/run index");
  *out = result->impl.records[static_cast<size_t>(run)].matrix.num_steps();
  g_last_error.clear();
  return SQCL_OK;
}

SQCL_API sqcl_status sqcl_result_matrix(const sqcl_result* result, int run, double* buffer,
                                        size_t buffer_len) {
  if (!result || !buffer || run < 0 || run >= sqcl_result_num_runs(result))
    return fail(SQCL_ERROR_INVALID_ARGUMENT, "bad result/run index");
  const auto& m = result->impl.records[static_cast<size_t>(run)].matrix;
  size_t need = static_cast<size_t>(m.num_steps()) * static_cast<size_t>(m.num_steps());
  if (buffer_len < need)
    return fail(SQCL_ERROR_INVALID_ARGUMENT,
                "matrix buffer too small (" + std::to_string(need) + " doubles needed)");
  for (int i = 0; i < m.num_steps(); ++i)
    for (int t = 0; t < m.num_steps(); ++t)
      buffer[static_cast<size_t>(i) * m.num_steps() + t] = m.R[static_cast<size_t>(i)][static_cast<size_t>(t)];
  g_last_error.clear();
  return SQCL_OK;
}

SQCL_API sqcl_status sqcl_result_out_dir(const sqcl_result* result, char* buffer,
                                         size_t buffer_len) {
  if (!result) return fail(SQCL_ERROR_INVALID_ARGUMENT, "result is null");
  return copy_out(result->impl.out_dir, buffer, buffer_len);
}

SQCL_API void sqcl_result_free(sqcl_result* result) { delete result; }

SQCL_API sqcl_status sqcl_make_data(const char* kind, const char* out_path, uint64_t seed,
                                    int num_classes, int per_class_train, int per_class_test) {
  if (!kind || !out_path) return fail(SQCL_ERROR_INVALID_ARGUMENT, "kind/out_path is null");
  return guarded(
      [&] { sqcl::make_data(kind, out_path, seed, num_classes, per_class_train, per_class_test); });
}

SQCL_API sqcl_status sqcl_report(const char* const* run_dirs, int num_dirs, const char* out_dir) {
  if (!run_dirs || num_dirs <= 0 || !out_dir)
    return fail(SQCL_ERROR_INVALID_ARGUMENT, "run_dirs/out_dir is null or empty");
  return guarded([&] {
    std::vector<std::string> dirs(run_dirs, run_dirs + num_dirs);
    sqcl::write_report(dirs, out_dir);
  });
}

SQCL_API sqcl_status sqcl_verify(const char* const* paths, int num_paths, int* checks_out) {
  if (!paths || num_paths <= 0)
    return fail(SQCL_ERROR_INVALID_ARGUMENT, "paths is null or empty");
  return guarded([&] {
    std::vector<std::string> list(paths, paths + num_paths);
    int checks = sqcl::verify_artifacts(list);
    if (checks_out) *checks_out = checks;
  });
}

}  // extern "C"
