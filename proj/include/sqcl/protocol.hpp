#pragma once

#include <functional>
#include <set>
#include <string>
#include <vector>

#include "sqcl/config.hpp"
#include "sqcl/evaluation.hpp"
#include "sqcl/streams.hpp"

namespace sqcl {

// Grid expansion: cartesian product over the config's grid.* axes, returned
// in deterministic (sorted serialized form) order so interrupted sweeps
// resume reproducibly.
std::vector<RunConfig> expand_grid(const RunConfig& base);

// One continual training run of `config` on `scenario` with `seed`.
RunRecord execute_single_run(const RunConfig& config, const Scenario& scenario, uint64_t seed);

struct GridResult {
  RunConfig best;
  double best_acc = 0.0;
  // serialized config → validation ACC, in execution order
  std::vector<std::pair<std::string, double>> table;
};

// Trains every grid point continually on the validation stream and scores by
// ACC. Ties break toward fewer parameters, then lexicographic config order.
// `skip` holds serialized configs already scored (their accs must be in
// `known`); `on_point` fires after each fresh point (journaling).
GridResult grid_search(const RunConfig& base, const Scenario& validation, int jobs,
                       int max_points = 0,
                       const std::set<std::string>& skip = {},
                       const std::vector<std::pair<std::string, double>>& known = {},
                       const std::function<void(const RunConfig&, double)>& on_point = {});

// num_seeds independent runs of the selected configuration.
std::vector<RunRecord> run_assessment(const RunConfig& config, const Scenario& scenario,
                                      const std::vector<uint64_t>& seeds, int jobs,
                                      const std::set<uint64_t>& skip_seeds = {},
                                      const std::function<void(const RunRecord&)>& on_record = {});

// Work queue spanning `jobs` threads; rethrows the first worker exception.
void parallel_for(int n, int jobs, const std::function<void(int)>& fn);

}  // namespace sqcl
