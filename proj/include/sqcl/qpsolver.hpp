#pragma once

#include <string>
#include <vector>

namespace sqcl::qp {

// min_z ½‖g − z‖²  subject to  Gz ≥ γ  (one row per past-step constraint)
struct QPInstance {
  std::vector<double> g;
  std::vector<std::vector<double>> G;
  double gamma = 0.0;
};

enum class SolveStatus { optimal, fallback };

struct QPSolution {
  std::vector<double> z;
  std::vector<double> duals;  // v ≥ 0, one per constraint row
  SolveStatus status = SolveStatus::fallback;
  int iterations = 0;
  double kkt_residual = 0.0;
};

// Solves the dual min_v ½vᵀGGᵀv + vᵀ(Gg − γ1), v ≥ 0 by projected gradient
// with exact line search, then recovers z = g + Gᵀv. Zero-norm rows are
// dropped when γ ≤ 0; with γ > 0 they make the instance infeasible and the
// solve reports fallback with z = g.
QPSolution solve(const QPInstance& instance);

// Max over the four KKT residuals (primal/dual feasibility, stationarity,
// complementary slackness), scaled relative to the instance magnitude.
double verify_kkt(const QPInstance& instance, const QPSolution& solution);

// Text dump for reproducing solver issues offline.
void dump_instance(const QPInstance& instance, const QPSolution* solution,
                   const std::string& path);

}  // namespace sqcl::qp
