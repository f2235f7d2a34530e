#include "sqcl/qpsolver.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "sqcl/error.hpp"

namespace sqcl::qp {

namespace {

constexpr int kIterationCap = 100000;
constexpr double kTol = 1e-10;

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Gaussian elimination with partial pivoting; returns false when singular.
bool solve_dense(std::vector<std::vector<double>> a, std::vector<double> rhs,
                 std::vector<double>* out) {
  size_t n = a.size();
  for (size_t col = 0; col < n; ++col) {
    size_t piv = col;
    for (size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    if (std::abs(a[piv][col]) < 1e-14) return false;
    std::swap(a[piv], a[col]);
    std::swap(rhs[piv], rhs[col]);
    for (size_t r = col + 1; r < n; ++r) {
      double f = a[r][col] / a[col][col];
      for (size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
      rhs[r] -= f * rhs[col];
    }
  }
  out->assign(n, 0.0);
  for (size_t r = n; r-- > 0;) {
    double s = rhs[r];
    for (size_t c = r + 1; c < n; ++c) s -= a[r][c] * (*out)[c];
    (*out)[r] = s / a[r][r];
  }
  return true;
}

struct Reduced {
  std::vector<int> rows;                  // surviving original row indices
  std::vector<std::vector<double>> G;
  std::vector<std::vector<double>> A;     // GGᵀ
  std::vector<double> b;                  // Gg − γ
  bool infeasible_degenerate = false;
};

Reduced reduce(const QPInstance& inst) {
  Reduced red;
  for (size_t i = 0; i < inst.G.size(); ++i) {
    if (inst.G[i].size() != inst.g.size())
      throw dimension_error("qp: constraint row " + std::to_string(i) + " has length " +
                            std::to_string(inst.G[i].size()) + ", expected " +
                            std::to_string(inst.g.size()));
    double norm2 = dot(inst.G[i], inst.G[i]);
    if (norm2 == 0.0) {
      // 0·z ≥ γ: vacuous for γ ≤ 0, impossible otherwise
      if (inst.gamma > 0.0) red.infeasible_degenerate = true;
      continue;
    }
    red.rows.push_back(static_cast<int>(i));
    red.G.push_back(inst.G[i]);
  }
  size_t m = red.G.size();
  red.A.assign(m, std::vector<double>(m, 0.0));
  red.b.resize(m);
  for (size_t i = 0; i < m; ++i) {
    for (size_t j = i; j < m; ++j) {
      red.A[i][j] = dot(red.G[i], red.G[j]);
      red.A[j][i] = red.A[i][j];
    }
    red.b[i] = dot(red.G[i], inst.g) - inst.gamma;
  }
  return red;
}

std::vector<double> recover_z(const QPInstance& inst, const Reduced& red,
                              const std::vector<double>& v) {
  std::vector<double> z = inst.g;
  for (size_t i = 0; i < red.G.size(); ++i) {
    if (v[i] == 0.0) continue;
    for (size_t j = 0; j < z.size(); ++j) z[j] += v[i] * red.G[i][j];
  }
  return z;
}

double kkt_residual_reduced(const QPInstance& inst, const Reduced& red,
                            const std::vector<double>& v, const std::vector<double>& z) {
  double scale = std::max(1.0, std::abs(inst.gamma));
  for (double x : inst.g) scale = std::max(scale, std::abs(x));
  double worst = 0.0;
  for (size_t i = 0; i < red.G.size(); ++i) {
    double slack = dot(red.G[i], z) - inst.gamma;
    worst = std::max(worst, std::max(0.0, -slack) / scale);       // primal feasibility
    worst = std::max(worst, std::max(0.0, -v[i]) / scale);        // dual feasibility
    worst = std::max(worst, std::abs(v[i] * slack) / (scale * scale));  // complementarity
  }
  // stationarity: z − g − Gᵀv
  std::vector<double> r = inst.g;
  for (size_t i = 0; i < red.G.size(); ++i)
    for (size_t j = 0; j < r.size(); ++j) r[j] += v[i] * red.G[i][j];
  for (size_t j = 0; j < r.size(); ++j) worst = std::max(worst, std::abs(z[j] - r[j]) / scale);
  return worst;
}

// Fixes an active set S, solves A_SS v_S = −b_S exactly, and accepts the
// candidate when it satisfies the full KKT system.
bool try_polish(const QPInstance& inst, const Reduced& red, std::vector<double>* v,
                std::vector<double>* z, double* residual) {
  size_t m = red.A.size();
  std::vector<int> active;
  for (size_t i = 0; i < m; ++i) {
    double grad_i = red.b[i];
    for (size_t j = 0; j < m; ++j) grad_i += red.A[i][j] * (*v)[j];
    if ((*v)[i] > 1e-12 || grad_i < -1e-12) active.push_back(static_cast<int>(i));
  }
  std::vector<double> cand(m, 0.0);
  if (!active.empty()) {
    std::vector<std::vector<double>> as(active.size(), std::vector<double>(active.size()));
    std::vector<double> rhs(active.size());
    for (size_t i = 0; i < active.size(); ++i) {
      for (size_t j = 0; j < active.size(); ++j)
        as[i][j] = red.A[static_cast<size_t>(active[i])][static_cast<size_t>(active[j])];
      rhs[i] = -red.b[static_cast<size_t>(active[i])];
    }
    std::vector<double> vs;
    if (!solve_dense(as, rhs, &vs)) return false;
    for (size_t i = 0; i < active.size(); ++i) {
      if (vs[i] < 0.0) return false;
      cand[static_cast<size_t>(active[i])] = vs[i];
    }
  }
  std::vector<double> zc = recover_z(inst, red, cand);
  double res = kkt_residual_reduced(inst, red, cand, zc);
  if (res < 1e-9) {
    *v = std::move(cand);
    *z = std::move(zc);
    *residual = res;
    return true;
  }
  return false;
}

}  // namespace

QPSolution solve(const QPInstance& inst) {
  QPSolution sol;
  Reduced red = reduce(inst);
  size_t m = red.A.size();

  if (red.infeasible_degenerate) {
    sol.z = inst.g;
    sol.duals.assign(inst.G.size(), 0.0);
    sol.status = SolveStatus::fallback;
    sol.kkt_residual = std::numeric_limits<double>::infinity();
    return sol;
  }
  if (m == 0) {
    sol.z = inst.g;
    sol.duals.assign(inst.G.size(), 0.0);
    sol.status = SolveStatus::optimal;
    sol.kkt_residual = 0.0;
    return sol;
  }

  // Lipschitz bound for the dual gradient: infinity norm of A.
  double lip = 0.0;
  for (size_t i = 0; i < m; ++i) {
    double row = 0.0;
    for (size_t j = 0; j < m; ++j) row += std::abs(red.A[i][j]);
    lip = std::max(lip, row);
  }
  double step = lip > 0.0 ? 1.0 / lip : 1.0;

  std::vector<double> v(m, 0.0), grad(m), d(m), z;
  double residual = std::numeric_limits<double>::infinity();
  int iter = 0;
  bool converged = false;
  for (; iter < kIterationCap; ++iter) {
    for (size_t i = 0; i < m; ++i) {
      double gi = red.b[i];
      for (size_t j = 0; j < m; ++j) gi += red.A[i][j] * v[j];
      grad[i] = gi;
    }
    // projected-gradient direction
    double dnorm = 0.0;
    for (size_t i = 0; i < m; ++i) {
      d[i] = std::max(0.0, v[i] - step * grad[i]) - v[i];
      dnorm = std::max(dnorm, std::abs(d[i]));
    }
    bool stalled = dnorm < kTol * std::max(1.0, step);
    if (stalled || (iter % 16 == 0 && iter > 0)) {
      if (try_polish(inst, red, &v, &z, &residual)) {
        converged = true;
        break;
      }
      if (stalled) break;
    }
    // exact line search along d: f quadratic in t on [0, 1]
    double gd = dot(grad, d);
    double dAd = 0.0;
    for (size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (size_t j = 0; j < m; ++j) s += red.A[i][j] * d[j];
      dAd += d[i] * s;
    }
    double t = 1.0;
    if (dAd > 0.0) t = std::clamp(-gd / dAd, 0.0, 1.0);
    if (t <= 0.0) t = 1.0;
    for (size_t i = 0; i < m; ++i) v[i] = std::max(0.0, v[i] + t * d[i]);
  }

  if (!converged) {
    z = recover_z(inst, red, v);
    residual = kkt_residual_reduced(inst, red, v, z);
    converged = residual < 1e-8;
  }

  sol.z = std::move(z);
  sol.duals.assign(inst.G.size(), 0.0);
  for (size_t i = 0; i < red.rows.size(); ++i)
    sol.duals[static_cast<size_t>(red.rows[i])] = v[i];
  sol.iterations = iter;
  sol.kkt_residual = residual;
  sol.status = converged ? SolveStatus::optimal : SolveStatus::fallback;
  return sol;
}

double verify_kkt(const QPInstance& inst, const QPSolution& sol) {
  Reduced red = reduce(inst);
  std::vector<double> v;
  for (int row : red.rows) v.push_back(sol.duals[static_cast<size_t>(row)]);
  return kkt_residual_reduced(inst, red, v, sol.z);
}

void dump_instance(const QPInstance& inst, const QPSolution* sol, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write " + path);
  out.precision(17);
  out << "dim " << inst.g.size() << "\nconstraints " << inst.G.size() << "\ngamma " << inst.gamma
      << "\ng";
  for (double x : inst.g) out << ' ' << x;
  out << '\n';
  for (const auto& row : inst.G) {
    out << "G";
    for (double x : row) out << ' ' << x;
    out << '\n';
  }
  if (sol) {
    out << "status " << (sol->status == SolveStatus::optimal ? "optimal" : "fallback")
        << "\niterations " << sol->iterations << "\nkkt_residual " << sol->kkt_residual << "\nz";
    for (double x : sol->z) out << ' ' << x;
    out << "\nduals";
    for (double x : sol->duals) out << ' ' << x;
    out << '\n';
  }
  if (!out) throw io_error("failed writing " + path);
}

}  // namespace sqcl::qp
