#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "sqcl/qpsolver.hpp"
#include "sqcl/rng.hpp"

using namespace sqcl;
using namespace sqcl::qp;

namespace {

double objective(const QPInstance& inst, const std::vector<double>& z) {
  double s = 0.0;
  for (size_t i = 0; i < z.size(); ++i) {
    double d = inst.g[i] - z[i];
    s += d * d;
  }
  return 0.5 * s;
}

bool feasible(const QPInstance& inst, const std::vector<double>& z, double slack = 0.0) {
  for (const auto& row : inst.G) {
    double s = 0.0;
    for (size_t j = 0; j < z.size(); ++j) s += row[j] * z[j];
    if (s < inst.gamma - slack) return false;
  }
  return true;
}

// Random instance with a feasibility witness: every row is oriented and
// scaled so a sampled point z0 satisfies it, so the feasible set is nonempty.
QPInstance random_instance(Rng& rng, int dim, int m) {
  QPInstance inst;
  inst.g.resize(static_cast<size_t>(dim));
  for (auto& x : inst.g) x = rng.normal();
  double gammas[3] = {0.0, 0.5, 1.0};
  inst.gamma = gammas[rng.below(3)];

  std::vector<double> witness(static_cast<size_t>(dim));
  for (auto& x : witness) x = 2.0 * rng.normal();
  inst.G.assign(static_cast<size_t>(m), std::vector<double>(static_cast<size_t>(dim)));
  for (auto& row : inst.G) {
    double s = 0.0;
    do {
      s = 0.0;
      for (size_t j = 0; j < row.size(); ++j) {
        row[j] = rng.normal();
        s += row[j] * witness[j];
      }
    } while (std::abs(s) < 0.05);
    if (s < 0)
      for (auto& x : row) x = -x;
    s = std::abs(s);
    double c = (inst.gamma + rng.uniform(0.0, 1.0)) / s;
    if (c > 0)
      for (auto& x : row) x *= c;
  }
  return inst;
}

// feasible-sampling oracle: no sampled feasible point may beat the solution
// by more than eps
void check_against_oracle(const QPInstance& inst, const QPSolution& sol, Rng& rng,
                          int samples, double eps) {
  double fz = objective(inst, sol.z);
  int found = 0;
  for (int s = 0; s < samples; ++s) {
    std::vector<double> y = sol.z;
    double sigma = std::pow(10.0, rng.uniform(-4.0, 0.5));
    for (auto& x : y) x += sigma * rng.normal();
    if (!feasible(inst, y)) continue;
    ++found;
    CHECK(fz <= objective(inst, y) + eps);
  }
  CHECK(found > 0);  // the sampler must actually exercise the oracle
}

}  // namespace

TEST_CASE("interior instance returns g unchanged") {
  QPInstance inst;
  inst.g = {2.0, 3.0};
  inst.G = {{1.0, 0.0}, {0.0, 1.0}};
  inst.gamma = 0.5;
  auto sol = solve(inst);
  CHECK(sol.status == SolveStatus::optimal);
  CHECK(sol.z[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(sol.z[1] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(sol.duals[0] == 0.0);
  CHECK(sol.duals[1] == 0.0);
  CHECK(verify_kkt(inst, sol) == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("analytic halfspace projection") {
  QPInstance inst;
  inst.g = {-1.0, 2.0};
  inst.G = {{1.0, 0.0}};
  inst.gamma = 0.0;
  auto sol = solve(inst);
  CHECK(sol.status == SolveStatus::optimal);
  CHECK(sol.z[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(sol.z[1] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(sol.duals[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(verify_kkt(inst, sol) < 1e-10);
}

TEST_CASE("orthant projection verified by a 200x200 grid") {
  QPInstance inst;
  inst.g = {-1.0, -1.0};
  inst.G = {{1.0, 0.0}, {0.0, 1.0}};
  inst.gamma = 0.0;
  auto sol = solve(inst);
  CHECK(sol.status == SolveStatus::optimal);
  CHECK(sol.z[0] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(sol.z[1] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(sol.duals[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(sol.duals[1] == doctest::Approx(1.0).epsilon(1e-12));

  double best = 1e100;
  for (int i = 0; i < 200; ++i)
    for (int j = 0; j < 200; ++j) {
      std::vector<double> z{2.0 * i / 199.0, 2.0 * j / 199.0};
      best = std::min(best, objective(inst, z));
    }
  CHECK(objective(inst, sol.z) <= best + 1e-9);
}

TEST_CASE("randomized instances beat the feasible-sampling oracle") {
  Rng rng(1234);
  for (int seed = 0; seed < 100; ++seed) {
    int dim = 2 + static_cast<int>(rng.below(12));
    int m = 1 + static_cast<int>(rng.below(5));
    auto inst = random_instance(rng, dim, m);
    auto sol = solve(inst);
    REQUIRE(sol.status == SolveStatus::optimal);
    CHECK(verify_kkt(inst, sol) < 1e-8);
    CHECK(feasible(inst, sol.z, 1e-6));
    check_against_oracle(inst, sol, rng, 200, 1e-7);
  }
}

TEST_CASE("projection is idempotent") {
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    auto inst = random_instance(rng, 6, 3);
    auto sol = solve(inst);
    REQUIRE(sol.status == SolveStatus::optimal);
    QPInstance again = inst;
    again.g = sol.z;
    auto sol2 = solve(again);
    REQUIRE(sol2.status == SolveStatus::optimal);
    for (size_t i = 0; i < sol.z.size(); ++i)
      CHECK(sol2.z[i] == doctest::Approx(sol.z[i]).epsilon(1e-7));
  }
}

TEST_CASE("scaling g and gamma scales the projection") {
  Rng rng(88);
  for (int trial = 0; trial < 25; ++trial) {
    auto inst = random_instance(rng, 5, 3);
    double c = std::pow(10.0, rng.uniform(-1.0, 1.5));
    auto sol = solve(inst);
    QPInstance scaled = inst;
    for (auto& x : scaled.g) x *= c;
    scaled.gamma *= c;
    auto sol2 = solve(scaled);
    REQUIRE(sol.status == SolveStatus::optimal);
    REQUIRE(sol2.status == SolveStatus::optimal);
    for (size_t i = 0; i < sol.z.size(); ++i)
      CHECK(sol2.z[i] == doctest::Approx(c * sol.z[i]).epsilon(1e-6));
  }
}

TEST_CASE("scaling constraint rows and gamma together changes nothing") {
  Rng rng(89);
  for (int trial = 0; trial < 25; ++trial) {
    auto inst = random_instance(rng, 5, 3);
    double c = std::pow(10.0, rng.uniform(-1.0, 1.0));
    auto sol = solve(inst);
    QPInstance scaled = inst;
    for (auto& row : scaled.G)
      for (auto& x : row) x *= c;
    scaled.gamma *= c;
    auto sol2 = solve(scaled);
    REQUIRE(sol.status == SolveStatus::optimal);
    REQUIRE(sol2.status == SolveStatus::optimal);
    for (size_t i = 0; i < sol.z.size(); ++i)
      CHECK(sol2.z[i] == doctest::Approx(sol.z[i]).epsilon(1e-6));
  }
}

TEST_CASE("degenerate zero-norm rows") {
  QPInstance inst;
  inst.g = {1.0, -2.0};
  inst.G = {{0.0, 0.0}, {1.0, 0.0}};
  inst.gamma = 0.0;
  auto sol = solve(inst);
  CHECK(sol.status == SolveStatus::optimal);  // zero row dropped
  CHECK(sol.z[0] == doctest::Approx(1.0));
  CHECK(sol.duals[0] == 0.0);

  inst.gamma = 0.5;
  auto bad = solve(inst);
  CHECK(bad.status == SolveStatus::fallback);  // 0 ≥ 0.5 is impossible
  CHECK(bad.z == inst.g);
}

TEST_CASE("infeasible instances report fallback instead of a fake optimum") {
  // two opposing halfplanes with a positive margin cannot both hold
  QPInstance inst;
  inst.g = {0.0, 0.0};
  inst.G = {{1.0, 0.0}, {-1.0, 0.0}};
  inst.gamma = 1.0;
  auto sol = solve(inst);
  CHECK(sol.status == SolveStatus::fallback);
}

TEST_CASE("no constraints means no projection") {
  QPInstance inst;
  inst.g = {4.0, -1.0, 0.5};
  auto sol = solve(inst);
  CHECK(sol.status == SolveStatus::optimal);
  CHECK(sol.z == inst.g);
}

TEST_CASE("duplicate rows do not break the solver") {
  QPInstance inst;
  inst.g = {-1.0, 2.0};
  inst.G = {{1.0, 0.0}, {1.0, 0.0}, {1.0, 0.0}};
  inst.gamma = 0.0;
  auto sol = solve(inst);
  REQUIRE(sol.status == SolveStatus::optimal);
  CHECK(sol.z[0] == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(sol.z[1] == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(verify_kkt(inst, sol) < 1e-8);
}

TEST_CASE("debug dump writes a readable file") {
  QPInstance inst;
  inst.g = {-1.0, 2.0};
  inst.G = {{1.0, 0.0}};
  inst.gamma = 0.5;
  auto sol = solve(inst);
  auto path = (std::filesystem::temp_directory_path() / "sqcl_qp_dump.txt").string();
  dump_instance(inst, &sol, path);
  std::ifstream in(path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(text.find("gamma 0.5") != std::string::npos);
  CHECK(text.find("status optimal") != std::string::npos);
  std::remove(path.c_str());
}
