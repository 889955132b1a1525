#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ccisac/analysis.hpp"
#include "ccisac/beamspace.hpp"
#include "ccisac/errors.hpp"
#include "ccisac/rng.hpp"

using namespace ccisac;

TEST_CASE("coherence time examples") {
  const double t5 = coherence_time(5, 100, 30);
  const double t4 = coherence_time(4, 100, 30);
  CHECK(t5 == doctest::Approx(std::tan(1.0 / 64) * 100 / 30).epsilon(1e-15));
  CHECK(t5 * 1e3 == doctest::Approx(52.09).epsilon(1e-3));
  CHECK(t4 * 1e3 == doctest::Approx(104.17).epsilon(1e-3));
  CHECK(t5 >= 0.050);
  CHECK(t4 >= 0.100);
  CHECK(coherence_time(5, 200, 30) == 2 * t5);
  CHECK(is_infinite_coherence(coherence_time(3, 100, 0)));
  CHECK_THROWS_AS(coherence_time(3, 0, 1), PreconditionViolation);
}

TEST_CASE("coherence time monotonicity") {
  for (int s = 1; s < 7; ++s) {
    CHECK(coherence_time(s, 101, 10) > coherence_time(s, 100, 10));
    CHECK(coherence_time(s, 100, 11) < coherence_time(s, 100, 10));
    CHECK(coherence_time(s + 1, 100, 10) < coherence_time(s, 100, 10));
  }
}

TEST_CASE("angular and beamspace steps") {
  CHECK(angular_step(30, 0, 100) == 0.0);
  CHECK(angular_step(30, 0.05, 100) == doctest::Approx(std::atan(0.015)));
  CHECK(std::abs(angular_step(30, 0.05, 100) - 0.015) < 2e-6);
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double a = rng.uniform(-1.5, 1.5), b = rng.uniform(-1.5, 1.5);
    CHECK(beamspace_step(a, b) <= kPi * std::abs(b - a) + 1e-15);
  }
}

TEST_CASE("comm budget arithmetic") {
  CHECK(comm_budget(0).t_comm_ms == 5.0);
  CHECK_FALSE(comm_budget(0).budget_exceeded);
  const auto b5 = comm_budget(5);
  CHECK(b5.sensing_symbols == 20);
  CHECK(b5.t_comm_ms == doctest::Approx(50.0 / 14).epsilon(1e-14));
  CHECK_FALSE(b5.budget_exceeded);
  const auto sat = comm_budget(17.5);
  CHECK(sat.sensing_symbols == 70);
  CHECK(sat.t_comm_ms == 0.0);
  CHECK(sat.budget_exceeded);
  CHECK(comm_budget(40).t_comm_ms == 0.0);
  CHECK(comm_budget(40).budget_exceeded);
  // affine non-increasing before the floor
  double prev = 1e9;
  for (double s = 0; s < 17.5; s += 0.25) {
    const double t = comm_budget(s).t_comm_ms;
    CHECK(t <= prev);
    CHECK(t == doctest::Approx(5.0 - 4 * s / 14.0));
    prev = t;
  }
  CHECK_THROWS_AS(comm_budget(-1), PreconditionViolation);
}

TEST_CASE("metrics: exact, biased, gaussian, permutation") {
  std::vector<AngleSample> exact(10, {0.3, 0.4, 0.3, 0.4});
  auto m = compute_metrics("m", "c", 3, exact, {1, 1, 1});
  CHECK(m.rmse_az == 0.0);
  CHECK(m.rmse_el == 0.0);
  const auto e = cpf_samples(exact);
  CHECK(cpf_at(e, 0.0) == 1.0);
  CHECK(cpf_at(e, -1e-12) == 0.0);

  std::vector<AngleSample> biased(20, {0.35, 0.4, 0.3, 0.4});
  CHECK(compute_metrics("m", "c", 3, biased, {2}).rmse_az == doctest::Approx(0.05));

  Rng rng(3);
  std::vector<AngleSample> g;
  for (int i = 0; i < 100000; ++i) g.push_back({rng.normal(0, 0.02), rng.normal(0, 0.01), 0, 0});
  auto mg = compute_metrics("m", "c", 3, g, {1});
  CHECK(mg.rmse_az == doctest::Approx(0.02).epsilon(0.01));
  CHECK(mg.rmse_el == doctest::Approx(0.01).epsilon(0.01));
  // CPF non-decreasing
  const auto cg = cpf_samples(g);
  CHECK(std::is_sorted(cg.begin(), cg.end()));

  std::vector<AngleSample> p(g.begin(), g.begin() + 1000);
  std::vector<double> sc;
  for (int i = 0; i < 1000; ++i) sc.push_back(rng.uniform_int(1, 30));
  auto a = compute_metrics("m", "c", 2, p, sc);
  std::reverse(p.begin(), p.end());
  std::reverse(sc.begin(), sc.end());
  auto b = compute_metrics("m", "c", 2, p, sc);
  CHECK(a.rmse_az == doctest::Approx(b.rmse_az).epsilon(1e-14));
  CHECK(a.overhead_mean == doctest::Approx(b.overhead_mean).epsilon(1e-14));

  CHECK_THROWS_AS(compute_metrics("m", "c", 2, {}, {1}), EmptyInput);
}

TEST_CASE("metrics CSV") {
  std::ostringstream os;
  write_metrics_csv_header(os);
  MethodMetrics m;
  m.method = "mmfe";
  m.case_name = "snr0";
  m.s = 4;
  m.overhead_mean = 5;
  write_metrics_csv_row(os, m);
  CHECK(os.str().find("mmfe,snr0,4,") != std::string::npos);
  std::ostringstream c;
  write_cpf_csv(c, "kf", "x", 2, {0.1, 0.2});
  CHECK(c.str() == "kf,x,2,0.1,0.5\nkf,x,2,0.2,1\n");
}
