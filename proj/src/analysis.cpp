#include "ccisac/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "ccisac/beamspace.hpp"
#include "ccisac/errors.hpp"

namespace ccisac {

double coherence_time(int s, double d, double v_perp) {
  if (s < 1) throw PreconditionViolation("level must be at least 1");
  if (!(d > 0)) throw PreconditionViolation("range must be positive");
  if (v_perp < 0) throw PreconditionViolation("tangential speed must be non-negative");
  if (v_perp == 0) return kInfiniteCoherence;
  return std::tan(1.0 / double(1 << (s + 1))) * d / v_perp;
}

double angular_step(double v_perp, double dt, double d) {
  if (!(d > 0)) throw PreconditionViolation("range must be positive");
  return std::atan(v_perp * dt / d);
}

double beamspace_step(double a1, double a2) { return kPi * std::abs(std::sin(a2) - std::sin(a1)); }

void FrameBudget::validate() const {
  if (!(frame_ms > 0) || slots_per_frame <= 0 || symbols_per_slot <= 0 || symbols_per_beam <= 0 ||
      !(half_frame_ms > 0))
    throw ConfigError("frame budget fields must be positive");
}

CommBudget comm_budget(double scans_used, const FrameBudget& b) {
  b.validate();
  if (!(scans_used >= 0)) throw PreconditionViolation("scan count must be non-negative");
  CommBudget r;
  r.sensing_symbols = b.symbols_per_beam * scans_used;
  const double cap = b.half_frame_symbols();
  // a sweep that fills the whole half frame already leaves no communication time
  r.budget_exceeded = r.sensing_symbols >= cap - 1e-9;
  r.t_sens_ms = std::min(r.sensing_symbols, cap) * b.symbol_ms();
  r.t_comm_ms = std::max(0.0, (cap - r.sensing_symbols) * b.symbol_ms());
  return r;
}

double rmse(const std::vector<double>& e) {
  if (e.empty()) throw EmptyInput("no samples");
  double s = 0;
  for (double x : e) s += x * x;
  return std::sqrt(s / double(e.size()));
}

std::pair<double, double> mean_ci95(const std::vector<double>& x) {
  if (x.empty()) throw EmptyInput("no samples");
  double s = 0;
  for (double v : x) s += v;
  const double m = s / double(x.size());
  if (x.size() < 2) return {m, 0.0};
  double ss = 0;
  for (double v : x) ss += (v - m) * (v - m);
  const double sd = std::sqrt(ss / double(x.size() - 1));
  return {m, 1.959963984540054 * sd / std::sqrt(double(x.size()))};
}

std::vector<double> cpf_samples(const std::vector<AngleSample>& samples) {
  if (samples.empty()) throw EmptyInput("no samples");
  std::vector<double> e;
  e.reserve(samples.size());
  for (const auto& s : samples)
    e.push_back(std::hypot(s.theta_est - s.theta_true, s.phi_est - s.phi_true));
  std::sort(e.begin(), e.end());
  return e;
}

double cpf_at(const std::vector<double>& sorted, double threshold) {
  if (sorted.empty()) throw EmptyInput("no samples");
  return double(std::upper_bound(sorted.begin(), sorted.end(), threshold) - sorted.begin()) /
         double(sorted.size());
}

MethodMetrics compute_metrics(const std::string& method, const std::string& case_name, int s,
                              const std::vector<AngleSample>& samples, const std::vector<double>& scans,
                              const FrameBudget& budget) {
  if (samples.empty() || scans.empty()) throw EmptyInput("metrics need at least one sample");
  MethodMetrics m;
  m.method = method;
  m.case_name = case_name;
  m.s = s;
  m.samples = samples.size();
  std::vector<double> ea, ee;
  for (const auto& x : samples) {
    ea.push_back(x.theta_est - x.theta_true);
    ee.push_back(x.phi_est - x.phi_true);
  }
  m.rmse_az = rmse(ea);
  m.rmse_el = rmse(ee);
  std::tie(m.overhead_mean, m.overhead_ci) = mean_ci95(scans);
  m.t_comm_ms = comm_budget(m.overhead_mean, budget).t_comm_ms;
  return m;
}

void write_metrics_csv_header(std::ostream& os) {
  os << "method,case,s,rmse_az,rmse_el,rmse_az_deg,rmse_el_deg,overhead_mean,overhead_ci,t_comm_ms,samples\n";
}

void write_metrics_csv_row(std::ostream& os, const MethodMetrics& m) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%s,%s,%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%zu\n", m.method.c_str(),
                m.case_name.c_str(), m.s, m.rmse_az, m.rmse_el, m.rmse_az * 180 / kPi,
                m.rmse_el * 180 / kPi, m.overhead_mean, m.overhead_ci, m.t_comm_ms, m.samples);
  os << buf;
}

void write_cpf_csv(std::ostream& os, const std::string& method, const std::string& case_name, int s,
                   const std::vector<double>& sorted) {
  char buf[256];
  const double n = double(sorted.size());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%s,%s,%d,%.9g,%.9g\n", method.c_str(), case_name.c_str(), s,
                  sorted[i], double(i + 1) / n);
    os << buf;
  }
}

}  // namespace ccisac
