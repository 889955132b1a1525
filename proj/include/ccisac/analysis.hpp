#pragma once

#include <limits>
#include <ostream>
#include <string>
#include <vector>

namespace ccisac {

// Returned by coherence_time when the target has no tangential motion.
inline constexpr double kInfiniteCoherence = std::numeric_limits<double>::infinity();

// Seconds until a target drifts half a level-s beamwidth: tan(2^-(s+1)) d / v_perp.
double coherence_time(int s, double d, double v_perp);
inline bool is_infinite_coherence(double dt) { return dt == kInfiniteCoherence; }

// Angular displacement atan(v_perp dt / d).
double angular_step(double v_perp, double dt, double d);
// pi |sin a2 - sin a1|
double beamspace_step(double a1, double a2);

struct FrameBudget {
  double frame_ms = 10.0;
  int slots_per_frame = 10;
  int symbols_per_slot = 14;
  int symbols_per_beam = 4;
  double half_frame_ms = 5.0;

  double symbol_ms() const { return frame_ms / slots_per_frame / symbols_per_slot; }
  double half_frame_symbols() const { return half_frame_ms / symbol_ms(); }
  void validate() const;
};

struct CommBudget {
  double sensing_symbols = 0.0;
  double t_sens_ms = 0.0;
  double t_comm_ms = 0.0;
  bool budget_exceeded = false;
};

// Fractional scan counts are accepted (expectation-level accounting).
CommBudget comm_budget(double scans_used, const FrameBudget& budget = {});

struct AngleSample {
  double theta_est, phi_est, theta_true, phi_true;
};

struct MethodMetrics {
  std::string method;
  std::string case_name;
  int s = 0;
  double rmse_az = 0.0;  // rad
  double rmse_el = 0.0;
  double overhead_mean = 0.0;
  double overhead_ci = 0.0;  // half-width, 95% normal approximation
  double t_comm_ms = 0.0;
  std::size_t samples = 0;
};

double rmse(const std::vector<double>& errors);
// Mean and 95% half-width of the mean.
std::pair<double, double> mean_ci95(const std::vector<double>& x);

// Sorted absolute angular errors; the CPF at threshold e is the fraction <= e.
std::vector<double> cpf_samples(const std::vector<AngleSample>& samples);
double cpf_at(const std::vector<double>& sorted_errors, double threshold);

MethodMetrics compute_metrics(const std::string& method, const std::string& case_name, int s,
                              const std::vector<AngleSample>& samples,
                              const std::vector<double>& scans, const FrameBudget& budget = {});

void write_metrics_csv_header(std::ostream& os);
void write_metrics_csv_row(std::ostream& os, const MethodMetrics& m);
void write_cpf_csv(std::ostream& os, const std::string& method, const std::string& case_name, int s,
                   const std::vector<double>& sorted_errors);

}  // namespace ccisac
