#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <ostream>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include "ccisac/beamspace.hpp"
#include "ccisac/echo_synth.hpp"
#include "ccisac/errors.hpp"

namespace ccisac {

struct EsiRecord {
  double theta_e = 0.0;
  double phi_e = 0.0;
  double v_e = 0.0;
  double d_e = 0.0;
  bool valid = false;
  double t = 0.0;
};

// Detection thresholds on peak / median of the accumulated spectra. The
// defaults are the 99th percentile of noise-only draws for the default
// waveform and an 8x8 receive array (see calibrate_noise_ratios).
struct DspThresholds {
  double range_ratio = 1.07;
  double doppler_ratio = 1.55;
  // largest eigenvalue over the mean of the rest; noise-only covariances of
  // 64 snapshots sit near 4
  double eigen_ratio = 8.0;
};

struct AngleGrid {
  double theta_lo = 110.0 * kPi / 180.0;
  double theta_hi = 150.0 * kPi / 180.0;
  double phi_lo = 10.0 * kPi / 180.0;
  double phi_hi = 80.0 * kPi / 180.0;
  double coarse_step = 1.0 * kPi / 180.0;
  // 0 disables refinement
  double fine_step = 0.1 * kPi / 180.0;
  double fine_halfwidth = 1.0 * kPi / 180.0;
};

template <typename Scalar = double>
RangeObservation<Scalar> range_compress(const EchoCapture<Scalar>& cap) {
  const int N = cap.n_samples(), C = cap.n_chirps(), R = cap.n_rx;
  if (N == 0 || C == 0 || R == 0) throw EmptyInput("empty capture");
  Eigen::FFT<Scalar> fft;
  auto spec = std::make_shared<CMatrix<Scalar>>(N, C * R);
  std::vector<std::complex<Scalar>> in(N), out(N);
  for (int col = 0; col < C * R; ++col) {
    for (int n = 0; n < N; ++n) in[n] = cap.iq(n, col);
    fft.fwd(out, in);
    for (int n = 0; n < N; ++n) (*spec)(n, col) = out[n];
  }
  RangeObservation<Scalar> obs;
  obs.config = cap.config;
  obs.n_rx = R;
  obs.profile = spec->cwiseAbs2().rowwise().sum();
  obs.slice = [spec, C, R](int k) {
    CMatrix<Scalar> s(C, R);
    for (int c = 0; c < C; ++c)
      for (int r = 0; r < R; ++r) s(c, r) = (*spec)(k, c * R + r);
    return s;
  };
  return obs;
}

namespace detail {
template <typename Vec>
double median_of(const Vec& v) {
  std::vector<double> x(v.data(), v.data() + v.size());
  const size_t mid = x.size() / 2;
  std::nth_element(x.begin(), x.begin() + mid, x.end());
  double m = x[mid];
  if (x.size() % 2 == 0) {
    std::nth_element(x.begin(), x.begin() + mid - 1, x.end());
    m = 0.5 * (m + x[mid - 1]);
  }
  return m;
}

template <typename Vec>
int argmax_first(const Vec& v) {
  int best = 0;
  for (int i = 1; i < int(v.size()); ++i)
    if (v(i) > v(best)) best = i;
  return best;
}

template <typename Vec>
double peak_ratio(const Vec& v) {
  const double med = median_of(v);
  const double pk = double(v(argmax_first(v)));
  return med > 0 ? pk / med : (pk > 0 ? std::numeric_limits<double>::infinity() : 0.0);
}

template <typename Scalar>
Eigen::VectorXd doppler_spectrum(const CMatrix<Scalar>& slice) {
  const int C = int(slice.rows()), R = int(slice.cols());
  Eigen::FFT<Scalar> fft;
  std::vector<std::complex<Scalar>> in(C), out(C);
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(C);
  for (int r = 0; r < R; ++r) {
    for (int c = 0; c < C; ++c) in[c] = slice(c, r);
    fft.fwd(out, in);
    // shifted: index j holds frequency bin j - C/2
    for (int j = 0; j < C; ++j) acc(j) += std::norm(out[(j + C / 2) % C]);
  }
  return acc;
}
}  // namespace detail

struct RangeEstimate {
  double d_e = 0.0;
  int bin = 0;
  double ratio = 0.0;
};

template <typename Scalar>
RangeEstimate estimate_range(const RangeObservation<Scalar>& obs, const DspThresholds& th = {}) {
  if (obs.profile.size() == 0) throw EmptyInput("empty range profile");
  const auto& wf = obs.config;
  RangeEstimate r;
  r.bin = detail::argmax_first(obs.profile);
  r.ratio = detail::peak_ratio(obs.profile);
  if (!(r.ratio >= th.range_ratio)) throw NoPeak("range peak below threshold");
  const double f_if = r.bin * wf.sample_rate / wf.n_samples();
  r.d_e = kSpeedOfLight * f_if / (2.0 * wf.slope());
  return r;
}

template <typename Scalar>
RangeEstimate estimate_range(const EchoCapture<Scalar>& cap, const DspThresholds& th = {}) {
  return estimate_range(range_compress(cap), th);
}

template <typename Scalar>
double estimate_velocity(const RangeObservation<Scalar>& obs, int range_bin,
                         const DspThresholds& th = {}) {
  if (range_bin < 0 || range_bin >= obs.profile.size())
    throw PreconditionViolation("range bin out of bounds");
  const auto spec = detail::doppler_spectrum(obs.slice(range_bin));
  const int C = int(spec.size());
  if (!(detail::peak_ratio(spec) >= th.doppler_ratio)) throw NoPeak("Doppler peak below threshold");
  const int j = detail::argmax_first(spec);
  const double f_d = double(j - C / 2) / (C * obs.config.chirp_duration);
  return kSpeedOfLight * f_d / (2.0 * obs.config.f_c);
}

template <typename Scalar>
double estimate_velocity(const EchoCapture<Scalar>& cap, int range_bin,
                         const DspThresholds& th = {}) {
  return estimate_velocity(range_compress(cap), range_bin, th);
}

// Spatial covariance over slow-time snapshots, with diagonal loading.
template <typename Scalar>
Eigen::MatrixXcd spatial_covariance(const CMatrix<Scalar>& slice) {
  const Eigen::MatrixXcd x = slice.template cast<std::complex<double>>();
  const int C = int(x.rows()), R = int(x.cols());
  Eigen::MatrixXcd cov = (x.transpose() * x.conjugate()) / double(C);
  const double tr = cov.trace().real();
  cov.diagonal().array() += 1e-6 * tr / R;
  return cov;
}

// Signal-subspace eigenvector of a single-source covariance.
inline Eigen::VectorXcd signal_subspace(const Eigen::MatrixXcd& cov, const DspThresholds& th = {}) {
  const int R = int(cov.rows());
  if (R < 4) throw PreconditionViolation("MUSIC needs at least four receive elements");
  const double tr = cov.trace().real();
  if (!(tr > 0) || !std::isfinite(tr)) throw DegenerateCovariance("zero or non-finite covariance");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(cov);
  const auto& ev = es.eigenvalues();  // ascending
  const double rest = (ev.head(R - 1).sum()) / (R - 1);
  if (!(ev(R - 1) >= th.eigen_ratio * rest))
    throw DegenerateCovariance("no dominant signal eigenvalue");
  return es.eigenvectors().col(R - 1);
}

// 1 / ||E_n^H b||^2 evaluated as 1 / (1 - |e_s^H b|^2) for unit-norm b.
class MusicSpectrum {
 public:
  MusicSpectrum(const ArrayGeometry& g, Eigen::VectorXcd signal) : g_(g), e_(std::move(signal)) {
    if (e_.size() != g.size()) throw ShapeMismatch("signal vector vs rx geometry");
    E_ = Eigen::Map<const Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic,
                                        Eigen::RowMajor>>(e_.data(), g.n_h, g.n_v)
             .conjugate();
    ph_.resize(g.n_h);
    pv_.resize(g.n_v);
  }

  double operator()(double theta, double phi) {
    const Wavenumber w = to_wavenumber(g_, theta, phi);
    for (int i = 0; i < g_.n_h; ++i) ph_(i) = std::polar(1.0, i * w.psi_h);
    for (int i = 0; i < g_.n_v; ++i) pv_(i) = std::polar(1.0, i * w.psi_v);
    const std::complex<double> ip = ph_.transpose() * E_ * pv_;
    const double c = std::norm(ip) / g_.size();
    return 1.0 / std::max(1.0 - c, 1e-300);
  }

 private:
  ArrayGeometry g_;
  Eigen::VectorXcd e_;
  Eigen::MatrixXcd E_;
  Eigen::VectorXcd ph_, pv_;
};

struct AngleEstimate {
  double theta = 0.0;
  double phi = 0.0;
  double power = 0.0;
};

namespace detail {
// Row-major over (phi, theta); strict > keeps the lowest linear index on ties.
inline AngleEstimate grid_argmax(MusicSpectrum& P, double t0, double t1, double p0, double p1,
                                 double step) {
  const int nt = int(std::floor((t1 - t0) / step + 1e-9)) + 1;
  const int np = int(std::floor((p1 - p0) / step + 1e-9)) + 1;
  AngleEstimate best{t0, p0, -1.0};
  for (int ip = 0; ip < np; ++ip) {
    const double ph = p0 + ip * step;
    for (int it = 0; it < nt; ++it) {
      const double th = t0 + it * step;
      const double v = P(th, ph);
      if (v > best.power) best = {th, ph, v};
    }
  }
  return best;
}
}  // namespace detail

inline AngleEstimate music_search(MusicSpectrum& P, const AngleGrid& grid) {
  AngleEstimate c = detail::grid_argmax(P, grid.theta_lo, grid.theta_hi, grid.phi_lo, grid.phi_hi,
                                        grid.coarse_step);
  if (grid.fine_step > 0) {
    const double hw = grid.fine_halfwidth;
    c = detail::grid_argmax(P, c.theta - hw, c.theta + hw, c.phi - hw, c.phi + hw, grid.fine_step);
  }
  return c;
}

template <typename Scalar>
AngleEstimate estimate_angles_music(const RangeObservation<Scalar>& obs, int range_bin,
                                    const ArrayGeometry& rx, const AngleGrid& grid = {},
                                    const DspThresholds& th = {}) {
  if (rx.size() != obs.n_rx) throw ShapeMismatch("rx geometry vs observation");
  MusicSpectrum P(rx, signal_subspace(spatial_covariance(obs.slice(range_bin)), th));
  return music_search(P, grid);
}

template <typename Scalar>
AngleEstimate estimate_angles_music(const EchoCapture<Scalar>& cap, const ArrayGeometry& rx,
                                    const AngleGrid& grid = {}, const DspThresholds& th = {}) {
  auto obs = range_compress(cap);
  return estimate_angles_music(obs, detail::argmax_first(obs.profile), rx, grid, th);
}

// Full ESI extraction; detection failures yield valid = false.
template <typename Scalar>
EsiRecord estimate_esi(const RangeObservation<Scalar>& obs, const ArrayGeometry& rx, double t,
                       const AngleGrid& grid = {}, const DspThresholds& th = {}) {
  EsiRecord e;
  e.t = t;
  try {
    const auto r = estimate_range(obs, th);
    e.d_e = r.d_e;
    e.v_e = estimate_velocity(obs, r.bin, th);
    const auto a = estimate_angles_music(obs, r.bin, rx, grid, th);
    e.theta_e = a.theta;
    e.phi_e = a.phi;
    e.valid = true;
  } catch (const NoPeak&) {
    e.valid = false;
  } catch (const DegenerateCovariance&) {
    e.valid = false;
  }
  return e;
}

inline void write_spectrum_csv(std::ostream& os, MusicSpectrum& P, const AngleGrid& grid) {
  os << "theta_deg,phi_deg,power\n";
  char buf[128];
  const int nt = int(std::floor((grid.theta_hi - grid.theta_lo) / grid.coarse_step + 1e-9)) + 1;
  const int np = int(std::floor((grid.phi_hi - grid.phi_lo) / grid.coarse_step + 1e-9)) + 1;
  for (int ip = 0; ip < np; ++ip)
    for (int it = 0; it < nt; ++it) {
      const double th = grid.theta_lo + it * grid.coarse_step;
      const double ph = grid.phi_lo + ip * grid.coarse_step;
      std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.9g\n", th * 180 / kPi, ph * 180 / kPi, P(th, ph));
      os << buf;
    }
}

struct NoiseRatioQuantiles {
  double range = 0.0;
  double doppler = 0.0;
  double eigen = 0.0;
};

// Peak/median ratios of noise-only observations at the given quantile.
inline NoiseRatioQuantiles calibrate_noise_ratios(const WaveformConfig& wf,
                                                  const ArrayGeometry& rx, int draws,
                                                  std::uint64_t seed, double quantile = 0.99) {
  std::vector<double> rr, dr, er;
  ChannelParams ch;
  ch.epsilon = 0.0;
  UavState st;
  st.d = 100.0;
  st.theta = rx.boresight_azimuth;
  for (int i = 0; i < draws; ++i) {
    auto obs = synthesize_range_observation<double>(st, 1.0, 1, rx, ch, wf,
                                                    derive_seed(seed, std::uint64_t(i)));
    rr.push_back(detail::peak_ratio(obs.profile));
    const int k = detail::argmax_first(obs.profile);
    auto slice = obs.slice(k);
    dr.push_back(detail::peak_ratio(detail::doppler_spectrum(slice)));
    auto cov = spatial_covariance(slice);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(cov, Eigen::EigenvaluesOnly);
    const auto& ev = es.eigenvalues();
    er.push_back(ev(ev.size() - 1) / (ev.head(ev.size() - 1).sum() / (ev.size() - 1)));
  }
  auto q = [quantile](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[std::min(v.size() - 1, size_t(std::ceil(quantile * v.size())) - 1)];
  };
  return {q(rr), q(dr), q(er)};
}

}  // namespace ccisac
