#pragma once

#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <functional>
#include <istream>
#include <limits>
#include <memory>
#include <ostream>
#include <vector>

#include <Eigen/Dense>
#include <boost/random/gamma_distribution.hpp>

#include "ccisac/beamspace.hpp"
#include "ccisac/errors.hpp"
#include "ccisac/rng.hpp"

namespace ccisac {

inline constexpr double kSpeedOfLight = 299792458.0;

template <typename Scalar>
using CMatrix = Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, Eigen::Dynamic>;

struct WaveformConfig {
  double f_c = 28e9;
  double bandwidth = 100e6;
  double chirp_duration = 50e-6;
  int n_chirps = 64;
  // Complex IF sampling. 12 MHz keeps the 400 m envelope below fs/2.
  double sample_rate = 12e6;

  double slope() const { return bandwidth / chirp_duration; }
  int n_samples() const { return int(std::lround(sample_rate * chirp_duration)); }
  double range_bin() const { return kSpeedOfLight * sample_rate / (2.0 * slope() * n_samples()); }
  double doppler_bin() const { return 1.0 / (n_chirps * chirp_duration); }
  double velocity_bin() const { return kSpeedOfLight * doppler_bin() / (2.0 * f_c); }
  double max_range() const { return kSpeedOfLight * sample_rate / (4.0 * slope()); }
  double max_velocity() const { return kSpeedOfLight / (4.0 * f_c * chirp_duration); }

  void validate() const {
    if (!(f_c > 0 && bandwidth > 0 && chirp_duration > 0 && sample_rate > 0))
      throw ConfigError("waveform parameters must be positive");
    if (n_chirps < 2) throw ConfigError("need at least two chirps");
    if (n_samples() < 2) throw ConfigError("chirp shorter than two samples");
  }
};

struct UavState {
  double theta = 0.0;  // azimuth, scenario frame
  double phi = 0.0;    // elevation
  double d = 1.0;
  double v_par = 0.0;   // radial, positive receding
  double v_perp = 0.0;  // tangential speed
  double t = 0.0;
};

struct ChannelParams {
  double p = 1.0;
  std::complex<double> epsilon{10.0, 0.0};
  double snr_db = 0.0;  // +inf disables noise
  // The transmit SNR is referenced to this many IF samples: per-sample noise
  // variance is noise_floor / reference_gain. 0 selects samples * chirps.
  double reference_gain = 0.0;
};

inline double noise_floor(const ChannelParams& ch) {
  if (!(ch.p > 0)) throw PreconditionViolation("transmit power must be positive");
  if (std::isinf(ch.snr_db) && ch.snr_db > 0) return 0.0;
  return ch.p / std::pow(10.0, ch.snr_db / 10.0);
}

inline double sample_noise_variance(const ChannelParams& ch, const WaveformConfig& wf) {
  const double g = ch.reference_gain > 0 ? ch.reference_gain : double(wf.n_samples()) * wf.n_chirps;
  return noise_floor(ch) / g;
}

// beta = eps (2d)^-2, amplitude kappa sqrt(p) beta (a^H f); a and b unit norm.
inline std::complex<double> echo_amplitude(const ChannelParams& ch, double d, int n_tx, int n_rx,
                                           std::complex<double> tx_gain) {
  const double kappa = std::sqrt(double(n_tx) * n_rx);
  const std::complex<double> beta = ch.epsilon / ((2.0 * d) * (2.0 * d));
  return kappa * std::sqrt(ch.p) * beta * tx_gain;
}

// Fast-time IF tone (Hz) including the Doppler shift.
inline double beat_frequency(const UavState& s, const WaveformConfig& wf) {
  const double tau = 2.0 * s.d / kSpeedOfLight;
  return wf.slope() * tau;
}
inline double doppler_shift(const UavState& s, const WaveformConfig& wf) {
  return 2.0 * s.v_par * wf.f_c / kSpeedOfLight;
}

// IQ cube, fast time along rows, column index chirp * n_rx + rx.
template <typename Scalar = double>
struct EchoCapture {
  CMatrix<Scalar> iq;
  WaveformConfig config;
  BeamIndex beam_used{};
  int n_rx = 0;

  int n_samples() const { return int(iq.rows()); }
  int n_chirps() const { return n_rx ? int(iq.cols()) / n_rx : 0; }
  std::complex<Scalar> at(int n, int c, int r) const { return iq(n, c * n_rx + r); }
};

namespace detail {
inline void check_geometry(const UavState& state, const WaveformConfig& wf) {
  wf.validate();
  if (!(state.d > 0)) throw PreconditionViolation("target range must be positive");
  const double tau = 2.0 * state.d / kSpeedOfLight;
  if (tau > wf.chirp_duration) throw ConfigError("round-trip delay exceeds chirp duration");
}
}  // namespace detail

// De-chirped point-target echo with AWGN. tx_weights is the transmit beam f;
// the target direction is taken from state in the scenario frame.
template <typename Scalar = double>
EchoCapture<Scalar> synthesize_echo(const UavState& state, const CVector<Scalar>& tx_weights,
                                    const ArrayGeometry& tx_geometry,
                                    const ArrayGeometry& rx_geometry, const ChannelParams& channel,
                                    const WaveformConfig& wf, std::uint64_t seed,
                                    BeamIndex beam_used = {}) {
  detail::check_geometry(state, wf);
  if (tx_weights.size() != tx_geometry.size()) throw ShapeMismatch("tx weights vs tx geometry");
  const auto a = steering_vector<double>(tx_geometry, state.theta, state.phi);
  const auto b = steering_vector<double>(rx_geometry, state.theta, state.phi);
  const std::complex<double> gain = a.dot(tx_weights.template cast<std::complex<double>>());
  const std::complex<double> amp =
      echo_amplitude(channel, state.d, tx_geometry.size(), rx_geometry.size(), gain);

  const int N = wf.n_samples(), C = wf.n_chirps, R = rx_geometry.size();
  const double f_if = beat_frequency(state, wf), mu = doppler_shift(state, wf);
  const double tau = 2.0 * state.d / kSpeedOfLight;
  const std::complex<double> carrier = std::polar(1.0, -2.0 * kPi * wf.f_c * tau);
  const double sigma2 = sample_noise_variance(channel, wf);

  EchoCapture<Scalar> cap;
  cap.config = wf;
  cap.beam_used = beam_used;
  cap.n_rx = R;
  cap.iq.resize(N, C * R);

  std::vector<std::complex<double>> tone(N);
  for (int n = 0; n < N; ++n) {
    const double t = n / wf.sample_rate;
    tone[n] = std::polar(1.0, 2.0 * kPi * (f_if + mu) * t);
  }
  Rng rng(seed);
  const double sd = std::sqrt(sigma2);
  for (int c = 0; c < C; ++c) {
    const std::complex<double> slow = std::polar(1.0, 2.0 * kPi * mu * c * wf.chirp_duration);
    for (int r = 0; r < R; ++r) {
      const std::complex<double> k = amp * carrier * slow * b(r);
      auto col = cap.iq.col(c * R + r);
      for (int n = 0; n < N; ++n) {
        const std::complex<double> z = rng.complex_normal(1.0);
        col(n) = std::complex<Scalar>(k * tone[n] + sd * z);
      }
    }
  }
  return cap;
}

// Range-domain observation: accumulated power per range bin plus the per-bin
// chirp x rx slice used for Doppler and angle processing.
template <typename Scalar = double>
struct RangeObservation {
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> profile;
  std::function<CMatrix<Scalar>(int)> slice;  // n_chirps x n_rx
  WaveformConfig config;
  int n_rx = 0;
};

// Draws the range-compressed observation directly. Noise in the compressed
// domain is white with variance N sigma^2 per bin; every bin is split into its
// component along the (known) signal direction and an isotropic remainder,
// whose energy is Gamma(M - 1) distributed. Slices are regenerated on demand
// from per-bin seeds, so the result is distributed exactly as range_compress
// applied to synthesize_echo.
template <typename Scalar = double>
RangeObservation<Scalar> synthesize_range_observation(const UavState& state,
                                                      std::complex<double> tx_gain, int n_tx,
                                                      const ArrayGeometry& rx_geometry,
                                                      const ChannelParams& channel,
                                                      const WaveformConfig& wf,
                                                      std::uint64_t seed) {
  detail::check_geometry(state, wf);
  const int N = wf.n_samples(), C = wf.n_chirps, R = rx_geometry.size(), M = C * R;
  const std::complex<double> amp = echo_amplitude(channel, state.d, n_tx, R, tx_gain);
  const double f_if = beat_frequency(state, wf), mu = doppler_shift(state, wf);
  const double tau = 2.0 * state.d / kSpeedOfLight;
  const std::complex<double> carrier = std::polar(1.0, -2.0 * kPi * wf.f_c * tau);
  const double sigma_x = std::sqrt(N * sample_noise_variance(channel, wf));

  // unit signal direction over (chirp, rx)
  const auto b = steering_vector<double>(rx_geometry, state.theta, state.phi);
  auto u = std::make_shared<Eigen::MatrixXcd>(C, R);
  for (int c = 0; c < C; ++c) {
    const std::complex<double> slow = std::polar(1.0, 2.0 * kPi * mu * c * wf.chirp_duration);
    for (int r = 0; r < R; ++r) (*u)(c, r) = slow * b(r) / std::sqrt(double(C));
  }

  auto along = std::make_shared<std::vector<std::complex<double>>>(N);
  auto perp = std::make_shared<std::vector<double>>(N);
  RangeObservation<Scalar> obs;
  obs.config = wf;
  obs.n_rx = R;
  obs.profile.resize(N);

  Rng rng(seed);
  boost::random::gamma_distribution<double> gamma(M - 1, 1.0);
  const double nu = (f_if + mu) / wf.sample_rate;
  for (int k = 0; k < N; ++k) {
    // Dirichlet sum of the fast-time tone at bin k
    const double delta = 2.0 * kPi * (nu - double(k) / N);
    std::complex<double> X;
    const std::complex<double> e1 = std::polar(1.0, delta);
    if (std::abs(e1 - 1.0) < 1e-12)
      X = double(N);
    else
      X = (1.0 - std::polar(1.0, delta * N)) / (1.0 - e1);
    const std::complex<double> sig = amp * carrier * X * std::sqrt(double(C));
    const std::complex<double> z = rng.complex_normal(1.0);
    const double g = gamma(rng.engine());
    (*along)[k] = sig + sigma_x * z;
    (*perp)[k] = sigma_x * std::sqrt(g);
    obs.profile(k) = Scalar(std::norm((*along)[k]) + (*perp)[k] * (*perp)[k]);
  }

  obs.slice = [u, along, perp, seed, C, R](int k) {
    CMatrix<Scalar> out(C, R);
    Rng r(derive_seed(seed, std::uint64_t(k) + 1));
    Eigen::MatrixXcd w(C, R);
    for (int j = 0; j < R; ++j)
      for (int i = 0; i < C; ++i) w(i, j) = r.complex_normal(1.0);
    // project out the signal direction, rescale to the drawn energy
    const std::complex<double> proj = (u->array().conjugate() * w.array()).sum();
    w -= proj * (*u);
    const double nrm = w.norm();
    if (nrm > 0) w *= (*perp)[k] / nrm;
    const Eigen::MatrixXcd full = (*along)[k] * (*u) + w;
    out = full.template cast<std::complex<Scalar>>();
    return out;
  };
  return obs;
}

// ISACIQ01: 8-byte magic, three uint32 dims (samples, chirps, rx), float64
// sample rate, 4 reserved bytes; then float32 I/Q pairs, fast time innermost,
// then rx, then chirp.
template <typename Scalar>
void write_capture(std::ostream& os, const EchoCapture<Scalar>& cap) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  char header[32] = {};
  std::memcpy(header, "ISACIQ01", 8);
  const std::uint32_t dims[3] = {std::uint32_t(cap.n_samples()), std::uint32_t(cap.n_chirps()),
                                 std::uint32_t(cap.n_rx)};
  std::memcpy(header + 8, dims, 12);
  const double fs = cap.config.sample_rate;
  std::memcpy(header + 20, &fs, 8);
  os.write(header, 32);
  std::vector<float> buf(2 * size_t(cap.iq.rows()));
  for (Eigen::Index col = 0; col < cap.iq.cols(); ++col) {
    for (Eigen::Index n = 0; n < cap.iq.rows(); ++n) {
      buf[2 * n] = float(cap.iq(n, col).real());
      buf[2 * n + 1] = float(cap.iq(n, col).imag());
    }
    os.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size() * sizeof(float)));
  }
  if (!os) throw FormatError("capture write failed");
}

template <typename Scalar = double>
EchoCapture<Scalar> read_capture(std::istream& is, WaveformConfig wf = {}) {
  char header[32];
  if (!is.read(header, 32) || std::memcmp(header, "ISACIQ01", 8) != 0)
    throw FormatError("not an ISACIQ01 capture");
  std::uint32_t dims[3];
  std::memcpy(dims, header + 8, 12);
  std::memcpy(&wf.sample_rate, header + 20, 8);
  EchoCapture<Scalar> cap;
  cap.config = wf;
  cap.n_rx = int(dims[2]);
  cap.iq.resize(dims[0], Eigen::Index(dims[1]) * dims[2]);
  std::vector<float> buf(2 * size_t(dims[0]));
  for (Eigen::Index col = 0; col < cap.iq.cols(); ++col) {
    if (!is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size() * sizeof(float))))
      throw FormatError("truncated capture payload");
    for (Eigen::Index n = 0; n < cap.iq.rows(); ++n)
      cap.iq(n, col) = std::complex<Scalar>(buf[2 * n], buf[2 * n + 1]);
  }
  return cap;
}

}  // namespace ccisac
