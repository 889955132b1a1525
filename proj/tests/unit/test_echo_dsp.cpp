#include <doctest.h>

#include <sstream>

#include "ccisac/echo_dsp.hpp"

using namespace ccisac;

namespace {
const double kDeg = kPi / 180.0;
const double kBore = 130.0 * kDeg;
const ArrayGeometry kRx{8, 8, kBore};
const ArrayGeometry kTx{8, 8, kBore};

ChannelParams noiseless() {
  ChannelParams ch;
  ch.snr_db = std::numeric_limits<double>::infinity();
  return ch;
}

UavState at(double th_deg, double ph_deg, double d, double v = 0) {
  UavState s;
  s.theta = th_deg * kDeg;
  s.phi = ph_deg * kDeg;
  s.d = d;
  s.v_par = v;
  return s;
}

EchoCapture<double> capture(const UavState& s, const ChannelParams& ch, std::uint64_t seed,
                            int chirps = 64) {
  WaveformConfig wf;
  wf.n_chirps = chirps;
  return synthesize_echo(s, steering_vector(kTx, s.theta, s.phi), kTx, kRx, ch, wf, seed);
}

double angle_error_deg(const AngleEstimate& a, const UavState& s) {
  return std::hypot((a.theta - s.theta) * std::cos(s.phi), a.phi - s.phi) / kDeg;
}
}  // namespace

TEST_CASE("range: noiseless 100 m lands within one bin") {
  auto cap = capture(at(125, 40, 100.0), noiseless(), 1, 8);
  auto r = estimate_range(cap);
  CHECK(r.d_e >= 98.5);
  CHECK(r.d_e <= 101.5);
}

TEST_CASE("range: zero-frequency bin maps to zero range") {
  RangeObservation<double> obs;
  obs.profile = Eigen::VectorXd::Ones(600);
  obs.profile(0) = 50.0;
  auto r = estimate_range(obs);
  CHECK(r.bin == 0);
  CHECK(r.d_e == 0.0);
}

TEST_CASE("range: pure noise has no peak") {
  ChannelParams ch;
  ch.epsilon = 0.0;
  auto cap = capture(at(125, 40, 100.0), ch, 11);
  CHECK_THROWS_AS(estimate_range(cap), NoPeak);
  int accepted = 0;
  for (int i = 0; i < 300; ++i) {
    auto obs = synthesize_range_observation<double>(at(125, 40, 100), 1.0, 64, kRx, ch,
                                                    WaveformConfig{}, 5000 + i);
    try {
      estimate_range(obs);
      ++accepted;
    } catch (const NoPeak&) {
    }
  }
  CHECK(accepted <= 6);
}

TEST_CASE("frozen thresholds sit above the noise-only 99th percentile") {
  auto q = calibrate_noise_ratios(WaveformConfig{}, kRx, 1000, 2024);
  DspThresholds th;
  CHECK(th.range_ratio >= q.range);
  CHECK(th.doppler_ratio >= q.doppler);
  CHECK(th.eigen_ratio >= q.eigen);
}

TEST_CASE("velocity: zero, positive and negative, noiseless") {
  WaveformConfig wf;
  const double bin = wf.velocity_bin();
  for (double v : {0.0, 10.0, -10.0}) {
    auto cap = capture(at(135, 30, 90.0, v), noiseless(), 1);
    auto obs = range_compress(cap);
    auto r = estimate_range(obs);
    const double ve = estimate_velocity(obs, r.bin);
    CHECK(std::abs(ve - v) <= (v == 0.0 ? 0.5 * bin : bin));
    if (v != 0.0) CHECK(ve * v > 0);
  }
}

TEST_CASE("range and velocity ignore a global phase") {
  ChannelParams ch;
  auto cap = capture(at(120, 50, 140.0, 6.0), ch, 21);
  auto rot = cap;
  rot.iq *= std::polar(1.0, 1.234);
  auto o1 = range_compress(cap), o2 = range_compress(rot);
  auto r1 = estimate_range(o1), r2 = estimate_range(o2);
  CHECK(r1.bin == r2.bin);
  CHECK(estimate_velocity(o1, r1.bin) == estimate_velocity(o2, r2.bin));
}

TEST_CASE("MUSIC: noiseless target on a grid point is recovered exactly") {
  for (auto [th, ph] : {std::pair{125.0, 40.0}, std::pair{141.0, 22.0}}) {
    auto cap = capture(at(th, ph, 100.0), noiseless(), 1, 8);
    auto a = estimate_angles_music(cap, kRx);
    CHECK(a.theta == doctest::Approx(th * kDeg).epsilon(1e-9));
    CHECK(a.phi == doctest::Approx(ph * kDeg).epsilon(1e-9));
  }
}

TEST_CASE("MUSIC: SNR 0 dB off-grid error below grid step plus half a level-4 beam") {
  ChannelParams ch;
  Rng rng(77);
  std::vector<double> err;
  for (int i = 0; i < 200; ++i) {
    auto s = at(rng.uniform(112, 148), rng.uniform(12, 78), rng.uniform(60, 300));
    ch.epsilon = std::polar(10.0, rng.uniform(0, 2 * kPi));
    auto obs = synthesize_range_observation<double>(s, 1.0, 64, kRx, ch, WaveformConfig{}, 900 + i);
    auto r = estimate_range(obs);
    err.push_back(angle_error_deg(estimate_angles_music(obs, r.bin, kRx), s));
  }
  std::sort(err.begin(), err.end());
  // level-4 vertical cell is pi/16 in wavenumber, 1/16 rad at broadside
  const double bound = 0.1 + 0.5 * (1.0 / 16.0) / kDeg;
  CHECK(err[189] < bound);
}

TEST_CASE("MUSIC: noise-only covariance is rejected") {
  ChannelParams ch;
  ch.epsilon = 0.0;
  int rejected = 0;
  for (int i = 0; i < 200; ++i) {
    auto obs = synthesize_range_observation<double>(at(125, 40, 100), 1.0, 64, kRx, ch,
                                                    WaveformConfig{}, 300 + i);
    try {
      estimate_angles_music(obs, 10, kRx);
    } catch (const DegenerateCovariance&) {
      ++rejected;
    }
  }
  CHECK(rejected >= 198);
  Eigen::MatrixXcd zero = Eigen::MatrixXcd::Zero(8, 8);
  CHECK_THROWS_AS(signal_subspace(zero), DegenerateCovariance);
}

TEST_CASE("MUSIC spectrum is positive and basis-invariant") {
  ChannelParams ch;
  auto obs = synthesize_range_observation<double>(at(128, 33, 120), 1.0, 64, kRx, ch,
                                                  WaveformConfig{}, 8);
  auto r = estimate_range(obs);
  auto cov = spatial_covariance(obs.slice(r.bin));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(cov);
  const int R = kRx.size();
  Eigen::MatrixXcd En = es.eigenvectors().leftCols(R - 1);
  Eigen::MatrixXcd G = Eigen::MatrixXcd::Random(R - 1, R - 1);
  Eigen::HouseholderQR<Eigen::MatrixXcd> qr(G);
  Eigen::MatrixXcd Q = qr.householderQ();
  Eigen::MatrixXcd En2 = En * Q;
  MusicSpectrum P(kRx, es.eigenvectors().col(R - 1));
  Rng rng(1);
  for (int i = 0; i < 30; ++i) {
    const double th = rng.uniform(110, 150) * kDeg, ph = rng.uniform(10, 80) * kDeg;
    auto b = steering_vector(kRx, th, ph);
    const double p1 = 1.0 / (En.adjoint() * b).squaredNorm();
    const double p2 = 1.0 / (En2.adjoint() * b).squaredNorm();
    const double p = P(th, ph);
    CHECK(p > 0);
    CHECK(p1 == doctest::Approx(p2).epsilon(1e-9));
    CHECK(p == doctest::Approx(p1).epsilon(1e-8));
  }
}

TEST_CASE("median angle error does not grow from -2 dB to 0 dB") {
  auto median_err = [](double snr) {
    ChannelParams ch;
    ch.snr_db = snr;
    Rng rng(5);
    std::vector<double> err;
    for (int i = 0; i < 150; ++i) {
      auto s = at(rng.uniform(112, 148), rng.uniform(12, 78), rng.uniform(200, 400));
      ch.epsilon = std::polar(10.0, rng.uniform(0, 2 * kPi));
      auto obs = synthesize_range_observation<double>(s, 1.0, 64, kRx, ch, WaveformConfig{}, 40 + i);
      auto e = estimate_esi(obs, kRx, 0.0);
      err.push_back(e.valid ? std::hypot((e.theta_e - s.theta) * std::cos(s.phi), e.phi_e - s.phi)
                            : 1e9);
    }
    std::nth_element(err.begin(), err.begin() + 75, err.end());
    return err[75];
  };
  CHECK(median_err(0.0) <= median_err(-2.0));
}

TEST_CASE("ESI record and spectrum dump") {
  ChannelParams ch;
  auto s = at(133, 47, 210, -4);
  auto obs = synthesize_range_observation<double>(s, 1.0, 64, kRx, ch, WaveformConfig{}, 3);
  auto e = estimate_esi(obs, kRx, 1.5);
  REQUIRE(e.valid);
  CHECK(e.t == 1.5);
  CHECK(std::abs(e.d_e - 210) <= WaveformConfig{}.range_bin());
  CHECK(std::abs(e.v_e + 4) <= WaveformConfig{}.velocity_bin());
  MusicSpectrum P(kRx, signal_subspace(spatial_covariance(obs.slice(estimate_range(obs).bin))));
  AngleGrid g;
  g.coarse_step = 10 * kDeg;
  std::ostringstream os;
  write_spectrum_csv(os, P, g);
  const std::string text = os.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 5 * 8);
}
