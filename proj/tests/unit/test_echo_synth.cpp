#include <doctest.h>

#include <sstream>

#include "ccisac/echo_dsp.hpp"
#include "ccisac/echo_synth.hpp"

using namespace ccisac;

namespace {
const double kBore = 130.0 * kPi / 180.0;
const ArrayGeometry kRx{8, 8, kBore};

UavState target(double d, double v = 0.0) {
  UavState s;
  s.theta = kBore + 0.2;
  s.phi = 0.5;
  s.d = d;
  s.v_par = v;
  return s;
}

ChannelParams noiseless() {
  ChannelParams ch;
  ch.snr_db = std::numeric_limits<double>::infinity();
  return ch;
}
}  // namespace

TEST_CASE("noise floor") {
  ChannelParams ch;
  ch.p = 1;
  ch.snr_db = 0;
  CHECK(noise_floor(ch) == doctest::Approx(1.0));
  ch.snr_db = -2;
  CHECK(noise_floor(ch) == doctest::Approx(1.5848931924611136).epsilon(1e-12));
  ch.p = 4;
  ch.snr_db = 0;
  CHECK(noise_floor(ch) == doctest::Approx(4.0));
  ch.p = 0;
  CHECK_THROWS_AS(noise_floor(ch), PreconditionViolation);
}

TEST_CASE("waveform defaults") {
  WaveformConfig wf;
  CHECK(wf.n_samples() == 600);
  CHECK(wf.range_bin() == doctest::Approx(kSpeedOfLight / (2 * wf.bandwidth)));
  CHECK(wf.max_range() > 400.0);
  CHECK(wf.max_velocity() > 27.0);
  // sampling covers twice the largest beat frequency in the envelope
  UavState far = target(400.0);
  CHECK(wf.sample_rate > 2 * beat_frequency(far, wf));
}

TEST_CASE("noiseless received power equals kappa^2 p |beta|^2 |a^H f|^2") {
  WaveformConfig wf;
  wf.n_chirps = 4;
  ArrayGeometry tx{8, 8, kBore};
  const auto st = target(120.0, 5.0);
  auto ch = noiseless();
  ch.epsilon = std::polar(10.0, 0.7);
  for (double off : {0.0, 0.05, 0.2}) {
    auto f = steering_vector(tx, st.theta + off, st.phi);
    auto cap = synthesize_echo(st, f, tx, kRx, ch, wf, 1);
    const double measured = cap.iq.cwiseAbs2().sum() / (cap.n_samples() * cap.n_chirps());
    const double beta = 10.0 / std::pow(2 * st.d, 2);
    const double gain = std::norm(steering_vector(tx, st.theta, st.phi).dot(f));
    CHECK(measured == doctest::Approx(64.0 * 64.0 * beta * beta * gain).epsilon(1e-9));
  }
}

TEST_CASE("far-sidelobe beam costs at least 10 dB") {
  WaveformConfig wf;
  wf.n_chirps = 2;
  for (int s = 3; s <= 4; ++s) {
    auto g = level_geometry(s, kBore);
    auto cb = build_codebook(g, s);
    const auto st = target(150.0);
    const auto matched = nearest_beam(cb, to_wavenumber(g, st.theta, st.phi));
    BeamIndex far{s, matched.m_h > cb.side() / 2 ? 1 : cb.side(), matched.m_v};
    auto p_match = synthesize_echo(st, cb.weights(matched), g, kRx, noiseless(), wf, 1)
                       .iq.cwiseAbs2().sum();
    auto p_far = synthesize_echo(st, cb.weights(far), g, kRx, noiseless(), wf, 1)
                     .iq.cwiseAbs2().sum();
    CHECK(10 * std::log10(p_match / p_far) >= 10.0);
  }
}

TEST_CASE("amplitude falls as d^-2 and matched SNR is monotone in range") {
  WaveformConfig wf;
  wf.n_chirps = 2;
  ArrayGeometry tx{8, 8, kBore};
  auto f = steering_vector(tx, target(1).theta, target(1).phi);
  auto a1 = synthesize_echo(target(100.0), f, tx, kRx, noiseless(), wf, 1);
  auto a2 = synthesize_echo(target(200.0), f, tx, kRx, noiseless(), wf, 1);
  CHECK(std::abs(a2.iq(0, 0)) == doctest::Approx(std::abs(a1.iq(0, 0)) / 4).epsilon(1e-12));
  double prev = std::numeric_limits<double>::infinity();
  for (double d = 30; d <= 400; d += 37) {
    auto c = synthesize_echo(target(d), f, tx, kRx, noiseless(), wf, 1);
    const double p = c.iq.cwiseAbs2().sum();
    CHECK(p <= prev);
    prev = p;
  }
}

TEST_CASE("Doppler phase advances 2 pi mu T_c per chirp") {
  WaveformConfig wf;
  wf.n_chirps = 8;
  ArrayGeometry tx{8, 8, kBore};
  const auto st = target(80.0, -12.0);
  auto f = steering_vector(tx, st.theta, st.phi);
  auto cap = synthesize_echo(st, f, tx, kRx, noiseless(), wf, 1);
  const double mu = 2 * st.v_par * wf.f_c / kSpeedOfLight;
  const double want = std::remainder(2 * kPi * mu * wf.chirp_duration, 2 * kPi);
  for (int c = 0; c + 1 < wf.n_chirps; ++c) {
    const double got = std::arg(cap.at(17, c + 1, 5) / cap.at(17, c, 5));
    CHECK(std::remainder(got - want, 2 * kPi) == doctest::Approx(0.0).epsilon(1e-9));
  }
}

TEST_CASE("seeded synthesis is bit-identical; delay beyond a chirp is rejected") {
  WaveformConfig wf;
  wf.n_chirps = 4;
  ArrayGeometry tx{8, 8, kBore};
  auto f = steering_vector(tx, kBore, 0.3);
  ChannelParams ch;
  auto a = synthesize_echo(target(90), f, tx, kRx, ch, wf, 99);
  auto b = synthesize_echo(target(90), f, tx, kRx, ch, wf, 99);
  auto c = synthesize_echo(target(90), f, tx, kRx, ch, wf, 100);
  CHECK(a.iq == b.iq);
  CHECK(a.iq != c.iq);
  CHECK_THROWS_AS(synthesize_echo(target(8000), f, tx, kRx, ch, wf, 1), ConfigError);
  CHECK_THROWS_AS(synthesize_echo(target(0), f, tx, kRx, ch, wf, 1), PreconditionViolation);
}

TEST_CASE("range-domain synthesis equals compressed time-domain synthesis without noise") {
  WaveformConfig wf;
  wf.n_chirps = 8;
  ArrayGeometry tx{8, 8, kBore};
  const auto st = target(137.3, 7.5);
  auto f = steering_vector(tx, st.theta + 0.01, st.phi);
  const auto gain = steering_vector(tx, st.theta, st.phi).dot(f);
  auto ref = range_compress(synthesize_echo(st, f, tx, kRx, noiseless(), wf, 5));
  auto fast = synthesize_range_observation<double>(st, gain, tx.size(), kRx, noiseless(), wf, 5);
  const double scale = ref.profile.maxCoeff();
  CHECK((ref.profile - fast.profile).cwiseAbs().maxCoeff() < 1e-9 * scale);
  for (int k : {0, 91, 92, 300}) {
    auto a = ref.slice(k), b = fast.slice(k);
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-9 * std::sqrt(scale));
  }
}

TEST_CASE("range-domain synthesis matches noisy moments of the reference path") {
  WaveformConfig wf;
  wf.n_chirps = 8;
  ArrayGeometry tx{8, 8, kBore};
  const auto st = target(150.0, 3.0);
  auto f = steering_vector(tx, st.theta, st.phi);
  ChannelParams ch;
  ch.snr_db = -15;  // weak enough for the signal and noise terms to matter
  const int M = wf.n_chirps * kRx.size();
  const double sx2 = wf.n_samples() * sample_noise_variance(ch, wf);
  const auto clean = synthesize_range_observation<double>(st, 1.0, 64, kRx, noiseless(), wf, 1);
  const int kp = detail::argmax_first(clean.profile), kn = 400;

  auto moments = [&](bool reference, int draws, int k) {
    double m = 0, m2 = 0;
    for (int i = 0; i < draws; ++i) {
      double p;
      if (reference) {
        p = range_compress(synthesize_echo(st, f, tx, kRx, ch, wf, 1000 + i)).profile(k);
      } else {
        auto obs = synthesize_range_observation<double>(st, 1.0, 64, kRx, ch, wf, 1000 + i);
        p = obs.profile(k);
        CHECK(obs.slice(k).cwiseAbs2().sum() == doctest::Approx(p).epsilon(1e-9));
      }
      m += p;
      m2 += p * p;
    }
    m /= draws;
    return std::pair{m, m2 / draws - m * m};
  };
  for (int k : {kp, kn}) {
    const double mean = clean.profile(k) + M * sx2;
    const double var = 2 * clean.profile(k) * sx2 + M * sx2 * sx2;
    auto [fm, fv] = moments(false, 3000, k);
    CHECK(std::abs(fm - mean) < 4 * std::sqrt(var / 3000));
    CHECK(fv == doctest::Approx(var).epsilon(0.1));
    auto [rm, rv] = moments(true, 60, k);
    CHECK(std::abs(rm - mean) < 4 * std::sqrt(var / 60));
    (void)rv;
  }
}

TEST_CASE("ISACIQ01 round trip") {
  WaveformConfig wf;
  wf.n_chirps = 3;
  ArrayGeometry tx{2, 2, kBore}, rx{2, 2, kBore};
  auto f = steering_vector(tx, kBore, 0.2);
  auto cap = synthesize_echo<float>(target(60), f.cast<std::complex<float>>(), tx, rx,
                                    ChannelParams{}, wf, 3);
  std::stringstream ss;
  write_capture(ss, cap);
  CHECK(ss.str().size() == 32 + size_t(8) * 600 * 3 * 4);
  CHECK(ss.str().substr(0, 8) == "ISACIQ01");
  auto back = read_capture<float>(ss);
  CHECK(back.n_rx == 4);
  CHECK(back.n_chirps() == 3);
  CHECK(back.config.sample_rate == wf.sample_rate);
  CHECK(back.iq == cap.iq);
  std::stringstream bad("NOTACAPTURE.....................");
  CHECK_THROWS_AS(read_capture(bad), FormatError);
}
