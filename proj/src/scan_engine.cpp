#include "ccisac/scan_engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "ccisac/errors.hpp"
#include "ccisac/rng.hpp"

namespace ccisac {

int CandidateSets::total() const {
  int n = 0;
  for (const auto& s : sets) n += int(s.size());
  return n;
}

int CandidateSets::set_of(const BeamIndex& b) const {
  for (int i = 0; i < 4; ++i)
    if (std::find(sets[i].begin(), sets[i].end(), b) != sets[i].end()) return i + 1;
  return 0;
}

CandidateSets candidate_sets(const BeamIndex& center) {
  if (!valid_beam(center)) throw PreconditionViolation("center beam out of range");
  const int n = 1 << center.s;
  CandidateSets out;
  out.center = center;
  // row-major over (m_v, m_h) falls out of the loop order
  for (int dv = -2; dv <= 2; ++dv)
    for (int dh = -2; dh <= 2; ++dh) {
      const BeamIndex b{center.s, center.m_h + dh, center.m_v + dv};
      if (b.m_h < 1 || b.m_h > n || b.m_v < 1 || b.m_v > n) continue;
      int set;
      if (std::max(std::abs(dh), std::abs(dv)) == 2)
        set = 3;
      else if (dh == 0 && dv == 0)
        set = 0;
      else if (dh == 0 || dv == 0)
        set = 1;
      else
        set = 2;
      out.sets[set].push_back(b);
    }
  return out;
}

DetectionOracle geometric_oracle(const Coverage& coverage, Wavenumber target) {
  return [coverage, target](const BeamIndex& b) {
    const Codebook<double> cb(ArrayGeometry{1, 1}, b.s, coverage);
    return cb.in_cell(b, target);
  };
}

double expected_range_ratio(const UavState& target, double tx_gain, int n_tx, int n_rx,
                            const ChannelParams& channel, const WaveformConfig& wf) {
  const int N = wf.n_samples(), M = wf.n_chirps * n_rx;
  const double amp = std::abs(echo_amplitude(channel, target.d, n_tx, n_rx, tx_gain));
  const double nu = (beat_frequency(target, wf) + doppler_shift(target, wf)) / wf.sample_rate;
  const double k = std::round(nu * N);
  // |sum_n exp(j 2 pi (nu - k/N) n)| over the fast-time samples
  const double X = N * dirichlet(N, 2.0 * kPi * (nu - k / N));
  const double sig2 = amp * amp * X * X * wf.n_chirps;
  const double noise = M * N * sample_noise_variance(channel, wf);
  if (noise == 0.0) return sig2 > 0 ? std::numeric_limits<double>::infinity() : 1.0;
  return 1.0 + sig2 / noise;
}

DetectionOracle echo_oracle(const Coverage& coverage, int s, const UavState& target, const EchoLink& link) {
  const ArrayGeometry tx = level_geometry(s, link.rx.boresight_azimuth);
  const Wavenumber w = to_wavenumber(tx, target.theta, target.phi);
  const Codebook<double> cb(tx, s, coverage);
  return [coverage, s, target, link, tx, w, cb](const BeamIndex& b) {
    const Codebook<double> level(ArrayGeometry{1, 1}, b.s, coverage);
    if (!level.in_cell(b, w)) return false;
    if (b.s != s) return true;
    const double g = beam_gain(tx, w, cb.center(b));
    return expected_range_ratio(target, g, tx.size(), link.rx.size(), link.channel, link.waveform) >=
           link.thresholds.range_ratio;
  };
}

ScanTrace hierarchical_scan(const DetectionOracle& oracle, int s) {
  if (s < 1) throw PreconditionViolation("level must be at least 1");
  static constexpr int kOrder[4][2] = {{1, 1}, {2, 1}, {1, 2}, {2, 2}};
  ScanTrace tr;
  int k_h = 1, k_v = 1;
  for (int level = 1; level <= s; ++level) {
    bool hit = false;
    for (const auto& bb : kOrder) {
      const BeamIndex b = from_hierarchical(level, {k_h, k_v, bb[0], bb[1]});
      tr.beams_tried.push_back(b);
      if (oracle(b)) {
        k_h = b.m_h;
        k_v = b.m_v;
        hit = true;
        break;
      }
    }
    if (!hit) throw ExhaustedTree("no child beam detected the target at level " + std::to_string(level));
  }
  tr.scans_used = int(tr.beams_tried.size());
  tr.detected_at = tr.scans_used;
  tr.found = BeamIndex{s, k_h, k_v};
  tr.fell_back = true;
  return tr;
}

ScanTrace scan(const DetectionOracle& oracle, const CandidateSets& sets) { return scan(oracle, sets, oracle); }

ScanTrace scan(const DetectionOracle& oracle, const CandidateSets& sets, const DetectionOracle& fallback) {
  ScanTrace tr;
  for (int i = 0; i < 4; ++i) {
    for (const auto& b : sets.sets[i]) {
      tr.beams_tried.push_back(b);
      if (oracle(b)) {
        tr.set_hit = i + 1;
        tr.scans_used = int(tr.beams_tried.size());
        tr.detected_at = tr.scans_used;
        tr.found = b;
        return tr;
      }
    }
  }
  const ScanTrace h = hierarchical_scan(fallback, sets.center.s);
  tr.fell_back = true;
  tr.set_hit = kSetEnd;
  tr.scans_used = int(tr.beams_tried.size()) + h.scans_used;
  tr.beams_tried.insert(tr.beams_tried.end(), h.beams_tried.begin(), h.beams_tried.end());
  tr.detected_at = tr.scans_used;
  tr.found = h.found;
  return tr;
}

int hierarchical_cost(const BeamIndex& cell) {
  if (!valid_beam(cell)) throw PreconditionViolation("cell out of range");
  int cost = 0;
  BeamIndex b = cell;
  while (true) {
    const auto h = to_hierarchical(b);
    cost += h.b_h + 2 * (h.b_v - 1);
    if (b.s == 1) break;
    b = parent(b);
  }
  return cost;
}

FallbackCost parse_fallback_cost(const std::string& name) {
  if (name == "table") return FallbackCost::Table;
  if (name == "log_k") return FallbackCost::LogK;
  if (name == "exact_complement") return FallbackCost::ExactComplement;
  throw ConfigError("unknown fallback cost model: " + name);
}

double complement_hierarchical_cost(const CandidateSets& sets) {
  const int s = sets.center.s, n = 1 << s;
  double sum = 0.0;
  int count = 0;
  for (int mv = 1; mv <= n; ++mv)
    for (int mh = 1; mh <= n; ++mh) {
      const int dh = std::abs(mh - sets.center.m_h), dv = std::abs(mv - sets.center.m_v);
      if (std::max(dh, dv) <= 2) continue;
      sum += hierarchical_cost({s, mh, mv});
      ++count;
    }
  if (count == 0) throw PreconditionViolation("candidate sets cover the whole codebook");
  return sum / count;
}

double fallback_cost(FallbackCost mode, const CandidateSets& sets) {
  const int s = sets.center.s;
  switch (mode) {
    case FallbackCost::Table:
      return 2.5 * s;
    case FallbackCost::LogK:
      return 2.0 * s;  // log2(4^s)
    case FallbackCost::ExactComplement:
      return complement_hierarchical_cost(sets);
  }
  return 0.0;
}

OverheadModel overhead_model(const CandidateSets& sets, FallbackCost mode, SetPosition position) {
  return {sets.sizes(), fallback_cost(mode, sets), position};
}

double expected_overhead(const std::array<double, 5>& p, const OverheadModel& m) {
  double total = 0.0;
  for (double x : p) {
    if (!(x >= 0.0) || !std::isfinite(x)) throw InvalidDistribution("negative or non-finite probability");
    total += x;
  }
  if (std::abs(total - 1.0) > 1e-9) throw InvalidDistribution("probabilities do not sum to 1");
  if (m.set_sizes[0] != 1) throw PreconditionViolation("first candidate set must hold one beam");
  double out = p[0] * 1.0;
  double before = m.set_sizes[0];
  for (int i = 1; i < 4; ++i) {
    const double n = m.set_sizes[i];
    const double pos = m.position == SetPosition::HalfSize ? 0.5 * n : 0.5 * (n + 1);
    if (p[i] > 0) out += p[i] * (before + pos);
    before += n;
  }
  out += p[4] * (before + m.hierarchical_cost);
  return out;
}

MonteCarloMean hierarchical_monte_carlo(int s, int trials, std::uint64_t seed) {
  if (trials < 2) throw PreconditionViolation("need at least two trials");
  const Coverage cov;
  const Codebook<double> cb(ArrayGeometry{1, 1}, s, cov);
  Rng rng(seed);
  double sum = 0.0, sum2 = 0.0;
  for (int t = 0; t < trials; ++t) {
    const Wavenumber w{rng.uniform(cov.h.lo, cov.h.hi), rng.uniform(cov.v.lo, cov.v.hi)};
    const double c = hierarchical_scan(geometric_oracle(cov, w), s).scans_used;
    sum += c;
    sum2 += c * c;
  }
  MonteCarloMean r;
  r.trials = trials;
  r.mean = sum / trials;
  const double var = (sum2 - trials * r.mean * r.mean) / (trials - 1);
  r.std_error = std::sqrt(std::max(var, 0.0) / trials);
  return r;
}

void write_trace_jsonl(std::ostream& os, const TraceRecord& r) {
  char buf[256];
  char hit[8];
  if (r.set_hit == kSetEnd)
    std::snprintf(hit, sizeof hit, "\"end\"");
  else
    std::snprintf(hit, sizeof hit, "%d", r.set_hit);
  std::snprintf(buf, sizeof buf,
                "{\"seed\":%llu,\"s\":%d,\"center\":[%d,%d],\"set_hit\":%s,\"scans_used\":%d,"
                "\"fell_back\":%s}\n",
                static_cast<unsigned long long>(r.seed), r.s, r.center.m_h, r.center.m_v, hit,
                r.scans_used, r.fell_back ? "true" : "false");
  os << buf;
}

}  // namespace ccisac
