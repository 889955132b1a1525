#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "ccisac/beamspace.hpp"
#include "ccisac/echo_dsp.hpp"
#include "ccisac/echo_synth.hpp"

namespace ccisac {

struct CandidateSets {
  std::array<std::vector<BeamIndex>, 4> sets;
  BeamIndex center;

  std::array<int, 4> sizes() const {
    return {int(sets[0].size()), int(sets[1].size()), int(sets[2].size()), int(sets[3].size())};
  }
  int total() const;
  // 1..4 for members, 0 otherwise
  int set_of(const BeamIndex& b) const;
};

// Chebyshev rings around the center: {center}, 4-neighbours, diagonals,
// distance-2 ring; out-of-range indices dropped; row-major (m_v, m_h) inside
// each set.
CandidateSets candidate_sets(const BeamIndex& center);

using DetectionOracle = std::function<bool(const BeamIndex&)>;

// Cell membership at any level for a fixed target wavenumber.
DetectionOracle geometric_oracle(const Coverage& coverage, Wavenumber target);

// Mean range-peak to median ratio of the compressed profile for a beam with
// real gain |a^H f|: 1 + |signal at the peak bin|^2 / (M sigma_X^2).
double expected_range_ratio(const UavState& target, double tx_gain, int n_tx, int n_rx,
                            const ChannelParams& channel, const WaveformConfig& wf);

struct EchoLink {
  ArrayGeometry rx{8, 8, 130.0 * kPi / 180.0};
  ChannelParams channel;
  WaveformConfig waveform;
  DspThresholds thresholds;
};

// Level-s beams detect when the target is in the cell and the expected range
// ratio clears the detection threshold; wider beams use cell membership only.
DetectionOracle echo_oracle(const Coverage& coverage, int s, const UavState& target, const EchoLink& link);

inline constexpr int kSetEnd = 5;

struct ScanTrace {
  std::vector<BeamIndex> beams_tried;
  std::optional<int> detected_at;  // 1-based illumination count at detection
  bool fell_back = false;
  int scans_used = 0;
  int set_hit = kSetEnd;  // 1..4, kSetEnd when the candidate sets all missed
  std::optional<BeamIndex> found;
};

// Four children of the current cell per level, order (1,1),(2,1),(1,2),(2,2).
ScanTrace hierarchical_scan(const DetectionOracle& oracle, int s);

ScanTrace scan(const DetectionOracle& oracle, const CandidateSets& sets);
// Candidate sets probed with `oracle`, the hierarchical fallback with `fallback`.
ScanTrace scan(const DetectionOracle& oracle, const CandidateSets& sets, const DetectionOracle& fallback);

// Illuminations a fixed-order hierarchical search spends to reach this cell.
int hierarchical_cost(const BeamIndex& cell);

enum class FallbackCost { Table, LogK, ExactComplement };
FallbackCost parse_fallback_cost(const std::string& name);

// Mean hierarchical cost of targets uniform over cells outside the candidate
// sets. Throws PreconditionViolation if the sets cover the whole grid.
double complement_hierarchical_cost(const CandidateSets& sets);

double fallback_cost(FallbackCost mode, const CandidateSets& sets);

// Position of a hit inside set i: half the set size, or the mean index
// (n + 1) / 2 of a uniformly placed target.
enum class SetPosition { HalfSize, MeanIndex };

struct OverheadModel {
  std::array<int, 4> set_sizes{1, 4, 4, 16};
  double hierarchical_cost = 0.0;
  SetPosition position = SetPosition::MeanIndex;
};

OverheadModel overhead_model(const CandidateSets& sets, FallbackCost mode,
                             SetPosition position = SetPosition::MeanIndex);

// p = [p1, p2, p3, p4, p_end]
double expected_overhead(const std::array<double, 5>& p, const OverheadModel& model);

struct MonteCarloMean {
  double mean = 0.0;
  double std_error = 0.0;
  int trials = 0;
};

// Uniform targets over the wavenumber coverage, geometric oracle.
MonteCarloMean hierarchical_monte_carlo(int s, int trials, std::uint64_t seed);

struct TraceRecord {
  std::uint64_t seed;
  int s;
  BeamIndex center;
  int set_hit;
  int scans_used;
  bool fell_back;
};

void write_trace_jsonl(std::ostream& os, const TraceRecord& r);

}  // namespace ccisac
