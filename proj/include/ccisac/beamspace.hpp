#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <complex>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ccisac/errors.hpp"

namespace ccisac {

template <typename Scalar>
using CVector = Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, 1>;

inline constexpr double kPi = 3.14159265358979323846;

struct ArrayGeometry {
  int n_h = 8;
  int n_v = 8;
  // Azimuth (rad) of the array broadside in the scenario frame. Steering
  // angles are taken relative to it.
  double boresight_azimuth = 0.0;

  int size() const { return n_h * n_v; }
  void validate() const {
    if (n_h < 1 || n_v < 1) throw ConfigError("array needs at least one element per axis");
  }
};

// Codebook geometry for level s: 2^(s+1) elements per axis.
inline ArrayGeometry level_geometry(int s, double boresight = 0.0) {
  const int n = 1 << (s + 1);
  return {n, n, boresight};
}

struct Wavenumber {
  double psi_h = 0.0;
  double psi_v = 0.0;
};

template <typename Scalar = double>
Wavenumber to_wavenumber(Scalar theta, Scalar phi) {
  using std::cos;
  using std::sin;
  return {kPi * double(sin(theta) * cos(phi)), kPi * double(sin(phi))};
}

inline Wavenumber to_wavenumber(const ArrayGeometry& g, double theta, double phi) {
  return to_wavenumber(theta - g.boresight_azimuth, phi);
}

// Inverse map; returns false when the wavenumber has no real angle.
inline bool to_angles(const ArrayGeometry& g, Wavenumber w, double& theta, double& phi) {
  const double sv = w.psi_v / kPi;
  if (std::abs(sv) > 1.0) return false;
  phi = std::asin(sv);
  const double c = std::cos(phi);
  if (c <= 0.0) return false;
  const double sh = w.psi_h / (kPi * c);
  if (std::abs(sh) > 1.0) return false;
  theta = std::asin(sh) + g.boresight_azimuth;
  return true;
}

// Unit-norm Kronecker steering vector, element index i_h * n_v + i_v.
template <typename Scalar = double>
CVector<Scalar> steering_from_wavenumber(const ArrayGeometry& g, Wavenumber w) {
  g.validate();
  CVector<Scalar> out(g.size());
  const Scalar norm = Scalar(1) / std::sqrt(Scalar(g.size()));
  for (int ih = 0; ih < g.n_h; ++ih) {
    for (int iv = 0; iv < g.n_v; ++iv) {
      const double ph = ih * w.psi_h + iv * w.psi_v;
      out(ih * g.n_v + iv) = std::polar(norm, Scalar(ph));
    }
  }
  return out;
}

template <typename Scalar = double>
CVector<Scalar> steering_vector(const ArrayGeometry& g, double theta, double phi) {
  const double local = theta - g.boresight_azimuth;
  const double half = kPi / 2 + 1e-12;
  if (!(std::abs(local) <= half) || !(std::abs(phi) <= half))
    throw PreconditionViolation("steering angle outside the array half-space");
  return steering_from_wavenumber<Scalar>(g, to_wavenumber(local, phi));
}

// |sum_i exp(j i d)| / n, the per-axis array factor of a uniform line.
inline double dirichlet(int n, double d) {
  const double half = 0.5 * d;
  const double s = std::sin(half);
  if (std::abs(s) < 1e-12) return 1.0;
  return std::abs(std::sin(n * half) / (n * s));
}

// |a(w_target)^H a(w_beam)| computed separably, O(1) in array size.
inline double beam_gain(const ArrayGeometry& g, Wavenumber target, Wavenumber beam) {
  return dirichlet(g.n_h, target.psi_h - beam.psi_h) * dirichlet(g.n_v, target.psi_v - beam.psi_v);
}

struct BeamIndex {
  int s = 1;
  int m_h = 1;
  int m_v = 1;
  friend bool operator==(const BeamIndex&, const BeamIndex&) = default;
};

struct HierarchicalIndex {
  int k_h, k_v, b_h, b_v;
  friend bool operator==(const HierarchicalIndex&, const HierarchicalIndex&) = default;
};

// m = 2(k - 1) + b with b in {1, 2}; k indexes the parent cell at level s-1.
inline HierarchicalIndex to_hierarchical(const BeamIndex& m) {
  return {(m.m_h - 1) / 2 + 1, (m.m_v - 1) / 2 + 1, (m.m_h - 1) % 2 + 1, (m.m_v - 1) % 2 + 1};
}

inline BeamIndex from_hierarchical(int s, const HierarchicalIndex& h) {
  return {s, 2 * (h.k_h - 1) + h.b_h, 2 * (h.k_v - 1) + h.b_v};
}

inline BeamIndex parent(const BeamIndex& m) {
  if (m.s <= 1) throw PreconditionViolation("level-1 beams have no parent");
  const auto h = to_hierarchical(m);
  return {m.s - 1, h.k_h, h.k_v};
}

inline bool valid_beam(const BeamIndex& b) {
  const int n = 1 << b.s;
  return b.s >= 1 && b.m_h >= 1 && b.m_h <= n && b.m_v >= 1 && b.m_v <= n;
}

inline std::ostream& operator<<(std::ostream& os, const BeamIndex& b) {
  return os << "(s=" << b.s << ", " << b.m_h << ", " << b.m_v << ")";
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double width() const { return hi - lo; }
  bool contains(double x) const { return x >= lo && x <= hi; }
};

struct Coverage {
  Interval h{-kPi, kPi};
  Interval v{0.0, kPi};
};

namespace detail {
// Cell containment; a value on a shared edge (to 1e-9 of a cell) goes to the
// upper cell.
inline int axis_cell(double psi, const Interval& range, double step, int n) {
  const int m = int(std::floor((psi - range.lo) / step + 1e-9)) + 1;
  return std::clamp(m, 1, n);
}

inline int axis_index(double psi, const Interval& range, double step, int n) {
  const double slack = 0.5 * step;
  if (!std::isfinite(psi) || psi < range.lo - slack || psi > range.hi + slack)
    throw OutOfCoverage("wavenumber " + std::to_string(psi) + " outside coverage");
  return axis_cell(psi, range, step, n);
}
}  // namespace detail

// Beam centers live at cell midpoints. Weights are produced on demand, a level-6
// codebook over a 128x128 array would otherwise hold 67M complex entries.
template <typename Scalar = double>
class Codebook {
 public:
  Codebook(ArrayGeometry geometry, int s, Coverage coverage)
      : geometry_(geometry), s_(s), coverage_(coverage) {
    geometry_.validate();
    if (s < 1 || s > 12) throw ConfigError("codebook level out of range");
    if (!(coverage.h.width() > 0) || !(coverage.v.width() > 0))
      throw ConfigError("empty codebook coverage");
    dpsi_h_ = coverage.h.width() / side();
    dpsi_v_ = coverage.v.width() / side();
  }

  int level() const { return s_; }
  int side() const { return 1 << s_; }
  std::int64_t size() const { return std::int64_t(side()) * side(); }
  double dpsi_h() const { return dpsi_h_; }
  double dpsi_v() const { return dpsi_v_; }
  const Coverage& coverage() const { return coverage_; }
  const ArrayGeometry& geometry() const { return geometry_; }

  Wavenumber center(const BeamIndex& b) const {
    check(b);
    return {coverage_.h.lo + (b.m_h - 0.5) * dpsi_h_, coverage_.v.lo + (b.m_v - 0.5) * dpsi_v_};
  }

  Interval cell_h(const BeamIndex& b) const {
    check(b);
    return {coverage_.h.lo + (b.m_h - 1) * dpsi_h_, coverage_.h.lo + b.m_h * dpsi_h_};
  }
  Interval cell_v(const BeamIndex& b) const {
    check(b);
    return {coverage_.v.lo + (b.m_v - 1) * dpsi_v_, coverage_.v.lo + b.m_v * dpsi_v_};
  }

  // Same partition as beam_of_wavenumber, restricted to the coverage box.
  bool in_cell(const BeamIndex& b, Wavenumber w) const {
    check(b);
    if (!coverage_.h.contains(w.psi_h) || !coverage_.v.contains(w.psi_v)) return false;
    return detail::axis_cell(w.psi_h, coverage_.h, dpsi_h_, side()) == b.m_h &&
           detail::axis_cell(w.psi_v, coverage_.v, dpsi_v_, side()) == b.m_v;
  }

  CVector<Scalar> weights(const BeamIndex& b) const {
    return steering_from_wavenumber<Scalar>(geometry_, center(b));
  }

  std::vector<BeamIndex> beams() const {
    std::vector<BeamIndex> out;
    out.reserve(size_t(size()));
    for (int mv = 1; mv <= side(); ++mv)
      for (int mh = 1; mh <= side(); ++mh) out.push_back({s_, mh, mv});
    return out;
  }

 private:
  void check(const BeamIndex& b) const {
    if (b.s != s_ || !valid_beam(b)) throw PreconditionViolation("beam index not in codebook");
  }

  ArrayGeometry geometry_;
  int s_;
  Coverage coverage_;
  double dpsi_h_ = 0.0;
  double dpsi_v_ = 0.0;
};

template <typename Scalar = double>
Codebook<Scalar> build_codebook(const ArrayGeometry& g, int s, const Coverage& cov = {}) {
  return Codebook<Scalar>(g, s, cov);
}


template <typename Scalar>
BeamIndex beam_of_wavenumber(const Codebook<Scalar>& cb, double psi_h, double psi_v) {
  return {cb.level(), detail::axis_index(psi_h, cb.coverage().h, cb.dpsi_h(), cb.side()),
          detail::axis_index(psi_v, cb.coverage().v, cb.dpsi_v(), cb.side())};
}

template <typename Scalar>
BeamIndex beam_of_wavenumber(const Codebook<Scalar>& cb, Wavenumber w) {
  return beam_of_wavenumber(cb, w.psi_h, w.psi_v);
}

// Wavenumber clamped into coverage, for predictions that drift just outside.
template <typename Scalar>
BeamIndex nearest_beam(const Codebook<Scalar>& cb, Wavenumber w) {
  const auto& c = cb.coverage();
  w.psi_h = std::clamp(w.psi_h, c.h.lo, c.h.hi);
  w.psi_v = std::clamp(w.psi_v, c.v.lo, c.v.hi);
  return beam_of_wavenumber(cb, w);
}

// CSV: s, m_h, m_v, psi_h, psi_v, theta_deg, phi_deg
template <typename Scalar>
void write_codebook_csv(std::ostream& os, const Codebook<Scalar>& cb) {
  os << "s,m_h,m_v,psi_h,psi_v,theta_deg,phi_deg\n";
  char buf[256];
  for (const auto& b : cb.beams()) {
    const Wavenumber w = cb.center(b);
    double th = 0, ph = 0;
    const bool ok = to_angles(cb.geometry(), w, th, ph);
    if (ok)
      std::snprintf(buf, sizeof buf, "%d,%d,%d,%.9f,%.9f,%.6f,%.6f\n", b.s, b.m_h, b.m_v, w.psi_h,
                    w.psi_v, th * 180.0 / kPi, ph * 180.0 / kPi);
    else
      std::snprintf(buf, sizeof buf, "%d,%d,%d,%.9f,%.9f,nan,nan\n", b.s, b.m_h, b.m_v, w.psi_h,
                    w.psi_v);
    os << buf;
  }
}

}  // namespace ccisac
