#pragma once

#include <algorithm>
#include <cmath>

#include "ccisac/beamspace.hpp"
#include "ccisac/errors.hpp"

namespace ccisac {

inline constexpr double kDeg = kPi / 180.0;

// Normalized image box: center and extents in [0, 1].
struct BoundingBox {
  double x_c = 0.5, y_c = 0.5, w = 0.2, h = 0.2;
};

struct VsiRecord {
  double theta_v = 0.0;
  double phi_v = 0.0;
  bool valid = false;
  double t = 0.0;
};

struct MsiRecord {
  double theta_f = 0.0;
  double phi_f = 0.0;
  double t = 0.0;
};

struct AngleBounds {
  double theta_min = 110.0 * kDeg;
  double theta_max = 150.0 * kDeg;
  double phi_min = 10.0 * kDeg;
  double phi_max = 80.0 * kDeg;

  void validate() const {
    if (!(theta_max > theta_min) || !(phi_max > phi_min)) throw ConfigError("angle bounds must be ordered");
  }
  bool contains(double theta, double phi) const {
    return theta >= theta_min && theta <= theta_max && phi >= phi_min && phi <= phi_max;
  }
  bool strictly_contains(double theta, double phi) const {
    return theta > theta_min && theta < theta_max && phi > phi_min && phi < phi_max;
  }
  double norm_theta(double theta) const { return (theta - theta_min) / (theta_max - theta_min); }
  double norm_phi(double phi) const { return (phi - phi_min) / (phi_max - phi_min); }
  // Unit outputs are pulled off {0, 1} so a saturated sigmoid still lands
  // strictly inside the interval.
  double theta_of(double a) const {
    return std::clamp(a, 1e-9, 1 - 1e-9) * (theta_max - theta_min) + theta_min;
  }
  double phi_of(double b) const { return std::clamp(b, 1e-9, 1 - 1e-9) * (phi_max - phi_min) + phi_min; }
};

}  // namespace ccisac
