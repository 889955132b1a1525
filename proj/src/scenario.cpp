#include "ccisac/scenario.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace ccisac {

Eigen::Vector3d position_of(const UavState& s) {
  const double c = std::cos(s.phi);
  return {s.d * c * std::cos(s.theta), s.d * c * std::sin(s.theta), s.d * std::sin(s.phi)};
}

UavState state_from_kinematics(const Eigen::Vector3d& p, const Eigen::Vector3d& v, double t) {
  UavState s;
  s.d = p.norm();
  if (!(s.d > 0)) throw PreconditionViolation("target at the base station");
  s.theta = std::atan2(p.y(), p.x());
  s.phi = std::asin(std::clamp(p.z() / s.d, -1.0, 1.0));
  const Eigen::Vector3d u = p / s.d;
  s.v_par = v.dot(u);
  s.v_perp = (v - s.v_par * u).norm();
  s.t = t;
  return s;
}

bool Envelope::admits(const UavState& s, double speed) const {
  return s.d >= d_min && s.d <= d_max && speed <= v_max + 1e-9 &&
         s.theta >= sector.theta_min + margin && s.theta <= sector.theta_max - margin &&
         s.phi >= sector.phi_min + margin && s.phi <= sector.phi_max - margin;
}

Profile parse_profile(const std::string& n) {
  if (n == "hover") return Profile::Hover;
  if (n == "linear-pass") return Profile::LinearPass;
  if (n == "orbit") return Profile::Orbit;
  if (n == "random-waypoint") return Profile::RandomWaypoint;
  throw ConfigError("unknown trajectory profile: " + n);
}

std::string profile_name(Profile p) {
  switch (p) {
    case Profile::Hover: return "hover";
    case Profile::LinearPass: return "linear-pass";
    case Profile::Orbit: return "orbit";
    case Profile::RandomWaypoint: return "random-waypoint";
  }
  return "?";
}

namespace {

Eigen::Vector3d random_point(const Envelope& env, Rng& rng, double d_lo, double d_hi, double extra_margin) {
  const double m = env.margin + extra_margin;
  UavState s;
  s.theta = rng.uniform(env.sector.theta_min + m, env.sector.theta_max - m);
  s.phi = rng.uniform(env.sector.phi_min + m, env.sector.phi_max - m);
  s.d = rng.uniform(d_lo, d_hi);
  return position_of(s);
}

Eigen::Vector3d random_direction(Rng& rng) {
  Eigen::Vector3d u;
  do {
    u = {rng.normal(), rng.normal(), rng.normal()};
  } while (u.norm() < 1e-6);
  return u.normalized();
}

bool try_generate(Trajectory& tr, Profile profile, const TrajectoryConfig& cfg, Rng& rng) {
  const auto& env = cfg.envelope;
  const int n = cfg.steps;
  const double dt = cfg.dt;
  tr.positions.assign(std::size_t(n), Eigen::Vector3d::Zero());
  tr.velocities.assign(std::size_t(n), Eigen::Vector3d::Zero());
  const double speed = cfg.speed >= 0 ? cfg.speed : rng.uniform(5.0, std::min(25.0, env.v_max));
  switch (profile) {
    case Profile::Hover: {
      const Eigen::Vector3d p = random_point(env, rng, env.d_min + 10, env.d_max - 10, 0.0);
      for (int k = 0; k < n; ++k) tr.positions[std::size_t(k)] = p;
      break;
    }
    case Profile::LinearPass: {
      const Eigen::Vector3d p0 = random_point(env, rng, env.d_min + 30, env.d_max - 30, 0.0);
      const Eigen::Vector3d v = speed * random_direction(rng);
      for (int k = 0; k < n; ++k) {
        tr.positions[std::size_t(k)] = p0 + (k * dt) * v;
        tr.velocities[std::size_t(k)] = v;
      }
      break;
    }
    case Profile::Orbit: {
      // each step is perpendicular to the current line of sight
      Eigen::Vector3d p = random_point(env, rng, env.d_min + 30, env.d_max - 30, 0.0);
      const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
      for (int k = 0; k < n; ++k) {
        Eigen::Vector3d u = Eigen::Vector3d::UnitZ().cross(p);
        if (u.norm() < 1e-9) return false;
        u = sign * u.normalized();
        tr.positions[std::size_t(k)] = p;
        tr.velocities[std::size_t(k)] = speed * u;
        p += speed * dt * u;
      }
      break;
    }
    case Profile::RandomWaypoint: {
      Eigen::Vector3d p = random_point(env, rng, env.d_min + 20, env.d_max - 20, 2 * kDeg);
      Eigen::Vector3d v = Eigen::Vector3d::Zero();
      Eigen::Vector3d w = random_point(env, rng, env.d_min + 20, env.d_max - 20, 3 * kDeg);
      const double dv_max = cfg.max_accel * dt;
      for (int k = 0; k < n; ++k) {
        if ((w - p).norm() < 5.0) w = random_point(env, rng, env.d_min + 20, env.d_max - 20, 3 * kDeg);
        Eigen::Vector3d dv = (w - p).normalized() * speed - v;
        if (dv.norm() > dv_max) dv *= dv_max / dv.norm();
        v += dv;
        if (v.norm() > env.v_max) v *= env.v_max / v.norm();
        tr.positions[std::size_t(k)] = p;
        tr.velocities[std::size_t(k)] = v;
        p += dt * v;
      }
      break;
    }
  }
  tr.states.clear();
  for (int k = 0; k < n; ++k) {
    const auto s = state_from_kinematics(tr.positions[std::size_t(k)], tr.velocities[std::size_t(k)], k * dt);
    if (!env.admits(s, tr.velocities[std::size_t(k)].norm())) return false;
    tr.states.push_back(s);
  }
  return true;
}

}  // namespace

Trajectory generate_trajectory(std::uint64_t seed, Profile profile, const TrajectoryConfig& cfg) {
  if (cfg.steps < 1 || !(cfg.dt > 0)) throw ConfigError("trajectory needs steps >= 1 and dt > 0");
  if (cfg.speed > cfg.envelope.v_max) throw ConfigError("requested speed exceeds the envelope");
  Trajectory tr;
  tr.profile = profile;
  tr.dt = cfg.dt;
  for (std::uint64_t attempt = 0; attempt < 2000; ++attempt) {
    Rng rng(derive_seed(seed, attempt));
    if (try_generate(tr, profile, cfg, rng)) return tr;
  }
  throw ConfigError("could not fit a " + profile_name(profile) + " trajectory inside the envelope");
}

UavState state_at(const Trajectory& tr, double t) {
  if (tr.states.empty()) throw EmptyInput("empty trajectory");
  const double t0 = tr.states.front().t;
  const long n = long(tr.states.size());
  const long k = std::clamp(long(std::floor((t - t0) / tr.dt + 1e-9)), 0L, n - 1);
  const auto uk = std::size_t(k);
  const Eigen::Vector3d p = tr.positions[uk] + (t - tr.states[uk].t) * tr.velocities[uk];
  return state_from_kinematics(p, tr.velocities[uk], t);
}

void write_trajectory_csv(std::ostream& os, const Trajectory& tr) {
  os << "t,theta_deg,phi_deg,d,v_par,v_perp\n";
  char buf[256];
  for (const auto& s : tr.states) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", s.t, s.theta / kDeg,
                  s.phi / kDeg, s.d, s.v_par, s.v_perp);
    os << buf;
  }
}

Trajectory read_trajectory_csv(std::istream& is, double dt) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("empty trajectory CSV");
  if (line.rfind("t,theta_deg,phi_deg,d,v_par,v_perp", 0) != 0) throw FormatError("unexpected trajectory CSV header");
  Trajectory tr;
  tr.dt = dt;
  int row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream ss(line);
    double v[6];
    char comma;
    for (int i = 0; i < 6; ++i) {
      if (!(ss >> v[i])) throw FormatError("bad number in trajectory CSV row " + std::to_string(row));
      if (i < 5 && !(ss >> comma && comma == ',')) throw FormatError("missing comma in row " + std::to_string(row));
    }
    UavState s{v[1] * kDeg, v[2] * kDeg, v[3], v[4], v[5], v[0]};
    tr.states.push_back(s);
    tr.positions.push_back(position_of(s));
  }
  if (tr.states.empty()) throw EmptyInput("trajectory CSV has no rows");
  // velocities by forward differences
  tr.velocities.resize(tr.positions.size(), Eigen::Vector3d::Zero());
  for (std::size_t k = 0; k + 1 < tr.positions.size(); ++k)
    tr.velocities[k] = (tr.positions[k + 1] - tr.positions[k]) / (tr.states[k + 1].t - tr.states[k].t);
  if (tr.positions.size() > 1) tr.velocities.back() = tr.velocities[tr.velocities.size() - 2];
  return tr;
}

Eigen::Vector3d CameraModel::position() const {
  return {offset * std::cos(azimuth), offset * std::sin(azimuth), mount_height};
}

void CameraModel::validate() const {
  bounds.validate();
  if (width < 1 || height < 1 || patch < 4) throw ConfigError("camera image and patch sizes must be positive");
  if (!(hfov > 0 && hfov < kPi) || !(vfov > 0 && vfov < kPi)) throw ConfigError("camera field of view out of range");
  if (!(min_size > 0) || !(max_size >= min_size) || max_size > 1) throw ConfigError("box size clamp out of range");
}

double blob_radius(const CameraModel& cam, double camera_range) {
  if (!(camera_range > 0)) throw PreconditionViolation("camera range must be positive");
  return std::max(0.5, cam.blob_ref_radius * cam.ref_range / camera_range);
}

bool project(const CameraModel& cam, const Eigen::Vector3d& p, double& x, double& y) {
  const Eigen::Vector3d f(std::cos(cam.pitch) * std::cos(cam.yaw), std::cos(cam.pitch) * std::sin(cam.yaw),
                          std::sin(cam.pitch));
  const Eigen::Vector3d r(std::sin(cam.yaw), -std::cos(cam.yaw), 0.0);
  const Eigen::Vector3d u = r.cross(f);
  const Eigen::Vector3d q = p - cam.position();
  const double Z = f.dot(q);
  if (!(Z > 1e-9)) return false;
  x = 0.5 + r.dot(q) / Z / (2 * std::tan(cam.hfov / 2));
  y = 0.5 - u.dot(q) / Z / (2 * std::tan(cam.vfov / 2));
  return true;
}

CameraObservation project_to_camera(const UavState& state, const CameraModel& cam, Rng& rng) {
  CameraObservation obs;
  const Eigen::Vector3d p = position_of(state);
  double x, y;
  if (!project(cam, p, x, y)) return obs;
  if (!cam.bounds.contains(state.theta, state.phi)) return obs;
  obs.camera_range = (p - cam.position()).norm();
  const double xc = x + rng.normal(0, cam.center_jitter);
  const double yc = y + rng.normal(0, cam.center_jitter);
  const double base = std::clamp(cam.ref_size * cam.ref_range / obs.camera_range, cam.min_size, cam.max_size);
  const double w = std::max(1e-3, base * (1 + cam.size_jitter * rng.normal()));
  const double h = std::max(1e-3, base * (1 + cam.size_jitter * rng.normal()));
  if (xc < 0 || xc > 1 || yc < 0 || yc > 1) return obs;
  const double x0 = std::max(0.0, xc - w / 2), x1 = std::min(1.0, xc + w / 2);
  const double y0 = std::max(0.0, yc - h / 2), y1 = std::min(1.0, yc + h / 2);
  obs.box = {(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0};
  const int P = cam.patch;
  const double sigma = blob_radius(cam, obs.camera_range);
  const double c = (P - 1) / 2.0;
  obs.patch.resize(std::size_t(P * P));
  for (int i = 0; i < P; ++i)
    for (int j = 0; j < P; ++j) {
      const double r2 = (i - c) * (i - c) + (j - c) * (j - c);
      obs.patch[std::size_t(i * P + j)] = std::exp(-r2 / (2 * sigma * sigma)) + cam.pixel_noise * rng.normal();
    }
  obs.visible = true;
  return obs;
}

LossPreset parse_loss_preset(const std::string& n) {
  if (n == "none") return LossPreset::None;
  if (n == "few") return LossPreset::Few;
  if (n == "many") return LossPreset::Many;
  throw ConfigError("unknown loss preset: " + n);
}

std::string loss_preset_name(LossPreset p) {
  switch (p) {
    case LossPreset::None: return "none";
    case LossPreset::Few: return "few";
    case LossPreset::Many: return "many";
  }
  return "?";
}

double loss_fraction(LossPreset p) {
  switch (p) {
    case LossPreset::None: return 0.0;
    case LossPreset::Few: return 0.05;
    case LossPreset::Many: return 0.20;
  }
  return 0.0;
}

OffsetCase parse_offset_case(const std::string& n) {
  if (n == "none") return OffsetCase::None;
  if (n == "delay") return OffsetCase::Delay;
  if (n == "random") return OffsetCase::Random;
  if (n == "advance") return OffsetCase::Advance;
  throw ConfigError("unknown offset case: " + n);
}

std::string offset_case_name(OffsetCase c) {
  switch (c) {
    case OffsetCase::None: return "none";
    case OffsetCase::Delay: return "delay";
    case OffsetCase::Random: return "random";
    case OffsetCase::Advance: return "advance";
  }
  return "?";
}

void ImpairmentPlan::validate(std::size_t n) const {
  if (snr_db.size() != n || echo_lost.size() != n || vision_invalid.size() != n || sync_offset.size() != n)
    throw PreconditionViolation("impairment plan not aligned with the stream");
}

std::vector<bool> loss_mask(std::size_t n, double fraction, Rng& rng) {
  if (fraction < 0 || fraction > 1) throw PreconditionViolation("loss fraction outside [0, 1]");
  std::vector<bool> mask(n, false);
  const auto k = std::size_t(std::llround(fraction * double(n)));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t(0));
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = i + std::size_t(rng.uniform_int(0, int(n - i - 1)));
    std::swap(idx[i], idx[j]);
    mask[idx[i]] = true;
  }
  return mask;
}

ImpairmentPlan make_plan(std::size_t n, const PlanSpec& spec, std::uint64_t seed) {
  if (spec.max_offset < 0) throw ConfigError("offset bound must be non-negative");
  Rng rng(seed);
  ImpairmentPlan plan;
  plan.snr_db.assign(n, spec.snr_db);
  plan.echo_lost = loss_mask(n, loss_fraction(spec.echo_loss), rng);
  plan.vision_invalid = loss_mask(n, loss_fraction(spec.vision_loss), rng);
  plan.sync_offset.assign(n, 0.0);
  const double t = spec.max_offset;
  for (std::size_t i = 0; i < n && t > 0; ++i) {
    switch (spec.offset) {
      case OffsetCase::None: break;
      case OffsetCase::Delay: plan.sync_offset[i] = rng.uniform(-t, 0.0); break;
      case OffsetCase::Random: plan.sync_offset[i] = rng.uniform(-t, t); break;
      case OffsetCase::Advance: plan.sync_offset[i] = rng.uniform(0.0, t); break;
    }
  }
  return plan;
}

std::vector<SensingSlot> apply_impairments(
    std::vector<SensingSlot> stream, const ImpairmentPlan& plan,
    const std::function<EsiRecord(std::size_t, double)>& resynth) {
  if (plan.size() == 0) return stream;
  plan.validate(stream.size());
  for (std::size_t i = 0; i < stream.size(); ++i) {
    auto& s = stream[i];
    s.echo_time = s.t + plan.sync_offset[i];
    if (plan.sync_offset[i] != 0.0 && resynth) s.esi = resynth(i, s.echo_time);
    if (plan.echo_lost[i]) s.esi.valid = false;
    if (plan.vision_invalid[i]) {
      s.vsi.valid = false;
      s.camera.visible = false;
    }
  }
  return stream;
}

}  // namespace ccisac
