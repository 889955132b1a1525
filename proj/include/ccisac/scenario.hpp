#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ccisac/echo_dsp.hpp"
#include "ccisac/echo_synth.hpp"
#include "ccisac/records.hpp"

namespace ccisac {

// Scenario frame: base station at the origin, z up, azimuth from +x toward +y.
Eigen::Vector3d position_of(const UavState& s);
UavState state_from_kinematics(const Eigen::Vector3d& p, const Eigen::Vector3d& v, double t);

struct Envelope {
  double d_min = 30.0;
  double d_max = 400.0;
  double v_max = 27.0;
  AngleBounds sector;
  double margin = 1.0 * kDeg;  // kept clear of the sector edges

  bool admits(const UavState& s, double speed) const;
};

enum class Profile { Hover, LinearPass, Orbit, RandomWaypoint };
Profile parse_profile(const std::string& name);
std::string profile_name(Profile p);

struct TrajectoryConfig {
  int steps = 90;
  double dt = 1.0 / 30.0;
  double speed = -1.0;  // negative: drawn per trajectory
  double max_accel = 4.0;  // random-waypoint, m/s^2
  Envelope envelope;
};

struct Trajectory {
  Profile profile = Profile::Hover;
  double dt = 1.0 / 30.0;
  std::vector<UavState> states;
  std::vector<Eigen::Vector3d> positions;
  std::vector<Eigen::Vector3d> velocities;
};

Trajectory generate_trajectory(std::uint64_t seed, Profile profile, const TrajectoryConfig& cfg = {});

// Constant-velocity extrapolation from the latest sample at or before t.
UavState state_at(const Trajectory& tr, double t);

void write_trajectory_csv(std::ostream& os, const Trajectory& tr);
// Velocities are rebuilt from forward differences of the positions.
Trajectory read_trajectory_csv(std::istream& is, double dt = 1.0 / 30.0);

struct CameraModel {
  double offset = 100.0;             // m from the base station
  double azimuth = 310.0 * kDeg;     // bearing of the camera from the base station
  double mount_height = 0.0;
  double yaw = 130.0 * kDeg;         // optical axis
  double pitch = 35.0 * kDeg;
  double hfov = 50.0 * kDeg;
  double vfov = 75.0 * kDeg;
  int width = 960;
  int height = 540;
  double center_jitter = 0.002;  // normalized units
  double size_jitter = 0.02;     // relative
  double ref_size = 0.2;
  double ref_range = 100.0;
  double min_size = 0.02, max_size = 0.5;
  int patch = 32;
  double blob_ref_radius = 4.0;  // px at ref_range
  double pixel_noise = 0.05;
  AngleBounds bounds;

  Eigen::Vector3d position() const;
  void validate() const;
};

double blob_radius(const CameraModel& cam, double camera_range);
// Normalized image coordinates; false when behind the camera.
bool project(const CameraModel& cam, const Eigen::Vector3d& p, double& x, double& y);

struct CameraObservation {
  bool visible = false;
  BoundingBox box;
  std::vector<double> patch;  // patch x patch, row-major
  double camera_range = 0.0;
};

CameraObservation project_to_camera(const UavState& state, const CameraModel& cam, Rng& rng);

enum class LossPreset { None, Few, Many };
LossPreset parse_loss_preset(const std::string& name);
std::string loss_preset_name(LossPreset p);
double loss_fraction(LossPreset p);

enum class OffsetCase { None, Delay, Random, Advance };
OffsetCase parse_offset_case(const std::string& name);
std::string offset_case_name(OffsetCase c);

struct ImpairmentPlan {
  std::vector<double> snr_db;
  std::vector<bool> echo_lost;
  std::vector<bool> vision_invalid;
  std::vector<double> sync_offset;  // echo time minus frame time, s

  std::size_t size() const { return snr_db.size(); }
  void validate(std::size_t n) const;
};

// Exactly round(fraction n) slots drawn without replacement.
std::vector<bool> loss_mask(std::size_t n, double fraction, Rng& rng);

struct PlanSpec {
  double snr_db = 0.0;
  LossPreset echo_loss = LossPreset::None;
  LossPreset vision_loss = LossPreset::None;
  OffsetCase offset = OffsetCase::None;
  double max_offset = 0.5 / 30.0;  // half the frame period
};
ImpairmentPlan make_plan(std::size_t n, const PlanSpec& spec, std::uint64_t seed);

struct SensingSlot {
  double t = 0.0;
  UavState truth;
  CameraObservation camera;
  VsiRecord vsi;
  EsiRecord esi;
  double echo_time = 0.0;
};

// Masks invalidate records; nonzero offsets move the echo timestamp and, when
// `resynth` is given, replace the ESI with one measured at the shifted time.
std::vector<SensingSlot> apply_impairments(
    std::vector<SensingSlot> stream, const ImpairmentPlan& plan,
    const std::function<EsiRecord(std::size_t slot, double echo_time)>& resynth = nullptr);

}  // namespace ccisac
