#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "ccisac/analysis.hpp"
#include "ccisac/estimators.hpp"
#include "ccisac/scan_engine.hpp"
#include "ccisac/scenario.hpp"

namespace ccisac {

struct ChannelCase {
  double snr_db = 0.0;
  LossPreset loss = LossPreset::None;  // applied to both modalities
  OffsetCase offset = OffsetCase::None;

  std::string name() const;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  std::string checkpoint_dir;  // empty: out_dir

  std::vector<int> levels{2, 3, 4, 5, 6};
  std::vector<double> snr_db{0.0, -1.0, -2.0};
  std::vector<LossPreset> loss_presets{LossPreset::None, LossPreset::Few};
  std::vector<OffsetCase> offset_cases{OffsetCase::None};
  std::vector<std::string> estimators{"mmfe", "echo_only", "kf", "vision_only"};
  std::vector<Profile> profiles{Profile::LinearPass, Profile::Orbit, Profile::RandomWaypoint, Profile::Hover};

  TrajectoryConfig trajectory;
  CameraModel camera;
  EchoLink link;
  Coverage coverage;
  FallbackCost fallback = FallbackCost::Table;

  V2edaConfig v2eda;
  MmfeConfig mmfe;
  TrainConfig train;  // epochs 100, lr 1e-3

  int vision_trajectories = 500;  // frames subsampled by vision_stride
  int vision_stride = 9;
  int track_trajectories = 120;   // split 80/20 by trajectory
  double train_fraction = 0.8;
  int steer_trials = 1000;        // per level
  std::string vsi_source = "v2eda";  // or "truth"
  std::string oracle = "echo";       // or "geometric"
  int workers = 1;

  std::string checkpoints() const { return checkpoint_dir.empty() ? out_dir : checkpoint_dir; }
  std::vector<ChannelCase> cases() const;
  void validate() const;
};

ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::string& path);

std::uint64_t fnv1a64(const std::string& bytes);
std::string config_hash(const ExperimentConfig& cfg);

// Runs f(i) for i in [0, n) on `workers` threads; results must be written by index.
void parallel_for(int n, int workers, const std::function<void(int)>& f);

// ---------------------------------------------------------------- data

struct Episode {
  std::uint64_t seed = 0;
  Trajectory trajectory;
  std::vector<CameraObservation> camera;
  std::vector<VsiRecord> vsi;  // invalid where the camera misses
};

std::uint64_t trajectory_seed(const ExperimentConfig& cfg, int index);
// Tracking trajectory indices [0, n_train) train, [n_train, n) test.
int train_trajectory_count(const ExperimentConfig& cfg);

Episode make_episode(const ExperimentConfig& cfg, int index, const V2eda* vision);

std::vector<VisionSample> vision_dataset(const ExperimentConfig& cfg, bool train_split);

// ESI measured through the level-s beam of the cell that contains the target.
EsiRecord measure_esi(const ExperimentConfig& cfg, const UavState& truth, int s, double snr_db,
                      std::uint64_t seed, double t);

// Per-slot ESI for one episode at (s, snr), impairments applied.
std::vector<SensingSlot> sensing_stream(const ExperimentConfig& cfg, const Episode& ep, int s,
                                        const ChannelCase& cc);

// ---------------------------------------------------------------- models

struct Models {
  std::unique_ptr<V2eda> v2eda;
  std::unique_ptr<Mmfe> mmfe;
  std::unique_ptr<Mmfe> echo_only;
  KfConfig kf;
};

Models fresh_models(const ExperimentConfig& cfg);
void save_models(const Models& m, const std::string& dir);
Models load_models(const ExperimentConfig& cfg, const std::string& dir);

struct TrainingResult {
  Models models;
  TrainReport v2eda, mmfe, echo_only;
  double v2eda_test_rmse = 0.0;  // rad, both axes
};

using Progress = std::function<void(const std::string&)>;

TrainingResult run_training(const ExperimentConfig& cfg, const Progress& log = nullptr);

// Tracking windows for one stream; `echo_only` drops vision before selection.
std::vector<TrackSample> track_windows(const std::vector<SensingSlot>& stream, int P, bool echo_only);

// ---------------------------------------------------------------- task B

struct SteerRow {
  std::string method;  // "v2eda" or "hierarchical"
  int s = 0;
  int trials = 0;
  std::array<double, 5> p{};  // empirical p1..p4, p_end
  double mean_scans = 0.0;
  double ci95 = 0.0;
  double analytic = 0.0;  // expected_overhead with the empirical p
  double t_comm_ms = 0.0;
};

struct SteerReport {
  std::vector<SteerRow> rows;
  std::vector<TraceRecord> traces;
};

SteerReport run_task_b(const ExperimentConfig& cfg, const V2eda* vision);
void write_steer_csv(std::ostream& os, const std::vector<SteerRow>& rows);

// ---------------------------------------------------------------- task C

struct TrackReport {
  std::vector<MethodMetrics> rows;
  std::vector<std::vector<double>> cpf;  // per row
};

TrackReport run_task_c(const ExperimentConfig& cfg, const Models& models, const Progress& log = nullptr);

// ---------------------------------------------------------------- verbs

struct RunManifest {
  std::string verb;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> artifacts;
  std::map<std::string, double> wall_seconds;
};

void write_manifest(const RunManifest& m, const std::string& path);

// train | steer | track | coherence | budget | export-codebook
RunManifest run_verb(const std::string& verb, const ExperimentConfig& cfg, const Progress& log = nullptr);

}  // namespace ccisac
