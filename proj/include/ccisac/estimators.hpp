#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ccisac/echo_dsp.hpp"
#include "ccisac/nn/layers.hpp"
#include "ccisac/nn/optim.hpp"
#include "ccisac/records.hpp"

namespace ccisac {

// Grayscale image, row-major.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;

  double at(int row, int col) const { return pixels[std::size_t(row) * width + col]; }
};

// Pixel span [c0, c1) x [r0, r1).
struct CropRegion {
  int c0 = 0, c1 = 0, r0 = 0, r1 = 0;
};

CropRegion crop_region(int width, int height, const BoundingBox& box);
CropRegion clamp_region(const CropRegion& r, int width, int height);

// Bilinear resample of the clamped region to out x out.
std::vector<double> crop_patch(const Image& image, const BoundingBox& box, int out = 32);

inline constexpr double kSpeedScale = 27.0;
inline constexpr double kRangeScale = 400.0;

// ---------------------------------------------------------------- V2EDA

struct V2edaConfig {
  int feature = 16;
  int res_blocks = 2;
  std::vector<int> channels{4, 8, 8};
  int patch = 32;
  int tokens = 16;
};

struct VisionSample {
  BoundingBox box;
  std::vector<double> patch;
  double theta = 0.0, phi = 0.0;  // truth, rad
};

class V2eda {
 public:
  V2eda(const V2edaConfig& cfg, const AngleBounds& bounds, std::uint64_t seed);

  // boxes B x 4 (x_c, y_c, w, h), patches B x patch^2; returns sigmoid outputs B x 2
  nn::Var forward(nn::Tape& tp, const nn::Matrix& boxes, const nn::Matrix& patches) const;
  VsiRecord predict(const BoundingBox& box, const std::vector<double>& patch, double t = 0.0) const;
  std::vector<VsiRecord> predict(const std::vector<VisionSample>& batch) const;

  nn::ParamStore& params() { return ps_; }
  const nn::ParamStore& params() const { return ps_; }
  const AngleBounds& bounds() const { return bounds_; }
  const V2edaConfig& config() const { return cfg_; }
  nn::Tensor& projection() { return *w_pro_; }

 private:
  V2edaConfig cfg_;
  AngleBounds bounds_;
  nn::ParamStore ps_;
  nn::Linear embed_;
  nn::ResMlp geo_;
  nn::Cnn sem_;
  nn::Tensor *wq_geo_, *wk_geo_, *wv_geo_, *wq_sem_, *wk_sem_, *wv_sem_;
  nn::Tensor* w_pro_;
};

// ---------------------------------------------------------------- MMFE

struct MmfeConfig {
  int history = 6;
  int dim = 16;
  int layers = 2;
  int heads = 2;
  int ff = 32;
  int now_dim = 4;
  int hidden = 16;
  bool use_current = true;  // false: Echo-Only ablation
};

// One history slot after fallback handling; all channels physical units.
struct HistorySlot {
  VsiRecord vsi;
  EsiRecord esi;
};

// [theta_f, phi_f, theta_e, phi_e, v_e, d_e]
struct FusedRecord {
  double theta_f = 0.0, phi_f = 0.0;
  double theta_e = 0.0, phi_e = 0.0, v_e = 0.0, d_e = 0.0;
};

struct TrackSample {
  std::vector<HistorySlot> history;  // oldest first
  VsiRecord now;
  double theta = 0.0, phi = 0.0;  // truth at the current slot
};

class Mmfe {
 public:
  Mmfe(const MmfeConfig& cfg, const AngleBounds& bounds, std::uint64_t seed);

  // vsi_hist (B P) x 2 and esi_hist (B P) x 4, normalized; now B x 2 (ignored when ablated)
  nn::Var forward(nn::Tape& tp, const nn::Matrix& vsi_hist, const nn::Matrix& esi_hist,
                  const nn::Matrix& now) const;

  FusedRecord fuse(const VsiRecord& vsi, const EsiRecord& esi) const;
  MsiRecord predict(const std::vector<HistorySlot>& history, const VsiRecord& now, double t = 0.0) const;
  std::vector<MsiRecord> predict(const std::vector<TrackSample>& batch) const;

  // Row blocks for a batch of samples.
  void encode(const std::vector<TrackSample>& batch, nn::Matrix& vsi_hist, nn::Matrix& esi_hist,
              nn::Matrix& now) const;

  nn::ParamStore& params() { return ps_; }
  const nn::ParamStore& params() const { return ps_; }
  const AngleBounds& bounds() const { return bounds_; }
  const MmfeConfig& config() const { return cfg_; }
  const nn::Mlp& head() const { return head_; }

 private:
  nn::Var fuse_angles(nn::Tape& tp, const nn::Matrix& vsi_hist, const nn::Matrix& esi_hist) const;

  MmfeConfig cfg_;
  AngleBounds bounds_;
  nn::ParamStore ps_;
  nn::Grif grif_theta_, grif_phi_;
  nn::TransEnc enc_;
  nn::Tensor* w_now_ = nullptr;
  nn::Mlp head_;
};

inline MmfeConfig echo_only_config(MmfeConfig cfg = {}) {
  cfg.use_current = false;
  return cfg;
}

// Echo-Only runs the ablated network with every VSI channel set to the ESI.
std::vector<HistorySlot> echo_as_vision(const std::vector<HistorySlot>& history);

// ---------------------------------------------------------------- training

struct TrainConfig {
  int epochs = 100;
  int batch = 32;
  double lr = 1e-3;
  std::uint64_t seed = 1;
};

struct TrainReport {
  std::vector<double> epoch_loss;  // mean minibatch loss per epoch
};

TrainReport train_v2eda(V2eda& model, const std::vector<VisionSample>& data, const TrainConfig& cfg,
                        const std::function<void(int, double)>& on_epoch = nullptr);
TrainReport train_mmfe(Mmfe& model, const std::vector<TrackSample>& data, const TrainConfig& cfg,
                       const std::function<void(int, double)>& on_epoch = nullptr);

double v2eda_loss(const V2eda& model, const std::vector<VisionSample>& data);
double mmfe_loss(const Mmfe& model, const std::vector<TrackSample>& data);

// ---------------------------------------------------------------- Kalman

struct KfConfig {
  double q_angle = 1e-6;  // per step, rad^2
  double q_rate = 1e-5;   // per step, (rad/s)^2
  double r_theta = 1e-5;  // rad^2
  double r_phi = 1e-5;
};

// Two independent constant-velocity filters, azimuth and elevation.
class AngleKf {
 public:
  explicit AngleKf(KfConfig cfg = {}) : cfg_(cfg) {}

  bool initialized() const { return init_; }
  // State from two ESI records: angle from the second, rate from the difference.
  void init(const EsiRecord& first, const EsiRecord& second);
  // Advances the state; returns the predicted (theta, phi).
  std::pair<double, double> predict(double dt);
  void update(const EsiRecord& esi);

  double theta() const { return x_[0](0); }
  double phi() const { return x_[1](0); }
  double theta_rate() const { return x_[0](1); }
  double phi_rate() const { return x_[1](1); }
  double theta_variance() const { return P_[0](0, 0); }

 private:
  KfConfig cfg_;
  bool init_ = false;
  Eigen::Vector2d x_[2];
  Eigen::Matrix2d P_[2];
};

// Sample variance of ESI angle errors per axis; R for the filter.
KfConfig calibrate_kf(const std::vector<EsiRecord>& esi, const std::vector<std::pair<double, double>>& truth,
                      KfConfig base = {});

// ---------------------------------------------------------------- fallback

struct Provenance {
  bool echo_only = false;           // current VSI unusable
  std::vector<bool> echo_imputed;   // per history slot
  std::vector<bool> vision_imputed;
};

struct EstimatorInputs {
  std::vector<HistorySlot> history;
  VsiRecord now;
  Provenance provenance;
};

// window: the last P slots, oldest first, as observed (invalid records allowed).
// last_valid_esi: most recent valid ESI before the window, if any.
// Missing ESI: azimuth from the concurrent VSI, elevation/speed/range from the
// last valid ESI. Missing VSI in the history: copied from the slot's ESI.
EstimatorInputs select_inputs(const std::vector<HistorySlot>& window, const VsiRecord& now,
                              const std::optional<EsiRecord>& last_valid_esi = std::nullopt);

}  // namespace ccisac
