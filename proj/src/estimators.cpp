#include "ccisac/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ccisac {

using nn::Matrix;
using nn::Tape;
using nn::Var;

CropRegion crop_region(int width, int height, const BoundingBox& box) {
  if (width <= 0 || height <= 0) throw PreconditionViolation("image must be non-empty");
  if (!(box.w > 0) || !(box.h > 0)) throw PreconditionViolation("box extents must be positive");
  const double xb = box.x_c - box.w / 2, xe = box.x_c + box.w / 2;
  const double yb = box.y_c - box.h / 2, ye = box.y_c + box.h / 2;
  // 1e-9 keeps exact products such as 960 * 0.6 from rounding up a column
  return {int(std::floor(width * xb + 1e-9)), int(std::ceil(width * xe - 1e-9)),
          int(std::floor(height * yb + 1e-9)), int(std::ceil(height * ye - 1e-9))};
}

CropRegion clamp_region(const CropRegion& r, int width, int height) {
  return {std::clamp(r.c0, 0, width), std::clamp(r.c1, 0, width), std::clamp(r.r0, 0, height),
          std::clamp(r.r1, 0, height)};
}

std::vector<double> crop_patch(const Image& image, const BoundingBox& box, int out) {
  if (out < 1) throw PreconditionViolation("patch size must be positive");
  if (int(image.pixels.size()) != image.width * image.height) throw ShapeMismatch("image buffer size");
  const auto r = clamp_region(crop_region(image.width, image.height, box), image.width, image.height);
  const int w = r.c1 - r.c0, h = r.r1 - r.r0;
  if (w <= 0 || h <= 0) throw EmptyCrop("box does not overlap the image");
  std::vector<double> patch(std::size_t(out) * out);
  auto sample = [&](double y, double x) {
    // pixel-center coordinates inside the region
    y = std::clamp(y, 0.0, double(h - 1));
    x = std::clamp(x, 0.0, double(w - 1));
    const int y0 = int(y), x0 = int(x);
    const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
    const double fy = y - y0, fx = x - x0;
    const double a = image.at(r.r0 + y0, r.c0 + x0), b = image.at(r.r0 + y0, r.c0 + x1);
    const double c = image.at(r.r0 + y1, r.c0 + x0), d = image.at(r.r0 + y1, r.c0 + x1);
    return (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * d);
  };
  for (int i = 0; i < out; ++i)
    for (int j = 0; j < out; ++j)
      patch[std::size_t(i) * out + j] = sample((i + 0.5) * h / out - 0.5, (j + 0.5) * w / out - 0.5);
  return patch;
}

// ---------------------------------------------------------------- V2EDA

V2eda::V2eda(const V2edaConfig& cfg, const AngleBounds& bounds, std::uint64_t seed)
    : cfg_(cfg), bounds_(bounds) {
  bounds_.validate();
  if (cfg.feature % cfg.tokens != 0) throw ConfigError("feature width must split into tokens");
  Rng rng(seed);
  const int l = cfg.feature;
  embed_ = nn::make_linear(ps_, "v2eda.geo.embed", 4, l, rng, false);
  geo_ = nn::make_res_mlp(ps_, "v2eda.geo.res", l, cfg.res_blocks, rng);
  sem_ = nn::make_cnn(ps_, "v2eda.sem", 1, cfg.patch, cfg.patch, cfg.channels, l, rng);
  auto proj = [&](const std::string& name) {
    nn::Tensor& t = ps_.add("v2eda." + name, l, l);
    nn::kaiming_uniform(t, l, rng);
    return &t;
  };
  wq_geo_ = proj("wq_geo");
  wk_geo_ = proj("wk_geo");
  wv_geo_ = proj("wv_geo");
  wq_sem_ = proj("wq_sem");
  wk_sem_ = proj("wk_sem");
  wv_sem_ = proj("wv_sem");
  w_pro_ = &ps_.add("v2eda.pro", l, 2);
  nn::kaiming_uniform(*w_pro_, l, rng);
}

Var V2eda::forward(Tape& tp, const Matrix& boxes, const Matrix& patches) const {
  if (boxes.cols() != 4) throw ShapeMismatch("v2eda: boxes must be B x 4");
  if (patches.cols() != cfg_.patch * cfg_.patch || patches.rows() != boxes.rows())
    throw ShapeMismatch("v2eda: patch batch");
  const Var geo = nn::res_mlp(tp, nn::linear(tp, tp.constant(boxes), embed_), geo_);
  const Var sem = nn::cnn(tp, tp.constant(patches), sem_);
  const Var f1 = nn::cross_attention(geo, geo, sem, tp.param(*wq_geo_), tp.param(*wk_geo_),
                                     tp.param(*wv_sem_), cfg_.tokens);
  const Var f2 = nn::cross_attention(sem, sem, geo, tp.param(*wq_sem_), tp.param(*wk_sem_),
                                     tp.param(*wv_geo_), cfg_.tokens);
  return nn::sigmoid(nn::matmul(nn::mul(f1, f2), tp.param(*w_pro_)));
}

namespace {
void fill_vision(const std::vector<VisionSample>& batch, std::size_t begin, std::size_t end,
                 const std::vector<std::size_t>* order, int patch_len, Matrix& boxes, Matrix& patches,
                 Matrix* target, const AngleBounds* bounds) {
  const int B = int(end - begin);
  boxes.resize(B, 4);
  patches.resize(B, patch_len);
  if (target) target->resize(B, 2);
  for (int i = 0; i < B; ++i) {
    const auto& s = batch[order ? (*order)[begin + i] : begin + i];
    if (int(s.patch.size()) != patch_len) throw ShapeMismatch("vision sample patch size");
    boxes.row(i) << 2 * s.box.x_c - 1, 2 * s.box.y_c - 1, 10 * s.box.w - 1, 10 * s.box.h - 1;
    for (int j = 0; j < patch_len; ++j) patches(i, j) = s.patch[std::size_t(j)];
    if (target) (*target).row(i) << bounds->norm_theta(s.theta), bounds->norm_phi(s.phi);
  }
}
}  // namespace

VsiRecord V2eda::predict(const BoundingBox& box, const std::vector<double>& patch, double t) const {
  VisionSample s{box, patch, 0, 0};
  auto r = predict(std::vector<VisionSample>{s});
  r[0].t = t;
  return r[0];
}

std::vector<VsiRecord> V2eda::predict(const std::vector<VisionSample>& batch) const {
  std::vector<VsiRecord> out;
  out.reserve(batch.size());
  const int len = cfg_.patch * cfg_.patch;
  constexpr std::size_t kChunk = 256;
  for (std::size_t b = 0; b < batch.size(); b += kChunk) {
    const std::size_t e = std::min(batch.size(), b + kChunk);
    Matrix boxes, patches;
    fill_vision(batch, b, e, nullptr, len, boxes, patches, nullptr, nullptr);
    Tape tp;
    const Matrix y = forward(tp, boxes, patches).value();
    for (int i = 0; i < int(y.rows()); ++i)
      out.push_back({bounds_.theta_of(y(i, 0)), bounds_.phi_of(y(i, 1)), true, 0.0});
  }
  return out;
}

// ---------------------------------------------------------------- MMFE

Mmfe::Mmfe(const MmfeConfig& cfg, const AngleBounds& bounds, std::uint64_t seed)
    : cfg_(cfg), bounds_(bounds) {
  bounds_.validate();
  if (cfg.history < 1) throw ConfigError("history length must be positive");
  Rng rng(seed);
  grif_theta_ = nn::make_grif(ps_, "mmfe.grif_theta", rng);
  grif_phi_ = nn::make_grif(ps_, "mmfe.grif_phi", rng);
  enc_ = nn::make_transformer(ps_, "mmfe.his", 6, cfg.dim, cfg.layers, cfg.heads, cfg.ff, rng);
  int head_in = cfg.dim;
  if (cfg.use_current) {
    w_now_ = &ps_.add("mmfe.now", 2, cfg.now_dim);
    nn::kaiming_uniform(*w_now_, 2, rng);
    head_in += cfg.now_dim;
  }
  head_ = nn::make_mlp(ps_, "mmfe.head", {head_in, cfg.hidden, 2}, rng);
}

Var Mmfe::fuse_angles(Tape& tp, const Matrix& vsi_hist, const Matrix& esi_hist) const {
  const Var tv = tp.constant(vsi_hist.col(0)), pv = tp.constant(vsi_hist.col(1));
  const Var te = tp.constant(esi_hist.col(0)), pe = tp.constant(esi_hist.col(1));
  return nn::concat_cols({nn::grif_fuse(tp, tv, te, grif_theta_), nn::grif_fuse(tp, pv, pe, grif_phi_)});
}

Var Mmfe::forward(Tape& tp, const Matrix& vsi_hist, const Matrix& esi_hist, const Matrix& now) const {
  const int P = cfg_.history;
  if (vsi_hist.cols() != 2 || esi_hist.cols() != 4 || vsi_hist.rows() != esi_hist.rows() ||
      vsi_hist.rows() % P != 0)
    throw ShapeMismatch("mmfe: history blocks");
  const int B = int(vsi_hist.rows()) / P;
  const Var tokens = nn::concat_cols({fuse_angles(tp, vsi_hist, esi_hist), tp.constant(esi_hist)});
  Var feat = nn::transformer_encoder(tp, tokens, P, enc_);
  if (cfg_.use_current) {
    if (now.rows() != B || now.cols() != 2) throw ShapeMismatch("mmfe: current VSI block");
    feat = nn::concat_cols({nn::matmul(tp.constant(now), tp.param(*w_now_)), feat});
  }
  return nn::sigmoid(nn::mlp(tp, feat, head_));
}

FusedRecord Mmfe::fuse(const VsiRecord& vsi, const EsiRecord& esi) const {
  // same gate as the network, combined in physical units
  auto gate = [&](const nn::Grif& g, double a, double b) {
    const double z = g.w->value(0, 0) * a + g.w->value(1, 0) * b + g.c->value(0, 0);
    return 1.0 / (1.0 + std::exp(-z));
  };
  const double gt = gate(grif_theta_, bounds_.norm_theta(vsi.theta_v), bounds_.norm_theta(esi.theta_e));
  const double gp = gate(grif_phi_, bounds_.norm_phi(vsi.phi_v), bounds_.norm_phi(esi.phi_e));
  FusedRecord r;
  r.theta_f = gt * vsi.theta_v + (1.0 - gt) * esi.theta_e;
  r.phi_f = gp * vsi.phi_v + (1.0 - gp) * esi.phi_e;
  r.theta_e = esi.theta_e;
  r.phi_e = esi.phi_e;
  r.v_e = esi.v_e;
  r.d_e = esi.d_e;
  return r;
}

void Mmfe::encode(const std::vector<TrackSample>& batch, Matrix& vsi_hist, Matrix& esi_hist,
                  Matrix& now) const {
  const int P = cfg_.history, B = int(batch.size());
  vsi_hist.resize(B * P, 2);
  esi_hist.resize(B * P, 4);
  now.resize(B, 2);
  for (int b = 0; b < B; ++b) {
    const auto& s = batch[std::size_t(b)];
    if (int(s.history.size()) < P) throw HistoryTooShort("need " + std::to_string(P) + " history slots");
    const std::size_t off = s.history.size() - std::size_t(P);
    for (int k = 0; k < P; ++k) {
      const auto& h = s.history[off + std::size_t(k)];
      vsi_hist.row(b * P + k) << bounds_.norm_theta(h.vsi.theta_v), bounds_.norm_phi(h.vsi.phi_v);
      esi_hist.row(b * P + k) << bounds_.norm_theta(h.esi.theta_e), bounds_.norm_phi(h.esi.phi_e),
          h.esi.v_e / kSpeedScale, h.esi.d_e / kRangeScale;
    }
    now.row(b) << bounds_.norm_theta(s.now.theta_v), bounds_.norm_phi(s.now.phi_v);
  }
}

MsiRecord Mmfe::predict(const std::vector<HistorySlot>& history, const VsiRecord& now, double t) const {
  TrackSample s{history, now, 0, 0};
  auto r = predict(std::vector<TrackSample>{s});
  r[0].t = t;
  return r[0];
}

std::vector<MsiRecord> Mmfe::predict(const std::vector<TrackSample>& batch) const {
  std::vector<MsiRecord> out;
  out.reserve(batch.size());
  constexpr std::size_t kChunk = 256;
  for (std::size_t b = 0; b < batch.size(); b += kChunk) {
    const std::vector<TrackSample> part(batch.begin() + std::ptrdiff_t(b),
                                        batch.begin() + std::ptrdiff_t(std::min(batch.size(), b + kChunk)));
    Matrix vh, eh, nw;
    encode(part, vh, eh, nw);
    Tape tp;
    const Matrix y = forward(tp, vh, eh, nw).value();
    for (int i = 0; i < int(y.rows()); ++i) out.push_back({bounds_.theta_of(y(i, 0)), bounds_.phi_of(y(i, 1)), 0.0});
  }
  return out;
}

std::vector<HistorySlot> echo_as_vision(const std::vector<HistorySlot>& history) {
  auto out = history;
  for (auto& h : out) {
    h.vsi.theta_v = h.esi.theta_e;
    h.vsi.phi_v = h.esi.phi_e;
    h.vsi.valid = h.esi.valid;
    h.vsi.t = h.esi.t;
  }
  return out;
}

// ---------------------------------------------------------------- training

namespace {
template <typename Sample, typename LossFn>
TrainReport train_loop(nn::ParamStore& ps, const std::vector<Sample>& data, const TrainConfig& cfg,
                       LossFn&& batch_loss, const std::function<void(int, double)>& on_epoch) {
  if (data.empty()) throw EmptyInput("no training samples");
  if (cfg.epochs < 0 || cfg.batch < 1) throw ConfigError("bad training schedule");
  nn::Adam opt({cfg.lr});
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t(0));
  TrainReport rep;
  for (int ep = 0; ep < cfg.epochs; ++ep) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[std::size_t(rng.uniform_int(0, int(i - 1)))]);
    double total = 0.0;
    int batches = 0;
    for (std::size_t b = 0; b < order.size(); b += std::size_t(cfg.batch)) {
      const std::size_t e = std::min(order.size(), b + std::size_t(cfg.batch));
      ps.zero_grad();
      Tape tp;
      const Var loss = batch_loss(tp, order, b, e);
      const double lv = loss.value()(0, 0);
      if (!std::isfinite(lv)) throw DivergenceDetected("training loss is not finite");
      tp.backward(loss);
      opt.step(ps);
      total += lv;
      ++batches;
    }
    rep.epoch_loss.push_back(total / batches);
    if (on_epoch) on_epoch(ep, rep.epoch_loss.back());
  }
  return rep;
}

Matrix mmfe_targets(const Mmfe& m, const std::vector<TrackSample>& data, const std::vector<std::size_t>& order,
                    std::size_t b, std::size_t e, std::vector<TrackSample>& part) {
  part.clear();
  Matrix y(int(e - b), 2);
  for (std::size_t i = b; i < e; ++i) {
    const auto& s = data[order[i]];
    part.push_back(s);
    y.row(int(i - b)) << m.bounds().norm_theta(s.theta), m.bounds().norm_phi(s.phi);
  }
  return y;
}
}  // namespace

TrainReport train_v2eda(V2eda& model, const std::vector<VisionSample>& data, const TrainConfig& cfg,
                        const std::function<void(int, double)>& on_epoch) {
  const int len = model.config().patch * model.config().patch;
  return train_loop(
      model.params(), data, cfg,
      [&](Tape& tp, const std::vector<std::size_t>& order, std::size_t b, std::size_t e) {
        Matrix boxes, patches, y;
        fill_vision(data, b, e, &order, len, boxes, patches, &y, &model.bounds());
        return nn::mse(model.forward(tp, boxes, patches), tp.constant(std::move(y)));
      },
      on_epoch);
}

TrainReport train_mmfe(Mmfe& model, const std::vector<TrackSample>& data, const TrainConfig& cfg,
                       const std::function<void(int, double)>& on_epoch) {
  std::vector<TrackSample> part;
  return train_loop(
      model.params(), data, cfg,
      [&](Tape& tp, const std::vector<std::size_t>& order, std::size_t b, std::size_t e) {
        Matrix y = mmfe_targets(model, data, order, b, e, part);
        Matrix vh, eh, nw;
        model.encode(part, vh, eh, nw);
        return nn::mse(model.forward(tp, vh, eh, nw), tp.constant(std::move(y)));
      },
      on_epoch);
}

double v2eda_loss(const V2eda& model, const std::vector<VisionSample>& data) {
  if (data.empty()) throw EmptyInput("no samples");
  const auto p = model.predict(data);
  const auto& bd = model.bounds();
  double acc = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double a = bd.norm_theta(p[i].theta_v) - bd.norm_theta(data[i].theta);
    const double b = bd.norm_phi(p[i].phi_v) - bd.norm_phi(data[i].phi);
    acc += a * a + b * b;
  }
  return acc / (2.0 * double(data.size()));
}

double mmfe_loss(const Mmfe& model, const std::vector<TrackSample>& data) {
  if (data.empty()) throw EmptyInput("no samples");
  const auto p = model.predict(data);
  const auto& bd = model.bounds();
  double acc = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double a = bd.norm_theta(p[i].theta_f) - bd.norm_theta(data[i].theta);
    const double b = bd.norm_phi(p[i].phi_f) - bd.norm_phi(data[i].phi);
    acc += a * a + b * b;
  }
  return acc / (2.0 * double(data.size()));
}

// ---------------------------------------------------------------- Kalman

void AngleKf::init(const EsiRecord& first, const EsiRecord& second) {
  if (!first.valid || !second.valid) throw PreconditionViolation("filter needs two valid ESI records");
  const double dt = second.t - first.t;
  if (!(dt > 0)) throw PreconditionViolation("ESI records must be time-ordered");
  const double r[2] = {cfg_.r_theta, cfg_.r_phi};
  x_[0] << second.theta_e, (second.theta_e - first.theta_e) / dt;
  x_[1] << second.phi_e, (second.phi_e - first.phi_e) / dt;
  for (int a = 0; a < 2; ++a) {
    P_[a].setZero();
    P_[a](0, 0) = r[a];
    P_[a](1, 1) = 2.0 * r[a] / (dt * dt);
    P_[a](0, 1) = P_[a](1, 0) = r[a] / dt;
  }
  init_ = true;
}

std::pair<double, double> AngleKf::predict(double dt) {
  if (!init_) throw PreconditionViolation("filter not initialized");
  Eigen::Matrix2d F;
  F << 1, dt, 0, 1;
  const Eigen::Matrix2d Q = Eigen::Vector2d(cfg_.q_angle, cfg_.q_rate).asDiagonal();
  for (int a = 0; a < 2; ++a) {
    x_[a] = F * x_[a];
    P_[a] = F * P_[a] * F.transpose() + Q;
  }
  return {x_[0](0), x_[1](0)};
}

void AngleKf::update(const EsiRecord& esi) {
  if (!init_) throw PreconditionViolation("filter not initialized");
  if (!esi.valid) return;
  const double z[2] = {esi.theta_e, esi.phi_e};
  const double r[2] = {cfg_.r_theta, cfg_.r_phi};
  for (int a = 0; a < 2; ++a) {
    const double s = P_[a](0, 0) + r[a];
    const Eigen::Vector2d k = P_[a].col(0) / s;
    x_[a] += k * (z[a] - x_[a](0));
    // Joseph form keeps P symmetric positive
    Eigen::Matrix2d I_KH = Eigen::Matrix2d::Identity();
    I_KH.col(0) -= k;
    P_[a] = I_KH * P_[a] * I_KH.transpose() + r[a] * k * k.transpose();
  }
}

KfConfig calibrate_kf(const std::vector<EsiRecord>& esi, const std::vector<std::pair<double, double>>& truth,
                      KfConfig base) {
  if (esi.size() != truth.size()) throw ShapeMismatch("calibration sequences differ in length");
  std::vector<double> et, ep;
  for (std::size_t i = 0; i < esi.size(); ++i)
    if (esi[i].valid) {
      et.push_back(esi[i].theta_e - truth[i].first);
      ep.push_back(esi[i].phi_e - truth[i].second);
    }
  if (et.size() < 2) throw EmptyInput("need at least two valid ESI records");
  auto var = [](const std::vector<double>& v) {
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
    double acc = 0.0;
    for (double x : v) acc += (x - m) * (x - m);
    return acc / double(v.size() - 1);
  };
  base.r_theta = std::max(var(et), 1e-12);
  base.r_phi = std::max(var(ep), 1e-12);
  return base;
}

// ---------------------------------------------------------------- fallback

EstimatorInputs select_inputs(const std::vector<HistorySlot>& window, const VsiRecord& now,
                              const std::optional<EsiRecord>& last_valid_esi) {
  EstimatorInputs in;
  in.history = window;
  in.now = now;
  const std::size_t n = window.size();
  in.provenance.echo_imputed.assign(n, false);
  in.provenance.vision_imputed.assign(n, false);

  std::optional<EsiRecord> last = last_valid_esi;
  if (!last)
    for (const auto& h : window)
      if (h.esi.valid) {
        last = h.esi;  // backfill slots that precede the first valid echo
        break;
      }
  bool any_vision = now.valid;
  for (const auto& h : window) any_vision = any_vision || h.vsi.valid;
  if (!last && !any_vision) throw NoDataAvailable("no valid echo or vision record");

  std::optional<VsiRecord> last_vsi;
  for (std::size_t k = 0; k < n; ++k) {
    auto& h = in.history[k];
    if (h.esi.valid) {
      last = h.esi;
    } else {
      const double t = h.esi.t;
      EsiRecord e;
      if (last) {
        e = *last;
      } else {
        // nothing measured yet: elevation from vision, kinematics unknown
        const VsiRecord& v = h.vsi.valid ? h.vsi : (last_vsi ? *last_vsi : now);
        e.phi_e = v.phi_v;
        e.theta_e = v.theta_v;
      }
      if (h.vsi.valid) e.theta_e = h.vsi.theta_v;
      e.valid = true;
      e.t = t;
      h.esi = e;
      in.provenance.echo_imputed[k] = true;
    }
    if (h.vsi.valid) {
      last_vsi = h.vsi;
    } else {
      h.vsi = {h.esi.theta_e, h.esi.phi_e, true, h.vsi.t};
      in.provenance.vision_imputed[k] = true;
    }
  }
  in.provenance.echo_only = !now.valid;
  return in;
}

}  // namespace ccisac
