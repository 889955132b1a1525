#include "ccisac/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "ccisac/nn/checkpoint.hpp"

namespace ccisac {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

std::string snr_tag(double snr) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", snr);
  return buf;
}

std::ofstream open_out(const std::string& path) {
  fs::create_directories(fs::path(path).parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write " + path);
  return os;
}

// Rejects keys the reader does not know, so typos fail loudly.
void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

double deg(double rad) { return rad / kDeg; }

}  // namespace

// ---------------------------------------------------------------- config

std::string ChannelCase::name() const {
  return "snr" + snr_tag(snr_db) + "_" + loss_preset_name(loss) + "_" + offset_case_name(offset);
}

std::vector<ChannelCase> ExperimentConfig::cases() const {
  std::vector<ChannelCase> out;
  for (double snr : snr_db)
    for (auto loss : loss_presets)
      for (auto off : offset_cases) out.push_back({snr, loss, off});
  return out;
}

void ExperimentConfig::validate() const {
  if (levels.empty()) throw ConfigError("at least one codebook level required");
  for (int s : levels)
    if (s < 1 || s > 10) throw ConfigError("codebook level out of range");
  if (snr_db.empty() || loss_presets.empty() || offset_cases.empty())
    throw ConfigError("at least one channel case required");
  if (estimators.empty()) throw ConfigError("at least one estimator required");
  for (const auto& e : estimators)
    if (e != "mmfe" && e != "echo_only" && e != "kf" && e != "vision_only")
      throw ConfigError("unknown estimator '" + e + "'");
  if (profiles.empty()) throw ConfigError("at least one trajectory profile required");
  if (vsi_source != "v2eda" && vsi_source != "truth") throw ConfigError("vsi_source must be v2eda or truth");
  if (oracle != "echo" && oracle != "geometric") throw ConfigError("oracle must be echo or geometric");
  if (train.epochs < 0 || train.batch < 1 || !(train.lr >= 0)) throw ConfigError("bad training schedule");
  if (vision_trajectories < 2 || vision_stride < 1) throw ConfigError("vision dataset too small");
  if (track_trajectories < 2 || !(train_fraction > 0 && train_fraction < 1))
    throw ConfigError("tracking split needs train and test trajectories");
  if (trajectory.steps <= mmfe.history + 1) throw ConfigError("trajectories shorter than the history window");
  if (steer_trials < 1) throw ConfigError("steer_trials must be positive");
  if (workers < 1) throw ConfigError("workers must be positive");
  camera.validate();
  link.rx.validate();
  link.waveform.validate();
}

ExperimentConfig config_from_json(const json& j) {
  check_keys(j,
             {"seed", "out_dir", "checkpoint_dir", "levels", "snr_db", "loss_presets", "offset_cases",
              "estimators", "profiles", "scenario", "camera", "link", "coverage", "fallback_cost", "v2eda",
              "mmfe", "training", "vision_trajectories", "vision_stride", "track_trajectories",
              "train_fraction", "steer_trials", "vsi_source", "oracle", "workers"},
             "config");
  ExperimentConfig c;
  read(j, "seed", c.seed);
  read(j, "out_dir", c.out_dir);
  read(j, "checkpoint_dir", c.checkpoint_dir);
  read(j, "levels", c.levels);
  read(j, "snr_db", c.snr_db);
  read(j, "estimators", c.estimators);
  read(j, "vision_trajectories", c.vision_trajectories);
  read(j, "vision_stride", c.vision_stride);
  read(j, "track_trajectories", c.track_trajectories);
  read(j, "train_fraction", c.train_fraction);
  read(j, "steer_trials", c.steer_trials);
  read(j, "vsi_source", c.vsi_source);
  read(j, "oracle", c.oracle);
  read(j, "workers", c.workers);
  if (j.contains("loss_presets")) {
    c.loss_presets.clear();
    for (const auto& s : j.at("loss_presets")) c.loss_presets.push_back(parse_loss_preset(s.get<std::string>()));
  }
  if (j.contains("offset_cases")) {
    c.offset_cases.clear();
    for (const auto& s : j.at("offset_cases")) c.offset_cases.push_back(parse_offset_case(s.get<std::string>()));
  }
  if (j.contains("profiles")) {
    c.profiles.clear();
    for (const auto& s : j.at("profiles")) c.profiles.push_back(parse_profile(s.get<std::string>()));
  }
  if (j.contains("fallback_cost")) c.fallback = parse_fallback_cost(j.at("fallback_cost").get<std::string>());
  if (j.contains("scenario")) {
    const auto& s = j.at("scenario");
    check_keys(s, {"steps", "dt", "speed", "max_accel", "d_min", "d_max", "v_max"}, "scenario");
    read(s, "steps", c.trajectory.steps);
    read(s, "dt", c.trajectory.dt);
    read(s, "speed", c.trajectory.speed);
    read(s, "max_accel", c.trajectory.max_accel);
    read(s, "d_min", c.trajectory.envelope.d_min);
    read(s, "d_max", c.trajectory.envelope.d_max);
    read(s, "v_max", c.trajectory.envelope.v_max);
  }
  if (j.contains("camera")) {
    const auto& s = j.at("camera");
    check_keys(s, {"offset", "azimuth_deg", "mount_height", "yaw_deg", "pitch_deg", "hfov_deg", "vfov_deg",
                   "center_jitter", "size_jitter", "pixel_noise"},
               "camera");
    auto& cam = c.camera;
    double a = deg(cam.azimuth), y = deg(cam.yaw), p = deg(cam.pitch), hf = deg(cam.hfov), vf = deg(cam.vfov);
    read(s, "offset", cam.offset);
    read(s, "azimuth_deg", a);
    read(s, "mount_height", cam.mount_height);
    read(s, "yaw_deg", y);
    read(s, "pitch_deg", p);
    read(s, "hfov_deg", hf);
    read(s, "vfov_deg", vf);
    read(s, "center_jitter", cam.center_jitter);
    read(s, "size_jitter", cam.size_jitter);
    read(s, "pixel_noise", cam.pixel_noise);
    cam.azimuth = a * kDeg;
    cam.yaw = y * kDeg;
    cam.pitch = p * kDeg;
    cam.hfov = hf * kDeg;
    cam.vfov = vf * kDeg;
  }
  if (j.contains("link")) {
    const auto& s = j.at("link");
    check_keys(s, {"rx_n_h", "rx_n_v", "boresight_deg", "epsilon", "reference_gain", "range_ratio",
                   "doppler_ratio", "eigen_ratio"},
               "link");
    auto& l = c.link;
    double b = deg(l.rx.boresight_azimuth), eps = l.channel.epsilon.real();
    read(s, "rx_n_h", l.rx.n_h);
    read(s, "rx_n_v", l.rx.n_v);
    read(s, "boresight_deg", b);
    read(s, "epsilon", eps);
    read(s, "reference_gain", l.channel.reference_gain);
    read(s, "range_ratio", l.thresholds.range_ratio);
    read(s, "doppler_ratio", l.thresholds.doppler_ratio);
    read(s, "eigen_ratio", l.thresholds.eigen_ratio);
    l.rx.boresight_azimuth = b * kDeg;
    l.channel.epsilon = {eps, 0.0};
  }
  if (j.contains("coverage")) {
    const auto& s = j.at("coverage");
    check_keys(s, {"psi_h", "psi_v"}, "coverage");
    std::array<double, 2> h{c.coverage.h.lo, c.coverage.h.hi}, v{c.coverage.v.lo, c.coverage.v.hi};
    read(s, "psi_h", h);
    read(s, "psi_v", v);
    c.coverage = {{h[0], h[1]}, {v[0], v[1]}};
  }
  if (j.contains("v2eda")) {
    const auto& s = j.at("v2eda");
    check_keys(s, {"feature", "res_blocks", "channels", "tokens"}, "v2eda");
    read(s, "feature", c.v2eda.feature);
    read(s, "res_blocks", c.v2eda.res_blocks);
    read(s, "channels", c.v2eda.channels);
    read(s, "tokens", c.v2eda.tokens);
  }
  if (j.contains("mmfe")) {
    const auto& s = j.at("mmfe");
    check_keys(s, {"history", "dim", "layers", "heads", "ff", "now_dim", "hidden"}, "mmfe");
    read(s, "history", c.mmfe.history);
    read(s, "dim", c.mmfe.dim);
    read(s, "layers", c.mmfe.layers);
    read(s, "heads", c.mmfe.heads);
    read(s, "ff", c.mmfe.ff);
    read(s, "now_dim", c.mmfe.now_dim);
    read(s, "hidden", c.mmfe.hidden);
  }
  if (j.contains("training")) {
    const auto& s = j.at("training");
    check_keys(s, {"epochs", "lr", "batch"}, "training");
    read(s, "epochs", c.train.epochs);
    read(s, "lr", c.train.lr);
    read(s, "batch", c.train.batch);
  }
  c.validate();
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  j["checkpoint_dir"] = c.checkpoint_dir;
  j["levels"] = c.levels;
  j["snr_db"] = c.snr_db;
  for (auto l : c.loss_presets) j["loss_presets"].push_back(loss_preset_name(l));
  for (auto o : c.offset_cases) j["offset_cases"].push_back(offset_case_name(o));
  j["estimators"] = c.estimators;
  for (auto p : c.profiles) j["profiles"].push_back(profile_name(p));
  j["scenario"] = {{"steps", c.trajectory.steps},
                   {"dt", c.trajectory.dt},
                   {"speed", c.trajectory.speed},
                   {"max_accel", c.trajectory.max_accel},
                   {"d_min", c.trajectory.envelope.d_min},
                   {"d_max", c.trajectory.envelope.d_max},
                   {"v_max", c.trajectory.envelope.v_max}};
  const auto& cam = c.camera;
  j["camera"] = {{"offset", cam.offset},           {"azimuth_deg", deg(cam.azimuth)},
                 {"mount_height", cam.mount_height}, {"yaw_deg", deg(cam.yaw)},
                 {"pitch_deg", deg(cam.pitch)},      {"hfov_deg", deg(cam.hfov)},
                 {"vfov_deg", deg(cam.vfov)},        {"center_jitter", cam.center_jitter},
                 {"size_jitter", cam.size_jitter},   {"pixel_noise", cam.pixel_noise}};
  const auto& l = c.link;
  j["link"] = {{"rx_n_h", l.rx.n_h},
               {"rx_n_v", l.rx.n_v},
               {"boresight_deg", deg(l.rx.boresight_azimuth)},
               {"epsilon", l.channel.epsilon.real()},
               {"reference_gain", l.channel.reference_gain},
               {"range_ratio", l.thresholds.range_ratio},
               {"doppler_ratio", l.thresholds.doppler_ratio},
               {"eigen_ratio", l.thresholds.eigen_ratio}};
  j["coverage"] = {{"psi_h", {c.coverage.h.lo, c.coverage.h.hi}}, {"psi_v", {c.coverage.v.lo, c.coverage.v.hi}}};
  const char* fb[] = {"table", "log_k", "exact_complement"};
  j["fallback_cost"] = fb[int(c.fallback)];
  j["v2eda"] = {{"feature", c.v2eda.feature},
                {"res_blocks", c.v2eda.res_blocks},
                {"channels", c.v2eda.channels},
                {"tokens", c.v2eda.tokens}};
  j["mmfe"] = {{"history", c.mmfe.history}, {"dim", c.mmfe.dim},         {"layers", c.mmfe.layers},
               {"heads", c.mmfe.heads},     {"ff", c.mmfe.ff},           {"now_dim", c.mmfe.now_dim},
               {"hidden", c.mmfe.hidden}};
  j["training"] = {{"epochs", c.train.epochs}, {"lr", c.train.lr}, {"batch", c.train.batch}};
  j["vision_trajectories"] = c.vision_trajectories;
  j["vision_stride"] = c.vision_stride;
  j["track_trajectories"] = c.track_trajectories;
  j["train_fraction"] = c.train_fraction;
  j["steer_trials"] = c.steer_trials;
  j["vsi_source"] = c.vsi_source;
  j["oracle"] = c.oracle;
  j["workers"] = c.workers;
  return j;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const ExperimentConfig& cfg) {
  // output locations do not change results
  json j = config_to_json(cfg);
  j.erase("out_dir");
  j.erase("checkpoint_dir");
  j.erase("workers");
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

void parallel_for(int n, int workers, const std::function<void(int)>& f) {
  if (workers <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr err;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (int w = 0; w < std::min(workers, n); ++w)
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          f(i);
        } catch (...) {
          std::lock_guard<std::mutex> lk(mu);
          if (!err) err = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

// ---------------------------------------------------------------- data

std::uint64_t trajectory_seed(const ExperimentConfig& cfg, int index) {
  return derive_seed(cfg.seed, 1000000ULL + std::uint64_t(index));
}

int train_trajectory_count(const ExperimentConfig& cfg) {
  return std::clamp(int(std::floor(cfg.train_fraction * cfg.track_trajectories)), 1, cfg.track_trajectories - 1);
}

namespace {
std::vector<VsiRecord> vision_records(const ExperimentConfig& cfg, const Trajectory& tr,
                                      const std::vector<CameraObservation>& cam, const V2eda* vision) {
  std::vector<VsiRecord> out(cam.size());
  std::vector<VisionSample> batch;
  std::vector<std::size_t> where;
  for (std::size_t k = 0; k < cam.size(); ++k) {
    out[k].t = double(k) * tr.dt;
    if (!cam[k].visible) continue;
    if (cfg.vsi_source == "truth" || !vision) {
      out[k] = {tr.states[k].theta, tr.states[k].phi, true, out[k].t};
    } else {
      batch.push_back({cam[k].box, cam[k].patch, 0, 0});
      where.push_back(k);
    }
  }
  if (!batch.empty()) {
    const auto p = vision->predict(batch);
    for (std::size_t i = 0; i < where.size(); ++i) {
      out[where[i]] = p[i];
      out[where[i]].t = double(where[i]) * tr.dt;
    }
  }
  return out;
}
}  // namespace

Episode make_episode(const ExperimentConfig& cfg, int index, const V2eda* vision) {
  Episode ep;
  ep.seed = trajectory_seed(cfg, index);
  const Profile p = cfg.profiles[std::size_t(index) % cfg.profiles.size()];
  ep.trajectory = generate_trajectory(ep.seed, p, cfg.trajectory);
  Rng rng(derive_seed(ep.seed, 1));
  for (const auto& s : ep.trajectory.states) ep.camera.push_back(project_to_camera(s, cfg.camera, rng));
  ep.vsi = vision_records(cfg, ep.trajectory, ep.camera, vision);
  return ep;
}

std::vector<VisionSample> vision_dataset(const ExperimentConfig& cfg, bool train_split) {
  const int n_train = std::max(1, int(std::floor(cfg.train_fraction * cfg.vision_trajectories)));
  const int lo = train_split ? 0 : n_train, hi = train_split ? n_train : cfg.vision_trajectories;
  std::vector<std::vector<VisionSample>> parts(static_cast<std::size_t>(hi - lo));
  parallel_for(hi - lo, cfg.workers, [&](int i) {
    const int idx = lo + i;
    const std::uint64_t seed = derive_seed(cfg.seed, 2000000ULL + std::uint64_t(idx));
    const Profile p = cfg.profiles[std::size_t(idx) % cfg.profiles.size()];
    const auto tr = generate_trajectory(seed, p, cfg.trajectory);
    Rng rng(derive_seed(seed, 1));
    // phase offset so strided frames do not all start at t = 0
    const int first = int(derive_seed(seed, 2) % std::uint64_t(cfg.vision_stride));
    for (int k = first; k < int(tr.states.size()); k += cfg.vision_stride) {
      const auto& st = tr.states[std::size_t(k)];
      const auto ob = project_to_camera(st, cfg.camera, rng);
      if (ob.visible) parts[std::size_t(i)].push_back({ob.box, ob.patch, st.theta, st.phi});
    }
  });
  std::vector<VisionSample> out;
  for (auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

EsiRecord measure_esi(const ExperimentConfig& cfg, const UavState& truth, int s, double snr_db,
                      std::uint64_t seed, double t) {
  const ArrayGeometry tx = level_geometry(s, cfg.link.rx.boresight_azimuth);
  const Codebook<double> cb(tx, s, cfg.coverage);
  const Wavenumber w = to_wavenumber(tx, truth.theta, truth.phi);
  const double gain = beam_gain(tx, w, cb.center(nearest_beam(cb, w)));
  ChannelParams ch = cfg.link.channel;
  ch.snr_db = snr_db;
  const auto obs = synthesize_range_observation<double>(truth, {gain, 0.0}, tx.size(), cfg.link.rx, ch,
                                                        cfg.link.waveform, seed);
  AngleGrid grid;
  grid.theta_lo = cfg.camera.bounds.theta_min;
  grid.theta_hi = cfg.camera.bounds.theta_max;
  grid.phi_lo = cfg.camera.bounds.phi_min;
  grid.phi_hi = cfg.camera.bounds.phi_max;
  return estimate_esi(obs, cfg.link.rx, t, grid, cfg.link.thresholds);
}

namespace {
std::uint64_t stream_seed(const Episode& ep, int s, double snr) {
  return derive_seed(derive_seed(ep.seed, 10 + std::uint64_t(s)), fnv1a64(snr_tag(snr)));
}

std::vector<SensingSlot> clean_stream(const ExperimentConfig& cfg, const Episode& ep, int s, double snr) {
  const std::uint64_t base = stream_seed(ep, s, snr);
  std::vector<SensingSlot> out(ep.trajectory.states.size());
  for (std::size_t k = 0; k < out.size(); ++k) {
    auto& sl = out[k];
    sl.t = double(k) * ep.trajectory.dt;
    sl.truth = ep.trajectory.states[k];
    sl.camera = ep.camera[k];
    sl.vsi = ep.vsi[k];
    sl.echo_time = sl.t;
    sl.esi = measure_esi(cfg, sl.truth, s, snr, derive_seed(base, k), sl.t);
  }
  return out;
}

std::vector<SensingSlot> impair(const ExperimentConfig& cfg, const Episode& ep, int s, const ChannelCase& cc,
                                std::vector<SensingSlot> clean) {
  PlanSpec spec;
  spec.snr_db = cc.snr_db;
  spec.echo_loss = cc.loss;
  spec.vision_loss = cc.loss;
  spec.offset = cc.offset;
  spec.max_offset = 0.5 * cfg.trajectory.dt;
  const std::uint64_t base = stream_seed(ep, s, cc.snr_db);
  const auto plan = make_plan(clean.size(), spec, derive_seed(base, fnv1a64(cc.name())));
  return apply_impairments(std::move(clean), plan, [&](std::size_t k, double te) {
    return measure_esi(cfg, state_at(ep.trajectory, te), s, cc.snr_db, derive_seed(base, 1000000 + k), te);
  });
}
}  // namespace

std::vector<SensingSlot> sensing_stream(const ExperimentConfig& cfg, const Episode& ep, int s,
                                        const ChannelCase& cc) {
  return impair(cfg, ep, s, cc, clean_stream(cfg, ep, s, cc.snr_db));
}

namespace {
struct Window {
  TrackSample sample;
  bool echo_only = false;
  std::size_t slot = 0;
};

std::vector<Window> windows(const std::vector<SensingSlot>& stream, int P, bool echo_only) {
  std::vector<Window> out;
  std::optional<EsiRecord> before;  // latest valid ESI older than the window
  for (std::size_t t = std::size_t(P); t < stream.size(); ++t) {
    const std::size_t lo = t - std::size_t(P);
    if (lo > 0 && stream[lo - 1].esi.valid) before = stream[lo - 1].esi;
    std::vector<HistorySlot> w;
    for (std::size_t k = lo; k < t; ++k) {
      HistorySlot h{stream[k].vsi, stream[k].esi};
      if (echo_only) h.vsi.valid = false;
      w.push_back(h);
    }
    VsiRecord now = stream[t].vsi;
    if (echo_only) now.valid = false;
    Window win;
    win.slot = t;
    try {
      auto in = select_inputs(w, now, before);
      win.echo_only = in.provenance.echo_only;
      win.sample.history = win.echo_only ? echo_as_vision(in.history) : in.history;
      win.sample.now = in.now;
    } catch (const NoDataAvailable&) {
      continue;
    }
    win.sample.theta = stream[t].truth.theta;
    win.sample.phi = stream[t].truth.phi;
    out.push_back(std::move(win));
  }
  return out;
}
}  // namespace

std::vector<TrackSample> track_windows(const std::vector<SensingSlot>& stream, int P, bool echo_only) {
  std::vector<TrackSample> out;
  for (auto& w : windows(stream, P, echo_only))
    if (w.echo_only == echo_only) out.push_back(std::move(w.sample));
  return out;
}

// ---------------------------------------------------------------- models

Models fresh_models(const ExperimentConfig& cfg) {
  Models m;
  const AngleBounds& bd = cfg.camera.bounds;
  m.v2eda = std::make_unique<V2eda>(cfg.v2eda, bd, derive_seed(cfg.seed, 11));
  MmfeConfig full = cfg.mmfe;
  full.use_current = true;
  m.mmfe = std::make_unique<Mmfe>(full, bd, derive_seed(cfg.seed, 12));
  m.echo_only = std::make_unique<Mmfe>(echo_only_config(cfg.mmfe), bd, derive_seed(cfg.seed, 13));
  return m;
}

void save_models(const Models& m, const std::string& dir) {
  fs::create_directories(dir);
  nn::save_checkpoint(m.v2eda->params(), dir + "/v2eda.ckpt");
  nn::save_checkpoint(m.mmfe->params(), dir + "/mmfe.ckpt");
  nn::save_checkpoint(m.echo_only->params(), dir + "/echo_only.ckpt");
  json k = {{"q_angle", m.kf.q_angle}, {"q_rate", m.kf.q_rate}, {"r_theta", m.kf.r_theta}, {"r_phi", m.kf.r_phi}};
  auto os = open_out(dir + "/kf.json");
  os << k.dump(2) << "\n";
}

Models load_models(const ExperimentConfig& cfg, const std::string& dir) {
  Models m = fresh_models(cfg);
  auto need = [&](const std::string& f) {
    if (!fs::exists(dir + "/" + f)) throw ConfigError("missing checkpoint " + dir + "/" + f + " (run train first)");
    return dir + "/" + f;
  };
  nn::load_checkpoint(m.v2eda->params(), need("v2eda.ckpt"));
  nn::load_checkpoint(m.mmfe->params(), need("mmfe.ckpt"));
  nn::load_checkpoint(m.echo_only->params(), need("echo_only.ckpt"));
  std::ifstream is(need("kf.json"));
  json k;
  try {
    is >> k;
    m.kf.q_angle = k.at("q_angle");
    m.kf.q_rate = k.at("q_rate");
    m.kf.r_theta = k.at("r_theta");
    m.kf.r_phi = k.at("r_phi");
  } catch (const json::exception& e) {
    throw FormatError(std::string("kf.json: ") + e.what());
  }
  return m;
}

TrainingResult run_training(const ExperimentConfig& cfg, const Progress& log) {
  cfg.validate();
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };
  TrainingResult res;
  res.models = fresh_models(cfg);
  auto& M = res.models;

  const auto vtrain = vision_dataset(cfg, true), vtest = vision_dataset(cfg, false);
  say("v2eda: " + std::to_string(vtrain.size()) + " train / " + std::to_string(vtest.size()) + " test frames");
  TrainConfig tc = cfg.train;
  tc.seed = derive_seed(cfg.seed, 21);
  res.v2eda = train_v2eda(*M.v2eda, vtrain, tc, [&](int e, double l) {
    if ((e + 1) % 10 == 0) say("v2eda epoch " + std::to_string(e + 1) + " loss " + fmt(l));
  });
  {
    const auto p = M.v2eda->predict(vtest);
    double acc = 0;
    for (std::size_t i = 0; i < vtest.size(); ++i)
      acc += std::pow(p[i].theta_v - vtest[i].theta, 2) + std::pow(p[i].phi_v - vtest[i].phi, 2);
    res.v2eda_test_rmse = std::sqrt(acc / double(std::max<std::size_t>(1, vtest.size())));
    say("v2eda held-out rmse " + fmt(res.v2eda_test_rmse / kDeg) + " deg");
  }

  // tracking data from the training trajectories, one (s, snr, loss) draw per trajectory
  const int n_train = train_trajectory_count(cfg);
  std::vector<std::vector<SensingSlot>> streams(static_cast<std::size_t>(n_train));
  std::vector<double> stream_snr(static_cast<std::size_t>(n_train));
  parallel_for(n_train, cfg.workers, [&](int i) {
    const Episode ep = make_episode(cfg, i, M.v2eda.get());
    Rng pick(derive_seed(ep.seed, 3));
    const int s = cfg.levels[std::size_t(pick.uniform_int(0, int(cfg.levels.size()) - 1))];
    ChannelCase cc;
    cc.snr_db = cfg.snr_db[std::size_t(pick.uniform_int(0, int(cfg.snr_db.size()) - 1))];
    cc.loss = cfg.loss_presets[std::size_t(pick.uniform_int(0, int(cfg.loss_presets.size()) - 1))];
    streams[std::size_t(i)] = sensing_stream(cfg, ep, s, cc);
    stream_snr[std::size_t(i)] = cc.snr_db;
  });

  // filter noise from the ESI error at the calibration SNR
  const double cal_snr = std::count(cfg.snr_db.begin(), cfg.snr_db.end(), 0.0) ? 0.0 : cfg.snr_db.front();
  std::vector<EsiRecord> es;
  std::vector<std::pair<double, double>> truth;
  for (std::size_t i = 0; i < streams.size(); ++i) {
    if (stream_snr[i] != cal_snr) continue;
    for (const auto& sl : streams[i]) {
      es.push_back(sl.esi);
      truth.push_back({sl.truth.theta, sl.truth.phi});
    }
  }
  M.kf = calibrate_kf(es, truth);
  say("kf R = (" + fmt(M.kf.r_theta) + ", " + fmt(M.kf.r_phi) + ") rad^2");

  std::vector<TrackSample> full, echo;
  for (const auto& st : streams) {
    for (auto& w : windows(st, cfg.mmfe.history, false))
      if (!w.echo_only) full.push_back(std::move(w.sample));
    for (auto& w : windows(st, cfg.mmfe.history, true)) echo.push_back(std::move(w.sample));
  }
  say("mmfe: " + std::to_string(full.size()) + " windows, echo-only: " + std::to_string(echo.size()));
  tc.seed = derive_seed(cfg.seed, 22);
  res.mmfe = train_mmfe(*M.mmfe, full, tc, [&](int e, double l) {
    if ((e + 1) % 10 == 0) say("mmfe epoch " + std::to_string(e + 1) + " loss " + fmt(l));
  });
  tc.seed = derive_seed(cfg.seed, 23);
  res.echo_only = train_mmfe(*M.echo_only, echo, tc, [&](int e, double l) {
    if ((e + 1) % 10 == 0) say("echo-only epoch " + std::to_string(e + 1) + " loss " + fmt(l));
  });
  return res;
}

// ---------------------------------------------------------------- task B

namespace {
DetectionOracle make_oracle(const ExperimentConfig& cfg, int s, const UavState& truth, double snr) {
  const ArrayGeometry tx = level_geometry(s, cfg.link.rx.boresight_azimuth);
  if (cfg.oracle == "geometric") return geometric_oracle(cfg.coverage, to_wavenumber(tx, truth.theta, truth.phi));
  EchoLink link = cfg.link;
  link.channel.snr_db = snr;
  return echo_oracle(cfg.coverage, s, truth, link);
}

BeamIndex center_beam(const ExperimentConfig& cfg, int s, double theta, double phi) {
  const ArrayGeometry tx = level_geometry(s, cfg.link.rx.boresight_azimuth);
  const Codebook<double> cb(ArrayGeometry{1, 1}, s, cfg.coverage);
  return nearest_beam(cb, to_wavenumber(tx, theta, phi));
}

ScanTrace steer_once(const ExperimentConfig& cfg, int s, const UavState& truth, double snr, double theta,
                     double phi) {
  const ArrayGeometry tx = level_geometry(s, cfg.link.rx.boresight_azimuth);
  const auto sets = candidate_sets(center_beam(cfg, s, theta, phi));
  return scan(make_oracle(cfg, s, truth, snr), sets,
              geometric_oracle(cfg.coverage, to_wavenumber(tx, truth.theta, truth.phi)));
}
}  // namespace

SteerReport run_task_b(const ExperimentConfig& cfg, const V2eda* vision) {
  cfg.validate();
  if (cfg.vsi_source == "v2eda" && !vision) throw PreconditionViolation("task B needs a V2EDA model");
  SteerReport rep;
  const double snr = cfg.snr_db.front();
  const auto& env = cfg.trajectory.envelope;
  for (int s : cfg.levels) {
    // targets uniform over the sector and range envelope, seen by the camera
    std::vector<UavState> targets;
    std::vector<VisionSample> views;
    std::vector<std::uint64_t> seeds;
    for (int i = 0; int(targets.size()) < cfg.steer_trials; ++i) {
      const std::uint64_t seed = derive_seed(derive_seed(cfg.seed, 3000 + std::uint64_t(s)), std::uint64_t(i));
      Rng rng(seed);
      const double m = env.margin;
      UavState st{rng.uniform(env.sector.theta_min + m, env.sector.theta_max - m),
                  rng.uniform(env.sector.phi_min + m, env.sector.phi_max - m), rng.uniform(env.d_min, env.d_max)};
      const auto ob = project_to_camera(st, cfg.camera, rng);
      if (!ob.visible) continue;
      targets.push_back(st);
      views.push_back({ob.box, ob.patch, st.theta, st.phi});
      seeds.push_back(seed);
    }
    std::vector<VsiRecord> vsi;
    if (cfg.vsi_source == "truth")
      for (const auto& t : targets) vsi.push_back({t.theta, t.phi, true, 0});
    else
      vsi = vision->predict(views);

    SteerRow row{"v2eda", s, cfg.steer_trials, {}, 0, 0, 0, 0};
    if (cfg.vsi_source == "truth") row.method = "truth_vsi";
    SteerRow base{"hierarchical", s, cfg.steer_trials, {}, 0, 0, 0, 0};
    std::vector<double> scans(targets.size()), hscans(targets.size());
    std::array<double, 5> q_sum{};
    const ArrayGeometry tx = level_geometry(s, cfg.link.rx.boresight_azimuth);
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const auto tr = steer_once(cfg, s, targets[i], snr, vsi[i].theta_v, vsi[i].phi_v);
      scans[i] = tr.scans_used;
      row.p[std::size_t(tr.set_hit - 1)] += 1.0;
      const auto sets = candidate_sets(center_beam(cfg, s, vsi[i].theta_v, vsi[i].phi_v));
      const auto model = overhead_model(sets, cfg.fallback);
      for (int k = 0; k < 5; ++k) {
        std::array<double, 5> e{};
        e[std::size_t(k)] = 1.0;
        q_sum[std::size_t(k)] += expected_overhead(e, model);
      }
      rep.traces.push_back({seeds[i], s, sets.center, tr.set_hit, tr.scans_used, tr.fell_back});
      hscans[i] = hierarchical_scan(
                      geometric_oracle(cfg.coverage, to_wavenumber(tx, targets[i].theta, targets[i].phi)), s)
                      .scans_used;
    }
    const double n = double(targets.size());
    for (int k = 0; k < 5; ++k) {
      row.p[std::size_t(k)] /= n;
      row.analytic += row.p[std::size_t(k)] * q_sum[std::size_t(k)] / n;
    }
    std::tie(row.mean_scans, row.ci95) = mean_ci95(scans);
    row.t_comm_ms = comm_budget(row.mean_scans).t_comm_ms;
    std::tie(base.mean_scans, base.ci95) = mean_ci95(hscans);
    base.p = {0, 0, 0, 0, 1};
    base.analytic = 2.5 * s;
    base.t_comm_ms = comm_budget(base.mean_scans).t_comm_ms;
    rep.rows.push_back(row);
    rep.rows.push_back(base);
  }
  return rep;
}

void write_steer_csv(std::ostream& os, const std::vector<SteerRow>& rows) {
  os << "method,s,trials,p1,p2,p3,p4,p_end,mean_scans,ci95,analytic,t_comm_ms\n";
  for (const auto& r : rows) {
    os << r.method << ',' << r.s << ',' << r.trials;
    for (double p : r.p) os << ',' << fmt(p);
    os << ',' << fmt(r.mean_scans) << ',' << fmt(r.ci95) << ',' << fmt(r.analytic) << ',' << fmt(r.t_comm_ms)
       << '\n';
  }
}

// ---------------------------------------------------------------- task C

namespace {
struct Tally {
  std::vector<AngleSample> angles;
  std::vector<double> scans;
};

// Predictions for every slot >= P of one stream, per method.
std::map<std::string, std::vector<std::pair<double, double>>> predict_stream(
    const ExperimentConfig& cfg, const Models& M, const std::vector<SensingSlot>& st) {
  const int P = cfg.mmfe.history;
  const std::size_t n = st.size();
  const AngleBounds& bd = cfg.camera.bounds;
  const std::pair<double, double> mid{0.5 * (bd.theta_min + bd.theta_max), 0.5 * (bd.phi_min + bd.phi_max)};
  std::map<std::string, std::vector<std::pair<double, double>>> out;
  auto want = [&](const std::string& m) {
    return std::find(cfg.estimators.begin(), cfg.estimators.end(), m) != cfg.estimators.end();
  };

  // last valid ESI before slot t, the fallback when a learned path has no input
  std::vector<std::optional<std::pair<double, double>>> last_esi(n);
  for (std::size_t t = 1; t < n; ++t) {
    last_esi[t] = last_esi[t - 1];
    if (st[t - 1].esi.valid) last_esi[t] = std::make_pair(st[t - 1].esi.theta_e, st[t - 1].esi.phi_e);
  }
  auto hold = [&](std::size_t t) { return last_esi[t] ? *last_esi[t] : mid; };

  auto run_learned = [&](bool echo_only) {
    std::vector<std::pair<double, double>> pred(n - std::size_t(P));
    for (std::size_t t = std::size_t(P); t < n; ++t) pred[t - std::size_t(P)] = hold(t);
    const auto wins = windows(st, P, echo_only);
    std::vector<TrackSample> a, b;
    std::vector<std::size_t> ia, ib;
    for (const auto& w : wins) {
      if (w.echo_only) {
        b.push_back(w.sample);
        ib.push_back(w.slot);
      } else {
        a.push_back(w.sample);
        ia.push_back(w.slot);
      }
    }
    if (!a.empty()) {
      const auto p = M.mmfe->predict(a);
      for (std::size_t i = 0; i < p.size(); ++i) pred[ia[i] - std::size_t(P)] = {p[i].theta_f, p[i].phi_f};
    }
    if (!b.empty()) {
      const auto p = M.echo_only->predict(b);
      for (std::size_t i = 0; i < p.size(); ++i) pred[ib[i] - std::size_t(P)] = {p[i].theta_f, p[i].phi_f};
    }
    return pred;
  };
  if (want("mmfe")) out["mmfe"] = run_learned(false);
  if (want("echo_only")) out["echo_only"] = run_learned(true);
  if (want("kf")) {
    AngleKf kf(M.kf);
    std::optional<EsiRecord> first;
    std::vector<std::pair<double, double>> pred;
    for (std::size_t t = 0; t < n; ++t) {
      std::pair<double, double> p = hold(t);
      if (kf.initialized()) p = kf.predict(cfg.trajectory.dt);
      if (t >= std::size_t(P)) pred.push_back(p);
      const auto& e = st[t].esi;
      if (kf.initialized()) {
        kf.update(e);
      } else if (e.valid) {
        if (first)
          kf.init(*first, e);
        else
          first = e;
      }
    }
    out["kf"] = pred;
  }
  if (want("vision_only")) {
    std::vector<std::pair<double, double>> pred;
    std::optional<std::pair<double, double>> last;
    for (std::size_t t = 0; t < n; ++t) {
      if (st[t].vsi.valid) last = std::make_pair(st[t].vsi.theta_v, st[t].vsi.phi_v);
      if (t >= std::size_t(P)) pred.push_back(last ? *last : hold(t));
    }
    out["vision_only"] = pred;
  }
  return out;
}
}  // namespace

TrackReport run_task_c(const ExperimentConfig& cfg, const Models& models, const Progress& log) {
  cfg.validate();
  const int n_train = train_trajectory_count(cfg);
  const int n_test = cfg.track_trajectories - n_train;
  const auto cases = cfg.cases();
  const int P = cfg.mmfe.history;
  // per test episode: (case, s, method) -> tally
  using Key = std::tuple<std::size_t, int, std::string>;
  std::vector<std::map<Key, Tally>> per(static_cast<std::size_t>(n_test));
  parallel_for(n_test, cfg.workers, [&](int i) {
    const Episode ep = make_episode(cfg, n_train + i, models.v2eda.get());
    auto& acc = per[std::size_t(i)];
    for (int s : cfg.levels) {
      std::map<double, std::vector<SensingSlot>> clean;
      for (std::size_t c = 0; c < cases.size(); ++c) {
        const auto& cc = cases[c];
        if (!clean.count(cc.snr_db)) clean[cc.snr_db] = clean_stream(cfg, ep, s, cc.snr_db);
        const auto st = impair(cfg, ep, s, cc, clean[cc.snr_db]);
        for (const auto& [method, pred] : predict_stream(cfg, models, st)) {
          auto& t = acc[{c, s, method}];
          for (std::size_t k = 0; k < pred.size(); ++k) {
            const auto& truth = st[k + std::size_t(P)].truth;
            const auto tr = steer_once(cfg, s, truth, cc.snr_db, pred[k].first, pred[k].second);
            t.angles.push_back({pred[k].first, pred[k].second, truth.theta, truth.phi});
            t.scans.push_back(tr.scans_used);
          }
        }
      }
    }
    if (log) log("track: episode " + std::to_string(i + 1) + "/" + std::to_string(n_test));
  });

  TrackReport rep;
  for (std::size_t c = 0; c < cases.size(); ++c)
    for (int s : cfg.levels)
      for (const auto& m : cfg.estimators) {
        Tally all;
        for (const auto& e : per) {
          const auto it = e.find({c, s, m});
          if (it == e.end()) continue;
          all.angles.insert(all.angles.end(), it->second.angles.begin(), it->second.angles.end());
          all.scans.insert(all.scans.end(), it->second.scans.begin(), it->second.scans.end());
        }
        if (all.angles.empty()) continue;
        rep.rows.push_back(compute_metrics(m, cases[c].name(), s, all.angles, all.scans));
        rep.cpf.push_back(cpf_samples(all.angles));
      }
  return rep;
}

// ---------------------------------------------------------------- verbs

void write_manifest(const RunManifest& m, const std::string& path) {
  json j;
  j["verb"] = m.verb;
  j["config_hash"] = m.config_hash;
  j["seed"] = m.seed;
  j["artifacts"] = m.artifacts;
  j["wall_seconds"] = m.wall_seconds;
  auto os = open_out(path);
  os << j.dump(2) << "\n";
}

namespace {
void write_loss_csv(const std::string& path, const TrainReport& r) {
  auto os = open_out(path);
  os << "epoch,loss\n";
  for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) os << e + 1 << ',' << fmt(r.epoch_loss[e]) << '\n';
}
}  // namespace

RunManifest run_verb(const std::string& verb, const ExperimentConfig& cfg, const Progress& log) {
  cfg.validate();
  RunManifest man;
  man.verb = verb;
  man.config_hash = config_hash(cfg);
  man.seed = cfg.seed;
  const std::string out = cfg.out_dir;
  fs::create_directories(out);
  auto clock = std::chrono::steady_clock::now();
  auto stage = [&](const std::string& name) {
    const auto now = std::chrono::steady_clock::now();
    man.wall_seconds[name] = std::chrono::duration<double>(now - clock).count();
    clock = now;
  };
  auto artifact = [&](const std::string& key, const std::string& file) {
    man.artifacts[key] = out + "/" + file;
    return out + "/" + file;
  };

  if (verb == "train") {
    const auto r = run_training(cfg, log);
    stage("training");
    save_models(r.models, cfg.checkpoints());
    man.artifacts["v2eda_checkpoint"] = cfg.checkpoints() + "/v2eda.ckpt";
    man.artifacts["mmfe_checkpoint"] = cfg.checkpoints() + "/mmfe.ckpt";
    man.artifacts["echo_only_checkpoint"] = cfg.checkpoints() + "/echo_only.ckpt";
    man.artifacts["kf"] = cfg.checkpoints() + "/kf.json";
    write_loss_csv(artifact("v2eda_loss", "v2eda_loss.csv"), r.v2eda);
    write_loss_csv(artifact("mmfe_loss", "mmfe_loss.csv"), r.mmfe);
    write_loss_csv(artifact("echo_only_loss", "echo_only_loss.csv"), r.echo_only);
    {
      auto os = open_out(artifact("training_summary", "training_summary.csv"));
      os << "model,parameters,final_loss,test_rmse_deg\n";
      os << "v2eda," << r.models.v2eda->params().scalar_count() << ','
         << fmt(r.v2eda.epoch_loss.empty() ? 0.0 : r.v2eda.epoch_loss.back()) << ','
         << fmt(r.v2eda_test_rmse / kDeg) << '\n';
      os << "mmfe," << r.models.mmfe->params().scalar_count() << ','
         << fmt(r.mmfe.epoch_loss.empty() ? 0.0 : r.mmfe.epoch_loss.back()) << ",\n";
      os << "echo_only," << r.models.echo_only->params().scalar_count() << ','
         << fmt(r.echo_only.epoch_loss.empty() ? 0.0 : r.echo_only.epoch_loss.back()) << ",\n";
    }
    stage("write");
  } else if (verb == "steer") {
    std::unique_ptr<V2eda> v;
    if (cfg.vsi_source == "v2eda") {
      v = std::make_unique<V2eda>(cfg.v2eda, cfg.camera.bounds, 0);
      const std::string ck = cfg.checkpoints() + "/v2eda.ckpt";
      if (!fs::exists(ck)) throw ConfigError("missing checkpoint " + ck + " (run train first)");
      nn::load_checkpoint(v->params(), ck);
    }
    const auto r = run_task_b(cfg, v.get());
    stage("task_b");
    {
      auto os = open_out(artifact("steer", "steer.csv"));
      write_steer_csv(os, r.rows);
    }
    {
      auto os = open_out(artifact("steer_traces", "steer_traces.jsonl"));
      for (const auto& t : r.traces) write_trace_jsonl(os, t);
    }
    stage("write");
  } else if (verb == "track") {
    const Models m = load_models(cfg, cfg.checkpoints());
    const auto r = run_task_c(cfg, m, log);
    stage("task_c");
    {
      auto os = open_out(artifact("track_metrics", "track_metrics.csv"));
      write_metrics_csv_header(os);
      for (const auto& row : r.rows) write_metrics_csv_row(os, row);
    }
    {
      auto os = open_out(artifact("track_cpf", "track_cpf.csv"));
      os << "method,case,s,error_rad,cpf\n";
      for (std::size_t i = 0; i < r.rows.size(); ++i)
        write_cpf_csv(os, r.rows[i].method, r.rows[i].case_name, r.rows[i].s, r.cpf[i]);
    }
    stage("write");
  } else if (verb == "coherence") {
    auto os = open_out(artifact("coherence", "coherence.csv"));
    os << "s,d_m,v_perp_mps,coherence_ms,half_beam_rad\n";
    for (int s : cfg.levels)
      for (double d : {50.0, 100.0, 200.0, 400.0})
        for (double v : {0.0, 5.0, 10.0, 20.0, 30.0}) {
          const double c = coherence_time(s, d, v);
          os << s << ',' << fmt(d) << ',' << fmt(v) << ',' << (is_infinite_coherence(c) ? "inf" : fmt(c * 1e3))
             << ',' << fmt(1.0 / double(1 << (s + 1))) << '\n';
        }
    stage("coherence");
  } else if (verb == "budget") {
    auto os = open_out(artifact("budget", "budget.csv"));
    os << "label,scans,sensing_symbols,t_sens_ms,t_comm_ms,budget_exceeded\n";
    auto row = [&](const std::string& label, double scans) {
      const auto b = comm_budget(scans);
      os << label << ',' << fmt(scans) << ',' << fmt(b.sensing_symbols) << ',' << fmt(b.t_sens_ms) << ','
         << fmt(b.t_comm_ms) << ',' << (b.budget_exceeded ? "true" : "false") << '\n';
    };
    for (int s : cfg.levels) row("hierarchical_s" + std::to_string(s), 2.5 * s);
    for (int k = 0; k <= 40; ++k) row("sweep", 0.5 * k);
    // steering results from a previous run, when present
    const std::string steer = out + "/steer.csv";
    if (fs::exists(steer)) {
      std::ifstream is(steer);
      std::string line;
      std::getline(is, line);
      while (std::getline(is, line)) {
        std::stringstream ss(line);
        std::string method, s, trials, cell;
        std::getline(ss, method, ',');
        std::getline(ss, s, ',');
        std::getline(ss, trials, ',');
        for (int k = 0; k < 5; ++k) std::getline(ss, cell, ',');
        std::getline(ss, cell, ',');
        row(method + "_s" + s, std::stod(cell));
      }
    }
    stage("budget");
  } else if (verb == "export-codebook") {
    for (int s : cfg.levels) {
      const Codebook<double> cb(level_geometry(s, cfg.link.rx.boresight_azimuth), s, cfg.coverage);
      auto os = open_out(artifact("codebook_s" + std::to_string(s), "codebook_s" + std::to_string(s) + ".csv"));
      write_codebook_csv(os, cb);
    }
    stage("export");
  } else {
    throw ConfigError("unknown verb '" + verb + "'");
  }
  write_manifest(man, out + "/manifest_" + verb + ".json");
  return man;
}

}  // namespace ccisac
