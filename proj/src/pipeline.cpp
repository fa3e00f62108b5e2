#include "relrefine/pipeline.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <sstream>
#include <stdexcept>
#include <thread>

#include "relrefine/numkit/checkpoint.hpp"
#include "relrefine/scene_io.hpp"

namespace relrefine {

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    out.push_back(b == std::string::npos ? "" : item.substr(b, e - b + 1));
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw std::invalid_argument("config: " + key + " = '" + v + "' is not a number");
  return d;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  const double d = to_double(key, v);
  if (d < 0 || d != static_cast<double>(static_cast<std::uint64_t>(d))) {
    throw std::invalid_argument("config: " + key + " = '" + v + "' is not a non-negative integer");
  }
  return static_cast<std::uint64_t>(d);
}

struct Entry {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
std::string num(T v) {
  if constexpr (std::is_floating_point_v<T>) {
    return format_real(v);
  } else {
    return std::to_string(v);
  }
}

template <class Member>
Entry real_entry(std::string key, Member m) {
  return {key, [m, key](RunConfig& c, const std::string& v) { m(c) = to_double(key, v); },
          [m](const RunConfig& c) { return num(m(const_cast<RunConfig&>(c))); }};
}

template <class Member>
Entry uint_entry(std::string key, Member m) {
  return {key,
          [m, key](RunConfig& c, const std::string& v) {
            using T = std::remove_reference_t<decltype(m(c))>;
            m(c) = static_cast<T>(to_uint(key, v));
          },
          [m](const RunConfig& c) { return num(m(const_cast<RunConfig&>(c))); }};
}

template <class Member>
Entry list_entry(std::string key, Member m) {
  return {key,
          [m, key](RunConfig& c, const std::string& v) {
            auto& arr = m(c);
            const auto parts = split_list(v);
            if (parts.size() != arr.size()) {
              throw std::invalid_argument("config: " + key + " needs " + std::to_string(arr.size()) +
                                          " comma-separated values");
            }
            using T = std::decay_t<decltype(arr[0])>;
            for (std::size_t i = 0; i < arr.size(); ++i) {
              if constexpr (std::is_floating_point_v<T>) {
                arr[i] = to_double(key, parts[i]);
              } else {
                arr[i] = static_cast<T>(to_uint(key, parts[i]));
              }
            }
          },
          [m](const RunConfig& c) {
            const auto& arr = m(const_cast<RunConfig&>(c));
            std::string s;
            for (std::size_t i = 0; i < arr.size(); ++i) s += (i ? "," : "") + num(arr[i]);
            return s;
          }};
}

#define RR_FIELD(expr) [](RunConfig& c) -> auto& { return expr; }

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      uint_entry("run.seed", RR_FIELD(c.seed)),
      uint_entry("run.workers", RR_FIELD(c.workers)),
      uint_entry("run.train_sequences", RR_FIELD(c.train_sequences)),
      uint_entry("run.eval_sequences", RR_FIELD(c.eval_sequences)),
      uint_entry("scenario.frames", RR_FIELD(c.scenario.frames)),
      real_entry("scenario.rate_hz", RR_FIELD(c.scenario.rate_hz)),
      list_entry("scenario.object_counts", RR_FIELD(c.scenario.object_counts)),
      real_entry("scenario.extent", RR_FIELD(c.scenario.extent)),
      real_entry("scenario.stationary_fraction", RR_FIELD(c.scenario.stationary_fraction)),
      real_entry("scenario.ego_speed", RR_FIELD(c.scenario.ego_speed)),
      list_entry("noise.center_sigma", RR_FIELD(c.scenario.noise.center_sigma)),
      list_entry("noise.size_sigma", RR_FIELD(c.scenario.noise.size_sigma)),
      list_entry("noise.heading_sigma", RR_FIELD(c.scenario.noise.heading_sigma)),
      list_entry("noise.velocity_sigma", RR_FIELD(c.scenario.noise.velocity_sigma)),
      list_entry("noise.heading_flip_prob", RR_FIELD(c.scenario.noise.heading_flip_prob)),
      real_entry("noise.fn_rate", RR_FIELD(c.scenario.noise.fn_rate)),
      real_entry("noise.range_dropout", RR_FIELD(c.scenario.noise.range_dropout)),
      real_entry("noise.max_range", RR_FIELD(c.scenario.noise.max_range)),
      real_entry("noise.fp_per_frame", RR_FIELD(c.scenario.noise.fp_per_frame)),
      real_entry("noise.tp_score_mean", RR_FIELD(c.scenario.noise.tp_score_mean)),
      real_entry("noise.tp_score_sigma", RR_FIELD(c.scenario.noise.tp_score_sigma)),
      real_entry("noise.fp_score_mean", RR_FIELD(c.scenario.noise.fp_score_mean)),
      real_entry("noise.fp_score_sigma", RR_FIELD(c.scenario.noise.fp_score_sigma)),
      real_entry("noise.bev_signal_scale", RR_FIELD(c.scenario.noise.bev_signal_scale)),
      real_entry("noise.bev_noise_sigma", RR_FIELD(c.scenario.noise.bev_noise_sigma)),
      uint_entry("noise.feature_seed", RR_FIELD(c.scenario.noise.feature_seed)),
      uint_entry("intra.hidden", RR_FIELD(c.intra.hidden)),
      uint_entry("intra.iterations", RR_FIELD(c.intra.iterations)),
      real_entry("intra.radius", RR_FIELD(c.intra.radius)),
      real_entry("intra.lambda_reg", RR_FIELD(c.intra.lambda_reg)),
      real_entry("intra.lambda_dir", RR_FIELD(c.intra.lambda_dir)),
      real_entry("intra.focal_alpha", RR_FIELD(c.intra.focal_alpha)),
      real_entry("intra.focal_gamma", RR_FIELD(c.intra.focal_gamma)),
      list_entry("intra.assign_radius", RR_FIELD(c.intra.assign_radius)),
      uint_entry("intra.train_iterations", RR_FIELD(c.intra_train.iterations)),
      uint_entry("intra.batch", RR_FIELD(c.intra_train.batch)),
      real_entry("intra.lr", RR_FIELD(c.intra_train.optimizer.lr)),
      real_entry("intra.weight_decay", RR_FIELD(c.intra_train.optimizer.weight_decay)),
      uint_entry("inter.channels", RR_FIELD(c.inter.channels)),
      uint_entry("inter.heads", RR_FIELD(c.inter.heads)),
      uint_entry("inter.max_sequence", RR_FIELD(c.inter.max_sequence)),
      uint_entry("inter.train_iterations", RR_FIELD(c.inter_train.iterations)),
      uint_entry("inter.batch", RR_FIELD(c.inter_train.batch)),
      real_entry("inter.lr", RR_FIELD(c.inter_train.optimizer.lr)),
      real_entry("inter.weight_decay", RR_FIELD(c.inter_train.optimizer.weight_decay)),
      list_entry("tracker.match_radius", RR_FIELD(c.tracker.match_radius)),
      uint_entry("tracker.max_age", RR_FIELD(c.tracker.max_age)),
  };
  return table;
}

#undef RR_FIELD

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::string join_reals(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_real(v[i]);
  return s;
}

std::vector<double> parse_reals(const std::string& key, const std::string& s) {
  std::vector<double> out;
  for (const auto& part : split_list(s)) out.push_back(to_double(key, part));
  return out;
}

const std::string& meta_at(const nk::Checkpoint& c, const std::string& key) {
  auto it = c.meta.find(key);
  if (it == c.meta.end()) throw std::runtime_error("checkpoint lacks metadata '" + key + "'");
  return it->second;
}

}  // namespace

RunConfig parse_config(std::istream& is) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(is, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  std::map<std::string, const Entry*> index;
  for (const Entry& e : entries()) index[e.key] = &e;
  RunConfig cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw std::invalid_argument("config: key '" + section + "' outside a [section]");
    }
    for (const auto& [key, value] : body) {
      const std::string full = section + "." + key;
      auto it = index.find(full);
      if (it == index.end()) throw std::invalid_argument("config: unknown key '" + full + "'");
      it->second->set(cfg, value.data());
    }
  }
  cfg.scenario.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config '" + path + "'");
  return parse_config(is);
}

std::string config_to_ini(const RunConfig& cfg) {
  std::string out, section;
  for (const Entry& e : entries()) {
    const auto dot = e.key.find('.');
    const std::string sec = e.key.substr(0, dot);
    if (sec != section) {
      out += (section.empty() ? "" : "\n") + std::string("[") + sec + "]\n";
      section = sec;
    }
    out += e.key.substr(dot + 1) + " = " + e.get(cfg) + "\n";
  }
  return out;
}

std::uint64_t stage_seed(std::uint64_t run_seed, int stage, int which) {
  return splitmix(splitmix(run_seed) ^ (static_cast<std::uint64_t>(stage) << 32) ^
                  static_cast<std::uint64_t>(which));
}

ScenarioConfig split_scenario(const RunConfig& cfg, Split split) {
  ScenarioConfig s = cfg.scenario;
  s.seed = stage_seed(cfg.seed, 0, split == Split::Train ? 0 : 1);
  s.sequences = split == Split::Train ? cfg.train_sequences : cfg.eval_sequences;
  return s;
}

std::vector<Frame> simulate(const RunConfig& cfg, Split split) {
  return generate_dataset(split_scenario(cfg, split));
}

void save_intra(const std::string& path, const IntraParams& p) {
  const auto ps = p.parameters();
  std::map<std::string, std::string> meta{
      {"model", "intra"},
      {"basic_dim", std::to_string(p.cfg.basic_dim)},
      {"bev_dim", std::to_string(p.cfg.bev_dim)},
      {"hidden", std::to_string(p.cfg.hidden)},
      {"iterations", std::to_string(p.cfg.iterations)},
      {"radius", format_real(p.cfg.radius)},
      {"input_scale", join_reals(p.input_scale)},
  };
  nk::save_checkpoint(path, ps, meta);
}

IntraParams load_intra(const std::string& path) {
  const nk::Checkpoint c = nk::load_checkpoint(path);
  if (meta_at(c, "model") != "intra") throw std::runtime_error("'" + path + "' is not an IntraRM checkpoint");
  IntraConfig cfg;
  cfg.basic_dim = to_uint("basic_dim", meta_at(c, "basic_dim"));
  cfg.bev_dim = to_uint("bev_dim", meta_at(c, "bev_dim"));
  cfg.hidden = to_uint("hidden", meta_at(c, "hidden"));
  cfg.iterations = to_uint("iterations", meta_at(c, "iterations"));
  cfg.radius = to_double("radius", meta_at(c, "radius"));
  IntraParams p = IntraParams::init(cfg, 0);
  p.input_scale = parse_reals("input_scale", meta_at(c, "input_scale"));
  if (p.input_scale.size() != cfg.basic_dim + cfg.bev_dim) {
    throw std::runtime_error("checkpoint input_scale has the wrong length");
  }
  auto ps = p.parameters();
  nk::assign_parameters(c, ps);
  return p;
}

void save_inter(const std::string& path, const InterParams& p) {
  const auto ps = p.parameters();
  std::map<std::string, std::string> meta{
      {"model", "inter"},
      {"basic_dim", std::to_string(p.cfg.basic_dim)},
      {"channels", std::to_string(p.cfg.channels)},
      {"heads", std::to_string(p.cfg.heads)},
      {"max_sequence", std::to_string(p.cfg.max_sequence)},
      {"input_scale", join_reals(p.input_scale)},
  };
  nk::save_checkpoint(path, ps, meta);
}

InterParams load_inter(const std::string& path) {
  const nk::Checkpoint c = nk::load_checkpoint(path);
  if (meta_at(c, "model") != "inter") throw std::runtime_error("'" + path + "' is not an InterRM checkpoint");
  InterConfig cfg;
  cfg.basic_dim = to_uint("basic_dim", meta_at(c, "basic_dim"));
  cfg.channels = to_uint("channels", meta_at(c, "channels"));
  cfg.heads = to_uint("heads", meta_at(c, "heads"));
  cfg.max_sequence = to_uint("max_sequence", meta_at(c, "max_sequence"));
  InterParams p = InterParams::init(cfg, 0);
  p.input_scale = parse_reals("input_scale", meta_at(c, "input_scale"));
  if (p.input_scale.size() != cfg.basic_dim) {
    throw std::runtime_error("checkpoint input_scale has the wrong length");
  }
  auto ps = p.parameters();
  nk::assign_parameters(c, ps);
  return p;
}

IntraParams train_intra_stage(const RunConfig& cfg, const std::vector<Frame>& train,
                              std::vector<LossRecord>* log) {
  IntraParams p = IntraParams::init(cfg.intra, stage_seed(cfg.seed, 1, 0));
  TrainConfig tc = cfg.intra_train;
  tc.seed = stage_seed(cfg.seed, 1, 1);
  auto l = train_intra(p, train, tc);
  if (log) *log = std::move(l);
  return p;
}

InterParams train_inter_stage(const RunConfig& cfg, const std::vector<InterSample>& samples,
                              std::vector<LossRecord>* log) {
  InterParams p = InterParams::init(cfg.inter, stage_seed(cfg.seed, 2, 0));
  TrainConfig tc = cfg.inter_train;
  tc.seed = stage_seed(cfg.seed, 2, 1);
  auto l = train_inter(p, samples, tc);
  if (log) *log = std::move(l);
  return p;
}

std::vector<Frame> refine_intra_frames(const std::vector<Frame>& frames, IntraParams& p,
                                       std::size_t workers) {
  std::vector<Frame> out(frames.size());
  parallel_for(frames.size(), workers, [&](std::size_t i) {
    out[i] = frames[i];
    out[i].detections = run_intra(frames[i], p).detections;
  });
  return out;
}

std::vector<InterSample> make_inter_samples(const std::vector<TrackRecord>& records,
                                            const std::vector<Frame>& frames_with_gt,
                                            const InterParams& p,
                                            const std::array<double, kNumClasses>& assign_radius) {
  std::map<std::pair<int, int>, std::pair<const Frame*, std::vector<DetectionTarget>>> by_frame;
  for (const Frame& f : frames_with_gt) {
    if (!f.ground_truth) continue;
    by_frame[{f.sequence, f.index}] = {&f, assign_targets(f.detections, *f.ground_truth, assign_radius)};
  }
  std::map<std::pair<int, int>, std::vector<TrackEntry>> histories;
  std::vector<InterSample> samples;
  for (const TrackRecord& r : records) {
    auto& h = histories[{r.sequence, r.track_id}];
    h.push_back({r.frame, r.timestamp, r.ego, r.det});
    auto it = by_frame.find({r.sequence, r.frame});
    if (it == by_frame.end()) continue;
    const auto& [frame, targets] = it->second;
    if (r.det_index >= targets.size()) {
      throw std::runtime_error("track dump does not match the scene: sequence " +
                               std::to_string(r.sequence) + " frame " + std::to_string(r.frame));
    }
    const DetectionTarget& t = targets[r.det_index];
    if (!t.gt) continue;
    InterSample s;
    s.prepared = prepare_sequence(assemble_sequence(h, r.ego, p.cfg.max_sequence), p);
    s.target = inter_target(r.det.box, (*frame->ground_truth)[*t.gt].box);
    samples.push_back(std::move(s));
  }
  return samples;
}

std::vector<Frame> refine_inter_frames(const std::vector<Frame>& frames, InterParams& p,
                                       const TrackerConfig& tracker_cfg, std::size_t workers) {
  // Contiguous runs of one sequence each.
  std::vector<std::size_t> starts;
  for (std::size_t i = 0; i < frames.size(); ++i)
    if (i == 0 || frames[i].sequence != frames[i - 1].sequence) starts.push_back(i);
  starts.push_back(frames.size());
  std::vector<Frame> out(frames.size());
  parallel_for(starts.size() - 1, workers, [&](std::size_t s) {
    Tracker tracker(tracker_cfg);
    for (std::size_t i = starts[s]; i < starts[s + 1]; ++i) {
      const Frame& f = frames[i];
      out[i] = f;
      const auto ids = tracker.step(f);
      if (f.detections.empty()) continue;
      std::vector<nk::Tensor2D> seqs;
      seqs.reserve(ids.size());
      for (int id : ids) {
        seqs.push_back(prepare_sequence(
            assemble_sequence(tracker.track(id), f.ego, p.cfg.max_sequence), p));
      }
      const SequenceBatch batch = SequenceBatch::pack(seqs);
      nk::Tape t;
      const nk::Var o = inter_forward_batch(t, p, batch, false);
      const nk::Tensor2D& res = t.value(o);
      for (std::size_t d = 0; d < ids.size(); ++d) {
        out[i].detections[d] = apply_inter_refinement(f.detections[d], res.row(d));
      }
    }
  });
  return out;
}

void keep_heap_warm() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

std::string loss_log_csv(const std::vector<LossRecord>& log) {
  std::string s = "iteration,total,cls,reg,dir\n";
  for (const auto& r : log) {
    s += std::to_string(r.iteration) + "," + format_real(r.total) + "," + format_real(r.cls) + "," +
         format_real(r.reg) + "," + format_real(r.dir) + "\n";
  }
  return s;
}

PipelineResult run_pipeline(const RunConfig& cfg,
                            const std::function<void(const std::string&)>& progress,
                            const std::string& artifact_dir) {
  const auto t0 = std::chrono::steady_clock::now();
  auto say = [&](const std::string& m) {
    if (!progress) return;
    const double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    char buf[32];
    std::snprintf(buf, sizeof(buf), "[%7.1fs] ", el);
    progress(buf + m);
  };
  auto write_file = [&](const std::string& name, const std::string& text) {
    if (artifact_dir.empty()) return;
    std::ofstream os(std::filesystem::path(artifact_dir) / name, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write '" + name + "' in " + artifact_dir);
    os << text;
  };
  if (!artifact_dir.empty()) std::filesystem::create_directories(artifact_dir);

  PipelineResult res;
  const auto train = simulate(cfg, Split::Train);
  const auto eval = simulate(cfg, Split::Eval);
  say("simulated " + std::to_string(train.size()) + " train / " + std::to_string(eval.size()) +
      " eval frames");
  if (!artifact_dir.empty()) {
    write_scene((std::filesystem::path(artifact_dir) / "train.jsonl").string(), train);
    write_scene((std::filesystem::path(artifact_dir) / "eval.jsonl").string(), eval);
  }

  IntraParams intra = train_intra_stage(cfg, train, &res.intra_log);
  say("trained IntraRM for " + std::to_string(res.intra_log.size()) + " iterations");
  const auto train_intra_out = refine_intra_frames(train, intra, cfg.workers);
  const auto records = track_frames(train_intra_out, cfg.tracker);
  InterParams inter_init = InterParams::init(cfg.inter, 0);
  const auto samples = make_inter_samples(records, train_intra_out, inter_init, cfg.intra.assign_radius);
  say("built " + std::to_string(samples.size()) + " InterRM training sequences");
  InterParams inter = train_inter_stage(cfg, samples, &res.inter_log);
  say("trained InterRM for " + std::to_string(res.inter_log.size()) + " iterations");

  const auto eval_intra = refine_intra_frames(eval, intra, cfg.workers);
  const auto eval_inter = refine_inter_frames(eval_intra, inter, cfg.tracker, cfg.workers);
  res.stages.push_back(evaluate(eval, "raw", kDefaultIouThresholds, cfg.workers));
  res.stages.push_back(evaluate(eval_intra, "intra", kDefaultIouThresholds, cfg.workers));
  res.stages.push_back(evaluate(eval_inter, "inter", kDefaultIouThresholds, cfg.workers));
  res.report_json = metrics_report_json(res.stages);
  say("evaluated " + std::to_string(eval.size()) + " frames");

  if (!artifact_dir.empty()) {
    save_intra((std::filesystem::path(artifact_dir) / "intra.ckpt").string(), intra);
    save_inter((std::filesystem::path(artifact_dir) / "inter.ckpt").string(), inter);
    write_file("intra_loss.csv", loss_log_csv(res.intra_log));
    write_file("inter_loss.csv", loss_log_csv(res.inter_log));
    write_file("report.json", res.report_json);
    std::ostringstream dump;
    write_track_dump(dump, records);
    write_file("train_tracks.jsonl", dump.str());
  }
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace relrefine
