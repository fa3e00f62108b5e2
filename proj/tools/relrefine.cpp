// Command-line driver: simulate -> train -> refine/track -> eval, plus flops.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "relrefine/cost.hpp"
#include "relrefine/numkit/checkpoint.hpp"
#include "relrefine/pipeline.hpp"
#include "relrefine/scene_io.hpp"

using namespace relrefine;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;

  RunConfig load() const {
    RunConfig cfg = config.empty() ? RunConfig{} : load_config(config);
    if (seed) cfg.seed = *seed;
    if (workers) cfg.workers = *workers;
    return cfg;
  }
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "INI config file")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "Run seed (overrides the config)");
  app->add_option("--workers", c.workers, "Worker threads (default 1)");
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os << text;
  if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

std::vector<Frame> read_gt_scene(const std::string& path) {
  auto frames = read_scene(path);
  for (const auto& f : frames) {
    if (!f.ground_truth) {
      throw std::runtime_error("scene '" + path + "' frame " + std::to_string(f.index) +
                               " has no ground truth");
    }
  }
  return frames;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"relrefine: two-stage detection refinement on simulated scenes"};
  app.require_subcommand(1);

  Common sim_c, train_c, refine_c, track_c, eval_c, pipe_c;
  std::string out, split = "train", stage, scene, tracks, ckpt, log_path, intra_ckpt, inter_ckpt,
              pr_csv;
  std::optional<std::size_t> iterations;

  auto* sim = app.add_subcommand("simulate", "Generate a synthetic scene file");
  add_common(sim, sim_c);
  sim->add_option("--out", out, "Scene file (JSONL)")->required();
  sim->add_option("--split", split, "train or eval")->check(CLI::IsMember({"train", "eval"}));

  auto* train = app.add_subcommand("train", "Train one refinement stage");
  add_common(train, train_c);
  train->add_option("--stage", stage, "intra or inter")->required()->check(CLI::IsMember({"intra", "inter"}));
  train->add_option("--scene", scene, "Scene with ground truth (for inter: the IntraRM-refined scene)")
      ->required()
      ->check(CLI::ExistingFile);
  train->add_option("--tracks", tracks, "Track dump (inter only)")->check(CLI::ExistingFile);
  train->add_option("--out", out, "Checkpoint path")->required();
  train->add_option("--log", log_path, "Loss log CSV");
  train->add_option("--iterations", iterations, "Training iterations (overrides the config)");

  auto* refine = app.add_subcommand("refine", "Apply a trained stage to a scene");
  add_common(refine, refine_c);
  refine->add_option("--stage", stage, "intra or inter")->required()->check(CLI::IsMember({"intra", "inter"}));
  refine->add_option("--scene", scene)->required()->check(CLI::ExistingFile);
  refine->add_option("--ckpt", ckpt)->required()->check(CLI::ExistingFile);
  refine->add_option("--out", out)->required();

  auto* track = app.add_subcommand("track", "Link detections into tracks and write a track dump");
  add_common(track, track_c);
  track->add_option("--scene", scene)->required()->check(CLI::ExistingFile);
  track->add_option("--out", out)->required();

  auto* eval = app.add_subcommand("eval", "Evaluate raw and refined detections");
  add_common(eval, eval_c);
  eval->add_option("--scene", scene, "Raw scene with ground truth")->required()->check(CLI::ExistingFile);
  eval->add_option("--intra", intra_ckpt, "IntraRM checkpoint")->check(CLI::ExistingFile);
  eval->add_option("--inter", inter_ckpt, "InterRM checkpoint (requires --intra)")->check(CLI::ExistingFile);
  eval->add_option("--out", out, "Metrics report (JSON); stdout when omitted");
  eval->add_option("--pr-csv", pr_csv, "Precision/recall curve CSV");

  std::uint64_t n = 50, seq_len = 100, c_x = 128, m = 4, c_enc = 256, heads = 16, fseed = 1;
  double degree = 6.0;
  auto* flops = app.add_subcommand("flops", "Closed-form and instrumented operation counts");
  flops->add_option("--n", n, "Objects per frame");
  flops->add_option("--seq-len", seq_len, "Sequence length N");
  flops->add_option("--cx", c_x, "IntraRM width C_x");
  flops->add_option("--m", m, "IntraRM iterations");
  flops->add_option("--cenc", c_enc, "InterRM width C_enc");
  flops->add_option("--heads", heads, "Attention heads");
  flops->add_option("--degree", degree, "Target average graph degree");
  flops->add_option("--seed", fseed);
  flops->add_option("--out", out, "Report path; stdout when omitted");

  auto* pipe = app.add_subcommand("pipeline", "simulate -> train -> track -> train -> eval");
  add_common(pipe, pipe_c);
  pipe->add_option("--out", out, "Artifact directory")->required();

  CLI11_PARSE(app, argc, argv);
  keep_heap_warm();

  try {
    if (*sim) {
      const RunConfig cfg = sim_c.load();
      const auto frames = simulate(cfg, split == "train" ? Split::Train : Split::Eval);
      write_scene(out, frames);
      std::size_t gts = 0, dets = 0;
      for (const auto& f : frames) {
        gts += f.ground_truth ? f.ground_truth->size() : 0;
        dets += f.detections.size();
      }
      std::cout << "frames " << frames.size() << " ground_truth " << gts << " detections " << dets
                << "\n";
    } else if (*train) {
      RunConfig cfg = train_c.load();
      std::vector<LossRecord> log;
      if (stage == "intra") {
        if (iterations) cfg.intra_train.iterations = *iterations;
        const auto frames = read_gt_scene(scene);
        const IntraParams p = train_intra_stage(cfg, frames, &log);
        save_intra(out, p);
      } else {
        if (tracks.empty()) throw std::runtime_error("--stage inter needs --tracks");
        if (iterations) cfg.inter_train.iterations = *iterations;
        const auto frames = read_gt_scene(scene);
        std::ifstream ts(tracks);
        const auto records = read_track_dump(ts);
        const auto samples = make_inter_samples(records, frames, InterParams::init(cfg.inter, 0),
                                                cfg.intra.assign_radius);
        const InterParams p = train_inter_stage(cfg, samples, &log);
        save_inter(out, p);
      }
      if (!log_path.empty()) write_text(log_path, loss_log_csv(log));
      std::cout << "iterations " << log.size();
      if (!log.empty()) {
        std::cout << " first_loss " << format_real(log.front().total) << " last_loss "
                  << format_real(log.back().total);
      }
      std::cout << "\n";
    } else if (*refine) {
      const RunConfig cfg = refine_c.load();
      const auto frames = read_scene(scene);
      std::vector<Frame> refined;
      if (stage == "intra") {
        IntraParams p = load_intra(ckpt);
        refined = refine_intra_frames(frames, p, cfg.workers);
      } else {
        InterParams p = load_inter(ckpt);
        refined = refine_inter_frames(frames, p, cfg.tracker, cfg.workers);
      }
      write_scene(out, refined);
      std::cout << "frames " << refined.size() << "\n";
    } else if (*track) {
      const RunConfig cfg = track_c.load();
      const auto records = track_frames(read_scene(scene), cfg.tracker);
      std::ostringstream os;
      write_track_dump(os, records);
      write_text(out, os.str());
      std::cout << "records " << records.size() << "\n";
    } else if (*eval) {
      const RunConfig cfg = eval_c.load();
      if (!inter_ckpt.empty() && intra_ckpt.empty()) {
        throw std::runtime_error("--inter is applied on top of IntraRM output; pass --intra too");
      }
      const auto raw = read_gt_scene(scene);
      std::vector<StageMetrics> stages;
      std::vector<std::pair<std::string, MatchResult>> curves;
      auto add_stage = [&](const std::vector<Frame>& frames, const std::string& name) {
        MatchResult mr = match_frames(frames, kDefaultIouThresholds, cfg.workers);
        stages.push_back(summarize(mr, name));
        curves.emplace_back(name, std::move(mr));
      };
      add_stage(raw, "raw");
      if (!intra_ckpt.empty()) {
        IntraParams ip = load_intra(intra_ckpt);
        const auto intra_out = refine_intra_frames(raw, ip, cfg.workers);
        add_stage(intra_out, "intra");
        if (!inter_ckpt.empty()) {
          InterParams ep = load_inter(inter_ckpt);
          add_stage(refine_inter_frames(intra_out, ep, cfg.tracker, cfg.workers), "inter");
        }
      }
      const std::string report = metrics_report_json(stages);
      if (out.empty()) {
        std::cout << report;
      } else {
        write_text(out, report);
      }
      if (!pr_csv.empty()) write_text(pr_csv, pr_curve_csv(curves));
    } else if (*flops) {
      const CostReport r = measure_costs(n, seq_len, c_x, m, c_enc, heads, degree, fseed);
      std::ostringstream os;
      os << cost_report_text(r);
      os << "closed_form_at_degree " << degree << " intra_flops " << count_intra(n, c_x, m, degree)
         << " inter_flops " << count_inter(n, seq_len, c_enc, heads) << " dense_gnn_flops "
         << count_dense_gnn(n, seq_len, c_enc) << "\n";
      if (out.empty()) {
        std::cout << os.str();
      } else {
        write_text(out, os.str());
      }
    } else if (*pipe) {
      const RunConfig cfg = pipe_c.load();
      const auto res = run_pipeline(
          cfg, [](const std::string& m) { std::cerr << m << "\n"; }, out);
      std::cout << res.report_json;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
