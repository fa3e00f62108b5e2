#include "relrefine/track.hpp"

#include <algorithm>
#include <istream>
#include <map>
#include <ostream>
#include <stdexcept>
#include <tuple>

#include "json_detail.hpp"
#include "relrefine/scene_io.hpp"

namespace relrefine {

Box3D predict_box(const Track& t, const Pose2D& current_ego, double timestamp) {
  const TrackEntry& last = t.history.back();
  Box3D b = project_box(last.det.box, last.ego, current_ego);
  const double dt = timestamp - last.timestamp;
  b.cx += b.vx * dt;
  b.cy += b.vy * dt;
  return b;
}

const Track& Tracker::track(int id) const {
  for (const Track& t : tracks_) {
    if (t.id == id) return t;
  }
  throw std::out_of_range("Tracker: no live track " + std::to_string(id));
}

std::vector<int> Tracker::step(const Frame& frame) {
  if (last_timestamp_ && !(frame.timestamp > *last_timestamp_)) {
    throw std::invalid_argument("Tracker::step: timestamp " + format_real(frame.timestamp) +
                                " does not advance past " + format_real(*last_timestamp_));
  }
  last_timestamp_ = frame.timestamp;

  const auto& dets = frame.detections;
  struct Candidate {
    double dist;
    std::size_t track;
    std::size_t det;
  };
  std::vector<Candidate> cands;
  for (std::size_t ti = 0; ti < tracks_.size(); ++ti) {
    const Box3D pred = predict_box(tracks_[ti], frame.ego, frame.timestamp);
    const double radius = cfg_.match_radius[class_index(tracks_[ti].label)];
    for (std::size_t di = 0; di < dets.size(); ++di) {
      if (dets[di].label != tracks_[ti].label) continue;
      const double d = bev_distance(pred, dets[di].box);
      if (d <= radius) cands.push_back({d, ti, di});
    }
  }
  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    return std::tie(a.dist, a.track, a.det) < std::tie(b.dist, b.track, b.det);
  });

  std::vector<int> ids(dets.size(), -1);
  std::vector<bool> track_used(tracks_.size(), false);
  for (const Candidate& c : cands) {
    if (track_used[c.track] || ids[c.det] >= 0) continue;
    track_used[c.track] = true;
    ids[c.det] = tracks_[c.track].id;
  }

  std::vector<Track> kept;
  kept.reserve(tracks_.size() + dets.size());
  for (std::size_t ti = 0; ti < tracks_.size(); ++ti) {
    Track& t = tracks_[ti];
    if (!track_used[ti]) {
      if (++t.misses > cfg_.max_age) continue;
    } else {
      t.misses = 0;
    }
    kept.push_back(std::move(t));
  }
  tracks_ = std::move(kept);
  for (std::size_t di = 0; di < dets.size(); ++di) {
    if (ids[di] < 0) {
      Track t;
      t.id = next_id_++;
      t.label = dets[di].label;
      tracks_.push_back(std::move(t));
      ids[di] = tracks_.back().id;
    }
  }
  // Histories are appended after the survival pass so ids map to live tracks.
  for (std::size_t di = 0; di < dets.size(); ++di) {
    for (Track& t : tracks_) {
      if (t.id == ids[di]) {
        t.history.push_back({frame.index, frame.timestamp, frame.ego, dets[di]});
        break;
      }
    }
  }
  return ids;
}

nk::Tensor2D assemble_sequence(std::span<const TrackEntry> history, const Pose2D& current_ego,
                               std::size_t cap) {
  if (history.empty()) throw std::invalid_argument("assemble_sequence: empty track");
  if (cap == 0) throw std::invalid_argument("assemble_sequence: cap must be positive");
  const std::size_t n = std::min(cap, history.size());
  const auto kept = history.subspan(history.size() - n);
  nk::Tensor2D out(n, kBasicDim);
  const double t0 = kept.front().timestamp;
  for (std::size_t i = 0; i < n; ++i) {
    const TrackEntry& e = kept[i];
    const Box3D local = project_box(e.det.box, e.ego, current_ego);
    const auto row = make_basic_features(local, e.det.score, e.det.label, e.timestamp - t0);
    std::copy(row.begin(), row.end(), out.row(i).begin());
  }
  return out;
}

nk::Tensor2D assemble_sequence(const Track& t, const Pose2D& current_ego, std::size_t cap) {
  return assemble_sequence(std::span<const TrackEntry>(t.history), current_ego, cap);
}

std::string track_record_to_line(const TrackRecord& r) {
  JsonWriter w;
  w.begin_object();
  w.field("seq", r.sequence);
  w.field("frame", r.frame);
  w.field("timestamp", r.timestamp);
  w.key("ego").begin_object();
  w.field("x", r.ego.x).field("y", r.ego.y).field("yaw", r.ego.yaw);
  w.end_object();
  w.field("track_id", r.track_id);
  w.field("det_index", static_cast<long long>(r.det_index));
  w.key("det");
  write_detection(w, r.det);
  w.end_object();
  return w.str();
}

TrackRecord track_record_from_line(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    TrackRecord r;
    r.sequence = j.at("seq").get<int>();
    r.frame = j.at("frame").get<int>();
    r.timestamp = j.at("timestamp").get<double>();
    const auto& ego = j.at("ego");
    r.ego = {ego.at("x").get<double>(), ego.at("y").get<double>(), ego.at("yaw").get<double>()};
    r.track_id = j.at("track_id").get<int>();
    r.det_index = j.at("det_index").get<std::size_t>();
    r.det = detail::read_detection(j.at("det"));
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("malformed track record: ") + e.what());
  }
}

void write_track_dump(std::ostream& os, const std::vector<TrackRecord>& records) {
  for (const auto& r : records) os << track_record_to_line(r) << '\n';
}

std::vector<TrackRecord> read_track_dump(std::istream& is) {
  std::vector<TrackRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty()) out.push_back(track_record_from_line(line));
  }
  return out;
}

std::vector<TrackRecord> track_frames(const std::vector<Frame>& frames, const TrackerConfig& cfg) {
  std::vector<TrackRecord> out;
  std::optional<Tracker> tracker;
  std::optional<int> seq;
  for (const Frame& f : frames) {
    if (!seq || *seq != f.sequence) {
      tracker.emplace(cfg);
      seq = f.sequence;
    }
    const auto ids = tracker->step(f);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      out.push_back({f.sequence, f.index, f.timestamp, f.ego, ids[i], i, f.detections[i]});
    }
  }
  return out;
}

std::vector<Track> tracks_from_dump(const std::vector<TrackRecord>& records,
                                    std::vector<int>* sequence_of_track) {
  std::map<std::pair<int, int>, std::size_t> index;
  std::vector<Track> tracks;
  if (sequence_of_track) sequence_of_track->clear();
  for (const TrackRecord& r : records) {
    auto [it, fresh] = index.try_emplace({r.sequence, r.track_id}, tracks.size());
    if (fresh) {
      Track t;
      t.id = r.track_id;
      t.label = r.det.label;
      tracks.push_back(std::move(t));
      if (sequence_of_track) sequence_of_track->push_back(r.sequence);
    }
    Track& t = tracks[it->second];
    if (!t.history.empty() && !(r.timestamp > t.history.back().timestamp)) {
      throw std::runtime_error("track dump: track " + std::to_string(r.track_id) +
                               " has non-increasing timestamps");
    }
    t.history.push_back({r.frame, r.timestamp, r.ego, r.det});
  }
  return tracks;
}

}  // namespace relrefine
