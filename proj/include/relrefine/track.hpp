#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "relrefine/core.hpp"
#include "relrefine/numkit/tensor.hpp"

namespace relrefine {

struct TrackEntry {
  int frame = 0;
  double timestamp = 0.0;
  Pose2D ego;
  Detection det;  // in the ego frame it was observed in
};

struct Track {
  int id = 0;
  ClassLabel label = ClassLabel::Vehicle;
  std::vector<TrackEntry> history;
  int misses = 0;
};

struct TrackerConfig {
  std::array<double, kNumClasses> match_radius{4.0, 1.0, 2.0};
  int max_age = 3;
};

/// Greedy closest-distance association with constant-velocity prediction.
/// A track missing for more than max_age consecutive frames is dropped.
class Tracker {
 public:
  explicit Tracker(TrackerConfig cfg = {}) : cfg_(cfg) {}

  /// Associates one frame; returns the track id assigned to each detection.
  std::vector<int> step(const Frame& frame);

  const std::vector<Track>& tracks() const { return tracks_; }
  const Track& track(int id) const;
  int next_id() const { return next_id_; }
  const TrackerConfig& config() const { return cfg_; }

 private:
  TrackerConfig cfg_;
  std::vector<Track> tracks_;
  int next_id_ = 0;
  std::optional<double> last_timestamp_;
};

/// Where a track's last box is expected at the current frame, in current ego
/// coordinates: projected, then advanced by its velocity over the time gap.
Box3D predict_box(const Track& t, const Pose2D& current_ego, double timestamp);

/// The most recent <= cap entries projected into `current_ego`, oldest first,
/// as basic-feature rows. dt is the time since the track's first kept entry.
nk::Tensor2D assemble_sequence(std::span<const TrackEntry> history, const Pose2D& current_ego,
                               std::size_t cap);
nk::Tensor2D assemble_sequence(const Track& t, const Pose2D& current_ego, std::size_t cap);

/// One row of a track dump: which track a detection joined in which frame.
struct TrackRecord {
  int sequence = 0;
  int frame = 0;
  double timestamp = 0.0;
  Pose2D ego;
  int track_id = 0;
  std::size_t det_index = 0;
  Detection det;
};

std::string track_record_to_line(const TrackRecord& r);
TrackRecord track_record_from_line(const std::string& line);
void write_track_dump(std::ostream& os, const std::vector<TrackRecord>& records);
std::vector<TrackRecord> read_track_dump(std::istream& is);

/// Runs a fresh tracker over each sequence of `frames` in order.
std::vector<TrackRecord> track_frames(const std::vector<Frame>& frames, const TrackerConfig& cfg);

/// Rebuilds per-(sequence, track) histories from a dump, ordered by frame.
std::vector<Track> tracks_from_dump(const std::vector<TrackRecord>& records,
                                    std::vector<int>* sequence_of_track = nullptr);

}  // namespace relrefine
