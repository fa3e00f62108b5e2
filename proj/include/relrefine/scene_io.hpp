#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "relrefine/core.hpp"

namespace relrefine {

/// Version tag written into every scene record.
inline constexpr int kSceneFormatVersion = 1;

/// Formats a real with 9 significant digits (the scene-file convention).
std::string format_real(double v);

/// Minimal JSON object writer used by the line-delimited artifact formats.
/// Emits fields in call order so output bytes are stable.
class JsonWriter {
 public:
  JsonWriter& begin_object();
  JsonWriter& end_object();
  JsonWriter& begin_array(std::string_view key);
  JsonWriter& begin_array();
  JsonWriter& end_array();
  JsonWriter& key(std::string_view k);
  JsonWriter& field(std::string_view k, double v);
  JsonWriter& field(std::string_view k, int v);
  JsonWriter& field(std::string_view k, long long v);
  JsonWriter& field(std::string_view k, std::string_view v);
  JsonWriter& field_fixed(std::string_view k, double v, int decimals);
  JsonWriter& field_null(std::string_view k);
  JsonWriter& value(double v);
  JsonWriter& value_fixed(double v, int decimals);
  JsonWriter& reals(std::string_view k, const std::vector<double>& v);
  const std::string& str() const { return out_; }

 private:
  void separator();
  void write_key(std::string_view k);
  std::string out_;
  std::vector<bool> first_;  // per nesting level
  bool after_key_ = false;
};

void write_box(JsonWriter& w, std::string_view key, const Box3D& box);
void write_detection(JsonWriter& w, const Detection& det);

std::string frame_to_line(const Frame& frame);
Frame frame_from_line(std::string_view line);

void write_scene(const std::string& path, const std::vector<Frame>& frames);
std::vector<Frame> read_scene(const std::string& path);
void write_scene(std::ostream& os, const std::vector<Frame>& frames);
std::vector<Frame> read_scene(std::istream& is);

/// Splits a flat frame list into per-sequence runs, preserving order.
std::vector<std::vector<Frame>> split_sequences(const std::vector<Frame>& frames);

}  // namespace relrefine
