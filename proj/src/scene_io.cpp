#include "relrefine/scene_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "json_detail.hpp"

namespace relrefine {

using nlohmann::json;

std::string format_real(double v) {
  if (!std::isfinite(v)) throw std::invalid_argument("non-finite value in artifact");
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 9);
  return std::string(buf, res.ptr);
}

void JsonWriter::separator() {
  if (after_key_) {
    after_key_ = false;
    return;
  }
  if (!first_.empty()) {
    if (!first_.back()) out_ += ',';
    first_.back() = false;
  }
}

void JsonWriter::write_key(std::string_view k) {
  separator();
  out_ += '"';
  out_ += k;
  out_ += "\":";
  after_key_ = true;
}

JsonWriter& JsonWriter::begin_object() {
  separator();
  out_ += '{';
  first_.push_back(true);
  return *this;
}

JsonWriter& JsonWriter::end_object() {
  out_ += '}';
  first_.pop_back();
  return *this;
}

JsonWriter& JsonWriter::begin_array(std::string_view k) {
  write_key(k);
  return begin_array();
}

JsonWriter& JsonWriter::begin_array() {
  separator();
  out_ += '[';
  first_.push_back(true);
  return *this;
}

JsonWriter& JsonWriter::end_array() {
  out_ += ']';
  first_.pop_back();
  return *this;
}

JsonWriter& JsonWriter::key(std::string_view k) {
  write_key(k);
  return *this;
}

JsonWriter& JsonWriter::field(std::string_view k, double v) {
  write_key(k);
  return value(v);
}

JsonWriter& JsonWriter::field(std::string_view k, int v) {
  write_key(k);
  separator();
  out_ += std::to_string(v);
  return *this;
}

JsonWriter& JsonWriter::field(std::string_view k, long long v) {
  write_key(k);
  separator();
  out_ += std::to_string(v);
  return *this;
}

JsonWriter& JsonWriter::field(std::string_view k, std::string_view v) {
  write_key(k);
  separator();
  out_ += '"';
  out_ += v;
  out_ += '"';
  return *this;
}

JsonWriter& JsonWriter::field_fixed(std::string_view k, double v, int decimals) {
  write_key(k);
  return value_fixed(v, decimals);
}

JsonWriter& JsonWriter::field_null(std::string_view k) {
  write_key(k);
  separator();
  out_ += "null";
  return *this;
}

JsonWriter& JsonWriter::value(double v) {
  separator();
  out_ += format_real(v);
  return *this;
}

JsonWriter& JsonWriter::value_fixed(double v, int decimals) {
  separator();
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed, decimals);
  out_.append(buf, res.ptr);
  return *this;
}

JsonWriter& JsonWriter::reals(std::string_view k, const std::vector<double>& v) {
  begin_array(k);
  for (double x : v) value(x);
  return end_array();
}

void write_box(JsonWriter& w, std::string_view key, const Box3D& b) {
  w.key(key).begin_object();
  w.field("cx", b.cx).field("cy", b.cy).field("cz", b.cz);
  w.field("l", b.length).field("w", b.width).field("h", b.height);
  w.field("yaw", b.yaw).field("vx", b.vx).field("vy", b.vy);
  w.end_object();
}

void write_detection(JsonWriter& w, const Detection& det) {
  w.begin_object();
  write_box(w, "box", det.box);
  w.field("score", det.score);
  w.field("label", to_string(det.label));
  w.reals("basic", det.basic);
  w.reals("bev", det.bev);
  if (det.object_id) {
    w.field("object_id", *det.object_id);
  } else {
    w.field_null("object_id");
  }
  w.end_object();
}

std::string frame_to_line(const Frame& f) {
  JsonWriter w;
  w.begin_object();
  w.field("version", kSceneFormatVersion);
  w.field("seq", f.sequence);
  w.field("frame", f.index);
  w.field("timestamp", f.timestamp);
  w.key("ego").begin_object();
  w.field("x", f.ego.x).field("y", f.ego.y).field("yaw", f.ego.yaw);
  w.end_object();
  w.begin_array("detections");
  for (const auto& d : f.detections) write_detection(w, d);
  w.end_array();
  if (f.ground_truth) {
    w.begin_array("ground_truth");
    for (const auto& g : *f.ground_truth) {
      w.begin_object();
      write_box(w, "box", g.box);
      w.field("label", to_string(g.label));
      w.field("object_id", g.object_id);
      w.end_object();
    }
    w.end_array();
  }
  w.end_object();
  return w.str();
}

namespace detail {

Box3D read_box(const json& j) {
  Box3D b;
  b.cx = j.at("cx").get<double>();
  b.cy = j.at("cy").get<double>();
  b.cz = j.at("cz").get<double>();
  b.length = j.at("l").get<double>();
  b.width = j.at("w").get<double>();
  b.height = j.at("h").get<double>();
  b.yaw = j.at("yaw").get<double>();
  b.vx = j.at("vx").get<double>();
  b.vy = j.at("vy").get<double>();
  if (!b.valid()) throw std::runtime_error("invalid box in scene record");
  return b;
}

Detection read_detection(const json& jd) {
  Detection d;
  d.box = read_box(jd.at("box"));
  d.score = jd.at("score").get<double>();
  d.label = parse_class(jd.at("label").get<std::string>());
  d.basic = jd.at("basic").get<std::vector<double>>();
  d.bev = jd.at("bev").get<std::vector<double>>();
  if (d.basic.size() != kBasicDim) throw std::runtime_error("basic feature length mismatch");
  if (!jd.at("object_id").is_null()) d.object_id = jd.at("object_id").get<int>();
  return d;
}

}  // namespace detail

using detail::read_box;

Frame frame_from_line(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed scene record: ") + e.what());
  }
  try {
    if (j.at("version").get<int>() != kSceneFormatVersion) {
      throw std::runtime_error("unsupported scene format version");
    }
    Frame f;
    f.sequence = j.at("seq").get<int>();
    f.index = j.at("frame").get<int>();
    f.timestamp = j.at("timestamp").get<double>();
    const auto& ego = j.at("ego");
    f.ego = {ego.at("x").get<double>(), ego.at("y").get<double>(),
             ego.at("yaw").get<double>()};
    for (const auto& jd : j.at("detections")) f.detections.push_back(detail::read_detection(jd));
    if (j.contains("ground_truth")) {
      std::vector<GroundTruth> gts;
      for (const auto& jg : j.at("ground_truth")) {
        gts.push_back({read_box(jg.at("box")), parse_class(jg.at("label").get<std::string>()),
                       jg.at("object_id").get<int>()});
      }
      f.ground_truth = std::move(gts);
    }
    return f;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed scene record: ") + e.what());
  }
}

void write_scene(std::ostream& os, const std::vector<Frame>& frames) {
  for (const auto& f : frames) os << frame_to_line(f) << '\n';
}

std::vector<Frame> read_scene(std::istream& is) {
  std::vector<Frame> frames;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    frames.push_back(frame_from_line(line));
  }
  return frames;
}

void write_scene(const std::string& path, const std::vector<Frame>& frames) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_scene(os, frames);
  if (!os) throw std::runtime_error("write failed for '" + path + "'");
}

std::vector<Frame> read_scene(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open scene '" + path + "'");
  return read_scene(is);
}

std::vector<std::vector<Frame>> split_sequences(const std::vector<Frame>& frames) {
  std::vector<std::vector<Frame>> out;
  for (const auto& f : frames) {
    if (out.empty() || out.back().back().sequence != f.sequence) out.emplace_back();
    out.back().push_back(f);
  }
  return out;
}

}  // namespace relrefine
