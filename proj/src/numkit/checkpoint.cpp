#include "relrefine/numkit/checkpoint.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace relrefine::nk {

const Tensor2D& Checkpoint::at(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw std::out_of_range("checkpoint has no tensor '" + name + "'");
}

std::string serialize_checkpoint(std::span<const Parameter* const> params,
                                 const std::map<std::string, std::string>& meta) {
  std::string out = kCheckpointHeader;
  out += '\n';
  for (const auto& [k, v] : meta) out += "meta " + k + " " + v + "\n";
  char buf[64];
  for (const Parameter* p : params) {
    out += "param " + p->name + " " + std::to_string(p->value.rows()) + " " +
           std::to_string(p->value.cols()) + "\n";
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      auto res = std::to_chars(buf, buf + sizeof(buf), p->value[i], std::chars_format::general, 17);
      if (i) out += ' ';
      out.append(buf, res.ptr);
    }
    out += '\n';
  }
  return out;
}

void save_checkpoint(const std::string& path, std::span<const Parameter* const> params,
                     const std::map<std::string, std::string>& meta) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open checkpoint '" + path + "' for writing");
  os << serialize_checkpoint(params, meta);
  if (!os) throw std::runtime_error("write failed for checkpoint '" + path + "'");
}

Checkpoint parse_checkpoint(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kCheckpointHeader) {
    throw std::runtime_error("not a relrefine checkpoint (bad header)");
  }
  Checkpoint ck;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string key, value;
      ls >> key;
      std::getline(ls >> std::ws, value);
      ck.meta[key] = value;
    } else if (kind == "param") {
      std::string name;
      std::size_t rows = 0, cols = 0;
      if (!(ls >> name >> rows >> cols)) throw std::runtime_error("malformed checkpoint param line");
      std::string values;
      if (!std::getline(is, values) && rows * cols > 0) {
        throw std::runtime_error("checkpoint truncated at '" + name + "'");
      }
      std::istringstream vs(values);
      Tensor2D t(rows, cols);
      for (std::size_t i = 0; i < t.size(); ++i) {
        if (!(vs >> t[i])) throw std::runtime_error("checkpoint values short for '" + name + "'");
      }
      ck.tensors.emplace_back(name, std::move(t));
    } else {
      throw std::runtime_error("unknown checkpoint record '" + kind + "'");
    }
  }
  return ck;
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_checkpoint(ss.str());
}

void assign_parameters(const Checkpoint& ckpt, std::span<Parameter* const> params) {
  for (Parameter* p : params) {
    const Tensor2D& t = ckpt.at(p->name);
    if (!t.same_shape(p->value)) {
      throw std::runtime_error("checkpoint tensor '" + p->name + "' has shape " + t.shape_str() +
                               ", model expects " + p->value.shape_str());
    }
    p->value = t;
    p->zero_grad();
  }
}

}  // namespace relrefine::nk
