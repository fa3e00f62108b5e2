#pragma once

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "relrefine/numkit/tape.hpp"

namespace relrefine::nk {

inline constexpr const char* kCheckpointHeader = "relrefine-checkpoint v1";

/// Named tensors plus free-form metadata, stored as text:
///   relrefine-checkpoint v1
///   meta <key> <value>
///   param <name> <rows> <cols>
///   <rows*cols values, row-major, 17 significant digits>
struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Tensor2D>> tensors;

  const Tensor2D& at(const std::string& name) const;
};

void save_checkpoint(const std::string& path, std::span<const Parameter* const> params,
                     const std::map<std::string, std::string>& meta = {});
Checkpoint load_checkpoint(const std::string& path);
std::string serialize_checkpoint(std::span<const Parameter* const> params,
                                 const std::map<std::string, std::string>& meta = {});
Checkpoint parse_checkpoint(const std::string& text);

/// Copies tensors into `params` by name; shapes must match exactly.
void assign_parameters(const Checkpoint& ckpt, std::span<Parameter* const> params);

}  // namespace relrefine::nk
