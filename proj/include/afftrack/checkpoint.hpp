#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "afftrack/nn.hpp"

namespace afftrack::nn {

// Checkpoint container, version 1. Plain text:
//
//   afftrack-checkpoint 1
//   meta <key> <value...>          zero or more; value runs to end of line
//   tensor <name> <rows> <cols>    followed by one line of rows*cols values,
//   <v0 v1 ...>                    row-major, shortest round-trip decimals
//   end
//
// Loading then saving reproduces the file byte for byte.

struct NamedTensor {
  std::string name;
  Matrix value;
};

struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Appends `params` under their own names.
void store_params(Checkpoint& ckpt, const ParamList& params);
/// Copies tensors into `params` by name. Throws ConfigError on a missing
/// name or a shape mismatch.
void restore_params(const Checkpoint& ckpt, const ParamList& params);

}  // namespace afftrack::nn
