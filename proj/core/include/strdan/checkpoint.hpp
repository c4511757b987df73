#ifndef STRDAN_CHECKPOINT_HPP_
#define STRDAN_CHECKPOINT_HPP_

#include <cstdint>
#include <filesystem>
#include <string>

#include "strdan/network.hpp"
#include "strdan/optimizer.hpp"

namespace strdan {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Model, optimizer state and training position. `metadata` is an opaque
// JSON object string (the trainer stores its config echo there).
struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  OptimState optimizer;
  int epoch = 0;  // completed epochs
  std::uint64_t seed = 0;
  std::string metadata = "{}";

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

// Layout (all integers little-endian):
//   8 bytes   magic "STRDANCK"
//   u32       format version
//   u64       header length H
//   H bytes   UTF-8 JSON header: config, epoch, seed, optimizer step and
//             hyper-parameters, metadata, and the ordered tensor table
//             [{name, rows, cols}, ...]
//   payload   for each table entry in order, rows*cols IEEE-754 binary64
//             values, row-major, little-endian
// Tensor names: model parameters as ModelParams::named(), then for each
// optimizer slot "opt.m.<name>", "opt.v.<name>", "opt.vmax.<name>".
std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(const std::string& bytes);

void write_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace strdan

#endif  // STRDAN_CHECKPOINT_HPP_
