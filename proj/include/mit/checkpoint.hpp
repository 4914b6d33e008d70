#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mit/config.hpp"
#include "mit/optim.hpp"

namespace mit {

inline constexpr char kCheckpointMagic[] = "MITCKPT1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Config config;
  std::vector<std::string> class_names;
  ParameterStore params;
  AdamWState optimizer;
  /// Completed epochs.
  std::uint64_t epoch = 0;
  /// Text form of the training RNG (operator<< of std::mt19937_64).
  std::string rng_state;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

/// Magic, u32 version, then four u64-length-prefixed little-endian sections:
/// config text, named tensors, optimizer state, training state.
std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes, const std::string& origin = "<checkpoint>");

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mit
