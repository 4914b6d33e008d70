#pragma once

#include <cstdint>
#include <string>

#include "mit/decoder.hpp"

namespace mit {

struct Config {
  // model
  std::size_t heads = 4;
  std::size_t encoder_layers = 3;
  std::size_t blocks = 2;
  std::size_t dim = 32;
  std::size_t mlp_width = 64;
  std::size_t conv_channels = 16;
  QueryOrder query_order = QueryOrder::points_first;
  bool pose_extension = false;
  bool three_d_only = false;

  // data
  std::string data;
  std::string val_data;
  std::size_t views = 8;
  double cell_size = 0.25;

  // objective
  double alpha = 0.5;
  double encoder_weight = 1.0;
  double decoder_weight = 1.0;

  // optimizer
  double learning_rate = 3e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 8;
  std::size_t epochs = 200;
  std::uint64_t seed = 1;

  // inference
  std::size_t refine_layers = 3;
  double threshold = 0.5;
  std::size_t eval_every = 0;  // epochs between validation passes, 0 = never

  friend bool operator==(const Config&, const Config&) = default;
};

Config desk_profile();
/// Sizes and optimizer settings of the full-scale setup.
Config full_profile();

/// Throws ConfigError on an invariant violation.
void validate(const Config& cfg);

/// Flat `key = value` lines, `#` starts a comment. A leading
/// `profile = desk|full` selects the base values.
Config parse_config(const std::string& text, const std::string& origin = "<config>");
Config load_config(const std::string& path);
std::string serialize_config(const Config& cfg);

}  // namespace mit
