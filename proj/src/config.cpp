#include "mit/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <type_traits>
#include <variant>
#include <vector>

#include "mit/errors.hpp"

namespace mit {

namespace {

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "seed shares the size_t field kind");
using Field = std::variant<std::size_t Config::*, double Config::*, bool Config::*, std::string Config::*,
                           QueryOrder Config::*>;

struct Entry {
  const char* key;
  Field field;
};

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      {"heads", &Config::heads},
      {"encoder_layers", &Config::encoder_layers},
      {"blocks", &Config::blocks},
      {"dim", &Config::dim},
      {"mlp_width", &Config::mlp_width},
      {"conv_channels", &Config::conv_channels},
      {"query_order", &Config::query_order},
      {"pose_extension", &Config::pose_extension},
      {"three_d_only", &Config::three_d_only},
      {"data", &Config::data},
      {"val_data", &Config::val_data},
      {"views", &Config::views},
      {"cell_size", &Config::cell_size},
      {"alpha", &Config::alpha},
      {"encoder_weight", &Config::encoder_weight},
      {"decoder_weight", &Config::decoder_weight},
      {"learning_rate", &Config::learning_rate},
      {"weight_decay", &Config::weight_decay},
      {"beta1", &Config::beta1},
      {"beta2", &Config::beta2},
      {"adam_eps", &Config::adam_eps},
      {"batch_size", &Config::batch_size},
      {"epochs", &Config::epochs},
      {"seed", &Config::seed},
      {"refine_layers", &Config::refine_layers},
      {"threshold", &Config::threshold},
      {"eval_every", &Config::eval_every},
  };
  return table;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& v, const std::string& where) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) throw ConfigError(where + ": cannot parse '" + v + "'");
  return out;
}

bool parse_bool(const std::string& v, const std::string& where) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(where + ": expected a boolean, got '" + v + "'");
}

QueryOrder parse_order(const std::string& v, const std::string& where) {
  if (v == "points_first") return QueryOrder::points_first;
  if (v == "views_first") return QueryOrder::views_first;
  throw ConfigError(where + ": query_order must be points_first or views_first");
}

template <typename T>
std::string format_number(T v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

struct Setter {
  Config& cfg;
  const std::string& value;
  const std::string& where;
  void operator()(std::size_t Config::*f) const { cfg.*f = parse_number<std::size_t>(value, where); }
  void operator()(double Config::*f) const { cfg.*f = parse_number<double>(value, where); }
  void operator()(bool Config::*f) const { cfg.*f = parse_bool(value, where); }
  void operator()(std::string Config::*f) const { cfg.*f = value; }
  void operator()(QueryOrder Config::*f) const { cfg.*f = parse_order(value, where); }
};

struct Getter {
  const Config& cfg;
  std::string operator()(std::size_t Config::*f) const { return format_number(cfg.*f); }
  std::string operator()(double Config::*f) const { return format_number(cfg.*f); }
  std::string operator()(bool Config::*f) const { return cfg.*f ? "true" : "false"; }
  std::string operator()(std::string Config::*f) const { return cfg.*f; }
  std::string operator()(QueryOrder Config::*f) const {
    return cfg.*f == QueryOrder::points_first ? "points_first" : "views_first";
  }
};

}  // namespace

Config desk_profile() { return Config{}; }

Config full_profile() {
  Config c;
  c.dim = 96;
  c.mlp_width = 96;
  c.views = 16;
  c.batch_size = 32;
  c.epochs = 500;
  c.learning_rate = 1e-2;
  return c;
}

void validate(const Config& c) {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("config: ") + name + " must be positive");
  };
  positive(c.heads, "heads");
  positive(c.encoder_layers, "encoder_layers");
  positive(c.blocks, "blocks");
  positive(c.dim, "dim");
  positive(c.mlp_width, "mlp_width");
  positive(c.conv_channels, "conv_channels");
  positive(c.views, "views");
  positive(c.batch_size, "batch_size");
  positive(c.refine_layers, "refine_layers");
  if (c.dim % c.heads != 0) {
    throw ConfigError("config: dim " + std::to_string(c.dim) + " is not divisible by heads " + std::to_string(c.heads));
  }
  if (c.refine_layers > c.encoder_layers) throw ConfigError("config: refine_layers exceeds encoder_layers");
  if (!(c.alpha >= 0.0)) throw ConfigError("config: alpha must be nonnegative");
  if (!(c.cell_size > 0.0)) throw ConfigError("config: cell_size must be positive");
  if (!(c.learning_rate > 0.0)) throw ConfigError("config: learning_rate must be positive");
  if (!(c.weight_decay >= 0.0)) throw ConfigError("config: weight_decay must be nonnegative");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0)) {
    throw ConfigError("config: betas must lie in [0,1)");
  }
  if (!(c.adam_eps > 0.0)) throw ConfigError("config: adam_eps must be positive");
  if (!(c.threshold > 0.0 && c.threshold < 1.0)) throw ConfigError("config: threshold must lie in (0,1)");
  if (!(c.encoder_weight >= 0.0) || !(c.decoder_weight >= 0.0)) throw ConfigError("config: loss weights must be nonnegative");
}

Config parse_config(const std::string& text, const std::string& origin) {
  struct Line {
    std::size_t number;
    std::string key, value;
  };
  std::vector<Line> lines;
  std::istringstream in(text);
  std::string raw;
  std::size_t number = 0;
  while (std::getline(in, raw)) {
    ++number;
    const auto hash = raw.find('#');
    const std::string line = trim(std::string_view(raw).substr(0, hash));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(number) + ": expected 'key = value'");
    }
    lines.push_back({number, trim(std::string_view(line).substr(0, eq)), trim(std::string_view(line).substr(eq + 1))});
  }

  Config cfg = desk_profile();
  for (const auto& l : lines) {
    if (l.key != "profile") continue;
    if (l.value == "desk") cfg = desk_profile();
    else if (l.value == "full") cfg = full_profile();
    else throw ConfigError(origin + ":" + std::to_string(l.number) + ": unknown profile '" + l.value + "'");
  }
  for (const auto& l : lines) {
    if (l.key == "profile") continue;
    const std::string where = origin + ":" + std::to_string(l.number) + ": " + l.key;
    bool found = false;
    for (const auto& e : entries()) {
      if (l.key != e.key) continue;
      std::visit(Setter{cfg, l.value, where}, e.field);
      found = true;
      break;
    }
    if (!found) throw ConfigError(origin + ":" + std::to_string(l.number) + ": unknown key '" + l.key + "'");
  }
  return cfg;
}

Config load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), path);
}

std::string serialize_config(const Config& cfg) {
  std::string out;
  for (const auto& e : entries()) {
    out += e.key;
    out += " = ";
    out += std::visit(Getter{cfg}, e.field);
    out += '\n';
  }
  return out;
}

}  // namespace mit
