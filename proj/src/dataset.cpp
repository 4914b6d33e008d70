#include "mit/dataset.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string_view>

#include "mit/errors.hpp"

namespace mit {

namespace fs = std::filesystem;

namespace {

std::string view_stem(std::size_t t) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%03zu", t);
  return buf;
}

std::string format_double(double v) {
  std::array<char, 32> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

std::ofstream open_out(const fs::path& path, bool binary = false) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  return out;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string() + ": cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

[[noreturn]] void fail_line(const fs::path& path, std::size_t line, const std::string& what) {
  throw ParseError(path.string() + ":" + std::to_string(line) + ": " + what);
}

[[noreturn]] void fail_offset(const fs::path& path, std::size_t offset, const std::string& what) {
  throw ParseError(path.string() + ": byte offset " + std::to_string(offset) + ": " + what);
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

// Non-empty, non-comment lines with their 1-based line numbers.
std::vector<std::pair<std::size_t, std::string_view>> content_lines(const std::string& text) {
  std::vector<std::pair<std::size_t, std::string_view>> out;
  std::string_view rest(text);
  std::size_t number = 0;
  while (!rest.empty()) {
    const std::size_t nl = rest.find('\n');
    std::string_view line = rest.substr(0, nl);
    rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
    ++number;
    const auto fields = split_fields(line);
    if (fields.empty() || fields[0].starts_with('#')) continue;
    out.emplace_back(number, line);
  }
  return out;
}

std::vector<double> parse_doubles(const fs::path& path, std::size_t line, std::string_view text, std::size_t expect) {
  const auto fields = split_fields(text);
  if (fields.size() != expect) {
    fail_line(path, line, "expected " + std::to_string(expect) + " values, found " + std::to_string(fields.size()));
  }
  std::vector<double> out(expect);
  for (std::size_t i = 0; i < expect; ++i)
    if (!parse_number(fields[i], out[i]) || !std::isfinite(out[i]))
      fail_line(path, line, "malformed number '" + std::string(fields[i]) + "'");
  return out;
}

void write_ppm(const fs::path& path, const Tensor& image, std::size_t height, std::size_t width) {
  auto out = open_out(path, true);
  out << "P6\n" << width << " " << height << "\n255\n";
  std::string bytes(height * width * 3, '\0');
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    const double v = std::round(std::clamp(image[i], 0.0, 1.0) * 255.0);
    bytes[i] = static_cast<char>(static_cast<unsigned char>(v));
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Tensor read_ppm(const fs::path& path, std::size_t& height, std::size_t& width) {
  const std::string data = slurp(path);
  std::size_t pos = 0;
  // header tokens: magic, width, height, maxval; '#' starts a comment
  auto next_token = [&]() -> std::string_view {
    while (pos < data.size()) {
      if (data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(data[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    if (start == pos) fail_offset(path, start, "truncated PPM header");
    return std::string_view(data).substr(start, pos - start);
  };
  if (next_token() != "P6") fail_offset(path, 0, "not a binary PPM (P6)");
  std::size_t w = 0, h = 0, maxval = 0;
  const std::size_t w_at = pos;
  if (!parse_number(next_token(), w) || w == 0) fail_offset(path, w_at, "bad width");
  const std::size_t h_at = pos;
  if (!parse_number(next_token(), h) || h == 0) fail_offset(path, h_at, "bad height");
  const std::size_t m_at = pos;
  if (!parse_number(next_token(), maxval) || maxval != 255) fail_offset(path, m_at, "only 8-bit PPM is supported");
  ++pos;  // single whitespace before the raster
  const std::size_t need = w * h * 3;
  if (data.size() < pos + need) {
    fail_offset(path, data.size(), "truncated raster, expected " + std::to_string(need) + " bytes");
  }
  height = h;
  width = w;
  Tensor image = Tensor::matrix(h * w, 3);
  for (std::size_t i = 0; i < need; ++i)
    image[i] = static_cast<double>(static_cast<unsigned char>(data[pos + i])) / 255.0;
  return image;
}

void write_depth(const fs::path& path, const Tensor& depth) {
  auto out = open_out(path, true);
  std::string bytes(depth.numel() * 4, '\0');
  for (std::size_t i = 0; i < depth.numel(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(depth[i]));
    for (int b = 0; b < 4; ++b) bytes[i * 4 + static_cast<std::size_t>(b)] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Tensor read_depth(const fs::path& path, std::size_t height, std::size_t width) {
  const std::string data = slurp(path);
  const std::size_t need = height * width * 4;
  if (data.size() != need) {
    fail_offset(path, std::min(data.size(), need),
                "expected " + std::to_string(need) + " bytes, found " + std::to_string(data.size()));
  }
  Tensor depth = Tensor::matrix(height, width);
  for (std::size_t i = 0; i < height * width; ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b)
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(data[i * 4 + static_cast<std::size_t>(b)])) << (8 * b);
    const float v = std::bit_cast<float>(bits);
    if (!std::isfinite(v) || v < 0.0f) fail_offset(path, i * 4, "depth must be finite and nonnegative");
    depth[i] = static_cast<double>(v);
  }
  return depth;
}

void write_cam(const fs::path& path, const Camera& cam) {
  auto out = open_out(path);
  for (int r = 0; r < 3; ++r)
    out << format_double(cam.intrinsics(r, 0)) << " " << format_double(cam.intrinsics(r, 1)) << " "
        << format_double(cam.intrinsics(r, 2)) << "\n";
  for (int r = 0; r < 3; ++r)
    out << format_double(cam.pose.rotation(r, 0)) << " " << format_double(cam.pose.rotation(r, 1)) << " "
        << format_double(cam.pose.rotation(r, 2)) << " " << format_double(cam.pose.translation(r)) << "\n";
}

Camera read_cam(const fs::path& path) {
  const std::string text = slurp(path);
  const auto lines = content_lines(text);
  if (lines.size() != 6) fail_line(path, lines.empty() ? 1 : lines.back().first, "expected 6 rows (3x3 then 3x4)");
  Camera cam;
  for (int r = 0; r < 3; ++r) {
    const auto v = parse_doubles(path, lines[static_cast<std::size_t>(r)].first, lines[static_cast<std::size_t>(r)].second, 3);
    for (int c = 0; c < 3; ++c) cam.intrinsics(r, c) = v[static_cast<std::size_t>(c)];
  }
  for (int r = 0; r < 3; ++r) {
    const auto& [ln, tx] = lines[static_cast<std::size_t>(r + 3)];
    const auto v = parse_doubles(path, ln, tx, 4);
    for (int c = 0; c < 3; ++c) cam.pose.rotation(r, c) = v[static_cast<std::size_t>(c)];
    cam.pose.translation(r) = v[3];
  }
  return cam;
}

void write_scene(const Scene& scene, const fs::path& dir) {
  fs::create_directories(dir / "views");
  {
    auto out = open_out(dir / "points.tsv");
    const auto& pts = scene.cloud.points;
    std::string line;
    for (std::size_t i = 0; i < scene.cloud.size(); ++i) {
      line.clear();
      for (std::size_t a = 0; a < 6; ++a) {
        line += format_double(pts.at(i, a));
        line += '\t';
      }
      line += std::to_string(scene.cloud.labeled() ? scene.cloud.labels[i] : kIgnoreLabel);
      line += '\n';
      out << line;
    }
  }
  {
    auto out = open_out(dir / "tags.txt");
    for (std::size_t c = 0; c < scene.tags.y.size(); ++c) out << (c ? " " : "") << scene.tags.y[c];
    out << "\n";
  }
  const ViewSet& v = scene.views;
  for (std::size_t t = 0; t < v.size(); ++t) {
    const std::string stem = view_stem(t);
    write_ppm(dir / "views" / (stem + ".ppm"), v.images[t], v.height, v.width);
    if (!v.depths.empty()) write_depth(dir / "views" / (stem + ".depth"), v.depths[t]);
    if (!v.cameras.empty()) write_cam(dir / "views" / (stem + ".cam"), v.cameras[t]);
  }
}

Scene read_scene(const fs::path& dir, const std::string& id, std::size_t num_classes) {
  Scene scene;
  scene.id = id;
  {
    const fs::path path = dir / "points.tsv";
    const std::string text = slurp(path);
    const auto lines = content_lines(text);
    if (lines.empty()) fail_line(path, 1, "no points");
    scene.cloud.points = Tensor::matrix(lines.size(), 6);
    std::vector<int> labels(lines.size(), kIgnoreLabel);
    bool any_label = false;
    for (std::size_t i = 0; i < lines.size(); ++i) {
      const auto& [ln, tx] = lines[i];
      const auto fields = split_fields(tx);
      if (fields.size() != 7) fail_line(path, ln, "expected 7 fields, found " + std::to_string(fields.size()));
      for (std::size_t a = 0; a < 6; ++a) {
        double v = 0.0;
        if (!parse_number(fields[a], v) || !std::isfinite(v))
          fail_line(path, ln, "malformed number '" + std::string(fields[a]) + "'");
        scene.cloud.points.at(i, a) = v;
      }
      int label = 0;
      if (!parse_number(fields[6], label) || label < kIgnoreLabel || (label >= 0 && static_cast<std::size_t>(label) >= num_classes))
        fail_line(path, ln, "bad label '" + std::string(fields[6]) + "'");
      labels[i] = label;
      any_label = any_label || label != kIgnoreLabel;
    }
    if (any_label) scene.cloud.labels = std::move(labels);
  }
  {
    const fs::path path = dir / "tags.txt";
    const std::string text = slurp(path);
    const auto lines = content_lines(text);
    if (lines.size() != 1) fail_line(path, 1, "expected one line of tags");
    const auto fields = split_fields(lines[0].second);
    if (fields.size() != num_classes)
      fail_line(path, lines[0].first, "expected " + std::to_string(num_classes) + " tags");
    for (auto f : fields) {
      int v = 0;
      if (!parse_number(f, v) || (v != 0 && v != 1)) fail_line(path, lines[0].first, "tags must be 0 or 1");
      scene.tags.y.push_back(v);
    }
  }
  ViewSet& views = scene.views;
  for (std::size_t t = 0;; ++t) {
    const std::string stem = view_stem(t);
    const fs::path ppm = dir / "views" / (stem + ".ppm");
    if (!fs::exists(ppm)) break;
    std::size_t h = 0, w = 0;
    Tensor image = read_ppm(ppm, h, w);
    if (t == 0) {
      views.height = h;
      views.width = w;
    } else if (h != views.height || w != views.width) {
      fail_offset(ppm, 0, "resolution differs from view 000");
    }
    views.images.push_back(std::move(image));
    const fs::path depth = dir / "views" / (stem + ".depth");
    const fs::path cam = dir / "views" / (stem + ".cam");
    if (fs::exists(depth)) views.depths.push_back(read_depth(depth, h, w));
    if (fs::exists(cam)) views.cameras.push_back(read_cam(cam));
  }
  if (views.size() == 0) throw ParseError((dir / "views").string() + ": no views found");
  if (!views.depths.empty() && views.depths.size() != views.size())
    throw ParseError((dir / "views").string() + ": depth maps present for only some views");
  if (!views.cameras.empty() && views.cameras.size() != views.size())
    throw ParseError((dir / "views").string() + ": camera files present for only some views");
  return scene;
}

}  // namespace

void write_dataset(const Dataset& dataset, const fs::path& root) {
  fs::create_directories(root);
  auto out = open_out(root / "manifest.txt");
  out << "# mit dataset\n";
  out << "classes " << dataset.class_names.size() << "\n";
  for (std::size_t c = 0; c < dataset.class_names.size(); ++c) out << "class " << c << " " << dataset.class_names[c] << "\n";
  for (const auto& scene : dataset.scenes) {
    if (scene.id.empty() || scene.id.find_first_of("/\\ \t") != std::string::npos) {
      throw InputError("scene id '" + scene.id + "' is not a valid directory name");
    }
    out << "scene " << scene.id << "\n";
    write_scene(scene, root / scene.id);
  }
}

Dataset read_dataset(const fs::path& root) {
  const fs::path manifest = root / "manifest.txt";
  const std::string text = slurp(manifest);
  Dataset ds;
  std::size_t declared = 0;
  bool have_count = false;
  std::vector<std::pair<std::size_t, std::string>> scene_dirs;
  for (const auto& [ln, line] : content_lines(text)) {
    const auto f = split_fields(line);
    if (f[0] == "classes" && f.size() == 2) {
      if (!parse_number(f[1], declared) || declared < 1) fail_line(manifest, ln, "bad class count");
      have_count = true;
    } else if (f[0] == "class" && f.size() == 3) {
      std::size_t idx = 0;
      if (!parse_number(f[1], idx) || idx != ds.class_names.size()) fail_line(manifest, ln, "class indices must be consecutive");
      ds.class_names.emplace_back(f[2]);
    } else if (f[0] == "scene" && f.size() == 2) {
      scene_dirs.emplace_back(ln, std::string(f[1]));
    } else {
      fail_line(manifest, ln, "unrecognised entry '" + std::string(line) + "'");
    }
  }
  if (!have_count) fail_line(manifest, 1, "missing 'classes' entry");
  if (ds.class_names.size() != declared) fail_line(manifest, 1, "class table does not match the declared count");
  for (const auto& [ln, id] : scene_dirs) {
    if (!fs::is_directory(root / id)) fail_line(manifest, ln, "scene directory '" + id + "' does not exist");
    ds.scenes.push_back(read_scene(root / id, id, declared));
  }
  return ds;
}

Dataset read_training_dataset(const fs::path& root) {
  Dataset ds = read_dataset(root);
  if (ds.scenes.empty()) throw InputError(root.string() + ": dataset contains no scenes");
  return ds;
}

}  // namespace mit
