#include "mit/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mit/errors.hpp"

namespace mit {

namespace {

constexpr double kWidth = 640, kHeight = 400, kLeft = 70, kRight = 20, kTop = 40, kBottom = 50;
const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

std::string header(const std::string& title) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << kWidth / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(title)
     << "</text>\n";
  return os.str();
}

std::optional<double> parse_double(const std::string& s) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

std::size_t column(const TsvTable& t, const std::string& name, const std::filesystem::path& path) {
  if (t.empty()) throw ParseError(path.string() + ": empty table");
  const auto it = std::find(t[0].begin(), t[0].end(), name);
  if (it == t[0].end()) throw ParseError(path.string() + ":1: missing column '" + name + "'");
  return static_cast<std::size_t>(it - t[0].begin());
}

}  // namespace

std::string line_plot_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                          std::span<const Series> series) {
  double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  if (!(x0 <= x1)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return kTop + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  std::ostringstream os;
  os << header(title);
  os << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double yv = y0 + (y1 - y0) * k / 4.0, xv = x0 + (x1 - x0) * k / 4.0;
    os << "<text x=\"" << kLeft - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << num(yv) << "</text>\n";
    os << "<text x=\"" << px(xv) << "\" y=\"" << kTop + ph + 16 << "\" text-anchor=\"middle\">" << num(xv)
       << "</text>\n";
  }
  os << "<text x=\"" << kLeft + pw / 2 << "\" y=\"" << kHeight - 10 << "\" text-anchor=\"middle\">" << escape(x_label)
     << "</text>\n";
  os << "<text x=\"16\" y=\"" << kTop + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << kTop + ph / 2 << ")\">" << escape(y_label) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kColors[k % std::size(kColors)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i)
      if (std::isfinite(s.y[i])) os << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    os << "\"/>\n";
    os << "<text x=\"" << kLeft + pw - 8 << "\" y=\"" << kTop + 16 + 14 * k << "\" text-anchor=\"end\" fill=\""
       << color << "\">" << escape(s.name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string bar_chart_svg(const std::string& title, std::span<const std::string> labels,
                          std::span<const std::optional<double>> values) {
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  const double slot = labels.empty() ? pw : pw / static_cast<double>(labels.size());
  std::ostringstream os;
  os << header(title);
  os << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"#444\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double y = kTop + ph * (1.0 - k / 4.0);
    os << "<text x=\"" << kLeft - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << num(k / 4.0) << "</text>\n";
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double cx = kLeft + slot * (static_cast<double>(i) + 0.5);
    if (values[i]) {
      const double v = std::clamp(*values[i], 0.0, 1.0);
      os << "<rect x=\"" << cx - slot * 0.3 << "\" y=\"" << kTop + ph * (1.0 - v) << "\" width=\"" << slot * 0.6
         << "\" height=\"" << ph * v << "\" fill=\"" << kColors[0] << "\"/>\n";
      os << "<text x=\"" << cx << "\" y=\"" << kTop + ph * (1.0 - v) - 4 << "\" text-anchor=\"middle\">" << num(v)
         << "</text>\n";
    }
    os << "<text x=\"" << cx << "\" y=\"" << kTop + ph + 16 << "\" text-anchor=\"middle\">" << escape(labels[i])
       << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

TsvTable read_tsv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot open " + path.string());
  TsvTable t;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<std::string> row;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      row.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    t.push_back(std::move(row));
  }
  return t;
}

void write_tsv(const TsvTable& table, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw InputError("cannot write " + path.string());
  for (const auto& row : table) {
    for (std::size_t i = 0; i < row.size(); ++i) f << (i ? "\t" : "") << row[i];
    f << '\n';
  }
}

TsvTable evaluation_table(const EvaluationReport& report, std::span<const std::string> class_names) {
  auto fmt = [](const std::optional<double>& v) {
    if (!v) return std::string("nan");
    std::ostringstream os;
    os.precision(6);
    os << std::fixed << *v;
    return os.str();
  };
  TsvTable t;
  std::vector<std::string> head{"scene"};
  for (const auto& n : class_names) head.push_back("iou_" + n);
  head.push_back("mIoU");
  head.push_back("mAP");
  t.push_back(head);
  auto row_of = [&](const std::string& id, const MiouReport& m, const std::optional<double>& map) {
    std::vector<std::string> row{id};
    for (const auto& v : m.iou) row.push_back(fmt(v));
    row.push_back(fmt(m.mean));
    row.push_back(fmt(map));
    return row;
  };
  for (const auto& [id, m] : report.per_scene) t.push_back(row_of(id, m, std::nullopt));
  t.push_back(row_of("all", report.miou, report.map ? std::optional<double>(report.map->mean) : std::nullopt));
  return t;
}

std::vector<std::filesystem::path> write_report(const std::filesystem::path& run_dir,
                                                const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;

  const auto steps_path = run_dir / "steps.tsv";
  const TsvTable steps = read_tsv(steps_path);
  std::vector<Series> loss_series;
  for (const char* name : {"loss", "encoder", "decoder"}) {
    const std::size_t sc = column(steps, "step", steps_path), vc = column(steps, name, steps_path);
    Series s{name, {}, {}};
    for (std::size_t i = 1; i < steps.size(); ++i) {
      const auto x = parse_double(steps[i].at(sc)), y = parse_double(steps[i].at(vc));
      if (!x || !y) throw ParseError(steps_path.string() + ":" + std::to_string(i + 1) + ": malformed number");
      s.x.push_back(*x);
      s.y.push_back(*y);
    }
    const bool all_zero = std::all_of(s.y.begin(), s.y.end(), [](double v) { return v == 0.0; });
    if (!all_zero || std::string(name) == "loss") loss_series.push_back(std::move(s));
  }
  {
    std::ofstream f(out_dir / "loss_curve.svg");
    f << line_plot_svg("Training loss", "step", "loss", loss_series);
    written.push_back(out_dir / "loss_curve.svg");
  }
  write_tsv(steps, out_dir / "steps.tsv");
  written.push_back(out_dir / "steps.tsv");

  if (std::filesystem::exists(run_dir / "epochs.tsv")) {
    const TsvTable epochs = read_tsv(run_dir / "epochs.tsv");
    write_tsv(epochs, out_dir / "epochs.tsv");
    written.push_back(out_dir / "epochs.tsv");
  }

  const auto eval_path = run_dir / "eval.tsv";
  if (std::filesystem::exists(eval_path)) {
    const TsvTable eval = read_tsv(eval_path);
    std::vector<std::string> labels;
    std::vector<std::optional<double>> values;
    const auto all = std::find_if(eval.begin(), eval.end(), [](const auto& r) { return !r.empty() && r[0] == "all"; });
    if (all == eval.end()) throw ParseError(eval_path.string() + ": no 'all' row");
    for (std::size_t c = 1; c < eval[0].size(); ++c) {
      const std::string& h = eval[0][c];
      if (h.rfind("iou_", 0) != 0) continue;
      labels.push_back(h.substr(4));
      values.push_back(parse_double(all->at(c)));
    }
    std::ofstream f(out_dir / "class_iou.svg");
    f << bar_chart_svg("Per-class IoU of pseudo labels", labels, values);
    written.push_back(out_dir / "class_iou.svg");
    TsvTable per_class{{"class", "iou"}};
    for (std::size_t i = 0; i < labels.size(); ++i) per_class.push_back({labels[i], all->at(i + 1)});
    write_tsv(per_class, out_dir / "class_iou.tsv");
    written.push_back(out_dir / "class_iou.tsv");
  }
  return written;
}

}  // namespace mit
