#include "d2c/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

namespace d2c::metrics {

namespace {

constexpr int kColumns = 9;

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::optional<double> parse_optional(std::string_view field, int line_column) {
  if (field.empty()) return std::nullopt;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw SchemaError("metrics: column " + std::to_string(line_column) + " value '" + std::string(field) +
                      "' is not a number");
  }
  return v;
}

std::int64_t parse_int(std::string_view field, int line_column) {
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw SchemaError("metrics: column " + std::to_string(line_column) + " value '" + std::string(field) +
                      "' is not an integer");
  }
  return v;
}

std::string strip_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

std::string fmt(double v, int decimals = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::string xml_escape(std::string_view s) {
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

}  // namespace

std::string format_value(const std::optional<double>& v) {
  if (!v) return {};
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", *v);
  return buf;
}

std::string format_row(const MetricsRow& r) {
  std::string s = std::to_string(r.iter) + "," + std::to_string(r.steps);
  for (const auto* v : {&r.curr_dist, &r.success, &r.mean_reward, &r.clf_loss, &r.critic_loss, &r.actor_loss, &r.alpha}) {
    s += ',';
    s += format_value(*v);
  }
  return s;
}

MetricsRow parse_row(std::string_view line) {
  const auto f = split(line, ',');
  if (static_cast<int>(f.size()) != kColumns) {
    throw SchemaError("metrics: row has " + std::to_string(f.size()) + " fields, expected " +
                      std::to_string(kColumns));
  }
  MetricsRow r;
  r.iter = parse_int(f[0], 0);
  r.steps = parse_int(f[1], 1);
  std::optional<double>* slots[] = {&r.curr_dist, &r.success,    &r.mean_reward, &r.clf_loss,
                                    &r.critic_loss, &r.actor_loss, &r.alpha};
  for (int k = 0; k < 7; ++k) *slots[k] = parse_optional(f[static_cast<std::size_t>(k + 2)], k + 2);
  return r;
}

int schema_version_of(std::string_view header_line) { return header_line == kHeader ? kSchemaVersion : 0; }

std::vector<std::string> column_names() {
  std::vector<std::string> out;
  for (auto f : split(kHeader, ',')) out.emplace_back(f);
  return out;
}

MetricsWriter::MetricsWriter(std::filesystem::path path) : path_(std::move(path)) {
  std::error_code ec;
  const bool fresh = !std::filesystem::exists(path_, ec) || std::filesystem::file_size(path_, ec) == 0;
  if (fresh) {
    std::ofstream os(path_, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("metrics: cannot open " + path_.string());
    os << kHeader << '\n';
  } else {
    std::ifstream is(path_, std::ios::binary);
    std::string header;
    std::getline(is, header);
    header = strip_cr(header);
    if (schema_version_of(header) != kSchemaVersion) {
      throw SchemaError("metrics: cannot append to " + path_.string() + ": file schema version " +
                        std::to_string(schema_version_of(header)) + " (header '" + header +
                        "'), writer schema version " + std::to_string(kSchemaVersion));
    }
  }
}

void MetricsWriter::write(const MetricsRow& row) {
  std::ofstream os(path_, std::ios::binary | std::ios::app);
  if (!os) throw std::runtime_error("metrics: cannot append to " + path_.string());
  os << format_row(row) << '\n';
}

void write_metrics(std::ostream& os, std::span<const MetricsRow> rows, bool header) {
  if (header) os << kHeader << '\n';
  for (const auto& r : rows) os << format_row(r) << '\n';
}

std::vector<MetricsRow> read_metrics(std::istream& is) {
  std::vector<MetricsRow> rows;
  std::string line;
  if (!std::getline(is, line)) return rows;
  line = strip_cr(line);
  const int version = schema_version_of(line);
  if (version != kSchemaVersion) {
    throw SchemaError("metrics schema version mismatch: file has version " + std::to_string(version) +
                      " (header '" + line + "'), reader expects version " + std::to_string(kSchemaVersion) +
                      " (header '" + std::string(kHeader) + "')");
  }
  while (std::getline(is, line)) {
    line = strip_cr(line);
    if (line.empty()) continue;
    rows.push_back(parse_row(line));
  }
  return rows;
}

std::vector<MetricsRow> read_metrics(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("metrics: cannot open " + path.string());
  return read_metrics(is);
}

std::vector<std::optional<double>> column(std::span<const MetricsRow> rows, std::string_view name) {
  std::vector<std::optional<double>> out;
  out.reserve(rows.size());
  for (const auto& r : rows) {
    if (name == "iter") out.emplace_back(static_cast<double>(r.iter));
    else if (name == "steps") out.emplace_back(static_cast<double>(r.steps));
    else if (name == "curr_dist") out.push_back(r.curr_dist);
    else if (name == "success") out.push_back(r.success);
    else if (name == "mean_reward") out.push_back(r.mean_reward);
    else if (name == "clf_loss") out.push_back(r.clf_loss);
    else if (name == "critic_loss") out.push_back(r.critic_loss);
    else if (name == "actor_loss") out.push_back(r.actor_loss);
    else if (name == "alpha") out.push_back(r.alpha);
    else throw SchemaError("metrics: unknown column '" + std::string(name) + "'");
  }
  return out;
}

std::vector<SeriesPoint> aggregate(std::span<const std::vector<MetricsRow>> runs, std::string_view name,
                                   int smoothing) {
  if (runs.empty()) return {};
  if (smoothing < 1) throw std::invalid_argument("plot: smoothing window must be >= 1");
  std::size_t len = runs.front().size();
  for (const auto& r : runs) len = std::min(len, r.size());
  std::vector<std::vector<std::optional<double>>> cols;
  for (const auto& r : runs) cols.push_back(column(r, name));

  std::vector<double> steps;
  std::vector<std::vector<double>> values(runs.size());
  for (std::size_t i = 0; i < len; ++i) {
    bool all = true;
    for (const auto& c : cols) all = all && c[i].has_value();
    if (!all) continue;
    steps.push_back(static_cast<double>(runs.front()[i].steps));
    for (std::size_t s = 0; s < runs.size(); ++s) values[s].push_back(*cols[s][i]);
  }
  // Trailing moving average per seed.
  for (auto& v : values) {
    std::vector<double> sm(v.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      acc += v[i];
      if (i >= static_cast<std::size_t>(smoothing)) acc -= v[i - static_cast<std::size_t>(smoothing)];
      sm[i] = acc / static_cast<double>(std::min<std::size_t>(i + 1, static_cast<std::size_t>(smoothing)));
    }
    v = std::move(sm);
  }
  std::vector<SeriesPoint> out;
  const double n = static_cast<double>(runs.size());
  for (std::size_t i = 0; i < steps.size(); ++i) {
    double mean = 0.0;
    for (const auto& v : values) mean += v[i];
    mean /= n;
    double var = 0.0;
    for (const auto& v : values) var += (v[i] - mean) * (v[i] - mean);
    out.push_back({steps[i], mean, runs.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0});
  }
  return out;
}

std::string render_plot_svg(std::span<const SeriesPoint> series, std::string_view column_name,
                            std::string_view title) {
  constexpr double W = 640, H = 400, L = 60, R = 20, T = 40, B = 50;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (!series.empty()) {
    x0 = series.front().steps;
    x1 = series.back().steps;
    y0 = series.front().mean - series.front().stddev;
    y1 = series.front().mean + series.front().stddev;
    for (const auto& p : series) {
      y0 = std::min(y0, p.mean - p.stddev);
      y1 = std::max(y1, p.mean + p.stddev);
    }
    if (x1 <= x0) x1 = x0 + 1;
    if (y1 - y0 < 1e-12) {
      y0 -= 0.5;
      y1 += 0.5;
    }
  }
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 "
     << W << ' ' << H << "\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << xml_escape(title)
     << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double yv = y0 + (y1 - y0) * k / 4.0;
    const double xv = x0 + (x1 - x0) * k / 4.0;
    os << "<text x=\"" << L - 6 << "\" y=\"" << fmt(py(yv) + 4) << "\" text-anchor=\"end\" font-size=\"11\">"
       << fmt(yv, 3) << "</text>\n";
    os << "<text x=\"" << fmt(px(xv)) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\" font-size=\"11\">"
       << fmt(xv, 0) << "</text>\n";
  }
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\" font-size=\"12\">"
     << "environment steps</text>\n";
  os << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" font-size=\"12\" transform=\"rotate(-90 16 "
     << (T + H - B) / 2 << ")\" text-anchor=\"middle\">" << xml_escape(column_name) << "</text>\n";
  if (!series.empty()) {
    os << "<polygon fill=\"#1f77b4\" fill-opacity=\"0.25\" stroke=\"none\" points=\"";
    for (const auto& p : series) os << fmt(px(p.steps)) << ',' << fmt(py(p.mean + p.stddev)) << ' ';
    for (auto it = series.rbegin(); it != series.rend(); ++it)
      os << fmt(px(it->steps)) << ',' << fmt(py(it->mean - it->stddev)) << ' ';
    os << "\"/>\n";
    os << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
    for (const auto& p : series) os << fmt(px(p.steps)) << ',' << fmt(py(p.mean)) << ' ';
    os << "\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void plot(const PlotSpec& spec) {
  if (spec.inputs.empty()) throw std::invalid_argument("plot: no input CSVs");
  std::vector<std::string> headers;
  for (const auto& p : spec.inputs) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw std::runtime_error("plot: cannot open " + p.string());
    std::string h;
    std::getline(is, h);
    headers.push_back(strip_cr(h));
  }
  bool mismatch = false;
  for (const auto& h : headers) mismatch = mismatch || h != headers.front() || schema_version_of(h) != kSchemaVersion;
  if (mismatch) {
    std::string msg = "plot: input CSV schemas differ (expected '" + std::string(kHeader) + "')";
    for (std::size_t k = 0; k < headers.size(); ++k) {
      msg += "\n  " + spec.inputs[k].string() + ": '" + headers[k] + "'";
      if (headers[k] != kHeader) msg += "  <-- differs";
    }
    throw SchemaError(msg);
  }
  std::vector<std::vector<MetricsRow>> runs;
  for (const auto& p : spec.inputs) runs.push_back(read_metrics(p));
  const auto series = aggregate(runs, spec.column, spec.smoothing);
  const std::string title = spec.title.empty() ? spec.column : spec.title;
  std::ofstream os(spec.output, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("plot: cannot write " + spec.output.string());
  os << render_plot_svg(series, spec.column, title);
}

env::Point world_to_pixel(const env::MazeSpec& maze, double ppu, env::Point p) {
  return {(p.x + maze.half_width()) * ppu, (maze.half_height() - p.y) * ppu};
}

std::string render_snapshot_svg(const SnapshotInput& in) {
  if (!in.maze) throw std::invalid_argument("snapshot: no maze");
  const auto& m = *in.maze;
  const double ppu = in.pixels_per_unit;
  const double w = m.width() * ppu;
  const double h = m.height() * ppu;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(w) << "\" height=\"" << fmt(h)
     << "\" viewBox=\"0 0 " << fmt(w) << ' ' << fmt(h) << "\">\n";
  os << "<rect x=\"0\" y=\"0\" width=\"" << fmt(w) << "\" height=\"" << fmt(h)
     << "\" fill=\"white\" stroke=\"black\"/>\n";
  os << "<g id=\"walls\" fill=\"#444444\">\n";
  for (int r = 0; r < m.rows; ++r) {
    for (int c = 0; c < m.cols; ++c) {
      if (!m.wall_at(c, r)) continue;
      os << "<rect x=\"" << fmt(c * m.cell_size * ppu) << "\" y=\"" << fmt(r * m.cell_size * ppu) << "\" width=\""
         << fmt(m.cell_size * ppu) << "\" height=\"" << fmt(m.cell_size * ppu) << "\"/>\n";
    }
  }
  os << "</g>\n<g id=\"buffer\">\n";
  const std::size_t n = in.buffer.size();
  for (std::size_t k = 0; k < n; ++k) {
    // Early points blue, late points red.
    const double t = n > 1 ? static_cast<double>(k) / static_cast<double>(n - 1) : 1.0;
    const int red = static_cast<int>(std::lround(255.0 * t));
    const int blue = 255 - red;
    const auto p = world_to_pixel(m, ppu, in.buffer[k]);
    char color[8];
    std::snprintf(color, sizeof color, "#%02x40%02x", red, blue);
    os << "<circle cx=\"" << fmt(p.x) << "\" cy=\"" << fmt(p.y) << "\" r=\"1.5\" fill=\"" << color << "\"/>\n";
  }
  os << "</g>\n<g id=\"desired\" fill=\"gold\" stroke=\"black\">\n";
  for (const auto& g : in.desired) {
    const auto p = world_to_pixel(m, ppu, g);
    os << "<polygon class=\"desired\" data-x=\"" << fmt(p.x) << "\" data-y=\"" << fmt(p.y) << "\" points=\"";
    for (int k = 0; k < 10; ++k) {
      const double rad = (k % 2 == 0 ? 8.0 : 3.5);
      const double ang = -std::numbers::pi / 2.0 + k * std::numbers::pi / 5.0;
      os << fmt(p.x + rad * std::cos(ang)) << ',' << fmt(p.y + rad * std::sin(ang)) << ' ';
    }
    os << "\"/>\n";
  }
  os << "</g>\n<g id=\"proposed\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"2\">\n";
  for (const auto& g : in.proposed) {
    const auto p = world_to_pixel(m, ppu, g);
    os << "<circle class=\"proposed\" cx=\"" << fmt(p.x) << "\" cy=\"" << fmt(p.y) << "\" r=\"5\"/>\n";
  }
  os << "</g>\n</svg>\n";
  return os.str();
}

void render_snapshot(const SnapshotInput& input, const std::filesystem::path& path) {
  const std::string svg = render_snapshot_svg(input);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("snapshot: cannot write " + path.string());
  os << svg;
  if (!os) throw std::runtime_error("snapshot: write failed for " + path.string());
}

}  // namespace d2c::metrics
