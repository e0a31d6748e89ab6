#include "rft/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "rft/error.hpp"

namespace rft {
namespace {

constexpr std::array<const char*, 6> kPalette = {"#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"};

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

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

std::string num(double v, int precision = 2) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v;
  return s.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
}

}  // namespace

void save_results_csv(const ResultTable& table, const std::filesystem::path& path) {
  std::ostringstream out;
  out << "config," << table.headers[0] << ',' << table.headers[1] << ',' << table.headers[2] << '\n';
  for (const auto& r : table.rows)
    out << r.config << ',' << num(r.values[0], 4) << ',' << num(r.values[1], 4) << ',' << num(r.values[2], 4) << '\n';
  write_file(path, out.str());
}

ResultTable load_results_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  ResultTable table;
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty results file: " + path.string());
  const auto header = split_csv(line);
  if (header.size() != 4 || header[0] != "config") throw IoError("unexpected results header in " + path.string());
  for (int i = 0; i < 3; ++i) table.headers[i] = header[i + 1];
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 4) throw IoError("malformed results row: " + line);
    ResultRow row;
    row.config = cells[0];
    try {
      for (int i = 0; i < 3; ++i) row.values[i] = std::stod(cells[i + 1]);
    } catch (const std::exception&) {
      throw IoError("malformed results row: " + line);
    }
    table.rows.push_back(row);
  }
  return table;
}

std::string format_table(const ResultTable& table) {
  std::size_t name_w = 6;
  for (const auto& r : table.rows) name_w = std::max(name_w, r.config.size());
  std::size_t col_w = 8;
  for (const auto& h : table.headers) col_w = std::max(col_w, h.size());
  std::ostringstream out;
  out << std::left << std::setw(static_cast<int>(name_w)) << "config";
  for (const auto& h : table.headers) out << "  " << std::right << std::setw(static_cast<int>(col_w)) << h;
  out << '\n' << std::string(name_w + 3 * (col_w + 2), '-') << '\n';
  for (const auto& r : table.rows) {
    out << std::left << std::setw(static_cast<int>(name_w)) << r.config;
    for (double v : r.values) out << "  " << std::right << std::setw(static_cast<int>(col_w)) << num(v, 1);
    out << '\n';
  }
  return out.str();
}

std::vector<double> epoch_means_from_log(const std::filesystem::path& log) {
  std::ifstream in(log);
  if (!in) throw IoError("cannot read " + log.string());
  std::string line;
  std::getline(in, line);
  const auto header = split_csv(line);
  const auto epoch_col = std::find(header.begin(), header.end(), "epoch") - header.begin();
  const auto total_col = std::find(header.begin(), header.end(), "total") - header.begin();
  if (epoch_col == static_cast<long>(header.size()) || total_col == static_cast<long>(header.size()))
    throw IoError("not a training log: " + log.string());
  std::map<int, std::pair<double, int>> sums;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size()) throw IoError("malformed log row: " + line);
    auto& s = sums[std::stoi(cells[epoch_col])];
    s.first += std::stod(cells[total_col]);
    s.second += 1;
  }
  std::vector<double> means;
  for (const auto& [epoch, s] : sums) means.push_back(s.first / s.second);
  return means;
}

void plot_success_rates(const ResultTable& table, const std::string& title, const std::filesystem::path& svg) {
  const int width = 720, height = 420, left = 60, right = 160, top = 50, bottom = 70;
  const double plot_w = width - left - right, plot_h = height - top - bottom;
  double y_max = 100;
  for (const auto& r : table.rows)
    for (double v : r.values) y_max = std::max(y_max, v);
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << width / 2 << "\" y=\"28\" text-anchor=\"middle\" font-size=\"16\">" << escape(title)
    << "</text>\n";
  for (int t = 0; t <= 5; ++t) {
    const double v = y_max * t / 5, y = top + plot_h - plot_h * t / 5;
    s << "<line x1=\"" << left << "\" x2=\"" << left + plot_w << "\" y1=\"" << num(y) << "\" y2=\"" << num(y)
      << "\" stroke=\"#ddd\"/>\n";
    s << "<text x=\"" << left - 6 << "\" y=\"" << num(y + 4) << "\" text-anchor=\"end\">" << num(v, 0) << "</text>\n";
  }
  const std::size_t groups = std::max<std::size_t>(1, table.rows.size());
  const double group_w = plot_w / groups, bar_w = group_w * 0.8 / 3;
  for (std::size_t g = 0; g < table.rows.size(); ++g) {
    const auto& r = table.rows[g];
    for (int b = 0; b < 3; ++b) {
      const double h = plot_h * r.values[b] / y_max;
      const double x = left + g * group_w + group_w * 0.1 + b * bar_w;
      s << "<rect x=\"" << num(x) << "\" y=\"" << num(top + plot_h - h) << "\" width=\"" << num(bar_w * 0.95)
        << "\" height=\"" << num(h) << "\" fill=\"" << kPalette[b] << "\"><title>" << escape(r.config) << ' '
        << escape(table.headers[b]) << ": " << num(r.values[b], 1) << "</title></rect>\n";
    }
    s << "<text x=\"" << num(left + (g + 0.5) * group_w) << "\" y=\"" << top + plot_h + 20
      << "\" text-anchor=\"middle\">" << escape(r.config) << "</text>\n";
  }
  s << "<line x1=\"" << left << "\" x2=\"" << left << "\" y1=\"" << top << "\" y2=\"" << top + plot_h
    << "\" stroke=\"black\"/>\n";
  s << "<text x=\"16\" y=\"" << top + plot_h / 2 << "\" transform=\"rotate(-90 16 " << top + plot_h / 2
    << ")\" text-anchor=\"middle\">success (%)</text>\n";
  for (int b = 0; b < 3; ++b) {
    const int y = top + 10 + b * 20;
    s << "<rect x=\"" << width - right + 15 << "\" y=\"" << y << "\" width=\"12\" height=\"12\" fill=\"" << kPalette[b]
      << "\"/><text x=\"" << width - right + 33 << "\" y=\"" << y + 10 << "\">" << escape(table.headers[b])
      << "</text>\n";
  }
  s << "</svg>\n";
  write_file(svg, s.str());
}

void plot_curves(const std::vector<Curve>& curves, const std::string& title, const std::filesystem::path& svg) {
  const int width = 720, height = 420, left = 70, right = 160, top = 50, bottom = 50;
  const double plot_w = width - left - right, plot_h = height - top - bottom;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  std::size_t n = 1;
  for (const auto& c : curves) {
    n = std::max(n, c.values.size());
    for (double v : c.values)
      if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
  }
  if (!std::isfinite(lo)) lo = 0, hi = 1;
  if (hi - lo < 1e-12) hi = lo + 1;
  auto px = [&](std::size_t i) { return left + (n > 1 ? plot_w * i / (n - 1) : plot_w / 2); };
  auto py = [&](double v) { return top + plot_h * (hi - v) / (hi - lo); };
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
    << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << width / 2 << "\" y=\"28\" text-anchor=\"middle\" font-size=\"16\">" << escape(title)
    << "</text>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = lo + (hi - lo) * t / 4;
    s << "<line x1=\"" << left << "\" x2=\"" << left + plot_w << "\" y1=\"" << num(py(v)) << "\" y2=\"" << num(py(v))
      << "\" stroke=\"#ddd\"/><text x=\"" << left - 6 << "\" y=\"" << num(py(v) + 4) << "\" text-anchor=\"end\">"
      << num(v, 3) << "</text>\n";
  }
  for (std::size_t k = 0; k < curves.size(); ++k) {
    const char* color = kPalette[k % kPalette.size()];
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < curves[k].values.size(); ++i)
      if (std::isfinite(curves[k].values[i])) s << num(px(i)) << ',' << num(py(curves[k].values[i])) << ' ';
    s << "\"/>\n";
    const int y = top + 10 + static_cast<int>(k) * 20;
    s << "<line x1=\"" << width - right + 15 << "\" x2=\"" << width - right + 35 << "\" y1=\"" << y + 5 << "\" y2=\""
      << y + 5 << "\" stroke=\"" << color << "\" stroke-width=\"2\"/><text x=\"" << width - right + 40 << "\" y=\""
      << y + 9 << "\">" << escape(curves[k].label) << "</text>\n";
  }
  s << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 12 << "\" text-anchor=\"middle\">epoch</text>\n";
  s << "</svg>\n";
  write_file(svg, s.str());
}

}  // namespace rft
