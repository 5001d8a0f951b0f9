#include "dcl/plot.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "dcl/data.hpp"
#include "dcl/errors.hpp"

namespace dcl {

namespace {

// 3x5 glyphs, one row per entry, bit 2 = leftmost column.
const std::map<char, std::array<std::uint8_t, 5>>& font() {
  static const std::map<char, std::array<std::uint8_t, 5>> glyphs = {
      {'0', {7, 5, 5, 5, 7}}, {'1', {2, 6, 2, 2, 7}}, {'2', {7, 1, 7, 4, 7}}, {'3', {7, 1, 7, 1, 7}},
      {'4', {5, 5, 7, 1, 1}}, {'5', {7, 4, 7, 1, 7}}, {'6', {7, 4, 7, 5, 7}}, {'7', {7, 1, 1, 1, 1}},
      {'8', {7, 5, 7, 5, 7}}, {'9', {7, 5, 7, 1, 7}}, {'.', {0, 0, 0, 0, 2}}, {'-', {0, 0, 7, 0, 0}},
      {'_', {0, 0, 0, 0, 7}}, {':', {0, 2, 0, 2, 0}}, {'(', {1, 2, 2, 2, 1}}, {')', {4, 2, 2, 2, 4}},
      {'/', {1, 1, 2, 4, 4}}, {'+', {0, 2, 7, 2, 0}}, {'=', {0, 7, 0, 7, 0}}, {',', {0, 0, 0, 2, 4}},
      {'A', {2, 5, 7, 5, 5}}, {'B', {6, 5, 6, 5, 6}}, {'C', {3, 4, 4, 4, 3}}, {'D', {6, 5, 5, 5, 6}},
      {'E', {7, 4, 6, 4, 7}}, {'F', {7, 4, 6, 4, 4}}, {'G', {3, 4, 5, 5, 3}}, {'H', {5, 5, 7, 5, 5}},
      {'I', {7, 2, 2, 2, 7}}, {'J', {1, 1, 1, 5, 2}}, {'K', {5, 5, 6, 5, 5}}, {'L', {4, 4, 4, 4, 7}},
      {'M', {5, 7, 7, 5, 5}}, {'N', {6, 5, 5, 5, 5}}, {'O', {2, 5, 5, 5, 2}}, {'P', {6, 5, 6, 4, 4}},
      {'Q', {2, 5, 5, 6, 3}}, {'R', {6, 5, 6, 5, 5}}, {'S', {3, 4, 2, 1, 6}}, {'T', {7, 2, 2, 2, 2}},
      {'U', {5, 5, 5, 5, 7}}, {'V', {5, 5, 5, 5, 2}}, {'W', {5, 5, 7, 7, 5}}, {'X', {5, 5, 2, 5, 5}},
      {'Y', {5, 5, 2, 2, 2}}, {'Z', {7, 1, 2, 4, 7}},
  };
  return glyphs;
}

constexpr std::array<std::array<float, 3>, 8> kPalette = {{
    {0.12f, 0.47f, 0.71f},
    {1.00f, 0.50f, 0.05f},
    {0.17f, 0.63f, 0.17f},
    {0.84f, 0.15f, 0.16f},
    {0.58f, 0.40f, 0.74f},
    {0.55f, 0.34f, 0.29f},
    {0.89f, 0.47f, 0.76f},
    {0.50f, 0.50f, 0.50f},
}};

class Canvas {
 public:
  Canvas(std::int64_t w, std::int64_t h) : w_(w), h_(h), pixels_(torch::ones({3, h, w})) {}

  void set(std::int64_t x, std::int64_t y, const std::array<float, 3>& c) {
    if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
    auto a = pixels_.accessor<float, 3>();
    for (int k = 0; k < 3; ++k) a[k][y][x] = c[static_cast<std::size_t>(k)];
  }

  void line(double x0, double y0, double x1, double y1, const std::array<float, 3>& c, int thickness = 1) {
    const double steps = std::max({std::abs(x1 - x0), std::abs(y1 - y0), 1.0});
    for (int i = 0; i <= static_cast<int>(steps); ++i) {
      const double t = i / steps;
      const auto x = static_cast<std::int64_t>(std::lround(x0 + (x1 - x0) * t));
      const auto y = static_cast<std::int64_t>(std::lround(y0 + (y1 - y0) * t));
      for (int dx = 0; dx < thickness; ++dx) {
        for (int dy = 0; dy < thickness; ++dy) set(x + dx, y + dy, c);
      }
    }
  }

  void rect(std::int64_t x, std::int64_t y, std::int64_t w, std::int64_t h, const std::array<float, 3>& c) {
    for (std::int64_t i = 0; i < w; ++i) {
      for (std::int64_t j = 0; j < h; ++j) set(x + i, y + j, c);
    }
  }

  /// Draws text at scale 2 (6x10 pixels per glyph plus spacing).
  void text(std::int64_t x, std::int64_t y, const std::string& s, const std::array<float, 3>& c, int scale = 2) {
    for (char raw : s) {
      const char ch = static_cast<char>(std::toupper(static_cast<unsigned char>(raw)));
      auto it = font().find(ch);
      if (it != font().end()) {
        for (int row = 0; row < 5; ++row) {
          for (int col = 0; col < 3; ++col) {
            if (it->second[static_cast<std::size_t>(row)] & (4 >> col)) rect(x + col * scale, y + row * scale, scale, scale, c);
          }
        }
      }
      x += 4 * scale;
    }
  }

  static std::int64_t text_width(const std::string& s, int scale = 2) {
    return static_cast<std::int64_t>(s.size()) * 4 * scale;
  }

  torch::Tensor image() const { return pixels_ * 2.0 - 1.0; }

 private:
  std::int64_t w_, h_;
  torch::Tensor pixels_;
};

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

}  // namespace

torch::Tensor render_line_chart(const std::vector<PlotSeries>& series, const ChartOptions& options) {
  if (options.width < 160 || options.height < 120) throw ConfigError("chart is too small");
  Canvas canvas(options.width, options.height);
  const std::array<float, 3> black = {0.f, 0.f, 0.f};
  const std::array<float, 3> grey = {0.85f, 0.85f, 0.85f};

  double xmin = INFINITY, xmax = -INFINITY, ymin = INFINITY, ymax = -INFINITY;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < std::min(s.x.size(), s.y.size()); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  }
  if (!std::isfinite(xmin)) {
    xmin = 0.0;
    xmax = 1.0;
    ymin = 0.0;
    ymax = 1.0;
  }
  if (xmax == xmin) xmax = xmin + 1.0;
  if (ymax == ymin) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;

  const std::int64_t left = 70, right = options.width - 20, top = 36, bottom = options.height - 50;
  auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * static_cast<double>(right - left); };
  auto py = [&](double y) { return bottom - (y - ymin) / (ymax - ymin) * static_cast<double>(bottom - top); };

  for (int k = 0; k <= 4; ++k) {
    const double yv = ymin + (ymax - ymin) * k / 4.0;
    const double xv = xmin + (xmax - xmin) * k / 4.0;
    canvas.line(static_cast<double>(left), py(yv), static_cast<double>(right), py(yv), grey);
    canvas.line(px(xv), static_cast<double>(top), px(xv), static_cast<double>(bottom), grey);
    const auto yl = tick_label(yv);
    canvas.text(left - 6 - Canvas::text_width(yl), static_cast<std::int64_t>(py(yv)) - 5, yl, black);
    const auto xl = tick_label(xv);
    canvas.text(static_cast<std::int64_t>(px(xv)) - Canvas::text_width(xl) / 2, bottom + 8, xl, black);
  }
  canvas.line(static_cast<double>(left), static_cast<double>(bottom), static_cast<double>(right),
              static_cast<double>(bottom), black);
  canvas.line(static_cast<double>(left), static_cast<double>(top), static_cast<double>(left),
              static_cast<double>(bottom), black);

  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& color = kPalette[s % kPalette.size()];
    const auto& ser = series[s];
    bool have_prev = false;
    double prev_x = 0, prev_y = 0;
    for (std::size_t i = 0; i < std::min(ser.x.size(), ser.y.size()); ++i) {
      if (!std::isfinite(ser.x[i]) || !std::isfinite(ser.y[i])) {
        have_prev = false;
        continue;
      }
      const double cx = px(ser.x[i]);
      const double cy = py(ser.y[i]);
      if (have_prev) canvas.line(prev_x, prev_y, cx, cy, color, 2);
      prev_x = cx;
      prev_y = cy;
      have_prev = true;
    }
    const auto ly = top + 4 + static_cast<std::int64_t>(s) * 14;
    canvas.rect(right - 150, ly, 12, 10, color);
    canvas.text(right - 132, ly, ser.label, black);
  }

  canvas.text(left, 10, options.title, black);
  canvas.text((left + right) / 2 - Canvas::text_width(options.x_label) / 2, options.height - 20, options.x_label,
              black);
  canvas.text(6, 10, options.y_label, black);
  return canvas.image();
}

void write_line_chart(const std::filesystem::path& path, const std::vector<PlotSeries>& series,
                      const ChartOptions& options) {
  write_png(path, render_line_chart(series, options));
}

void write_image_grid(const std::filesystem::path& path, const std::vector<ImageBatch>& rows, std::int64_t scale) {
  if (rows.empty()) throw InputError("image grid needs at least one row");
  const auto tile = rows.front().height() * scale;
  std::int64_t cols = 0;
  for (const auto& r : rows) cols = std::max(cols, r.size());
  const std::int64_t gap = 2;
  const auto rows_n = static_cast<std::int64_t>(rows.size());
  auto grid = torch::ones({3, rows_n * tile + (rows_n - 1) * gap, cols * tile + (cols - 1) * gap});
  for (std::int64_t r = 0; r < rows_n; ++r) {
    const auto& batch = rows[static_cast<std::size_t>(r)];
    if (batch.height() * scale != tile) throw InputError("image grid rows differ in resolution");
    auto up = torch::nn::functional::interpolate(
        batch.data.detach().to(torch::kFloat32),
        torch::nn::functional::InterpolateFuncOptions().scale_factor(std::vector<double>{double(scale), double(scale)}).mode(torch::kNearest));
    for (std::int64_t c = 0; c < batch.size(); ++c) {
      grid.slice(1, r * (tile + gap), r * (tile + gap) + tile)
          .slice(2, c * (tile + gap), c * (tile + gap) + tile)
          .copy_(up[c]);
    }
  }
  write_png(path, grid.clamp(-1, 1));
}

CsvTable CsvTable::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("cannot read CSV " + path.string());
  CsvTable t;
  std::string line;
  auto split = [](const std::string& l) {
    std::vector<std::string> out;
    std::stringstream ss(l);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!l.empty() && l.back() == ',') out.emplace_back();
    return out;
  };
  if (!std::getline(in, line)) throw InputError("CSV " + path.string() + " is empty");
  t.header = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto row = split(line);
    if (row.size() != t.header.size()) throw InputError("CSV " + path.string() + " has a ragged row");
    t.rows.push_back(std::move(row));
  }
  return t;
}

int CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return static_cast<int>(i);
  }
  return -1;
}

std::vector<PlotSeries> series_from_table(const CsvTable& table, const std::string& x_column,
                                          const std::string& y_column, const std::string& group_column) {
  const int xc = table.column(x_column);
  const int yc = table.column(y_column);
  if (xc < 0 || yc < 0) throw InputError("CSV lacks column '" + (xc < 0 ? x_column : y_column) + "'");
  const int gc = group_column.empty() ? -1 : table.column(group_column);
  std::vector<PlotSeries> out;
  std::map<std::string, std::size_t> index;
  for (const auto& row : table.rows) {
    const std::string key = gc >= 0 ? row[static_cast<std::size_t>(gc)] : y_column;
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, out.size()).first;
      out.push_back(PlotSeries{key, {}, {}});
    }
    auto& s = out[it->second];
    s.x.push_back(std::strtod(row[static_cast<std::size_t>(xc)].c_str(), nullptr));
    s.y.push_back(std::strtod(row[static_cast<std::size_t>(yc)].c_str(), nullptr));
  }
  return out;
}

}  // namespace dcl
