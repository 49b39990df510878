#include "apv/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "apv/errors.hpp"
#include "apv/stats.hpp"

namespace apv {

namespace {

struct Canvas {
  long w, h;
  std::vector<std::uint8_t> px;  // BGR rows, bottom-up handled at write time

  Canvas(long width, long height) : w(width), h(height), px(width * height * 3, 255) {}

  void set(long x, long y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    if (x < 0 || y < 0 || x >= w || y >= h) return;
    std::uint8_t* p = px.data() + (y * w + x) * 3;
    p[0] = b;
    p[1] = g;
    p[2] = r;
  }

  void blend(long x, long y, std::uint8_t r, std::uint8_t g, std::uint8_t b, double a) {
    if (x < 0 || y < 0 || x >= w || y >= h) return;
    std::uint8_t* p = px.data() + (y * w + x) * 3;
    p[0] = static_cast<std::uint8_t>(p[0] * (1 - a) + b * a);
    p[1] = static_cast<std::uint8_t>(p[1] * (1 - a) + g * a);
    p[2] = static_cast<std::uint8_t>(p[2] * (1 - a) + r * a);
  }

  void line(long x0, long y0, long x1, long y1, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    const long dx = std::labs(x1 - x0), dy = -std::labs(y1 - y0);
    const long sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    long err = dx + dy;
    while (true) {
      set(x0, y0, r, g, b);
      if (x0 == x1 && y0 == y1) break;
      const long e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }

  void write_bmp(const std::filesystem::path& path) const {
    const long row_bytes = (w * 3 + 3) & ~3L;
    const long data_size = row_bytes * h;
    const long file_size = 54 + data_size;
    std::string head(54, '\0');
    auto put32 = [&](std::size_t off, std::uint32_t v) {
      for (int i = 0; i < 4; ++i) head[off + i] = static_cast<char>((v >> (8 * i)) & 0xff);
    };
    auto put16 = [&](std::size_t off, std::uint16_t v) {
      head[off] = static_cast<char>(v & 0xff);
      head[off + 1] = static_cast<char>(v >> 8);
    };
    head[0] = 'B';
    head[1] = 'M';
    put32(2, static_cast<std::uint32_t>(file_size));
    put32(10, 54);
    put32(14, 40);
    put32(18, static_cast<std::uint32_t>(w));
    put32(22, static_cast<std::uint32_t>(h));
    put16(26, 1);
    put16(28, 24);
    put32(34, static_cast<std::uint32_t>(data_size));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write image " + path.string());
    out.write(head.data(), 54);
    std::vector<char> row(static_cast<std::size_t>(row_bytes), 0);
    for (long y = h - 1; y >= 0; --y) {  // BMP stores bottom-up
      std::copy(px.begin() + y * w * 3, px.begin() + (y + 1) * w * 3, row.begin());
      out.write(row.data(), row_bytes);
    }
    if (!out) throw IoError("short write to image " + path.string());
  }
};

struct Rgb {
  std::uint8_t r, g, b;
};
const Rgb kPalette[] = {{31, 119, 180}, {214, 39, 40}, {44, 160, 44},
                        {148, 103, 189}, {255, 127, 14}, {23, 190, 207}};

}  // namespace

void plot_curves(const std::vector<MetricLog>& logs, const std::vector<std::string>& keys,
                 const std::filesystem::path& out_path) {
  if (logs.empty()) throw ValidationError("plot_curves needs at least one log");
  if (keys.empty()) throw ValidationError("plot_curves needs at least one key");

  struct Band {
    std::vector<long> steps;
    std::vector<double> mid, lo, hi;
  };
  std::vector<Band> bands;

  for (const std::string& key : keys) {
    // union of steps; every log contributes the values it has
    std::map<long, std::vector<double>> column;
    bool found = false;
    for (const MetricLog& log : logs) {
      for (const auto& [step, value] : log.series(key)) {
        column[step].push_back(value);
        found = true;
      }
    }
    if (!found) throw ValidationError("key '" + key + "' is absent from every log");
    Band band;
    for (const auto& [step, values] : column) {
      const CiResult ci = iqm_ci(values, 200, nullptr, 0.95, 1234 + step);
      band.steps.push_back(step);
      band.mid.push_back(ci.iqm);
      band.lo.push_back(ci.lo);
      band.hi.push_back(ci.hi);
    }
    bands.push_back(std::move(band));
  }

  long min_step = bands[0].steps.front(), max_step = bands[0].steps.back();
  double min_v = bands[0].lo[0], max_v = bands[0].hi[0];
  for (const Band& b : bands) {
    min_step = std::min(min_step, b.steps.front());
    max_step = std::max(max_step, b.steps.back());
    for (double v : b.lo) min_v = std::min(min_v, v);
    for (double v : b.hi) max_v = std::max(max_v, v);
  }
  if (max_step == min_step) max_step = min_step + 1;
  if (max_v - min_v < 1e-12) {
    max_v += 1;
    min_v -= 1;
  }

  Canvas canvas(800, 480);
  const long mx = 60, my = 40;  // margins
  auto sx = [&](long step) {
    return mx + static_cast<long>((canvas.w - 2 * mx) *
                                  static_cast<double>(step - min_step) /
                                  static_cast<double>(max_step - min_step));
  };
  auto sy = [&](double v) {
    return canvas.h - my -
           static_cast<long>((canvas.h - 2 * my) * (v - min_v) / (max_v - min_v));
  };

  // axes
  canvas.line(mx, my, mx, canvas.h - my, 0, 0, 0);
  canvas.line(mx, canvas.h - my, canvas.w - mx, canvas.h - my, 0, 0, 0);

  for (std::size_t k = 0; k < bands.size(); ++k) {
    const Band& b = bands[k];
    const Rgb c = kPalette[k % 6];
    // CI band
    for (std::size_t i = 0; i + 1 < b.steps.size(); ++i) {
      const long x0 = sx(b.steps[i]), x1 = sx(b.steps[i + 1]);
      for (long x = x0; x <= x1; ++x) {
        const double f = x1 == x0 ? 0 : static_cast<double>(x - x0) / (x1 - x0);
        const double lo = b.lo[i] * (1 - f) + b.lo[i + 1] * f;
        const double hi = b.hi[i] * (1 - f) + b.hi[i + 1] * f;
        for (long y = sy(hi); y <= sy(lo); ++y) canvas.blend(x, y, c.r, c.g, c.b, 0.25);
      }
    }
    // IQM line
    for (std::size_t i = 0; i + 1 < b.steps.size(); ++i)
      canvas.line(sx(b.steps[i]), sy(b.mid[i]), sx(b.steps[i + 1]), sy(b.mid[i + 1]), c.r, c.g,
                  c.b);
    if (b.steps.size() == 1) canvas.set(sx(b.steps[0]), sy(b.mid[0]), c.r, c.g, c.b);
  }

  canvas.write_bmp(out_path);
}

}  // namespace apv
