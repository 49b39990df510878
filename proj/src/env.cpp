#include "apv/env.hpp"

#include <algorithm>
#include <cmath>

#include "apv/errors.hpp"

namespace apv {

namespace {

struct Color {
  std::uint8_t r, g, b;
};

// Per-view palette perturbation: rotate channels and shift brightness.
Color view_color(Color c, long view) {
  std::uint8_t ch[3] = {c.r, c.g, c.b};
  const long rot = view % 3;
  Color out{ch[rot % 3], ch[(1 + rot) % 3], ch[(2 + rot) % 3]};
  const int off = static_cast<int>((view * 13) % 33) - 16;
  auto adj = [off](std::uint8_t v) {
    int x = static_cast<int>(v) + off;
    return static_cast<std::uint8_t>(std::clamp(x, 0, 255));
  };
  return Color{adj(out.r), adj(out.g), adj(out.b)};
}

void fill_rect(std::vector<std::uint8_t>& img, long S, long x0, long y0, long x1, long y1,
               Color c) {
  x0 = std::clamp(x0, 0L, S - 1);
  y0 = std::clamp(y0, 0L, S - 1);
  x1 = std::clamp(x1, 0L, S - 1);
  y1 = std::clamp(y1, 0L, S - 1);
  for (long y = y0; y <= y1; ++y)
    for (long x = x0; x <= x1; ++x) {
      std::uint8_t* p = img.data() + (y * S + x) * 3;
      p[0] = c.r;
      p[1] = c.g;
      p[2] = c.b;
    }
}

void fill_circle(std::vector<std::uint8_t>& img, long S, long cx, long cy, long rad, Color c) {
  for (long y = std::max(0L, cy - rad); y <= std::min(S - 1, cy + rad); ++y)
    for (long x = std::max(0L, cx - rad); x <= std::min(S - 1, cx + rad); ++x)
      if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= rad * rad) {
        std::uint8_t* p = img.data() + (y * S + x) * 3;
        p[0] = c.r;
        p[1] = c.g;
        p[2] = c.b;
      }
}

void fill_diamond(std::vector<std::uint8_t>& img, long S, long cx, long cy, long rad, Color c) {
  for (long y = std::max(0L, cy - rad); y <= std::min(S - 1, cy + rad); ++y)
    for (long x = std::max(0L, cx - rad); x <= std::min(S - 1, cx + rad); ++x)
      if (std::labs(x - cx) + std::labs(y - cy) <= rad) {
        std::uint8_t* p = img.data() + (y * S + x) * 3;
        p[0] = c.r;
        p[1] = c.g;
        p[2] = c.b;
      }
}

void draw_line(std::vector<std::uint8_t>& img, long S, long x0, long y0, long x1, long y1,
               Color c) {
  const long dx = std::labs(x1 - x0), dy = -std::labs(y1 - y0);
  const long sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  long err = dx + dy;
  while (true) {
    if (x0 >= 0 && y0 >= 0 && x0 < S && y0 < S) {
      std::uint8_t* p = img.data() + (y0 * S + x0) * 3;
      p[0] = c.r;
      p[1] = c.g;
      p[2] = c.b;
    }
    if (x0 == x1 && y0 == y1) break;
    const long e2 = 2 * err;
    if (e2 >= dy) { err += dy; x0 += sx; }
    if (e2 <= dx) { err += dx; y0 += sy; }
  }
}

constexpr double kDotSpeed = 0.10;
constexpr double kSqrt2 = 1.4142135623730951;

}  // namespace

EnvName parse_env_name(const std::string& s) {
  if (s == "dot-reacher") return EnvName::DotReacher;
  if (s == "grid-rooms") return EnvName::GridRooms;
  if (s == "shape-world") return EnvName::ShapeWorld;
  throw ConfigError("unknown env name: " + s);
}

std::string env_name_string(EnvName n) {
  switch (n) {
    case EnvName::DotReacher: return "dot-reacher";
    case EnvName::GridRooms: return "grid-rooms";
    case EnvName::ShapeWorld: return "shape-world";
  }
  return "?";
}

void ToyEnvSpec::validate() const {
  if (image_size < 16) throw ConfigError("image_size too small");
  if (action_dim < 1) throw ConfigError("action_dim must be >= 1");
  if (episode_length < 1) throw ConfigError("episode_length must be >= 1");
  if (reward_max < reward_min) throw ConfigError("reward_range inverted");
}

ToyEnvSpec default_env_spec(EnvName name) {
  ToyEnvSpec s;
  s.name = name;
  if (name == EnvName::ShapeWorld) {
    s.reward_min = 0;
    s.reward_max = 0;
  }
  return s;
}

bool grid_is_wall(long cx, long cy) {
  const long G = kGridSize;
  if (cx <= 0 || cy <= 0 || cx >= G - 1 || cy >= G - 1) return true;
  const long mid = G / 2;  // 5
  if (cy == mid && !(cx == 2 || cx == 8)) return true;
  if (cx == mid && !(cy == 2 || cy == 8)) return true;
  return false;
}

ToyEnv::ToyEnv(ToyEnvSpec spec) : spec_(spec) { spec_.validate(); }

void ToyEnv::reset_state(std::uint64_t seed) {
  Rng rng(Rng::derive(seed, "env-reset"));
  success_ = false;
  step_count_ = 0;
  done_ = false;
  switch (spec_.name) {
    case EnvName::DotReacher: {
      ax_ = rng.uniform(0.1, 0.9);
      ay_ = rng.uniform(0.1, 0.9);
      gx_ = rng.uniform(0.1, 0.9);
      gy_ = rng.uniform(0.1, 0.9);
      break;
    }
    case EnvName::GridRooms: {
      cell_x_ = 1 + static_cast<long>(rng.uniform_index(4));
      cell_y_ = 1 + static_cast<long>(rng.uniform_index(4));
      goal_cx_ = 8;
      goal_cy_ = 8;
      break;
    }
    case EnvName::ShapeWorld: {
      shapes_.clear();
      static const Color palette[] = {{220, 60, 60}, {60, 200, 80}, {70, 110, 230},
                                      {230, 200, 60}, {200, 70, 200}};
      const int n_shapes = 3;
      for (int i = 0; i < n_shapes; ++i) {
        Shape s;
        s.x = rng.uniform(10, spec_.image_size - 10);
        s.y = rng.uniform(10, spec_.image_size - 10);
        s.vx = rng.uniform(1.0, 2.5) * (rng.uniform() < 0.5 ? -1 : 1);
        s.vy = rng.uniform(1.0, 2.5) * (rng.uniform() < 0.5 ? -1 : 1);
        s.kind = static_cast<int>(rng.uniform_index(3));
        const Color c = palette[rng.uniform_index(5)];
        s.r = c.r;
        s.g = c.g;
        s.b = c.b;
        shapes_.push_back(s);
      }
      break;
    }
  }
}

std::vector<std::uint8_t> ToyEnv::reset(std::uint64_t seed) {
  reset_state(seed);
  live_ = true;
  return render();
}

ToyEnv::StepResult ToyEnv::step(std::span<const double> action) {
  if (!live_) throw UsageError("step before reset");
  if (done_) throw UsageError("step after episode end");

  auto comp = [&](std::size_t i) {
    const double a = i < action.size() ? action[i] : 0.0;
    return std::clamp(a, -1.0, 1.0);
  };

  double reward = spec_.reward_min;
  switch (spec_.name) {
    case EnvName::DotReacher: {
      ax_ = std::clamp(ax_ + comp(0) * kDotSpeed, 0.0, 1.0);
      ay_ = std::clamp(ay_ + comp(1) * kDotSpeed, 0.0, 1.0);
      const double d = distance_to_goal() / kSqrt2;
      reward = spec_.reward_min + (spec_.reward_max - spec_.reward_min) * (1.0 - d);
      if (distance_to_goal() < 0.07) success_ = true;
      break;
    }
    case EnvName::GridRooms: {
      const double a0 = comp(0), a1 = comp(1);
      long dx = 0, dy = 0;
      if (std::abs(a0) >= std::abs(a1)) {
        if (std::abs(a0) > 0.3) dx = a0 > 0 ? 1 : -1;
      } else {
        if (std::abs(a1) > 0.3) dy = a1 > 0 ? 1 : -1;
      }
      if (!grid_is_wall(cell_x_ + dx, cell_y_ + dy)) {
        cell_x_ += dx;
        cell_y_ += dy;
      }
      if (cell_x_ == goal_cx_ && cell_y_ == goal_cy_) {
        reward = spec_.reward_max;
        success_ = true;
      }
      break;
    }
    case EnvName::ShapeWorld: {
      for (Shape& s : shapes_) {
        s.x += s.vx;
        s.y += s.vy;
        if (s.x < 6 || s.x > spec_.image_size - 6) {
          s.vx = -s.vx;
          s.x = std::clamp(s.x, 6.0, spec_.image_size - 6.0);
        }
        if (s.y < 6 || s.y > spec_.image_size - 6) {
          s.vy = -s.vy;
          s.y = std::clamp(s.y, 6.0, spec_.image_size - 6.0);
        }
      }
      reward = 0;
      break;
    }
  }

  ++step_count_;
  done_ = step_count_ >= spec_.episode_length;
  reward = std::clamp(reward, spec_.reward_min, spec_.reward_max);
  return StepResult{render(), reward, done_};
}

long ToyEnv::cell_index() const {
  if (spec_.name != EnvName::GridRooms) return -1;
  return cell_y_ * kGridSize + cell_x_;
}

long ToyEnv::num_cells() const {
  if (spec_.name != EnvName::GridRooms) return 0;
  long n = 0;
  for (long y = 0; y < kGridSize; ++y)
    for (long x = 0; x < kGridSize; ++x)
      if (!grid_is_wall(x, y)) ++n;
  return n;
}

std::vector<double> ToyEnv::proprio() const {
  switch (spec_.name) {
    case EnvName::DotReacher: return {ax_, ay_, gx_, gy_};
    case EnvName::GridRooms:
      return {static_cast<double>(cell_x_) / kGridSize, static_cast<double>(cell_y_) / kGridSize,
              static_cast<double>(goal_cx_) / kGridSize, static_cast<double>(goal_cy_) / kGridSize};
    case EnvName::ShapeWorld: return {};
  }
  return {};
}

double ToyEnv::distance_to_goal() const {
  if (spec_.name == EnvName::DotReacher)
    return std::sqrt((ax_ - gx_) * (ax_ - gx_) + (ay_ - gy_) * (ay_ - gy_));
  if (spec_.name == EnvName::GridRooms)
    return std::abs(cell_x_ - goal_cx_) + std::abs(cell_y_ - goal_cy_);
  return 0;
}

std::vector<double> ToyEnv::scripted_action(Rng& policy_rng) const {
  std::vector<double> a(static_cast<std::size_t>(spec_.action_dim), 0.0);
  switch (spec_.name) {
    case EnvName::DotReacher: {
      const double dx = gx_ - ax_, dy = gy_ - ay_;
      const double n = std::sqrt(dx * dx + dy * dy);
      if (n > 1e-9) {
        a[0] = std::clamp(dx / std::max(n, kDotSpeed) + 0.2 * policy_rng.uniform(-1, 1), -1.0, 1.0);
        if (spec_.action_dim > 1)
          a[1] = std::clamp(dy / std::max(n, kDotSpeed) + 0.2 * policy_rng.uniform(-1, 1), -1.0, 1.0);
      }
      break;
    }
    case EnvName::GridRooms: {
      // Route: east door of the top wall, then south door of the right wall,
      // then the goal. Door cells get an explicit push so the policy cannot
      // stall against the cross walls.
      const long mid = kGridSize / 2;
      long tx, ty;
      if (cell_x_ == mid) {
        tx = cell_x_ + 1;
        ty = cell_y_;
      } else if (cell_y_ == mid) {
        tx = cell_x_;
        ty = cell_y_ + 1;
      } else if (cell_x_ < mid && cell_y_ < mid) {
        tx = cell_y_ == 2 ? mid : mid - 1;
        ty = 2;
      } else if (cell_x_ > mid && cell_y_ < mid) {
        tx = 8;
        ty = cell_x_ == 8 ? mid : mid - 1;
      } else if (cell_x_ < mid) {  // bottom-left: head for the east door at (mid, 8)
        tx = cell_y_ == 8 ? mid : mid - 1;
        ty = 8;
      } else {
        tx = goal_cx_;
        ty = goal_cy_;
      }
      const long dx = tx - cell_x_, dy = ty - cell_y_;
      if (dx != 0 && (std::labs(dx) >= std::labs(dy) || dy == 0)) {
        a[0] = dx > 0 ? 1.0 : -1.0;
      } else if (dy != 0) {
        if (spec_.action_dim > 1) a[1] = dy > 0 ? 1.0 : -1.0;
      }
      break;
    }
    case EnvName::ShapeWorld:
      break;  // passive
  }
  return a;
}

std::vector<std::uint8_t> ToyEnv::render() const {
  const long S = spec_.image_size;
  std::vector<std::uint8_t> img(static_cast<std::size_t>(S) * S * 3);
  const long view = spec_.view;
  const long shift_x = (view % 3) - 1;
  const long shift_y = ((view / 3) % 3) - 1;

  const Color bg = view_color({14, 14, 20}, view);
  fill_rect(img, S, 0, 0, S - 1, S - 1, bg);

  switch (spec_.name) {
    case EnvName::DotReacher: {
      const Color goal = view_color({40, 235, 80}, view);
      const Color agent = view_color({245, 50, 40}, view);
      const Color tether = view_color({120, 120, 140}, view);
      const long gxp = static_cast<long>(gx_ * (S - 1)) + shift_x;
      const long gyp = static_cast<long>(gy_ * (S - 1)) + shift_y;
      const long axp = static_cast<long>(ax_ * (S - 1)) + shift_x;
      const long ayp = static_cast<long>(ay_ * (S - 1)) + shift_y;
      // tether makes the reach distance directly visible
      draw_line(img, S, axp, ayp, gxp, gyp, tether);
      fill_rect(img, S, gxp - 7, gyp - 7, gxp + 7, gyp + 7, goal);
      fill_circle(img, S, axp, ayp, 7, agent);
      break;
    }
    case EnvName::GridRooms: {
      const Color wall = view_color({95, 95, 120}, view);
      const Color floor = view_color({25, 25, 32}, view);
      const Color goal = view_color({60, 210, 90}, view);
      const Color agent = view_color({230, 70, 60}, view);
      const long cell = S / kGridSize;  // 5 for 64
      const long off = (S - cell * kGridSize) / 2;
      for (long cy = 0; cy < kGridSize; ++cy)
        for (long cx = 0; cx < kGridSize; ++cx) {
          const long x0 = off + cx * cell + shift_x;
          const long y0 = off + cy * cell + shift_y;
          fill_rect(img, S, x0, y0, x0 + cell - 1, y0 + cell - 1,
                    grid_is_wall(cx, cy) ? wall : floor);
        }
      const long gx0 = off + goal_cx_ * cell + shift_x;
      const long gy0 = off + goal_cy_ * cell + shift_y;
      fill_rect(img, S, gx0, gy0, gx0 + cell - 1, gy0 + cell - 1, goal);
      const long axp = off + cell_x_ * cell + shift_x;
      const long ayp = off + cell_y_ * cell + shift_y;
      fill_rect(img, S, axp + 1, ayp + 1, axp + cell - 2, ayp + cell - 2, agent);
      break;
    }
    case EnvName::ShapeWorld: {
      for (const Shape& s : shapes_) {
        const Color c = view_color({s.r, s.g, s.b}, view);
        const long cx = static_cast<long>(s.x) + shift_x;
        const long cy = static_cast<long>(s.y) + shift_y;
        if (s.kind == 0)
          fill_circle(img, S, cx, cy, 5, c);
        else if (s.kind == 1)
          fill_rect(img, S, cx - 4, cy - 4, cx + 4, cy + 4, c);
        else
          fill_diamond(img, S, cx, cy, 5, c);
      }
      break;
    }
  }
  return img;
}

}  // namespace apv
