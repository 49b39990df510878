#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "apv/rng.hpp"

namespace apv {

enum class EnvName { DotReacher, GridRooms, ShapeWorld };

EnvName parse_env_name(const std::string& s);
std::string env_name_string(EnvName n);

struct ToyEnvSpec {
  EnvName name = EnvName::DotReacher;
  long image_size = 64;
  long action_dim = 2;
  long episode_length = 100;
  double reward_min = 0.0;
  double reward_max = 10.0;
  std::uint64_t seed = 0;
  long view = 0;  // deterministic rendering variant ("camera")

  void validate() const;
};

ToyEnvSpec default_env_spec(EnvName name);

// Small pixel environments with fixed-length episodes and fully seeded
// dynamics: dot-reacher (dense reward, reach a goal point), grid-rooms
// (four rooms, sparse reward, exploration testbed) and shape-world
// (passive bouncing shapes for action-free pre-training).
class ToyEnv {
 public:
  explicit ToyEnv(ToyEnvSpec spec);

  std::vector<std::uint8_t> reset(std::uint64_t seed);

  struct StepResult {
    std::vector<std::uint8_t> obs;
    double reward = 0;
    bool done = false;
  };
  StepResult step(std::span<const double> action);

  const ToyEnvSpec& spec() const { return spec_; }
  long steps_taken() const { return step_count_; }
  bool done() const { return done_; }

  // Run-level introspection used by the harness.
  bool success() const { return success_; }
  long cell_index() const;                // grid-rooms cell id, -1 otherwise
  long num_cells() const;                 // floor cell count for coverage stats
  std::vector<double> proprio() const;    // low-dimensional true state
  double distance_to_goal() const;

  // Expert used for corpus generation; deterministic given the policy rng.
  std::vector<double> scripted_action(Rng& policy_rng) const;

 private:
  std::vector<std::uint8_t> render() const;
  void reset_state(std::uint64_t seed);

  ToyEnvSpec spec_;
  bool live_ = false;
  bool done_ = false;
  bool success_ = false;
  long step_count_ = 0;

  // dot-reacher / shared
  double ax_ = 0, ay_ = 0, gx_ = 0, gy_ = 0;
  // grid-rooms
  long cell_x_ = 0, cell_y_ = 0, goal_cx_ = 0, goal_cy_ = 0;
  // shape-world
  struct Shape {
    double x, y, vx, vy;
    int kind;
    std::uint8_t r, g, b;
  };
  std::vector<Shape> shapes_;
};

// Grid layout constants shared with tests.
inline constexpr long kGridSize = 11;
bool grid_is_wall(long cx, long cy);

}  // namespace apv
