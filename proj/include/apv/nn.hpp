#pragma once

#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "apv/ops.hpp"
#include "apv/rng.hpp"
#include "apv/tape.hpp"

namespace apv {

// Named trainable array plus its optimizer state. Group membership is the
// name prefix up to the first '/': "encoder/conv0/w" belongs to "encoder".
struct Param {
  std::string name;
  Tensor value;
  Tensor adam_m, adam_v;
  bool frozen = false;

  std::string group() const { return name.substr(0, name.find('/')); }
};

class ParamStore {
 public:
  Param& add(std::string name, Tensor init);
  Param* find(const std::string& name);
  const Param* find(const std::string& name) const;
  Param& get(const std::string& name);
  std::vector<Param*> group(const std::string& group_name);
  std::vector<Param*> all();
  std::vector<const Param*> all() const;
  std::size_t size() const { return items_.size(); }

 private:
  std::vector<std::unique_ptr<Param>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Binds params onto a tape, once each, remembering the order of first use.
class Binder {
 public:
  Binder(Tape& tape, bool train) : tape_(tape), train_(train) {}

  Var operator()(Param& p) {
    auto it = cache_.find(&p);
    if (it != cache_.end()) return it->second;
    Var v = tape_.leaf(p.value, train_ && !p.frozen);
    cache_.emplace(&p, v);
    bound_.emplace_back(&p, v);
    return v;
  }

  const std::vector<std::pair<Param*, Var>>& bound() const { return bound_; }
  Tape& tape() { return tape_; }

 private:
  Tape& tape_;
  bool train_;
  std::unordered_map<Param*, Var> cache_;
  std::vector<std::pair<Param*, Var>> bound_;
};

struct AdamConfig {
  real lr = 3e-4;
  real beta1 = 0.9;
  real beta2 = 0.999;
  real eps = 1e-8;
  real clip_norm = 100.0;
};

// Adam with global gradient-norm clipping over the updated set.
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  // Updates every bound param whose group is in `groups` (all when empty),
  // skipping frozen params. Returns the pre-clip global gradient norm.
  real step(Tape& tape, const std::vector<std::pair<Param*, Var>>& bound,
            const std::vector<std::string>& groups = {});

  long steps_taken() const { return step_; }

 private:
  AdamConfig cfg_;
  long step_ = 0;
};

// Fresh-init helpers; the seed is derived from (master seed, param name) so
// initialization is independent of creation order.
Tensor glorot_uniform(std::vector<long> shape, long fan_in, long fan_out, std::uint64_t seed);

struct Dense {
  Param* w = nullptr;
  Param* b = nullptr;
  long in = 0, out = 0;
};

Dense make_dense(ParamStore& ps, const std::string& name, long in, long out, std::uint64_t seed);
Var dense(Binder& bind, const Dense& d, Var x);
Var dense_elu(Binder& bind, const Dense& d, Var x);

// Single GRU cell: gates [x+h -> 2H] (reset, update) and candidate
// [x + r*h -> H].
struct GruCell {
  Dense gates;
  Dense cand;
  long x_dim = 0, h_dim = 0;
};

GruCell make_gru(ParamStore& ps, const std::string& name, long x_dim, long h_dim,
                 std::uint64_t seed);
Var gru_step(Binder& bind, const GruCell& cell, Var x, Var h);

struct ConvLayer {
  Param* w = nullptr;
  Param* b = nullptr;
  ConvSpec spec;
};

ConvLayer make_conv(ParamStore& ps, const std::string& name, ConvSpec spec, std::uint64_t seed);
ConvLayer make_deconv(ParamStore& ps, const std::string& name, ConvSpec spec, std::uint64_t seed);

}  // namespace apv
