#include "apv/nn.hpp"

#include <cmath>

namespace apv {

Param& ParamStore::add(std::string name, Tensor init) {
  if (index_.count(name)) throw ValidationError("duplicate parameter name: " + name);
  auto p = std::make_unique<Param>();
  p->name = name;
  p->value = std::move(init);
  p->adam_m = Tensor::zeros(p->value.shape());
  p->adam_v = Tensor::zeros(p->value.shape());
  index_.emplace(std::move(name), items_.size());
  items_.push_back(std::move(p));
  return *items_.back();
}

Param* ParamStore::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : items_[it->second].get();
}

const Param* ParamStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : items_[it->second].get();
}

Param& ParamStore::get(const std::string& name) {
  Param* p = find(name);
  if (!p) throw ValidationError("unknown parameter: " + name);
  return *p;
}

std::vector<Param*> ParamStore::group(const std::string& group_name) {
  std::vector<Param*> out;
  for (auto& p : items_)
    if (p->group() == group_name) out.push_back(p.get());
  return out;
}

std::vector<Param*> ParamStore::all() {
  std::vector<Param*> out;
  out.reserve(items_.size());
  for (auto& p : items_) out.push_back(p.get());
  return out;
}

std::vector<const Param*> ParamStore::all() const {
  std::vector<const Param*> out;
  out.reserve(items_.size());
  for (auto& p : items_) out.push_back(p.get());
  return out;
}

real Adam::step(Tape& tape, const std::vector<std::pair<Param*, Var>>& bound,
                const std::vector<std::string>& groups) {
  auto in_groups = [&](const Param& p) {
    if (groups.empty()) return true;
    const std::string g = p.group();
    for (const auto& s : groups)
      if (s == g) return true;
    return false;
  };

  std::vector<std::pair<Param*, const Tensor*>> todo;
  real sq = 0;
  for (const auto& [param, var] : bound) {
    if (param->frozen || !in_groups(*param)) continue;
    if (!tape.grad_touched(var)) continue;
    const Tensor& g = tape.grad(var);
    for (long i = 0; i < g.size(); ++i) sq += g.at(i) * g.at(i);
    todo.emplace_back(param, &g);
  }
  const real norm = std::sqrt(sq);
  const real scale = (cfg_.clip_norm > 0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : real(1);

  ++step_;
  const real bc1 = 1 - std::pow(cfg_.beta1, static_cast<real>(step_));
  const real bc2 = 1 - std::pow(cfg_.beta2, static_cast<real>(step_));
  for (auto& [param, grad] : todo) {
    Tensor& m = param->adam_m;
    Tensor& v = param->adam_v;
    Tensor& w = param->value;
    for (long i = 0; i < w.size(); ++i) {
      const real g = grad->at(i) * scale;
      m.at(i) = cfg_.beta1 * m.at(i) + (1 - cfg_.beta1) * g;
      v.at(i) = cfg_.beta2 * v.at(i) + (1 - cfg_.beta2) * g * g;
      const real mhat = m.at(i) / bc1;
      const real vhat = v.at(i) / bc2;
      w.at(i) -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
  return norm;
}

Tensor glorot_uniform(std::vector<long> shape, long fan_in, long fan_out, std::uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  const real limit = std::sqrt(real(6) / static_cast<real>(fan_in + fan_out));
  for (long i = 0; i < t.size(); ++i) t.at(i) = rng.uniform(-limit, limit);
  return t;
}

Dense make_dense(ParamStore& ps, const std::string& name, long in, long out,
                 std::uint64_t seed) {
  Dense d;
  d.in = in;
  d.out = out;
  d.w = &ps.add(name + "/w", glorot_uniform({in, out}, in, out, Rng::derive(seed, name + "/w")));
  d.b = &ps.add(name + "/b", Tensor::zeros({1, out}));
  return d;
}

Var dense(Binder& bind, const Dense& d, Var x) {
  return ops::linear(bind.tape(), x, bind(*d.w), bind(*d.b));
}

Var dense_elu(Binder& bind, const Dense& d, Var x) {
  return ops::elu_(bind.tape(), dense(bind, d, x));
}

GruCell make_gru(ParamStore& ps, const std::string& name, long x_dim, long h_dim,
                 std::uint64_t seed) {
  GruCell cell;
  cell.x_dim = x_dim;
  cell.h_dim = h_dim;
  cell.gates = make_dense(ps, name + "/gates", x_dim + h_dim, 2 * h_dim, seed);
  cell.cand = make_dense(ps, name + "/cand", x_dim + h_dim, h_dim, seed);
  return cell;
}

Var gru_step(Binder& bind, const GruCell& cell, Var x, Var h) {
  Tape& t = bind.tape();
  Var xh = ops::concat_cols(t, {x, h});
  Var gates = dense(bind, cell.gates, xh);
  Var r = ops::sigmoid_(t, ops::slice_cols(t, gates, 0, cell.h_dim));
  Var u = ops::sigmoid_(t, ops::slice_cols(t, gates, cell.h_dim, cell.h_dim));
  Var rh = ops::mul(t, r, h);
  Var cand = ops::tanh_(t, dense(bind, cell.cand, ops::concat_cols(t, {x, rh})));
  Var one_minus_u = ops::add_scalar(t, ops::neg(t, u), real(1));
  return ops::add(t, ops::mul(t, u, h), ops::mul(t, one_minus_u, cand));
}

ConvLayer make_conv(ParamStore& ps, const std::string& name, ConvSpec spec, std::uint64_t seed) {
  ConvLayer l;
  l.spec = spec;
  const long patch = spec.kernel * spec.kernel * spec.in_c;
  const long fan_out = spec.kernel * spec.kernel * spec.out_c;
  l.w = &ps.add(name + "/w",
                glorot_uniform({spec.out_c, patch}, patch, fan_out, Rng::derive(seed, name + "/w")));
  l.b = &ps.add(name + "/b", Tensor::zeros({1, spec.out_c}));
  return l;
}

ConvLayer make_deconv(ParamStore& ps, const std::string& name, ConvSpec spec, std::uint64_t seed) {
  ConvLayer l;
  l.spec = spec;
  const long patch = spec.kernel * spec.kernel * spec.out_c;
  const long fan_in = spec.kernel * spec.kernel * spec.in_c;
  l.w = &ps.add(name + "/w",
                glorot_uniform({spec.in_c, patch}, fan_in, patch, Rng::derive(seed, name + "/w")));
  l.b = &ps.add(name + "/b", Tensor::zeros({1, spec.out_c}));
  return l;
}

}  // namespace apv
