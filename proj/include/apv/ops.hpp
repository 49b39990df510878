#pragma once

#include <vector>

#include "apv/rng.hpp"
#include "apv/tape.hpp"

namespace apv {

// All activations are 2-D [rows, features]. Convolutions interpret the
// feature axis as channel-major C*H*W and carry explicit geometry.
struct ConvSpec {
  long in_c = 0, in_h = 0, in_w = 0;
  long out_c = 0;
  long kernel = 4, stride = 2, pad = 1;

  long out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  long out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  // Transposed geometry: output spatial size when used as a deconvolution.
  long tr_out_h() const { return (in_h - 1) * stride + kernel - 2 * pad; }
  long tr_out_w() const { return (in_w - 1) * stride + kernel - 2 * pad; }
};

namespace ops {

Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var div(Tape& t, Var a, Var b);
Var neg(Tape& t, Var a);
Var scale(Tape& t, Var a, real s);
Var add_scalar(Tape& t, Var a, real s);

Var matmul(Tape& t, Var a, Var b);
// y = x*W + b with x [N,K], W [K,M], b [1,M]
Var linear(Tape& t, Var x, Var w, Var b);

Var concat_cols(Tape& t, const std::vector<Var>& parts);
Var slice_cols(Tape& t, Var x, long start, long len);
Var concat_rows(Tape& t, const std::vector<Var>& parts);
Var slice_rows(Tape& t, Var x, long start, long len);
// x [N,F] * m [N,1], broadcasting m across the row
Var row_broadcast_mul(Tape& t, Var x, Var m);

Var tanh_(Tape& t, Var a);
Var sigmoid_(Tape& t, Var a);
Var elu_(Tape& t, Var a);
Var exp_(Tape& t, Var a);
Var log_(Tape& t, Var a);
Var softplus_(Tape& t, Var a);
Var erf_(Tape& t, Var a);
// Inverse standard normal CDF, elementwise; input must lie in (0,1).
Var norm_icdf_(Tape& t, Var a);

Var max_scalar(Tape& t, Var a, real c);
Var min_scalar(Tape& t, Var a, real c);
Var stop_grad(Tape& t, Var a);

Var sum_all(Tape& t, Var a);
Var mean_all(Tape& t, Var a);
Var sum_rows(Tape& t, Var a);  // [N,F] -> [N,1]

// Grouped softmax over consecutive blocks of `classes` within each row.
Var softmax_groups(Tape& t, Var x, long classes);
Var log_softmax_groups(Tape& t, Var x, long classes);

// Straight-through one-hot categorical sample: forward value is exactly
// one-hot per group; gradient follows the softmax probabilities.
Var onehot_straight_through(Tape& t, Var logits, long classes, Rng& rng);

Var conv2d(Tape& t, Var x, Var w, Var b, const ConvSpec& spec);
Var conv2d_transpose(Tape& t, Var x, Var w, Var b, const ConvSpec& spec);

}  // namespace ops

// Value-level helpers shared with the ops above.
double inverse_norm_cdf(double p);
Tensor sample_onehot_groups(const Tensor& probs, long classes, Rng& rng);

}  // namespace apv
