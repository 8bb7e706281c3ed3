#pragma once

#include <cstdint>
#include <span>

#include "bdlab/graph.hpp"

// Differentiable operators. Image batches use NCHW layout.
namespace bdlab::ops {

Var matmul(Var a, Var b);                   // [M,K] x [K,N] -> [M,N]
Var dense(Var x, Var weight, Var bias);     // [N,In] x [In,Out] + [Out]
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);                      // Hadamard
Var scale(Var a, double c);
Var sum(Var a);                             // -> [1]
Var mean(Var a);                            // -> [1]
Var abs_sum(Var a);                         // L1 norm -> [1]

Var relu(Var x);
Var sigmoid(Var x);

// x: [N,C,H,W], weight: [O,C,k,k], bias: [O]. Stride 1, symmetric zero pad.
Var conv2d(Var x, Var weight, Var bias, std::size_t pad = 0);
Var max_pool2d(Var x, std::size_t window = 2);   // stride == window, floor mode
Var global_avg_pool(Var x);                      // [N,C,H,W] -> [N,C]
Var flatten(Var x);                              // [N,...] -> [N,prod]

// Inverted dropout. The keep mask is a pure function of (seed, element index),
// so a replay with the same seed drops the same units. Identity when !training.
Var dropout(Var x, double rate, std::uint64_t seed, bool training);

Var softmax(Var logits);                                          // row-wise on [N,K]
Var cross_entropy(Var logits, std::span<const int> targets);      // mean over rows -> [1]

// (1 - m) * x + m * p per sample; mask [H,W] shared across channels and batch,
// pattern [C,H,W] shared across the batch.
Var mask_blend(Var x, Var mask, Var pattern);

// Plain (non-recorded) helpers for inference code.
Tensor softmax_rows(const Tensor& logits);

}  // namespace bdlab::ops
