#pragma once

// Central-difference check of every differentiable op on randomized shapes.
// The scalar loss is sum(op(inputs) * R) for a fixed random R, so every
// output element contributes to the gradient.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "bdlab/graph.hpp"
#include "bdlab/ops.hpp"
#include "oracles.hpp"

namespace gradcheck {

using namespace bdlab;

inline Tensor random_tensor(Shape s, std::mt19937_64& gen, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(s));
  for (auto& v : t.vec()) v = u(gen);
  return t;
}

// Keeps values clear of the kinks of relu/abs so finite differences stay valid.
inline void push_off_zero(Tensor& t) {
  for (auto& v : t.vec())
    if (std::abs(v) < 0.05) v = v < 0 ? v - 0.05 : v + 0.05;
}

struct Result {
  int instances = 0;
  double max_rel_error = 0.0;
  std::string worst;
};

// Cycles through the ops with growing shapes until `count` instances ran.
inline Result run(std::uint64_t seed, int count) {
  using Build = std::function<Var(Graph&, std::vector<Var>&)>;
  struct Case {
    const char* name;
    std::function<std::vector<Tensor>(std::mt19937_64&, int)> inputs;
    Build build;
  };
  const std::vector<int> targets = {2, 0, 1, 3, 1, 0};
  std::vector<Case> cases = {
      {"matmul", [](auto& gen, int v) { return std::vector{random_tensor({2u + v, 3}, gen), random_tensor({3, 2u + v}, gen)}; },
       [](Graph&, auto& in) { return ops::matmul(in[0], in[1]); }},
      {"dense", [](auto& gen, int v) {
         return std::vector{random_tensor({2, 4u + v}, gen), random_tensor({4u + v, 3}, gen), random_tensor({3}, gen)};
       },
       [](Graph&, auto& in) { return ops::dense(in[0], in[1], in[2]); }},
      {"add", [](auto& gen, int v) { return std::vector{random_tensor({3u + v}, gen), random_tensor({3u + v}, gen)}; },
       [](Graph&, auto& in) { return ops::add(in[0], in[1]); }},
      {"sub", [](auto& gen, int v) { return std::vector{random_tensor({2, 2u + v}, gen), random_tensor({2, 2u + v}, gen)}; },
       [](Graph&, auto& in) { return ops::sub(in[0], in[1]); }},
      {"mul", [](auto& gen, int v) { return std::vector{random_tensor({4u + v}, gen), random_tensor({4u + v}, gen)}; },
       [](Graph&, auto& in) { return ops::mul(in[0], in[1]); }},
      {"scale", [](auto& gen, int v) { return std::vector{random_tensor({3, 1u + v}, gen)}; },
       [](Graph&, auto& in) { return ops::scale(in[0], -1.7); }},
      {"mean", [](auto& gen, int v) { return std::vector{random_tensor({5u + v}, gen)}; },
       [](Graph&, auto& in) { return ops::mean(in[0]); }},
      {"abs_sum", [](auto& gen, int v) {
         auto t = random_tensor({6u + v}, gen);
         push_off_zero(t);
         return std::vector{t};
       },
       [](Graph&, auto& in) { return ops::abs_sum(in[0]); }},
      {"relu", [](auto& gen, int v) {
         auto t = random_tensor({2, 5u + v}, gen);
         push_off_zero(t);
         return std::vector{t};
       },
       [](Graph&, auto& in) { return ops::relu(in[0]); }},
      {"sigmoid", [](auto& gen, int v) { return std::vector{random_tensor({4u + v}, gen, -3, 3)}; },
       [](Graph&, auto& in) { return ops::sigmoid(in[0]); }},
      {"conv2d", [](auto& gen, int v) {
         return std::vector{random_tensor({2, 2, 5u + v, 5}, gen), random_tensor({3, 2, 3, 3}, gen), random_tensor({3}, gen)};
       },
       [](Graph&, auto& in) { return ops::conv2d(in[0], in[1], in[2], 1); }},
      {"max_pool2d", [](auto& gen, int v) { return std::vector{random_tensor({1, 2, 4u + 2u * v, 4}, gen)}; },
       [](Graph&, auto& in) { return ops::max_pool2d(in[0], 2); }},
      {"global_avg_pool", [](auto& gen, int v) { return std::vector{random_tensor({2, 3u + v, 3, 3}, gen)}; },
       [](Graph&, auto& in) { return ops::global_avg_pool(in[0]); }},
      {"flatten", [](auto& gen, int v) { return std::vector{random_tensor({2, 2, 2u + v, 3}, gen)}; },
       [](Graph&, auto& in) { return ops::flatten(in[0]); }},
      {"dropout", [](auto& gen, int v) { return std::vector{random_tensor({3, 4u + v}, gen)}; },
       [](Graph&, auto& in) { return ops::dropout(in[0], 0.4, 99, true); }},
      {"softmax", [](auto& gen, int v) { return std::vector{random_tensor({2, 3u + v}, gen, -2, 2)}; },
       [](Graph&, auto& in) { return ops::softmax(in[0]); }},
      {"cross_entropy", [](auto& gen, int v) { return std::vector{random_tensor({3u + v, 4}, gen, -2, 2)}; },
       [&targets](Graph&, auto& in) {
         return ops::cross_entropy(in[0], std::span<const int>(targets.data(), in[0].shape()[0]));
       }},
      {"mask_blend", [](auto& gen, int v) {
         return std::vector{random_tensor({2, 2, 3u + v, 3}, gen, 0, 1), random_tensor({3u + v, 3}, gen, 0, 1),
                            random_tensor({2, 3u + v, 3}, gen, 0, 1)};
       },
       [](Graph&, auto& in) { return ops::mask_blend(in[0], in[1], in[2]); }},
  };

  Result out;
  std::mt19937_64 gen(seed);
  int instances = 0;
  for (int variant = 0; instances < count; ++variant) {
    for (const auto& c : cases) {
      if (instances == count) break;
      const auto base = c.inputs(gen, variant);
      Graph probe;
      std::vector<Var> pv;
      for (const auto& t : base) pv.push_back(probe.constant(t));
      const Tensor weights = random_tensor(c.build(probe, pv).shape(), gen);

      auto loss_of = [&](const std::vector<Tensor>& in) {
        Graph g;
        std::vector<Var> v;
        for (const auto& t : in) v.push_back(g.constant(t));
        const Tensor out = c.build(g, v).value();
        double s = 0;
        for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * weights[i];
        return s;
      };

      std::vector<Parameter> params;
      for (std::size_t i = 0; i < base.size(); ++i) params.emplace_back("in" + std::to_string(i), base[i]);
      Graph g;
      std::vector<Var> v;
      for (auto& p : params) v.push_back(g.param(p));
      g.backward(ops::sum(ops::mul(c.build(g, v), g.constant(weights))));

      for (std::size_t k = 0; k < base.size(); ++k) {
        auto f = [&](const std::vector<double>& flat) {
          auto in = base;
          in[k] = Tensor(base[k].shape(), flat);
          return loss_of(in);
        };
        const auto numeric = oracle::numeric_gradient(f, base[k].vec(), 1e-4);
        for (std::size_t i = 0; i < numeric.size(); ++i) {
          const double a = params[k].grad[i], n = numeric[i];
          const double rel = std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-3});
          if (rel > out.max_rel_error) {
            out.max_rel_error = rel;
            out.worst = std::string(c.name) + " variant " + std::to_string(variant) + " input " +
                        std::to_string(k) + " element " + std::to_string(i);
          }
        }
      }
      ++instances;
    }
  }
  out.instances = instances;
  return out;
}

}  // namespace gradcheck
