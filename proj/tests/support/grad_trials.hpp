#pragma once

// Randomized finite-difference trials over every differentiable op and a
// two-layer MLP autoencoder composite.

#include <string>
#include <vector>

#include "cbae/nets.hpp"
#include "cbae/rng.hpp"
#include "gradcheck.hpp"

namespace cbae::testing {

struct GradTrial {
  std::string op;
  GradCheckResult result;
};

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), true);
}

// Values bounded away from 0 so a ±h perturbation never crosses the ReLU kink.
inline Tensor away_from_zero(Rng& rng, Shape shape) {
  Tensor t = random_tensor(rng, std::move(shape), 0.05, 1.0);
  for (auto& x : t.mutable_values()) {
    if (rng.uniform() < 0.5) x = -x;
  }
  return t;
}

// Reduces a non-scalar output to a scalar with fixed random weights, so every
// entry of the Jacobian contributes.
inline Tensor weighted_sum(Tape& tape, const Tensor& out, const Tensor& weights) {
  return sum(tape, mul(tape, out, weights));
}

inline std::vector<GradTrial> run_grad_trials(std::uint64_t seed, std::size_t rounds) {
  Rng rng(seed);
  std::vector<GradTrial> trials;
  auto dim = [&] { return 1 + rng.index(4); };
  auto fixed = [&](Shape s) {
    Tensor t = random_tensor(rng, std::move(s));
    t.set_requires_grad(false);
    return t;
  };

  for (std::size_t round = 0; round < rounds; ++round) {
    const std::size_t m = dim(), k = dim(), n = dim();

    {
      Tensor r = fixed({m, n});
      trials.push_back({"matmul", check_gradients(
                                      [r](Tape& t, const std::vector<Tensor>& in) {
                                        return weighted_sum(t, matmul(t, in[0], in[1]), r);
                                      },
                                      {random_tensor(rng, {m, k}), random_tensor(rng, {k, n})})});
    }
    {
      Tensor r = fixed({m, n});
      trials.push_back({"add", check_gradients(
                                   [r](Tape& t, const std::vector<Tensor>& in) {
                                     return weighted_sum(t, add(t, in[0], in[1]), r);
                                   },
                                   {random_tensor(rng, {m, n}), random_tensor(rng, {m, n})})});
      trials.push_back({"mul", check_gradients(
                                   [r](Tape& t, const std::vector<Tensor>& in) {
                                     return weighted_sum(t, mul(t, in[0], in[1]), r);
                                   },
                                   {random_tensor(rng, {m, n}), random_tensor(rng, {m, n})})});
      trials.push_back({"add_row", check_gradients(
                                       [r](Tape& t, const std::vector<Tensor>& in) {
                                         return weighted_sum(t, add_row(t, in[0], in[1]), r);
                                       },
                                       {random_tensor(rng, {m, n}), random_tensor(rng, {n})})});
      const double factor = rng.uniform(-2.0, 2.0);
      trials.push_back({"scale", check_gradients(
                                     [r, factor](Tape& t, const std::vector<Tensor>& in) {
                                       return weighted_sum(t, scale(t, in[0], factor), r);
                                     },
                                     {random_tensor(rng, {m, n})})});
      trials.push_back({"relu", check_gradients(
                                    [r](Tape& t, const std::vector<Tensor>& in) {
                                      return weighted_sum(t, relu(t, in[0]), r);
                                    },
                                    {away_from_zero(rng, {m, n})})});
      trials.push_back({"sigmoid", check_gradients(
                                       [r](Tape& t, const std::vector<Tensor>& in) {
                                         return weighted_sum(t, sigmoid(t, in[0]), r);
                                       },
                                       {random_tensor(rng, {m, n}, -4.0, 4.0)})});
      trials.push_back({"softmax", check_gradients(
                                       [r](Tape& t, const std::vector<Tensor>& in) {
                                         return weighted_sum(t, softmax(t, in[0]), r);
                                       },
                                       {random_tensor(rng, {m, n}, -3.0, 3.0)})});
      trials.push_back({"sum", check_gradients(
                                   [](Tape& t, const std::vector<Tensor>& in) {
                                     return sum(t, in[0]);
                                   },
                                   {random_tensor(rng, {m, n})})});
      trials.push_back({"mean", check_gradients(
                                    [](Tape& t, const std::vector<Tensor>& in) {
                                      return mean(t, in[0]);
                                    },
                                    {random_tensor(rng, {m, n})})});
    }
    {
      Tensor r = fixed({m, n});
      trials.push_back({"linear", check_gradients(
                                      [r](Tape& t, const std::vector<Tensor>& in) {
                                        return weighted_sum(t, linear(t, in[0], in[1], in[2]), r);
                                      },
                                      {random_tensor(rng, {m, k}), random_tensor(rng, {n, k}),
                                       random_tensor(rng, {n})})});
    }
    trials.push_back({"mse_loss", check_gradients(
                                      [](Tape& t, const std::vector<Tensor>& in) {
                                        return mse_loss(t, in[0], in[1]);
                                      },
                                      {random_tensor(rng, {m, n}), random_tensor(rng, {m, n})})});
    {
      const std::size_t classes = 2 + rng.index(4);
      std::vector<std::size_t> targets(m);
      for (auto& y : targets) y = rng.index(classes);
      trials.push_back({"cross_entropy", check_gradients(
                                             [targets](Tape& t, const std::vector<Tensor>& in) {
                                               return cross_entropy(t, in[0], targets);
                                             },
                                             {random_tensor(rng, {m, classes}, -3.0, 3.0)})});
      // neg_entropy needs rows summing to 1, which a raw perturbation breaks;
      // checked through softmax, the way training uses it.
      trials.push_back({"neg_entropy", check_gradients(
                                           [](Tape& t, const std::vector<Tensor>& in) {
                                             return neg_entropy(t, softmax(t, in[0]));
                                           },
                                           {random_tensor(rng, {m, classes}, -3.0, 3.0)})});
    }
    {
      // Two-layer autoencoder: encoder [d→h→z], decoder [z→h→d], MSE loss.
      const std::size_t d = 2 + rng.index(4), h = 2 + rng.index(3), z = 1 + rng.index(3);
      Tensor x = fixed({m, d});
      for (auto& v : x.mutable_values()) v = 0.5 + 0.5 * v;
      trials.push_back({"mlp_autoencoder",
                        check_gradients(
                            [x](Tape& t, const std::vector<Tensor>& in) {
                              Tensor a = relu(t, linear(t, x, in[0], in[1]));
                              Tensor lat = linear(t, a, in[2], in[3]);
                              Tensor b = relu(t, linear(t, lat, in[4], in[5]));
                              Tensor y = sigmoid(t, linear(t, b, in[6], in[7]));
                              return mse_loss(t, y, x);
                            },
                            {random_tensor(rng, {h, d}), random_tensor(rng, {h}, 0.1, 0.5),
                             random_tensor(rng, {z, h}), random_tensor(rng, {z}),
                             random_tensor(rng, {h, z}), random_tensor(rng, {h}, 0.1, 0.5),
                             random_tensor(rng, {d, h}), random_tensor(rng, {d})})});
    }
  }
  return trials;
}

}  // namespace cbae::testing
