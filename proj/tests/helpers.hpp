#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "ssigan/rng.hpp"
#include "ssigan/tensor.hpp"

namespace ssigan::testing {

inline ad::Tensor random_tensor(ad::Shape shape, Rng& rng, double sd = 1.0,
                                bool requires_grad = true) {
  ad::Tensor t(std::move(shape), requires_grad);
  for (std::int64_t i = 0; i < t.size(); ++i)
    t.data()[i] = rng.normal(0.0, sd);
  return t;
}

// Central finite differences against the recorded backward pass. `loss`
// must rebuild the graph from scratch on every call (inputs are mutated in
// place between evaluations). Returns the max relative error over all
// input elements.
inline double max_grad_rel_error(
    std::vector<ad::Tensor> inputs,
    const std::function<ad::Tensor(ad::Tape*)>& loss, double step = 1e-5,
    std::int64_t max_elements_per_input = -1) {
  ad::Tape tape;
  ad::Tensor l = loss(&tape);
  const double loss_magnitude = std::abs(l.item());
  tape.backward(l);
  // absolute noise floor of a central difference: cancellation of two loss
  // evaluations of this magnitude divided by the step, with safety margin
  const double atol = std::max(
      1e-9, 20.0 * std::numeric_limits<double>::epsilon() * loss_magnitude /
                step);
  std::vector<std::vector<double>> analytic;
  for (ad::Tensor& in : inputs) {
    in.node->ensure_grad();
    analytic.push_back(in.node->grad);
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    ad::Tensor& in = inputs[i];
    std::int64_t limit = in.size();
    if (max_elements_per_input > 0)
      limit = std::min(limit, max_elements_per_input);
    // elements far below the tensor's dominant gradient are pure
    // finite-difference noise, so the denominator is floored at a small
    // fraction of the largest adjoint in the tensor
    double scale = 0.0;
    for (double g : analytic[i]) scale = std::max(scale, std::abs(g));
    const double floor = std::max(1e-3 * scale, 1e-8);
    for (std::int64_t j = 0; j < limit; ++j) {
      const double saved = in.data()[j];
      in.data()[j] = saved + step;
      const double up = loss(nullptr).item();
      in.data()[j] = saved - step;
      const double down = loss(nullptr).item();
      in.data()[j] = saved;
      double numeric = (up - down) / (2.0 * step);
      const double got = analytic[i][j];
      if (std::abs(numeric - got) > atol &&
          std::abs(numeric - got) >
              1e-5 * std::max({std::abs(numeric), std::abs(got), floor})) {
        // a kink (leaky relu, clamp) inside the interval spoils the central
        // difference; retry with a smaller step before flagging
        const double h = step / 16.0;
        in.data()[j] = saved + h;
        const double up2 = loss(nullptr).item();
        in.data()[j] = saved - h;
        const double down2 = loss(nullptr).item();
        in.data()[j] = saved;
        const double numeric2 = (up2 - down2) / (2.0 * h);
        if (std::abs(numeric2 - got) < std::abs(numeric - got))
          numeric = numeric2;
      }
      if (std::abs(numeric - got) <= atol) continue;
      const double denom = std::max({std::abs(numeric), std::abs(got), floor});
      worst = std::max(worst, std::abs(numeric - got) / denom);
    }
    in.zero_grad();
  }
  return worst;
}

}  // namespace ssigan::testing
