#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "rosetta/diffcore.hpp"
#include "rosetta/error.hpp"

namespace rosetta::test {

using diff::Tensor;

inline Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data) v = u(rng);
  return t;
}

// Runs fn and reports the ErrorKind it threw, failing the test when it does not throw.
template <class Fn>
ErrorKind error_kind(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected rosetta::Error";
  return ErrorKind::Io;
}

// Plain central differences of a scalar function of one tensor.
inline Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, Tensor x, double h) {
  Tensor g = Tensor::zeros(x.shape);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = x.data[i];
    x.data[i] = orig + h;
    const double up = f(x);
    x.data[i] = orig - h;
    const double down = f(x);
    x.data[i] = orig;
    g.data[i] = (up - down) / (2.0 * h);
  }
  return g;
}

}  // namespace rosetta::test
