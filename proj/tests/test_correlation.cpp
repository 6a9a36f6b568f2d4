#include <algorithm>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rosetta/correlation.hpp"
#include "support.hpp"

namespace rosetta {
namespace {

using test::error_kind;

std::vector<Prototype> random_protos(std::size_t k, std::size_t d, std::mt19937_64& rng, ClassId first = 0) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<Prototype> out;
  for (std::size_t i = 0; i < k; ++i) {
    Prototype p{first + i, std::vector<double>(d)};
    for (auto& v : p.vector) v = n(rng);
    out.push_back(std::move(p));
  }
  return out;
}

oracle::Matrix vectors(const std::vector<Prototype>& ps) {
  oracle::Matrix m;
  for (const auto& p : ps) m.push_back(p.vector);
  return m;
}

CorrelationMatrix column(std::vector<double> v) {
  const auto n = v.size();
  return CorrelationMatrix{0, 0, Tensor::matrix(n, 1, std::move(v))};
}

TEST(Prototypes, MeansPerClass) {
  const Tensor f = Tensor::matrix(4, 2, {1, 1, 5, 0, 3, 3, 7, 2});
  const auto p = prototypes_from_features(f, {0, 1, 0, 1}, {10, 11});
  ASSERT_EQ(p.size(), 2u);
  EXPECT_EQ(p[0], (Prototype{10, {2, 2}}));
  EXPECT_EQ(p[1], (Prototype{11, {6, 1}}));
  const auto single = prototypes_from_features(Tensor::matrix(1, 2, {4, 5}), {0}, {3});
  EXPECT_EQ(single[0].vector, (std::vector<double>{4, 5}));
}

TEST(Prototypes, RunningSumOracle) {
  std::mt19937_64 rng(1);
  const auto f = test::random_tensor({3, 4}, rng);
  const auto p = prototypes_from_features(f, {0, 0, 0}, {0});
  for (std::size_t j = 0; j < 4; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < 3; ++i) s += f.at(i, j);
    EXPECT_NEAR(p[0].vector[j], s / 3.0, 1e-15);
  }
}

TEST(Prototypes, EmptyClassNamed) {
  try {
    prototypes_from_features(Tensor::matrix(2, 1, {1, 2}), {0, 0}, {4, 17});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidArgument);
    EXPECT_NE(std::string(e.what()).find("17"), std::string::npos);
  }
  EXPECT_EQ(error_kind([] { prototypes_from_features(Tensor::matrix(1, 1, {1}), {2}, {0}); }), ErrorKind::OutOfRange);
}

TEST(ClassToClass, Examples) {
  const std::vector<Prototype> a{{0, {0, 0}}};
  const std::vector<Prototype> b{{1, {2, 2}}};
  EXPECT_EQ(class_to_class(a, b).at(0, 0), 4.0);
  EXPECT_EQ(class_to_class(a, a).at(0, 0), 0.0);
  const std::vector<Prototype> c{{2, {1, 2, 3}}};
  EXPECT_EQ(error_kind([&] { class_to_class(a, c); }), ErrorKind::Shape);
  EXPECT_EQ(error_kind([&] { class_to_class(a, {}); }), ErrorKind::InvalidArgument);
}

TEST(ClassToTask, Examples) {
  EXPECT_EQ(class_to_task(0, column({3, 1, 2}), false), 1.0);
  const CorrelationMatrix same{0, 0, Tensor::matrix(3, 3, {0, 9, 9, 5, 0, 9, 7, 9, 0})};
  EXPECT_EQ(class_to_task(0, same, true), 5.0);
  EXPECT_EQ(class_to_task(0, column({4, 4, 4}), false), 4.0);
  EXPECT_EQ(error_kind([] { class_to_task(0, column({1}), true); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(error_kind([] { class_to_task(1, column({1}), false); }), ErrorKind::OutOfRange);
}

TEST(TaskToTask, Examples) {
  const std::vector<Prototype> m{{0, {0.0}}, {1, {10.0}}};
  // Class 0 of n is 1 away from m's class 0, class 1 is sqrt(3) away from m's class 1.
  const std::vector<Prototype> n{{2, {1.0}}, {3, {10.0 + std::sqrt(3.0)}}};
  EXPECT_NEAR(task_to_task(n, m, false), 2.0, 1e-14);
  const std::vector<Prototype> one{{2, {3.0}}};
  EXPECT_EQ(task_to_task(one, m, false), class_to_task(0, class_to_class(m, one), false));
}

TEST(Correlation, BruteForceOracle) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t km = 1 + trial % 5, kn = 1 + (trial / 5) % 5, d = 1 + trial % 7;
    const auto pm = random_protos(km, d, rng);
    const auto pn = random_protos(kn, d, rng, 100);
    const auto M = class_to_class(pm, pn);
    for (std::size_t i = 0; i < km; ++i)
      for (std::size_t j = 0; j < kn; ++j) EXPECT_NEAR(M.at(i, j), oracle::mse(pm[i].vector, pn[j].vector), 1e-12);
    const double r_nm = task_to_task(pn, pm, false);
    EXPECT_NEAR(r_nm, oracle::task_correlation(vectors(pn), vectors(pm), false), 1e-12);
    const double r_mm = km >= 2 ? oracle::task_correlation(vectors(pm), vectors(pm), true) : 0.0;
    EXPECT_NEAR(intra_task_baseline(pm), r_mm, 1e-12);
    EXPECT_NEAR(gdc_weight(r_nm, intra_task_baseline(pm)), oracle::phi(r_nm, r_mm), 1e-12);
  }
}

TEST(Correlation, TransposeSymmetry) {
  std::mt19937_64 rng(3);
  const auto a = random_protos(3, 4, rng);
  const auto b = random_protos(5, 4, rng);
  const auto ab = class_to_class(a, b);
  const auto ba = class_to_class(b, a);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(ab.at(i, j), ba.at(j, i));
  for (double v : ab.entries.data) EXPECT_GE(v, 0.0);
}

TEST(Correlation, TranslationInvariance) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    auto m = random_protos(3, 5, rng);
    auto n = random_protos(4, 5, rng);
    const double r = task_to_task(n, m, false);
    const double base = intra_task_baseline(m);
    const double phi = gdc_weight(r, base);
    std::normal_distribution<double> shift(0.0, 3.0);
    std::vector<double> t(5);
    for (auto& v : t) v = shift(rng);
    for (auto* set : {&m, &n})
      for (auto& p : *set)
        for (std::size_t j = 0; j < 5; ++j) p.vector[j] += t[j];
    EXPECT_NEAR(task_to_task(n, m, false), r, 1e-10);
    EXPECT_NEAR(intra_task_baseline(m), base, 1e-10);
    EXPECT_NEAR(gdc_weight(task_to_task(n, m, false), intra_task_baseline(m)), phi, 1e-9);
  }
}

TEST(Correlation, CommonPermutation) {
  std::mt19937_64 rng(5);
  const auto a = random_protos(4, 3, rng);
  const auto b = random_protos(4, 3, rng);
  std::vector<std::size_t> perm{2, 0, 3, 1};
  std::vector<Prototype> pa, pb;
  for (auto i : perm) {
    pa.push_back(a[i]);
    pb.push_back(b[i]);
  }
  const auto M = class_to_class(a, b);
  const auto P = class_to_class(pa, pb);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(P.at(i, j), M.at(perm[i], perm[j]));
  EXPECT_NEAR(task_to_task(pb, pa, false), task_to_task(b, a, false), 1e-15);
  EXPECT_NEAR(intra_task_baseline(pa), intra_task_baseline(a), 1e-15);
}

TEST(IntraTaskBaseline, SingleClassIsZero) {
  EXPECT_EQ(intra_task_baseline({{0, {1.0, 2.0}}}), 0.0);
  EXPECT_EQ(intra_task_baseline({{0, {0.0}}, {1, {2.0}}}), 4.0);
}

TEST(GdcWeight, Examples) {
  EXPECT_EQ(gdc_weight(3.0, 3.0), 0.0);
  EXPECT_EQ(gdc_weight(2.0, 1.0), 0.5);
  EXPECT_EQ(gdc_weight(1.0, 5.0), 0.0);
  EXPECT_EQ(gdc_weight(0.0, 0.0), 0.0);
  EXPECT_EQ(gdc_weight(1e-13, 0.0), 0.0);
  EXPECT_EQ(error_kind([] { gdc_weight(-1.0, 1.0); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(error_kind([] { gdc_weight(1.0, -1.0); }), ErrorKind::InvalidArgument);
}

TEST(GdcWeight, RangeAndMonotone) {
  std::mt19937_64 rng(6);
  std::exponential_distribution<double> e(0.5);
  for (int trial = 0; trial < 1000; ++trial) {
    const double r_mm = e(rng);
    const double a = e(rng), b = e(rng);
    const double lo = std::min(a, b), hi = std::max(a, b);
    const double pl = gdc_weight(lo, r_mm), ph = gdc_weight(hi, r_mm);
    EXPECT_GE(pl, 0.0);
    EXPECT_LE(ph, 1.0);
    if (lo > r_mm) {
      EXPECT_LE(pl, ph);
    }
  }
}

}  // namespace
}  // namespace rosetta
