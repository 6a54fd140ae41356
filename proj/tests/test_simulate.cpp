#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "glmmvb/io.hpp"
#include "glmmvb/simulate.hpp"

using namespace glmmvb;

TEST(Generate, NearZeroVarianceAndZeroEffectsGiveHalf) {
  auto design = SimDesign::defaults(SimKind::LogisticIntercept, 10000, 81);
  design.sigma2 = 1e-12;
  design.beta = Vector::Zero(2);
  const auto data = generate(design);
  double sum = 0.0;
  double count = 0.0;
  for (const auto& s : data.subjects) {
    sum += s.y.sum();
    count += static_cast<double>(s.n());
  }
  EXPECT_NEAR(sum / count, 0.5, 0.015);
}

TEST(Generate, PoissonMeanMatchesMonteCarloMoment) {
  const auto design = SimDesign::defaults(SimKind::PoissonIntercept, 10000, 82);
  const auto data = generate(design);
  double sum = 0.0;
  double sum2 = 0.0;
  double count = 0.0;
  for (const auto& s : data.subjects) {
    for (Index j = 0; j < s.n(); ++j) {
      sum += s.y(j);
      sum2 += s.y(j) * s.y(j);
      count += 1.0;
    }
  }
  const double mean = sum / count;
  // Observations within a subject share b_i, so the standard error is taken
  // over subject totals.
  double subj_sum2 = 0.0;
  for (const auto& s : data.subjects) {
    const double t = s.y.sum() / static_cast<double>(s.n());
    subj_sum2 += (t - mean) * (t - mean);
  }
  const double m = static_cast<double>(data.subjects.size());
  const double se = std::sqrt(subj_sum2 / (m - 1.0) / m);

  // E[exp(beta0 + beta1 U + b)] by 10^7 draws from an unrelated generator.
  std::mt19937_64 gen(2024);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> norm(0.0, std::sqrt(design.sigma2));
  double oracle = 0.0;
  const int draws = 10000000;
  for (int k = 0; k < draws; ++k) {
    oracle += std::exp(design.beta(0) + design.beta(1) * unif(gen) + norm(gen));
  }
  oracle /= draws;
  EXPECT_NEAR(mean, oracle, 3.0 * se) << "se " << se;
}

TEST(Generate, LogisticCovariateIsJOverN) {
  const auto data = generate(SimDesign::defaults(SimKind::LogisticIntercept, 20, 83));
  for (const auto& s : data.subjects) {
    ASSERT_EQ(s.n(), 8);
    for (Index j = 0; j < 8; ++j) {
      EXPECT_EQ(s.X(j, 1), static_cast<double>(j + 1) / 8.0);
      EXPECT_EQ(s.X(j, 0), 1.0);
      EXPECT_EQ(s.Z(j, 0), 1.0);
    }
  }
}

TEST(Generate, DecoysAreUniformOnMinusOneZeroOne) {
  const auto data = generate(SimDesign::defaults(SimKind::LogisticModelSelect, 2000, 84));
  EXPECT_EQ(data.x_names, (std::vector<std::string>{"x1", "x2", "x3"}));
  EXPECT_EQ(data.z_names, (std::vector<std::string>{"z1", "z2"}));
  for (const auto column : {0, 1}) {
    double counts[3] = {0.0, 0.0, 0.0};
    double n = 0.0;
    for (const auto& s : data.subjects) {
      const Vector v = column == 0 ? Vector(s.X.col(2)) : Vector(s.Z.col(1));
      for (Index j = 0; j < v.size(); ++j) {
        ASSERT_TRUE(v(j) == -1.0 || v(j) == 0.0 || v(j) == 1.0) << v(j);
        counts[static_cast<int>(v(j)) + 1] += 1.0;
        n += 1.0;
      }
    }
    const double sd = std::sqrt(n * (1.0 / 3.0) * (2.0 / 3.0));
    for (const double c : counts) {
      EXPECT_NEAR(c, n / 3.0, 3.0 * sd);
    }
  }
}

TEST(Generate, PoissonCovariateIsUnitUniform) {
  const auto data = generate(SimDesign::defaults(SimKind::PoissonIntercept, 500, 85));
  double sum = 0.0;
  double n = 0.0;
  for (const auto& s : data.subjects) {
    ASSERT_EQ(s.n(), 5);
    for (Index j = 0; j < s.n(); ++j) {
      EXPECT_GT(s.X(j, 1), 0.0);
      EXPECT_LT(s.X(j, 1), 1.0);
      sum += s.X(j, 1);
      n += 1.0;
    }
  }
  EXPECT_NEAR(sum / n, 0.5, 3.0 * std::sqrt(1.0 / 12.0 / n));
}

TEST(Generate, SameSeedSameBytes) {
  for (const auto kind : {SimKind::LogisticIntercept, SimKind::LogisticModelSelect, SimKind::PoissonIntercept}) {
    const auto design = SimDesign::defaults(kind, 50, 86);
    EXPECT_EQ(io::dataset_csv(generate(design)), io::dataset_csv(generate(design)));
    auto other = design;
    other.seed = 87;
    EXPECT_NE(io::dataset_csv(generate(design)), io::dataset_csv(generate(other)));
  }
}

TEST(Generate, DesignValidationAndParsing) {
  auto d = SimDesign::defaults(SimKind::LogisticIntercept, 10, 0);
  d.sigma2 = 0.0;
  EXPECT_THROW(generate(d), InvalidInputError);
  d = SimDesign::defaults(SimKind::LogisticIntercept, 0, 0);
  EXPECT_THROW(generate(d), InvalidInputError);
  EXPECT_EQ(parse_sim_kind("poisson"), SimKind::PoissonIntercept);
  EXPECT_EQ(parse_sim_kind("logistic-select"), SimKind::LogisticModelSelect);
  EXPECT_THROW(parse_sim_kind("probit"), InvalidInputError);
  const auto p = SimDesign::defaults(SimKind::PoissonIntercept);
  EXPECT_EQ(p.n_i, 5u);
  EXPECT_EQ(p.sigma2, 0.2);
  EXPECT_EQ(p.m, 1000u);
}

TEST(Generate, SidecarRecordsTruth) {
  const auto design = SimDesign::defaults(SimKind::LogisticIntercept, 10, 88);
  const auto j = io::simulation_sidecar(design);
  EXPECT_EQ(j.at("seed").get<std::uint64_t>(), 88u);
  EXPECT_EQ(j.at("sigma2").get<double>(), 1.5);
  EXPECT_EQ(j.at("beta").at(0).get<double>(), -1.5);
  EXPECT_EQ(j.at("rng").get<std::string>(), "philox4x32-10");
}
