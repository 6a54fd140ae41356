#include <gtest/gtest.h>

#include <cmath>

#include "glmmvb/glmm.hpp"
#include "support/oracles.hpp"

using namespace glmmvb;

namespace {

Subject one_obs_subject(const std::string& id, double y) {
  return Subject{id, Vector::Constant(1, y), Matrix::Ones(1, 1), Matrix::Ones(1, 1), Vector::Zero(1)};
}

double relative_error(const Matrix& a, const Matrix& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(1.0, b.cwiseAbs().maxCoeff());
}

}  // namespace

TEST(FamilyLinks, SymmetryPoints) {
  const auto bern = family_links(Family::Bernoulli, Vector::Zero(1));
  EXPECT_DOUBLE_EQ(bern.b(0), std::log(2.0));
  EXPECT_DOUBLE_EQ(bern.bdot(0), 0.5);
  EXPECT_DOUBLE_EQ(bern.bddot(0), 0.25);
  const auto pois = family_links(Family::Poisson, Vector::Zero(1));
  EXPECT_EQ(pois.b(0), 1.0);
  EXPECT_EQ(pois.bdot(0), 1.0);
  EXPECT_EQ(pois.bddot(0), 1.0);
}

TEST(FamilyLinks, BernoulliTailsAgainstLongDouble) {
  for (const double eta : {-700.0, -40.0, -5.0, 3.0, 40.0, 700.0}) {
    const auto lv = family_links(Family::Bernoulli, Vector::Constant(1, eta));
    const long double e = eta;
    const long double p = 1.0L / (1.0L + std::exp(-e));
    const long double q = 1.0L / (1.0L + std::exp(e));
    const long double b = e > 0 ? e + std::log1p(std::exp(-e)) : std::log1p(std::exp(e));
    EXPECT_GT(lv.bdot(0), 0.0);
    EXPECT_LE(lv.bdot(0), 1.0);  // rounds to 1 beyond eta ~ 37
    EXPECT_GT(lv.bddot(0), 0.0) << eta;
    EXPECT_LE(lv.bddot(0), 0.25);
    EXPECT_NEAR(lv.bdot(0) / static_cast<double>(p), 1.0, 1e-14);
    EXPECT_NEAR(lv.bddot(0) / static_cast<double>(p * q), 1.0, 1e-14);
    EXPECT_NEAR(lv.b(0) / static_cast<double>(b), 1.0, 1e-14);
  }
  // e^-40 must be resolved, not rounded to zero.
  const auto lv = family_links(Family::Bernoulli, Vector::Constant(1, -40.0));
  EXPECT_NEAR(std::log(lv.bddot(0)), -40.0, 1e-12);
}

TEST(FamilyLinks, NaNIsRejected) {
  EXPECT_THROW(family_links(Family::Poisson, Vector::Constant(1, std::nan(""))), InvalidInputError);
}

TEST(FamilyParsing, CanonicalLinksOnly) {
  EXPECT_EQ(parse_family("bernoulli"), Family::Bernoulli);
  EXPECT_EQ(parse_family("binomial", "logit"), Family::Bernoulli);
  EXPECT_EQ(parse_family("poisson", "log"), Family::Poisson);
  EXPECT_THROW(parse_family("bernoulli", "probit"), InvalidInputError);
  EXPECT_THROW(parse_family("poisson", "identity"), InvalidInputError);
  EXPECT_THROW(parse_family("gamma"), InvalidInputError);
}

TEST(GradHessian, SingleObservationHandCase) {
  const GlmmModel model(Family::Bernoulli, 1, 1, {one_obs_subject("a", 0.0)}, Prior::defaults(1, 1));
  const auto gh = grad_hessian(model, Vector::Zero(2), Matrix::Identity(1, 1));
  EXPECT_DOUBLE_EQ(gh.gradient(0), -0.5);
  EXPECT_DOUBLE_EQ(gh.gradient(1), -0.5);
  const Matrix h = oracle::dense(gh.hessian);
  EXPECT_DOUBLE_EQ(h(0, 0), -0.25 - 0.001);
  EXPECT_DOUBLE_EQ(h(0, 1), -0.25);
  EXPECT_DOUBLE_EQ(h(1, 0), -0.25);
  EXPECT_DOUBLE_EQ(h(1, 1), -1.25);
}

class GradHessianFiniteDifferences : public ::testing::TestWithParam<Family> {};

TEST_P(GradHessianFiniteDifferences, TwentyRandomModels) {
  Philox rng(GetParam() == Family::Bernoulli ? 31 : 32);
  for (int rep = 0; rep < 20; ++rep) {
    const Index p = 1 + rep % 3;
    const Index u = 1 + rep % 2;
    const auto model = oracle::random_model(GetParam(), 3, 4, p, u, rng, 10.0);
    const Vector alpha = 0.5 * oracle::random_matrix(model.alpha_dim(), 1, rng);
    const Matrix eq = oracle::random_spd(u, rng);
    const auto gh = grad_hessian(model, alpha, eq);
    const Vector fd_g = oracle::fd_gradient([&](const Vector& a) { return oracle::log_joint(model, a, eq); },
                                            alpha, 1e-5);
    EXPECT_LT(relative_error(gh.gradient, fd_g), 1e-5) << "rep " << rep;
    const Matrix fd_h = oracle::fd_jacobian([&](const Vector& a) { return grad_hessian(model, a, eq).gradient; },
                                            alpha, 1e-4);
    EXPECT_LT(relative_error(oracle::dense(gh.hessian), fd_h), 1e-4) << "rep " << rep;
  }
}

INSTANTIATE_TEST_SUITE_P(Families, GradHessianFiniteDifferences,
                         ::testing::Values(Family::Bernoulli, Family::Poisson));

TEST(GradHessian, OffsetsShiftTheLinearPredictor) {
  Subject s = one_obs_subject("a", 3.0);
  s.offset(0) = 0.7;
  const GlmmModel with(Family::Poisson, 1, 1, {s}, Prior::defaults(1, 1));
  const GlmmModel without(Family::Poisson, 1, 1, {one_obs_subject("a", 3.0)}, Prior::defaults(1, 1));
  const Vector alpha = (Vector(2) << 0.2, -0.1).finished();
  const Vector shifted = (Vector(2) << 0.9, -0.1).finished();
  const auto a = grad_hessian(with, alpha, Matrix::Identity(1, 1));
  const auto b = grad_hessian(without, shifted, Matrix::Identity(1, 1));
  // Same likelihood part; the beta prior term differs by the shift.
  EXPECT_NEAR(a.gradient(1), b.gradient(1), 1e-14);
  EXPECT_NEAR(a.gradient(0) + 0.2 / 1000.0, b.gradient(0) + 0.9 / 1000.0, 1e-14);
}

TEST(GradHessian, DimensionErrors) {
  const GlmmModel model(Family::Bernoulli, 1, 1, {one_obs_subject("a", 1.0)}, Prior::defaults(1, 1));
  EXPECT_THROW(grad_hessian(model, Vector::Zero(3), Matrix::Identity(1, 1)), DimensionError);
  EXPECT_THROW(grad_hessian(model, Vector::Zero(2), Matrix::Identity(2, 2)), DimensionError);
}

TEST(GlmmModelTest, Validation) {
  const Prior prior = Prior::defaults(1, 1);
  EXPECT_THROW(GlmmModel(Family::Bernoulli, 1, 1, {one_obs_subject("a", 2.0)}, prior), InvalidInputError);
  EXPECT_THROW(GlmmModel(Family::Poisson, 1, 1, {one_obs_subject("a", 1.5)}, prior), InvalidInputError);
  EXPECT_THROW(GlmmModel(Family::Poisson, 1, 1, {one_obs_subject("a", -1.0)}, prior), InvalidInputError);
  EXPECT_THROW(GlmmModel(Family::Poisson, 1, 1, {one_obs_subject("a", 1.0), one_obs_subject("a", 2.0)}, prior),
               InvalidInputError);
  Subject bad = one_obs_subject("b", 1.0);
  bad.X = Matrix::Ones(2, 1);
  EXPECT_THROW(GlmmModel(Family::Poisson, 1, 1, {bad}, prior), DimensionError);
  EXPECT_THROW(GlmmModel(Family::Poisson, 2, 1, {one_obs_subject("a", 1.0)}, prior), DimensionError);
}

TEST(GlmmModelTest, DefaultPrior) {
  const Prior prior = Prior::defaults(3, 2);
  EXPECT_TRUE(prior.mu_beta.isZero(0.0));
  EXPECT_TRUE(prior.sigma_beta.isApprox(1000.0 * Matrix::Identity(3, 3)));
  EXPECT_EQ(prior.nu, 3.0);
  EXPECT_TRUE(prior.S.isApprox(1000.0 * Matrix::Identity(2, 2)));
}

TEST(SubjectModeTest, NewtonFindsStationaryPoint) {
  Philox rng(33);
  for (const auto family : {Family::Bernoulli, Family::Poisson}) {
    const auto model = oracle::random_model(family, 5, 6, 2, 2, rng);
    const Vector beta = oracle::random_matrix(2, 1, rng);
    const Matrix q = oracle::random_spd(2, rng);
    for (const auto& s : model.subjects()) {
      const auto mode = find_subject_mode(family, s, beta, q);
      const auto h = [&](const Vector& b) {
        return subject_log_integrand(family, s, beta, q.llt(), q, b);
      };
      EXPECT_LT(oracle::fd_gradient(h, mode.mode, 1e-5).cwiseAbs().maxCoeff(), 1e-6);
      EXPECT_NEAR(mode.log_integrand, h(mode.mode), 1e-12);
    }
  }
}
