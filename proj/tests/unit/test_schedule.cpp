#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "masf/errors.hpp"
#include "masf/schedule.hpp"

using masf::Schedule;

namespace {

std::vector<Schedule> all_schedules() {
  return {Schedule::cosine(), Schedule::linear(), Schedule::vp_beta()};
}

}  // namespace

TEST(Schedule, CosineAlphaValues) {
  const Schedule s = Schedule::cosine();
  EXPECT_DOUBLE_EQ(s.alpha(0.0), 1.0);
  EXPECT_DOUBLE_EQ(s.alpha(1.0), 0.0);
  EXPECT_NEAR(s.alpha(0.5), 0.70710678118654752, 1e-12);
}

TEST(Schedule, AlphaDotValues) {
  EXPECT_DOUBLE_EQ(Schedule::linear().alpha_dot(0.3), -1.0);
  EXPECT_DOUBLE_EQ(Schedule::linear().alpha_dot(0.0), -1.0);
  EXPECT_DOUBLE_EQ(Schedule::cosine().alpha_dot(0.0), 0.0);
  EXPECT_NEAR(Schedule::cosine().alpha_dot(0.5), -0.5 * std::numbers::pi * std::sin(std::numbers::pi / 4), 1e-12);
  EXPECT_NEAR(Schedule::cosine().alpha_dot(0.5), -1.11072, 1e-5);
}

TEST(Schedule, GammaSqValues) {
  const Schedule s = Schedule::cosine();
  EXPECT_DOUBLE_EQ(s.gamma_sq(0.0), 0.0);
  EXPECT_DOUBLE_EQ(s.gamma_sq(1.0), 1.0);
  EXPECT_NEAR(s.gamma_sq(0.5), 0.5, 1e-12);
  EXPECT_DOUBLE_EQ(Schedule::linear().gamma_sq(1.0), 1.0);
}

TEST(Schedule, DomainErrors) {
  for (const auto& s : all_schedules()) {
    EXPECT_THROW(s.alpha(-0.01), masf::DomainError);
    EXPECT_THROW(s.alpha(1.01), masf::DomainError);
    EXPECT_THROW(s.alpha_dot(1.0), masf::DomainError);
    EXPECT_THROW(s.gamma_sq(1.5), masf::DomainError);
    EXPECT_THROW(s.alpha(std::nan("")), masf::DomainError);
  }
}

TEST(Schedule, VpBetaTerminalGuard) {
  EXPECT_LE(Schedule::vp_beta().alpha(1.0), 1e-4);
  EXPECT_THROW(Schedule::vp_beta(0.1, 5.0), masf::DomainError);
  EXPECT_THROW(Schedule::cosine(1.0), masf::DomainError);
}

TEST(Schedule, PythagoreanIdentity) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (const auto& s : all_schedules()) {
    for (int i = 0; i < 100; ++i) {
      const double t = u(rng);
      EXPECT_NEAR(s.alpha(t) * s.alpha(t) + s.gamma_sq(t), 1.0, 1e-12);
    }
  }
}

TEST(Schedule, AlphaDotMatchesFiniteDifferences) {
  const double h = 1e-6;
  for (const auto& s : all_schedules()) {
    for (int i = 1; i <= 64; ++i) {
      const double t = i / 65.0;
      const double fd = (s.alpha(t + h) - s.alpha(t - h)) / (2 * h);
      const double an = s.alpha_dot(t);
      EXPECT_LE(std::abs(fd - an), 1e-6 * std::max(std::abs(an), 1e-3)) << masf::to_string(s.kind()) << " t=" << t;
    }
  }
}

TEST(Schedule, StrictlyDecreasing) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (const auto& s : all_schedules()) {
    std::vector<double> ts(200);
    for (auto& t : ts) t = u(rng);
    std::sort(ts.begin(), ts.end());
    for (std::size_t i = 1; i < ts.size(); ++i) {
      if (ts[i] > ts[i - 1]) EXPECT_GT(s.alpha(ts[i - 1]), s.alpha(ts[i]));
    }
  }
}

TEST(Schedule, GammaSqDotAndBeta) {
  const Schedule s = Schedule::cosine();
  const double h = 1e-6;
  for (double t : {0.1, 0.4, 0.8}) {
    EXPECT_NEAR(s.gamma_sq_dot(t), (s.gamma_sq(t + h) - s.gamma_sq(t - h)) / (2 * h), 1e-6);
    EXPECT_NEAR(s.beta(t), -2.0 * s.alpha_dot(t) / s.alpha(t), 1e-12);
  }
  const Schedule vp = Schedule::vp_beta(0.1, 40.0);
  EXPECT_NEAR(vp.beta(0.5), 0.1 + 39.9 * 0.5, 1e-9);
}

TEST(Schedule, KindStrings) {
  EXPECT_EQ(masf::schedule_kind_from_string("vp-beta"), masf::ScheduleKind::vp_beta);
  EXPECT_EQ(masf::schedule_kind_from_string("vp_beta"), masf::ScheduleKind::vp_beta);
  EXPECT_THROW(masf::schedule_kind_from_string("sigmoid"), masf::ConfigError);
  EXPECT_NE(Schedule::cosine().hash(), Schedule::linear().hash());
}
