#include "masf/schedule.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "masf/errors.hpp"

namespace masf {

namespace {

void check_closed(double t, const char* op) {
  if (!(t >= 0.0 && t <= 1.0)) {
    throw DomainError(std::string(op) + ": t must lie in [0, 1], got " + std::to_string(t));
  }
}

void check_half_open(double t, const char* op) {
  if (!(t >= 0.0 && t < 1.0)) {
    throw DomainError(std::string(op) + ": t must lie in [0, 1), got " + std::to_string(t));
  }
}

}  // namespace

std::string to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::cosine: return "cosine";
    case ScheduleKind::linear: return "linear";
    case ScheduleKind::vp_beta: return "vp-beta";
  }
  return "?";
}

ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "cosine") return ScheduleKind::cosine;
  if (s == "linear") return ScheduleKind::linear;
  if (s == "vp-beta" || s == "vp_beta") return ScheduleKind::vp_beta;
  throw ConfigError("schedule.kind", "unknown schedule kind '" + s + "'");
}

Schedule::Schedule(ScheduleKind kind, double beta_min, double beta_max, double t_terminal)
    : kind_(kind), beta_min_(beta_min), beta_max_(beta_max), t_terminal_(t_terminal) {
  if (!(t_terminal > 0.0 && t_terminal < 1.0)) {
    throw DomainError("schedule: t_terminal must lie in (0, 1)");
  }
  if (kind == ScheduleKind::vp_beta) {
    if (!(beta_min >= 0.0 && beta_max >= beta_min && beta_max > 0.0)) {
      throw DomainError("schedule: vp-beta requires 0 <= beta_min <= beta_max, beta_max > 0");
    }
    if (alpha(1.0) > kVpTerminalTolerance) {
      throw DomainError("schedule: vp-beta a(1) = " + std::to_string(alpha(1.0)) +
                        " exceeds 1e-4; increase beta_max");
    }
  }
}

Schedule Schedule::cosine(double t_terminal) {
  return Schedule(ScheduleKind::cosine, 0.0, 0.0, t_terminal);
}

Schedule Schedule::linear(double t_terminal) {
  return Schedule(ScheduleKind::linear, 0.0, 0.0, t_terminal);
}

Schedule Schedule::vp_beta(double beta_min, double beta_max, double t_terminal) {
  return Schedule(ScheduleKind::vp_beta, beta_min, beta_max, t_terminal);
}

double Schedule::alpha(double t) const {
  check_closed(t, "alpha");
  switch (kind_) {
    case ScheduleKind::cosine:
      if (t == 1.0) return 0.0;
      return std::cos(0.5 * std::numbers::pi * t);
    case ScheduleKind::linear:
      return 1.0 - t;
    case ScheduleKind::vp_beta: {
      const double integral = beta_min_ * t + 0.5 * (beta_max_ - beta_min_) * t * t;
      return std::exp(-0.5 * integral);
    }
  }
  return 0.0;
}

double Schedule::alpha_dot(double t) const {
  check_half_open(t, "alpha_dot");
  switch (kind_) {
    case ScheduleKind::cosine:
      return -0.5 * std::numbers::pi * std::sin(0.5 * std::numbers::pi * t);
    case ScheduleKind::linear:
      return -1.0;
    case ScheduleKind::vp_beta:
      return -0.5 * (beta_min_ + (beta_max_ - beta_min_) * t) * alpha(t);
  }
  return 0.0;
}

double Schedule::gamma_sq(double t) const {
  const double a = alpha(t);
  if (t == 1.0 && kind_ != ScheduleKind::vp_beta) return 1.0;
  return 1.0 - a * a;
}

double Schedule::gamma_sq_dot(double t) const {
  return -2.0 * alpha(t) * alpha_dot(t);
}

double Schedule::beta(double t) const {
  return -2.0 * alpha_dot(t) / alpha(t);
}

std::string Schedule::hash() const {
  std::ostringstream os;
  os.precision(17);
  os << to_string(kind_);
  if (kind_ == ScheduleKind::vp_beta) os << ":" << beta_min_ << ":" << beta_max_;
  os << ":T" << t_terminal_;
  return os.str();
}

}  // namespace masf
