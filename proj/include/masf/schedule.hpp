#pragma once

#include <string>

namespace masf {

enum class ScheduleKind { cosine, linear, vp_beta };

std::string to_string(ScheduleKind kind);
ScheduleKind schedule_kind_from_string(const std::string& s);

// Interpolation coefficient a(t) and noise coefficient gamma(t) of the forward
// process, with a(0) = 1, a(1) = 0 and gamma^2 = 1 - a^2.
//
//   cosine   a(t) = cos(pi t / 2)
//   linear   a(t) = 1 - t
//   vp_beta  a(t) = exp(-B(t) / 2), B(t) = beta_min t + (beta_max - beta_min) t^2 / 2
//
// vp_beta never reaches zero; construction rejects parameters with a(1) > 1e-4.
class Schedule {
 public:
  static constexpr double kDefaultTerminal = 0.992;
  static constexpr double kVpTerminalTolerance = 1e-4;

  Schedule() = default;
  static Schedule cosine(double t_terminal = kDefaultTerminal);
  static Schedule linear(double t_terminal = kDefaultTerminal);
  static Schedule vp_beta(double beta_min = 0.1, double beta_max = 40.0,
                          double t_terminal = kDefaultTerminal);

  ScheduleKind kind() const { return kind_; }
  double beta_min() const { return beta_min_; }
  double beta_max() const { return beta_max_; }
  double t_terminal() const { return t_terminal_; }

  double alpha(double t) const;
  double alpha_dot(double t) const;
  double gamma_sq(double t) const;
  double gamma_sq_dot(double t) const;
  // beta(t) = -2 d/dt log a(t); only finite on [0, 1).
  double beta(double t) const;

  // Stable identifier of kind and parameters, used in checkpoint metadata.
  std::string hash() const;

 private:
  Schedule(ScheduleKind kind, double beta_min, double beta_max, double t_terminal);

  ScheduleKind kind_ = ScheduleKind::cosine;
  double beta_min_ = 0.1;
  double beta_max_ = 40.0;
  double t_terminal_ = kDefaultTerminal;
};

}  // namespace masf
