#pragma once

#include <string>
#include <vector>

#include "masf/config.hpp"

namespace masf {

struct SummaryRow {
  std::string method;
  std::vector<std::string> params;  // one rendered value per Summary::param_names entry
  double rmse_mean = 0.0;
  double rmse_std = 0.0;
  int n_seeds = 0;
  bool winner = false;
};

struct Summary {
  std::vector<std::string> param_names;
  std::vector<SummaryRow> rows;

  // Marks the row with the lowest rmse_mean at each sweep point.
  void flag_winners();
};

enum class ReportFormat { csv, json, markdown };
ReportFormat report_format_from_string(const std::string& s);

// Four significant digits.
std::string format_sig4(double v);

// method, <params...>, rmse_mean, rmse_std, n_seeds
std::string summary_csv(const Summary& s);
// As summary_csv plus a winner column, or JSON, or markdown tables grouped
// by sweep point.
std::string render(const Summary& s, ReportFormat format);

Json summary_to_json(const Summary& s);
Summary summary_from_json(const Json& j);

}  // namespace masf
