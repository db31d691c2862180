#include "masf/report.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

#include "masf/errors.hpp"

namespace masf {

void Summary::flag_winners() {
  std::map<std::vector<std::string>, std::size_t> best;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].winner = false;
    auto it = best.find(rows[i].params);
    if (it == best.end() || rows[i].rmse_mean < rows[it->second].rmse_mean) best[rows[i].params] = i;
  }
  for (const auto& [params, i] : best) {
    if (std::isfinite(rows[i].rmse_mean)) rows[i].winner = true;
  }
}

ReportFormat report_format_from_string(const std::string& s) {
  if (s == "csv") return ReportFormat::csv;
  if (s == "json") return ReportFormat::json;
  if (s == "markdown" || s == "md" || s == "markdown-table") return ReportFormat::markdown;
  throw ConfigError("format", "unknown report format '" + s + "'");
}

std::string format_sig4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

namespace {

std::string csv_table(const Summary& s, bool with_winner) {
  std::string out = "method";
  for (const auto& p : s.param_names) out += "," + p;
  out += ",rmse_mean,rmse_std,n_seeds";
  if (with_winner) out += ",winner";
  out += "\n";
  for (const auto& r : s.rows) {
    out += r.method;
    for (const auto& p : r.params) out += "," + p;
    out += "," + format_sig4(r.rmse_mean) + "," + format_sig4(r.rmse_std) + "," +
           std::to_string(r.n_seeds);
    if (with_winner) out += r.winner ? ",1" : ",0";
    out += "\n";
  }
  return out;
}

std::string markdown(const Summary& s) {
  std::map<std::vector<std::string>, std::vector<const SummaryRow*>> groups;
  for (const auto& r : s.rows) groups[r.params].push_back(&r);
  std::string out;
  for (const auto& [params, rows] : groups) {
    if (!s.param_names.empty()) {
      out += "###";
      for (std::size_t i = 0; i < params.size(); ++i) {
        out += (i ? ", " : " ") + s.param_names[i] + " = " + params[i];
      }
      out += "\n\n";
    }
    out += "| method | rmse_mean | rmse_std | n_seeds |\n|---|---|---|---|\n";
    for (const SummaryRow* r : rows) {
      const std::string mean = format_sig4(r->rmse_mean);
      out += "| " + r->method + " | " + (r->winner ? "**" + mean + "**" : mean) + " | " +
             format_sig4(r->rmse_std) + " | " + std::to_string(r->n_seeds) + " |\n";
    }
    out += "\n";
  }
  if (groups.empty()) out = "| method | rmse_mean | rmse_std | n_seeds |\n|---|---|---|---|\n";
  return out;
}

}  // namespace

std::string summary_csv(const Summary& s) { return csv_table(s, false); }

std::string render(const Summary& s, ReportFormat format) {
  switch (format) {
    case ReportFormat::csv: return csv_table(s, true);
    case ReportFormat::json: return summary_to_json(s).dump(2) + "\n";
    case ReportFormat::markdown: return markdown(s);
  }
  return {};
}

Json summary_to_json(const Summary& s) {
  Json j;
  j["param_names"] = s.param_names;
  j["rows"] = Json::array();
  for (const auto& r : s.rows) {
    Json row;
    row["method"] = r.method;
    row["params"] = r.params;
    row["rmse_mean"] = std::isfinite(r.rmse_mean) ? Json(r.rmse_mean) : Json(nullptr);
    row["rmse_std"] = std::isfinite(r.rmse_std) ? Json(r.rmse_std) : Json(nullptr);
    row["n_seeds"] = r.n_seeds;
    row["winner"] = r.winner;
    j["rows"].push_back(row);
  }
  return j;
}

Summary summary_from_json(const Json& j) {
  try {
    Summary s;
    s.param_names = j.at("param_names").get<std::vector<std::string>>();
    for (const auto& row : j.at("rows")) {
      SummaryRow r;
      r.method = row.at("method").get<std::string>();
      r.params = row.at("params").get<std::vector<std::string>>();
      const auto num = [](const Json& v) {
        return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
      };
      r.rmse_mean = num(row.at("rmse_mean"));
      r.rmse_std = num(row.at("rmse_std"));
      r.n_seeds = row.at("n_seeds").get<int>();
      r.winner = row.at("winner").get<bool>();
      if (r.params.size() != s.param_names.size()) throw ConfigError("summary", "row has wrong arity");
      s.rows.push_back(std::move(r));
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("summary", e.what());
  }
}

}  // namespace masf
