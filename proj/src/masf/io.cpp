#include "masf/io.hpp"

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <thread>

#include "masf/errors.hpp"

namespace masf {

namespace {

constexpr char kMatrixMagic[8] = {'M', 'A', 'S', 'F', 'M', 'A', 'T', '1'};
constexpr char kStateMagic[8] = {'M', 'A', 'S', 'F', 'S', 'T', 'A', '1'};

void write_matrix(std::ostream& os, const Eigen::MatrixXd& m) {
  const std::int64_t rows = m.rows();
  const std::int64_t cols = m.cols();
  os.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
  os.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
  os.write(reinterpret_cast<const char*>(rm.data()),
           static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(rm.size())));
}

Eigen::MatrixXd read_matrix(std::istream& is) {
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  is.read(reinterpret_cast<char*>(&rows), sizeof(rows));
  is.read(reinterpret_cast<char*>(&cols), sizeof(cols));
  if (!is || rows < 0 || cols < 0) throw Error("binary matrix: bad header");
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, cols);
  is.read(reinterpret_cast<char*>(rm.data()),
          static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(rm.size())));
  if (!is) throw Error("binary matrix: truncated data");
  return rm;
}

void check_magic(std::istream& is, const char (&magic)[8], const std::string& what) {
  char buf[8];
  is.read(buf, 8);
  if (!is || !std::equal(buf, buf + 8, magic)) throw Error(what + ": bad magic bytes");
}

std::vector<std::vector<double>> read_numeric_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  std::getline(in, line);  // header
  std::vector<std::vector<double>> rows;
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw Error(path.string() + ":" + std::to_string(lineno) + ": bad number '" + cell + "'");
      }
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": ragged row");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

std::string hash_hex(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()));
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw Error("cannot write " + tmp.string());
    os << content;
    if (!os) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_trajectory_csv(const std::filesystem::path& path, const Eigen::MatrixXd& traj, double dt) {
  std::string out = "t";
  for (Eigen::Index j = 0; j < traj.cols(); ++j) out += ",x_" + std::to_string(j + 1);
  out += "\n";
  for (Eigen::Index i = 0; i < traj.rows(); ++i) {
    out += format_double(static_cast<double>(i) * dt);
    for (Eigen::Index j = 0; j < traj.cols(); ++j) out += "," + format_double(traj(i, j));
    out += "\n";
  }
  write_file_atomic(path, out);
}

Eigen::MatrixXd read_trajectory_csv(const std::filesystem::path& path) {
  const auto rows = read_numeric_csv(path);
  if (rows.empty()) return {};
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()) - 1);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 1; j < rows[i].size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j) - 1) = rows[i][j];
  return m;
}

void save_matrix_binary(const std::filesystem::path& path, const Eigen::MatrixXd& m) {
  std::ostringstream os;
  os.write(kMatrixMagic, 8);
  write_matrix(os, m);
  write_file_atomic(path, os.str());
}

Eigen::MatrixXd load_matrix_binary(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  check_magic(is, kMatrixMagic, path.string());
  return read_matrix(is);
}

void write_measurements_csv(const std::filesystem::path& path,
                            const std::map<long, Eigen::VectorXd>& z) {
  std::string out = "step";
  const Eigen::Index d = z.empty() ? 0 : z.begin()->second.size();
  for (Eigen::Index j = 0; j < d; ++j) out += ",z_" + std::to_string(j + 1);
  out += "\n";
  for (const auto& [r, v] : z) {
    out += std::to_string(r);
    for (Eigen::Index j = 0; j < v.size(); ++j) out += "," + format_double(v[j]);
    out += "\n";
  }
  write_file_atomic(path, out);
}

std::map<long, Eigen::VectorXd> read_measurements_csv(const std::filesystem::path& path) {
  std::map<long, Eigen::VectorXd> out;
  for (const auto& row : read_numeric_csv(path)) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(row.size()) - 1);
    for (std::size_t j = 1; j < row.size(); ++j) v[static_cast<Eigen::Index>(j) - 1] = row[j];
    out[static_cast<long>(row[0])] = v;
  }
  return out;
}

std::string metrics_csv(const FilterRun& run) {
  std::string out = "step,rmse,ensemble_spread,is_measurement_step\n";
  for (std::size_t i = 0; i < run.steps.size(); ++i) {
    out += std::to_string(run.steps[i]) + "," + format_double(run.rmse[i]) + "," +
           format_double(run.spread[i]) + "," + (run.is_measurement_step[i] ? "1" : "0") + "\n";
  }
  return out;
}

std::string estimates_csv(const FilterRun& run) {
  std::string out = "step";
  for (Eigen::Index j = 0; j < run.estimates.cols(); ++j) out += ",x_" + std::to_string(j + 1);
  out += "\n";
  for (std::size_t i = 0; i < run.steps.size(); ++i) {
    out += std::to_string(run.steps[i]);
    for (Eigen::Index j = 0; j < run.estimates.cols(); ++j) {
      out += "," + format_double(run.estimates(static_cast<Eigen::Index>(i), j));
    }
    out += "\n";
  }
  return out;
}

std::string trace_csv(const std::map<long, std::vector<SamplerTraceRow>>& trace) {
  std::string out = "measurement_step,step,t,mean_score_norm,mean_guidance_norm\n";
  for (const auto& [r, rows] : trace) {
    for (const auto& row : rows) {
      out += std::to_string(r) + "," + std::to_string(row.step) + "," + format_double(row.t) + "," +
             format_double(row.mean_score_norm) + "," + format_double(row.mean_guidance_norm) + "\n";
    }
  }
  return out;
}

void save_filter_state(const std::filesystem::path& path, const FilterState& state,
                       const std::string& schedule_hash) {
  std::ostringstream os;
  os.write(kStateMagic, 8);
  const std::int64_t step = state.ensemble.step_index;
  const std::int32_t kind = state.ensemble.kind == EnsembleKind::prior ? 0 : 1;
  const std::int32_t has_net = state.net ? 1 : 0;
  os.write(reinterpret_cast<const char*>(&step), sizeof(step));
  os.write(reinterpret_cast<const char*>(&kind), sizeof(kind));
  os.write(reinterpret_cast<const char*>(&has_net), sizeof(has_net));
  write_matrix(os, state.ensemble.members);
  write_file_atomic(path, os.str());
  if (state.net) {
    std::filesystem::path net_path = path;
    net_path += ".net";
    save_checkpoint(*state.net, net_path, schedule_hash);
  }
}

FilterState load_filter_state(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  check_magic(is, kStateMagic, path.string());
  std::int64_t step = 0;
  std::int32_t kind = 0;
  std::int32_t has_net = 0;
  is.read(reinterpret_cast<char*>(&step), sizeof(step));
  is.read(reinterpret_cast<char*>(&kind), sizeof(kind));
  is.read(reinterpret_cast<char*>(&has_net), sizeof(has_net));
  if (!is) throw Error(path.string() + ": truncated state header");
  FilterState state;
  state.ensemble.step_index = step;
  state.ensemble.kind = kind == 0 ? EnsembleKind::prior : EnsembleKind::posterior;
  state.ensemble.members = read_matrix(is);
  if (has_net) {
    std::filesystem::path net_path = path;
    net_path += ".net";
    state.net = load_checkpoint(net_path);
  }
  return state;
}

}  // namespace masf
