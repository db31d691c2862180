#include "masf/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include "masf/errors.hpp"

namespace masf {

namespace {

bool is_nonnegative_integer(const Json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

// Reads keys from one JSON object and remembers which ones were consumed.
class Section {
 public:
  Section(const Json& parent, const std::string& name) : name_(name) {
    if (!parent.contains(name)) return;
    const Json& obj = parent.at(name);
    if (!obj.is_object()) throw ConfigError(name, "must be an object");
    obj_ = &obj;
  }

  bool has(const char* key) const { return obj_ && obj_->contains(key); }

  template <typename T>
  bool read(const char* key, T& out) {
    if (!has(key)) return false;
    used_.insert(key);
    const Json& v = obj_->at(key);
    const std::string field = name_ + "." + key;
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(field, "expected a boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(field, "expected an integer");
      out = v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(field, "expected a number");
      out = v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(field, "expected a string");
      out = v.get<std::string>();
    } else {
      static_assert(std::is_same_v<T, Json>);
      out = v;
    }
    return true;
  }

  void finish() const {
    if (!obj_) return;
    for (auto it = obj_->begin(); it != obj_->end(); ++it) {
      if (!used_.count(it.key())) throw ConfigError(name_ + "." + it.key(), "unknown key");
    }
  }

 private:
  std::string name_;
  const Json* obj_ = nullptr;
  std::set<std::string> used_;
};

const std::set<std::string> kFilterSections = {"dynamics", "observation", "schedule", "network",
                                                "train",    "sampler",     "filter"};

std::vector<long> read_long_list(const Json& v, const std::string& field) {
  if (!v.is_array()) throw ConfigError(field, "expected an array of integers");
  std::vector<long> out;
  for (const auto& e : v) {
    if (!e.is_number_integer()) throw ConfigError(field, "expected an array of integers");
    out.push_back(e.get<long>());
  }
  return out;
}

// Splits "section.key" and checks both parts exist in the filter schema.
std::pair<std::string, std::string> split_path(const std::string& path) {
  const auto dot = path.find('.');
  if (dot == std::string::npos || path.find('.', dot + 1) != std::string::npos) {
    throw ConfigError("experiment.sweep", "path '" + path + "' must look like section.key");
  }
  std::string section = path.substr(0, dot);
  if (!kFilterSections.count(section)) {
    throw ConfigError("experiment.sweep", "path '" + path + "' names an unknown section");
  }
  return {section, path.substr(dot + 1)};
}

Json apply_point(Json doc, const std::vector<std::pair<std::string, Json>>& point) {
  for (const auto& [path, value] : point) {
    const auto [section, key] = split_path(path);
    if (!doc.contains(section)) doc[section] = Json::object();
    doc[section][key] = value;
  }
  return doc;
}

}  // namespace

std::string canonical_sweep_path(const std::string& path) {
  if (path == "gap") return "filter.gap";
  if (path == "dynamics.F" || path == "F") return "dynamics.forcing";
  if (path == "dim" || path == "d") return "dynamics.dim";
  return path;
}

FilterConfig parse_filter_config_impl(const Json& doc, std::vector<std::string>* warnings) {
  if (!doc.is_object()) throw ConfigError("<root>", "configuration must be a JSON object");

  Section dyn(doc, "dynamics");
  std::string kind_name = "lorenz63";
  dyn.read("kind", kind_name);
  const DynamicsKind kind = dynamics_kind_from_string(kind_name);
  long dim = 0;
  dyn.read("dim", dim);
  if (kind == DynamicsKind::lorenz63 && dim != 0 && dim != 3) {
    throw ConfigError("dynamics.dim", "lorenz63 has dimension 3");
  }
  if (kind == DynamicsKind::lorenz96 && dyn.has("dim") && dim < 4) {
    throw ConfigError("dynamics.dim", "lorenz96 needs dim >= 4");
  }
  FilterConfig cfg = default_filter_config(kind, dim);
  dyn.read("dt", cfg.dynamics.dt);
  dyn.read("forcing", cfg.dynamics.forcing);
  dyn.read("sigma", cfg.dynamics.l63_sigma);
  dyn.read("rho", cfg.dynamics.l63_rho);
  dyn.read("beta", cfg.dynamics.l63_beta);
  dyn.read("process_noise", cfg.dynamics.process_noise);
  dyn.finish();
  cfg.network.state_dim = cfg.dynamics.dim;

  Section obs(doc, "observation");
  std::string obs_kind = "identity";
  obs.read("kind", obs_kind);
  cfg.observation.kind = operator_kind_from_string(obs_kind);
  obs.read("sigma", cfg.observation.sigma);
  obs.read("stride", cfg.observation.stride);
  Json mask;
  if (obs.read("mask", mask)) {
    if (!mask.is_array()) throw ConfigError("observation.mask", "expected an array");
    for (const auto& m : mask) {
      if (m.is_boolean()) {
        cfg.observation.mask.push_back(m.get<bool>());
      } else if (m.is_number_integer() && (m.get<int>() == 0 || m.get<int>() == 1)) {
        cfg.observation.mask.push_back(m.get<int>() == 1);
      } else {
        throw ConfigError("observation.mask", "entries must be booleans or 0/1");
      }
    }
  }
  Json matrix;
  if (obs.read("matrix", matrix)) {
    if (!matrix.is_array() || matrix.empty()) throw ConfigError("observation.matrix", "expected rows");
    const auto n = static_cast<Eigen::Index>(matrix.size());
    cfg.observation.matrix.resize(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Json& row = matrix[static_cast<std::size_t>(i)];
      if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != n) {
        throw ConfigError("observation.matrix", "must be square");
      }
      for (Eigen::Index j = 0; j < n; ++j) {
        if (!row[static_cast<std::size_t>(j)].is_number()) {
          throw ConfigError("observation.matrix", "entries must be numbers");
        }
        cfg.observation.matrix(i, j) = row[static_cast<std::size_t>(j)].get<double>();
      }
    }
  }
  obs.finish();
  if (cfg.observation.kind == OperatorKind::dense && cfg.observation.matrix.size() == 0) {
    throw ConfigError("observation.matrix", "required for the dense operator");
  }
  if (cfg.observation.kind != OperatorKind::grid_mask &&
      (!cfg.observation.mask.empty() || obs.has("stride"))) {
    throw ConfigError("observation.mask", "mask and stride apply only to grid_mask");
  }

  Section sch(doc, "schedule");
  std::string sch_kind = "cosine";
  double t_terminal = Schedule::kDefaultTerminal;
  double beta_min = 0.1;
  double beta_max = 40.0;
  sch.read("kind", sch_kind);
  const bool has_terminal = sch.read("t_terminal", t_terminal);
  sch.read("beta_min", beta_min);
  sch.read("beta_max", beta_max);
  sch.finish();
  switch (schedule_kind_from_string(sch_kind)) {
    case ScheduleKind::cosine: cfg.schedule = Schedule::cosine(t_terminal); break;
    case ScheduleKind::linear: cfg.schedule = Schedule::linear(t_terminal); break;
    case ScheduleKind::vp_beta: cfg.schedule = Schedule::vp_beta(beta_min, beta_max, t_terminal); break;
  }
  if (schedule_kind_from_string(sch_kind) != ScheduleKind::vp_beta &&
      (sch.has("beta_min") || sch.has("beta_max"))) {
    throw ConfigError("schedule.beta_min", "only used by the vp-beta schedule");
  }

  Section net(doc, "network");
  net.read("embed_dim", cfg.network.embed_dim);
  Json hidden;
  if (net.read("hidden", hidden)) {
    cfg.network.hidden.clear();
    for (long w : read_long_list(hidden, "network.hidden")) {
      if (w < 1) throw ConfigError("network.hidden", "widths must be positive");
      cfg.network.hidden.push_back(w);
    }
  }
  std::string act;
  if (net.read("activation", act)) cfg.network.activation = activation_from_string(act);
  net.finish();
  if (cfg.network.embed_dim < 0 || cfg.network.embed_dim % 2 != 0) {
    throw ConfigError("network.embed_dim", "must be even and >= 0");
  }

  Section tr(doc, "train");
  tr.read("epochs", cfg.train.epochs);
  tr.read("finetune_epochs", cfg.train.finetune_epochs);
  tr.read("batch_size", cfg.train.batch_size);
  tr.read("learning_rate", cfg.train.learning_rate);
  tr.read("adam_beta1", cfg.train.adam_beta1);
  tr.read("adam_beta2", cfg.train.adam_beta2);
  tr.read("adam_eps", cfg.train.adam_eps);
  tr.read("t_min", cfg.train.t_min);
  std::string weighting;
  if (tr.read("loss_weighting", weighting)) {
    cfg.train.loss_weighting = loss_weighting_from_string(weighting);
  }
  tr.read("finetune_layers", cfg.train.finetune_layers);
  tr.read("validation_split", cfg.train.validation_split);
  tr.finish();

  Section smp(doc, "sampler");
  cfg.sampler.eps = 1.0 - cfg.schedule.t_terminal();
  const bool has_eps = smp.read("eps", cfg.sampler.eps);
  smp.read("nfe", cfg.sampler.nfe);
  smp.read("guidance_scale", cfg.sampler.guidance_scale);
  smp.read("final_denoise", cfg.sampler.final_denoise);
  smp.finish();
  if (has_eps && has_terminal && std::abs(1.0 - cfg.sampler.eps - t_terminal) > 1e-12) {
    throw ConfigError("sampler.eps", "must equal 1 - schedule.t_terminal when both are set");
  }

  Section flt(doc, "filter");
  std::string method;
  if (flt.read("method", method)) cfg.method = method_from_string(method);
  flt.read("n_members", cfg.n_members);
  const bool has_steps = flt.read("n_steps", cfg.n_steps);
  const bool has_gap = flt.read("gap", cfg.gap);
  Json steps;
  if (flt.read("measurement_steps", steps)) {
    if (has_gap) throw ConfigError("filter.measurement_steps", "gap and measurement_steps are mutually exclusive");
    cfg.measurement_steps = read_long_list(steps, "filter.measurement_steps");
    for (long r : cfg.measurement_steps) {
      if (r == 0 && warnings) warnings->push_back("filter.measurement_steps: step 0 is never updated");
    }
    if (cfg.measurement_steps.empty() && warnings) {
      warnings->push_back("filter.measurement_steps: empty set, running a pure forecast");
    }
  }
  const bool has_start = flt.read("eval_start", cfg.eval_start);
  const bool has_end = flt.read("eval_end", cfg.eval_end);
  flt.read("init_perturbation", cfg.init_perturbation);
  flt.read("enkf_inflation", cfg.enkf_inflation);
  flt.read("retrain_each_step", cfg.retrain_each_step);
  flt.finish();
  if (has_steps && !has_end) cfg.eval_end = std::min(cfg.eval_end, cfg.n_steps);
  if (has_steps && !has_start) cfg.eval_start = std::min(cfg.eval_start, cfg.eval_end);

  cfg.validate();
  return cfg;
}

FilterConfig parse_filter_config(const Json& doc, std::vector<std::string>* warnings) {
  try {
    return parse_filter_config_impl(doc, warnings);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError("<config>", e.what());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("<config>", e.what());
  }
}

Json to_json(const FilterConfig& cfg) {
  Json j;
  Json& dyn = j["dynamics"];
  dyn["kind"] = to_string(cfg.dynamics.kind);
  dyn["dim"] = cfg.dynamics.dim;
  dyn["dt"] = cfg.dynamics.dt;
  if (cfg.dynamics.kind == DynamicsKind::lorenz63) {
    dyn["sigma"] = cfg.dynamics.l63_sigma;
    dyn["rho"] = cfg.dynamics.l63_rho;
    dyn["beta"] = cfg.dynamics.l63_beta;
  } else {
    dyn["forcing"] = cfg.dynamics.forcing;
  }
  dyn["process_noise"] = cfg.dynamics.process_noise;

  Json& obs = j["observation"];
  obs["kind"] = to_string(cfg.observation.kind);
  obs["sigma"] = cfg.observation.sigma;
  if (cfg.observation.kind == OperatorKind::grid_mask) {
    if (!cfg.observation.mask.empty()) {
      obs["mask"] = cfg.observation.mask;
    } else {
      obs["stride"] = cfg.observation.stride;
    }
  }
  if (cfg.observation.kind == OperatorKind::dense) {
    Json rows = Json::array();
    for (Eigen::Index i = 0; i < cfg.observation.matrix.rows(); ++i) {
      Json row = Json::array();
      for (Eigen::Index k = 0; k < cfg.observation.matrix.cols(); ++k) row.push_back(cfg.observation.matrix(i, k));
      rows.push_back(row);
    }
    obs["matrix"] = rows;
  }

  Json& sch = j["schedule"];
  sch["kind"] = to_string(cfg.schedule.kind());
  sch["t_terminal"] = cfg.schedule.t_terminal();
  if (cfg.schedule.kind() == ScheduleKind::vp_beta) {
    sch["beta_min"] = cfg.schedule.beta_min();
    sch["beta_max"] = cfg.schedule.beta_max();
  }

  Json& net = j["network"];
  net["embed_dim"] = cfg.network.embed_dim;
  net["hidden"] = cfg.network.hidden;
  net["activation"] = to_string(cfg.network.activation);

  Json& tr = j["train"];
  tr["epochs"] = cfg.train.epochs;
  tr["finetune_epochs"] = cfg.train.finetune_epochs;
  tr["batch_size"] = cfg.train.batch_size;
  tr["learning_rate"] = cfg.train.learning_rate;
  tr["adam_beta1"] = cfg.train.adam_beta1;
  tr["adam_beta2"] = cfg.train.adam_beta2;
  tr["adam_eps"] = cfg.train.adam_eps;
  tr["t_min"] = cfg.train.t_min;
  tr["loss_weighting"] = to_string(cfg.train.loss_weighting);
  tr["finetune_layers"] = cfg.train.finetune_layers;
  tr["validation_split"] = cfg.train.validation_split;

  Json& smp = j["sampler"];
  smp["nfe"] = cfg.sampler.nfe;
  smp["eps"] = cfg.sampler.eps;
  smp["guidance_scale"] = cfg.sampler.guidance_scale;
  smp["final_denoise"] = cfg.sampler.final_denoise;

  Json& flt = j["filter"];
  flt["method"] = to_string(cfg.method);
  flt["n_members"] = cfg.n_members;
  flt["n_steps"] = cfg.n_steps;
  if (cfg.measurement_steps.empty()) {
    flt["gap"] = cfg.gap;
  } else {
    flt["measurement_steps"] = cfg.measurement_steps;
  }
  flt["eval_start"] = cfg.eval_start;
  flt["eval_end"] = cfg.eval_end;
  flt["init_perturbation"] = cfg.init_perturbation;
  flt["enkf_inflation"] = cfg.enkf_inflation;
  flt["retrain_each_step"] = cfg.retrain_each_step;
  return j;
}

std::size_t ExperimentSpec::run_count() const {
  std::size_t n = seeds.size() * methods.size();
  for (const auto& axis : sweep) n *= axis.values.size();
  return n;
}

std::vector<std::vector<std::pair<std::string, Json>>> ExperimentSpec::sweep_points() const {
  std::vector<std::vector<std::pair<std::string, Json>>> points{{}};
  for (const auto& axis : sweep) {
    std::vector<std::vector<std::pair<std::string, Json>>> next;
    for (const auto& p : points) {
      for (const auto& v : axis.values) {
        auto q = p;
        q.emplace_back(axis.path, v);
        next.push_back(std::move(q));
      }
    }
    points = std::move(next);
  }
  return points;
}

FilterConfig ExperimentSpec::config_at(const std::vector<std::pair<std::string, Json>>& point) const {
  Json doc = document;
  doc.erase("experiment");
  doc.erase("seed");
  return parse_filter_config(apply_point(std::move(doc), point));
}

double ExperimentSpec::estimated_cost() const {
  double total = 0.0;
  for (const auto& point : sweep_points()) {
    const FilterConfig cfg = config_at(point);
    const double k = static_cast<double>(cfg.resolved_measurement_steps().size());
    for (Method m : methods) {
      const double per_run = m == Method::masf
                                 ? cfg.n_members * static_cast<double>(cfg.sampler.nfe) * k
                                 : cfg.n_members * static_cast<double>(cfg.n_steps);
      total += per_run * static_cast<double>(cfg.dynamics.dim) * static_cast<double>(seeds.size());
    }
  }
  return total;
}

ExperimentSpec parse_experiment(const Json& doc) {
  if (!doc.is_object()) throw ConfigError("<root>", "configuration must be a JSON object");
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (!kFilterSections.count(it.key()) && it.key() != "experiment" && it.key() != "seed") {
      throw ConfigError(it.key(), "unknown key");
    }
  }
  ExperimentSpec spec;
  spec.document = doc;
  Json filter_doc = doc;
  filter_doc.erase("experiment");
  filter_doc.erase("seed");
  spec.base = parse_filter_config(filter_doc, &spec.warnings);
  spec.methods = {spec.base.method};

  if (doc.contains("seed")) {
    if (!is_nonnegative_integer(doc["seed"])) throw ConfigError("seed", "expected a nonnegative integer");
    spec.seed = doc["seed"].get<std::uint64_t>();
  }

  Section exp(doc, "experiment");
  Json seeds;
  if (exp.read("seeds", seeds)) {
    spec.seeds.clear();
    if (!seeds.is_array() || seeds.empty()) throw ConfigError("experiment.seeds", "expected a nonempty array");
    for (const auto& s : seeds) {
      if (!is_nonnegative_integer(s)) throw ConfigError("experiment.seeds", "expected nonnegative integers");
      spec.seeds.push_back(s.get<std::uint64_t>());
    }
  }
  Json methods;
  if (exp.read("methods", methods)) {
    spec.methods.clear();
    if (!methods.is_array()) throw ConfigError("experiment.methods", "expected an array");
    for (const auto& m : methods) {
      if (!m.is_string()) throw ConfigError("experiment.methods", "expected strings");
      spec.methods.push_back(method_from_string(m.get<std::string>()));
    }
  }
  Json sweep;
  if (exp.read("sweep", sweep)) {
    if (!sweep.is_array()) throw ConfigError("experiment.sweep", "expected an array");
    for (const auto& axis : sweep) {
      if (!axis.is_object() || !axis.contains("path") || !axis.contains("values") ||
          axis.size() != 2 || !axis["path"].is_string() || !axis["values"].is_array() ||
          axis["values"].empty()) {
        throw ConfigError("experiment.sweep", "each entry needs exactly a string 'path' and a nonempty 'values' array");
      }
      SweepAxis a;
      a.path = canonical_sweep_path(axis["path"].get<std::string>());
      split_path(a.path);
      for (const auto& v : axis["values"]) a.values.push_back(v);
      spec.sweep.push_back(std::move(a));
    }
  }
  std::string out;
  if (exp.read("output_dir", out)) spec.output_dir = out;
  exp.read("budget", spec.budget);
  exp.read("unlock_large", spec.unlock_large);
  exp.finish();

  // Every sweep point must resolve to a valid configuration.
  for (const auto& point : spec.sweep_points()) {
    const FilterConfig cfg = spec.config_at(point);
    if (cfg.dynamics.dim > ExperimentSpec::kLargeDim && !spec.unlock_large) {
      throw ConfigError("experiment.unlock_large",
                        "state dimension " + std::to_string(cfg.dynamics.dim) +
                            " exceeds " + std::to_string(ExperimentSpec::kLargeDim) +
                            "; set unlock_large to run it");
    }
  }
  if (spec.base.dynamics.dim > ExperimentSpec::kLargeDim && !spec.unlock_large) {
    throw ConfigError("experiment.unlock_large", "large state dimension needs unlock_large");
  }
  const double cost = spec.estimated_cost();
  if (cost > spec.budget) {
    std::ostringstream msg;
    msg << "estimated cost " << cost << " exceeds the budget " << spec.budget;
    throw ConfigError("experiment.budget", msg.str());
  }
  return spec;
}

Json parse_json_text(const std::string& text, const std::string& origin) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    const std::size_t pos = std::min(e.byte, text.size());
    long line = 1;
    long col = 1;
    for (std::size_t i = 0; i + 1 < pos; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ConfigError(origin + ":" + std::to_string(line) + ":" + std::to_string(col), e.what());
  }
}

ExperimentSpec load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string(), "cannot open configuration file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_experiment(parse_json_text(ss.str(), path.string()));
}

}  // namespace masf
