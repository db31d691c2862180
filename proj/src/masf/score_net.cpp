#include "masf/score_net.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>

#include "json.hpp"

#include "masf/errors.hpp"

namespace masf {

namespace {

constexpr char kMagic[8] = {'M', 'A', 'S', 'F', 'N', 'E', 'T', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

Eigen::MatrixXd activate(const Eigen::MatrixXd& z, Activation a) {
  if (a == Activation::tanh) return z.array().tanh().matrix();
  return (z.array() / (1.0 + (-z.array()).exp())).matrix();
}

Eigen::MatrixXd activate_grad(const Eigen::MatrixXd& z, Activation a) {
  if (a == Activation::tanh) return (1.0 - z.array().tanh().square()).matrix();
  const Eigen::ArrayXXd s = 1.0 / (1.0 + (-z.array()).exp());
  return (s * (1.0 + z.array() * (1.0 - s))).matrix();
}

std::size_t first_trainable_for(const ScoreNet& net, int trailing) {
  if (trailing < 0) return 0;
  const auto n = net.num_layers();
  return static_cast<std::size_t>(trailing) >= n ? 0 : n - static_cast<std::size_t>(trailing);
}

// Loss value and d loss / d output for given network outputs.
double weighted_residual(const Eigen::MatrixXd& out, const ForwardProcess& fp,
                         const Eigen::VectorXd& t, const Eigen::MatrixXd& noise,
                         LossWeighting weighting, Eigen::MatrixXd* d_out) {
  const Eigen::Index batch = out.cols();
  double loss = 0.0;
  if (d_out) d_out->resize(out.rows(), batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const double var = fp.noise_var(t[b]);
    const double inv_std = 1.0 / std::sqrt(var);
    const double w = weighting == LossWeighting::noise ? var : 1.0;
    const Eigen::VectorXd r = out.col(b) + inv_std * noise.col(b);
    loss += w * r.squaredNorm();
    if (d_out) d_out->col(b) = (2.0 * w / static_cast<double>(batch)) * r;
  }
  return loss / static_cast<double>(batch);
}

TrainHistory run_training(ScoreNet& net, const Eigen::MatrixXd& prior, const ForwardProcess& fp,
                          const TrainConfig& cfg, Rng& rng, int epochs,
                          std::size_t first_trainable, const EpochCallback& on_epoch) {
  cfg.validate();
  if (prior.cols() == 0) throw DomainError("train: prior ensemble is empty");
  require_dim(prior.rows(), net.dim(), "train prior");
  require_dim(fp.dim(), net.dim(), "train forward process");
  TrainHistory history;
  if (epochs <= 0 || first_trainable >= net.num_layers()) return history;

  const Eigen::Index n = prior.cols();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  Eigen::Index n_val = static_cast<Eigen::Index>(std::floor(cfg.validation_split * n));
  n_val = std::min(n_val, n - 1);
  std::vector<Eigen::Index> train_idx(order.begin(), order.end() - n_val);
  std::vector<Eigen::Index> val_idx(order.end() - n_val, order.end());
  Rng val_rng(rng());

  Adam adam(net.layers(), cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  std::uniform_real_distribution<double> unif_t(cfg.t_min, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, train_idx.size() - 1);
  const auto batch_size = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::vector<std::vector<Eigen::Index>> batches;
    if (train_idx.size() >= batch_size) {
      std::shuffle(train_idx.begin(), train_idx.end(), rng);
      for (std::size_t i = 0; i < train_idx.size(); i += batch_size) {
        const auto end = std::min(train_idx.size(), i + batch_size);
        batches.emplace_back(train_idx.begin() + static_cast<long>(i),
                             train_idx.begin() + static_cast<long>(end));
      }
    } else {
      std::vector<Eigen::Index> b(batch_size);
      for (auto& idx : b) idx = train_idx[pick(rng)];
      batches.push_back(std::move(b));
    }

    double total = 0.0;
    Eigen::Index seen = 0;
    for (const auto& idx : batches) {
      const auto bsz = static_cast<Eigen::Index>(idx.size());
      Eigen::MatrixXd x(prior.rows(), bsz);
      for (Eigen::Index j = 0; j < bsz; ++j) x.col(j) = prior.col(idx[static_cast<std::size_t>(j)]);
      Eigen::VectorXd t(bsz);
      for (Eigen::Index j = 0; j < bsz; ++j) t[j] = unif_t(rng);
      const Eigen::MatrixXd noise = standard_normal(rng, prior.rows(), bsz);
      DsmResult r = dsm_loss(net, x, fp, t, noise, cfg.loss_weighting, first_trainable);
      if (!std::isfinite(r.loss)) throw DivergenceError("training loss is not finite", epoch);
      adam.step(net.layers(), r.grads, first_trainable);
      total += r.loss * static_cast<double>(bsz);
      seen += bsz;
    }
    history.train_loss.push_back(total / static_cast<double>(seen));

    if (n_val > 0) {
      Eigen::MatrixXd x(prior.rows(), n_val);
      for (Eigen::Index j = 0; j < n_val; ++j) x.col(j) = prior.col(val_idx[static_cast<std::size_t>(j)]);
      Eigen::VectorXd t(n_val);
      for (Eigen::Index j = 0; j < n_val; ++j) t[j] = unif_t(val_rng);
      const Eigen::MatrixXd noise = standard_normal(val_rng, prior.rows(), n_val);
      Eigen::MatrixXd xt(x.rows(), x.cols());
      for (Eigen::Index j = 0; j < n_val; ++j) {
        xt.col(j) = fp.forward_perturb(Eigen::VectorXd(x.col(j)), t[j], Eigen::VectorXd(noise.col(j)));
      }
      const double v = weighted_residual(net.forward(xt, t), fp, t, noise, cfg.loss_weighting, nullptr);
      if (!std::isfinite(v)) throw DivergenceError("validation loss is not finite", epoch);
      history.val_loss.push_back(v);
    }
    if (on_epoch) on_epoch(epoch, net);
  }
  return history;
}

void write_pod(std::ostream& os, const auto& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw Error("checkpoint: truncated file");
  return v;
}

}  // namespace

std::string to_string(Activation a) { return a == Activation::silu ? "silu" : "tanh"; }

Activation activation_from_string(const std::string& s) {
  if (s == "silu") return Activation::silu;
  if (s == "tanh") return Activation::tanh;
  throw ConfigError("train.activation", "unknown activation '" + s + "'");
}

std::string to_string(LossWeighting w) { return w == LossWeighting::score ? "score" : "noise"; }

LossWeighting loss_weighting_from_string(const std::string& s) {
  if (s == "score") return LossWeighting::score;
  if (s == "noise") return LossWeighting::noise;
  throw ConfigError("train.loss_weighting", "unknown loss weighting '" + s + "'");
}

ScoreNet::ScoreNet(const ScoreNetSpec& spec, Rng& rng, bool zero_head) : spec_(spec) {
  if (spec.state_dim <= 0) throw DimensionError("ScoreNet: state_dim must be positive");
  if (spec.embed_dim < 0 || spec.embed_dim % 2 != 0) {
    throw DomainError("ScoreNet: embed_dim must be even and >= 0");
  }
  std::vector<Eigen::Index> widths{spec.state_dim + spec.embed_dim};
  widths.insert(widths.end(), spec.hidden.begin(), spec.hidden.end());
  widths.push_back(spec.state_dim);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    DenseLayer layer;
    const Eigen::Index in = widths[l];
    const Eigen::Index out = widths[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(in));
    layer.weight = Eigen::MatrixXd(out, in);
    for (Eigen::Index j = 0; j < in; ++j)
      for (Eigen::Index i = 0; i < out; ++i) layer.weight(i, j) = bound * unit(rng);
    layer.bias = Eigen::VectorXd::Zero(out);
    layers_.push_back(std::move(layer));
  }
  if (zero_head) layers_.back().weight.setZero();
}

Eigen::Index ScoreNet::parameter_count() const {
  Eigen::Index n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

Eigen::MatrixXd ScoreNet::embed(const Eigen::VectorXd& t) const {
  const Eigen::Index half = spec_.embed_dim / 2;
  Eigen::MatrixXd e(spec_.embed_dim, t.size());
  for (Eigen::Index k = 0; k < half; ++k) {
    const double freq = half > 1 ? std::pow(100.0, static_cast<double>(k) / static_cast<double>(half - 1)) : 1.0;
    for (Eigen::Index b = 0; b < t.size(); ++b) {
      e(k, b) = std::sin(freq * t[b]);
      e(half + k, b) = std::cos(freq * t[b]);
    }
  }
  return e;
}

ScoreNet::Tape ScoreNet::forward_tape(const Eigen::MatrixXd& x, const Eigen::VectorXd& t) const {
  require_dim(x.rows(), spec_.state_dim, "ScoreNet input");
  require_dim(t.size(), x.cols(), "ScoreNet time vector");
  for (Eigen::Index j = 0; j < t.size(); ++j)
    if (!(t[j] >= 0.0 && t[j] <= 1.0)) throw DomainError("ScoreNet time must lie in [0, 1]");
  Tape tape;
  Eigen::MatrixXd h(spec_.state_dim + spec_.embed_dim, x.cols());
  h.topRows(spec_.state_dim) = x;
  if (spec_.embed_dim > 0) h.bottomRows(spec_.embed_dim) = embed(t);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Eigen::MatrixXd z = layers_[l].weight * h;
    z.colwise() += layers_[l].bias;
    tape.inputs.push_back(std::move(h));
    if (l + 1 < layers_.size()) {
      h = activate(z, spec_.activation);
      tape.pre.push_back(std::move(z));
    } else {
      tape.pre.push_back(z);
      tape.output = std::move(z);
    }
  }
  if (!tape.output.allFinite()) {
    for (std::size_t l = 0; l < tape.pre.size(); ++l) {
      if (!tape.pre[l].allFinite()) {
        throw DivergenceError("ScoreNet produced a non-finite activation in layer", static_cast<long>(l));
      }
    }
  }
  return tape;
}

Parameters ScoreNet::backward(const Tape& tape, const Eigen::MatrixXd& d_out,
                              std::size_t first_trainable) const {
  Parameters grads = zeros_like(layers_);
  Eigen::MatrixXd delta = d_out;  // d loss / d pre-activation of the current layer
  for (std::size_t l = layers_.size(); l-- > first_trainable;) {
    grads[l].weight.noalias() = delta * tape.inputs[l].transpose();
    grads[l].bias = delta.rowwise().sum();
    if (l == first_trainable) break;
    Eigen::MatrixXd dh = layers_[l].weight.transpose() * delta;
    delta = dh.cwiseProduct(activate_grad(tape.pre[l - 1], spec_.activation));
  }
  return grads;
}

Eigen::MatrixXd ScoreNet::forward(const Eigen::MatrixXd& x, const Eigen::VectorXd& t) const {
  return forward_tape(x, t).output;
}

Eigen::VectorXd ScoreNet::forward(const Eigen::VectorXd& x, double t) const {
  return forward(Eigen::MatrixXd(x), Eigen::VectorXd::Constant(1, t)).col(0);
}

Eigen::MatrixXd ScoreNet::score(const Eigen::MatrixXd& x, double t) const {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("ScoreNet: t must lie in [0, 1]");
  return forward(x, Eigen::VectorXd::Constant(x.cols(), t));
}

bool ScoreNet::all_finite() const {
  return std::all_of(layers_.begin(), layers_.end(), [](const DenseLayer& l) {
    return l.weight.allFinite() && l.bias.allFinite();
  });
}

Parameters zeros_like(const Parameters& p) {
  Parameters z;
  z.reserve(p.size());
  for (const auto& l : p) {
    z.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()),
                 Eigen::VectorXd::Zero(l.bias.size())});
  }
  return z;
}

DsmResult dsm_loss(const ScoreNet& net, const Eigen::MatrixXd& batch, const ForwardProcess& fp,
                   const Eigen::VectorXd& t, const Eigen::MatrixXd& noise,
                   LossWeighting weighting, std::size_t first_trainable) {
  require_dim(batch.rows(), net.dim(), "dsm_loss batch");
  require_dim(noise.rows(), batch.rows(), "dsm_loss noise");
  require_dim(noise.cols(), batch.cols(), "dsm_loss noise columns");
  require_dim(t.size(), batch.cols(), "dsm_loss t");
  if (batch.cols() == 0) throw DomainError("dsm_loss: empty batch");
  Eigen::MatrixXd xt(batch.rows(), batch.cols());
  for (Eigen::Index b = 0; b < batch.cols(); ++b) {
    if (!(t[b] > 0.0 && t[b] <= 1.0)) throw DomainError("dsm_loss: t must lie in (0, 1]");
    xt.col(b) = fp.forward_perturb(Eigen::VectorXd(batch.col(b)), t[b], Eigen::VectorXd(noise.col(b)));
  }
  const ScoreNet::Tape tape = net.forward_tape(xt, t);
  Eigen::MatrixXd d_out;
  DsmResult r;
  r.loss = weighted_residual(tape.output, fp, t, noise, weighting, &d_out);
  r.grads = net.backward(tape, d_out, first_trainable);
  return r;
}

DsmResult dsm_loss(const ScoreNet& net, const Eigen::MatrixXd& batch, const ForwardProcess& fp,
                   double t, Rng& rng, LossWeighting weighting, double t_min) {
  if (t < t_min || t > 1.0) {
    throw DomainError("dsm_loss: t = " + std::to_string(t) + " is outside [t_min, 1]");
  }
  const Eigen::MatrixXd noise = standard_normal(rng, batch.rows(), batch.cols());
  return dsm_loss(net, batch, fp, Eigen::VectorXd::Constant(batch.cols(), t), noise, weighting);
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train.epochs", "must be >= 0");
  if (finetune_epochs < 0) throw ConfigError("train.finetune_epochs", "must be >= 0");
  if (batch_size < 1) throw ConfigError("train.batch_size", "must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate", "must be positive");
  if (!(t_min > 0.0 && t_min < 1.0)) throw ConfigError("train.t_min", "must lie in (0, 1)");
  if (!(validation_split >= 0.0 && validation_split < 1.0)) {
    throw ConfigError("train.validation_split", "must lie in [0, 1)");
  }
  if (finetune_layers < -1) throw ConfigError("train.finetune_layers", "must be >= -1");
}

Adam::Adam(const Parameters& like, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(zeros_like(like)), v_(zeros_like(like)) {}

void Adam::step(Parameters& params, const Parameters& grads, std::size_t first_trainable) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto update = [&](auto& p, const auto& g, auto& m, auto& v) {
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
    p.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
  };
  for (std::size_t l = first_trainable; l < params.size(); ++l) {
    update(params[l].weight, grads[l].weight, m_[l].weight, v_[l].weight);
    update(params[l].bias, grads[l].bias, m_[l].bias, v_[l].bias);
  }
}

TrainHistory train(ScoreNet& net, const Eigen::MatrixXd& prior, const ForwardProcess& fp,
                   const TrainConfig& cfg, Rng& rng, const EpochCallback& on_epoch) {
  return run_training(net, prior, fp, cfg, rng, cfg.epochs, 0, on_epoch);
}

TrainHistory finetune(ScoreNet& net, const Eigen::MatrixXd& prior, const ForwardProcess& fp,
                      const TrainConfig& cfg, Rng& rng, const EpochCallback& on_epoch) {
  if (cfg.finetune_layers == 0) return {};
  return run_training(net, prior, fp, cfg, rng, cfg.finetune_epochs,
                      first_trainable_for(net, cfg.finetune_layers), on_epoch);
}

void save_checkpoint(const ScoreNet& net, const std::filesystem::path& path,
                     const std::string& schedule_hash) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("checkpoint: cannot open " + path.string());
  os.write(kMagic, sizeof(kMagic));
  write_pod(os, kCheckpointVersion);
  write_pod(os, static_cast<std::uint32_t>(net.spec().activation == Activation::silu ? 0 : 1));
  write_pod(os, static_cast<std::uint64_t>(net.spec().embed_dim));
  write_pod(os, static_cast<std::uint32_t>(net.num_layers()));
  for (const auto& l : net.layers()) {
    write_pod(os, static_cast<std::uint64_t>(l.weight.rows()));
    write_pod(os, static_cast<std::uint64_t>(l.weight.cols()));
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j) write_pod(os, l.weight(i, j));
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) write_pod(os, l.bias[i]);
  }
  if (!os) throw Error("checkpoint: write failed for " + path.string());

  nlohmann::json meta;
  meta["format"] = "MASFNET1";
  meta["version"] = kCheckpointVersion;
  meta["state_dim"] = net.spec().state_dim;
  meta["embed_dim"] = net.spec().embed_dim;
  meta["hidden"] = net.spec().hidden;
  meta["activation"] = to_string(net.spec().activation);
  meta["parameter_count"] = net.parameter_count();
  meta["schedule_hash"] = schedule_hash;
  std::ofstream js(path.string() + ".json");
  js << meta.dump(2) << "\n";
}

ScoreNet load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("checkpoint: cannot open " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || !std::equal(magic, magic + 8, kMagic)) throw Error("checkpoint: bad magic bytes");
  if (read_pod<std::uint32_t>(is) != kCheckpointVersion) throw Error("checkpoint: unsupported version");
  ScoreNetSpec spec;
  spec.activation = read_pod<std::uint32_t>(is) == 0 ? Activation::silu : Activation::tanh;
  spec.embed_dim = static_cast<Eigen::Index>(read_pod<std::uint64_t>(is));
  const auto n_layers = read_pod<std::uint32_t>(is);
  if (n_layers == 0) throw Error("checkpoint: no layers");
  Parameters layers;
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    const auto rows = static_cast<Eigen::Index>(read_pod<std::uint64_t>(is));
    const auto cols = static_cast<Eigen::Index>(read_pod<std::uint64_t>(is));
    DenseLayer layer{Eigen::MatrixXd(rows, cols), Eigen::VectorXd(rows)};
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) layer.weight(i, j) = read_pod<double>(is);
    for (Eigen::Index i = 0; i < rows; ++i) layer.bias[i] = read_pod<double>(is);
    layers.push_back(std::move(layer));
  }
  spec.state_dim = layers.back().weight.rows();
  spec.hidden.clear();
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) spec.hidden.push_back(layers[l].weight.rows());
  if (layers.front().weight.cols() != spec.state_dim + spec.embed_dim) {
    throw Error("checkpoint: input width does not match state_dim + embed_dim");
  }
  Rng unused(0);
  ScoreNet net(spec, unused);
  net.layers() = std::move(layers);
  return net;
}

}  // namespace masf
