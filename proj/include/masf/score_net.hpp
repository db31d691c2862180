#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "masf/measurement.hpp"
#include "masf/rng.hpp"
#include "masf/score_model.hpp"

namespace masf {

enum class Activation { silu, tanh };
enum class LossWeighting {
  score,  // ||S + Sigma^{-1/2} eps||^2 as written
  noise,  // the same residual scaled by sigma^2 gamma^2(t)
};

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);
std::string to_string(LossWeighting w);
LossWeighting loss_weighting_from_string(const std::string& s);

struct ScoreNetSpec {
  Eigen::Index state_dim = 3;
  Eigen::Index embed_dim = 16;
  std::vector<Eigen::Index> hidden = {64, 64, 64};
  Activation activation = Activation::silu;
};

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;
};

using Parameters = std::vector<DenseLayer>;

// Time-conditioned MLP: [x ; embed(t)] -> hidden... -> d. The embedding is
// sin/cos of t at embed_dim / 2 geometric frequencies between 1 and 100.
class ScoreNet : public ScoreModel {
 public:
  ScoreNet() = default;
  // Kaiming-uniform weights and zero biases; the output layer starts at zero
  // unless zero_head is false.
  ScoreNet(const ScoreNetSpec& spec, Rng& rng, bool zero_head = true);

  const ScoreNetSpec& spec() const { return spec_; }
  Eigen::Index dim() const override { return spec_.state_dim; }
  std::size_t num_layers() const { return layers_.size(); }
  const Parameters& layers() const { return layers_; }
  Parameters& layers() { return layers_; }
  Eigen::Index parameter_count() const;

  Eigen::VectorXd forward(const Eigen::VectorXd& x, double t) const;
  // One pseudo-time per column.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, const Eigen::VectorXd& t) const;
  Eigen::MatrixXd score(const Eigen::MatrixXd& x, double t) const override;

  Eigen::MatrixXd embed(const Eigen::VectorXd& t) const;

  // Forward pass keeping activations, then reverse-mode gradient of a loss
  // whose derivative w.r.t. the output is d_out. Layers below `first_trainable`
  // receive zero gradients and are not back-propagated through.
  struct Tape {
    std::vector<Eigen::MatrixXd> inputs;  // input to each layer
    std::vector<Eigen::MatrixXd> pre;     // pre-activation of each layer
    Eigen::MatrixXd output;
  };
  Tape forward_tape(const Eigen::MatrixXd& x, const Eigen::VectorXd& t) const;
  Parameters backward(const Tape& tape, const Eigen::MatrixXd& d_out,
                      std::size_t first_trainable = 0) const;

  bool all_finite() const;

 private:
  ScoreNetSpec spec_;
  Parameters layers_;
};

Parameters zeros_like(const Parameters& p);

struct DsmResult {
  double loss = 0.0;
  Parameters grads;
};

// Denoising score-matching loss on a d x B batch of clean states with one
// pseudo-time and one standard-normal noise column per example:
//   x_t = A(t) x + Sigma(t)^{1/2} eps,  loss = mean_b w_b ||S(x_t, t) + Sigma(t)^{-1/2} eps||^2
DsmResult dsm_loss(const ScoreNet& net, const Eigen::MatrixXd& batch, const ForwardProcess& fp,
                   const Eigen::VectorXd& t, const Eigen::MatrixXd& noise,
                   LossWeighting weighting = LossWeighting::score,
                   std::size_t first_trainable = 0);
// Single shared t, noise drawn from rng; t below t_min is rejected.
DsmResult dsm_loss(const ScoreNet& net, const Eigen::MatrixXd& batch, const ForwardProcess& fp,
                   double t, Rng& rng, LossWeighting weighting = LossWeighting::score,
                   double t_min = 1e-3);

struct TrainConfig {
  int epochs = 500;
  // Epochs for every measurement step after the first.
  int finetune_epochs = 500;
  int batch_size = 32;
  double learning_rate = 3e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double t_min = 1e-3;
  LossWeighting loss_weighting = LossWeighting::noise;
  // Number of trailing layers updated by finetune; -1 updates all layers.
  int finetune_layers = 2;
  double validation_split = 0.2;

  void validate() const;
};

struct TrainHistory {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
};

class Adam {
 public:
  Adam(const Parameters& like, double lr, double beta1, double beta2, double eps);
  // Updates layers with index >= first_trainable.
  void step(Parameters& params, const Parameters& grads, std::size_t first_trainable = 0);

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  Parameters m_, v_;
};

// Called after every epoch with the updated net.
using EpochCallback = std::function<void(int epoch, const ScoreNet& net)>;

// Members are the columns of `prior`. An epoch is one pass over the training
// split in mini-batches; each example gets its own t ~ U(t_min, 1).
TrainHistory train(ScoreNet& net, const Eigen::MatrixXd& prior, const ForwardProcess& fp,
                   const TrainConfig& cfg, Rng& rng, const EpochCallback& on_epoch = {});
// Same loop with cfg.finetune_epochs, updating only the last cfg.finetune_layers layers.
TrainHistory finetune(ScoreNet& net, const Eigen::MatrixXd& prior, const ForwardProcess& fp,
                      const TrainConfig& cfg, Rng& rng, const EpochCallback& on_epoch = {});

// Binary checkpoint ("MASFNET1", version, activation, embed width, layer
// shapes, row-major float64) plus a JSON sidecar at <path>.json.
void save_checkpoint(const ScoreNet& net, const std::filesystem::path& path,
                     const std::string& schedule_hash);
ScoreNet load_checkpoint(const std::filesystem::path& path);

}  // namespace masf
