#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include <Eigen/Dense>

namespace masf {

using Rng = std::mt19937_64;

// Stream labels. Each subsystem draws from its own stream so that changing
// the number of draws in one never shifts another.
enum class Stream : std::uint64_t {
  truth = 1,
  measurement = 2,
  ensemble_init = 3,
  dynamics = 4,
  training = 5,
  sampling = 6,
  enkf = 7,
  validation = 8,
  test = 99,
};

std::uint64_t splitmix64(std::uint64_t x);

// Seed for (master, stream, a, b); a/b are typically a step and member index.
std::uint64_t derive_seed(std::uint64_t master, Stream stream, std::uint64_t a = 0,
                          std::uint64_t b = 0);

inline Rng make_rng(std::uint64_t master, Stream stream, std::uint64_t a = 0,
                    std::uint64_t b = 0) {
  return Rng(derive_seed(master, stream, a, b));
}

Eigen::VectorXd standard_normal(Rng& rng, Eigen::Index n);
Eigen::MatrixXd standard_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols);

}  // namespace masf
