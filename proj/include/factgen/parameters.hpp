#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "factgen/autograd.hpp"

namespace factgen {

/// Owns parameters behind stable addresses; moving the set keeps Parameter* valid.
class ParameterSet {
 public:
  Parameter& add(std::string name, ParamGroup group, Eigen::Index rows, Eigen::Index cols);

  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  Parameter& at(const std::string& name);

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::vector<Parameter*> group(ParamGroup g);

  void zero_grad();
  std::size_t count() const { return params_.size(); }
  std::size_t num_scalars() const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, Parameter*> by_name_;
};

/// Box-Muller normal draws on top of uniform01, identical across standard libraries.
class NormalSampler {
 public:
  explicit NormalSampler(std::uint64_t seed) : rng_(seed) {}
  double next();
  void fill(Matrix& m, double stddev);
  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.998;
  double eps = 1e-8;
};

/// Adam with named parameter groups, each with its own learning rate.
class Adam {
 public:
  struct Group {
    std::string name;
    double lr = 0.0;
    std::vector<Parameter*> params;
  };
  struct Moments {
    Matrix m;
    Matrix v;
  };

  explicit Adam(AdamConfig config = {}) : config_(config) {}

  void add_group(std::string name, double lr, std::vector<Parameter*> params);
  /// One update from the current Parameter::grad values.
  void step();

  const std::vector<Group>& groups() const { return groups_; }
  std::vector<Group>& groups() { return groups_; }
  const AdamConfig& config() const { return config_; }
  long steps() const { return t_; }
  void set_steps(long t) { t_ = t; }
  std::map<std::string, Moments>& moments() { return moments_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }

 private:
  AdamConfig config_;
  std::vector<Group> groups_;
  std::map<std::string, Moments> moments_;
  long t_ = 0;
};

/// Global L2 norm of all grads; rescales them when it exceeds max_norm.
double clip_grad_norm(std::span<Parameter* const> params, double max_norm);

}  // namespace factgen
