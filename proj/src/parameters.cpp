#include "factgen/parameters.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "factgen/corpus.hpp"

namespace factgen {

Parameter& ParameterSet::add(std::string name, ParamGroup group, Eigen::Index rows, Eigen::Index cols) {
  if (by_name_.count(name)) throw std::logic_error("duplicate parameter " + name);
  auto p = std::make_unique<Parameter>();
  p->name = std::move(name);
  p->group = group;
  p->value = Matrix::Zero(rows, cols);
  p->grad = Matrix::Zero(rows, cols);
  Parameter& ref = *p;
  by_name_.emplace(ref.name, &ref);
  params_.push_back(std::move(p));
  return ref;
}

Parameter* ParameterSet::find(const std::string& name) {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

const Parameter* ParameterSet::find(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? nullptr : it->second;
}

Parameter& ParameterSet::at(const std::string& name) {
  Parameter* p = find(name);
  if (p == nullptr) throw std::out_of_range("no parameter named " + name);
  return *p;
}

std::vector<Parameter*> ParameterSet::all() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterSet::all() const {
  std::vector<const Parameter*> out;
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<Parameter*> ParameterSet::group(ParamGroup g) {
  std::vector<Parameter*> out;
  for (auto& p : params_)
    if (p->group == g) out.push_back(p.get());
  return out;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

std::size_t ParameterSet::num_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
  return n;
}

double NormalSampler::next() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = 0.0;
  do {
    u1 = uniform01(rng_);
  } while (u1 <= 0.0);
  double u2 = uniform01(rng_);
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

void NormalSampler::fill(Matrix& m, double stddev) {
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = stddev * next();
}

void Adam::add_group(std::string name, double lr, std::vector<Parameter*> params) {
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate for group " + name + " must be positive");
  for (Parameter* p : params) moments_[p->name];
  groups_.push_back({std::move(name), lr, std::move(params)});
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (Group& g : groups_) {
    for (Parameter* p : g.params) {
      Moments& mv = moments_[p->name];
      if (mv.m.size() != p->value.size()) {
        mv.m = Matrix::Zero(p->value.rows(), p->value.cols());
        mv.v = Matrix::Zero(p->value.rows(), p->value.cols());
      }
      mv.m = config_.beta1 * mv.m + (1.0 - config_.beta1) * p->grad;
      mv.v = config_.beta2 * mv.v + (1.0 - config_.beta2) * p->grad.cwiseProduct(p->grad);
      p->value.array() -=
          g.lr * (mv.m.array() / bc1) / ((mv.v.array() / bc2).sqrt() + config_.eps);
    }
  }
}

double clip_grad_norm(std::span<Parameter* const> params, double max_norm) {
  double sq = 0.0;
  for (const Parameter* p : params) sq += p->grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (Parameter* p : params) p->grad *= s;
  }
  return norm;
}

}  // namespace factgen
