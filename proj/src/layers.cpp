#include "ckd/layers.hpp"

#include <algorithm>
#include <cmath>

#include "ckd/error.hpp"
#include "ckd/hashing.hpp"

namespace ckd::nn {

Var ParameterStore::add(std::string name, std::string group, Tensor init) {
  if (find(name)) throw Error(ErrorKind::InvalidConfig, "duplicate parameter " + name);
  Var var = leaf(std::move(init));
  params_.push_back(Parameter{std::move(name), std::move(group), var, true});
  return var;
}

const Parameter* ParameterStore::find(const std::string& name) const {
  auto it = std::find_if(params_.begin(), params_.end(),
                         [&](const Parameter& p) { return p.name == name; });
  return it == params_.end() ? nullptr : &*it;
}

Parameter* ParameterStore::find(const std::string& name) {
  return const_cast<Parameter*>(std::as_const(*this).find(name));
}

std::vector<std::string> ParameterStore::groups() const {
  std::vector<std::string> out;
  for (const auto& p : params_) {
    if (std::find(out.begin(), out.end(), p.group) == out.end()) out.push_back(p.group);
  }
  return out;
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += p.var->value.size();
  return total;
}

void ParameterStore::set_trainable(bool trainable) {
  for (auto& p : params_) {
    p.trainable = trainable;
    p.var->requires_grad = trainable;
  }
}

void ParameterStore::set_group_trainable(const std::string& group, bool trainable) {
  for (auto& p : params_) {
    if (p.group == group) {
      p.trainable = trainable;
      p.var->requires_grad = trainable;
    }
  }
}

std::vector<Tensor> ParameterStore::snapshot() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.var->value);
  return out;
}

void ParameterStore::restore(const std::vector<Tensor>& values) {
  if (values.size() != params_.size()) {
    throw Error(ErrorKind::ShapeMismatch, "snapshot has " + std::to_string(values.size()) +
                                              " tensors, store has " +
                                              std::to_string(params_.size()));
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].shape() != params_[i].var->value.shape()) {
      throw Error(ErrorKind::ShapeMismatch, "snapshot shape mismatch at " + params_[i].name);
    }
    params_[i].var->value = values[i];
  }
}

std::string ParameterStore::checksum() const {
  Sha256 h;
  for (const auto& p : params_) {
    h.update(p.name);
    h.update(shape_string(p.var->value.shape()));
    h.update(std::as_bytes(p.var->value.values()));
  }
  return h.hex_digest();
}

Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double stddev = std::sqrt(2.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  for (auto& v : t.values()) v = rng.normal() * stddev;
  return t;
}

Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Tensor t(std::move(shape));
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.values()) v = rng.uniform(-limit, limit);
  return t;
}

Tensor trunc_normal(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) {
    double z = 0.0;
    do {
      z = rng.normal();
    } while (std::abs(z) > 2.0);
    v = z * stddev;
  }
  return t;
}

Conv2d::Conv2d(ParameterStore& store, const std::string& name, const std::string& group,
               std::size_t in_channels, std::size_t out_channels, std::size_t kernel_h,
               std::size_t kernel_w, std::size_t stride, Padding padding, std::size_t groups,
               Rng& rng)
    : out_channels_(out_channels), stride_(stride), groups_(groups), padding_(padding) {
  const std::size_t cin_g = in_channels / groups;
  weight_ = store.add(name + "/w", group,
                      he_normal({kernel_h, kernel_w, cin_g, out_channels},
                                kernel_h * kernel_w * cin_g, rng));
  bias_ = store.add(name + "/b", group, Tensor({out_channels}, 0.0));
}

Var Conv2d::operator()(const Var& x) const {
  return conv2d(x, weight_, bias_, stride_, padding_, groups_);
}

Dense::Dense(ParameterStore& store, const std::string& name, const std::string& group,
             std::size_t in_dim, std::size_t out_dim, Init init, Rng& rng) {
  Tensor w = init == Init::He ? he_normal({in_dim, out_dim}, in_dim, rng)
                              : glorot_uniform({in_dim, out_dim}, in_dim, out_dim, rng);
  weight_ = store.add(name + "/w", group, std::move(w));
  bias_ = store.add(name + "/b", group, Tensor({out_dim}, 0.0));
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, const std::string& group,
                     std::size_t dim) {
  gamma_ = store.add(name + "/gamma", group, Tensor({dim}, 1.0));
  beta_ = store.add(name + "/beta", group, Tensor({dim}, 0.0));
}

}  // namespace ckd::nn
