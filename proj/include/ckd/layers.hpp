#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "ckd/autograd.hpp"
#include "ckd/rng.hpp"
#include "ckd/tensor.hpp"

namespace ckd::nn {

struct Parameter {
  std::string name;
  // Freezing granularity: "stem", "stage1", ..., "top", "head", ...
  std::string group;
  Var var;
  bool trainable = true;
};

/// Ordered, named parameter collection. Order is construction order and is
/// what checkpoints and snapshots rely on.
class ParameterStore {
 public:
  Var add(std::string name, std::string group, Tensor init);

  std::vector<Parameter>& all() noexcept { return params_; }
  const std::vector<Parameter>& all() const noexcept { return params_; }
  const Parameter* find(const std::string& name) const;
  Parameter* find(const std::string& name);

  std::vector<std::string> groups() const;
  std::size_t scalar_count() const;

  void set_trainable(bool trainable);
  void set_group_trainable(const std::string& group, bool trainable);

  std::vector<Tensor> snapshot() const;
  void restore(const std::vector<Tensor>& values);

  // Hex SHA-256 over names, shapes and raw values.
  std::string checksum() const;

 private:
  std::vector<Parameter> params_;
};

Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng);
Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);
Tensor trunc_normal(Shape shape, double stddev, Rng& rng);

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterStore& store, const std::string& name, const std::string& group,
         std::size_t in_channels, std::size_t out_channels, std::size_t kernel_h,
         std::size_t kernel_w, std::size_t stride, Padding padding, std::size_t groups, Rng& rng);

  Var operator()(const Var& x) const;
  std::size_t out_channels() const { return out_channels_; }

 private:
  Var weight_, bias_;
  std::size_t out_channels_ = 0, stride_ = 1, groups_ = 1;
  Padding padding_ = Padding::Same;
};

class Dense {
 public:
  enum class Init { He, Glorot };
  Dense() = default;
  Dense(ParameterStore& store, const std::string& name, const std::string& group,
        std::size_t in_dim, std::size_t out_dim, Init init, Rng& rng);

  Var operator()(const Var& x) const { return dense(x, weight_, bias_); }
  const Var& weight() const { return weight_; }
  const Var& bias() const { return bias_; }

 private:
  Var weight_, bias_;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, const std::string& group,
            std::size_t dim);
  Var operator()(const Var& x) const { return layer_norm(x, gamma_, beta_); }

 private:
  Var gamma_, beta_;
};

}  // namespace ckd::nn
