#pragma once

#include "audiocil/common.hpp"

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace audiocil::nn {

// Dense row-major tensor. Four-dimensional tensors are NCHW.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> dims);

  std::size_t numel() const { return data.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  // View as rows x (numel / rows).
  Eigen::Map<RowMatrix> matrix(std::size_t rows);
  Eigen::Map<const RowMatrix> matrix(std::size_t rows) const;

  static Tensor from_matrix(const RowMatrix& m);
  RowMatrix to_matrix() const;
};

struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x) = 0;
  // Accumulates parameter gradients; returns d(loss)/d(input) when asked.
  virtual Tensor backward(const Tensor& grad_out, bool need_input_grad) = 0;
  virtual void collect(const std::string& prefix, std::vector<Param*>& out) { (void)prefix, (void)out; }
  virtual std::unique_ptr<Layer> clone() const = 0;
};

class Conv2d final : public Layer {
 public:
  // Stride 1, zero padding (kernel - 1) / 2.
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, Rng& rng);

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out, bool need_input_grad) override;
  void collect(const std::string& prefix, std::vector<Param*>& out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }

 private:
  std::size_t in_, out_, kernel_;
  Param weight_;  // out x (in * k * k)
  Param bias_;
  std::vector<std::size_t> in_shape_;
  std::vector<RowMatrix> cols_;
};

class ReLU final : public Layer {
 public:
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out, bool need_input_grad) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ReLU>(*this); }

 private:
  std::vector<unsigned char> mask_;
  std::vector<std::size_t> shape_;
};

// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
class MaxPool2 final : public Layer {
 public:
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out, bool need_input_grad) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool2>(*this); }

 private:
  std::vector<std::size_t> in_shape_;
  std::vector<std::size_t> argmax_;
};

// NCHW -> NC
class GlobalAvgPool final : public Layer {
 public:
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out, bool need_input_grad) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<GlobalAvgPool>(*this); }

 private:
  std::vector<std::size_t> in_shape_;
};

class ResidualBlock final : public Layer {
 public:
  ResidualBlock(std::size_t in_channels, std::size_t out_channels, Rng& rng);
  ResidualBlock(const ResidualBlock& other);
  ResidualBlock& operator=(const ResidualBlock&) = delete;

  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out, bool need_input_grad) override;
  void collect(const std::string& prefix, std::vector<Param*>& out) override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ResidualBlock>(*this); }

 private:
  Conv2d conv1_;
  ReLU relu1_;
  Conv2d conv2_;
  std::unique_ptr<Conv2d> shortcut_;
  ReLU relu_out_;
};

/// Fully connected layer on (N, in) matrices, weight stored out x in so that
/// row k is the classifier vector of output k.
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in_features, std::size_t out_features, Rng& rng, const std::string& name = "linear");

  RowMatrix forward(const RowMatrix& x);
  // Pure evaluation, no cache.
  RowMatrix apply(const RowMatrix& x) const;
  RowMatrix backward(const RowMatrix& grad_out);

  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }
  Param& weight() { return weight_; }
  Param& bias() { return bias_; }
  const Param& weight() const { return weight_; }
  const Param& bias() const { return bias_; }
  void collect(std::vector<Param*>& out);

 private:
  std::size_t in_ = 0, out_ = 0;
  Param weight_;
  Param bias_;
  RowMatrix input_;
};

// PyTorch-style default init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
void init_uniform_fan_in(Tensor& t, std::size_t fan_in, Rng& rng);
void init_kaiming_normal(Tensor& t, std::size_t fan_in, Rng& rng);

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  // Parameters are bound on first use; pointers must remain valid until reset().
  void step(const std::vector<Param*>& params);
  void reset() { state_.clear(); t_ = 0; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::map<const Param*, Moments> state_;
};

void zero_grad(const std::vector<Param*>& params);

}  // namespace audiocil::nn
