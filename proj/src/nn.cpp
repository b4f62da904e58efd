#include "audiocil/nn.hpp"

#include <cmath>
#include <limits>

namespace audiocil::nn {

namespace {
std::size_t product(const std::vector<std::size_t>& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

Param make_param(std::string name, std::vector<std::size_t> dims) {
  Param p;
  p.name = std::move(name);
  p.value = Tensor(dims);
  p.grad = Tensor(std::move(dims));
  return p;
}
}  // namespace

Tensor::Tensor(std::vector<std::size_t> dims) : shape(std::move(dims)), data(product(shape), 0.0) {}

Eigen::Map<RowMatrix> Tensor::matrix(std::size_t rows) {
  return {data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(rows ? data.size() / rows : 0)};
}

Eigen::Map<const RowMatrix> Tensor::matrix(std::size_t rows) const {
  return {data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(rows ? data.size() / rows : 0)};
}

Tensor Tensor::from_matrix(const RowMatrix& m) {
  Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  t.matrix(t.shape[0]) = m;
  return t;
}

RowMatrix Tensor::to_matrix() const { return matrix(shape.empty() ? 0 : shape[0]); }

void init_uniform_fan_in(Tensor& t, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.data) v = rng.uniform(-bound, bound);
}

void init_kaiming_normal(Tensor& t, std::size_t fan_in, Rng& rng) {
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (double& v : t.data) v = std * rng.normal();
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, Rng& rng)
    : in_(in_channels),
      out_(out_channels),
      kernel_(kernel),
      weight_(make_param("weight", {out_channels, in_channels * kernel * kernel})),
      bias_(make_param("bias", {out_channels})) {
  init_kaiming_normal(weight_.value, in_channels * kernel * kernel, rng);
}

Tensor Conv2d::forward(const Tensor& x) {
  if (x.shape.size() != 4 || x.shape[1] != in_) {
    fail(ErrorCode::kDimensionMismatch, "conv2d expects (N, " + std::to_string(in_) + ", H, W) input");
  }
  const std::size_t n = x.shape[0], h = x.shape[2], w = x.shape[3];
  const std::size_t k = kernel_;
  const auto pad = static_cast<long>((k - 1) / 2);
  const std::size_t hw = h * w;
  in_shape_ = x.shape;
  cols_.resize(n);
  Tensor y({n, out_, h, w});
  const auto wmat = weight_.value.matrix(out_);
  for (std::size_t s = 0; s < n; ++s) {
    RowMatrix& cols = cols_[s];
    cols.setZero(static_cast<Eigen::Index>(in_ * k * k), static_cast<Eigen::Index>(hw));
    const double* src = x.data.data() + s * in_ * hw;
    for (std::size_t c = 0; c < in_; ++c) {
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          double* row = cols.row(static_cast<Eigen::Index>((c * k + ky) * k + kx)).data();
          const long dy = static_cast<long>(ky) - pad;
          const long dx = static_cast<long>(kx) - pad;
          for (std::size_t yy = 0; yy < h; ++yy) {
            const long sy = static_cast<long>(yy) + dy;
            if (sy < 0 || sy >= static_cast<long>(h)) continue;
            const double* line = src + c * hw + static_cast<std::size_t>(sy) * w;
            const std::size_t x_lo = dx < 0 ? static_cast<std::size_t>(-dx) : 0;
            const std::size_t x_hi = dx > 0 ? w - static_cast<std::size_t>(dx) : w;
            for (std::size_t xx = x_lo; xx < x_hi; ++xx) {
              row[yy * w + xx] = line[static_cast<long>(xx) + dx];
            }
          }
        }
      }
    }
    Eigen::Map<RowMatrix> out(y.data.data() + s * out_ * hw, static_cast<Eigen::Index>(out_),
                              static_cast<Eigen::Index>(hw));
    out.noalias() = wmat * cols;
    for (std::size_t o = 0; o < out_; ++o) out.row(static_cast<Eigen::Index>(o)).array() += bias_.value.data[o];
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& grad_out, bool need_input_grad) {
  const std::size_t n = in_shape_[0], h = in_shape_[2], w = in_shape_[3];
  const std::size_t k = kernel_;
  const auto pad = static_cast<long>((k - 1) / 2);
  const std::size_t hw = h * w;
  auto dw = weight_.grad.matrix(out_);
  const auto wmat = weight_.value.matrix(out_);
  Tensor dx;
  if (need_input_grad) dx = Tensor(in_shape_);
  RowMatrix dcols;
  for (std::size_t s = 0; s < n; ++s) {
    Eigen::Map<const RowMatrix> g(grad_out.data.data() + s * out_ * hw, static_cast<Eigen::Index>(out_),
                                  static_cast<Eigen::Index>(hw));
    dw.noalias() += g * cols_[s].transpose();
    for (std::size_t o = 0; o < out_; ++o) bias_.grad.data[o] += g.row(static_cast<Eigen::Index>(o)).sum();
    if (!need_input_grad) continue;
    dcols.noalias() = wmat.transpose() * g;
    double* dst = dx.data.data() + s * in_ * hw;
    for (std::size_t c = 0; c < in_; ++c) {
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          const double* row = dcols.row(static_cast<Eigen::Index>((c * k + ky) * k + kx)).data();
          const long dy = static_cast<long>(ky) - pad;
          const long dxo = static_cast<long>(kx) - pad;
          for (std::size_t yy = 0; yy < h; ++yy) {
            const long sy = static_cast<long>(yy) + dy;
            if (sy < 0 || sy >= static_cast<long>(h)) continue;
            double* line = dst + c * hw + static_cast<std::size_t>(sy) * w;
            const std::size_t x_lo = dxo < 0 ? static_cast<std::size_t>(-dxo) : 0;
            const std::size_t x_hi = dxo > 0 ? w - static_cast<std::size_t>(dxo) : w;
            for (std::size_t xx = x_lo; xx < x_hi; ++xx) {
              line[static_cast<long>(xx) + dxo] += row[yy * w + xx];
            }
          }
        }
      }
    }
  }
  return dx;
}

void Conv2d::collect(const std::string& prefix, std::vector<Param*>& out) {
  weight_.name = prefix + ".weight";
  bias_.name = prefix + ".bias";
  out.push_back(&weight_);
  out.push_back(&bias_);
}

// ---------------------------------------------------------------- ReLU

Tensor ReLU::forward(const Tensor& x) {
  Tensor y = x;
  shape_ = x.shape;
  mask_.assign(x.numel(), 0);
  for (std::size_t i = 0; i < y.data.size(); ++i) {
    if (y.data[i] > 0.0) {
      mask_[i] = 1;
    } else {
      y.data[i] = 0.0;
    }
  }
  return y;
}

Tensor ReLU::backward(const Tensor& grad_out, bool need_input_grad) {
  if (!need_input_grad) return {};
  Tensor dx = grad_out;
  for (std::size_t i = 0; i < dx.data.size(); ++i) {
    if (!mask_[i]) dx.data[i] = 0.0;
  }
  return dx;
}

// ---------------------------------------------------------------- MaxPool2

Tensor MaxPool2::forward(const Tensor& x) {
  const std::size_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  const std::size_t oh = h / 2, ow = w / 2;
  if (oh == 0 || ow == 0) fail(ErrorCode::kDimensionMismatch, "input too small for 2x2 max pooling");
  in_shape_ = x.shape;
  Tensor y({n, c, oh, ow});
  argmax_.resize(y.numel());
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t yy = 0; yy < oh; ++yy) {
      for (std::size_t xx = 0; xx < ow; ++xx, ++o) {
        std::size_t best = base + (2 * yy) * w + 2 * xx;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = base + (2 * yy + dy) * w + 2 * xx + dx;
            if (x.data[idx] > x.data[best]) best = idx;
          }
        }
        argmax_[o] = best;
        y.data[o] = x.data[best];
      }
    }
  }
  return y;
}

Tensor MaxPool2::backward(const Tensor& grad_out, bool need_input_grad) {
  if (!need_input_grad) return {};
  Tensor dx(in_shape_);
  for (std::size_t o = 0; o < grad_out.data.size(); ++o) dx.data[argmax_[o]] += grad_out.data[o];
  return dx;
}

// ---------------------------------------------------------------- GlobalAvgPool

Tensor GlobalAvgPool::forward(const Tensor& x) {
  in_shape_ = x.shape;
  const std::size_t n = x.shape[0], c = x.shape[1], hw = x.shape[2] * x.shape[3];
  Tensor y({n, c});
  for (std::size_t p = 0; p < n * c; ++p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < hw; ++i) acc += x.data[p * hw + i];
    y.data[p] = acc / static_cast<double>(hw);
  }
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out, bool need_input_grad) {
  if (!need_input_grad) return {};
  Tensor dx(in_shape_);
  const std::size_t hw = in_shape_[2] * in_shape_[3];
  for (std::size_t p = 0; p < grad_out.data.size(); ++p) {
    const double g = grad_out.data[p] / static_cast<double>(hw);
    for (std::size_t i = 0; i < hw; ++i) dx.data[p * hw + i] = g;
  }
  return dx;
}

// ---------------------------------------------------------------- ResidualBlock

ResidualBlock::ResidualBlock(std::size_t in_channels, std::size_t out_channels, Rng& rng)
    : conv1_(in_channels, out_channels, 3, rng), conv2_(out_channels, out_channels, 3, rng) {
  if (in_channels != out_channels) shortcut_ = std::make_unique<Conv2d>(in_channels, out_channels, 1, rng);
}

ResidualBlock::ResidualBlock(const ResidualBlock& other)
    : Layer(other),
      conv1_(other.conv1_),
      relu1_(other.relu1_),
      conv2_(other.conv2_),
      shortcut_(other.shortcut_ ? std::make_unique<Conv2d>(*other.shortcut_) : nullptr),
      relu_out_(other.relu_out_) {}

Tensor ResidualBlock::forward(const Tensor& x) {
  Tensor main = conv2_.forward(relu1_.forward(conv1_.forward(x)));
  const Tensor skip = shortcut_ ? shortcut_->forward(x) : x;
  for (std::size_t i = 0; i < main.data.size(); ++i) main.data[i] += skip.data[i];
  return relu_out_.forward(main);
}

Tensor ResidualBlock::backward(const Tensor& grad_out, bool need_input_grad) {
  const Tensor g = relu_out_.backward(grad_out, true);
  Tensor dx = conv1_.backward(relu1_.backward(conv2_.backward(g, true), true), need_input_grad);
  if (shortcut_) {
    Tensor ds = shortcut_->backward(g, need_input_grad);
    if (need_input_grad) {
      for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += ds.data[i];
    }
  } else if (need_input_grad) {
    for (std::size_t i = 0; i < dx.data.size(); ++i) dx.data[i] += g.data[i];
  }
  return dx;
}

void ResidualBlock::collect(const std::string& prefix, std::vector<Param*>& out) {
  conv1_.collect(prefix + ".conv1", out);
  conv2_.collect(prefix + ".conv2", out);
  if (shortcut_) shortcut_->collect(prefix + ".shortcut", out);
}

// ---------------------------------------------------------------- Linear

Linear::Linear(std::size_t in_features, std::size_t out_features, Rng& rng, const std::string& name)
    : in_(in_features),
      out_(out_features),
      weight_(make_param(name + ".weight", {out_features, in_features})),
      bias_(make_param(name + ".bias", {out_features})) {
  init_uniform_fan_in(weight_.value, in_features, rng);
}

RowMatrix Linear::forward(const RowMatrix& x) {
  input_ = x;
  return apply(x);
}

RowMatrix Linear::apply(const RowMatrix& x) const {
  if (static_cast<std::size_t>(x.cols()) != in_) {
    fail(ErrorCode::kDimensionMismatch, "linear layer expects " + std::to_string(in_) + " input features, got " +
                                            std::to_string(x.cols()));
  }
  RowMatrix y = x * weight_.value.matrix(out_).transpose();
  const Eigen::Map<const Eigen::RowVectorXd> b(bias_.value.data.data(), static_cast<Eigen::Index>(out_));
  y.rowwise() += b;
  return y;
}

RowMatrix Linear::backward(const RowMatrix& grad_out) {
  weight_.grad.matrix(out_).noalias() += grad_out.transpose() * input_;
  Eigen::Map<Eigen::RowVectorXd> db(bias_.grad.data.data(), static_cast<Eigen::Index>(out_));
  db += grad_out.colwise().sum();
  return grad_out * weight_.value.matrix(out_);
}

void Linear::collect(std::vector<Param*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

// ---------------------------------------------------------------- Adam

Adam::Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(const std::vector<Param*>& params) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (Param* p : params) {
    Moments& mo = state_[p];
    if (mo.m.size() != p->value.numel()) {
      mo.m.assign(p->value.numel(), 0.0);
      mo.v.assign(p->value.numel(), 0.0);
    }
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      const double g = p->grad.data[i];
      mo.m[i] = beta1_ * mo.m[i] + (1.0 - beta1_) * g;
      mo.v[i] = beta2_ * mo.v[i] + (1.0 - beta2_) * g * g;
      p->value.data[i] -= lr_ * (mo.m[i] / c1) / (std::sqrt(mo.v[i] / c2) + eps_);
    }
  }
}

void zero_grad(const std::vector<Param*>& params) {
  for (Param* p : params) p->grad.fill(0.0);
}

}  // namespace audiocil::nn
