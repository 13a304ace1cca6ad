#include "stip/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace stip::ad {

namespace {

int product(const std::vector<int>& shape) {
  int n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor extent must be positive");
    n *= d;
  }
  return n;
}

void check_finite(const Tensor& t, const char* op) {
#ifndef NDEBUG
  for (double v : *t.data) {
    if (!std::isfinite(v)) {
      throw std::runtime_error(std::string("non-finite value produced by ") + op);
    }
  }
#else
  (void)t;
  (void)op;
#endif
}

Tensor make_output(std::vector<int> shape, bool requires_grad) {
  return Tensor::zeros(std::move(shape), requires_grad);
}

bool any_grad(const Tensor& a) { return a.requires_grad; }
bool any_grad(const Tensor& a, const Tensor& b) { return a.requires_grad || b.requires_grad; }

}  // namespace

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  Tensor t;
  int n = product(shape);
  t.shape = std::move(shape);
  t.data = std::make_shared<std::vector<double>>(n, 0.0);
  t.requires_grad = requires_grad;
  if (requires_grad) t.grad = std::make_shared<std::vector<double>>(n, 0.0);
  return t;
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.data->begin(), t.data->end(), value);
  return t;
}

Tensor Tensor::from_vector(std::vector<int> shape, std::vector<double> values,
                           bool requires_grad) {
  if (product(shape) != static_cast<int>(values.size())) {
    throw std::invalid_argument("from_vector: shape/data size mismatch");
  }
  Tensor t;
  t.shape = std::move(shape);
  t.data = std::make_shared<std::vector<double>>(std::move(values));
  t.requires_grad = requires_grad;
  if (requires_grad) t.grad = std::make_shared<std::vector<double>>(t.data->size(), 0.0);
  return t;
}

Tensor Tensor::randn(std::vector<int> shape, std::mt19937_64& rng, double stddev,
                     bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : *t.data) v = dist(rng);
  return t;
}

int Tensor::numel() const { return data ? static_cast<int>(data->size()) : 0; }

int Tensor::rows() const { return shape.size() == 1 ? 1 : shape[0]; }

int Tensor::cols() const { return shape.size() == 1 ? shape[0] : shape[1]; }

double& Tensor::at(int r, int c) { return (*data)[r * cols() + c]; }

double Tensor::at(int r, int c) const { return (*data)[r * cols() + c]; }

double Tensor::scalar() const {
  if (numel() != 1) throw std::invalid_argument("scalar() on non-scalar tensor");
  return (*data)[0];
}

void Tensor::zero_grad() {
  if (grad) std::fill(grad->begin(), grad->end(), 0.0);
}

void Tape::backward(Tensor& loss) {
  if (!loss.requires_grad) throw std::invalid_argument("backward on non-grad tensor");
  if (loss.numel() != 1) throw std::invalid_argument("backward expects a scalar loss");
  (*loss.grad)[0] = 1.0;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
}

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
  const int m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) throw std::invalid_argument("matmul: inner dimensions disagree");
  Tensor c = make_output({m, n}, any_grad(a, b));
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int t = 0; t < k; ++t) s += a.at(i, t) * b.at(t, j);
      c.at(i, j) = s;
    }
  }
  check_finite(c, "matmul");
  if (tape && c.requires_grad) {
    tape->record([a, b, c, m, n, k]() {
      if (a.requires_grad) {
        for (int i = 0; i < m; ++i)
          for (int t = 0; t < k; ++t) {
            double s = 0.0;
            for (int j = 0; j < n; ++j) s += (*c.grad)[i * n + j] * b.at(t, j);
            (*a.grad)[i * k + t] += s;
          }
      }
      if (b.requires_grad) {
        for (int t = 0; t < k; ++t)
          for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int i = 0; i < m; ++i) s += a.at(i, t) * (*c.grad)[i * n + j];
            (*b.grad)[t * n + j] += s;
          }
      }
    });
  }
  return c;
}

Tensor matmul_nt(Tape* tape, const Tensor& a, const Tensor& b) {
  const int m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) throw std::invalid_argument("matmul_nt: inner dimensions disagree");
  Tensor c = make_output({m, n}, any_grad(a, b));
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int t = 0; t < k; ++t) s += a.at(i, t) * b.at(j, t);
      c.at(i, j) = s;
    }
  }
  check_finite(c, "matmul_nt");
  if (tape && c.requires_grad) {
    tape->record([a, b, c, m, n, k]() {
      if (a.requires_grad) {
        for (int i = 0; i < m; ++i)
          for (int t = 0; t < k; ++t) {
            double s = 0.0;
            for (int j = 0; j < n; ++j) s += (*c.grad)[i * n + j] * b.at(j, t);
            (*a.grad)[i * k + t] += s;
          }
      }
      if (b.requires_grad) {
        for (int j = 0; j < n; ++j)
          for (int t = 0; t < k; ++t) {
            double s = 0.0;
            for (int i = 0; i < m; ++i) s += (*c.grad)[i * n + j] * a.at(i, t);
            (*b.grad)[j * k + t] += s;
          }
      }
    });
  }
  return c;
}

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) throw std::invalid_argument("add: shape mismatch");
  Tensor c = make_output(a.shape, any_grad(a, b));
  for (int i = 0; i < c.numel(); ++i) (*c.data)[i] = (*a.data)[i] + (*b.data)[i];
  check_finite(c, "add");
  if (tape && c.requires_grad) {
    tape->record([a, b, c]() {
      if (a.requires_grad)
        for (int i = 0; i < c.numel(); ++i) (*a.grad)[i] += (*c.grad)[i];
      if (b.requires_grad)
        for (int i = 0; i < c.numel(); ++i) (*b.grad)[i] += (*c.grad)[i];
    });
  }
  return c;
}

Tensor add_bias(Tape* tape, const Tensor& x, const Tensor& bias) {
  const int m = x.rows(), n = x.cols();
  if (bias.numel() != n) throw std::invalid_argument("add_bias: width mismatch");
  Tensor c = make_output(x.shape, any_grad(x, bias));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) c.at(i, j) = x.at(i, j) + (*bias.data)[j];
  check_finite(c, "add_bias");
  if (tape && c.requires_grad) {
    tape->record([x, bias, c, m, n]() {
      if (x.requires_grad)
        for (int i = 0; i < m * n; ++i) (*x.grad)[i] += (*c.grad)[i];
      if (bias.requires_grad)
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) (*bias.grad)[j] += (*c.grad)[i * n + j];
    });
  }
  return c;
}

Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) throw std::invalid_argument("mul: shape mismatch");
  Tensor c = make_output(a.shape, any_grad(a, b));
  for (int i = 0; i < c.numel(); ++i) (*c.data)[i] = (*a.data)[i] * (*b.data)[i];
  check_finite(c, "mul");
  if (tape && c.requires_grad) {
    tape->record([a, b, c]() {
      if (a.requires_grad)
        for (int i = 0; i < c.numel(); ++i) (*a.grad)[i] += (*c.grad)[i] * (*b.data)[i];
      if (b.requires_grad)
        for (int i = 0; i < c.numel(); ++i) (*b.grad)[i] += (*c.grad)[i] * (*a.data)[i];
    });
  }
  return c;
}

Tensor scale(Tape* tape, const Tensor& a, double s) {
  Tensor c = make_output(a.shape, a.requires_grad);
  for (int i = 0; i < c.numel(); ++i) (*c.data)[i] = (*a.data)[i] * s;
  check_finite(c, "scale");
  if (tape && c.requires_grad) {
    tape->record([a, c, s]() {
      for (int i = 0; i < c.numel(); ++i) (*a.grad)[i] += (*c.grad)[i] * s;
    });
  }
  return c;
}

Tensor relu(Tape* tape, const Tensor& x) {
  Tensor c = make_output(x.shape, x.requires_grad);
  for (int i = 0; i < c.numel(); ++i) (*c.data)[i] = std::max(0.0, (*x.data)[i]);
  if (tape && c.requires_grad) {
    tape->record([x, c]() {
      for (int i = 0; i < c.numel(); ++i)
        if ((*x.data)[i] > 0.0) (*x.grad)[i] += (*c.grad)[i];
    });
  }
  return c;
}

Tensor sigmoid(Tape* tape, const Tensor& x) {
  Tensor c = make_output(x.shape, x.requires_grad);
  for (int i = 0; i < c.numel(); ++i) (*c.data)[i] = 1.0 / (1.0 + std::exp(-(*x.data)[i]));
  check_finite(c, "sigmoid");
  if (tape && c.requires_grad) {
    tape->record([x, c]() {
      for (int i = 0; i < c.numel(); ++i) {
        double y = (*c.data)[i];
        (*x.grad)[i] += (*c.grad)[i] * y * (1.0 - y);
      }
    });
  }
  return c;
}

Tensor softmax_rows(Tape* tape, const Tensor& x) {
  const int m = x.rows(), n = x.cols();
  Tensor c = make_output(x.shape, x.requires_grad);
  for (int i = 0; i < m; ++i) {
    double mx = x.at(i, 0);
    for (int j = 1; j < n; ++j) mx = std::max(mx, x.at(i, j));
    double z = 0.0;
    for (int j = 0; j < n; ++j) {
      double e = std::exp(x.at(i, j) - mx);
      c.at(i, j) = e;
      z += e;
    }
    for (int j = 0; j < n; ++j) c.at(i, j) /= z;
  }
  check_finite(c, "softmax_rows");
  if (tape && c.requires_grad) {
    tape->record([x, c, m, n]() {
      for (int i = 0; i < m; ++i) {
        double dot = 0.0;
        for (int j = 0; j < n; ++j) dot += (*c.grad)[i * n + j] * (*c.data)[i * n + j];
        for (int j = 0; j < n; ++j)
          (*x.grad)[i * n + j] += (*c.data)[i * n + j] * ((*c.grad)[i * n + j] - dot);
      }
    });
  }
  return c;
}

Tensor layer_norm(Tape* tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  const int m = x.rows(), n = x.cols();
  if (gain.numel() != n || bias.numel() != n)
    throw std::invalid_argument("layer_norm: parameter width mismatch");
  Tensor c = make_output(x.shape, x.requires_grad || gain.requires_grad || bias.requires_grad);
  auto xhat = std::make_shared<std::vector<double>>(m * n);
  auto inv_sigma = std::make_shared<std::vector<double>>(m);
  for (int i = 0; i < m; ++i) {
    double mu = 0.0;
    for (int j = 0; j < n; ++j) mu += x.at(i, j);
    mu /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) {
      double d = x.at(i, j) - mu;
      var += d * d;
    }
    var /= n;
    double is = 1.0 / std::sqrt(var + eps);
    (*inv_sigma)[i] = is;
    for (int j = 0; j < n; ++j) {
      double h = (x.at(i, j) - mu) * is;
      (*xhat)[i * n + j] = h;
      c.at(i, j) = h * (*gain.data)[j] + (*bias.data)[j];
    }
  }
  check_finite(c, "layer_norm");
  if (tape && c.requires_grad) {
    tape->record([x, gain, bias, c, xhat, inv_sigma, m, n]() {
      for (int i = 0; i < m; ++i) {
        double mean_dh = 0.0, mean_dh_xhat = 0.0;
        for (int j = 0; j < n; ++j) {
          double dh = (*c.grad)[i * n + j] * (*gain.data)[j];
          mean_dh += dh;
          mean_dh_xhat += dh * (*xhat)[i * n + j];
        }
        mean_dh /= n;
        mean_dh_xhat /= n;
        if (x.requires_grad) {
          for (int j = 0; j < n; ++j) {
            double dh = (*c.grad)[i * n + j] * (*gain.data)[j];
            (*x.grad)[i * n + j] +=
                (*inv_sigma)[i] * (dh - mean_dh - (*xhat)[i * n + j] * mean_dh_xhat);
          }
        }
        if (gain.requires_grad)
          for (int j = 0; j < n; ++j)
            (*gain.grad)[j] += (*c.grad)[i * n + j] * (*xhat)[i * n + j];
        if (bias.requires_grad)
          for (int j = 0; j < n; ++j) (*bias.grad)[j] += (*c.grad)[i * n + j];
      }
    });
  }
  return c;
}

Tensor concat_cols(Tape* tape, const Tensor& a, const Tensor& b) {
  const int m = a.rows();
  if (b.rows() != m) throw std::invalid_argument("concat_cols: row count mismatch");
  const int na = a.cols(), nb = b.cols();
  Tensor c = make_output({m, na + nb}, any_grad(a, b));
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < na; ++j) c.at(i, j) = a.at(i, j);
    for (int j = 0; j < nb; ++j) c.at(i, na + j) = b.at(i, j);
  }
  if (tape && c.requires_grad) {
    tape->record([a, b, c, m, na, nb]() {
      for (int i = 0; i < m; ++i) {
        if (a.requires_grad)
          for (int j = 0; j < na; ++j) (*a.grad)[i * na + j] += (*c.grad)[i * (na + nb) + j];
        if (b.requires_grad)
          for (int j = 0; j < nb; ++j)
            (*b.grad)[i * nb + j] += (*c.grad)[i * (na + nb) + na + j];
      }
    });
  }
  return c;
}

Tensor concat_rows(Tape* tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty input");
  const int n = parts[0].cols();
  int m = 0;
  bool rg = false;
  for (const Tensor& p : parts) {
    if (p.cols() != n) throw std::invalid_argument("concat_rows: column mismatch");
    m += p.rows();
    rg = rg || p.requires_grad;
  }
  Tensor c = make_output({m, n}, rg);
  int row = 0;
  for (const Tensor& p : parts) {
    std::copy(p.data->begin(), p.data->end(), c.data->begin() + row * n);
    row += p.rows();
  }
  if (tape && rg) {
    tape->record([parts, c, n]() {
      int row = 0;
      for (const Tensor& p : parts) {
        if (p.requires_grad) {
          for (int i = 0; i < p.numel(); ++i) (*p.grad)[i] += (*c.grad)[row * n + i];
        }
        row += p.rows();
      }
    });
  }
  return c;
}

Tensor slice_rows(Tape* tape, const Tensor& x, int start, int count) {
  const int m = x.rows(), n = x.cols();
  if (start < 0 || count <= 0 || start + count > m)
    throw std::invalid_argument("slice_rows: range out of bounds");
  Tensor c = make_output({count, n}, x.requires_grad);
  std::copy(x.data->begin() + start * n, x.data->begin() + (start + count) * n,
            c.data->begin());
  if (tape && c.requires_grad) {
    tape->record([x, c, start, count, n]() {
      for (int i = 0; i < count * n; ++i) (*x.grad)[start * n + i] += (*c.grad)[i];
    });
  }
  return c;
}

Tensor slice_cols(Tape* tape, const Tensor& x, int start, int count) {
  const int m = x.rows(), n = x.cols();
  if (start < 0 || count <= 0 || start + count > n)
    throw std::invalid_argument("slice_cols: range out of bounds");
  Tensor c = make_output({m, count}, x.requires_grad);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < count; ++j) c.at(i, j) = x.at(i, start + j);
  if (tape && c.requires_grad) {
    tape->record([x, c, start, count, m, n]() {
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < count; ++j)
          (*x.grad)[i * n + start + j] += (*c.grad)[i * count + j];
    });
  }
  return c;
}

Tensor gather_rows(Tape* tape, const Tensor& x, const std::vector<int>& indices) {
  const int m = x.rows(), n = x.cols();
  if (indices.empty()) throw std::invalid_argument("gather_rows: empty index list");
  for (int idx : indices)
    if (idx < 0 || idx >= m) throw std::invalid_argument("gather_rows: index out of range");
  Tensor c = make_output({static_cast<int>(indices.size()), n}, x.requires_grad);
  for (std::size_t i = 0; i < indices.size(); ++i)
    std::copy(x.data->begin() + indices[i] * n, x.data->begin() + (indices[i] + 1) * n,
              c.data->begin() + i * n);
  if (tape && c.requires_grad) {
    tape->record([x, c, indices, n]() {
      for (std::size_t i = 0; i < indices.size(); ++i)
        for (int j = 0; j < n; ++j)
          (*x.grad)[indices[i] * n + j] += (*c.grad)[i * n + j];
    });
  }
  return c;
}

Tensor sum_all(Tape* tape, const Tensor& x) {
  Tensor c = make_output({1, 1}, x.requires_grad);
  double s = 0.0;
  for (double v : *x.data) s += v;
  (*c.data)[0] = s;
  check_finite(c, "sum_all");
  if (tape && c.requires_grad) {
    tape->record([x, c]() {
      for (int i = 0; i < x.numel(); ++i) (*x.grad)[i] += (*c.grad)[0];
    });
  }
  return c;
}

Tensor mean_all(Tape* tape, const Tensor& x) {
  return scale(tape, sum_all(tape, x), 1.0 / x.numel());
}

double binary_focal_loss(double p, int z, double gamma, double alpha, double eps) {
  p = std::min(std::max(p, eps), 1.0 - eps);
  if (z == 1) return -alpha * std::pow(1.0 - p, gamma) * std::log(p);
  return -(1.0 - alpha) * std::pow(p, gamma) * std::log(1.0 - p);
}

Tensor focal_loss_sum(Tape* tape, const Tensor& probs, const Tensor& targets,
                      double gamma, double alpha, double eps) {
  if (probs.shape != targets.shape)
    throw std::invalid_argument("focal_loss_sum: shape mismatch");
  Tensor c = make_output({1, 1}, probs.requires_grad);
  double s = 0.0;
  for (int i = 0; i < probs.numel(); ++i) {
    int z = (*targets.data)[i] > 0.5 ? 1 : 0;
    s += binary_focal_loss((*probs.data)[i], z, gamma, alpha, eps);
  }
  (*c.data)[0] = s;
  check_finite(c, "focal_loss_sum");
  if (tape && c.requires_grad) {
    tape->record([probs, targets, c, gamma, alpha, eps]() {
      double g0 = (*c.grad)[0];
      for (int i = 0; i < probs.numel(); ++i) {
        double p = std::min(std::max((*probs.data)[i], eps), 1.0 - eps);
        int z = (*targets.data)[i] > 0.5 ? 1 : 0;
        double dp;
        if (z == 1) {
          dp = -alpha * std::pow(1.0 - p, gamma) / p;
          if (gamma != 0.0)
            dp += alpha * gamma * std::pow(1.0 - p, gamma - 1.0) * std::log(p);
        } else {
          dp = (1.0 - alpha) * std::pow(p, gamma) / (1.0 - p);
          if (gamma != 0.0)
            dp -= (1.0 - alpha) * gamma * std::pow(p, gamma - 1.0) * std::log(1.0 - p);
        }
        (*probs.grad)[i] += g0 * dp;
      }
    });
  }
  return c;
}

Mlp2Params Mlp2Params::init(int in, int hidden, int out, std::mt19937_64& rng) {
  Mlp2Params p;
  p.w1 = Tensor::randn({in, hidden}, rng, std::sqrt(2.0 / in), true);
  p.b1 = Tensor::zeros({hidden}, true);
  p.w2 = Tensor::randn({hidden, out}, rng, std::sqrt(2.0 / hidden), true);
  p.b2 = Tensor::zeros({out}, true);
  return p;
}

void Mlp2Params::collect(const std::string& prefix,
                         std::vector<std::pair<std::string, Tensor*>>& out) {
  out.emplace_back(prefix + ".w1", &w1);
  out.emplace_back(prefix + ".b1", &b1);
  out.emplace_back(prefix + ".w2", &w2);
  out.emplace_back(prefix + ".b2", &b2);
}

Tensor mlp2(Tape* tape, const Tensor& x, const Mlp2Params& p) {
  if (x.cols() != p.w1.rows()) throw std::invalid_argument("mlp2: input width mismatch");
  Tensor h = relu(tape, add_bias(tape, matmul(tape, x, p.w1), p.b1));
  return add_bias(tape, matmul(tape, h, p.w2), p.b2);
}

AdamW::AdamW(std::vector<Tensor*> params, AdamWConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  for (Tensor* p : params_) {
    if (!p->requires_grad) throw std::invalid_argument("AdamW: parameter without grad");
    m_.emplace_back(p->numel(), 0.0);
    v_.emplace_back(p->numel(), 0.0);
  }
}

void AdamW::step() {
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor* p = params_[k];
    for (int i = 0; i < p->numel(); ++i) {
      double g = (*p->grad)[i];
      m_[k][i] = cfg_.beta1 * m_[k][i] + (1.0 - cfg_.beta1) * g;
      v_[k][i] = cfg_.beta2 * v_[k][i] + (1.0 - cfg_.beta2) * g * g;
      double mhat = m_[k][i] / bc1;
      double vhat = v_[k][i] / bc2;
      (*p->data)[i] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                                  cfg_.weight_decay * (*p->data)[i]);
    }
  }
}

void AdamW::zero_grad() {
  for (Tensor* p : params_) p->zero_grad();
}

void save_checkpoint(const std::string& prefix,
                     const std::vector<std::pair<std::string, Tensor*>>& params) {
  std::ofstream manifest(prefix + ".manifest");
  std::ofstream blob(prefix + ".bin", std::ios::binary);
  if (!manifest || !blob)
    throw std::runtime_error("cannot open checkpoint files at prefix " + prefix);
  std::size_t offset = 0;
  for (const auto& [name, t] : params) {
    manifest << name << " " << t->shape.size();
    for (int d : t->shape) manifest << " " << d;
    manifest << " " << offset << "\n";
    // Little-endian doubles; matches the in-memory layout on x86/ARM.
    blob.write(reinterpret_cast<const char*>(t->data->data()),
               static_cast<std::streamsize>(t->data->size() * sizeof(double)));
    offset += t->data->size() * sizeof(double);
  }
}

void load_checkpoint(const std::string& prefix,
                     const std::vector<std::pair<std::string, Tensor*>>& params) {
  std::ifstream manifest(prefix + ".manifest");
  if (!manifest) throw std::runtime_error("missing checkpoint manifest: " + prefix + ".manifest");
  std::ifstream blob(prefix + ".bin", std::ios::binary);
  if (!blob) throw std::runtime_error("missing checkpoint blob: " + prefix + ".bin");

  struct Entry {
    std::vector<int> shape;
    std::size_t offset;
  };
  std::map<std::string, Entry> entries;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string name;
    int rank = 0;
    ss >> name >> rank;
    Entry e;
    for (int i = 0; i < rank; ++i) {
      int d = 0;
      ss >> d;
      e.shape.push_back(d);
    }
    ss >> e.offset;
    if (!ss) throw std::runtime_error("malformed checkpoint manifest line: " + line);
    entries[name] = std::move(e);
  }
  for (const auto& [name, t] : params) {
    auto it = entries.find(name);
    if (it == entries.end())
      throw std::runtime_error("checkpoint is missing tensor: " + name);
    if (it->second.shape != t->shape)
      throw std::runtime_error("checkpoint shape mismatch for tensor: " + name);
    blob.seekg(static_cast<std::streamoff>(it->second.offset));
    blob.read(reinterpret_cast<char*>(t->data->data()),
              static_cast<std::streamsize>(t->data->size() * sizeof(double)));
    if (!blob) throw std::runtime_error("truncated checkpoint blob while reading " + name);
  }
}

}  // namespace stip::ad
