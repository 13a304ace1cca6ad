#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace stip::ad {

// Dense row-major 64-bit float tensor. Rank is 1 or 2 in practice; rank-1
// tensors behave as [1 x n] rows where a matrix is expected.
struct Tensor {
  std::vector<int> shape;
  std::shared_ptr<std::vector<double>> data;
  std::shared_ptr<std::vector<double>> grad;  // non-null iff requires_grad
  bool requires_grad = false;

  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
  static Tensor from_vector(std::vector<int> shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor randn(std::vector<int> shape, std::mt19937_64& rng, double stddev,
                      bool requires_grad = false);

  int numel() const;
  int rows() const;
  int cols() const;
  double& at(int r, int c);
  double at(int r, int c) const;
  double& operator[](int i) { return (*data)[i]; }
  double operator[](int i) const { return (*data)[i]; }
  double scalar() const;  // requires numel() == 1

  void zero_grad();
};

// Ordered record of backward closures. Ops append during the forward pass;
// backward() replays them in strict reverse order. Gradients accumulate
// additively, so a tensor feeding several consumers sums its contributions.
class Tape {
 public:
  void record(std::function<void()> fn) { records_.push_back(std::move(fn)); }
  void backward(Tensor& loss);
  void clear() { records_.clear(); }
  std::size_t size() const { return records_.size(); }

 private:
  std::vector<std::function<void()>> records_;
};

// All ops accept a nullable tape: pass nullptr for pure (no-grad) evaluation.
Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b);
// c = a * b^T, a: [m x k], b: [n x k] -> [m x n]
Tensor matmul_nt(Tape* tape, const Tensor& a, const Tensor& b);
Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
// x: [m x n], bias: [n] broadcast over rows
Tensor add_bias(Tape* tape, const Tensor& x, const Tensor& bias);
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape* tape, const Tensor& a, double s);
Tensor relu(Tape* tape, const Tensor& x);
Tensor sigmoid(Tape* tape, const Tensor& x);
Tensor softmax_rows(Tape* tape, const Tensor& x);
Tensor layer_norm(Tape* tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
Tensor concat_cols(Tape* tape, const Tensor& a, const Tensor& b);
Tensor concat_rows(Tape* tape, const std::vector<Tensor>& parts);
Tensor slice_rows(Tape* tape, const Tensor& x, int start, int count);
Tensor slice_cols(Tape* tape, const Tensor& x, int start, int count);
Tensor gather_rows(Tape* tape, const Tensor& x, const std::vector<int>& indices);
inline Tensor embedding_lookup(Tape* tape, const Tensor& table, const std::vector<int>& idx) {
  return gather_rows(tape, table, idx);
}
Tensor sum_all(Tape* tape, const Tensor& x);
Tensor mean_all(Tape* tape, const Tensor& x);

// Elementwise focal loss, summed. Probabilities are clamped to
// [eps, 1-eps] before the logs; targets are 0/1 and carry no gradient.
Tensor focal_loss_sum(Tape* tape, const Tensor& probs, const Tensor& targets,
                      double gamma, double alpha, double eps = 1e-7);
// Scalar convenience used by closed-form tests and the proposal loss.
double binary_focal_loss(double p, int z, double gamma, double alpha, double eps = 1e-7);

struct Mlp2Params {
  Tensor w1, b1, w2, b2;
  static Mlp2Params init(int in, int hidden, int out, std::mt19937_64& rng);
  void collect(const std::string& prefix,
               std::vector<std::pair<std::string, Tensor*>>& out);
};
// relu MLP applied row-wise: relu(x*W1 + b1)*W2 + b2
Tensor mlp2(Tape* tape, const Tensor& x, const Mlp2Params& p);

struct AdamWConfig {
  double lr = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Decoupled weight decay Adam with bias correction.
class AdamW {
 public:
  AdamW(std::vector<Tensor*> params, AdamWConfig cfg);
  void step();
  void zero_grad();
  int64_t step_count() const { return step_; }

 private:
  std::vector<Tensor*> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamWConfig cfg_;
  int64_t step_ = 0;
};

// Checkpoint layout: <prefix>.manifest lists "name rank d0 [d1] offset" per
// tensor, <prefix>.bin holds all values as little-endian 64-bit floats in
// manifest order.
void save_checkpoint(const std::string& prefix,
                     const std::vector<std::pair<std::string, Tensor*>>& params);
void load_checkpoint(const std::string& prefix,
                     const std::vector<std::pair<std::string, Tensor*>>& params);

}  // namespace stip::ad
