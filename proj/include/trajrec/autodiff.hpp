#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace trajrec::ad {

// Dense row-major matrix of doubles. The only tensor type used by the
// model; vectors are 1xN or Nx1 matrices.
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  static Mat eye(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
  }

  double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  double* row(std::size_t i) { return data.data() + i * cols; }
  const double* row(std::size_t i) const { return data.data() + i * cols; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

// Plain kernels shared by tape ops and inference paths.
Mat matmul(const Mat& a, const Mat& b);
Mat matmul_nt(const Mat& a, const Mat& b);  // a @ b^T
Mat matmul_tn(const Mat& a, const Mat& b);  // a^T @ b
void add_in_place(Mat& a, const Mat& b);
void axpy_in_place(Mat& a, double s, const Mat& b);  // a += s*b
double stable_sigmoid(double x);

// Compressed neighbor lists (per-row index ranges into `targets`).
struct CsrAdjacency {
  std::vector<std::uint32_t> offsets;  // size rows+1
  std::vector<std::uint32_t> targets;
  std::size_t rows() const { return offsets.empty() ? 0 : offsets.size() - 1; }
};

// Named trainable parameter. Index is its position in the store's
// deterministic registration order.
struct Param {
  std::string name;
  Mat value;
  Mat grad;
  std::size_t index = 0;
};

class ParamStore {
 public:
  Param& create(const std::string& name, std::size_t rows, std::size_t cols);
  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::size_t size() const { return params_.size(); }
  Param& operator[](std::size_t i) { return *params_[i]; }
  const Param& operator[](std::size_t i) const { return *params_[i]; }
  void zero_grads();
  // Fresh zero matrices shaped like each parameter (per-thread sinks).
  std::vector<Mat> make_grad_buffers() const;

 private:
  std::vector<std::unique_ptr<Param>> params_;
  std::unordered_map<std::string, std::size_t> by_name_;
};

class Tape;

// Handle to a tape node.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;
  const Mat& value() const;
  std::size_t rows() const { return value().rows; }
  std::size_t cols() const { return value().cols; }
};

// Reverse-mode tape over Mat values. Nodes are created in topological
// order; backward() sweeps them in reverse. Parameter gradients are
// accumulated into the sink vector (indexed by Param::index) so batched
// training can keep one sink per thread and reduce in thread order.
class Tape {
 public:
  explicit Tape(std::vector<Mat>* param_grad_sink = nullptr)
      : sink_(param_grad_sink) {}

  void clear();
  std::size_t node_count() const { return nodes_.size(); }

  Var constant(Mat v);
  Var param(const Param& p);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise
  Var scale(Var a, double s);
  Var scale_rows(Var a, const Mat& col);  // col Rx1 constant, scales row i
  Var add_row(Var a, Var row);  // broadcast 1xC over rows
  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var concat_cols(const std::vector<Var>& parts);
  Var concat_rows(const std::vector<Var>& parts);
  Var slice_cols(Var a, std::size_t c0, std::size_t c1);
  Var gather_rows(Var a, std::vector<std::size_t> idx);
  Var sum_all(Var a);   // 1x1
  Var sum_rows(Var a);  // column sums -> 1xC

  Var relu(Var a);
  Var leaky_relu(Var a, double slope);
  Var sigmoid(Var a);
  Var lecun_tanh(Var a);  // 1.7159 * tanh(2x/3)
  Var sine(Var a);

  Var softmax_rows(Var a);
  // y = (x - mean)/sqrt(var + eps) * gain + bias, per row. gain/bias 1xC.
  Var layer_norm_rows(Var x, Var gain, Var bias, double eps);

  // One GATv2 head. feats_proj is W_k u for all nodes (|V| x d_h);
  // attn_vec is [a_left | a_right] (1 x 2*d_h); nbrs lists each node's
  // attended set (in-neighbors plus self). Output |V| x d_h:
  //   s_ij = a_l . LR(x_i) + a_r . LR(x_j),  alpha = softmax over nbrs(i)
  //   out_i = LR(sum_j alpha_ij x_j)
  // alpha_out, when given, receives the attention weights aligned with
  // nbrs.targets (one entry per CSR slot).
  Var gat_head(Var feats_proj, Var attn_vec, const CsrAdjacency& nbrs,
               double slope, std::vector<double>* alpha_out = nullptr);

  // Attention with per-query evolved keys, streamed row by row (never
  // materializes the per-pair evolved keys). dt is l_q x l_k constant.
  //   key_ij = sig(-xi1_j*dt_ij)*xi2_j + (1-sig)*xi3_j  (elementwise)
  //   score_ij = (q_i . key_ij) * inv_sqrt_dh, alpha = softmax_j, out = alpha V
  // attn_out, when given, receives the l_q x l_k attention weights.
  Var evolved_key_attention(Var q, Var xi1, Var xi2, Var xi3, Var v,
                            const Mat& dt, double inv_sqrt_dh,
                            Mat* attn_out = nullptr);

  // Cross-entropy of a mask-weighted softmax over one logits row:
  //   P_j = exp(l_j) * c_j / sum_k exp(l_k) * c_k   (c >= 0, c_target > 0)
  // Returns 1x1 loss -log P_target.
  Var masked_softmax_ce(Var logits, const Mat& mask, std::size_t target);

  void backward(Var root, double seed = 1.0);

  const Mat& value(std::size_t id) const { return nodes_[id].value; }
  const Mat& grad_of(Var v) const { return nodes_[v.id].grad; }

 private:
  struct Node {
    Mat value;
    Mat grad;
    std::function<void()> back;  // null for constants
  };

  Var make(Mat value, std::function<void()> back = nullptr);
  Mat& grad(std::size_t id) { return nodes_[id].grad; }

  std::vector<Node> nodes_;
  std::vector<Mat>* sink_;
};

// Mask-weighted softmax over one row (inference path; tape-free).
Mat masked_softmax(const Mat& logits, const Mat& mask);

}  // namespace trajrec::ad
