#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "musicdiff/common.hpp"

namespace musicdiff::ad {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

class Tape;

// Handle to a node on a tape. Copyable and cheap; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
};

// Reverse-mode tape over matrix-valued nodes. Columns index positions or
// samples, rows index feature dimensions. One tape records one forward
// computation; backward() may be called repeatedly with different roots.
class Tape {
public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(const Mat& value);
  Var leaf(double value) { return leaf(Mat::Constant(1, 1, value)); }

  const Mat& val(Var v) const { return nodes_[static_cast<std::size_t>(check(v))].val; }
  const Mat& grad(Var v) const { return nodes_[static_cast<std::size_t>(check(v))].grad; }
  double scalar(Var v) const;

  std::size_t size() const { return nodes_.size(); }

  // Seeds d(root)=1 (root must be 1x1), zeroes all other gradients, and runs
  // the recorded adjoints in reverse order. Throws GraphNotRecorded when the
  // tape is empty or the root is not on this tape.
  void backward(Var root);

  // Elementwise and linear algebra.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);          // elementwise
  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var scale(Var a, double c);
  Var add_const(Var a, const Mat& c);
  Var mul_const(Var a, const Mat& c);  // elementwise
  Var add_colvec(Var m, Var col);      // broadcast a Dx1 column across columns
  Var mul_colvec(Var m, Var col);
  Var scale_by_scalar(Var m, Var s);   // s is 1x1
  Var vcat(Var top, Var bottom);
  Var hcat(const std::vector<Var>& parts);
  Var slice_rows(Var a, int start, int rows);
  Var slice_cols(Var a, int start, int cols);
  Var gather_cols(Var a, const std::vector<int>& index);
  Var shift_cols(Var a);  // drop last column, prepend zeros

  // Nonlinearities.
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var gelu(Var a);  // exact erf form
  Var exp(Var a);
  Var log(Var a);
  Var square(Var a);
  Var sqrt(Var a);
  Var clamp_min(Var a, double floor);

  // Reductions and losses (all return 1x1).
  Var sum(Var a);
  Var mean(Var a);
  Var mse(Var a, Var b);
  Var smooth_l1(Var a, Var b);  // mean of elementwise huber with beta = 1
  Var dot(Var a, Var b);        // sum of elementwise product

  Var mean_cols(Var a);  // Dx1
  Var softmax_cols(Var a);
  Var log_sum_exp_cols(Var a);  // 1xN, numerically stabilized
  // Mean over columns of -log softmax(col)[target]; numerically fused.
  Var cross_entropy_cols(Var logits, const std::vector<int>& targets);
  Var l2_normalize_cols(Var a, double eps = 1e-12);

  // Causal position-decayed softmax average (one channel per row):
  //   out[d,t] = sum_{i<=t} exp(decay[d]*(t-i) + k[d,i]) * v[d,i]
  //            / sum_{i<=t} exp(decay[d]*(t-i) + k[d,i])
  // computed by the linear-time running recurrence with max-shift
  // stabilization; the adjoint runs the matching reversed recurrence.
  Var wkv(Var decay, Var k, Var v);

private:
  struct Node {
    Mat val;
    Mat grad;
    // Receives the accumulated gradient of this node's value.
    std::function<void(Tape&, const Mat&)> back;
  };

  int check(Var v) const {
    if (v.tape != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size())) {
      throw Error(Errc::GraphNotRecorded, "variable does not belong to this tape");
    }
    return v.id;
  }

  Var push(Mat value, std::function<void(Tape&, const Mat&)> back);
  Mat& g(int id) { return nodes_[static_cast<std::size_t>(id)].grad; }
  const Mat& v(int id) const { return nodes_[static_cast<std::size_t>(id)].val; }

  std::vector<Node> nodes_;
};

// Plain-matrix WKV used by the inference path and exposed for oracle tests;
// identical arithmetic to the tape node's forward pass.
Mat wkv_forward(const Vec& decay, const Mat& k, const Mat& v);

}  // namespace musicdiff::ad
