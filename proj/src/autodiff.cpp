#include "musicdiff/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace musicdiff::ad {

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
}  // namespace

Var Tape::push(Mat value, std::function<void(Tape&, const Mat&)> back) {
  Node n;
  n.val = std::move(value);
  n.grad = Mat::Zero(n.val.rows(), n.val.cols());
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(const Mat& value) { return push(value, nullptr); }

double Tape::scalar(Var var) const {
  const Mat& m = val(var);
  if (m.size() != 1) throw Error(Errc::ShapeMismatch, "expected a 1x1 node");
  return m(0, 0);
}

void Tape::backward(Var root) {
  if (nodes_.empty()) throw Error(Errc::GraphNotRecorded, "no forward computation recorded");
  const int r = check(root);
  if (nodes_[static_cast<std::size_t>(r)].val.size() != 1) {
    throw Error(Errc::ShapeMismatch, "backward root must be scalar");
  }
  for (Node& n : nodes_) n.grad.setZero();
  nodes_[static_cast<std::size_t>(r)].grad(0, 0) = 1.0;
  for (int i = r; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.back && !n.grad.isZero(0.0)) n.back(*this, n.grad);
  }
}

namespace {
void require_same_shape(const Mat& a, const Mat& b, const char* who) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(Errc::ShapeMismatch, std::string(who) + ": shapes differ");
  }
}
}  // namespace

Var Tape::add(Var a, Var b) {
  const int ia = check(a), ib = check(b);
  require_same_shape(v(ia), v(ib), "add");
  return push(v(ia) + v(ib), [ia, ib](Tape& t, const Mat& go) {
    t.g(ia) += go;
    t.g(ib) += go;
  });
}

Var Tape::sub(Var a, Var b) {
  const int ia = check(a), ib = check(b);
  require_same_shape(v(ia), v(ib), "sub");
  return push(v(ia) - v(ib), [ia, ib](Tape& t, const Mat& go) {
    t.g(ia) += go;
    t.g(ib) -= go;
  });
}

Var Tape::mul(Var a, Var b) {
  const int ia = check(a), ib = check(b);
  require_same_shape(v(ia), v(ib), "mul");
  return push(v(ia).cwiseProduct(v(ib)), [ia, ib](Tape& t, const Mat& go) {
    t.g(ia) += go.cwiseProduct(t.v(ib));
    t.g(ib) += go.cwiseProduct(t.v(ia));
  });
}

Var Tape::matmul(Var a, Var b) {
  const int ia = check(a), ib = check(b);
  if (v(ia).cols() != v(ib).rows()) throw Error(Errc::ShapeMismatch, "matmul: inner dims differ");
  return push(v(ia) * v(ib), [ia, ib](Tape& t, const Mat& go) {
    t.g(ia) += go * t.v(ib).transpose();
    t.g(ib) += t.v(ia).transpose() * go;
  });
}

Var Tape::transpose(Var a) {
  const int ia = check(a);
  return push(v(ia).transpose(), [ia](Tape& t, const Mat& go) { t.g(ia) += go.transpose(); });
}

Var Tape::scale(Var a, double c) {
  const int ia = check(a);
  return push(v(ia) * c, [ia, c](Tape& t, const Mat& go) { t.g(ia) += go * c; });
}

Var Tape::add_const(Var a, const Mat& c) {
  const int ia = check(a);
  require_same_shape(v(ia), c, "add_const");
  return push(v(ia) + c, [ia](Tape& t, const Mat& go) { t.g(ia) += go; });
}

Var Tape::mul_const(Var a, const Mat& c) {
  const int ia = check(a);
  require_same_shape(v(ia), c, "mul_const");
  Mat cc = c;
  return push(v(ia).cwiseProduct(c),
              [ia, cc](Tape& t, const Mat& go) { t.g(ia) += go.cwiseProduct(cc); });
}

Var Tape::add_colvec(Var m, Var col) {
  const int im = check(m), ic = check(col);
  if (v(ic).cols() != 1 || v(ic).rows() != v(im).rows()) {
    throw Error(Errc::ShapeMismatch, "add_colvec: column vector shape mismatch");
  }
  Mat out = v(im);
  out.colwise() += Vec(v(ic).col(0));
  return push(std::move(out), [im, ic](Tape& t, const Mat& go) {
    t.g(im) += go;
    t.g(ic) += go.rowwise().sum();
  });
}

Var Tape::mul_colvec(Var m, Var col) {
  const int im = check(m), ic = check(col);
  if (v(ic).cols() != 1 || v(ic).rows() != v(im).rows()) {
    throw Error(Errc::ShapeMismatch, "mul_colvec: column vector shape mismatch");
  }
  Mat out = (v(im).array().colwise() * v(ic).col(0).array()).matrix();
  return push(std::move(out), [im, ic](Tape& t, const Mat& go) {
    t.g(im) += (go.array().colwise() * t.v(ic).col(0).array()).matrix();
    t.g(ic) += go.cwiseProduct(t.v(im)).rowwise().sum();
  });
}

Var Tape::scale_by_scalar(Var m, Var s) {
  const int im = check(m), is = check(s);
  if (v(is).size() != 1) throw Error(Errc::ShapeMismatch, "scale_by_scalar: scalar must be 1x1");
  return push(v(im) * v(is)(0, 0), [im, is](Tape& t, const Mat& go) {
    t.g(im) += go * t.v(is)(0, 0);
    t.g(is)(0, 0) += go.cwiseProduct(t.v(im)).sum();
  });
}

Var Tape::vcat(Var top, Var bottom) {
  const int it = check(top), ib = check(bottom);
  if (v(it).cols() != v(ib).cols()) throw Error(Errc::ShapeMismatch, "vcat: column counts differ");
  Mat out(v(it).rows() + v(ib).rows(), v(it).cols());
  out.topRows(v(it).rows()) = v(it);
  out.bottomRows(v(ib).rows()) = v(ib);
  const int rt = static_cast<int>(v(it).rows());
  return push(std::move(out), [it, ib, rt](Tape& t, const Mat& go) {
    t.g(it) += go.topRows(rt);
    t.g(ib) += go.bottomRows(go.rows() - rt);
  });
}

Var Tape::hcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error(Errc::ShapeMismatch, "hcat: no parts");
  std::vector<int> ids;
  Eigen::Index rows = v(check(parts[0])).rows();
  Eigen::Index cols = 0;
  for (Var p : parts) {
    const int ip = check(p);
    if (v(ip).rows() != rows) throw Error(Errc::ShapeMismatch, "hcat: row counts differ");
    cols += v(ip).cols();
    ids.push_back(ip);
  }
  Mat out(rows, cols);
  Eigen::Index at = 0;
  for (int ip : ids) {
    out.middleCols(at, v(ip).cols()) = v(ip);
    at += v(ip).cols();
  }
  return push(std::move(out), [ids](Tape& t, const Mat& go) {
    Eigen::Index at = 0;
    for (int ip : ids) {
      t.g(ip) += go.middleCols(at, t.v(ip).cols());
      at += t.v(ip).cols();
    }
  });
}

Var Tape::slice_rows(Var a, int start, int rows) {
  const int ia = check(a);
  if (start < 0 || rows < 0 || start + rows > v(ia).rows()) {
    throw Error(Errc::ShapeMismatch, "slice_rows: out of range");
  }
  return push(v(ia).middleRows(start, rows), [ia, start, rows](Tape& t, const Mat& go) {
    t.g(ia).middleRows(start, rows) += go;
  });
}

Var Tape::slice_cols(Var a, int start, int cols) {
  const int ia = check(a);
  if (start < 0 || cols < 0 || start + cols > v(ia).cols()) {
    throw Error(Errc::ShapeMismatch, "slice_cols: out of range");
  }
  return push(v(ia).middleCols(start, cols), [ia, start, cols](Tape& t, const Mat& go) {
    t.g(ia).middleCols(start, cols) += go;
  });
}

Var Tape::gather_cols(Var a, const std::vector<int>& index) {
  const int ia = check(a);
  for (int j : index) {
    if (j < 0 || j >= v(ia).cols()) throw Error(Errc::AlignmentMissing, "gather index out of range");
  }
  Mat out(v(ia).rows(), static_cast<Eigen::Index>(index.size()));
  for (std::size_t j = 0; j < index.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = v(ia).col(index[j]);
  std::vector<int> idx = index;
  return push(std::move(out), [ia, idx](Tape& t, const Mat& go) {
    for (std::size_t j = 0; j < idx.size(); ++j) {
      t.g(ia).col(idx[j]) += go.col(static_cast<Eigen::Index>(j));
    }
  });
}

Var Tape::shift_cols(Var a) {
  const int ia = check(a);
  Mat out = Mat::Zero(v(ia).rows(), v(ia).cols());
  if (v(ia).cols() > 1) out.rightCols(v(ia).cols() - 1) = v(ia).leftCols(v(ia).cols() - 1);
  return push(std::move(out), [ia](Tape& t, const Mat& go) {
    if (go.cols() > 1) t.g(ia).leftCols(go.cols() - 1) += go.rightCols(go.cols() - 1);
  });
}

Var Tape::sigmoid(Var a) {
  const int ia = check(a);
  Mat out = (1.0 + (-v(ia).array()).exp()).inverse().matrix();
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), [ia, self](Tape& t, const Mat& go) {
    const Mat& y = t.v(self);
    t.g(ia).array() += go.array() * y.array() * (1.0 - y.array());
  });
}

Var Tape::tanh(Var a) {
  const int ia = check(a);
  Mat out = v(ia).array().tanh().matrix();
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), [ia, self](Tape& t, const Mat& go) {
    const Mat& y = t.v(self);
    t.g(ia).array() += go.array() * (1.0 - y.array().square());
  });
}

namespace {
double gauss_cdf(double x) { return 0.5 * (1.0 + std::erf(x * kInvSqrt2)); }
}  // namespace

Var Tape::gelu(Var a) {
  const int ia = check(a);
  Mat out = v(ia).unaryExpr([](double x) { return x * gauss_cdf(x); });
  return push(std::move(out), [ia](Tape& t, const Mat& go) {
    const Mat d = t.v(ia).unaryExpr([](double x) {
      return gauss_cdf(x) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
    });
    t.g(ia) += go.cwiseProduct(d);
  });
}

Var Tape::exp(Var a) {
  const int ia = check(a);
  Mat out = v(ia).array().exp().matrix();
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), [ia, self](Tape& t, const Mat& go) {
    t.g(ia).array() += go.array() * t.v(self).array();
  });
}

Var Tape::log(Var a) {
  const int ia = check(a);
  Mat out = v(ia).array().log().matrix();
  return push(std::move(out), [ia](Tape& t, const Mat& go) {
    t.g(ia).array() += go.array() / t.v(ia).array();
  });
}

Var Tape::square(Var a) {
  const int ia = check(a);
  return push(v(ia).array().square().matrix(), [ia](Tape& t, const Mat& go) {
    t.g(ia).array() += 2.0 * go.array() * t.v(ia).array();
  });
}

Var Tape::sqrt(Var a) {
  const int ia = check(a);
  Mat out = v(ia).array().sqrt().matrix();
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), [ia, self](Tape& t, const Mat& go) {
    t.g(ia).array() += go.array() * 0.5 / t.v(self).array();
  });
}

Var Tape::clamp_min(Var a, double floor) {
  const int ia = check(a);
  Mat out = v(ia).cwiseMax(floor);
  return push(std::move(out), [ia, floor](Tape& t, const Mat& go) {
    t.g(ia).array() += go.array() * (t.v(ia).array() > floor).cast<double>();
  });
}

Var Tape::sum(Var a) {
  const int ia = check(a);
  return push(Mat::Constant(1, 1, v(ia).sum()), [ia](Tape& t, const Mat& go) {
    t.g(ia).array() += go(0, 0);
  });
}

Var Tape::mean(Var a) {
  const int ia = check(a);
  const double n = static_cast<double>(v(ia).size());
  return push(Mat::Constant(1, 1, v(ia).sum() / n), [ia, n](Tape& t, const Mat& go) {
    t.g(ia).array() += go(0, 0) / n;
  });
}

Var Tape::mse(Var a, Var b) {
  const int ia = check(a), ib = check(b);
  require_same_shape(v(ia), v(ib), "mse");
  const double n = static_cast<double>(v(ia).size());
  const Mat diff = v(ia) - v(ib);
  return push(Mat::Constant(1, 1, diff.squaredNorm() / n), [ia, ib, n](Tape& t, const Mat& go) {
    const Mat d = (t.v(ia) - t.v(ib)) * (2.0 * go(0, 0) / n);
    t.g(ia) += d;
    t.g(ib) -= d;
  });
}

Var Tape::smooth_l1(Var a, Var b) {
  const int ia = check(a), ib = check(b);
  require_same_shape(v(ia), v(ib), "smooth_l1");
  const double n = static_cast<double>(v(ia).size());
  const Eigen::ArrayXXd d = (v(ia) - v(ib)).array();
  const Eigen::ArrayXXd loss = (d.abs() < 1.0).select(0.5 * d.square(), d.abs() - 0.5);
  return push(Mat::Constant(1, 1, loss.sum() / n), [ia, ib, n](Tape& t, const Mat& go) {
    const Eigen::ArrayXXd d = (t.v(ia) - t.v(ib)).array();
    const Mat gr = (d.max(-1.0).min(1.0) * (go(0, 0) / n)).matrix();
    t.g(ia) += gr;
    t.g(ib) -= gr;
  });
}

Var Tape::dot(Var a, Var b) {
  const int ia = check(a), ib = check(b);
  require_same_shape(v(ia), v(ib), "dot");
  return push(Mat::Constant(1, 1, v(ia).cwiseProduct(v(ib)).sum()),
              [ia, ib](Tape& t, const Mat& go) {
                t.g(ia) += go(0, 0) * t.v(ib);
                t.g(ib) += go(0, 0) * t.v(ia);
              });
}

Var Tape::mean_cols(Var a) {
  const int ia = check(a);
  const double n = static_cast<double>(v(ia).cols());
  return push(v(ia).rowwise().sum() / n, [ia, n](Tape& t, const Mat& go) {
    t.g(ia).colwise() += Vec(go.col(0) / n);
  });
}

Var Tape::softmax_cols(Var a) {
  const int ia = check(a);
  Mat out = v(ia);
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    Vec c = out.col(j);
    const double m = c.maxCoeff();
    c = (c.array() - m).exp().matrix();
    out.col(j) = c / c.sum();
  }
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), [ia, self](Tape& t, const Mat& go) {
    const Mat& y = t.v(self);
    for (Eigen::Index j = 0; j < y.cols(); ++j) {
      const double s = go.col(j).dot(y.col(j));
      t.g(ia).col(j) += y.col(j).cwiseProduct(go.col(j) - Vec::Constant(y.rows(), s));
    }
  });
}

Var Tape::log_sum_exp_cols(Var a) {
  const int ia = check(a);
  const Mat& x = v(ia);
  Mat out(1, x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double m = x.col(j).maxCoeff();
    out(0, j) = m + std::log((x.col(j).array() - m).exp().sum());
  }
  return push(std::move(out), [ia](Tape& t, const Mat& go) {
    const Mat& x = t.v(ia);
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double m = x.col(j).maxCoeff();
      Vec p = (x.col(j).array() - m).exp().matrix();
      p /= p.sum();
      t.g(ia).col(j) += p * go(0, j);
    }
  });
}

Var Tape::cross_entropy_cols(Var logits, const std::vector<int>& targets) {
  const int ia = check(logits);
  const Mat& x = v(ia);
  if (static_cast<Eigen::Index>(targets.size()) != x.cols()) {
    throw Error(Errc::ShapeMismatch, "cross_entropy_cols: one target per column required");
  }
  double total = 0.0;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const int tgt = targets[static_cast<std::size_t>(j)];
    if (tgt < 0 || tgt >= x.rows()) throw Error(Errc::ShapeMismatch, "target out of range");
    const double m = x.col(j).maxCoeff();
    const double lse = m + std::log((x.col(j).array() - m).exp().sum());
    total += lse - x(tgt, j);
  }
  const double n = static_cast<double>(x.cols());
  std::vector<int> tg = targets;
  return push(Mat::Constant(1, 1, total / n), [ia, tg, n](Tape& t, const Mat& go) {
    const Mat& x = t.v(ia);
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double m = x.col(j).maxCoeff();
      Vec p = (x.col(j).array() - m).exp().matrix();
      p /= p.sum();
      p(tg[static_cast<std::size_t>(j)]) -= 1.0;
      t.g(ia).col(j) += p * (go(0, 0) / n);
    }
  });
}

Var Tape::l2_normalize_cols(Var a, double eps) {
  const int ia = check(a);
  const Mat& x = v(ia);
  Mat out = x;
  Vec norms(x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    norms(j) = std::max(x.col(j).norm(), eps);
    out.col(j) /= norms(j);
  }
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), [ia, self, eps](Tape& t, const Mat& go) {
    const Mat& x = t.v(ia);
    const Mat& y = t.v(self);
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double norm = std::max(x.col(j).norm(), eps);
      // d/dx (x/|x|) = (I - y y^T)/|x|
      t.g(ia).col(j) += (go.col(j) - y.col(j) * y.col(j).dot(go.col(j))) / norm;
    }
  });
}

// ---------------------------------------------------------------------------
// WKV

namespace {

// Shared forward kernel; writes outputs and the per-entry log denominator
// log B[d,t] used by the adjoint.
void wkv_kernel(const Vec& w, const Mat& k, const Mat& v, Mat& out, Mat& log_denom) {
  const Eigen::Index D = k.rows(), T = k.cols();
  out.resize(D, T);
  log_denom.resize(D, T);
  for (Eigen::Index d = 0; d < D; ++d) {
    // State: numerator a, denominator b, shared exponent shift p, with the
    // true running sums being (a, b) * exp(p).
    double a = 0.0, b = 0.0, p = -1e300;
    for (Eigen::Index t = 0; t < T; ++t) {
      const double kt = k(d, t);
      const double pp = std::max(p + w(d), kt);
      const double scale_old = std::exp(p + w(d) - pp);
      const double scale_new = std::exp(kt - pp);
      a = a * scale_old + v(d, t) * scale_new;
      b = b * scale_old + scale_new;
      p = pp;
      out(d, t) = a / b;
      log_denom(d, t) = std::log(b) + p;
    }
  }
}

}  // namespace

Mat wkv_forward(const Vec& decay, const Mat& k, const Mat& v) {
  if (k.rows() != v.rows() || k.cols() != v.cols()) {
    throw Error(Errc::LengthMismatch, "wkv: key/value shapes differ");
  }
  if (decay.size() != k.rows()) throw Error(Errc::LengthMismatch, "wkv: decay length mismatch");
  Mat out, log_denom;
  wkv_kernel(decay, k, v, out, log_denom);
  return out;
}

Var Tape::wkv(Var decay, Var k, Var v) {
  const int iw = check(decay), ik = check(k), iv = check(v);
  if (this->v(ik).rows() != this->v(iv).rows() || this->v(ik).cols() != this->v(iv).cols()) {
    throw Error(Errc::LengthMismatch, "wkv: key/value shapes differ");
  }
  if (this->v(iw).cols() != 1 || this->v(iw).rows() != this->v(ik).rows()) {
    throw Error(Errc::LengthMismatch, "wkv: decay must be Dx1");
  }
  Mat out, log_denom;
  wkv_kernel(this->v(iw).col(0), this->v(ik), this->v(iv), out, log_denom);
  Mat ld = std::move(log_denom);
  const int self = static_cast<int>(nodes_.size());
  return push(std::move(out), [iw, ik, iv, self, ld](Tape& t, const Mat& go) {
    const Mat& kk = t.v(ik);
    const Mat& vv = t.v(iv);
    const Mat& y = t.v(self);
    const Eigen::Index D = kk.rows(), T = kk.cols();
    for (Eigen::Index d = 0; d < D; ++d) {
      const double w = t.v(iw)(d, 0);
      // Reversed recurrences over j (all at shared exponent shift c):
      //   G_j  = sum_{tau>=j} g_tau exp(w (tau-j)) / B_tau
      //   H_j  = same with an extra y_tau factor
      //   Gp_j = same with an extra (tau-j) factor, Hp likewise.
      // Then dv_j = e^{k_j} G_j, dk_j = e^{k_j}(v_j G_j - H_j),
      // dw += e^{k_j}(v_j Gp_j - Hp_j).
      double c = -ld(d, T - 1);
      double G = go(d, T - 1), H = go(d, T - 1) * y(d, T - 1);
      double Gp = 0.0, Hp = 0.0;
      double dw = 0.0;
      for (Eigen::Index j = T - 1;; --j) {
        const double e = std::exp(kk(d, j) + c);
        t.g(iv)(d, j) += e * G;
        t.g(ik)(d, j) += e * (vv(d, j) * G - H);
        dw += e * (vv(d, j) * Gp - Hp);
        if (j == 0) break;
        const double c_new = std::max(c + w, -ld(d, j - 1));
        const double s_old = std::exp(c + w - c_new);
        const double s_term = std::exp(-ld(d, j - 1) - c_new);
        Gp = s_old * (Gp + G);
        Hp = s_old * (Hp + H);
        G = s_old * G + go(d, j - 1) * s_term;
        H = s_old * H + go(d, j - 1) * y(d, j - 1) * s_term;
        c = c_new;
      }
      t.g(iw)(d, 0) += dw;
    }
  });
}

}  // namespace musicdiff::ad
