#include "trajrec/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "trajrec/errors.hpp"

namespace trajrec::ad {

namespace {

void check(bool ok, const char* msg) {
  if (!ok) throw ValidationError(std::string("autodiff: ") + msg);
}

}  // namespace

Mat matmul(const Mat& a, const Mat& b) {
  check(a.cols == b.rows, "matmul shape mismatch");
  Mat out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* ar = a.row(i);
    double* orow = out.row(i);
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = ar[k];
      if (aik == 0.0) continue;
      const double* br = b.row(k);
      for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * br[j];
    }
  }
  return out;
}

Mat matmul_nt(const Mat& a, const Mat& b) {
  check(a.cols == b.cols, "matmul_nt shape mismatch");
  Mat out(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* ar = a.row(i);
    double* orow = out.row(i);
    for (std::size_t j = 0; j < b.rows; ++j) {
      const double* br = b.row(j);
      double s = 0;
      for (std::size_t k = 0; k < a.cols; ++k) s += ar[k] * br[k];
      orow[j] = s;
    }
  }
  return out;
}

Mat matmul_tn(const Mat& a, const Mat& b) {
  check(a.rows == b.rows, "matmul_tn shape mismatch");
  Mat out(a.cols, b.cols);
  for (std::size_t k = 0; k < a.rows; ++k) {
    const double* ar = a.row(k);
    const double* br = b.row(k);
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double aki = ar[i];
      if (aki == 0.0) continue;
      double* orow = out.row(i);
      for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aki * br[j];
    }
  }
  return out;
}

void add_in_place(Mat& a, const Mat& b) {
  check(a.same_shape(b), "add_in_place shape mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) a.data[i] += b.data[i];
}

void axpy_in_place(Mat& a, double s, const Mat& b) {
  check(a.same_shape(b), "axpy shape mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) a.data[i] += s * b.data[i];
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Param& ParamStore::create(const std::string& name, std::size_t rows,
                          std::size_t cols) {
  if (by_name_.count(name)) {
    throw ValidationError("duplicate parameter name: " + name);
  }
  auto p = std::make_unique<Param>();
  p->name = name;
  p->value = Mat(rows, cols);
  p->grad = Mat(rows, cols);
  p->index = params_.size();
  by_name_.emplace(name, p->index);
  params_.push_back(std::move(p));
  return *params_.back();
}

Param& ParamStore::at(const std::string& name) {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw ValidationError("unknown parameter: " + name);
  return *params_[it->second];
}

const Param& ParamStore::at(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw ValidationError("unknown parameter: " + name);
  return *params_[it->second];
}

bool ParamStore::contains(const std::string& name) const {
  return by_name_.count(name) > 0;
}

void ParamStore::zero_grads() {
  for (auto& p : params_) std::fill(p->grad.data.begin(), p->grad.data.end(), 0.0);
}

std::vector<Mat> ParamStore::make_grad_buffers() const {
  std::vector<Mat> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.emplace_back(p->value.rows, p->value.cols);
  return out;
}

const Mat& Var::value() const { return tape->value(id); }

void Tape::clear() { nodes_.clear(); }

Var Tape::make(Mat value, std::function<void()> back) {
  Node node;
  node.value = std::move(value);
  node.grad = Mat(node.value.rows, node.value.cols);
  node.back = std::move(back);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Mat v) { return make(std::move(v)); }

Var Tape::param(const Param& p) {
  const std::size_t pi = p.index;
  Mat* sink_mat = sink_ ? &(*sink_)[pi] : nullptr;
  Var v = make(p.value, nullptr);
  if (sink_mat) {
    const std::size_t id = v.id;
    nodes_[id].back = [this, id, sink_mat] { add_in_place(*sink_mat, grad(id)); };
  }
  return v;
}

Var Tape::add(Var a, Var b) {
  check(a.value().same_shape(b.value()), "add shape mismatch");
  Mat out = a.value();
  add_in_place(out, b.value());
  Var v = make(std::move(out));
  const std::size_t id = v.id, ia = a.id, ib = b.id;
  nodes_[id].back = [this, id, ia, ib] {
    add_in_place(grad(ia), grad(id));
    add_in_place(grad(ib), grad(id));
  };
  return v;
}

Var Tape::sub(Var a, Var b) {
  check(a.value().same_shape(b.value()), "sub shape mismatch");
  Mat out = a.value();
  axpy_in_place(out, -1.0, b.value());
  Var v = make(std::move(out));
  const std::size_t id = v.id, ia = a.id, ib = b.id;
  nodes_[id].back = [this, id, ia, ib] {
    add_in_place(grad(ia), grad(id));
    axpy_in_place(grad(ib), -1.0, grad(id));
  };
  return v;
}

Var Tape::mul(Var a, Var b) {
  check(a.value().same_shape(b.value()), "mul shape mismatch");
  Mat out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b.value().data[i];
  Var v = make(std::move(out));
  const std::size_t id = v.id, ia = a.id, ib = b.id;
  nodes_[id].back = [this, id, ia, ib] {
    const Mat& g = grad(id);
    Mat& ga = grad(ia);
    Mat& gb = grad(ib);
    const Mat& av = nodes_[ia].value;
    const Mat& bv = nodes_[ib].value;
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga.data[i] += g.data[i] * bv.data[i];
      gb.data[i] += g.data[i] * av.data[i];
    }
  };
  return v;
}

Var Tape::scale(Var a, double s) {
  Mat out = a.value();
  for (double& x : out.data) x *= s;
  Var v = make(std::move(out));
  const std::size_t id = v.id, ia = a.id;
  nodes_[id].back = [this, id, ia, s] { axpy_in_place(grad(ia), s, grad(id)); };
  return v;
}

Var Tape::scale_rows(Var a, const Mat& col) {
  check(col.rows == a.rows() && col.cols == 1, "scale_rows expects Rx1 column");
  Mat out = a.value();
  for (std::size_t i = 0; i < out.rows; ++i) {
    double* r = out.row(i);
    for (std::size_t j = 0; j < out.cols; ++j) r[j] *= col.data[i];
  }
  Var v = make(std::move(out));
  const std::size_t id = v.id, ia = a.id;
  auto scales = std::make_shared<Mat>(col);
  nodes_[id].back = [this, id, ia, scales] {
    const Mat& g = grad(id);
    Mat& ga = grad(ia);
    for (std::size_t i = 0; i < g.rows; ++i) {
      const double s = scales->data[i];
      const double* gr = g.row(i);
      double* gar = ga.row(i);
      for (std::size_t j = 0; j < g.cols; ++j) gar[j] += s * gr[j];
    }
  };
  return v;
}

Var Tape::add_row(Var a, Var row) {
  check(row.rows() == 1 && row.cols() == a.cols(), "add_row shape mismatch");
  Mat out = a.value();
  for (std::size_t i = 0; i < out.rows; ++i) {
    double* r = out.row(i);
    const double* br = row.value().row(0);
    for (std::size_t j = 0; j < out.cols; ++j) r[j] += br[j];
  }
  Var v = make(std::move(out));
  const std::size_t id = v.id, ia = a.id, ir = row.id;
  nodes_[id].back = [this, id, ia, ir] {
    const Mat& g = grad(id);
    add_in_place(grad(ia), g);
    Mat& gr = grad(ir);
    for (std::size_t i = 0; i < g.rows; ++i) {
      const double* r = g.row(i);
      for (std::size_t j = 0; j < g.cols; ++j) gr.data[j] += r[j];
    }
  };
  return v;
}

Var Tape::matmul(Var a, Var b) {
  Var v = make(ad::matmul(a.value(), b.value()));
  const std::size_t id = v.id, ia = a.id, ib = b.id;
  nodes_[id].back = [this, id, ia, ib] {
    const Mat& g = grad(id);
    add_in_place(grad(ia), matmul_nt(g, nodes_[ib].value));
    add_in_place(grad(ib), matmul_tn(nodes_[ia].value, g));
  };
  return v;
}

Var Tape::transpose(Var a) {
  const Mat& av = a.value();
  Mat out(av.cols, av.rows);
  for (std::size_t i = 0; i < av.rows; ++i)
    for (std::size_t j = 0; j < av.cols; ++j) out.at(j, i) = av.at(i, j);
  Var v = make(std::move(out));
  const std::size_t id = v.id, ia = a.id;
  nodes_[id].back = [this, id, ia] {
    const Mat& g = grad(id);
    Mat& ga = grad(ia);
    for (std::size_t i = 0; i < g.rows; ++i)
      for (std::size_t j = 0; j < g.cols; ++j) ga.at(j, i) += g.at(i, j);
  };
  return v;
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  check(!parts.empty(), "concat_cols needs parts");
  const std::size_t r = parts[0].rows();
  std::size_t c = 0;
  for (const Var& p : parts) {
    check(p.rows() == r, "concat_cols row mismatch");
    c += p.cols();
  }
  Mat out(r, c);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Mat& pv = p.value();
    for (std::size_t i = 0; i < r; ++i)
      std::copy(pv.row(i), pv.row(i) + pv.cols, out.row(i) + off);
    off += pv.cols;
  }
  Var v = make(std::move(out));
  std::vector<std::size_t> ids;
  for (const Var& p : parts) ids.push_back(p.id);
  const std::size_t id = v.id;
  nodes_[id].back = [this, id, ids] {
    const Mat& g = grad(id);
    std::size_t off2 = 0;
    for (std::size_t pid : ids) {
      Mat& gp = grad(pid);
      for (std::size_t i = 0; i < g.rows; ++i) {
        const double* gr = g.row(i) + off2;
        double* pr = gp.row(i);
        for (std::size_t j = 0; j < gp.cols; ++j) pr[j] += gr[j];
      }
      off2 += gp.cols;
    }
  };
  return v;
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  check(!parts.empty(), "concat_rows needs parts");
  const std::size_t c = parts[0].cols();
  std::size_t r = 0;
  for (const Var& p : parts) {
    check(p.cols() == c, "concat_rows col mismatch");
    r += p.rows();
  }
  Mat out(r, c);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Mat& pv = p.value();
    std::copy(pv.data.begin(), pv.data.end(), out.data.begin() + off * c);
    off += pv.rows;
  }
  Var v = make(std::move(out));
  std::vector<std::size_t> ids;
  for (const Var& p : parts) ids.push_back(p.id);
  const std::size_t id = v.id;
  nodes_[id].back = [this, id, ids] {
    const Mat& g = grad(id);
    std::size_t off2 = 0;
    for (std::size_t pid : ids) {
      Mat& gp = grad(pid);
      for (std::size_t i = 0; i < gp.size(); ++i)
        gp.data[i] += g.data[off2 * g.cols + i];
      off2 += gp.rows;
    }
  };
  return v;
}

Var Tape::slice_cols(Var a, std::size_t c0, std::size_t c1) {
  check(c0 < c1 && c1 <= a.cols(), "slice_cols bad range");
  const Mat& av = a.value();
  Mat out(av.rows, c1 - c0);
  for (std::size_t i = 0; i < av.rows; ++i)
    std::copy(av.row(i) + c0, av.row(i) + c1, out.row(i));
  Var v = make(std::move(out));
  const std::size_t id = v.id, ia = a.id;
  nodes_[id].back = [this, id, ia, c0] {
    const Mat& g = grad(id);
    Mat& ga = grad(ia);
    for (std::size_t i = 0; i < g.rows; ++i) {
      const double* gr = g.row(i);
      double* ar = ga.row(i) + c0;
      for (std::size_t j = 0; j < g.cols; ++j) ar[j] += gr[j];
    }
  };
  return v;
}

Var Tape::gather_rows(Var a, std::vector<std::size_t> idx) {
  const Mat& av = a.value();
  Mat out(idx.size(), av.cols);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    check(idx[i] < av.rows, "gather_rows index out of range");
    std::copy(av.row(idx[i]), av.row(idx[i]) + av.cols, out.row(i));
  }
  Var v = make(std::move(out));
  const std::size_t id = v.id, ia = a.id;
  nodes_[id].back = [this, id, ia, idx = std::move(idx)] {
    const Mat& g = grad(id);
    Mat& ga = grad(ia);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const double* gr = g.row(i);
      double* ar = ga.row(idx[i]);
      for (std::size_t j = 0; j < g.cols; ++j) ar[j] += gr[j];
    }
  };
  return v;
}

Var Tape::sum_all(Var a) {
  double s = 0;
  for (double x : a.value().data) s += x;
  Mat out(1, 1);
  out.data[0] = s;
  Var v = make(std::move(out));
  const std::size_t id = v.id, ia = a.id;
  nodes_[id].back = [this, id, ia] {
    const double g = grad(id).data[0];
    for (double& x : grad(ia).data) x += g;
  };
  return v;
}

Var Tape::sum_rows(Var a) {
  const Mat& av = a.value();
  Mat out(1, av.cols);
  for (std::size_t i = 0; i < av.rows; ++i) {
    const double* r = av.row(i);
    for (std::size_t j = 0; j < av.cols; ++j) out.data[j] += r[j];
  }
  Var v = make(std::move(out));
  const std::size_t id = v.id, ia = a.id;
  nodes_[id].back = [this, id, ia] {
    const Mat& g = grad(id);
    Mat& ga = grad(ia);
    for (std::size_t i = 0; i < ga.rows; ++i) {
      double* r = ga.row(i);
      for (std::size_t j = 0; j < ga.cols; ++j) r[j] += g.data[j];
    }
  };
  return v;
}

Var Tape::relu(Var a) {
  Mat out = a.value();
  for (double& x : out.data) x = x > 0 ? x : 0.0;
  Var v = make(std::move(out));
  const std::size_t id = v.id, ia = a.id;
  nodes_[id].back = [this, id, ia] {
    const Mat& g = grad(id);
    const Mat& av = nodes_[ia].value;
    Mat& ga = grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (av.data[i] > 0) ga.data[i] += g.data[i];
  };
  return v;
}

Var Tape::leaky_relu(Var a, double slope) {
  Mat out = a.value();
  for (double& x : out.data) x = x > 0 ? x : slope * x;
  Var v = make(std::move(out));
  const std::size_t id = v.id, ia = a.id;
  nodes_[id].back = [this, id, ia, slope] {
    const Mat& g = grad(id);
    const Mat& av = nodes_[ia].value;
    Mat& ga = grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i)
      ga.data[i] += g.data[i] * (av.data[i] > 0 ? 1.0 : slope);
  };
  return v;
}

Var Tape::sigmoid(Var a) {
  Mat out = a.value();
  for (double& x : out.data) x = stable_sigmoid(x);
  Var v = make(std::move(out));
  const std::size_t id = v.id, ia = a.id;
  nodes_[id].back = [this, id, ia] {
    const Mat& g = grad(id);
    const Mat& y = nodes_[id].value;
    Mat& ga = grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i)
      ga.data[i] += g.data[i] * y.data[i] * (1.0 - y.data[i]);
  };
  return v;
}

Var Tape::lecun_tanh(Var a) {
  Mat out = a.value();
  for (double& x : out.data) x = 1.7159 * std::tanh(x * (2.0 / 3.0));
  Var v = make(std::move(out));
  const std::size_t id = v.id, ia = a.id;
  nodes_[id].back = [this, id, ia] {
    const Mat& g = grad(id);
    const Mat& av = nodes_[ia].value;
    Mat& ga = grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double th = std::tanh(av.data[i] * (2.0 / 3.0));
      ga.data[i] += g.data[i] * 1.7159 * (2.0 / 3.0) * (1.0 - th * th);
    }
  };
  return v;
}

Var Tape::sine(Var a) {
  Mat out = a.value();
  for (double& x : out.data) x = std::sin(x);
  Var v = make(std::move(out));
  const std::size_t id = v.id, ia = a.id;
  nodes_[id].back = [this, id, ia] {
    const Mat& g = grad(id);
    const Mat& av = nodes_[ia].value;
    Mat& ga = grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i)
      ga.data[i] += g.data[i] * std::cos(av.data[i]);
  };
  return v;
}

Var Tape::softmax_rows(Var a) {
  Mat out = a.value();
  for (std::size_t i = 0; i < out.rows; ++i) {
    double* r = out.row(i);
    double mx = r[0];
    for (std::size_t j = 1; j < out.cols; ++j) mx = std::max(mx, r[j]);
    double z = 0;
    for (std::size_t j = 0; j < out.cols; ++j) {
      r[j] = std::exp(r[j] - mx);
      z += r[j];
    }
    for (std::size_t j = 0; j < out.cols; ++j) r[j] /= z;
  }
  Var v = make(std::move(out));
  const std::size_t id = v.id, ia = a.id;
  nodes_[id].back = [this, id, ia] {
    const Mat& g = grad(id);
    const Mat& y = nodes_[id].value;
    Mat& ga = grad(ia);
    for (std::size_t i = 0; i < g.rows; ++i) {
      const double* gr = g.row(i);
      const double* yr = y.row(i);
      double dot = 0;
      for (std::size_t j = 0; j < g.cols; ++j) dot += gr[j] * yr[j];
      double* ar = ga.row(i);
      for (std::size_t j = 0; j < g.cols; ++j)
        ar[j] += yr[j] * (gr[j] - dot);
    }
  };
  return v;
}

Var Tape::layer_norm_rows(Var x, Var gain, Var bias, double eps) {
  const Mat& xv = x.value();
  check(gain.rows() == 1 && gain.cols() == xv.cols, "layer_norm gain shape");
  check(bias.rows() == 1 && bias.cols() == xv.cols, "layer_norm bias shape");

  auto xhat = std::make_shared<Mat>(xv.rows, xv.cols);
  auto inv_std = std::make_shared<std::vector<double>>(xv.rows);
  Mat out(xv.rows, xv.cols);
  const double* g0 = gain.value().row(0);
  const double* b0 = bias.value().row(0);
  for (std::size_t i = 0; i < xv.rows; ++i) {
    const double* r = xv.row(i);
    double mu = 0;
    for (std::size_t j = 0; j < xv.cols; ++j) mu += r[j];
    mu /= static_cast<double>(xv.cols);
    double var = 0;
    for (std::size_t j = 0; j < xv.cols; ++j) var += (r[j] - mu) * (r[j] - mu);
    var /= static_cast<double>(xv.cols);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    double* xh = xhat->row(i);
    double* o = out.row(i);
    for (std::size_t j = 0; j < xv.cols; ++j) {
      xh[j] = (r[j] - mu) * is;
      o[j] = xh[j] * g0[j] + b0[j];
    }
  }

  Var v = make(std::move(out));
  const std::size_t id = v.id, ix = x.id, ig = gain.id, ib = bias.id;
  nodes_[id].back = [this, id, ix, ig, ib, xhat, inv_std] {
    const Mat& g = grad(id);
    const Mat& gv = nodes_[ig].value;
    Mat& gx = grad(ix);
    Mat& gg = grad(ig);
    Mat& gb = grad(ib);
    const std::size_t cols = g.cols;
    for (std::size_t i = 0; i < g.rows; ++i) {
      const double* gr = g.row(i);
      const double* xh = xhat->row(i);
      const double* gain_row = gv.row(0);
      // Accumulate gain/bias grads.
      for (std::size_t j = 0; j < cols; ++j) {
        gb.data[j] += gr[j];
        gg.data[j] += gr[j] * xh[j];
      }
      // dxhat = dy * gain; dx = (dxhat - mean(dxhat) - xhat*mean(dxhat*xhat)) * inv_std
      double m1 = 0, m2 = 0;
      for (std::size_t j = 0; j < cols; ++j) {
        const double dxh = gr[j] * gain_row[j];
        m1 += dxh;
        m2 += dxh * xh[j];
      }
      m1 /= static_cast<double>(cols);
      m2 /= static_cast<double>(cols);
      double* gxr = gx.row(i);
      const double is = (*inv_std)[i];
      for (std::size_t j = 0; j < cols; ++j) {
        const double dxh = gr[j] * gain_row[j];
        gxr[j] += (dxh - m1 - xh[j] * m2) * is;
      }
    }
  };
  return v;
}

Var Tape::gat_head(Var feats_proj, Var attn_vec, const CsrAdjacency& nbrs,
                   double slope, std::vector<double>* alpha_out) {
  const Mat& x = feats_proj.value();
  const std::size_t n = x.rows, dh = x.cols;
  check(nbrs.rows() == n, "gat_head adjacency size mismatch");
  check(attn_vec.rows() == 1 && attn_vec.cols() == 2 * dh,
        "gat_head attention vector must be 1 x 2*d_h");
  const double* a_l = attn_vec.value().row(0);
  const double* a_r = a_l + dh;

  auto lr = [slope](double v) { return v > 0 ? v : slope * v; };

  // Per-node left/right scores from LeakyReLU'd features.
  std::vector<double> left(n), right(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* xr = x.row(i);
    double sl = 0, sr = 0;
    for (std::size_t j = 0; j < dh; ++j) {
      const double lx = lr(xr[j]);
      sl += a_l[j] * lx;
      sr += a_r[j] * lx;
    }
    left[i] = sl;
    right[i] = sr;
  }

  auto alpha = std::make_shared<std::vector<double>>(nbrs.targets.size());
  auto z = std::make_shared<Mat>(n, dh);  // pre-activation aggregate
  Mat out(n, dh);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t b = nbrs.offsets[i], e = nbrs.offsets[i + 1];
    check(e > b, "gat_head node with empty neighborhood");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::uint32_t k = b; k < e; ++k)
      mx = std::max(mx, left[i] + right[nbrs.targets[k]]);
    double zsum = 0;
    for (std::uint32_t k = b; k < e; ++k) {
      const double w = std::exp(left[i] + right[nbrs.targets[k]] - mx);
      (*alpha)[k] = w;
      zsum += w;
    }
    double* zi = z->row(i);
    for (std::uint32_t k = b; k < e; ++k) {
      (*alpha)[k] /= zsum;
      const double* xj = x.row(nbrs.targets[k]);
      const double a = (*alpha)[k];
      for (std::size_t j = 0; j < dh; ++j) zi[j] += a * xj[j];
    }
    double* oi = out.row(i);
    for (std::size_t j = 0; j < dh; ++j) oi[j] = lr(zi[j]);
  }
  if (alpha_out) *alpha_out = *alpha;

  Var v = make(std::move(out));
  const std::size_t id = v.id, ix = feats_proj.id, iav = attn_vec.id;
  const CsrAdjacency* adj = &nbrs;
  nodes_[id].back = [this, id, ix, iav, adj, slope, alpha, z, dh] {
    const Mat& g = grad(id);
    const Mat& x2 = nodes_[ix].value;
    const double* a_l2 = nodes_[iav].value.row(0);
    const double* a_r2 = a_l2 + dh;
    Mat& gx = grad(ix);
    Mat& gav = grad(iav);
    double* ga_l = gav.row(0);
    double* ga_r = ga_l + dh;
    const std::size_t n2 = x2.rows;
    auto lrp = [slope](double v) { return v > 0 ? 1.0 : slope; };
    auto lrv = [slope](double v) { return v > 0 ? v : slope * v; };

    std::vector<double> dleft(n2, 0.0), dright(n2, 0.0);
    std::vector<double> dz(dh), dalpha;
    for (std::size_t i = 0; i < n2; ++i) {
      const std::uint32_t b = adj->offsets[i], e = adj->offsets[i + 1];
      const double* gi = g.row(i);
      const double* zi = z->row(i);
      for (std::size_t j = 0; j < dh; ++j) dz[j] = gi[j] * lrp(zi[j]);

      dalpha.assign(e - b, 0.0);
      double dot = 0;
      for (std::uint32_t k = b; k < e; ++k) {
        const double* xj = x2.row(adj->targets[k]);
        double da = 0;
        for (std::size_t j = 0; j < dh; ++j) da += dz[j] * xj[j];
        dalpha[k - b] = da;
        dot += da * (*alpha)[k];
        // Aggregation term: dX_j += alpha * dz.
        double* gxj = gx.row(adj->targets[k]);
        const double a = (*alpha)[k];
        for (std::size_t j = 0; j < dh; ++j) gxj[j] += a * dz[j];
      }
      for (std::uint32_t k = b; k < e; ++k) {
        const double ds = (*alpha)[k] * (dalpha[k - b] - dot);
        dleft[i] += ds;
        dright[adj->targets[k]] += ds;
      }
    }

    // Score terms: left_i = a_l . LR(x_i), right_i = a_r . LR(x_i).
    for (std::size_t i = 0; i < n2; ++i) {
      const double* xi = x2.row(i);
      double* gxi = gx.row(i);
      const double dl = dleft[i], dr = dright[i];
      for (std::size_t j = 0; j < dh; ++j) {
        const double lx = lrv(xi[j]);
        const double lp = lrp(xi[j]);
        gxi[j] += (dl * a_l2[j] + dr * a_r2[j]) * lp;
        ga_l[j] += dl * lx;
        ga_r[j] += dr * lx;
      }
    }
  };
  return v;
}

Var Tape::evolved_key_attention(Var q, Var xi1, Var xi2, Var xi3, Var v,
                                const Mat& dt, double inv_sqrt_dh,
                                Mat* attn_out) {
  const Mat& qv = q.value();
  const Mat& k1 = xi1.value();
  const Mat& k2 = xi2.value();
  const Mat& k3 = xi3.value();
  const Mat& vv = v.value();
  const std::size_t lq = qv.rows, lk = k1.rows, dh = qv.cols;
  check(k1.cols == dh && k2.same_shape(k1) && k3.same_shape(k1),
        "evolved_key_attention xi shape mismatch");
  check(vv.rows == lk, "evolved_key_attention V row mismatch");
  check(dt.rows == lq && dt.cols == lk, "evolved_key_attention dt shape mismatch");

  auto attn = std::make_shared<Mat>(lq, lk);
  Mat out(lq, vv.cols);
  std::vector<double> scores(lk);
  for (std::size_t i = 0; i < lq; ++i) {
    const double* qi = qv.row(i);
    const double* dti = dt.row(i);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < lk; ++j) {
      const double* x1 = k1.row(j);
      const double* x2 = k2.row(j);
      const double* x3 = k3.row(j);
      double s = 0;
      for (std::size_t c = 0; c < dh; ++c) {
        const double sg = stable_sigmoid(-x1[c] * dti[j]);
        s += qi[c] * (sg * x2[c] + (1.0 - sg) * x3[c]);
      }
      scores[j] = s * inv_sqrt_dh;
      mx = std::max(mx, scores[j]);
    }
    double zsum = 0;
    double* ai = attn->row(i);
    for (std::size_t j = 0; j < lk; ++j) {
      ai[j] = std::exp(scores[j] - mx);
      zsum += ai[j];
    }
    double* oi = out.row(i);
    for (std::size_t j = 0; j < lk; ++j) {
      ai[j] /= zsum;
      const double* vj = vv.row(j);
      for (std::size_t c = 0; c < vv.cols; ++c) oi[c] += ai[j] * vj[c];
    }
  }

  if (attn_out) *attn_out = *attn;

  Var node = make(std::move(out));
  const std::size_t id = node.id;
  const std::size_t iq = q.id, i1 = xi1.id, i2 = xi2.id, i3 = xi3.id, iv = v.id;
  auto dt_copy = std::make_shared<Mat>(dt);
  nodes_[id].back = [this, id, iq, i1, i2, i3, iv, attn, dt_copy, inv_sqrt_dh] {
    const Mat& g = grad(id);
    const Mat& qv2 = nodes_[iq].value;
    const Mat& k1v = nodes_[i1].value;
    const Mat& k2v = nodes_[i2].value;
    const Mat& k3v = nodes_[i3].value;
    const Mat& vv2 = nodes_[iv].value;
    Mat& gq = grad(iq);
    Mat& g1 = grad(i1);
    Mat& g2 = grad(i2);
    Mat& g3 = grad(i3);
    Mat& gv = grad(iv);
    const std::size_t lq2 = qv2.rows, lk2 = k1v.rows, dh2 = qv2.cols;

    std::vector<double> dalpha(lk2), ds(lk2);
    for (std::size_t i = 0; i < lq2; ++i) {
      const double* gi = g.row(i);
      const double* ai = attn->row(i);
      const double* qi = qv2.row(i);
      const double* dti = dt_copy->row(i);
      double dot = 0;
      for (std::size_t j = 0; j < lk2; ++j) {
        const double* vj = vv2.row(j);
        double da = 0;
        for (std::size_t c = 0; c < vv2.cols; ++c) da += gi[c] * vj[c];
        dalpha[j] = da;
        dot += da * ai[j];
        double* gvj = gv.row(j);
        for (std::size_t c = 0; c < vv2.cols; ++c) gvj[c] += ai[j] * gi[c];
      }
      double* gqi = gq.row(i);
      for (std::size_t j = 0; j < lk2; ++j) {
        ds[j] = ai[j] * (dalpha[j] - dot) * inv_sqrt_dh;
        if (ds[j] == 0.0) continue;
        const double* x1 = k1v.row(j);
        const double* x2 = k2v.row(j);
        const double* x3 = k3v.row(j);
        double* gx1 = g1.row(j);
        double* gx2 = g2.row(j);
        double* gx3 = g3.row(j);
        const double dsj = ds[j];
        const double dtj = dti[j];
        for (std::size_t c = 0; c < dh2; ++c) {
          const double sg = stable_sigmoid(-x1[c] * dtj);
          const double key = sg * x2[c] + (1.0 - sg) * x3[c];
          gqi[c] += dsj * key;
          const double dkey = dsj * qi[c];
          gx2[c] += dkey * sg;
          gx3[c] += dkey * (1.0 - sg);
          // dsg = dkey*(x2-x3); dx1 = dsg * sg(1-sg) * (-dt)
          gx1[c] += dkey * (x2[c] - x3[c]) * sg * (1.0 - sg) * (-dtj);
        }
      }
    }
  };
  return node;
}

Var Tape::masked_softmax_ce(Var logits, const Mat& mask, std::size_t target) {
  const Mat& lv = logits.value();
  check(lv.rows == 1, "masked_softmax_ce expects a single logits row");
  check(mask.rows == 1 && mask.cols == lv.cols, "masked_softmax_ce mask shape");
  check(target < lv.cols, "masked_softmax_ce target out of range");
  check(mask.data[target] > 0, "masked_softmax_ce target masked out");

  // Effective logit l_j + ln(c_j) on the support.
  const std::size_t c = lv.cols;
  auto probs = std::make_shared<Mat>(1, c);
  double mx = -std::numeric_limits<double>::infinity();
  std::vector<double> eff(c, -std::numeric_limits<double>::infinity());
  for (std::size_t j = 0; j < c; ++j) {
    if (mask.data[j] > 0) {
      eff[j] = lv.data[j] + std::log(mask.data[j]);
      mx = std::max(mx, eff[j]);
    }
  }
  double z = 0;
  for (std::size_t j = 0; j < c; ++j) {
    if (mask.data[j] > 0) {
      probs->data[j] = std::exp(eff[j] - mx);
      z += probs->data[j];
    }
  }
  for (std::size_t j = 0; j < c; ++j) probs->data[j] /= z;

  Mat out(1, 1);
  out.data[0] = -(eff[target] - mx - std::log(z));
  Var v = make(std::move(out));
  const std::size_t id = v.id, il = logits.id;
  nodes_[id].back = [this, id, il, probs, target] {
    const double g = grad(id).data[0];
    Mat& gl = grad(il);
    for (std::size_t j = 0; j < gl.cols; ++j) {
      gl.data[j] += g * (probs->data[j] - (j == target ? 1.0 : 0.0));
    }
  };
  return v;
}

void Tape::backward(Var root, double seed) {
  check(root.tape == this, "backward: var from another tape");
  check(root.value().rows == 1 && root.value().cols == 1,
        "backward root must be 1x1");
  grad(root.id).data[0] = seed;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    if (nodes_[i].back) nodes_[i].back();
  }
}

Mat masked_softmax(const Mat& logits, const Mat& mask) {
  if (logits.rows != 1 || !mask.same_shape(logits)) {
    throw ValidationError("masked_softmax: expects matching 1xC shapes");
  }
  const std::size_t c = logits.cols;
  Mat out(1, c);
  double mx = -std::numeric_limits<double>::infinity();
  std::vector<double> eff(c);
  bool any = false;
  for (std::size_t j = 0; j < c; ++j) {
    if (mask.data[j] > 0) {
      eff[j] = logits.data[j] + std::log(mask.data[j]);
      mx = std::max(mx, eff[j]);
      any = true;
    }
  }
  if (!any) throw ValidationError("masked_softmax: mask has empty support");
  double z = 0;
  for (std::size_t j = 0; j < c; ++j) {
    if (mask.data[j] > 0) {
      out.data[j] = std::exp(eff[j] - mx);
      z += out.data[j];
    }
  }
  for (std::size_t j = 0; j < c; ++j) out.data[j] /= z;
  return out;
}

}  // namespace trajrec::ad
