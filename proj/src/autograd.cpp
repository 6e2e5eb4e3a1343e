#include "painexpr/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <limits>
#include <memory>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace painexpr::ag {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Eigen::VectorXd>;
using CMapVec = Eigen::Map<const Eigen::VectorXd>;

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("autograd: ") + what);
}

Graph& same_graph(Var a, Var b) {
  require(a.valid() && b.valid() && a.graph == b.graph, "operands must live on the same graph");
  return *a.graph;
}

}  // namespace

std::size_t shape_size(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int s : shape) n *= static_cast<std::size_t>(s);
  return n;
}

Tensor::Tensor(std::vector<int> shape_, double fill) : shape(std::move(shape_)), data(shape_size(shape), fill) {}

Tensor::Tensor(std::vector<int> shape_, std::vector<double> data_) : shape(std::move(shape_)), data(std::move(data_)) {
  require(data.size() == shape_size(shape), "tensor data does not match shape");
}

const Tensor& Var::value() const { return graph->value(*this); }

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::leaf(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::record(Tensor value, std::vector<int> inputs, Backward fn) {
  bool needs = false;
  for (int id : inputs) needs = needs || nodes_[static_cast<std::size_t>(id)].needs_grad;
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(fn) : Backward{}});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

std::vector<double>& Graph::grad_ref(int id) {
  auto& node = nodes_[static_cast<std::size_t>(id)];
  if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
  return node.grad;
}

std::vector<double> Graph::grad(Var v) const {
  const auto& node = nodes_[static_cast<std::size_t>(v.id)];
  if (node.grad.empty()) return std::vector<double>(node.value.size(), 0.0);
  return node.grad;
}

void Graph::backward(Var scalar) {
  require(scalar.graph == this, "backward target from another graph");
  require(value(scalar).size() == 1, "backward target must be a scalar");
  for (auto& node : nodes_) node.grad.clear();
  grad_ref(scalar.id)[0] = 1.0;
  for (int id = scalar.id; id >= 0; --id) {
    auto& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.backward || node.grad.empty()) continue;
    node.backward(*this, id);
  }
}

Var linear(Var x, Var w, Var b) {
  Graph& g = same_graph(x, w);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  require(wv.rank() == 2, "linear weight must be [out, in]");
  const int in = wv.shape[1];
  const int out = wv.shape[0];
  require(xv.rank() >= 1 && xv.shape.back() == in, "linear input width mismatch");
  const bool has_bias = b.valid();
  if (has_bias) require(b.value().size() == static_cast<std::size_t>(out), "linear bias size mismatch");
  const int rows = static_cast<int>(xv.size() / in);

  std::vector<int> shape = xv.shape;
  shape.back() = out;
  Tensor y(shape);
  MapMat Y(y.data.data(), rows, out);
  Y.noalias() = CMapMat(xv.data.data(), rows, in) * CMapMat(wv.data.data(), out, in).transpose();
  if (has_bias) Y.rowwise() += CMapVec(b.value().data.data(), out).transpose();

  std::vector<int> inputs{x.id, w.id};
  if (has_bias) inputs.push_back(b.id);
  const int xid = x.id, wid = w.id, bid = has_bias ? b.id : -1;
  return g.record(std::move(y), inputs, [xid, wid, bid, rows, in, out](Graph& gr, int self) {
    CMapMat dY(gr.out_grad(self).data(), rows, out);
    if (gr.needs_grad(xid)) {
      MapMat(gr.grad_ref(xid).data(), rows, in).noalias() += dY * CMapMat(gr.value_of(wid).data.data(), out, in);
    }
    if (gr.needs_grad(wid)) {
      MapMat(gr.grad_ref(wid).data(), out, in).noalias() +=
          dY.transpose() * CMapMat(gr.value_of(xid).data.data(), rows, in);
    }
    if (bid >= 0 && gr.needs_grad(bid)) {
      MapVec(gr.grad_ref(bid).data(), out) += dY.colwise().sum().transpose();
    }
  });
}

Var conv1d(Var x, Var w, Var b, int stride, int pad) {
  Graph& g = same_graph(x, w);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  require(xv.rank() == 3 && wv.rank() == 3, "conv1d expects x [N,C,D] and w [Cout,Cin,K]");
  const int n = xv.shape[0], cin = xv.shape[1], len = xv.shape[2];
  const int cout = wv.shape[0], kernel = wv.shape[2];
  require(wv.shape[1] == cin, "conv1d channel mismatch");
  require(stride >= 1 && pad >= 0, "conv1d stride/pad");
  const int out_len = (len + 2 * pad - kernel) / stride + 1;
  require(out_len >= 1, "conv1d output would be empty");
  const bool has_bias = b.valid();
  const int patch = cin * kernel;
  const int rows = n * out_len;

  // im2col: row (i, o) holds x[i, c, o*stride - pad + k] for (c, k).
  auto cols = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows) * patch, 0.0);
  for (int i = 0; i < n; ++i)
    for (int o = 0; o < out_len; ++o) {
      double* row = cols->data() + (static_cast<std::size_t>(i) * out_len + o) * patch;
      for (int c = 0; c < cin; ++c) {
        const double* src = xv.data.data() + (static_cast<std::size_t>(i) * cin + c) * len;
        for (int k = 0; k < kernel; ++k) {
          const int p = o * stride - pad + k;
          if (p >= 0 && p < len) row[c * kernel + k] = src[p];
        }
      }
    }
  RowMat prod = CMapMat(cols->data(), rows, patch) * CMapMat(wv.data.data(), cout, patch).transpose();
  if (has_bias) prod.rowwise() += CMapVec(b.value().data.data(), cout).transpose();

  Tensor y({n, cout, out_len});
  for (int i = 0; i < n; ++i)
    for (int co = 0; co < cout; ++co)
      for (int o = 0; o < out_len; ++o)
        y.data[(static_cast<std::size_t>(i) * cout + co) * out_len + o] = prod(i * out_len + o, co);

  std::vector<int> inputs{x.id, w.id};
  if (has_bias) inputs.push_back(b.id);
  const int xid = x.id, wid = w.id, bid = has_bias ? b.id : -1;
  return g.record(std::move(y), inputs,
                  [=](Graph& gr, int self) {
                    const auto& gy = gr.out_grad(self);
                    RowMat dprod(rows, cout);
                    for (int i = 0; i < n; ++i)
                      for (int co = 0; co < cout; ++co)
                        for (int o = 0; o < out_len; ++o)
                          dprod(i * out_len + o, co) = gy[(static_cast<std::size_t>(i) * cout + co) * out_len + o];
                    if (gr.needs_grad(wid)) {
                      MapMat(gr.grad_ref(wid).data(), cout, patch).noalias() +=
                          dprod.transpose() * CMapMat(cols->data(), rows, patch);
                    }
                    if (bid >= 0 && gr.needs_grad(bid)) {
                      MapVec(gr.grad_ref(bid).data(), cout) += dprod.colwise().sum().transpose();
                    }
                    if (gr.needs_grad(xid)) {
                      RowMat dcols = dprod * CMapMat(gr.value_of(wid).data.data(), cout, patch);
                      auto& gx = gr.grad_ref(xid);
                      for (int i = 0; i < n; ++i)
                        for (int o = 0; o < out_len; ++o)
                          for (int c = 0; c < cin; ++c) {
                            double* dst = gx.data() + (static_cast<std::size_t>(i) * cin + c) * len;
                            for (int k = 0; k < kernel; ++k) {
                              const int p = o * stride - pad + k;
                              if (p >= 0 && p < len) dst[p] += dcols(i * out_len + o, c * kernel + k);
                            }
                          }
                    }
                  });
}

Var group_norm(Var x, Var gamma, Var beta, int groups, double eps) {
  Graph& g = same_graph(x, gamma);
  const Tensor& xv = x.value();
  require(xv.rank() == 3, "group_norm expects [N,C,D]");
  const int n = xv.shape[0], ch = xv.shape[1], len = xv.shape[2];
  require(groups >= 1 && ch % groups == 0, "group_norm groups must divide channels");
  require(gamma.value().size() == static_cast<std::size_t>(ch) && beta.value().size() == static_cast<std::size_t>(ch),
          "group_norm affine size mismatch");
  const int per = ch / groups;
  const std::size_t count = static_cast<std::size_t>(per) * len;

  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n) * groups);
  Tensor y(xv.shape);
  const auto& gm = gamma.value().data;
  const auto& bt = beta.value().data;
  for (int i = 0; i < n; ++i)
    for (int gi = 0; gi < groups; ++gi) {
      const std::size_t base = (static_cast<std::size_t>(i) * ch + gi * per) * len;
      double mean = 0.0;
      for (std::size_t e = 0; e < count; ++e) mean += xv.data[base + e];
      mean /= static_cast<double>(count);
      double var = 0.0;
      for (std::size_t e = 0; e < count; ++e) var += (xv.data[base + e] - mean) * (xv.data[base + e] - mean);
      var /= static_cast<double>(count);
      const double is = 1.0 / std::sqrt(var + eps);
      (*inv_std)[static_cast<std::size_t>(i) * groups + gi] = is;
      for (std::size_t e = 0; e < count; ++e) {
        const int c = gi * per + static_cast<int>(e / len);
        const double h = (xv.data[base + e] - mean) * is;
        (*xhat)[base + e] = h;
        y.data[base + e] = h * gm[c] + bt[c];
      }
    }

  const int xid = x.id, gid = gamma.id, bid = beta.id;
  return g.record(std::move(y), {x.id, gamma.id, beta.id}, [=](Graph& gr, int self) {
    const auto& gy = gr.out_grad(self);
    if (gr.needs_grad(gid) || gr.needs_grad(bid)) {
      auto& dg = gr.grad_ref(gid);
      auto& db = gr.grad_ref(bid);
      for (int i = 0; i < n; ++i)
        for (int c = 0; c < ch; ++c)
          for (int d = 0; d < len; ++d) {
            const std::size_t e = (static_cast<std::size_t>(i) * ch + c) * len + d;
            dg[c] += gy[e] * (*xhat)[e];
            db[c] += gy[e];
          }
    }
    if (!gr.needs_grad(xid)) return;
    const auto& gm_now = gr.value_of(gid).data;
    auto& gx = gr.grad_ref(xid);
    for (int i = 0; i < n; ++i)
      for (int gi = 0; gi < groups; ++gi) {
        const std::size_t base = (static_cast<std::size_t>(i) * ch + gi * per) * len;
        double mean_dh = 0.0, mean_dh_h = 0.0;
        for (std::size_t e = 0; e < count; ++e) {
          const int c = gi * per + static_cast<int>(e / len);
          const double dh = gy[base + e] * gm_now[c];
          mean_dh += dh;
          mean_dh_h += dh * (*xhat)[base + e];
        }
        mean_dh /= static_cast<double>(count);
        mean_dh_h /= static_cast<double>(count);
        const double is = (*inv_std)[static_cast<std::size_t>(i) * groups + gi];
        for (std::size_t e = 0; e < count; ++e) {
          const int c = gi * per + static_cast<int>(e / len);
          const double dh = gy[base + e] * gm_now[c];
          gx[base + e] += is * (dh - mean_dh - (*xhat)[base + e] * mean_dh_h);
        }
      }
  });
}

Var silu(Var x) {
  Graph& g = *x.graph;
  const Tensor& xv = x.value();
  Tensor y(xv.shape);
  for (std::size_t i = 0; i < xv.size(); ++i) y.data[i] = xv.data[i] / (1.0 + std::exp(-xv.data[i]));
  const int xid = x.id;
  return g.record(std::move(y), {x.id}, [xid](Graph& gr, int self) {
    const auto& gy = gr.out_grad(self);
    const auto& xs = gr.value_of(xid).data;
    auto& gx = gr.grad_ref(xid);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double sig = 1.0 / (1.0 + std::exp(-xs[i]));
      gx[i] += gy[i] * sig * (1.0 + xs[i] * (1.0 - sig));
    }
  });
}

Var add(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require(a.shape() == b.shape(), "add shape mismatch");
  Tensor y = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += bv[i];
  const int aid = a.id, bid = b.id;
  return g.record(std::move(y), {a.id, b.id}, [aid, bid](Graph& gr, int self) {
    const auto& gy = gr.out_grad(self);
    for (int id : {aid, bid}) {
      if (!gr.needs_grad(id)) continue;
      auto& gx = gr.grad_ref(id);
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
    }
  });
}

Var modulate(Var x, Var ss) {
  Graph& g = same_graph(x, ss);
  const Tensor& xv = x.value();
  require(xv.rank() == 3, "modulate expects x [N,C,D]");
  const int n = xv.shape[0], ch = xv.shape[1], len = xv.shape[2];
  require(ss.value().size() == static_cast<std::size_t>(n) * 2 * ch, "modulate expects ss [N, 2C]");
  const auto& sv = ss.value().data;
  Tensor y(xv.shape);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < ch; ++c) {
      const double scale = sv[static_cast<std::size_t>(i) * 2 * ch + c];
      const double shift = sv[static_cast<std::size_t>(i) * 2 * ch + ch + c];
      for (int d = 0; d < len; ++d) {
        const std::size_t e = (static_cast<std::size_t>(i) * ch + c) * len + d;
        y.data[e] = xv.data[e] * (1.0 + scale) + shift;
      }
    }
  const int xid = x.id, sid = ss.id;
  return g.record(std::move(y), {x.id, ss.id}, [=](Graph& gr, int self) {
    const auto& gy = gr.out_grad(self);
    const auto& xs = gr.value_of(xid).data;
    const auto& s = gr.value_of(sid).data;
    const bool gx_needed = gr.needs_grad(xid), gs_needed = gr.needs_grad(sid);
    std::vector<double>* gx = gx_needed ? &gr.grad_ref(xid) : nullptr;
    std::vector<double>* gs = gs_needed ? &gr.grad_ref(sid) : nullptr;
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < ch; ++c) {
        const std::size_t si = static_cast<std::size_t>(i) * 2 * ch + c;
        double dscale = 0.0, dshift = 0.0;
        for (int d = 0; d < len; ++d) {
          const std::size_t e = (static_cast<std::size_t>(i) * ch + c) * len + d;
          if (gx) (*gx)[e] += gy[e] * (1.0 + s[si]);
          dscale += gy[e] * xs[e];
          dshift += gy[e];
        }
        if (gs) {
          (*gs)[si] += dscale;
          (*gs)[si + ch] += dshift;
        }
      }
  });
}

Var attention(Var q, Var k, Var v, int heads) {
  Graph& g = same_graph(q, k);
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  require(qv.rank() == 3 && kv.rank() == 3 && vv.rank() == 3, "attention expects rank-3 operands");
  const int groups = qv.shape[0], lq = qv.shape[1], feat = qv.shape[2];
  const int lk = kv.shape[1];
  require(kv.shape[0] == groups && vv.shape[0] == groups && vv.shape[1] == lk, "attention group/length mismatch");
  require(kv.shape[2] == feat && vv.shape[2] == feat, "attention feature mismatch");
  require(heads >= 1 && feat % heads == 0, "attention heads must divide features");
  const int dh = feat / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(groups) * heads * lq * lk);
  Tensor y({groups, lq, feat});
  std::vector<double> logits(static_cast<std::size_t>(lk));
  for (int gi = 0; gi < groups; ++gi)
    for (int h = 0; h < heads; ++h)
      for (int i = 0; i < lq; ++i) {
        const double* qi = qv.data.data() + (static_cast<std::size_t>(gi) * lq + i) * feat + h * dh;
        double mx = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < lk; ++j) {
          const double* kj = kv.data.data() + (static_cast<std::size_t>(gi) * lk + j) * feat + h * dh;
          double s = 0.0;
          for (int e = 0; e < dh; ++e) s += qi[e] * kj[e];
          logits[j] = s * scale;
          mx = std::max(mx, logits[j]);
        }
        double denom = 0.0;
        for (int j = 0; j < lk; ++j) denom += (logits[j] = std::exp(logits[j] - mx));
        double* p = probs->data() + ((static_cast<std::size_t>(gi) * heads + h) * lq + i) * lk;
        double* yi = y.data.data() + (static_cast<std::size_t>(gi) * lq + i) * feat + h * dh;
        for (int j = 0; j < lk; ++j) {
          p[j] = logits[j] / denom;
          const double* vj = vv.data.data() + (static_cast<std::size_t>(gi) * lk + j) * feat + h * dh;
          for (int e = 0; e < dh; ++e) yi[e] += p[j] * vj[e];
        }
      }

  const int qid = q.id, kid = k.id, vid = v.id;
  return g.record(std::move(y), {q.id, k.id, v.id}, [=](Graph& gr, int self) {
    const auto& gy = gr.out_grad(self);
    const auto& qs = gr.value_of(qid).data;
    const auto& ks = gr.value_of(kid).data;
    const auto& vs = gr.value_of(vid).data;
    std::vector<double>* gq = gr.needs_grad(qid) ? &gr.grad_ref(qid) : nullptr;
    std::vector<double>* gk = gr.needs_grad(kid) ? &gr.grad_ref(kid) : nullptr;
    std::vector<double>* gv = gr.needs_grad(vid) ? &gr.grad_ref(vid) : nullptr;
    std::vector<double> dp(static_cast<std::size_t>(lk));
    for (int gi = 0; gi < groups; ++gi)
      for (int h = 0; h < heads; ++h)
        for (int i = 0; i < lq; ++i) {
          const double* p = probs->data() + ((static_cast<std::size_t>(gi) * heads + h) * lq + i) * lk;
          const double* dyi = gy.data() + (static_cast<std::size_t>(gi) * lq + i) * feat + h * dh;
          double dot = 0.0;
          for (int j = 0; j < lk; ++j) {
            const std::size_t vo = (static_cast<std::size_t>(gi) * lk + j) * feat + h * dh;
            double s = 0.0;
            for (int e = 0; e < dh; ++e) {
              s += dyi[e] * vs[vo + e];
              if (gv) (*gv)[vo + e] += p[j] * dyi[e];
            }
            dp[j] = s;
            dot += s * p[j];
          }
          const std::size_t qo = (static_cast<std::size_t>(gi) * lq + i) * feat + h * dh;
          for (int j = 0; j < lk; ++j) {
            const double ds = p[j] * (dp[j] - dot) * scale;
            const std::size_t ko = (static_cast<std::size_t>(gi) * lk + j) * feat + h * dh;
            for (int e = 0; e < dh; ++e) {
              if (gq) (*gq)[qo + e] += ds * ks[ko + e];
              if (gk) (*gk)[ko + e] += ds * qs[qo + e];
            }
          }
        }
  });
}

Var permute(Var x, const std::vector<int>& perm) {
  Graph& g = *x.graph;
  const Tensor& xv = x.value();
  const int r = xv.rank();
  require(static_cast<int>(perm.size()) == r, "permute rank mismatch");
  std::vector<int> out_shape(static_cast<std::size_t>(r));
  for (int a = 0; a < r; ++a) out_shape[a] = xv.shape[perm[a]];
  std::vector<std::size_t> in_strides(static_cast<std::size_t>(r), 1);
  for (int a = r - 2; a >= 0; --a) in_strides[a] = in_strides[a + 1] * xv.shape[a + 1];

  // Source offset for every output element, shared with backward.
  auto src = std::make_shared<std::vector<std::size_t>>(xv.size());
  std::vector<int> idx(static_cast<std::size_t>(r), 0);
  for (std::size_t o = 0; o < xv.size(); ++o) {
    std::size_t off = 0;
    for (int a = 0; a < r; ++a) off += idx[a] * in_strides[perm[a]];
    (*src)[o] = off;
    for (int a = r - 1; a >= 0; --a) {
      if (++idx[a] < out_shape[a]) break;
      idx[a] = 0;
    }
  }
  Tensor y(out_shape);
  for (std::size_t o = 0; o < y.size(); ++o) y.data[o] = xv.data[(*src)[o]];
  const int xid = x.id;
  return g.record(std::move(y), {x.id}, [xid, src](Graph& gr, int self) {
    const auto& gy = gr.out_grad(self);
    auto& gx = gr.grad_ref(xid);
    for (std::size_t o = 0; o < gy.size(); ++o) gx[(*src)[o]] += gy[o];
  });
}

Var reshape(Var x, std::vector<int> shape) {
  Graph& g = *x.graph;
  require(shape_size(shape) == x.value().size(), "reshape size mismatch");
  Tensor y(std::move(shape), x.value().data);
  const int xid = x.id;
  return g.record(std::move(y), {x.id}, [xid](Graph& gr, int self) {
    const auto& gy = gr.out_grad(self);
    auto& gx = gr.grad_ref(xid);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
  });
}

Var concat_channels(Var a, Var b) {
  Graph& g = same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.rank() == 3 && bv.rank() == 3 && av.shape[0] == bv.shape[0] && av.shape[2] == bv.shape[2],
          "concat_channels shape mismatch");
  const int n = av.shape[0], ca = av.shape[1], cb = bv.shape[1], len = av.shape[2];
  Tensor y({n, ca + cb, len});
  const std::size_t sa = static_cast<std::size_t>(ca) * len, sb = static_cast<std::size_t>(cb) * len;
  for (int i = 0; i < n; ++i) {
    std::copy_n(av.data.begin() + i * sa, sa, y.data.begin() + i * (sa + sb));
    std::copy_n(bv.data.begin() + i * sb, sb, y.data.begin() + i * (sa + sb) + sa);
  }
  const int aid = a.id, bid = b.id;
  return g.record(std::move(y), {a.id, b.id}, [=](Graph& gr, int self) {
    const auto& gy = gr.out_grad(self);
    if (gr.needs_grad(aid)) {
      auto& ga = gr.grad_ref(aid);
      for (int i = 0; i < n; ++i)
        for (std::size_t e = 0; e < sa; ++e) ga[i * sa + e] += gy[i * (sa + sb) + e];
    }
    if (gr.needs_grad(bid)) {
      auto& gb = gr.grad_ref(bid);
      for (int i = 0; i < n; ++i)
        for (std::size_t e = 0; e < sb; ++e) gb[i * sb + e] += gy[i * (sa + sb) + sa + e];
    }
  });
}

Var crop_last(Var x, int len) {
  Graph& g = *x.graph;
  const Tensor& xv = x.value();
  const int full = xv.shape.back();
  require(len >= 1 && len <= full, "crop_last length out of range");
  const std::size_t outer = xv.size() / full;
  std::vector<int> shape = xv.shape;
  shape.back() = len;
  Tensor y(shape);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xv.data.begin() + o * full, len, y.data.begin() + o * len);
  const int xid = x.id;
  return g.record(std::move(y), {x.id}, [=](Graph& gr, int self) {
    const auto& gy = gr.out_grad(self);
    auto& gx = gr.grad_ref(xid);
    for (std::size_t o = 0; o < outer; ++o)
      for (int e = 0; e < len; ++e) gx[o * full + e] += gy[o * len + e];
  });
}

Var upsample2_last(Var x) {
  Graph& g = *x.graph;
  const Tensor& xv = x.value();
  const int len = xv.shape.back();
  const std::size_t outer = xv.size() / len;
  std::vector<int> shape = xv.shape;
  shape.back() = 2 * len;
  Tensor y(shape);
  for (std::size_t o = 0; o < outer; ++o)
    for (int e = 0; e < 2 * len; ++e) y.data[o * 2 * len + e] = xv.data[o * len + e / 2];
  const int xid = x.id;
  return g.record(std::move(y), {x.id}, [=](Graph& gr, int self) {
    const auto& gy = gr.out_grad(self);
    auto& gx = gr.grad_ref(xid);
    for (std::size_t o = 0; o < outer; ++o)
      for (int e = 0; e < 2 * len; ++e) gx[o * len + e / 2] += gy[o * 2 * len + e];
  });
}

Var replace_masked(const Tensor& values, const std::vector<std::uint8_t>& mask, Var fill) {
  Graph& g = *fill.graph;
  require(values.rank() == 2 && mask.size() == values.size(), "replace_masked expects values [N,P] and matching mask");
  const int rows = values.shape[0], width = values.shape[1];
  require(fill.value().size() == static_cast<std::size_t>(width), "replace_masked fill width mismatch");
  Tensor y = values;
  const auto& fv = fill.value().data;
  for (int r = 0; r < rows; ++r)
    for (int p = 0; p < width; ++p)
      if (mask[static_cast<std::size_t>(r) * width + p]) y.data[static_cast<std::size_t>(r) * width + p] = fv[p];
  const int fid = fill.id;
  return g.record(std::move(y), {fill.id}, [fid, mask, rows, width](Graph& gr, int self) {
    const auto& gy = gr.out_grad(self);
    auto& gf = gr.grad_ref(fid);
    for (int r = 0; r < rows; ++r)
      for (int p = 0; p < width; ++p)
        if (mask[static_cast<std::size_t>(r) * width + p]) gf[p] += gy[static_cast<std::size_t>(r) * width + p];
  });
}

Var scale_const(Var x, const Tensor& factors) {
  Graph& g = *x.graph;
  require(factors.size() == x.value().size(), "scale_const size mismatch");
  Tensor y = x.value();
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] *= factors.data[i];
  const int xid = x.id;
  return g.record(std::move(y), {x.id}, [xid, f = factors.data](Graph& gr, int self) {
    const auto& gy = gr.out_grad(self);
    auto& gx = gr.grad_ref(xid);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * f[i];
  });
}

Var weighted_mse(Var pred, const Tensor& target, const std::vector<double>& weights) {
  Graph& g = *pred.graph;
  const Tensor& pv = pred.value();
  require(target.size() == pv.size() && weights.size() == pv.size(), "weighted_mse size mismatch");
  const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  require(wsum > 0.0, "weighted_mse needs positive total weight");
  double acc = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double r = pv.data[i] - target.data[i];
    acc += weights[i] * r * r;
  }
  const int pid = pred.id;
  return g.record(Tensor({1}, {acc / wsum}), {pred.id},
                  [pid, t = target.data, weights, wsum](Graph& gr, int self) {
                    const double gy = gr.out_grad(self)[0];
                    const auto& p = gr.value_of(pid).data;
                    auto& gp = gr.grad_ref(pid);
                    for (std::size_t i = 0; i < p.size(); ++i) gp[i] += gy * 2.0 * weights[i] * (p[i] - t[i]) / wsum;
                  });
}

Var dot_const(Var x, const Tensor& r) {
  Graph& g = *x.graph;
  require(r.size() == x.value().size(), "dot_const size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) acc += r.data[i] * x.value().data[i];
  const int xid = x.id;
  return g.record(Tensor({1}, {acc}), {x.id}, [xid, rv = r.data](Graph& gr, int self) {
    const double gy = gr.out_grad(self)[0];
    auto& gx = gr.grad_ref(xid);
    for (std::size_t i = 0; i < rv.size(); ++i) gx[i] += gy * rv[i];
  });
}

}  // namespace painexpr::ag
