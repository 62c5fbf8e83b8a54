#include "dcse/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dcse/kernels.hpp"

namespace dcse {

template <class T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <class T>
Var<T> Tape<T>::param(const Parameter<T>& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return {this, it->second};
  Node n;
  n.ref = &p.value;
  n.requires_grad = grad_enabled_ && !p.frozen;
  if (n.requires_grad) n.param = const_cast<Parameter<T>*>(&p);
  nodes_.push_back(std::move(n));
  const auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
  param_nodes_.emplace(&p, id);
  return {this, id};
}

template <class T>
Var<T> Tape<T>::record(Tensor<T> value, std::span<const Var<T>> inputs, BackwardFn fn) {
  bool rg = false;
  if (grad_enabled_) {
    for (const auto& in : inputs) rg = rg || nodes_[in.id].requires_grad;
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = rg;
  if (rg) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <class T>
Tensor<T>& Tape<T>::grad(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) {
    const Tensor<T>& v = n.ref != nullptr ? *n.ref : n.value;
    n.grad = Tensor<T>(v.rows(), v.cols());
  }
  return n.grad;
}

template <class T>
const Tensor<T>* Tape<T>::grad_if_any(Var<T> v) const {
  const Node& n = nodes_[v.id];
  return n.grad.empty() ? nullptr : &n.grad;
}

template <class T>
void Tape<T>::backward(Var<T> root) {
  if (value(root).size() != 1) throw ShapeError("backward root must be 1x1, got " + value(root).shape());
  if (!nodes_[root.id].requires_grad) return;
  grad(root.id)[0] = T{1};
  for (std::int64_t i = root.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.grad.empty() || !n.backward) continue;
    n.backward(*this, static_cast<std::uint32_t>(i));
  }
  for (auto& n : nodes_) {
    if (n.param == nullptr || n.grad.empty()) continue;
    if (n.param->grad.empty()) n.param->zero_grad();
    n.param->grad += n.grad;
  }
}

namespace ad {
namespace {

template <class T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (!a.same_shape(b)) throw ShapeError(std::string(op) + ": shape mismatch " + a.shape() + " vs " + b.shape());
}

}  // namespace

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.cols() != B.rows()) throw ShapeError("matmul: inner dimensions disagree " + A.shape() + " * " + B.shape());
  const std::size_t p = A.rows(), q = A.cols(), r = B.cols();
  Tensor<T> C(p, r);
  kernels::gemm_nn(p, r, q, A.ptr(), B.ptr(), C.ptr(), false);
  return a.tape->record(std::move(C), {a, b}, [a, b, p, q, r](Tape<T>& t, std::uint32_t self) {
    const auto& dC = t.grad(self);
    if (t.requires_grad(a)) kernels::gemm_nt(p, q, r, dC.ptr(), t.value(b).ptr(), t.grad(a).ptr(), true);
    if (t.requires_grad(b)) kernels::gemm_tn(q, r, p, t.value(a).ptr(), dC.ptr(), t.grad(b).ptr(), true);
  });
}

template <class T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.cols() != B.cols()) throw ShapeError("matmul_nt: inner dimensions disagree " + A.shape() + " * " + B.shape() + "^T");
  const std::size_t p = A.rows(), q = A.cols(), r = B.rows();
  Tensor<T> C(p, r);
  kernels::gemm_nt(p, r, q, A.ptr(), B.ptr(), C.ptr(), false);
  return a.tape->record(std::move(C), {a, b}, [a, b, p, q, r](Tape<T>& t, std::uint32_t self) {
    const auto& dC = t.grad(self);
    if (t.requires_grad(a)) kernels::gemm_nn(p, q, r, dC.ptr(), t.value(b).ptr(), t.grad(a).ptr(), true);
    if (t.requires_grad(b)) kernels::gemm_tn(r, q, p, dC.ptr(), t.value(a).ptr(), t.grad(b).ptr(), true);
  });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  const auto& A = a.value();
  const auto& B = b.value();
  require_same(A, B, "add");
  Tensor<T> C = A;
  C += B;
  return a.tape->record(std::move(C), {a, b}, [a, b](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(a)) t.grad(a) += g;
    if (t.requires_grad(b)) t.grad(b) += g;
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  const auto& A = a.value();
  const auto& B = b.value();
  require_same(A, B, "sub");
  Tensor<T> C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C[i] -= B[i];
  return a.tape->record(std::move(C), {a, b}, [a, b](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(a)) t.grad(a) += g;
    if (t.requires_grad(b)) {
      auto& gb = t.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  const auto& A = a.value();
  const auto& B = b.value();
  require_same(A, B, "mul");
  Tensor<T> C(A.rows(), A.cols());
  for (std::size_t i = 0; i < C.size(); ++i) C[i] = A[i] * B[i];
  return a.tape->record(std::move(C), {a, b}, [a, b](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const auto n = g.size();
    if (t.requires_grad(a)) kernels::active<T>().fma(g.ptr(), t.value(b).ptr(), t.grad(a).ptr(), n);
    if (t.requires_grad(b)) kernels::active<T>().fma(g.ptr(), t.value(a).ptr(), t.grad(b).ptr(), n);
  });
}

template <class T>
Var<T> add_row(Var<T> a, Var<T> row) {
  const auto& A = a.value();
  const auto& R = row.value();
  if (R.rows() != 1 || R.cols() != A.cols()) throw ShapeError("add_row: cannot broadcast " + R.shape() + " over " + A.shape());
  Tensor<T> C = A;
  for (std::size_t i = 0; i < C.rows(); ++i) {
    auto cr = C.row(i);
    for (std::size_t j = 0; j < C.cols(); ++j) cr[j] += R[j];
  }
  return a.tape->record(std::move(C), {a, row}, [a, row](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(a)) t.grad(a) += g;
    if (t.requires_grad(row)) {
      auto& gr = t.grad(row);
      for (std::size_t i = 0; i < g.rows(); ++i) kernels::axpy<T>(T{1}, g.row(i).data(), gr.ptr(), g.cols());
    }
  });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  Tensor<T> C = a.value();
  for (auto& v : C.data()) v *= s;
  return a.tape->record(std::move(C), {a}, [a, s](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    kernels::axpy<T>(s, g.ptr(), t.grad(a).ptr(), g.size());
  });
}

template <class T>
Var<T> scale_by(Var<T> a, Var<T> s) {
  const auto& S = s.value();
  if (S.size() != 1) throw ShapeError("scale_by: scalar operand must be 1x1, got " + S.shape());
  const T sv = S[0];
  Tensor<T> C = a.value();
  for (auto& v : C.data()) v *= sv;
  return a.tape->record(std::move(C), {a, s}, [a, s](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(a)) kernels::axpy<T>(t.value(s)[0], g.ptr(), t.grad(a).ptr(), g.size());
    if (t.requires_grad(s)) t.grad(s)[0] += kernels::dot<T>(g.ptr(), t.value(a).ptr(), g.size());
  });
}

template <class T>
Var<T> relu(Var<T> a) {
  Tensor<T> C = a.value();
  for (auto& v : C.data()) v = v > T{0} ? v : T{0};
  return a.tape->record(std::move(C), {a}, [a](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const auto& x = t.value(a);
    auto& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > T{0}) ga[i] += g[i];
    }
  });
}

template <class T>
Var<T> abs(Var<T> a) {
  Tensor<T> C = a.value();
  for (auto& v : C.data()) v = std::abs(v);
  return a.tape->record(std::move(C), {a}, [a](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const auto& x = t.value(a);
    auto& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > T{0}) ga[i] += g[i];
      else if (x[i] < T{0}) ga[i] -= g[i];
    }
  });
}

template <class T>
Var<T> sigmoid(Var<T> a) {
  Tensor<T> C = a.value();
  for (auto& v : C.data()) v = v >= T{0} ? T{1} / (T{1} + std::exp(-v)) : std::exp(v) / (T{1} + std::exp(v));
  return a.tape->record(std::move(C), {a}, [a](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(Var<T>{&t, self});
    auto& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (T{1} - y[i]);
  });
}

template <class T>
Var<T> softmax_rows(Var<T> a, const Mask* col_mask) {
  const auto& X = a.value();
  if (col_mask != nullptr && col_mask->size() != X.cols()) {
    throw ShapeError("softmax_rows: mask length " + std::to_string(col_mask->size()) + " vs " + X.shape());
  }
  Tensor<T> Y(X.rows(), X.cols());
  for (std::size_t i = 0; i < X.rows(); ++i) {
    auto x = X.row(i);
    auto y = Y.row(i);
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < x.size(); ++j) {
      if (col_mask == nullptr || (*col_mask)[j]) mx = std::max(mx, x[j]);
    }
    if (!std::isfinite(mx)) throw DegenerateError("softmax_rows: row has no active entries");
    T sum{0};
    for (std::size_t j = 0; j < x.size(); ++j) {
      const bool on = col_mask == nullptr || (*col_mask)[j];
      y[j] = on ? std::exp(x[j] - mx) : T{0};
      sum += y[j];
    }
    for (auto& v : y) v /= sum;
  }
  return a.tape->record(std::move(Y), {a}, [a](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const auto& Y = t.value(Var<T>{&t, self});
    auto& ga = t.grad(a);
    for (std::size_t i = 0; i < Y.rows(); ++i) {
      auto y = Y.row(i);
      auto gy = g.row(i);
      auto gx = ga.row(i);
      const T inner = kernels::dot<T>(y.data(), gy.data(), y.size());
      for (std::size_t j = 0; j < y.size(); ++j) gx[j] += y[j] * (gy[j] - inner);
    }
  });
}

template <class T>
Var<T> layer_norm_rows(Var<T> x, Var<T> gain, Var<T> bias, T eps) {
  const auto& X = x.value();
  const auto& G = gain.value();
  const auto& B = bias.value();
  const std::size_t n = X.rows(), d = X.cols();
  if (G.rows() != 1 || G.cols() != d || !B.same_shape(G)) {
    throw ShapeError("layer_norm_rows: gain/bias " + G.shape() + "/" + B.shape() + " vs input " + X.shape());
  }
  if (!(eps > T{0})) throw UsageError("layer_norm_rows: eps must be positive");
  Tensor<T> xhat(n, d);
  std::vector<T> inv_std(n);
  Tensor<T> Y(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    auto xr = X.row(i);
    T mean{0};
    for (T v : xr) mean += v;
    mean /= static_cast<T>(d);
    T var{0};
    for (T v : xr) var += (v - mean) * (v - mean);
    var /= static_cast<T>(d);
    const T is = T{1} / std::sqrt(var + eps);
    inv_std[i] = is;
    auto hr = xhat.row(i);
    auto yr = Y.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      hr[j] = (xr[j] - mean) * is;
      yr[j] = hr[j] * G[j] + B[j];
    }
  }
  return x.tape->record(std::move(Y), {x, gain, bias},
                        [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    const std::size_t n = g.rows(), d = g.cols();
    if (t.requires_grad(gain)) {
      auto& gg = t.grad(gain);
      for (std::size_t i = 0; i < n; ++i) kernels::active<T>().fma(g.row(i).data(), xhat.row(i).data(), gg.ptr(), d);
    }
    if (t.requires_grad(bias)) {
      auto& gb = t.grad(bias);
      for (std::size_t i = 0; i < n; ++i) kernels::axpy<T>(T{1}, g.row(i).data(), gb.ptr(), d);
    }
    if (t.requires_grad(x)) {
      const auto& G = t.value(gain);
      auto& gx = t.grad(x);
      std::vector<T> dh(d);
      for (std::size_t i = 0; i < n; ++i) {
        auto gr = g.row(i);
        auto hr = xhat.row(i);
        T mean_dh{0}, mean_dh_h{0};
        for (std::size_t j = 0; j < d; ++j) {
          dh[j] = gr[j] * G[j];
          mean_dh += dh[j];
          mean_dh_h += dh[j] * hr[j];
        }
        mean_dh /= static_cast<T>(d);
        mean_dh_h /= static_cast<T>(d);
        auto out = gx.row(i);
        for (std::size_t j = 0; j < d; ++j) out[j] += inv_std[i] * (dh[j] - mean_dh - hr[j] * mean_dh_h);
      }
    }
  });
}

template <class T>
Var<T> masked_mean_rows(Var<T> x, const Mask& mask) {
  const auto& X = x.value();
  if (mask.size() != X.rows()) {
    throw ShapeError("masked_mean_rows: mask length " + std::to_string(mask.size()) + " vs " + X.shape());
  }
  const std::size_t count = mask_count(mask);
  if (count == 0) throw DegenerateError("masked_mean_rows: empty pool (mask has no active rows)");
  const T inv = T{1} / static_cast<T>(count);
  Tensor<T> Y(1, X.cols());
  for (std::size_t i = 0; i < X.rows(); ++i) {
    if (mask[i]) kernels::axpy<T>(T{1}, X.row(i).data(), Y.ptr(), X.cols());
  }
  const T denom = static_cast<T>(count);
  for (auto& v : Y.data()) v /= denom;
  return x.tape->record(std::move(Y), {x}, [x, mask, inv](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad(x);
    for (std::size_t i = 0; i < gx.rows(); ++i) {
      if (mask[i]) kernels::axpy<T>(inv, g.ptr(), gx.row(i).data(), g.cols());
    }
  });
}

template <class T>
Var<T> cosine(Var<T> u, Var<T> v) {
  const auto& U = u.value();
  const auto& V = v.value();
  require_same(U, V, "cosine");
  const std::size_t n = U.size();
  const T uv = kernels::dot<T>(U.ptr(), V.ptr(), n);
  const T uu = kernels::dot<T>(U.ptr(), U.ptr(), n);
  const T vv = kernels::dot<T>(V.ptr(), V.ptr(), n);
  if (!(uu > T{0}) || !(vv > T{0})) throw DegenerateError("cosine: zero-norm input vector");
  const T nu = std::sqrt(uu), nv = std::sqrt(vv);
  const T c = uv / (nu * nv);
  return u.tape->record(Tensor<T>(1, 1, c), {u, v}, [u, v, c, nu, nv](Tape<T>& t, std::uint32_t self) {
    const T g = t.grad(self)[0];
    const auto& U = t.value(u);
    const auto& V = t.value(v);
    const std::size_t n = U.size();
    if (t.requires_grad(u)) {
      auto& gu = t.grad(u);
      kernels::axpy<T>(g / (nu * nv), V.ptr(), gu.ptr(), n);
      kernels::axpy<T>(-g * c / (nu * nu), U.ptr(), gu.ptr(), n);
    }
    if (t.requires_grad(v)) {
      auto& gv = t.grad(v);
      kernels::axpy<T>(g / (nu * nv), U.ptr(), gv.ptr(), n);
      kernels::axpy<T>(-g * c / (nv * nv), V.ptr(), gv.ptr(), n);
    }
  });
}

template <class T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = parts[0].rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row mismatch " + parts[0].value().shape() + " vs " + p.value().shape());
    cols += p.cols();
  }
  Tensor<T> C(rows, cols);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto& P = p.value();
    for (std::size_t i = 0; i < rows; ++i) std::copy(P.row(i).begin(), P.row(i).end(), C.row(i).begin() + off);
    offsets.push_back(off);
    off += P.cols();
  }
  std::vector<Var<T>> ins(parts.begin(), parts.end());
  return parts[0].tape->record(std::move(C), parts, [ins, offsets](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    for (std::size_t k = 0; k < ins.size(); ++k) {
      if (!t.requires_grad(ins[k])) continue;
      auto& gp = t.grad(ins[k]);
      for (std::size_t i = 0; i < gp.rows(); ++i) {
        kernels::axpy<T>(T{1}, g.row(i).data() + offsets[k], gp.row(i).data(), gp.cols());
      }
    }
  });
}

template <class T>
Var<T> slice_cols(Var<T> a, std::size_t first, std::size_t width) {
  const auto& A = a.value();
  if (first + width > A.cols()) throw ShapeError("slice_cols: range exceeds " + A.shape());
  Tensor<T> C(A.rows(), width);
  for (std::size_t i = 0; i < A.rows(); ++i) {
    std::copy_n(A.row(i).begin() + first, width, C.row(i).begin());
  }
  return a.tape->record(std::move(C), {a}, [a, first, width](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(a);
    for (std::size_t i = 0; i < g.rows(); ++i) kernels::axpy<T>(T{1}, g.row(i).data(), ga.row(i).data() + first, width);
  });
}

template <class T>
Var<T> slice_rows(Var<T> a, std::size_t first, std::size_t height) {
  const auto& A = a.value();
  if (first + height > A.rows()) throw ShapeError("slice_rows: range exceeds " + A.shape());
  std::vector<T> data(A.ptr() + first * A.cols(), A.ptr() + (first + height) * A.cols());
  return a.tape->record(Tensor<T>(height, A.cols(), std::move(data)), {a}, [a, first](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(a);
    kernels::axpy<T>(T{1}, g.ptr(), ga.ptr() + first * ga.cols(), g.size());
  });
}

template <class T>
Var<T> pad_rows(Var<T> a, std::size_t n) {
  const auto& A = a.value();
  if (n < A.rows()) throw ShapeError("pad_rows: target rows smaller than " + A.shape());
  if (n == A.rows()) return a;
  std::vector<T> data(A.storage());
  data.resize(n * A.cols(), T{0});
  return a.tape->record(Tensor<T>(n, A.cols(), std::move(data)), {a}, [a](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(a);
    kernels::axpy<T>(T{1}, g.ptr(), ga.ptr(), ga.size());
  });
}

template <class T>
Var<T> gather_rows(Var<T> table, std::span<const int> ids) {
  const auto& E = table.value();
  Tensor<T> C(ids.size(), E.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= E.rows()) {
      throw ShapeError("gather_rows: id " + std::to_string(ids[i]) + " outside table " + E.shape());
    }
    std::copy(E.row(ids[i]).begin(), E.row(ids[i]).end(), C.row(i).begin());
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return table.tape->record(std::move(C), {table}, [table, idv = std::move(idv)](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    auto& ge = t.grad(table);
    for (std::size_t i = 0; i < idv.size(); ++i) kernels::axpy<T>(T{1}, g.row(i).data(), ge.row(idv[i]).data(), g.cols());
  });
}

template <class T>
Var<T> mask_outer(Var<T> m, const Mask& row_mask, const Mask& col_mask) {
  const auto& M = m.value();
  if (row_mask.size() != M.rows() || col_mask.size() != M.cols()) {
    throw ShapeError("mask_outer: masks " + Tensor<T>::shape_string(row_mask.size(), col_mask.size()) + " vs " + M.shape());
  }
  Tensor<T> C = M;
  for (std::size_t i = 0; i < C.rows(); ++i) {
    for (std::size_t j = 0; j < C.cols(); ++j) {
      if (!row_mask[i] || !col_mask[j]) C(i, j) = T{0};
    }
  }
  return m.tape->record(std::move(C), {m}, [m, row_mask, col_mask](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    auto& gm = t.grad(m);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      if (!row_mask[i]) continue;
      for (std::size_t j = 0; j < g.cols(); ++j) {
        if (col_mask[j]) gm(i, j) += g(i, j);
      }
    }
  });
}

template <class T>
Var<T> sum_all(Var<T> a) {
  T s{0};
  for (T v : a.value().data()) s += v;
  return a.tape->record(Tensor<T>(1, 1, s), {a}, [a](Tape<T>& t, std::uint32_t self) {
    const T g = t.grad(self)[0];
    for (auto& v : t.grad(a).data()) v += g;
  });
}

template <class T>
Var<T> mean_of(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ShapeError("mean_of: no inputs");
  Tensor<T> C = parts[0].value();
  for (std::size_t k = 1; k < parts.size(); ++k) {
    require_same(C, parts[k].value(), "mean_of");
    C += parts[k].value();
  }
  const T inv = T{1} / static_cast<T>(parts.size());
  for (auto& v : C.data()) v *= inv;
  std::vector<Var<T>> ins(parts.begin(), parts.end());
  return parts[0].tape->record(std::move(C), parts, [ins, inv](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    for (const auto& in : ins) {
      if (t.requires_grad(in)) kernels::axpy<T>(inv, g.ptr(), t.grad(in).ptr(), g.size());
    }
  });
}

template <class T>
Var<T> stack_scalars(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ShapeError("stack_scalars: no inputs");
  Tensor<T> C(1, parts.size());
  for (std::size_t k = 0; k < parts.size(); ++k) {
    if (parts[k].value().size() != 1) throw ShapeError("stack_scalars: element is " + parts[k].value().shape());
    C[k] = parts[k].value()[0];
  }
  std::vector<Var<T>> ins(parts.begin(), parts.end());
  return parts[0].tape->record(std::move(C), parts, [ins](Tape<T>& t, std::uint32_t self) {
    const auto& g = t.grad(self);
    for (std::size_t k = 0; k < ins.size(); ++k) {
      if (t.requires_grad(ins[k])) t.grad(ins[k])[0] += g[k];
    }
  });
}

template <class T>
Var<T> element(Var<T> a, std::size_t r, std::size_t c) {
  const auto& A = a.value();
  if (r >= A.rows() || c >= A.cols()) throw ShapeError("element: index outside " + A.shape());
  return a.tape->record(Tensor<T>(1, 1, A(r, c)), {a}, [a, r, c](Tape<T>& t, std::uint32_t self) {
    t.grad(a)(r, c) += t.grad(self)[0];
  });
}

template <class T>
Var<T> softmax_cross_entropy(Var<T> logits, std::size_t target) {
  const auto& L = logits.value();
  if (L.rows() != 1 || target >= L.cols()) throw ShapeError("softmax_cross_entropy: bad logits " + L.shape());
  T mx = -std::numeric_limits<T>::infinity();
  for (T v : L.data()) mx = std::max(mx, v);
  // ascending summation: the result does not depend on the column order
  std::vector<T> terms(L.cols());
  for (std::size_t j = 0; j < L.cols(); ++j) terms[j] = std::exp(L[j] - mx);
  std::sort(terms.begin(), terms.end());
  T sum{0};
  for (T v : terms) sum += v;
  const T log_sum = std::log(sum);
  const T lse = mx + log_sum;
  const T loss = log_sum - (L[target] - mx);
  return logits.tape->record(Tensor<T>(1, 1, loss), {logits}, [logits, target, lse](Tape<T>& t, std::uint32_t self) {
    const T g = t.grad(self)[0];
    const auto& L = t.value(logits);
    auto& gl = t.grad(logits);
    for (std::size_t j = 0; j < L.cols(); ++j) gl[j] += g * std::exp(L[j] - lse);
    gl[target] -= g;
  });
}

template <class T>
Var<T> bce_with_logits(Var<T> logit, T label) {
  const auto& Z = logit.value();
  if (Z.size() != 1) throw ShapeError("bce_with_logits: logit must be 1x1, got " + Z.shape());
  const T z = Z[0];
  const T loss = std::max(z, T{0}) - z * label + std::log1p(std::exp(-std::abs(z)));
  return logit.tape->record(Tensor<T>(1, 1, loss), {logit}, [logit, label](Tape<T>& t, std::uint32_t self) {
    const T z = t.value(logit)[0];
    const T s = z >= T{0} ? T{1} / (T{1} + std::exp(-z)) : std::exp(z) / (T{1} + std::exp(z));
    t.grad(logit)[0] += t.grad(self)[0] * (s - label);
  });
}

#define DCSE_INSTANTIATE_OPS(T)                                                        \
  template Var<T> matmul<T>(Var<T>, Var<T>);                                          \
  template Var<T> matmul_nt<T>(Var<T>, Var<T>);                                       \
  template Var<T> add<T>(Var<T>, Var<T>);                                             \
  template Var<T> sub<T>(Var<T>, Var<T>);                                             \
  template Var<T> mul<T>(Var<T>, Var<T>);                                             \
  template Var<T> add_row<T>(Var<T>, Var<T>);                                         \
  template Var<T> scale<T>(Var<T>, T);                                                \
  template Var<T> scale_by<T>(Var<T>, Var<T>);                                        \
  template Var<T> relu<T>(Var<T>);                                                    \
  template Var<T> abs<T>(Var<T>);                                                     \
  template Var<T> sigmoid<T>(Var<T>);                                                 \
  template Var<T> softmax_rows<T>(Var<T>, const Mask*);                               \
  template Var<T> layer_norm_rows<T>(Var<T>, Var<T>, Var<T>, T);                      \
  template Var<T> masked_mean_rows<T>(Var<T>, const Mask&);                           \
  template Var<T> cosine<T>(Var<T>, Var<T>);                                          \
  template Var<T> concat_cols<T>(std::span<const Var<T>>);                            \
  template Var<T> slice_cols<T>(Var<T>, std::size_t, std::size_t);                    \
  template Var<T> slice_rows<T>(Var<T>, std::size_t, std::size_t);                    \
  template Var<T> pad_rows<T>(Var<T>, std::size_t);                                   \
  template Var<T> gather_rows<T>(Var<T>, std::span<const int>);                       \
  template Var<T> mask_outer<T>(Var<T>, const Mask&, const Mask&);                    \
  template Var<T> sum_all<T>(Var<T>);                                                 \
  template Var<T> mean_of<T>(std::span<const Var<T>>);                                \
  template Var<T> stack_scalars<T>(std::span<const Var<T>>);                          \
  template Var<T> element<T>(Var<T>, std::size_t, std::size_t);                       \
  template Var<T> softmax_cross_entropy<T>(Var<T>, std::size_t);                      \
  template Var<T> bce_with_logits<T>(Var<T>, T);

DCSE_INSTANTIATE_OPS(float)
DCSE_INSTANTIATE_OPS(double)
#undef DCSE_INSTANTIATE_OPS

}  // namespace ad

template <class T>
T dot(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) throw ShapeError("dot: lengths " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  return kernels::dot<T>(a.data(), b.data(), a.size());
}

template <class T>
T cosine_value(std::span<const T> a, std::span<const T> b) {
  const T uv = dot(a, b);
  const T uu = dot(a, a);
  const T vv = dot(b, b);
  if (!(uu > T{0}) || !(vv > T{0})) throw DegenerateError("cosine: zero-norm input vector");
  return uv / (std::sqrt(uu) * std::sqrt(vv));
}

template <class T>
Tensor<T> matmul_value(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions disagree " + a.shape() + " * " + b.shape());
  Tensor<T> c(a.rows(), b.cols());
  kernels::gemm_nn(a.rows(), b.cols(), a.cols(), a.ptr(), b.ptr(), c.ptr(), false);
  return c;
}

template class Tape<float>;
template class Tape<double>;
template float dot<float>(std::span<const float>, std::span<const float>);
template double dot<double>(std::span<const double>, std::span<const double>);
template float cosine_value<float>(std::span<const float>, std::span<const float>);
template double cosine_value<double>(std::span<const double>, std::span<const double>);
template Tensor<float> matmul_value<float>(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> matmul_value<double>(const Tensor<double>&, const Tensor<double>&);

}  // namespace dcse
