/*
 * Copyright 2026 The Symbiosis Networks Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "symbiosis/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace symb {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;
using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMajor>;
using ConstMatMap = Eigen::Map<const RowMajor>;

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

///////////////////////////////////////////
// Precision
///////////////////////////////////////////

namespace {
Precision g_precision = Precision::kFloat32;
}

Precision precision() { return g_precision; }
void set_precision(Precision p) { g_precision = p; }

double store_value(double v) {
  return g_precision == Precision::kFloat32 ? static_cast<double>(static_cast<float>(v)) : v;
}

PrecisionScope::PrecisionScope(Precision p) : saved_(g_precision) { g_precision = p; }
PrecisionScope::~PrecisionScope() { g_precision = saved_; }

///////////////////////////////////////////
// Rng
///////////////////////////////////////////

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
  // Box-Muller; one draw per call keeps the stream position simple.
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw ContractError("Rng::uniform_int: empty range");
  const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
  if (span == 0) return static_cast<std::int64_t>(engine_());
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % span;
  std::uint64_t r = engine_();
  while (r >= limit) r = engine_();
  return lo + static_cast<std::int64_t>(r % span);
}

///////////////////////////////////////////
// Tensor
///////////////////////////////////////////

namespace {

NodePtr new_node(Shape shape, std::vector<double> value, bool requires_grad = false) {
  if (numel(shape) != static_cast<std::int64_t>(value.size())) {
    throw ShapeError("tensor: shape " + to_string(shape) + " does not match " +
                     std::to_string(value.size()) + " values");
  }
  for (auto d : shape) {
    if (d <= 0) throw ShapeError("tensor: non-positive dimension in " + to_string(shape));
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return n;
}

std::int64_t normalize_axis(std::int64_t axis, std::int64_t rank, const char* op) {
  const std::int64_t a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return a;
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = symb::numel(shape);
  return Tensor(new_node(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0),
                         requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = symb::numel(shape);
  return Tensor(new_node(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), value),
                         requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  return Tensor(new_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value) { return Tensor(new_node({}, {value})); }

std::int64_t Tensor::dim(std::int64_t axis) const {
  return node_->shape[static_cast<std::size_t>(normalize_axis(axis, rank(), "dim"))];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor of shape " + to_string(shape()) + " is not a scalar");
  return node_->value[0];
}

std::span<double> Tensor::mutable_grad() {
  node_->ensure_grad();
  return node_->grad;
}

Tensor Tensor::clone() const {
  return Tensor(new_node(node_->shape, node_->value, node_->requires_grad));
}

Tensor Tensor::detach() const { return Tensor(new_node(node_->shape, node_->value, false)); }

///////////////////////////////////////////
// Tape
///////////////////////////////////////////

namespace {
thread_local Tape* t_active_tape = nullptr;
}

Tape* active_tape() { return t_active_tape; }

TapeScope::TapeScope(Tape& tape) : saved_(t_active_tape) { t_active_tape = &tape; }
TapeScope::~TapeScope() { t_active_tape = saved_; }

void Tape::record(const char* op, std::shared_ptr<Node> out, BackwardFn fn) {
  entries_.push_back(Entry{op, std::move(out), std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar tensor");
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward: loss does not depend on any tensor that requires grad");
  }
  for (auto& e : entries_) e.out->grad.clear();
  Node& root = *loss.node();
  root.ensure_grad();
  root.grad[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->out->grad.empty()) continue;
    it->backward(*it->out);
  }
}

void backward(const Tensor& loss) {
  Tape* tape = active_tape();
  if (tape == nullptr) throw ContractError("backward: no active tape");
  tape->backward(loss);
}

namespace {

bool needs_record(std::initializer_list<const Tensor*> inputs) {
  if (t_active_tape == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

// Wraps a forward result and, when required, records its backward closure.
template <class Fn>
Tensor finish(const char* op, Shape shape, std::vector<double> value,
              std::initializer_list<const Tensor*> inputs, Fn&& fn) {
  auto out = new_node(std::move(shape), std::move(value));
  if (needs_record(inputs)) {
    out->requires_grad = true;
    t_active_tape->record(op, out, std::forward<Fn>(fn));
  }
  return Tensor(out);
}

///////////////////////////////////////////
// Broadcasting
///////////////////////////////////////////

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": shapes " + to_string(a) + " and " + to_string(b) +
                       " do not broadcast");
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Element strides of `in` aligned to `out`, zero along broadcast dimensions.
std::vector<std::int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  const std::size_t r = out.size();
  std::vector<std::int64_t> strides(r, 0);
  std::int64_t s = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const std::size_t i = in.size() - 1 - k;
    const std::size_t o = r - 1 - k;
    strides[o] = in[i] == 1 ? 0 : s;
    s *= in[i];
  }
  return strides;
}

// Calls fn(out_index, a_index, b_index) for every output element.
template <class Fn>
void for_each_broadcast(const Shape& out, const std::vector<std::int64_t>& sa,
                        const std::vector<std::int64_t>& sb, Fn&& fn) {
  const std::size_t r = out.size();
  if (r == 0) {
    fn(0, 0, 0);
    return;
  }
  const std::int64_t inner = out[r - 1];
  const std::int64_t ia_step = sa[r - 1];
  const std::int64_t ib_step = sb[r - 1];
  const std::int64_t outer = numel(out) / inner;
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t oa = 0, ob = 0;
  std::int64_t o = 0;
  for (std::int64_t n = 0; n < outer; ++n) {
    std::int64_t ia = oa, ib = ob;
    for (std::int64_t j = 0; j < inner; ++j, ++o, ia += ia_step, ib += ib_step) fn(o, ia, ib);
    for (std::int64_t d = static_cast<std::int64_t>(r) - 2; d >= 0; --d) {
      const auto du = static_cast<std::size_t>(d);
      ++idx[du];
      oa += sa[du];
      ob += sb[du];
      if (idx[du] < out[du]) break;
      oa -= sa[du] * out[du];
      ob -= sb[du] * out[du];
      idx[du] = 0;
    }
  }
}

enum class BinaryKind { kAdd, kMul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind) {
  const char* op = kind == BinaryKind::kAdd ? "add" : "multiply";
  const auto& va = a.node()->value;
  const auto& vb = b.node()->value;
  if (a.shape() == b.shape()) {
    std::vector<double> out(va.size());
    if (kind == BinaryKind::kAdd) {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
    } else {
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
    }
    NodePtr na = a.node(), nb = b.node();
    return finish(op, a.shape(), std::move(out), {&a, &b}, [na, nb, kind](const Node& o) {
      const std::size_t n = o.grad.size();
      if (na->requires_grad) {
        na->ensure_grad();
        if (kind == BinaryKind::kAdd) {
          for (std::size_t i = 0; i < n; ++i) na->grad[i] += o.grad[i];
        } else {
          for (std::size_t i = 0; i < n; ++i) na->grad[i] += o.grad[i] * nb->value[i];
        }
      }
      if (nb->requires_grad) {
        nb->ensure_grad();
        if (kind == BinaryKind::kAdd) {
          for (std::size_t i = 0; i < n; ++i) nb->grad[i] += o.grad[i];
        } else {
          for (std::size_t i = 0; i < n; ++i) nb->grad[i] += o.grad[i] * na->value[i];
        }
      }
    });
  }

  Shape out_shape = broadcast_shape(a.shape(), b.shape(), op);
  auto sa = broadcast_strides(a.shape(), out_shape);
  auto sb = broadcast_strides(b.shape(), out_shape);
  std::vector<double> out(static_cast<std::size_t>(numel(out_shape)));
  if (kind == BinaryKind::kAdd) {
    for_each_broadcast(out_shape, sa, sb, [&](std::int64_t o, std::int64_t i, std::int64_t j) {
      out[o] = va[i] + vb[j];
    });
  } else {
    for_each_broadcast(out_shape, sa, sb, [&](std::int64_t o, std::int64_t i, std::int64_t j) {
      out[o] = va[i] * vb[j];
    });
  }
  NodePtr na = a.node(), nb = b.node();
  return finish(op, out_shape, std::move(out), {&a, &b},
                [na, nb, kind, out_shape, sa, sb](const Node& o) {
                  const bool ga = na->requires_grad, gb = nb->requires_grad;
                  if (ga) na->ensure_grad();
                  if (gb) nb->ensure_grad();
                  for_each_broadcast(out_shape, sa, sb,
                                     [&](std::int64_t k, std::int64_t i, std::int64_t j) {
                                       const double g = o.grad[k];
                                       if (kind == BinaryKind::kAdd) {
                                         if (ga) na->grad[i] += g;
                                         if (gb) nb->grad[j] += g;
                                       } else {
                                         if (ga) na->grad[i] += g * nb->value[j];
                                         if (gb) nb->grad[j] += g * na->value[i];
                                       }
                                     });
                });
}

template <class Fwd, class Deriv>
Tensor unary(const char* op, const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto& v = x.node()->value;
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = fwd(v[i]);
  NodePtr nx = x.node();
  return finish(op, x.shape(), out, {&x}, [nx, deriv](const Node& o) {
    nx->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      nx->grad[i] += o.grad[i] * deriv(nx->value[i], o.value[i]);
    }
  });
}

// Layout of `shape` around `axis` as (outer, len, inner).
struct AxisLayout {
  std::int64_t outer = 1, len = 1, inner = 1;
};

AxisLayout axis_layout(const Shape& shape, std::int64_t axis) {
  AxisLayout l;
  for (std::int64_t i = 0; i < axis; ++i) l.outer *= shape[static_cast<std::size_t>(i)];
  l.len = shape[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) l.inner *= shape[i];
  return l;
}

}  // namespace

///////////////////////////////////////////
// Primitives
///////////////////////////////////////////

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kAdd); }
Tensor multiply(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::kMul); }

Tensor scale(const Tensor& x, double c) {
  return unary("scale", x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

Tensor relu(const Tensor& x) {
  return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& x) {
  return unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary("log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError("matmul: operands must have rank >= 2, got " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  }
  const std::int64_t p = a.dim(-2), q = a.dim(-1), r = b.dim(-1);
  if (b.dim(-2) != q) {
    throw ShapeError("matmul: inner dimensions differ for " + to_string(a.shape()) + " @ " +
                     to_string(b.shape()));
  }
  NodePtr na = a.node(), nb = b.node();

  if (b.rank() == 2) {
    // Fold a's leading dimensions into the row count: one GEMM.
    const std::int64_t rows = a.numel() / q;
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    out_shape.push_back(r);
    std::vector<double> out(static_cast<std::size_t>(rows * r));
    MatMap(out.data(), rows, r).noalias() = ConstMatMap(na->value.data(), rows, q) *
                                            ConstMatMap(nb->value.data(), q, r);
    return finish("matmul", std::move(out_shape), std::move(out), {&a, &b},
                  [na, nb, rows, q, r](const Node& o) {
                    ConstMatMap g(o.grad.data(), rows, r);
                    if (na->requires_grad) {
                      na->ensure_grad();
                      MatMap(na->grad.data(), rows, q).noalias() +=
                          g * ConstMatMap(nb->value.data(), q, r).transpose();
                    }
                    if (nb->requires_grad) {
                      nb->ensure_grad();
                      MatMap(nb->grad.data(), q, r).noalias() +=
                          ConstMatMap(na->value.data(), rows, q).transpose() * g;
                    }
                  });
  }

  const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  const Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  Shape batch = broadcast_shape(batch_a, batch_b, "matmul");
  auto sa = broadcast_strides(batch_a, batch);
  auto sb = broadcast_strides(batch_b, batch);
  const std::int64_t nbatch = numel(batch);
  std::vector<std::int64_t> offa(static_cast<std::size_t>(nbatch)), offb(static_cast<std::size_t>(nbatch));
  for_each_broadcast(batch, sa, sb, [&](std::int64_t k, std::int64_t i, std::int64_t j) {
    offa[static_cast<std::size_t>(k)] = i * p * q;
    offb[static_cast<std::size_t>(k)] = j * q * r;
  });
  Shape out_shape = batch;
  out_shape.push_back(p);
  out_shape.push_back(r);
  std::vector<double> out(static_cast<std::size_t>(nbatch * p * r));
  for (std::int64_t k = 0; k < nbatch; ++k) {
    MatMap(out.data() + k * p * r, p, r).noalias() =
        ConstMatMap(na->value.data() + offa[k], p, q) * ConstMatMap(nb->value.data() + offb[k], q, r);
  }
  return finish("matmul", std::move(out_shape), std::move(out), {&a, &b},
                [na, nb, p, q, r, nbatch, offa, offb](const Node& o) {
                  if (na->requires_grad) na->ensure_grad();
                  if (nb->requires_grad) nb->ensure_grad();
                  for (std::int64_t k = 0; k < nbatch; ++k) {
                    ConstMatMap g(o.grad.data() + k * p * r, p, r);
                    if (na->requires_grad) {
                      MatMap(na->grad.data() + offa[k], p, q).noalias() +=
                          g * ConstMatMap(nb->value.data() + offb[k], q, r).transpose();
                    }
                    if (nb->requires_grad) {
                      MatMap(nb->grad.data() + offb[k], q, r).noalias() +=
                          ConstMatMap(na->value.data() + offa[k], p, q).transpose() * g;
                    }
                  }
                });
}

Tensor softmax(const Tensor& x, std::int64_t axis) {
  const std::int64_t ax = normalize_axis(axis, x.rank(), "softmax");
  const AxisLayout l = axis_layout(x.shape(), ax);
  const auto& v = x.node()->value;
  std::vector<double> out(v.size());
  for (std::int64_t o = 0; o < l.outer; ++o) {
    for (std::int64_t i = 0; i < l.inner; ++i) {
      const std::int64_t base = o * l.len * l.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::int64_t j = 0; j < l.len; ++j) mx = std::max(mx, v[base + j * l.inner]);
      double total = 0.0;
      for (std::int64_t j = 0; j < l.len; ++j) {
        const double e = std::exp(v[base + j * l.inner] - mx);
        out[base + j * l.inner] = e;
        total += e;
      }
      const double inv = 1.0 / total;
      for (std::int64_t j = 0; j < l.len; ++j) out[base + j * l.inner] *= inv;
    }
  }
  NodePtr nx = x.node();
  return finish("softmax", x.shape(), std::move(out), {&x}, [nx, l](const Node& o) {
    nx->ensure_grad();
    for (std::int64_t a = 0; a < l.outer; ++a) {
      for (std::int64_t i = 0; i < l.inner; ++i) {
        const std::int64_t base = a * l.len * l.inner + i;
        double dot = 0.0;
        for (std::int64_t j = 0; j < l.len; ++j) {
          dot += o.grad[base + j * l.inner] * o.value[base + j * l.inner];
        }
        for (std::int64_t j = 0; j < l.len; ++j) {
          const std::int64_t k = base + j * l.inner;
          nx->grad[k] += o.value[k] * (o.grad[k] - dot);
        }
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  const std::int64_t d = x.dim(-1);
  if (gain.numel() != d || bias.numel() != d) {
    throw ShapeError("layer_norm: gain/bias shapes " + to_string(gain.shape()) + ", " +
                     to_string(bias.shape()) + " do not match last dimension of " + to_string(x.shape()));
  }
  const std::int64_t rows = x.numel() / d;
  const auto& v = x.node()->value;
  const auto& g = gain.node()->value;
  const auto& b = bias.node()->value;
  std::vector<double> out(v.size());
  std::vector<double> xhat(v.size());
  std::vector<double> rstd(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const double* row = v.data() + r * d;
    double mu = 0.0;
    for (std::int64_t k = 0; k < d; ++k) mu += row[k];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::int64_t k = 0; k < d; ++k) var += (row[k] - mu) * (row[k] - mu);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::int64_t k = 0; k < d; ++k) {
      const double h = (row[k] - mu) * rs;
      xhat[r * d + k] = h;
      out[r * d + k] = h * g[k] + b[k];
    }
  }
  NodePtr nx = x.node(), ng = gain.node(), nb = bias.node();
  return finish("layer_norm", x.shape(), std::move(out), {&x, &gain, &bias},
                [nx, ng, nb, d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](const Node& o) {
                  if (ng->requires_grad) ng->ensure_grad();
                  if (nb->requires_grad) nb->ensure_grad();
                  if (nx->requires_grad) nx->ensure_grad();
                  for (std::int64_t r = 0; r < rows; ++r) {
                    const double* gy = o.grad.data() + r * d;
                    const double* h = xhat.data() + r * d;
                    if (ng->requires_grad) {
                      for (std::int64_t k = 0; k < d; ++k) ng->grad[k] += gy[k] * h[k];
                    }
                    if (nb->requires_grad) {
                      for (std::int64_t k = 0; k < d; ++k) nb->grad[k] += gy[k];
                    }
                    if (nx->requires_grad) {
                      double m1 = 0.0, m2 = 0.0;
                      for (std::int64_t k = 0; k < d; ++k) {
                        const double dh = gy[k] * ng->value[k];
                        m1 += dh;
                        m2 += dh * h[k];
                      }
                      m1 /= static_cast<double>(d);
                      m2 /= static_cast<double>(d);
                      double* gx = nx->grad.data() + r * d;
                      for (std::int64_t k = 0; k < d; ++k) {
                        gx[k] += rstd[r] * (gy[k] * ng->value[k] - m1 - h[k] * m2);
                      }
                    }
                  }
                });
}

Tensor embedding(const Tensor& table, std::span<const int> ids, const Shape& ids_shape) {
  if (table.rank() != 2) throw ShapeError("embedding: table must be rank 2, got " + to_string(table.shape()));
  if (numel(ids_shape) != static_cast<std::int64_t>(ids.size())) {
    throw ShapeError("embedding: ids shape " + to_string(ids_shape) + " does not match " +
                     std::to_string(ids.size()) + " ids");
  }
  const std::int64_t vocab = table.dim(0), d = table.dim(1);
  const auto& t = table.node()->value;
  std::vector<double> out(ids.size() * static_cast<std::size_t>(d));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= vocab) {
      throw std::out_of_range("embedding: id " + std::to_string(ids[i]) + " outside [0, " +
                              std::to_string(vocab) + ")");
    }
    std::copy_n(t.data() + ids[i] * d, d, out.data() + i * d);
  }
  Shape out_shape = ids_shape;
  out_shape.push_back(d);
  NodePtr nt = table.node();
  std::vector<int> idv(ids.begin(), ids.end());
  return finish("embedding", std::move(out_shape), std::move(out), {&table},
                [nt, d, idv = std::move(idv)](const Node& o) {
                  nt->ensure_grad();
                  for (std::size_t i = 0; i < idv.size(); ++i) {
                    double* dst = nt->grad.data() + idv[i] * d;
                    const double* src = o.grad.data() + i * d;
                    for (std::int64_t k = 0; k < d; ++k) dst[k] += src[k];
                  }
                });
}

Tensor dropout_with_mask(const Tensor& x, std::span<const double> mask) {
  if (static_cast<std::int64_t>(mask.size()) != x.numel()) {
    throw ShapeError("dropout: mask size does not match " + to_string(x.shape()));
  }
  const auto& v = x.node()->value;
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * mask[i];
  NodePtr nx = x.node();
  std::vector<double> m(mask.begin(), mask.end());
  return finish("dropout", x.shape(), std::move(out), {&x}, [nx, m = std::move(m)](const Node& o) {
    nx->ensure_grad();
    for (std::size_t i = 0; i < m.size(); ++i) nx->grad[i] += o.grad[i] * m[i];
  });
}

Tensor dropout(const Tensor& x, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw ContractError("dropout: p must lie in [0, 1)");
  if (p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(static_cast<std::size_t>(x.numel()));
  for (auto& m : mask) m = rng.uniform() < p ? 0.0 : keep_scale;
  return dropout_with_mask(x, mask);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  NodePtr nx = x.node();
  return finish("reshape", std::move(shape), nx->value, {&x}, [nx](const Node& o) {
    nx->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) nx->grad[i] += o.grad[i];
  });
}

Tensor transpose(const Tensor& x, const std::vector<std::int64_t>& perm) {
  const std::size_t r = x.shape().size();
  if (perm.size() != r) throw ShapeError("transpose: permutation rank mismatch for " + to_string(x.shape()));
  std::vector<bool> seen(r, false);
  for (auto p : perm) {
    if (p < 0 || static_cast<std::size_t>(p) >= r || seen[p]) throw ShapeError("transpose: invalid permutation");
    seen[p] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.shape()[perm[i]];
  // Strides of x re-ordered to walk the output in row-major order.
  std::vector<std::int64_t> in_strides(r);
  std::int64_t s = 1;
  for (std::size_t i = r; i-- > 0;) {
    in_strides[i] = s;
    s *= x.shape()[i];
  }
  std::vector<std::int64_t> walk(r);
  for (std::size_t i = 0; i < r; ++i) walk[i] = in_strides[perm[i]];
  const std::vector<std::int64_t> zeros(r, 0);
  const auto& v = x.node()->value;
  std::vector<double> out(v.size());
  for_each_broadcast(out_shape, walk, zeros,
                     [&](std::int64_t o, std::int64_t i, std::int64_t) { out[o] = v[i]; });
  NodePtr nx = x.node();
  return finish("transpose", out_shape, std::move(out), {&x}, [nx, out_shape, walk, zeros](const Node& o) {
    nx->ensure_grad();
    for_each_broadcast(out_shape, walk, zeros,
                       [&](std::int64_t k, std::int64_t i, std::int64_t) { nx->grad[i] += o.grad[k]; });
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::int64_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const std::int64_t ax = normalize_axis(axis, parts[0].rank(), "concat");
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    Shape a = p.shape(), b = parts[0].shape();
    if (a.size() != b.size()) throw ShapeError("concat: rank mismatch");
    a[ax] = b[ax] = 0;
    if (a != b) throw ShapeError("concat: incompatible shapes " + to_string(p.shape()) + " and " +
                                 to_string(parts[0].shape()));
    out_shape[ax] += p.dim(ax);
  }
  const AxisLayout lo = axis_layout(out_shape, ax);
  std::vector<double> out(static_cast<std::size_t>(numel(out_shape)));
  std::vector<NodePtr> nodes;
  std::vector<std::int64_t> widths;
  std::int64_t offset = 0;
  for (const auto& p : parts) {
    const std::int64_t w = p.dim(ax) * lo.inner;
    const auto& v = p.node()->value;
    for (std::int64_t o = 0; o < lo.outer; ++o) {
      std::copy_n(v.data() + o * w, w, out.data() + o * lo.len * lo.inner + offset);
    }
    offset += w;
    nodes.push_back(p.node());
    widths.push_back(w);
  }
  Tape* tape = t_active_tape;
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  auto node = new_node(out_shape, std::move(out));
  if (tape != nullptr && any) {
    node->requires_grad = true;
    tape->record("concat", node, [nodes, widths, lo](const Node& o) {
      std::int64_t off = 0;
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        const std::int64_t w = widths[k];
        if (nodes[k]->requires_grad) {
          nodes[k]->ensure_grad();
          for (std::int64_t a = 0; a < lo.outer; ++a) {
            const double* src = o.grad.data() + a * lo.len * lo.inner + off;
            double* dst = nodes[k]->grad.data() + a * w;
            for (std::int64_t i = 0; i < w; ++i) dst[i] += src[i];
          }
        }
        off += w;
      }
    });
  }
  return Tensor(node);
}

std::vector<Tensor> split(const Tensor& x, std::int64_t axis, const std::vector<std::int64_t>& sizes) {
  const std::int64_t ax = normalize_axis(axis, x.rank(), "split");
  const std::int64_t total = std::accumulate(sizes.begin(), sizes.end(), std::int64_t{0});
  if (total != x.dim(ax)) {
    throw ShapeError("split: sizes sum to " + std::to_string(total) + " but axis has " +
                     std::to_string(x.dim(ax)));
  }
  const AxisLayout l = axis_layout(x.shape(), ax);
  const auto& v = x.node()->value;
  NodePtr nx = x.node();
  std::vector<Tensor> out;
  std::int64_t offset = 0;
  for (auto size : sizes) {
    Shape s = x.shape();
    s[ax] = size;
    const std::int64_t w = size * l.inner;
    std::vector<double> piece(static_cast<std::size_t>(l.outer * w));
    for (std::int64_t o = 0; o < l.outer; ++o) {
      std::copy_n(v.data() + o * l.len * l.inner + offset, w, piece.data() + o * w);
    }
    out.push_back(finish("split", std::move(s), std::move(piece), {&x}, [nx, l, w, offset](const Node& o) {
      nx->ensure_grad();
      for (std::int64_t a = 0; a < l.outer; ++a) {
        double* dst = nx->grad.data() + a * l.len * l.inner + offset;
        const double* src = o.grad.data() + a * w;
        for (std::int64_t i = 0; i < w; ++i) dst[i] += src[i];
      }
    }));
    offset += w;
  }
  return out;
}

Tensor sum(const Tensor& x) {
  const auto& v = x.node()->value;
  double total = 0.0;
  for (double e : v) total += e;
  NodePtr nx = x.node();
  return finish("sum", {}, {total}, {&x}, [nx](const Node& o) {
    nx->ensure_grad();
    for (auto& g : nx->grad) g += o.grad[0];
  });
}

Tensor sum(const Tensor& x, std::int64_t axis, bool keepdim) {
  const std::int64_t ax = normalize_axis(axis, x.rank(), "sum");
  const AxisLayout l = axis_layout(x.shape(), ax);
  Shape out_shape = x.shape();
  if (keepdim) {
    out_shape[ax] = 1;
  } else {
    out_shape.erase(out_shape.begin() + ax);
  }
  const auto& v = x.node()->value;
  std::vector<double> out(static_cast<std::size_t>(l.outer * l.inner), 0.0);
  for (std::int64_t o = 0; o < l.outer; ++o) {
    for (std::int64_t j = 0; j < l.len; ++j) {
      const double* src = v.data() + (o * l.len + j) * l.inner;
      double* dst = out.data() + o * l.inner;
      for (std::int64_t i = 0; i < l.inner; ++i) dst[i] += src[i];
    }
  }
  NodePtr nx = x.node();
  return finish("sum_axis", std::move(out_shape), std::move(out), {&x}, [nx, l](const Node& o) {
    nx->ensure_grad();
    for (std::int64_t a = 0; a < l.outer; ++a) {
      for (std::int64_t j = 0; j < l.len; ++j) {
        double* dst = nx->grad.data() + (a * l.len + j) * l.inner;
        const double* src = o.grad.data() + a * l.inner;
        for (std::int64_t i = 0; i < l.inner; ++i) dst[i] += src[i];
      }
    }
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mean(const Tensor& x, std::int64_t axis, bool keepdim) {
  const double n = static_cast<double>(x.dim(axis));
  return scale(sum(x, axis, keepdim), 1.0 / n);
}

Tensor label_smoothed_ce(const Tensor& logits, std::span<const int> targets, double eps, int pad_id) {
  if (eps < 0.0 || eps >= 1.0) throw ContractError("label_smoothed_ce: eps must lie in [0, 1)");
  const std::int64_t vocab = logits.dim(-1);
  const std::int64_t rows = logits.numel() / vocab;
  if (static_cast<std::int64_t>(targets.size()) != rows) {
    throw ShapeError("label_smoothed_ce: " + std::to_string(targets.size()) + " targets for logits " +
                     to_string(logits.shape()));
  }
  const bool pad_in_vocab = pad_id >= 0 && pad_id < vocab;
  const auto& v = logits.node()->value;

  // Smoothing support excludes the true class and the pad class. Returns
  // (true-class mass, mass per supported off class).
  auto target_dist = [vocab, pad_in_vocab, pad_id, eps](int target) {
    std::int64_t support = vocab - 1;
    if (pad_in_vocab && pad_id != target) --support;
    if (support <= 0) return std::pair<double, double>{1.0, 0.0};
    return std::pair<double, double>{1.0 - eps, eps / static_cast<double>(support)};
  };

  std::vector<double> probs(v.size(), 0.0);
  std::int64_t count = 0;
  double total = 0.0;
  for (std::int64_t r = 0; r < rows; ++r) {
    const int t = targets[r];
    if (t == pad_id) continue;
    if (t < 0 || t >= vocab) {
      throw std::out_of_range("label_smoothed_ce: target " + std::to_string(t) + " outside [0, " +
                              std::to_string(vocab) + ")");
    }
    ++count;
    const double* row = v.data() + r * vocab;
    double mx = row[0];
    for (std::int64_t k = 1; k < vocab; ++k) mx = std::max(mx, row[k]);
    double z = 0.0;
    for (std::int64_t k = 0; k < vocab; ++k) z += std::exp(row[k] - mx);
    const double lse = mx + std::log(z);
    const auto [qt, qo] = target_dist(t);
    double loss = 0.0;
    for (std::int64_t k = 0; k < vocab; ++k) {
      const double logp = row[k] - lse;
      probs[r * vocab + k] = std::exp(logp);
      double q = k == t ? qt : qo;
      if (pad_in_vocab && k == pad_id) q = 0.0;
      if (q != 0.0) loss -= q * logp;
    }
    total += loss;
  }
  const double value = count > 0 ? total / static_cast<double>(count) : 0.0;
  NodePtr nl = logits.node();
  std::vector<int> tg(targets.begin(), targets.end());
  return finish("label_smoothed_ce", {}, {value}, {&logits},
                [nl, tg = std::move(tg), probs = std::move(probs), count, vocab, rows, pad_id,
                 pad_in_vocab, target_dist](const Node& o) {
                  nl->ensure_grad();
                  if (count == 0) return;
                  const double g = o.grad[0] / static_cast<double>(count);
                  for (std::int64_t r = 0; r < rows; ++r) {
                    const int t = tg[r];
                    if (t == pad_id) continue;
                    const auto [qt, qo] = target_dist(t);
                    double* dst = nl->grad.data() + r * vocab;
                    const double* p = probs.data() + r * vocab;
                    for (std::int64_t k = 0; k < vocab; ++k) {
                      double q = k == t ? qt : qo;
                      if (pad_in_vocab && k == pad_id) q = 0.0;
                      dst[k] += g * (p[k] - q);
                    }
                  }
                });
}

///////////////////////////////////////////
// Gradient checking
///////////////////////////////////////////

GradCheckReport grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& inputs, double h,
                           double tol, double abs_floor) {
  std::vector<Tensor> xs = inputs;
  std::vector<bool> saved_flags;
  for (auto& x : xs) {
    saved_flags.push_back(x.requires_grad());
    x.set_requires_grad(true);
    x.zero_grad();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor y = f();
    tape.backward(y);
  }
  std::vector<std::vector<double>> analytic;
  for (auto& x : xs) {
    analytic.emplace_back(x.has_grad() ? std::vector<double>(x.grad().begin(), x.grad().end())
                                       : std::vector<double>(static_cast<std::size_t>(x.numel()), 0.0));
    x.zero_grad();
  }

  GradCheckReport report;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    auto data = xs[t].mutable_data();
    for (std::int64_t i = 0; i < xs[t].numel(); ++i) {
      const double orig = data[i];
      const double up = orig + h, down = orig - h;
      data[i] = up;
      const double fp = f().item();
      data[i] = down;
      const double fm = f().item();
      data[i] = orig;
      const double numeric = (fp - fm) / (up - down);
      const double a = analytic[t][i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), abs_floor});
      ++report.checked;
      if (report.worst_index < 0 || rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_tensor = static_cast<std::int64_t>(t);
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  for (std::size_t t = 0; t < xs.size(); ++t) xs[t].set_requires_grad(saved_flags[t]);
  report.passed = report.max_rel_error < tol;
  return report;
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h,
                           double tol, double abs_floor) {
  return grad_check([&] { return f(x); }, std::vector<Tensor>{x}, h, tol, abs_floor);
}

}  // namespace symb
