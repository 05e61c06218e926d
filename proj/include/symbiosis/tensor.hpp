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

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace symb {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

///////////////////////////////////////////
// Precision
///////////////////////////////////////////

// All arithmetic runs in 64-bit. In Float32 mode every value written into
// parameter storage (initialization, optimizer updates, checkpoint loads) is
// rounded to the nearest 32-bit float, so parameters are exactly
// representable in the 32-bit checkpoint payload. Float64 mode keeps full
// precision and is what the gradient checks run under.
enum class Precision { kFloat32, kFloat64 };

Precision precision();
void set_precision(Precision p);
double store_value(double v);

class PrecisionScope {
 public:
  explicit PrecisionScope(Precision p);
  ~PrecisionScope();
  PrecisionScope(const PrecisionScope&) = delete;
  PrecisionScope& operator=(const PrecisionScope&) = delete;

 private:
  Precision saved_;
};

///////////////////////////////////////////
// Random numbers
///////////////////////////////////////////

// Seeded generator with platform-independent derived distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  double uniform();                                   // [0, 1)
  double normal();                                    // N(0, 1)
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);  // inclusive

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::int64_t i = static_cast<std::int64_t>(v.size()) - 1; i > 0; --i) {
      std::swap(v[i], v[uniform_int(0, i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a gradient arrives
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

///////////////////////////////////////////
// Tensor
///////////////////////////////////////////

// Handle to a dense row-major array. Copies of a Tensor alias the same
// storage; storage_id() identifies it.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t rank() const { return static_cast<std::int64_t>(node_->shape.size()); }
  std::int64_t dim(std::int64_t axis) const;
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }

  std::span<const double> data() const { return node_->value; }
  // Writable view for parameter updates; never mutate a tensor that an
  // un-cleared tape has consumed.
  std::span<double> mutable_data() { return node_->value; }
  double item() const;
  double operator[](std::int64_t i) const { return node_->value[static_cast<std::size_t>(i)]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad();
  void zero_grad() { node_->grad.clear(); }

  const void* storage_id() const { return node_.get(); }
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  // New storage with the same values; keeps requires_grad, drops grad.
  Tensor clone() const;
  // New storage with the same values, no gradient tracking.
  Tensor detach() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

///////////////////////////////////////////
// Tape
///////////////////////////////////////////

// Ordered record of primitive applications. Operations are recorded on the
// thread's active tape when at least one input requires a gradient.
class Tape {
 public:
  using BackwardFn = std::function<void(const detail::Node& out)>;

  struct Entry {
    const char* op;
    std::shared_ptr<detail::Node> out;
    BackwardFn backward;
  };

  void record(const char* op, std::shared_ptr<detail::Node> out, BackwardFn fn);

  // Seeds d(loss)/d(loss) = 1 and walks the entries in reverse recording
  // order. Leaf gradients accumulate across calls; intermediate gradients are
  // reset at the start of every call.
  void backward(const Tensor& loss);

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  void clear() { entries_.clear(); }

 private:
  std::vector<Entry> entries_;
};

Tape* active_tape();

// Makes `tape` the active tape of this thread for the scope's lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* saved_;
};

// Runs backward on the active tape.
void backward(const Tensor& loss);

///////////////////////////////////////////
// Primitives
///////////////////////////////////////////

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);       // numpy-style broadcasting
Tensor multiply(const Tensor& a, const Tensor& b);  // numpy-style broadcasting
Tensor scale(const Tensor& x, double c);
Tensor relu(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor softmax(const Tensor& x, std::int64_t axis = -1);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);
Tensor embedding(const Tensor& table, std::span<const int> ids, const Shape& ids_shape);
// Inverted dropout: kept entries are scaled by 1/(1-p). p == 0 is identity.
Tensor dropout(const Tensor& x, double p, Rng& rng);
Tensor dropout_with_mask(const Tensor& x, std::span<const double> mask);
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x, const std::vector<std::int64_t>& perm);
Tensor concat(const std::vector<Tensor>& parts, std::int64_t axis);
std::vector<Tensor> split(const Tensor& x, std::int64_t axis, const std::vector<std::int64_t>& sizes);
Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, std::int64_t axis, bool keepdim = false);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, std::int64_t axis, bool keepdim = false);

// Mean over non-pad rows of -sum_k q(k) log softmax(logits)_k, where the true
// class gets 1 - eps and eps is spread evenly over the remaining classes
// (the pad class is excluded when pad_id is a valid class id). Pad rows
// contribute zero loss and zero gradient; an all-pad input gives 0.
Tensor label_smoothed_ce(const Tensor& logits, std::span<const int> targets, double eps, int pad_id);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return multiply(a, b); }
inline Tensor operator-(const Tensor& a) { return scale(a, -1.0); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return add(a, scale(b, -1.0)); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }

///////////////////////////////////////////
// Gradient checking
///////////////////////////////////////////

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::int64_t worst_tensor = -1;
  std::int64_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::int64_t checked = 0;
  bool passed = true;
};

// Relative error is |a - n| / max(|a|, |n|, abs_floor). The central
// difference divides by the realized step (x+h) - (x-h).
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                           double h = 1e-5, double tol = 1e-4, double abs_floor = 1e-6);

// Checks every coordinate of every tensor in `inputs`; f reads them by
// capture. Inputs are perturbed in place and restored.
GradCheckReport grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& inputs,
                           double h = 1e-5, double tol = 1e-4, double abs_floor = 1e-6);

}  // namespace symb
