// Minimal reverse-mode differentiation over dense row-major Eigen matrices.
//
// A Tape records every operation applied to Var handles. Calling
// Tape::backward() on a 1x1 result walks the record in reverse and
// accumulates gradients, including into the Parameter objects that were
// bound with Tape::parameter(). A Tape constructed with recording == false
// only evaluates values, which is what inference uses.
#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace bit {

template <typename S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Index = Eigen::Index;

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace ad {

template <typename S>
struct Parameter {
  std::string name;
  Matrix<S> value;
  Matrix<S> grad;

  Index size() const { return value.size(); }
};

// Owns every learnable tensor of a model. Addresses are stable for the
// lifetime of the store, so modules keep raw pointers into it.
template <typename S>
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  Parameter<S>& add(const std::string& name, Matrix<S> init) {
    if (index_.count(name) != 0) {
      throw std::logic_error("duplicate parameter name: " + name);
    }
    index_.emplace(name, params_.size());
    Parameter<S>& p = params_.emplace_back();
    p.name = name;
    p.grad = Matrix<S>::Zero(init.rows(), init.cols());
    p.value = std::move(init);
    return p;
  }

  Parameter<S>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
  }

  Parameter<S>& at(const std::string& name) {
    Parameter<S>* p = find(name);
    if (p == nullptr) throw std::out_of_range("unknown parameter: " + name);
    return *p;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.size());
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero();
  }

  std::deque<Parameter<S>>& parameters() { return params_; }
  const std::deque<Parameter<S>>& parameters() const { return params_; }

 private:
  std::deque<Parameter<S>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// One entry per recorded node; used to audit intermediate sizes.
struct ShapeRecord {
  std::string op;
  std::string scope;
  Index rows = 0;
  Index cols = 0;
};

template <typename S>
class Tape;

template <typename S>
class Var {
 public:
  Var() = default;

  const Matrix<S>& value() const { return tape_->value(*this); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Tape<S>& tape() const { return *tape_; }
  std::int32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape<S>;
  Var(Tape<S>* tape, std::int32_t id) : tape_(tape), id_(id) {}

  Tape<S>* tape_ = nullptr;
  std::int32_t id_ = -1;
};

template <typename S>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix<S>&)>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  Var<S> constant(Matrix<S> value) { return push("constant", std::move(value), false, nullptr, {}); }

  Var<S> parameter(Parameter<S>& p) { return push("parameter", p.value, recording_, &p, {}); }

  Var<S> record(const char* op, Matrix<S> value, std::initializer_list<Var<S>> inputs,
                Backward backward) {
    return record(op, std::move(value), std::vector<Var<S>>(inputs), std::move(backward));
  }

  Var<S> record(const char* op, Matrix<S> value, const std::vector<Var<S>>& inputs,
                Backward backward) {
    bool needs = false;
    if (recording_) {
      for (const auto& v : inputs) needs = needs || nodes_[v.id_].needs_grad;
    }
    return push(op, std::move(value), needs, nullptr, needs ? std::move(backward) : Backward{});
  }

  bool needs_grad(Var<S> v) const { return nodes_[v.id_].needs_grad; }
  const Matrix<S>& value(Var<S> v) const { return nodes_[v.id_].value; }

  template <typename E>
  void accumulate(Var<S> v, const E& g) {
    Node& n = nodes_[v.id_];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  // Zero-initialised gradient buffer for scatter-style backward passes.
  Matrix<S>& grad_buffer(Var<S> v) {
    Node& n = nodes_[v.id_];
    if (n.grad.size() == 0) n.grad = Matrix<S>::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void backward(Var<S> root) {
    if (!recording_) throw std::logic_error("backward() on a non-recording tape");
    Node& r = nodes_[root.id_];
    if (r.value.size() != 1) throw std::logic_error("backward() needs a scalar root");
    if (!r.needs_grad) return;
    r.grad = Matrix<S>::Ones(1, 1);
    for (auto i = static_cast<std::int64_t>(root.id_); i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, n.grad);
      if (n.param != nullptr) n.param->grad += n.grad;
      if (i != root.id_) Matrix<S>().swap(n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

  void set_probe(std::vector<ShapeRecord>* probe) { probe_ = probe; }

  // Names the enclosing module in ShapeRecord entries.
  class Scope {
   public:
    Scope(Tape& t, std::string name) : tape_(t), saved_(std::move(t.scope_)) {
      tape_.scope_ = std::move(name);
    }
    ~Scope() { tape_.scope_ = std::move(saved_); }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape& tape_;
    std::string saved_;
  };

 private:
  struct Node {
    Matrix<S> value;
    Matrix<S> grad;
    Backward backward;
    Parameter<S>* param = nullptr;
    bool needs_grad = false;
  };

  Var<S> push(const char* op, Matrix<S> value, bool needs, Parameter<S>* param, Backward backward) {
    if (probe_ != nullptr) probe_->push_back({op, scope_, value.rows(), value.cols()});
    Node& n = nodes_.emplace_back();
    n.value = std::move(value);
    n.needs_grad = needs;
    n.param = param;
    n.backward = std::move(backward);
    return Var<S>(this, static_cast<std::int32_t>(nodes_.size() - 1));
  }

  bool recording_;
  std::deque<Node> nodes_;
  std::vector<ShapeRecord>* probe_ = nullptr;
  std::string scope_;
};

}  // namespace ad
}  // namespace bit
