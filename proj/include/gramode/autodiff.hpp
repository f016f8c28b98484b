#pragma once

// Reverse-mode automatic differentiation on a dynamic tape.
//
// A Tape records one forward pass. Every op appends a node holding its output
// value and a backward closure; node ids are therefore a topological order.
// Tape::backward walks the nodes in reverse, accumulates gradients, writes
// parameter gradients into their Parameter, and frees the tape. A Tape is
// confined to one thread; independent tapes may run concurrently as long as
// they do not share Parameter objects.

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "gramode/tensor.hpp"

namespace gramode {

// A learnable tensor with its gradient buffer. grad always has value's shape.
struct Parameter {
  std::string path;
  Tensor value;
  Tensor grad;
};

// Owns every parameter of a model, addressable by unique path. Pointers and
// references to stored parameters stay valid for the store's lifetime.
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore&) = delete;
  ParamStore& operator=(const ParamStore&) = delete;

  Parameter& add(std::string path, Tensor init);
  Parameter& at(std::string_view path);
  const Parameter& at(std::string_view path) const;
  Parameter* find(std::string_view path);
  const Parameter* find(std::string_view path) const;

  // Insertion order, which is also the canonical checkpoint order.
  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  std::size_t size() const noexcept { return params_.size(); }
  std::size_t total_elements() const;

  void zero_grad();
  std::vector<Tensor> snapshot() const;
  void restore(const std::vector<Tensor>& values);

 private:
  std::deque<Parameter> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

class Tape;

// Handle to a value recorded on a tape. Cheap to copy. Using a Var after its
// tape has been cleared (or on a different tape) raises GraphError.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  std::size_t rank() const { return value().rank(); }
  bool requires_grad() const;
  Tape& tape() const;
  std::size_t id() const noexcept { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id, std::uint64_t gen) : tape_(tape), id_(id), gen_(gen) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
  std::uint64_t gen_ = 0;
};

class BackwardContext;
using BackwardFn = std::function<void(BackwardContext&)>;

class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Leaf bound to p; the same Parameter maps to one node per tape.
  Var param(Parameter& p);
  // Appends an op output. fn runs during backward only if some input needs a
  // gradient; inputs that need none get a null gradient slot.
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn);

  // Seeds d(loss)/d(loss) = 1, accumulates into Parameter::grad (without
  // zeroing it first) and frees the tape.
  void backward(const Var& loss);
  void clear();

  std::size_t size() const noexcept { return nodes_.size(); }
  bool owns(const Var& v) const noexcept { return v.tape_ == this && v.gen_ == generation_; }

 private:
  friend class Var;
  friend class BackwardContext;

  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool needs_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn fn;
    Parameter* param = nullptr;
  };

  const Node& node(const Var& v) const;
  Tensor& grad_slot(std::size_t id);

  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  std::uint64_t generation_;
};

class BackwardContext {
 public:
  const Tensor& grad() const { return *out_grad_; }
  const Tensor& output() const { return *out_value_; }
  const Tensor& input(std::size_t k) const;
  // Zero-initialised on first access; nullptr when input k needs no gradient.
  Tensor* input_grad(std::size_t k);

 private:
  friend class Tape;
  BackwardContext(Tape& tape, std::size_t id);

  Tape& tape_;
  const std::vector<std::size_t>& inputs_;
  const Tensor* out_grad_;
  const Tensor* out_value_;
};

}  // namespace gramode
