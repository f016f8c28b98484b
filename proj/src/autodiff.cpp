#include "gramode/autodiff.hpp"

#include <atomic>

#include "gramode/errors.hpp"

namespace gramode {
namespace {

std::uint64_t next_generation() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

}  // namespace

Parameter& ParamStore::add(std::string path, Tensor init) {
  if (index_.contains(path)) throw ContractError("duplicate parameter path '" + path + "'");
  index_.emplace(path, params_.size());
  Tensor grad(init.shape(), 0.0);
  params_.push_back(Parameter{std::move(path), std::move(init), std::move(grad)});
  return params_.back();
}

Parameter* ParamStore::find(std::string_view path) {
  auto it = index_.find(path);
  return it == index_.end() ? nullptr : &params_[it->second];
}

const Parameter* ParamStore::find(std::string_view path) const {
  auto it = index_.find(path);
  return it == index_.end() ? nullptr : &params_[it->second];
}

Parameter& ParamStore::at(std::string_view path) {
  if (auto* p = find(path)) return *p;
  throw InputError("unknown parameter path '" + std::string(path) + "'");
}

const Parameter& ParamStore::at(std::string_view path) const {
  if (const auto* p = find(path)) return *p;
  throw InputError("unknown parameter path '" + std::string(path) + "'");
}

std::vector<Parameter*> ParamStore::all() {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::vector<const Parameter*> ParamStore::all() const {
  std::vector<const Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(&p);
  return out;
}

std::size_t ParamStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) std::fill(p.grad.data().begin(), p.grad.data().end(), 0.0);
}

std::vector<Tensor> ParamStore::snapshot() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.value);
  return out;
}

void ParamStore::restore(const std::vector<Tensor>& values) {
  if (values.size() != params_.size()) throw ContractError("restore: snapshot size mismatch");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].shape() != params_[i].value.shape()) {
      throw DimensionError("restore: shape mismatch for '" + params_[i].path + "'");
    }
    params_[i].value = values[i];
  }
}

// ---------------------------------------------------------------------------

const Tensor& Var::value() const { return tape().node(*this).value; }

bool Var::requires_grad() const { return tape().node(*this).needs_grad; }

Tape& Var::tape() const {
  if (tape_ == nullptr) throw GraphError("value was never recorded on a tape");
  return *tape_;
}

Tape::Tape() : generation_(next_generation()) {}

const Tape::Node& Tape::node(const Var& v) const {
  if (!owns(v) || v.id_ >= nodes_.size()) {
    throw GraphError("value is not recorded on this tape (tape cleared or foreign value)");
  }
  return nodes_[v.id_];
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1, generation_);
}

Var Tape::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second, generation_);
  Node n;
  n.value = p.value;
  n.needs_grad = true;
  n.param = &p;
  nodes_.push_back(std::move(n));
  param_nodes_.emplace(&p, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1, generation_);
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    const Node& src = node(in);
    n.inputs.push_back(in.id_);
    n.needs_grad = n.needs_grad || src.needs_grad;
  }
  if (n.needs_grad) n.fn = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1, generation_);
}

Tensor& Tape::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape(), 0.0);
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(const Var& loss) {
  const Node& root = node(loss);
  if (root.value.size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(root.value.shape()));
  }
  if (!root.needs_grad) {
    clear();
    return;
  }
  grad_slot(loss.id_)[0] = 1.0;
  for (std::size_t id = loss.id_ + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.has_grad) continue;
    if (n.param != nullptr) {
      auto& g = n.param->grad;
      if (g.shape() != n.value.shape()) g = Tensor(n.value.shape(), 0.0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    } else if (n.fn) {
      BackwardContext ctx(*this, id);
      n.fn(ctx);
    }
    // Nothing upstream reads this node again.
    n.grad = Tensor();
    n.value = Tensor();
    n.has_grad = false;
    n.fn = nullptr;
  }
  clear();
}

void Tape::clear() {
  nodes_.clear();
  param_nodes_.clear();
  generation_ = next_generation();
}

BackwardContext::BackwardContext(Tape& tape, std::size_t id)
    : tape_(tape),
      inputs_(tape.nodes_[id].inputs),
      out_grad_(&tape.nodes_[id].grad),
      out_value_(&tape.nodes_[id].value) {}

const Tensor& BackwardContext::input(std::size_t k) const { return tape_.nodes_[inputs_.at(k)].value; }

Tensor* BackwardContext::input_grad(std::size_t k) {
  const std::size_t id = inputs_.at(k);
  if (!tape_.nodes_[id].needs_grad) return nullptr;
  return &tape_.grad_slot(id);
}

}  // namespace gramode
