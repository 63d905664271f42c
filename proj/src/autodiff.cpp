#include "ptn/autodiff.hpp"

#include <algorithm>

namespace ptn {

template <typename T>
bool Tape<T>::wants(std::initializer_list<const Var<T>*> inputs) const {
  if (!recording_) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Var<T>* v) { return v && v->requires_grad(); });
}

template <typename T>
bool Tape<T>::record(std::string op, std::vector<Var<T>> inputs, Var<T>& output, std::function<void()> backward) {
  if (!recording_) return false;
  const bool needed = std::any_of(inputs.begin(), inputs.end(), [](const Var<T>& v) { return v.requires_grad(); });
  if (!needed) return false;
  output.set_requires_grad(true);
  records_.push_back(Record{std::move(op), std::move(inputs), output, std::move(backward)});
  return true;
}

template <typename T>
void backward(const Var<T>& loss, Tape<T>& tape) {
  if (!loss) throw ArgumentError("backward: null loss");
  if (loss.value().size() != 1) {
    throw ArgumentError("backward: loss must be a scalar, got shape " + shape_string(loss.shape()));
  }
  const auto& records = tape.records();
  const bool on_tape = std::any_of(records.begin(), records.end(),
                                   [&](const auto& r) { return r.output.node() == loss.node(); });
  if (!on_tape && !loss.requires_grad()) throw ArgumentError("backward: loss is not on the tape");

  Var<T> seed = loss;
  seed.grad_buffer()[0] += T(1);
  for (auto it = records.rbegin(); it != records.rend(); ++it) {
    if (!it->output.has_grad()) continue;
    it->backward();
  }
}

template class Tape<float>;
template class Tape<double>;
template void backward(const Var<float>&, Tape<float>&);
template void backward(const Var<double>&, Tape<double>&);

}  // namespace ptn
