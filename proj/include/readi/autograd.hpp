#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "readi/tensor.hpp"

namespace readi {

// Reverse-mode tape. One tape per training thread, active for the scope of a
// single forward/backward pass:
//
//   Tape tape;
//   Tensor loss = ...;     // ops record onto the active tape
//   tape.backward(loss);   // fills .grad on every reachable requires_grad leaf
//
// Ops record a node only when an input is a requires_grad leaf or was itself
// produced on the active tape, so inference outside a Tape scope costs
// nothing. Node ids are globally monotone, which lets on_tape() distinguish
// tensors produced under this tape from stale marks left by earlier tapes.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active();

    bool on_tape(const TensorImpl* t) const {
        return t != nullptr && t->tape_mark >= start_id_;
    }

    // fn reads output->grad and accumulates into the inputs' grads
    void record(const std::shared_ptr<TensorImpl>& output, std::function<void()> fn);

    // single use: walks nodes in reverse, freeing intermediate grads as it goes
    void backward(const Tensor& loss);

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        std::shared_ptr<TensorImpl> out;
        std::function<void()> fn;
    };
    std::vector<Node> nodes_;
    std::uint64_t start_id_;
};

// convenience: Tape::active()->backward(loss), throws without an active tape
void backward(const Tensor& loss);

// true when t should take part in gradient recording right now
bool needs_grad(const Tensor& t);

// grad buffer of t, allocated as zeros on first use
std::vector<float>& grad_of(const std::shared_ptr<TensorImpl>& t);

} // namespace readi
