#include "readi/autograd.hpp"

#include <atomic>

#include "readi/common.hpp"

namespace readi {

namespace {
std::atomic<std::uint64_t> g_next_node_id{1};
thread_local Tape* g_active_tape = nullptr;
} // namespace

Tape::Tape() : start_id_(g_next_node_id.load(std::memory_order_relaxed)) {
    if (g_active_tape) throw ContractError("nested tapes are not supported");
    g_active_tape = this;
}

Tape::~Tape() { g_active_tape = nullptr; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(const std::shared_ptr<TensorImpl>& output, std::function<void()> fn) {
    output->tape_mark = g_next_node_id.fetch_add(1, std::memory_order_relaxed);
    nodes_.push_back(Node{output, std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw ContractError("backward requires a defined scalar loss");
    }
    if (!on_tape(loss.impl())) {
        throw ContractError("loss was not produced on the active tape");
    }
    grad_of(loss.handle())[0] += 1.0f;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        TensorImpl* out = it->out.get();
        if (!out->grad) continue; // unreachable from the loss
        it->fn();
        if (!out->requires_grad) out->grad.reset();
    }
    nodes_.clear();
}

void backward(const Tensor& loss) {
    Tape* t = Tape::active();
    if (!t) throw ContractError("backward called without an active tape");
    t->backward(loss);
}

bool needs_grad(const Tensor& t) {
    if (!t.defined()) return false;
    Tape* tp = Tape::active();
    if (!tp) return false;
    return t.impl()->requires_grad || tp->on_tape(t.impl());
}

std::vector<float>& grad_of(const std::shared_ptr<TensorImpl>& t) {
    if (!t->grad) t->grad.emplace(t->data.size(), 0.0f);
    return *t->grad;
}

} // namespace readi
