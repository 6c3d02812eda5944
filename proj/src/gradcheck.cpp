#include "readi/gradcheck.hpp"

#include <cmath>

#include <fmt/format.h>

#include "readi/autograd.hpp"
#include "readi/common.hpp"

namespace readi {

GradcheckReport gradcheck(const std::function<Tensor()>& loss_fn,
                          const std::vector<Tensor>& params,
                          const GradcheckConfig& cfg) {
    for (const Tensor& p : params) {
        if (!p.requires_grad()) throw ContractError("gradcheck: param without requires_grad");
    }
    std::vector<std::vector<float>> analytic;
    {
        for (const Tensor& p : params) const_cast<Tensor&>(p).zero_grad();
        Tape tape;
        Tensor loss = loss_fn();
        tape.backward(loss);
        for (const Tensor& p : params) {
            analytic.push_back(p.has_grad() ? p.grad()
                                            : std::vector<float>(p.size(), 0.0f));
        }
        for (const Tensor& p : params) const_cast<Tensor&>(p).zero_grad();
    }

    GradcheckReport rep;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor p = params[pi];
        float* w = p.data();
        for (std::size_t j = 0; j < p.size(); ++j) {
            const float theta = w[j];
            w[j] = theta + cfg.h;
            const double lp = loss_fn().item_hi();
            w[j] = theta - cfg.h;
            const double lm = loss_fn().item_hi();
            w[j] = theta;
            const double fd = (lp - lm) / (2.0 * static_cast<double>(cfg.h));
            const double ad = static_cast<double>(analytic[pi][j]);
            const double diff = std::abs(ad - fd);
            const double scale = std::max(std::abs(ad), std::abs(fd));
            const double limit = std::max(cfg.abs_floor, cfg.rel_tol * scale);
            ++rep.checked;
            const double rel = scale > 0.0 ? diff / scale : 0.0;
            if (rel > rep.worst_rel || (diff > limit && diff > rep.worst_abs)) {
                rep.worst_rel = std::max(rep.worst_rel, rel);
                rep.worst_abs = std::max(rep.worst_abs, diff);
                rep.worst_where = fmt::format("param {} elem {} ad {} fd {}", pi, j, ad, fd);
            }
            if (diff > limit) rep.ok = false;
        }
    }
    return rep;
}

} // namespace readi
