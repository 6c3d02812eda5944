#pragma once

#include <functional>
#include <string>
#include <vector>

#include "readi/tensor.hpp"

namespace readi {

struct GradcheckConfig {
    float h = 1e-3f;        // central-difference step
    double rel_tol = 1e-4;
    double abs_floor = 1e-6;
};

struct GradcheckReport {
    bool ok = true;
    std::size_t checked = 0;
    double worst_rel = 0.0; // |ad-fd| / max(|ad|,|fd|) at the worst element
    double worst_abs = 0.0;
    std::string worst_where;
};

// Central-difference check of reverse-mode gradients. loss_fn must rebuild the
// scalar loss from the current contents of params (it is re-evaluated with
// perturbed entries, outside any tape). Every param must have requires_grad
// set. Element passes when |ad-fd| <= max(abs_floor, rel_tol*max(|ad|,|fd|)).
GradcheckReport gradcheck(const std::function<Tensor()>& loss_fn,
                          const std::vector<Tensor>& params,
                          const GradcheckConfig& cfg = {});

} // namespace readi
