#pragma once

#include "volnet/core.hpp"

#include <cmath>
#include <string>

namespace volnet {

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    Vector m;
    Vector v;
    std::size_t steps = 0;
};

/// One bias-corrected adaptive-moment step, in place.
inline void adam_step(Vector& params, const Vector& grad, AdamState& st, double step_size)
{
    if (grad.size() != params.size()) throw DataError("gradient size mismatch");
    if (!grad.allFinite()) throw NumericError("non-finite gradient");
    if (st.m.size() != params.size()) {
        st.m = Vector::Zero(params.size());
        st.v = Vector::Zero(params.size());
        st.steps = 0;
    }
    ++st.steps;
    st.m = st.beta1 * st.m + (1.0 - st.beta1) * grad;
    st.v = st.beta2 * st.v + (1.0 - st.beta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.steps));
    const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.steps));
    params.array() -= step_size * (st.m.array() / c1) / ((st.v.array() / c2).sqrt() + st.eps);
}

} // namespace volnet
