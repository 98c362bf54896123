#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "polygraph/params.hpp"

namespace polygraph {

/// Central finite-difference gradient of a scalar function of the store,
/// (f(p + eps) - f(p - eps)) / 2eps per coordinate of every non-frozen
/// parameter. This is the independent oracle for compute_gradients: it only
/// ever runs forward evaluations.
inline GradientMap finite_diff_gradient(const std::function<double(const ParameterStore&)>& f,
                                        const ParameterStore& params, double eps) {
    if (!(eps > 0.0)) throw ConfigError("finite_diff_gradient: eps must be positive");
    ParameterStore work = params;
    GradientMap out;
    for (auto& e : work.entries()) {
        if (e.frozen) continue;
        Tensor grad(e.tensor.shape());
        for (std::int64_t i = 0; i < e.tensor.size(); ++i) {
            double saved = e.tensor[i];
            e.tensor[i] = saved + eps;
            double hi = f(work);
            e.tensor[i] = saved - eps;
            double lo = f(work);
            e.tensor[i] = saved;
            grad[i] = (hi - lo) / (2.0 * eps);
        }
        out.emplace(e.name, std::move(grad));
    }
    return out;
}

/// Largest elementwise relative error between two gradient maps, using
/// |a - b| / max(|a|, |b|, 1e-6) so near-zero gradients compare absolutely.
inline double max_rel_error(const GradientMap& a, const GradientMap& b) {
    if (a.size() != b.size()) throw ShapeError("gradient maps have different key sets");
    double worst = 0.0;
    for (const auto& [name, ga] : a) {
        auto it = b.find(name);
        if (it == b.end()) throw ShapeError("gradient map missing key: " + name);
        const Tensor& gb = it->second;
        if (!ga.same_shape(gb)) throw ShapeError("gradient shape mismatch for " + name);
        for (std::int64_t i = 0; i < ga.size(); ++i) {
            double denom = std::max({std::abs(ga[i]), std::abs(gb[i]), 1e-6});
            worst = std::max(worst, std::abs(ga[i] - gb[i]) / denom);
        }
    }
    return worst;
}

}  // namespace polygraph
