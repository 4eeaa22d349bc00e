#pragma once

#include "tamos/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace gradcheck {

using tamos::Matrix;
namespace ad = tamos::ad;

// Worst relative error between reverse-mode and central differences over
// every entry of every input. The scalar is f(inputs) . w for a fixed
// random w so that all outputs contribute. Gradients below `floor` are
// compared in absolute terms, where central differences only carry
// rounding noise.
inline double max_error(const std::function<ad::Var(std::vector<ad::Var>&)>& f, std::vector<Matrix> values,
                        double eps = 1e-6, std::uint64_t seed = 1, double floor = 1e-3) {
    std::vector<ad::Var> inputs;
    for (auto& v : values) inputs.push_back(ad::Var::parameter(v));
    ad::Var out = f(inputs);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix w(out.rows(), out.cols());
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = n(rng);
    const auto reduce = [&](const ad::Var& o) { return ad::sum(ad::mul(o, ad::Var::constant(w))); };
    ad::backward(reduce(out));

    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        const Matrix analytic = inputs[k].grad().size() ? inputs[k].grad() : Matrix::Zero(values[k].rows(), values[k].cols());
        for (Eigen::Index i = 0; i < values[k].size(); ++i) {
            auto eval = [&](double delta) {
                std::vector<ad::Var> probe;
                for (std::size_t j = 0; j < values.size(); ++j) {
                    Matrix v = values[j];
                    if (j == k) v.data()[i] += delta;
                    probe.push_back(ad::Var::constant(v));
                }
                return reduce(f(probe)).scalar();
            };
            const double numeric = (eval(eps) - eval(-eps)) / (2 * eps);
            const double a = analytic.data()[i];
            worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor}));
        }
    }
    return worst;
}

inline Matrix random(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

}  // namespace gradcheck
