#include "tamos/params.hpp"

#include <cmath>
#include <stdexcept>

namespace tamos {

ad::Var ParameterStore::add(std::string name, Matrix init) {
    if (index_.contains(name)) throw std::invalid_argument("duplicate parameter " + name);
    ad::Var var = ad::Var::parameter(std::move(init));
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), var});
    return var;
}

const ad::Var& ParameterStore::get(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw std::out_of_range("unknown parameter " + std::string(name));
    return entries_[it->second].var;
}

bool ParameterStore::contains(std::string_view name) const { return index_.contains(std::string(name)); }

std::size_t ParameterStore::scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += static_cast<std::size_t>(e.var.value().size());
    return n;
}

void ParameterStore::zero_grad() {
    for (auto& e : entries_) e.var.zero_grad();
}

double ParameterStore::grad_norm() const {
    double sq = 0.0;
    for (const auto& e : entries_) {
        if (e.var.grad().size() > 0) sq += e.var.grad().squaredNorm();
    }
    return std::sqrt(sq);
}

ParameterStore ParameterStore::clone() const {
    ParameterStore out;
    for (const auto& e : entries_) out.add(e.name, e.var.value());
    return out;
}

void ParameterStore::copy_values_from(const ParameterStore& other) {
    if (other.entries_.size() != entries_.size()) throw std::invalid_argument("parameter count mismatch");
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        const auto& src = other.entries_[i];
        auto& dst = entries_[i];
        if (src.name != dst.name || src.var.rows() != dst.var.rows() || src.var.cols() != dst.var.cols()) {
            throw std::invalid_argument("parameter layout mismatch at " + dst.name);
        }
        dst.var.mutable_value() = src.var.value();
    }
}

std::string_view submodule_of(std::string_view name) {
    const auto dot = name.find('.');
    return dot == std::string_view::npos ? name : name.substr(0, dot);
}

Matrix Initializer::normal(Eigen::Index rows, Eigen::Index cols, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng_);
    return m;
}

Matrix Initializer::fan_in(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in) {
    return normal(rows, cols, std::sqrt(1.0 / static_cast<double>(fan_in)));
}

}  // namespace tamos
