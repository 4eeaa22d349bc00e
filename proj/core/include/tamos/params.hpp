#pragma once

#include "tamos/autodiff.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace tamos {

/// Ordered collection of named trainable matrices. Names are dotted paths;
/// the first component names the submodule ("backbone", "pool", ...).
class ParameterStore {
public:
    struct Entry {
        std::string name;
        ad::Var var;
    };

    ad::Var add(std::string name, Matrix init);
    [[nodiscard]] const ad::Var& get(std::string_view name) const;
    [[nodiscard]] bool contains(std::string_view name) const;

    [[nodiscard]] const std::vector<Entry>& entries() const { return entries_; }
    [[nodiscard]] std::size_t scalar_count() const;

    void zero_grad();
    [[nodiscard]] double grad_norm() const;

    /// Independent copy of all values (gradients are not copied).
    [[nodiscard]] ParameterStore clone() const;
    /// Overwrites values from a store with identical names and shapes.
    void copy_values_from(const ParameterStore& other);

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

std::string_view submodule_of(std::string_view name);

/// Deterministic initialisers.
class Initializer {
public:
    explicit Initializer(std::uint64_t seed) : rng_(seed) {}
    Matrix normal(Eigen::Index rows, Eigen::Index cols, double stddev);
    /// He-style normal for a layer with `fan_in` inputs.
    Matrix fan_in(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in);
    static Matrix zeros(Eigen::Index rows, Eigen::Index cols) { return Matrix::Zero(rows, cols); }
    static Matrix ones(Eigen::Index rows, Eigen::Index cols) { return Matrix::Ones(rows, cols); }

private:
    std::mt19937_64 rng_;
};

}  // namespace tamos
