#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "hsml/episode.hpp"
#include "hsml/model.hpp"

namespace hsml {

struct PropertyResult {
    std::string name;
    bool passed = false;
    double max_error = 0.0; // worst discrepancy, or for witnesses the largest change found
    double tolerance = 0.0;
    std::size_t trials = 0;
    double seconds = 0.0;
    std::string detail;
};

struct SelftestOptions {
    std::size_t trials = 100;  // per equivariance property; other suites scale from it
    bool use_double = false;   // equivariance suites in double with tighter tolerances
    std::uint64_t seed = 20240601;
};

// Individual suites. Each returns one or more named properties.
std::vector<PropertyResult> check_attention_equivariance(std::size_t trials, bool use_double, std::uint64_t seed);
PropertyResult check_attention_rows(std::size_t trials, std::uint64_t seed);
PropertyResult check_standard_attention(std::size_t cases, std::uint64_t seed);
PropertyResult check_expanded_oracle(std::size_t episodes, std::uint64_t seed);
std::vector<PropertyResult> check_gp_oracle(std::size_t cases, std::uint64_t seed);
std::vector<PropertyResult> check_model_equivariance(std::size_t episodes, bool use_double, std::uint64_t seed);
std::vector<PropertyResult> check_model_gradients(std::uint64_t seed);

/// Every suite above.
std::vector<PropertyResult> run_selftest(const SelftestOptions& opts);

/// Random classification episode, every class with at least one labeled
/// example. Values are uniform in [0, 1).
Episode random_episode(std::mt19937_64& rng, std::size_t max_labeled, std::size_t max_unlabeled,
                       std::size_t max_attributes, std::size_t max_classes);

template <typename T>
Tensor<T> random_tensor(const Shape& shape, std::mt19937_64& rng, double scale = 1.0);

/// Central finite-difference check of every parameter group of a double
/// model: per parameter group, the largest elementwise relative error with
/// an absolute floor of 1e-7.
std::vector<std::pair<std::string, double>> finite_difference_errors(const Episode& ep, const ModelParams<double>& params,
                                                                     double h = 1e-5);

} // namespace hsml
