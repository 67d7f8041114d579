#pragma once

#include <span>
#include <vector>

#include "transtailor/data/dataset.hpp"
#include "transtailor/nn/model.hpp"

namespace transtailor::oracle {

inline constexpr int kMaxOracleFilters = 512;

// Exact leave-one-out importance: for every conv filter (conv order, then
// filter order), L(data; filter's factor = 0) - L(data; model). Signed: a
// negative value means removing the filter lowers the loss. With `factors`,
// the network evaluated is the factor-scaled one and ablation zeroes the
// filter's factor.
std::vector<double> loo_importance(const nn::ModelGraph& model, const data::Dataset& data,
                                   const nn::FilterVectors* factors = nullptr);

// Spearman rank correlation with average ranks for ties. Returns 0 when
// either input is constant.
double rank_correlation(std::span<const double> a, std::span<const double> b);

}  // namespace transtailor::oracle
