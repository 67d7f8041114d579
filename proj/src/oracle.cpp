#include "transtailor/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "transtailor/train.hpp"

namespace transtailor::oracle {

std::vector<double> loo_importance(const nn::ModelGraph& model, const data::Dataset& data,
                                   const nn::FilterVectors* factors) {
  const int total = model.total_filters();
  if (total > kMaxOracleFilters) {
    throw ContractError("loo_importance: model has " + std::to_string(total) +
                        " filters, oracle limit is " + std::to_string(kMaxOracleFilters));
  }
  auto mask = nn::ScalingFactors::filled(model, 1.0f, false);
  if (factors) {
    nn::check_factors_match(model, *factors);
    for (std::size_t l = 0; l < mask.layers.size(); ++l) {
      auto src = factors->layers[l].data();
      std::copy(src.begin(), src.end(), mask.layers[l].data().begin());
    }
  }
  const double base = factors ? mean_loss(model, data, &mask) : mean_loss(model, data);
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(total));
  for (auto& layer : mask.layers) {
    auto v = layer.data();
    for (std::size_t f = 0; f < v.size(); ++f) {
      const float kept = v[f];
      v[f] = 0.0f;
      out.push_back(mean_loss(model, data, &mask) - base);
      v[f] = kept;
    }
  }
  return out;
}

namespace {

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double rank_correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw ContractError("rank_correlation: needs two equal-length vectors of length >= 2");
  }
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return std::clamp(cov / std::sqrt(va * vb), -1.0, 1.0);
}

}  // namespace transtailor::oracle
