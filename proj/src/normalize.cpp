#include "fedaml/normalize.hpp"

#include <algorithm>
#include <limits>
#include <random>

#include "fedaml/error.hpp"

namespace fedaml {

std::string to_string(NormalizationStrategy s) {
  switch (s) {
    case NormalizationStrategy::kCountryLevel: return "country";
    case NormalizationStrategy::kGlobalLevel: return "global";
    case NormalizationStrategy::kFixedValue: return "fixed";
  }
  return "?";
}

NormalizationStrategy parse_normalization_strategy(const std::string& s) {
  if (s == "country") return NormalizationStrategy::kCountryLevel;
  if (s == "global") return NormalizationStrategy::kGlobalLevel;
  if (s == "fixed") return NormalizationStrategy::kFixedValue;
  throw UsageError("unknown normalization strategy '" + s + "' (country|global|fixed)");
}

double normalize_value(double x, double min, double max) {
  return std::clamp((x - min) / (max - min), 0.0, 1.0);
}

std::vector<double> normalize(std::span<const double> values, const NormalizationSpec& spec) {
  if (!(spec.max > spec.min)) {
    throw UsageError("degenerate normalization spec: max must exceed min");
  }
  std::vector<double> out;
  out.reserve(values.size());
  for (double v : values) out.push_back(normalize_value(v, spec.min, spec.max));
  return out;
}

namespace {

NormalizationSpec range_of(std::span<const double> values, NormalizationStrategy strategy) {
  NormalizationSpec spec;
  spec.strategy = strategy;
  if (values.empty()) return spec;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  spec.min = *lo;
  spec.max = *hi > *lo ? *hi : *lo + 1.0;
  return spec;
}

}  // namespace

std::map<std::string, NormalizationSpec> fit_normalization(
    NormalizationStrategy strategy,
    const std::map<std::string, std::vector<double>>& values_by_partition,
    std::optional<CountryCode> source, std::uint64_t seed) {
  std::map<std::string, NormalizationSpec> out;
  switch (strategy) {
    case NormalizationStrategy::kCountryLevel:
      for (const auto& [name, values] : values_by_partition) out[name] = range_of(values, strategy);
      break;
    case NormalizationStrategy::kGlobalLevel: {
      std::vector<double> pooled;
      for (const auto& [name, values] : values_by_partition)
        pooled.insert(pooled.end(), values.begin(), values.end());
      const NormalizationSpec spec = range_of(pooled, strategy);
      for (const auto& [name, values] : values_by_partition) out[name] = spec;
      break;
    }
    case NormalizationStrategy::kFixedValue: {
      if (values_by_partition.empty()) return out;
      if (!source) {
        std::mt19937_64 rng(seed);
        std::uniform_int_distribution<std::size_t> pick(0, values_by_partition.size() - 1);
        source = std::next(values_by_partition.begin(), static_cast<long>(pick(rng)))->first;
      }
      const auto it = values_by_partition.find(*source);
      if (it == values_by_partition.end()) {
        throw UsageError("fixed-value normalization source '" + *source + "' has no data");
      }
      NormalizationSpec spec = range_of(it->second, strategy);
      spec.source_country = *source;
      for (const auto& [name, values] : values_by_partition) out[name] = spec;
      break;
    }
  }
  return out;
}

}  // namespace fedaml
