#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedaml/records.hpp"

namespace fedaml {

enum class NormalizationStrategy {
  kCountryLevel,  // each partition scales with its own min/max
  kGlobalLevel,   // pooled min/max over every partition
  kFixedValue,    // one partition's min/max, shared as constants with all
};

std::string to_string(NormalizationStrategy s);
NormalizationStrategy parse_normalization_strategy(const std::string& s);

struct NormalizationSpec {
  NormalizationStrategy strategy = NormalizationStrategy::kGlobalLevel;
  double min = 0.0;
  double max = 1.0;
  std::optional<CountryCode> source_country;
};

// (x - min) / (max - min), clamped to [0, 1].
double normalize_value(double x, double min, double max);

// Elementwise min-max scaling with the constants in `spec`. Throws UsageError
// when max <= min.
std::vector<double> normalize(std::span<const double> values, const NormalizationSpec& spec);

// Resolves one concrete spec per partition from the raw values each
// partition holds. For the fixed-value strategy the source partition is
// `source` when given, otherwise drawn with `seed`. A partition whose values
// are all equal gets a unit-width range starting at that value.
std::map<std::string, NormalizationSpec> fit_normalization(
    NormalizationStrategy strategy,
    const std::map<std::string, std::vector<double>>& values_by_partition,
    std::optional<CountryCode> source = std::nullopt, std::uint64_t seed = 0);

}  // namespace fedaml
