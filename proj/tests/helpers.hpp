#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedaml/records.hpp"

namespace testing_util {

inline fedaml::TransactionRecord rec(const std::string& from_bank, const std::string& from,
                                     const std::string& to_bank, const std::string& to,
                                     double amount = 100.0, int label = 0, std::int64_t ts = 0,
                                     const std::string& payment = "Wire") {
  return fedaml::TransactionRecord{ts, from_bank, from, to_bank, to, amount, payment, label};
}

}  // namespace testing_util
