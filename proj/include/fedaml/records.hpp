#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace fedaml {

using CountryCode = std::string;

// One row of the transaction table. The bank fields carry the country code
// of the institution holding the account.
struct TransactionRecord {
  std::int64_t timestamp = 0;
  CountryCode from_bank;
  std::string from_account;
  CountryCode to_bank;
  std::string to_account;
  double amount = 0.0;
  std::string payment_type;
  int is_laundering = 0;

  bool cross_border() const { return from_bank != to_bank; }

  friend bool operator==(const TransactionRecord&, const TransactionRecord&) = default;
};

// Globally unique account key: "<bank>:<account>".
std::string account_key(const CountryCode& bank, const std::string& account);
// Country part of an account key.
CountryCode account_country(const std::string& key);

inline constexpr const char* kCsvColumns[] = {
    "timestamp", "from_bank",  "from_account", "to_bank",
    "to_account", "amount", "payment_type", "is_laundering"};

// Reads the transaction CSV. The header must contain every column in
// kCsvColumns (any order); extra columns are ignored. Row numbers in errors
// count the header as row 1.
std::vector<TransactionRecord> read_transactions(std::istream& in);
std::vector<TransactionRecord> ingest_csv(const std::filesystem::path& path);

void write_transactions(std::ostream& out, const std::vector<TransactionRecord>& records);
void write_csv(const std::filesystem::path& path, const std::vector<TransactionRecord>& records);

// Throws DataError naming `index` if the record breaks a field invariant.
void validate_record(const TransactionRecord& record, std::size_t index);

// Splits one CSV line on commas. Double-quoted fields may contain commas.
std::vector<std::string> split_csv_line(const std::string& line);

}  // namespace fedaml
