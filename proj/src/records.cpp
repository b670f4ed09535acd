#include "fedaml/records.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "fedaml/error.hpp"

namespace fedaml {

std::string account_key(const CountryCode& bank, const std::string& account) {
  return bank + ":" + account;
}

CountryCode account_country(const std::string& key) {
  const auto pos = key.find(':');
  return pos == std::string::npos ? std::string{} : key.substr(0, pos);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

void validate_record(const TransactionRecord& r, std::size_t index) {
  auto fail = [index](const std::string& why) {
    throw DataError("record " + std::to_string(index) + ": " + why);
  };
  if (r.from_bank.empty()) fail("missing from_bank");
  if (r.to_bank.empty()) fail("missing to_bank");
  if (r.from_account.empty()) fail("missing from_account");
  if (r.to_account.empty()) fail("missing to_account");
  if (!std::isfinite(r.amount) || r.amount < 0.0) fail("amount must be a finite value >= 0");
  if (r.is_laundering != 0 && r.is_laundering != 1) fail("is_laundering must be 0 or 1");
}

namespace {

template <typename T>
bool parse_number(const std::string& s, T& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  while (first < last && *first == ' ') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

}  // namespace

std::vector<TransactionRecord> read_transactions(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("missing header row");
  const auto header = split_csv_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
  std::size_t idx[8];
  for (std::size_t c = 0; c < 8; ++c) {
    auto it = col.find(kCsvColumns[c]);
    if (it == col.end()) throw DataError(std::string("missing column: ") + kCsvColumns[c]);
    idx[c] = it->second;
  }

  std::vector<TransactionRecord> records;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    auto fail = [row](const std::string& why) {
      throw DataError("row " + std::to_string(row) + ": " + why);
    };
    if (f.size() < header.size()) fail("expected " + std::to_string(header.size()) + " fields");
    TransactionRecord r;
    if (!parse_number(f[idx[0]], r.timestamp)) fail("unparsable timestamp '" + f[idx[0]] + "'");
    r.from_bank = f[idx[1]];
    r.from_account = f[idx[2]];
    r.to_bank = f[idx[3]];
    r.to_account = f[idx[4]];
    if (!parse_number(f[idx[5]], r.amount)) fail("unparsable amount '" + f[idx[5]] + "'");
    r.payment_type = f[idx[6]];
    if (!parse_number(f[idx[7]], r.is_laundering)) fail("unparsable is_laundering '" + f[idx[7]] + "'");
    try {
      validate_record(r, records.size());
    } catch (const DataError& e) {
      fail(e.what());
    }
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<TransactionRecord> ingest_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open transactions file: " + path.string());
  return read_transactions(in);
}

void write_transactions(std::ostream& out, const std::vector<TransactionRecord>& records) {
  for (std::size_t c = 0; c < 8; ++c) out << (c ? "," : "") << kCsvColumns[c];
  out << '\n';
  for (const auto& r : records) {
    // Shortest form that reads back to the same double.
    out << r.timestamp << ',' << r.from_bank << ',' << r.from_account << ',' << r.to_bank << ','
        << r.to_account << ',' << fmt::format("{}", r.amount) << ',' << r.payment_type << ','
        << r.is_laundering << '\n';
  }
}

void write_csv(const std::filesystem::path& path, const std::vector<TransactionRecord>& records) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  write_transactions(out, records);
}

}  // namespace fedaml
