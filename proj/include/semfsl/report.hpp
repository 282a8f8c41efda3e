#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace semfsl {

// Shortest decimal that parses back to the same double.
std::string format_double(double v);

// Line-oriented `key=value` report. Lines starting with '#' are comments.
class Report {
 public:
  void comment(std::string text);
  void set(std::string key, double value);
  void set(std::string key, std::int64_t value);
  void set(std::string key, std::uint64_t value);
  void set(std::string key, int value) { set(std::move(key), std::int64_t{value}); }
  void set_text(std::string key, std::string value);

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
  void write(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<std::string> comments_;
  std::vector<std::pair<std::string, std::string>> entries_;
};

// Parses `key=value` lines, skipping blanks and comments. Throws ParseError
// on a line without '='.
std::map<std::string, std::string> parse_report(std::istream& in);
std::map<std::string, std::string> load_report(const std::filesystem::path& path);
double report_double(const std::map<std::string, std::string>& report, std::string_view key);

}  // namespace semfsl
