#include "semfsl/report.hpp"

#include <charconv>
#include <fstream>

#include "semfsl/errors.hpp"

namespace semfsl {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void Report::comment(std::string text) { comments_.push_back(std::move(text)); }

void Report::set(std::string key, double value) {
  entries_.emplace_back(std::move(key), format_double(value));
}

void Report::set(std::string key, std::int64_t value) {
  entries_.emplace_back(std::move(key), std::to_string(value));
}

void Report::set(std::string key, std::uint64_t value) {
  entries_.emplace_back(std::move(key), std::to_string(value));
}

void Report::set_text(std::string key, std::string value) {
  entries_.emplace_back(std::move(key), std::move(value));
}

void Report::write(std::ostream& out) const {
  for (const auto& c : comments_) out << "# " << c << '\n';
  for (const auto& [k, v] : entries_) out << k << '=' << v << '\n';
}

void Report::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open report " + path.string() + " for writing");
  write(out);
  if (!out) throw IoError("write failed for " + path.string());
}

std::map<std::string, std::string> parse_report(std::istream& in) {
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) throw ParseError("expected key=value", line_no);
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

std::map<std::string, std::string> load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open report " + path.string());
  return parse_report(in);
}

double report_double(const std::map<std::string, std::string>& report, std::string_view key) {
  auto it = report.find(std::string(key));
  if (it == report.end()) throw ValidationError("report has no key '" + std::string(key) + "'");
  double v = 0.0;
  const std::string& s = it->second;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw FormatError("report value for '" + std::string(key) + "' is not a number: " + s);
  }
  return v;
}

}  // namespace semfsl
