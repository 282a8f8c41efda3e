#include "semfsl/embeddings.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "semfsl/errors.hpp"

namespace semfsl {

const Vector* EmbeddingTable::find(std::string_view normalized) const {
  auto it = entries.find(std::string(normalized));
  return it == entries.end() ? nullptr : &it->second;
}

void EmbeddingTable::insert(std::string_view name, Vector v) {
  if (v.size() != dim) {
    throw DimensionError("embedding for '" + std::string(name) + "' has " +
                         std::to_string(v.size()) + " values, table expects " +
                         std::to_string(dim));
  }
  entries.emplace(normalize_name(name), std::move(v));
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

double parse_double(std::string_view text, std::size_t line_no) {
  double v = 0.0;
  const char* first = text.data();
  if (!text.empty() && text.front() == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v)) {
    throw ParseError("cannot parse '" + std::string(text) + "' as a finite float", line_no);
  }
  return v;
}

}  // namespace

EmbeddingTable parse_word_vectors(std::istream& in, Index dim) {
  EmbeddingTable table;
  table.dim = dim;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = split_fields(line);
    if (fields.empty()) continue;
    if (table.dim == 0) table.dim = static_cast<Index>(fields.size()) - 1;
    if (static_cast<Index>(fields.size()) - 1 != table.dim || table.dim == 0) {
      throw ParseError("expected a token and " + std::to_string(table.dim) + " floats, found " +
                           std::to_string(fields.size() - 1) + " floats",
                       line_no);
    }
    Vector v(table.dim);
    for (Index k = 0; k < table.dim; ++k) v(k) = parse_double(fields[k + 1], line_no);
    const std::string key = normalize_name(fields[0]);
    if (key.empty()) throw ParseError("empty token", line_no);
    table.entries.emplace(key, std::move(v));
  }
  if (in.bad()) throw IoError("read failure in word-vector stream");
  return table;
}

EmbeddingTable load_word_vectors(const std::filesystem::path& path, Index dim) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open word vectors " + path.string());
  return parse_word_vectors(in, dim);
}

void save_word_vectors(const EmbeddingTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  char buf[64];
  for (const auto& [name, v] : table.entries) {
    if (name.find(' ') != std::string::npos) {
      throw ValidationError("multi-word key '" + name + "' cannot be written as a single token");
    }
    out << name;
    for (Index k = 0; k < v.size(); ++k) {
      auto res = std::to_chars(buf, buf + sizeof buf, v(k));
      out << ' ' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    }
    out << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

Vector embedding_for_class(const EmbeddingTable& table, std::string_view class_name) {
  const std::string key = normalize_name(class_name);
  if (key.empty()) throw UsageError("empty class name");
  if (const Vector* exact = table.find(key)) return *exact;

  Vector acc = Vector::Zero(table.dim);
  std::size_t count = 0;
  std::istringstream words(key);
  std::string token;
  while (words >> token) {
    const Vector* v = table.find(token);
    if (v == nullptr) throw MissingEmbeddingError(token);
    acc += *v;
    ++count;
  }
  return acc / static_cast<double>(count);
}

std::vector<std::string> coverage_check(const EmbeddingTable& table, const FeatureBank& bank) {
  std::vector<std::string> missing;
  for (const auto& c : bank.classes) {
    try {
      (void)embedding_for_class(table, c.name);
    } catch (const MissingEmbeddingError&) {
      missing.push_back(c.name);
    }
  }
  return missing;
}

Matrix align_embeddings(const EmbeddingTable& table, const FeatureBank& bank, bool unit_norm) {
  Matrix out(static_cast<Index>(bank.classes.size()), table.dim);
  for (std::size_t i = 0; i < bank.classes.size(); ++i) {
    Vector v = embedding_for_class(table, bank.classes[i].name);
    if (unit_norm) {
      const double norm = v.norm();
      if (norm > 0.0) v /= norm;
    }
    out.row(static_cast<Index>(i)) = v.transpose();
  }
  return out;
}

}  // namespace semfsl
