#include "semfsl/feature_bank.hpp"

#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>

#include "semfsl/errors.hpp"

namespace semfsl {

std::string_view split_name(Split split) {
  switch (split) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "unknown";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "test") return Split::test;
  throw ConfigError("unknown split '" + std::string(text) + "' (expected train|val|test)");
}

std::string normalize_name(std::string_view name) {
  std::string out;
  bool pending_space = false;
  for (char raw : name) {
    const auto ch = static_cast<unsigned char>(raw);
    if (raw == '_' || raw == '-' || std::isspace(ch)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(ch)));
  }
  return out;
}

void FeatureBank::validate() const {
  if (feature_dim == 0) throw ValidationError("feature bank has zero feature dimension");
  std::set<std::string> seen;
  for (const ClassFeatures& c : classes) {
    const std::string key = normalize_name(c.name);
    if (key.empty()) throw ValidationError("feature bank class with empty name");
    if (!seen.insert(key).second) {
      throw ValidationError("duplicate class name '" + c.name + "' in feature bank");
    }
    if (c.features.rows() > 0 && c.features.cols() != static_cast<Index>(feature_dim)) {
      throw ValidationError("class '" + c.name + "' has rows of width " +
                            std::to_string(c.features.cols()) + ", expected " +
                            std::to_string(feature_dim));
    }
    if (!all_finite(c.features)) {
      throw ValidationError("class '" + c.name + "' contains non-finite feature values");
    }
  }
}

std::size_t FeatureBank::total_samples() const {
  std::size_t n = 0;
  for (const auto& c : classes) n += static_cast<std::size_t>(c.features.rows());
  return n;
}

BankView split_view(const FeatureBank& bank, Split split) {
  std::vector<std::size_t> picked;
  for (std::size_t i = 0; i < bank.classes.size(); ++i) {
    if (bank.classes[i].split == split) picked.push_back(i);
  }
  return BankView(bank, std::move(picked));
}

BankView full_view(const FeatureBank& bank) {
  std::vector<std::size_t> all(bank.classes.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return BankView(bank, std::move(all));
}

namespace {

constexpr char kMagic[4] = {'F', 'B', 'N', 'K'};
constexpr std::uint16_t kVersion = 1;

class Writer {
 public:
  explicit Writer(std::size_t reserve) { bytes_.reserve(reserve); }
  void put_le(std::uint64_t v, int width) {
    for (int i = 0; i < width; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void put_bytes(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  std::uint64_t get_le(int width, const char* what) {
    need(static_cast<std::size_t>(width), what);
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= std::uint64_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  std::string get_string(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw CorruptionError(std::string("truncated feature bank while reading ") + what, pos_);
    }
  }
  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::size_t encoded_bank_size(const FeatureBank& bank) {
  std::size_t size = kBankHeaderBytes;
  for (const auto& c : bank.classes) {
    size += 7 + c.name.size() + 4 * static_cast<std::size_t>(c.features.rows()) * bank.feature_dim;
  }
  return size;
}

std::vector<std::uint8_t> encode_bank(const FeatureBank& bank) {
  Writer w(encoded_bank_size(bank));
  w.put_bytes(std::string_view(kMagic, 4));
  w.put_le(kVersion, 2);
  w.put_le(bank.feature_dim, 4);
  w.put_le(bank.classes.size(), 4);
  for (const auto& c : bank.classes) {
    if (c.name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw ValidationError("class name too long for the bank format: " + c.name);
    }
    w.put_le(c.name.size(), 2);
    w.put_bytes(c.name);
    w.put_le(static_cast<std::uint8_t>(c.split), 1);
    w.put_le(static_cast<std::uint64_t>(c.features.rows()), 4);
    for (Index r = 0; r < c.features.rows(); ++r) {
      for (Index k = 0; k < c.features.cols(); ++k) {
        w.put_le(std::bit_cast<std::uint32_t>(c.features(r, k)), 4);
      }
    }
  }
  return w.take();
}

FeatureBank decode_bank(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("not a feature bank (bad magic)");
  r.get_string(4, "magic");
  const auto version = r.get_le(2, "version");
  if (version != kVersion) {
    throw FormatError("unsupported feature bank version " + std::to_string(version));
  }
  FeatureBank bank;
  bank.feature_dim = static_cast<std::uint32_t>(r.get_le(4, "feature dimension"));
  const auto n_classes = r.get_le(4, "class count");
  for (std::uint64_t ci = 0; ci < n_classes; ++ci) {
    ClassFeatures c;
    const auto name_len = r.get_le(2, "name length");
    c.name = r.get_string(name_len, "class name");
    const std::size_t split_at = r.position();
    const auto split = r.get_le(1, "split tag");
    if (split > 2) throw CorruptionError("invalid split tag " + std::to_string(split), split_at);
    c.split = static_cast<Split>(split);
    const auto n_samples = r.get_le(4, "sample count");
    const std::uint64_t row_bytes = std::uint64_t{bank.feature_dim} * 4;
    if (row_bytes > 0 && n_samples > r.remaining() / row_bytes) {
      throw CorruptionError("truncated feature bank while reading feature payload", r.position());
    }
    c.features.resize(static_cast<Index>(n_samples), bank.feature_dim);
    for (Index i = 0; i < c.features.rows(); ++i) {
      for (Index k = 0; k < c.features.cols(); ++k) {
        c.features(i, k) = std::bit_cast<float>(static_cast<std::uint32_t>(r.get_le(4, "feature")));
      }
    }
    bank.classes.push_back(std::move(c));
  }
  if (r.remaining() != 0) {
    throw CorruptionError("trailing bytes after feature bank payload", r.position());
  }
  bank.validate();
  return bank;
}

void save_bank(const FeatureBank& bank, const std::filesystem::path& path) {
  bank.validate();
  const auto bytes = encode_bank(bank);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

FeatureBank load_bank(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature bank " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for " + path.string());
  return decode_bank(bytes);
}

}  // namespace semfsl
