#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "semfsl/tensor.hpp"

namespace semfsl {

enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };

std::string_view split_name(Split split);
Split parse_split(std::string_view text);

// Lowercase, '_' and '-' become spaces, runs of whitespace collapse to one
// space, leading/trailing whitespace dropped.
std::string normalize_name(std::string_view name);

using FeatureMatrix = RowMajorMatrix<float>;

struct ClassFeatures {
  std::string name;
  Split split = Split::train;
  FeatureMatrix features;  // samples x feature_dim
};

// Precomputed per-class feature vectors standing in for backbone outputs.
struct FeatureBank {
  std::uint32_t feature_dim = 0;
  std::vector<ClassFeatures> classes;

  // Throws ValidationError on duplicate (normalized) names, wrong row
  // widths, or non-finite values.
  void validate() const;
  std::size_t total_samples() const;
};

// Subset of a bank's classes; holds indices into the bank, which must
// outlive the view.
class BankView {
 public:
  BankView() = default;
  BankView(const FeatureBank& bank, std::vector<std::size_t> classes)
      : bank_(&bank), classes_(std::move(classes)) {}

  const FeatureBank& bank() const { return *bank_; }
  std::size_t size() const { return classes_.size(); }
  // An empty view is the warning signal for a split with no classes.
  bool empty() const { return classes_.empty(); }
  std::size_t bank_index(std::size_t i) const { return classes_[i]; }
  const ClassFeatures& at(std::size_t i) const { return bank_->classes[classes_[i]]; }
  const std::vector<std::size_t>& bank_indices() const { return classes_; }

 private:
  const FeatureBank* bank_ = nullptr;
  std::vector<std::size_t> classes_;
};

BankView split_view(const FeatureBank& bank, Split split);
BankView full_view(const FeatureBank& bank);

// Little-endian "FBNK" v1 layout:
//   magic[4] version:u16 d_v:u32 n_classes:u32
//   per class: name_len:u16 name[name_len] split:u8 n_samples:u32
//              f32[n_samples * d_v] row-major
inline constexpr std::size_t kBankHeaderBytes = 14;
std::size_t encoded_bank_size(const FeatureBank& bank);
std::vector<std::uint8_t> encode_bank(const FeatureBank& bank);
// Throws FormatError on bad magic/version, CorruptionError (with offset) on
// truncation, ValidationError on invariant violations.
FeatureBank decode_bank(std::span<const std::uint8_t> bytes);

void save_bank(const FeatureBank& bank, const std::filesystem::path& path);
FeatureBank load_bank(const std::filesystem::path& path);

}  // namespace semfsl
