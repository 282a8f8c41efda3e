#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>

#include "semfsl/model.hpp"

namespace semfsl {

struct Checkpoint {
  Variant variant = Variant::pn;
  std::uint64_t seed = 0;
  HeadParams params;
};

// Text checkpoint: a config echo (variant, dims, dropout rates, alpha,
// dist_scale, seed) followed by every parameter as
//   param <name> <rows> <cols>
//   <row-major values, one matrix row per line>
// Values use shortest round-trip decimals, so load(save(c)) is bit-exact.
void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace semfsl
