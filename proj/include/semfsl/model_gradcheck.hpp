#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "semfsl/gradcheck.hpp"
#include "semfsl/model.hpp"

namespace semfsl {

// Outcome of one named check (a head or the full loss) across all instances.
struct ModelGradCheckEntry {
  std::size_t instances = 0;
  std::size_t failures = 0;
  GradCheckReport worst;  // the instance with the largest error
};

struct ModelGradCheckSummary {
  std::map<std::string, ModelGradCheckEntry> checks;  // prior, visual, semantic, feature, loss
  bool passed() const;
  std::string to_text() const;
};

// Seeded toy setup used for model gradient checks: a 3-way 2-shot episode
// with d_v = 8, d_e = 6, dropout disabled and alpha = 0.5.
ModelConfig gradcheck_model_config();
Episode gradcheck_episode(std::uint64_t seed);
HeadParams gradcheck_params(std::uint64_t seed);

// Checks every head and the combined-variant episode loss on `instances`
// seeded problems (instance i uses seed + i).
ModelGradCheckSummary run_model_gradcheck(std::uint64_t seed, int instances,
                                          const GradCheckOptions& options = {});

}  // namespace semfsl
