#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "bdlab/dataset.hpp"
#include "bdlab/trigger.hpp"

namespace bdlab {

struct OneToOne {
  int source = 0;
  int target = 1;
};

struct AllToOne {
  int target = 0;
};

using LabelPolicy = std::variant<OneToOne, AllToOne>;

int policy_target(const LabelPolicy& p);

struct PoisonSpec {
  Trigger trigger;
  LabelPolicy policy;
  double pp = 0.1;  // poisoning fraction, strictly inside (0,1)

  void validate(int num_classes) const;
};

struct PoisonResult {
  LabeledDataset dataset;
  std::vector<std::size_t> poisoned_indices;  // ascending
};

// Replaces ceil(pp * |c|) images of every eligible class c with triggered
// copies relabeled to the policy target. Eligible classes: the source for
// one-to-one, every class except the target for all-to-one.
PoisonResult poison_dataset(const LabeledDataset& ds, const PoisonSpec& spec, std::uint64_t seed);

struct MaliciousTestOptions {
  std::size_t per_class = 0;          // 0 keeps every eligible image
  bool include_target_class = false;  // all-to-one only
};

// Triggered probes from held-out images: labels set to the attacker's target,
// true labels kept alongside.
LabeledDataset build_malicious_testset(const LabeledDataset& test, const PoisonSpec& spec,
                                       const MaliciousTestOptions& opts = {});

}  // namespace bdlab
