#pragma once

#include <cstdint>

#include "bdlab/dataset.hpp"

namespace bdlab {

// K identities with n neutral-expression renders each; class c shares one
// identity vector. Requires n >= 4 so every class can be split 80/20.
LabeledDataset make_identity_dataset(int num_classes, std::size_t per_class, std::uint64_t seed);

}  // namespace bdlab
