#pragma once

#include <cstddef>
#include <filesystem>

#include "bdlab/dataset.hpp"

namespace bdlab {

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

// Reads an IDX image file and its label file (big-endian headers, unsigned
// byte payload). Pixels are scaled to [0,1] by /255. A nonzero `limit` keeps
// only the first `limit` samples; the header counts are still verified against
// the file sizes. Sample ids are id_offset + file index. Throws FormatError naming the failing byte offset.
LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                        std::size_t limit = 0, int num_classes = 10, std::uint64_t id_offset = 0);

// Writes single-channel images (rounded to the nearest byte) and labels.
void write_idx(const LabeledDataset& ds, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

}  // namespace bdlab
