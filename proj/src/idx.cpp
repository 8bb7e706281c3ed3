#include "bdlab/idx.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <iterator>
#include <vector>

#include "bdlab/errors.hpp"

namespace bdlab {
namespace {

std::vector<unsigned char> read_all(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FormatError("cannot open " + p.string(), 0);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& buf, std::size_t off, const std::string& file) {
  if (off + 4 > buf.size()) throw FormatError(file + ": truncated header", off);
  return (std::uint32_t{buf[off]} << 24) | (std::uint32_t{buf[off + 1]} << 16) | (std::uint32_t{buf[off + 2]} << 8) |
         std::uint32_t{buf[off + 3]};
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                              static_cast<char>(v)};
  out.write(b.data(), 4);
}

}  // namespace

LabeledDataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                        std::size_t limit, int num_classes, std::uint64_t id_offset) {
  const auto img_name = images_path.filename().string();
  const auto lbl_name = labels_path.filename().string();
  const auto ibuf = read_all(images_path);
  const auto lbuf = read_all(labels_path);

  if (ibuf.empty()) throw FormatError(img_name + ": empty file", 0);
  if (lbuf.empty()) throw FormatError(lbl_name + ": empty file", 0);
  const auto imagic = be32(ibuf, 0, img_name);
  if (imagic != kIdxImageMagic) throw FormatError(img_name + ": bad magic number " + std::to_string(imagic), 0);
  const auto lmagic = be32(lbuf, 0, lbl_name);
  if (lmagic != kIdxLabelMagic) throw FormatError(lbl_name + ": bad magic number " + std::to_string(lmagic), 0);

  const std::size_t count = be32(ibuf, 4, img_name);
  const std::size_t rows = be32(ibuf, 8, img_name);
  const std::size_t cols = be32(ibuf, 12, img_name);
  const std::size_t lcount = be32(lbuf, 4, lbl_name);
  if (lcount != count)
    throw FormatError("count mismatch: " + std::to_string(count) + " images vs " + std::to_string(lcount) + " labels",
                      4);
  if (rows == 0 || cols == 0) throw FormatError(img_name + ": zero image dimension", 8);

  const std::size_t pix = rows * cols;
  const std::size_t img_need = 16 + count * pix;
  if (ibuf.size() < img_need) {
    const std::size_t complete = (ibuf.size() - 16) / pix;
    throw FormatError(img_name + ": truncated payload, header declares " + std::to_string(count) + " images but only " +
                          std::to_string(complete) + " present",
                      ibuf.size());
  }
  if (lbuf.size() < 8 + count)
    throw FormatError(lbl_name + ": truncated payload, header declares " + std::to_string(count) + " labels",
                      lbuf.size());
  if (ibuf.size() != img_need) throw FormatError(img_name + ": trailing bytes after payload", img_need);
  if (lbuf.size() != 8 + count) throw FormatError(lbl_name + ": trailing bytes after payload", 8 + count);

  const std::size_t n = (limit == 0) ? count : std::min(limit, count);
  LabeledDataset ds;
  ds.num_classes = num_classes;
  ds.images.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = lbuf[8 + i];
    if (label >= num_classes) throw FormatError(lbl_name + ": label " + std::to_string(label) + " out of range", 8 + i);
    Image img(rows, cols, 1);
    const unsigned char* src = &ibuf[16 + i * pix];
    for (std::size_t p = 0; p < pix; ++p) img.pixels[p] = static_cast<float>(src[p]) / 255.0f;
    ds.push_back(std::move(img), label, false, -1, id_offset + i);
  }
  return ds;
}

void write_idx(const LabeledDataset& ds, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
  if (ds.images.empty()) throw ConfigError("write_idx: empty dataset");
  const auto& f = ds.images.front();
  if (f.channels != 1) throw ConfigError("write_idx: IDX images must be single-channel");
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lbl(labels_path, std::ios::binary);
  if (!img || !lbl) throw ConfigError("write_idx: cannot open output files");
  put_be32(img, kIdxImageMagic);
  put_be32(img, static_cast<std::uint32_t>(ds.size()));
  put_be32(img, static_cast<std::uint32_t>(f.height));
  put_be32(img, static_cast<std::uint32_t>(f.width));
  put_be32(lbl, kIdxLabelMagic);
  put_be32(lbl, static_cast<std::uint32_t>(ds.size()));
  std::vector<char> row(f.height * f.width);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& im = ds.images[i];
    if (!im.same_shape(f)) throw ConfigError("write_idx: mixed image shapes");
    for (std::size_t p = 0; p < row.size(); ++p)
      row[p] = static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(im.pixels[p], 0.0f, 1.0f) * 255.0f)));
    img.write(row.data(), static_cast<std::streamsize>(row.size()));
    lbl.put(static_cast<char>(ds.labels[i]));
  }
}

}  // namespace bdlab
