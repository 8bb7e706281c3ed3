#include "bdlab/model_io.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "bdlab/errors.hpp"

namespace bdlab {
namespace {

constexpr char kMagic[4] = {'B', 'D', 'L', 'M'};

void put(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string bytes) : buf_(std::move(bytes)) {}
  std::uint64_t get(int bytes, const char* what) {
    need(static_cast<std::size_t>(bytes), what);
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (buf_.size() - pos_ < n) throw FormatError(std::string("truncated model file while reading ") + what, pos_);
  }
  std::string buf_;
  std::size_t pos_ = 0;
};

std::string meta_text(const std::map<std::string, std::string>& m) {
  std::string s;
  for (const auto& [k, v] : m) {
    if (k.find_first_of("=\n") != std::string::npos || v.find('\n') != std::string::npos)
      throw ConfigError("metadata key/value '" + k + "' contains a reserved character");
    s += k + "=" + v + "\n";
  }
  return s;
}

std::map<std::string, std::string> parse_meta(const std::string& text, std::size_t offset) {
  std::map<std::string, std::string> m;
  std::istringstream is(text);
  for (std::string line; std::getline(is, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("metadata line without '='", offset);
    m[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return m;
}

const std::string& need_key(const std::map<std::string, std::string>& m, const std::string& k) {
  auto it = m.find(k);
  if (it == m.end()) throw FormatError("model metadata lacks '" + k + "'", 6);
  return it->second;
}

}  // namespace

void write_tensor_file(const std::string& path, const TensorFile& file) {
  std::string out(kMagic, 4);
  put(out, kModelFormatVersion, 2);
  const std::string meta = meta_text(file.metadata);
  put(out, meta.size(), 4);
  out += meta;
  put(out, file.tensors.size(), 4);
  for (const auto& [name, t] : file.tensors) {
    put(out, name.size(), 2);
    out += name;
    put(out, t.rank(), 1);
    for (auto d : t.shape()) put(out, d, 4);
    for (double v : t.data()) put(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)), 4);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ConfigError("cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw ConfigError("failed writing '" + path + "'");
}

TensorFile read_tensor_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open model file '" + path + "'");
  Reader r(std::string(std::istreambuf_iterator<char>(f), {}));
  if (r.str(4, "magic") != std::string(kMagic, 4)) throw FormatError("bad magic, not a BDLM file", 0);
  const auto version = r.get(2, "version");
  if (version != kModelFormatVersion)
    throw FormatError("unsupported format version " + std::to_string(version), 4);
  TensorFile tf;
  const auto meta_len = r.get(4, "metadata length");
  const auto meta_at = r.pos();
  tf.metadata = parse_meta(r.str(meta_len, "metadata"), meta_at);
  const auto count = r.get(4, "tensor count");
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.str(r.get(2, "tensor name length"), "tensor name");
    const auto rank_at = r.pos();
    const auto rank = r.get(1, "tensor rank");
    if (rank == 0) throw FormatError("tensor '" + name + "' has rank 0", rank_at);
    Shape shape;
    for (std::uint64_t a = 0; a < rank; ++a) {
      const auto d = r.get(4, "tensor extent");
      if (d == 0) throw FormatError("tensor '" + name + "' has a zero extent", r.pos() - 4);
      shape.push_back(d);
    }
    Tensor t(shape);
    for (auto& v : t.data()) v = std::bit_cast<float>(static_cast<std::uint32_t>(r.get(4, "tensor data")));
    tf.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (!r.done()) throw FormatError("trailing bytes after last tensor", r.pos());
  return tf;
}

void save_model(const Model& model, const std::string& path) {
  TensorFile tf;
  for (const auto& [k, v] : model.metadata) tf.metadata["meta." + k] = v;
  tf.metadata["layers"] = layers_to_string(model.layers());
  const auto& in = model.input();
  tf.metadata["input"] = std::to_string(in.channels) + "x" + std::to_string(in.height) + "x" + std::to_string(in.width);
  tf.metadata["classes"] = std::to_string(model.num_classes());
  tf.metadata["seed"] = std::to_string(model.seed());
  for (const auto& p : model.parameters()) tf.tensors.emplace_back(p.name, p.value);
  write_tensor_file(path, tf);
}

Model load_model(const std::string& path) {
  const TensorFile tf = read_tensor_file(path);
  InputShape in;
  if (std::sscanf(need_key(tf.metadata, "input").c_str(), "%zux%zux%zu", &in.channels, &in.height, &in.width) != 3)
    throw FormatError("malformed input shape in model metadata", 6);
  Model m;
  try {
    m = Model(layers_from_string(need_key(tf.metadata, "layers")), in, std::stoi(need_key(tf.metadata, "classes")),
              std::stoull(need_key(tf.metadata, "seed")));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("model metadata describes an invalid network: ") + e.what(), 6);
  } catch (const std::logic_error&) {
    throw FormatError("malformed number in model metadata", 6);
  }
  if (tf.tensors.size() != m.parameters().size())
    throw FormatError("file holds " + std::to_string(tf.tensors.size()) + " tensors, network needs " +
                      std::to_string(m.parameters().size()), 6);
  for (std::size_t i = 0; i < tf.tensors.size(); ++i) {
    auto& p = m.parameters()[i];
    if (tf.tensors[i].second.shape() != p.value.shape())
      throw FormatError("tensor '" + tf.tensors[i].first + "' has shape " + shape_str(tf.tensors[i].second.shape()) +
                        ", expected " + shape_str(p.value.shape()), 6);
    p.value = tf.tensors[i].second;
  }
  for (const auto& [k, v] : tf.metadata)
    if (k.rfind("meta.", 0) == 0) m.metadata[k.substr(5)] = v;
  return m;
}

}  // namespace bdlab
