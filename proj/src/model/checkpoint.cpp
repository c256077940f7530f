#include "attnreg/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "attnreg/error.hpp"

namespace attnreg::model {
namespace {

template <typename T>
void put(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  os.write(bytes.data(), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  std::array<char, sizeof(T)> bytes;
  if (!is.read(bytes.data(), sizeof(T))) throw ParseError("checkpoint: unexpected end of data");
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

}  // namespace

void write_checkpoint(std::ostream& os, const Parameters& params) {
  const ModelConfig& c = params.config;
  os.write(kCheckpointMagic, 4);
  put<std::uint32_t>(os, kCheckpointVersion);
  for (std::uint64_t v : {std::uint64_t{c.n_layers}, std::uint64_t{c.n_heads},
                          std::uint64_t{c.d_model}, std::uint64_t{c.d_ff},
                          std::uint64_t{c.vocab_size}, std::uint64_t{c.max_seq_len}, c.seed}) {
    put<std::uint64_t>(os, v);
  }
  put<std::uint32_t>(os, static_cast<std::uint32_t>(params.tensors.size()));
  for (const auto& [name, t] : params.tensors) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape) put<std::uint64_t>(os, e);
    for (double v : t.data) put<double>(os, v);
  }
  if (!os) throw IoError("checkpoint: write failed");
}

Parameters read_checkpoint(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw ParseError("checkpoint: bad magic");
  }
  const auto version = get<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw ParseError("checkpoint: unsupported version " + std::to_string(version));
  }
  Parameters p;
  ModelConfig& c = p.config;
  c.n_layers = get<std::uint64_t>(is);
  c.n_heads = get<std::uint64_t>(is);
  c.d_model = get<std::uint64_t>(is);
  c.d_ff = get<std::uint64_t>(is);
  c.vocab_size = get<std::uint64_t>(is);
  c.max_seq_len = get<std::uint64_t>(is);
  c.seed = get<std::uint64_t>(is);
  c.validate();

  const auto count = get<std::uint32_t>(is);
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = get<std::uint32_t>(is);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw ParseError("checkpoint: truncated tensor name");
    const auto rank = get<std::uint32_t>(is);
    grad::Shape shape(rank);
    for (auto& e : shape) e = get<std::uint64_t>(is);
    std::vector<double> data(grad::num_elements(shape));
    for (double& v : data) v = get<double>(is);
    p.tensors.emplace(name, grad::Tensor(std::move(shape), std::move(data)));
  }

  const Parameters reference = init_params(c);
  for (const auto& [name, t] : reference.tensors) {
    auto it = p.tensors.find(name);
    if (it == p.tensors.end()) throw ParseError("checkpoint: missing tensor '" + name + "'");
    if (it->second.shape != t.shape) {
      throw ParseError("checkpoint: tensor '" + name + "' has shape " +
                       grad::to_string(it->second.shape) + ", config implies " +
                       grad::to_string(t.shape));
    }
  }
  if (p.tensors.size() != reference.tensors.size()) {
    throw ParseError("checkpoint: unexpected extra tensors");
  }
  return p;
}

void save_checkpoint(const std::filesystem::path& path, const Parameters& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  write_checkpoint(os, params);
}

Parameters load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint " + path.string());
  return read_checkpoint(is);
}

}  // namespace attnreg::model
