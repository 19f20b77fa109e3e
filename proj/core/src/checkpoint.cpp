#include "resmtl/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "resmtl/error.hpp"

namespace resmtl {

namespace {

constexpr std::array<char, 8> kMagic = {'R', 'E', 'S', 'M', 'T', 'L', 'C', 'K'};

template <typename U>
void put_le(std::ostream& out, U value) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  }
  out.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw ValidationError("checkpoint: truncated file");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace

void write_checkpoint(std::ostream& out, const MultiTaskNet& net, const nlohmann::json& metadata) {
  nlohmann::json header;
  header["config"] = net.config();
  header["metadata"] = metadata;
  auto& shapes = header["parameters"] = nlohmann::json::array();
  const auto params = net.parameters();
  for (const auto& p : params) {
    shapes.push_back({{"name", p.name}, {"rows", p.value->rows()}, {"cols", p.value->cols()}});
  }
  const std::string text = header.dump();

  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : params)
    for (double v : p.value->values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  if (!out) throw ValidationError("checkpoint: write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw ValidationError("checkpoint: bad magic, not a checkpoint file");
  const auto version = get_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw ValidationError("checkpoint: unsupported format version " + std::to_string(version));
  }
  const auto len = get_le<std::uint64_t>(in);
  if (len > (std::uint64_t{1} << 32)) throw ValidationError("checkpoint: header too large");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw ValidationError("checkpoint: truncated header");

  nlohmann::json header;
  NetConfig config;
  try {
    header = nlohmann::json::parse(text);
    config = header.at("config").get<NetConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("checkpoint: malformed header: ") + e.what());
  }

  Rng scratch(0);
  Checkpoint ck{MultiTaskNet(config, scratch), header.value("metadata", nlohmann::json::object())};
  auto params = ck.net.parameters();
  const auto& shapes = header.at("parameters");
  if (shapes.size() != params.size()) {
    throw ValidationError("checkpoint: parameter list does not match config");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& s = shapes[i];
    if (s.at("name") != params[i].name || s.at("rows") != params[i].value->rows() ||
        s.at("cols") != params[i].value->cols()) {
      throw ValidationError("checkpoint: parameter '" + params[i].name + "' shape mismatch");
    }
    for (double& v : params[i].value->values()) v = std::bit_cast<double>(get_le<std::uint64_t>(in));
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const MultiTaskNet& net,
                     const nlohmann::json& metadata) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("checkpoint: cannot open '" + path.string() + "' for writing");
  write_checkpoint(out, net, metadata);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("checkpoint: cannot open '" + path.string() + "'");
  return read_checkpoint(in);
}

}  // namespace resmtl
