#include "mdrnn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mdrnn/errors.hpp"

namespace mdrnn {

namespace {

constexpr char kMagic[8] = {'M', 'D', 'L', 'S', 'T', 'M', 'C', 'K'};

template <class T>
void put_le(std::string& out, T value) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i)
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF));
}

template <class T>
T get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw DataError("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(T);
  return static_cast<T>(v);
}

}  // namespace

std::string serialize_checkpoint(const Network& net, const LabelAlphabet& alphabet,
                                 const nlohmann::json& meta) {
  if (alphabet.size() != net.classes())
    throw std::invalid_argument("checkpoint: alphabet size does not match network outputs");
  nlohmann::json tensors = nlohmann::json::array();
  net.params().visit([&](const std::string& name, const Param& p) {
    tensors.push_back({{"name", name}, {"shape", p.value.shape()}});
  });
  const nlohmann::json header = {{"architecture", net.spec()},
                                 {"alphabet", alphabet.symbols()},
                                 {"classes", net.classes()},
                                 {"tensors", tensors},
                                 {"meta", meta}};
  const std::string text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, text.size());
  out += text;
  net.params().visit([&](const std::string&, const Param& p) {
    for (double v : p.value.values()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  });
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw DataError("checkpoint: bad magic header");
  std::size_t pos = sizeof(kMagic);
  const auto version = get_le<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion)
    throw DataError("checkpoint: unsupported format version " + std::to_string(version));
  const auto header_len = get_le<std::uint64_t>(bytes, pos);
  if (header_len > bytes.size() - pos) throw DataError("checkpoint: truncated header");

  Checkpoint ck;
  std::vector<nlohmann::json> tensors;
  try {
    const auto header = nlohmann::json::parse(bytes.substr(pos, header_len));
    const auto spec = header.at("architecture").get<ArchitectureSpec>();
    ck.alphabet = LabelAlphabet(header.at("alphabet").get<std::vector<std::string>>());
    ck.network = Network(spec, header.at("classes").get<std::size_t>());
    tensors = header.at("tensors").get<std::vector<nlohmann::json>>();
    if (header.contains("meta")) ck.meta = header.at("meta");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: malformed header: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("checkpoint: ") + e.what());
  }
  pos += header_len;
  if (ck.alphabet.size() != ck.network.classes())
    throw DataError("checkpoint: alphabet size does not match network outputs");

  std::size_t k = 0;
  ck.network.mutable_params().visit([&](const std::string& name, Param& p) {
    if (k >= tensors.size()) throw DataError("checkpoint: missing tensor " + name);
    const auto& t = tensors[k++];
    if (t.at("name").get<std::string>() != name ||
        t.at("shape").get<std::vector<std::size_t>>() != p.value.shape())
      throw DataError("checkpoint: tensor " + name + " does not match the architecture");
    for (double& v : p.value.values()) v = std::bit_cast<double>(get_le<std::uint64_t>(bytes, pos));
  });
  if (k != tensors.size()) throw DataError("checkpoint: unexpected extra tensors");
  if (pos != bytes.size()) throw DataError("checkpoint: trailing bytes after payload");
  ck.network.params().visit([&](const std::string& name, const Param& p) {
    ensure_finite(p.value, "checkpoint tensor " + name);
  });
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Network& net,
                     const LabelAlphabet& alphabet, const nlohmann::json& meta) {
  const std::string bytes = serialize_checkpoint(net, alphabet, meta);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

}  // namespace mdrnn
