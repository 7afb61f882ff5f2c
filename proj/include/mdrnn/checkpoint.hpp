#pragma once

// Checkpoint container:
//
//   bytes 0..7   magic "MDLSTMCK"
//   u32          format version (1)
//   u64          header length in bytes
//   header       UTF-8 JSON: {"architecture", "alphabet", "classes",
//                             "tensors": [{"name", "shape"}...], "meta"}
//   payload      every tensor's values as IEEE-754 f64, little-endian,
//                row-major, in header order
//
// All integers are little-endian.

#include <filesystem>
#include <string>

#include "json.hpp"
#include "mdrnn/alphabet.hpp"
#include "mdrnn/network.hpp"

namespace mdrnn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Network network;
  LabelAlphabet alphabet;
  nlohmann::json meta = nlohmann::json::object();
};

std::string serialize_checkpoint(const Network& net, const LabelAlphabet& alphabet,
                                 const nlohmann::json& meta = nlohmann::json::object());
/// Throws DataError on any structural problem.
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Network& net,
                     const LabelAlphabet& alphabet,
                     const nlohmann::json& meta = nlohmann::json::object());
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mdrnn
