#ifndef CDNZ_CHECKPOINT_H_
#define CDNZ_CHECKPOINT_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cdnz/nn.h"

namespace cdnz {

// Versioned network snapshot.
//
//   CDNZ1\n
//   meta <key> <value>\n                       (sorted by key)
//   tensor <name> <param|buffer> <d0>x<d1>... <byte-offset>\n
//   data <payload-bytes>\n
//   <payload: little-endian float32 values, tensors back to back>
//
// Offsets are relative to the payload start. Serialize(Parse(b)) == b.
struct Checkpoint {
  struct Entry {
    std::string name;
    bool buffer = false;
    Shape shape;
    std::vector<float> values;

    bool operator==(const Entry&) const = default;
  };

  std::map<std::string, std::string> metadata;
  std::vector<Entry> entries;

  std::vector<uint8_t> Serialize() const;
  static Checkpoint Parse(std::span<const uint8_t> bytes);
  void Save(const std::filesystem::path& path) const;
  static Checkpoint Load(const std::filesystem::path& path);

  // Throws CheckpointMismatch if the key is missing.
  const std::string& Meta(const std::string& key) const;
  double MetaDouble(const std::string& key) const;
  bool operator==(const Checkpoint&) const = default;
};

inline constexpr char kCheckpointMagic[] = "CDNZ1\n";

template <typename T>
std::vector<Checkpoint::Entry> CaptureTensors(const ParamStore<T>& store);
// Requires exactly the same tensor names and shapes; otherwise throws
// CheckpointMismatch and leaves the store untouched.
template <typename T>
void RestoreTensors(const std::vector<Checkpoint::Entry>& entries, ParamStore<T>& store);

}  // namespace cdnz

#endif  // CDNZ_CHECKPOINT_H_
