#include "cdnz/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace cdnz {
namespace {

static_assert(sizeof(float) == 4);

void AppendString(std::vector<uint8_t>& out, const std::string& s) { out.insert(out.end(), s.begin(), s.end()); }

void AppendFloat(std::vector<uint8_t>& out, float v) {
  uint32_t bits = std::bit_cast<uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((bits >> (8 * i)) & 0xffu));
}

float ReadFloat(const uint8_t* p) {
  uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

bool ValidToken(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (c == ' ' || c == '\n' || c == '\r' || c == '\t') return false;
  }
  return true;
}

Shape ParseShape(const std::string& s, int64_t offset) {
  Shape shape;
  std::istringstream is(s);
  std::string part;
  while (std::getline(is, part, 'x')) {
    try {
      size_t used = 0;
      const long long v = std::stoll(part, &used);
      if (used != part.size() || v <= 0) throw std::invalid_argument(part);
      shape.push_back(v);
    } catch (const std::exception&) {
      throw FormatError("invalid tensor shape '" + s + "'", offset);
    }
  }
  if (shape.empty()) throw FormatError("empty tensor shape", offset);
  return shape;
}

std::string ShapeToken(const Shape& shape) {
  std::string out;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(shape[i]);
  }
  return out;
}

}  // namespace

std::vector<uint8_t> Checkpoint::Serialize() const {
  std::vector<uint8_t> out;
  AppendString(out, kCheckpointMagic);
  for (const auto& [key, value] : metadata) {
    if (!ValidToken(key)) throw InvalidArgument("checkpoint metadata key '" + key + "' must be a single token");
    if (value.find('\n') != std::string::npos) throw InvalidArgument("checkpoint metadata value contains a newline");
    AppendString(out, "meta " + key + " " + value + "\n");
  }
  int64_t offset = 0;
  for (const Entry& e : entries) {
    if (!ValidToken(e.name)) throw InvalidArgument("tensor name '" + e.name + "' must be a single token");
    if (NumElements(e.shape) != static_cast<int64_t>(e.values.size())) {
      throw ShapeError("checkpoint entry '" + e.name + "' has inconsistent shape");
    }
    AppendString(out, "tensor " + e.name + (e.buffer ? " buffer " : " param ") + ShapeToken(e.shape) + " " +
                          std::to_string(offset) + "\n");
    offset += static_cast<int64_t>(e.values.size()) * 4;
  }
  AppendString(out, "data " + std::to_string(offset) + "\n");
  out.reserve(out.size() + static_cast<size_t>(offset));
  for (const Entry& e : entries) {
    for (float v : e.values) AppendFloat(out, v);
  }
  return out;
}

Checkpoint Checkpoint::Parse(std::span<const uint8_t> bytes) {
  const size_t magic_len = sizeof(kCheckpointMagic) - 1;
  if (bytes.size() < magic_len || std::memcmp(bytes.data(), kCheckpointMagic, magic_len) != 0) {
    throw FormatError("not a CDNZ1 checkpoint (bad magic)", 0);
  }
  Checkpoint ck;
  std::vector<int64_t> offsets;
  size_t pos = magic_len;
  int64_t payload_size = -1;
  while (payload_size < 0) {
    const size_t line_start = pos;
    while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    if (pos >= bytes.size()) throw FormatError("unterminated checkpoint header", static_cast<int64_t>(line_start));
    const std::string line(bytes.begin() + static_cast<std::ptrdiff_t>(line_start),
                           bytes.begin() + static_cast<std::ptrdiff_t>(pos));
    ++pos;
    const int64_t at = static_cast<int64_t>(line_start);
    if (line.rfind("meta ", 0) == 0) {
      const auto sp = line.find(' ', 5);
      if (sp == std::string::npos) throw FormatError("malformed meta line", at);
      ck.metadata[line.substr(5, sp - 5)] = line.substr(sp + 1);
    } else if (line.rfind("tensor ", 0) == 0) {
      std::istringstream is(line.substr(7));
      std::string name, kind, shape, off;
      if (!(is >> name >> kind >> shape >> off)) throw FormatError("malformed tensor line", at);
      if (kind != "param" && kind != "buffer") throw FormatError("unknown tensor kind '" + kind + "'", at);
      Entry e;
      e.name = name;
      e.buffer = kind == "buffer";
      e.shape = ParseShape(shape, at);
      try {
        offsets.push_back(std::stoll(off));
      } catch (const std::exception&) {
        throw FormatError("invalid tensor offset '" + off + "'", at);
      }
      ck.entries.push_back(std::move(e));
    } else if (line.rfind("data ", 0) == 0) {
      try {
        payload_size = std::stoll(line.substr(5));
      } catch (const std::exception&) {
        throw FormatError("invalid payload size", at);
      }
      if (payload_size < 0) throw FormatError("negative payload size", at);
    } else {
      throw FormatError("unrecognized checkpoint header line", at);
    }
  }
  const size_t payload = pos;
  if (bytes.size() < payload + static_cast<size_t>(payload_size)) {
    throw FormatError("truncated checkpoint payload", static_cast<int64_t>(bytes.size()));
  }
  int64_t expected = 0;
  for (size_t i = 0; i < ck.entries.size(); ++i) {
    Entry& e = ck.entries[i];
    const int64_t count = NumElements(e.shape);
    if (offsets[i] != expected) throw FormatError("tensor '" + e.name + "' has inconsistent offset", static_cast<int64_t>(payload));
    if (expected + count * 4 > payload_size) throw FormatError("tensor '" + e.name + "' exceeds payload", static_cast<int64_t>(payload));
    e.values.resize(static_cast<size_t>(count));
    const uint8_t* src = bytes.data() + payload + expected;
    for (int64_t k = 0; k < count; ++k) e.values[static_cast<size_t>(k)] = ReadFloat(src + 4 * k);
    expected += count * 4;
  }
  if (expected != payload_size) throw FormatError("payload size does not match tensor table", static_cast<int64_t>(payload));
  return ck;
}

void Checkpoint::Save(const std::filesystem::path& path) const {
  const std::vector<uint8_t> bytes = Serialize();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileNotFound("cannot create checkpoint '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing checkpoint '" + path.string() + "'");
}

Checkpoint Checkpoint::Load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileNotFound("cannot open checkpoint '" + path.string() + "'");
  const std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return Parse(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.detail(), e.offset());
  }
}

const std::string& Checkpoint::Meta(const std::string& key) const {
  const auto it = metadata.find(key);
  if (it == metadata.end()) throw CheckpointMismatch("checkpoint lacks metadata key '" + key + "'");
  return it->second;
}

double Checkpoint::MetaDouble(const std::string& key) const {
  const std::string& v = Meta(key);
  try {
    return std::stod(v);
  } catch (const std::exception&) {
    throw CheckpointMismatch("checkpoint metadata '" + key + "' is not numeric: '" + v + "'");
  }
}

template <typename T>
std::vector<Checkpoint::Entry> CaptureTensors(const ParamStore<T>& store) {
  std::vector<Checkpoint::Entry> out;
  for (const Parameter<T>* p : store.parameters()) {
    out.push_back({p->name, false, p->value.shape(), std::vector<float>(p->value.data().begin(), p->value.data().end())});
  }
  for (const auto* b : store.buffers()) {
    out.push_back({b->name, true, b->value.shape(), std::vector<float>(b->value.data().begin(), b->value.data().end())});
  }
  return out;
}

template <typename T>
void RestoreTensors(const std::vector<Checkpoint::Entry>& entries, ParamStore<T>& store) {
  const auto params = store.parameters();
  const auto buffers = store.buffers();
  if (entries.size() != params.size() + buffers.size()) {
    throw CheckpointMismatch("checkpoint holds " + std::to_string(entries.size()) + " tensors, network expects " +
                             std::to_string(params.size() + buffers.size()));
  }
  std::vector<Tensor<T>*> targets;
  for (const auto& e : entries) {
    Tensor<T>* target = nullptr;
    if (e.buffer) {
      if (auto* b = store.FindBuffer(e.name)) target = &b->value;
    } else if (auto* p = store.FindParameter(e.name)) {
      target = &p->value;
    }
    if (!target) throw CheckpointMismatch("checkpoint tensor '" + e.name + "' not present in network");
    if (target->shape() != e.shape) {
      throw CheckpointMismatch("checkpoint tensor '" + e.name + "' has shape " + ShapeToString(e.shape) +
                               ", network expects " + ShapeToString(target->shape()));
    }
    targets.push_back(target);
  }
  for (size_t i = 0; i < entries.size(); ++i) {
    std::vector<T> values(entries[i].values.begin(), entries[i].values.end());
    *targets[i] = Tensor<T>(entries[i].shape, std::move(values));
  }
}

template std::vector<Checkpoint::Entry> CaptureTensors<float>(const ParamStore<float>&);
template std::vector<Checkpoint::Entry> CaptureTensors<double>(const ParamStore<double>&);
template void RestoreTensors<float>(const std::vector<Checkpoint::Entry>&, ParamStore<float>&);
template void RestoreTensors<double>(const std::vector<Checkpoint::Entry>&, ParamStore<double>&);

}  // namespace cdnz
