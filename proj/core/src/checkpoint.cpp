#include "blm/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace blm {

namespace {

constexpr const char* kVersion = "blmckpt-v1";

std::array<uint32_t, 256> make_crc_table() {
  std::array<uint32_t, 256> t{};
  for (uint32_t i = 0; i < 256; ++i) {
    uint32_t c = i;
    for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
    t[i] = c;
  }
  return t;
}

// float32 little-endian serialization; assumes a little-endian host (asserted
// at startup on the first save).
std::vector<unsigned char> to_f32_bytes(const Tensor& t) {
  std::vector<unsigned char> out(t.size() * 4);
  for (size_t i = 0; i < t.size(); ++i) {
    const float f = static_cast<float>(t.v[i]);
    std::memcpy(out.data() + i * 4, &f, 4);
  }
  return out;
}

}  // namespace

uint32_t crc32(const void* data, size_t len) {
  static const auto table = make_crc_table();
  uint32_t c = 0xFFFFFFFFu;
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) c = table[(c ^ p[i]) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

uint64_t params_checksum(const std::vector<Param*>& params) {
  uint64_t h = 14695981039346656037ull;
  for (const Param* p : params) {
    for (double d : p->value.v) {
      unsigned char b[8];
      std::memcpy(b, &d, 8);
      for (unsigned char c : b) {
        h ^= c;
        h *= 1099511628211ull;
      }
    }
  }
  return h;
}

void save_checkpoint(const std::string& dir, const CheckpointMeta& meta,
                     const std::vector<Param*>& params) {
  static_assert(std::endian::native == std::endian::little,
                "checkpoint format is little-endian");
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ostringstream manifest;
  manifest << kVersion << "\n";
  manifest << "role " << meta.role << "\n";
  manifest << "stage " << meta.stage << "\n";
  manifest << "config_hash " << std::hex << meta.config_hash << std::dec << "\n";
  for (const Param* p : params) {
    const auto bytes = to_f32_bytes(p->value);
    manifest << "blob " << p->name << " " << p->value.rows << " " << p->value.cols
             << " " << std::hex << crc32(bytes.data(), bytes.size()) << std::dec
             << "\n";
    std::ofstream f(dir + "/" + p->name + ".bin", std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot write blob " + p->name);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  }
  std::ofstream mf(dir + "/manifest", std::ios::binary);
  if (!mf) throw std::runtime_error("checkpoint: cannot write manifest in " + dir);
  mf << manifest.str();
}

namespace {

struct BlobEntry {
  std::string name;
  int rows = 0, cols = 0;
  uint32_t crc = 0;
};

struct Manifest {
  CheckpointMeta meta;
  std::vector<BlobEntry> blobs;
};

Manifest parse_manifest(const std::string& dir) {
  std::ifstream f(dir + "/manifest", std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot read manifest in " + dir);
  std::string version;
  std::getline(f, version);
  if (version != kVersion)
    throw std::runtime_error("checkpoint: version mismatch in " + dir + " (found '" +
                             version + "', expected '" + kVersion + "')");
  Manifest m;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string key;
    is >> key;
    if (key == "role") {
      is >> m.meta.role;
    } else if (key == "stage") {
      is >> m.meta.stage;
    } else if (key == "config_hash") {
      is >> std::hex >> m.meta.config_hash;
    } else if (key == "blob") {
      BlobEntry b;
      is >> b.name >> b.rows >> b.cols >> std::hex >> b.crc;
      if (!is) throw std::runtime_error("checkpoint: malformed blob line: " + line);
      m.blobs.push_back(b);
    } else {
      throw std::runtime_error("checkpoint: unknown manifest key: " + key);
    }
  }
  return m;
}

}  // namespace

CheckpointMeta read_checkpoint_meta(const std::string& dir) {
  return parse_manifest(dir).meta;
}

namespace {

void load_blob(const std::string& dir, const BlobEntry& entry, Param* p) {
  if (entry.rows != p->value.rows || entry.cols != p->value.cols)
    throw std::runtime_error("checkpoint: shape mismatch for blob '" + p->name + "'");

  std::ifstream f(dir + "/" + p->name + ".bin", std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: missing blob '" + p->name + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), {});
  if (bytes.size() != p->value.size() * 4)
    throw std::runtime_error("checkpoint: blob size mismatch for '" + p->name + "'");
  if (crc32(bytes.data(), bytes.size()) != entry.crc)
    throw std::runtime_error("checkpoint: checksum mismatch for blob '" + p->name + "'");
  for (size_t i = 0; i < p->value.size(); ++i) {
    float fv;
    std::memcpy(&fv, bytes.data() + i * 4, 4);
    p->value.v[i] = static_cast<double>(fv);
  }
}

const BlobEntry* find_blob(const Manifest& m, const std::string& name) {
  for (const auto& b : m.blobs)
    if (b.name == name) return &b;
  return nullptr;
}

}  // namespace

CheckpointMeta load_checkpoint(const std::string& dir,
                               const std::vector<Param*>& params,
                               uint64_t expected_config_hash) {
  const Manifest m = parse_manifest(dir);
  if (expected_config_hash != 0 && m.meta.config_hash != expected_config_hash)
    throw std::runtime_error("checkpoint: config-hash mismatch in " + dir);

  for (Param* p : params) {
    const BlobEntry* entry = find_blob(m, p->name);
    if (!entry)
      throw std::runtime_error("checkpoint: parameter '" + p->name +
                               "' absent from manifest in " + dir);
    load_blob(dir, *entry, p);
  }
  return m.meta;
}

size_t load_checkpoint_partial(const std::string& dir, const std::vector<Param*>& params) {
  const Manifest m = parse_manifest(dir);
  size_t loaded = 0;
  for (Param* p : params) {
    if (const BlobEntry* entry = find_blob(m, p->name)) {
      load_blob(dir, *entry, p);
      ++loaded;
    }
  }
  return loaded;
}

}  // namespace blm
