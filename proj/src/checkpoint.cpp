#include "ofkit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace ofkit {

namespace {

constexpr char kMagic[5] = {'O', 'F', 'K', 'T', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

template <class T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace

void write_checkpoint(const std::string& path, const std::vector<CheckpointRecord>& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  os.write(kMagic, sizeof(kMagic));
  for (const auto& rec : records) {
    write_pod<uint32_t>(os, static_cast<uint32_t>(rec.name.size()));
    os.write(rec.name.data(), static_cast<std::streamsize>(rec.name.size()));
    write_pod<uint32_t>(os, static_cast<uint32_t>(rec.tensor.rank()));
    for (int64_t d : rec.tensor.shape()) write_pod<uint64_t>(os, static_cast<uint64_t>(d));
    os.write(reinterpret_cast<const char*>(rec.tensor.data()),
             static_cast<std::streamsize>(rec.tensor.numel() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

std::vector<CheckpointRecord> read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  char magic[sizeof(kMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: '" + path + "' is not an OFKT1 file");

  std::vector<CheckpointRecord> records;
  while (true) {
    uint32_t name_len;
    is.read(reinterpret_cast<char*>(&name_len), sizeof(name_len));
    if (is.eof()) break;
    if (!is) throw std::runtime_error("checkpoint: truncated record header");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const uint32_t rank = read_pod<uint32_t>(is);
    std::vector<int64_t> dims(rank);
    for (uint32_t i = 0; i < rank; ++i) dims[i] = static_cast<int64_t>(read_pod<uint64_t>(is));
    Tensor t(dims);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint: truncated tensor data in '" + name + "'");
    records.push_back({std::move(name), std::move(t)});
  }
  return records;
}

std::map<std::string, Tensor> read_checkpoint_map(const std::string& path) {
  std::map<std::string, Tensor> out;
  for (auto& rec : read_checkpoint(path)) out.emplace(std::move(rec.name), std::move(rec.tensor));
  return out;
}

}  // namespace ofkit
