#include "nn/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "common/error.hpp"
#include "common/hash.hpp"

namespace ply::nn {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'P', 'L', 'Y', 'T', 'N', 'S', 'R', '1'};
constexpr size_t kAlign = 64;

size_t aligned(size_t n) { return (n + kAlign - 1) / kAlign * kAlign; }

static_assert(std::endian::native == std::endian::little,
              "archive I/O assumes a little-endian host");

// Lays tensors into one contiguous buffer, returning per-name offsets.
std::vector<char> build_blob(const std::map<std::string, Tensor>& tensors,
                             std::map<std::string, size_t>& offsets) {
  size_t size = 0;
  for (const auto& [name, t] : tensors) {
    offsets[name] = size;
    size = aligned(size + t.data.size() * sizeof(float));
  }
  std::vector<char> blob(size, 0);
  for (const auto& [name, t] : tensors)
    std::memcpy(blob.data() + offsets.at(name), t.data.data(), t.data.size() * sizeof(float));
  return blob;
}

}  // namespace

void Archive::put(const std::string& name, Tensor t) { tensors_[name] = std::move(t); }

const Tensor& Archive::get(const std::string& name) const {
  const auto it = tensors_.find(name);
  if (it == tensors_.end()) fail(ErrorKind::Shape, "archive has no tensor '" + name + "'");
  return it->second;
}

std::vector<std::string> Archive::names() const {
  std::vector<std::string> out;
  for (const auto& [name, t] : tensors_) out.push_back(name);
  return out;
}

int64_t Archive::total_params() const {
  int64_t n = 0;
  for (const auto& [name, t] : tensors_) n += t.numel();
  return n;
}

std::string Archive::content_hash() const {
  std::map<std::string, size_t> offsets;
  const auto blob = build_blob(tensors_, offsets);
  return fnv1a64_hex(blob.data(), blob.size());
}

void Archive::save(const std::string& path) const {
  std::map<std::string, size_t> offsets;
  const auto blob = build_blob(tensors_, offsets);

  json manifest;
  manifest["metadata"] = json::parse(metadata_json_);
  manifest["blob_size"] = blob.size();
  manifest["blob_hash"] = fnv1a64_hex(blob.data(), blob.size());
  json names = json::object();
  for (const auto& [name, t] : tensors_) {
    json e;
    e["shape"] = t.shape;
    e["offset"] = offsets.at(name);
    names[name] = e;
  }
  manifest["tensors"] = names;
  const std::string mtext = manifest.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot open '" + path + "' for writing");
  out.write(kMagic, sizeof(kMagic));
  const uint64_t mlen = mtext.size();
  out.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
  out.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
  const size_t header = sizeof(kMagic) + sizeof(mlen) + mtext.size();
  const std::string pad(aligned(header) - header, '\0');
  out.write(pad.data(), static_cast<std::streamsize>(pad.size()));
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) fail(ErrorKind::Io, "short write to '" + path + "'");
}

Archive Archive::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open '" + path + "'");

  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    fail(ErrorKind::Io, "'" + path + "' is not a tensor archive (bad magic)");
  uint64_t mlen = 0;
  in.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
  std::string mtext(mlen, '\0');
  in.read(mtext.data(), static_cast<std::streamsize>(mlen));
  if (!in) fail(ErrorKind::Io, "truncated manifest in '" + path + "'");
  const size_t header = sizeof(kMagic) + sizeof(mlen) + mlen;
  in.seekg(static_cast<std::streamoff>(aligned(header)));

  json manifest;
  try {
    manifest = json::parse(mtext);
  } catch (const json::exception& e) {
    fail(ErrorKind::Parse, std::string("archive manifest is not valid JSON: ") + e.what());
  }

  const auto blob_size = manifest.at("blob_size").get<size_t>();
  std::vector<char> blob(blob_size);
  in.read(blob.data(), static_cast<std::streamsize>(blob_size));
  if (!in || static_cast<size_t>(in.gcount()) != blob_size)
    fail(ErrorKind::Io, "blob shorter than manifest extent in '" + path + "'");

  const auto want_hash = manifest.at("blob_hash").get<std::string>();
  const auto got_hash = fnv1a64_hex(blob.data(), blob.size());
  if (want_hash != got_hash)
    fail(ErrorKind::Io, "blob hash mismatch in '" + path + "': manifest " + want_hash + ", actual " + got_hash);

  Archive a;
  a.metadata_json_ = manifest.at("metadata").dump();
  for (const auto& [name, e] : manifest.at("tensors").items()) {
    Tensor t(e.at("shape").get<std::vector<int64_t>>());
    const auto offset = e.at("offset").get<size_t>();
    const size_t bytes = t.data.size() * sizeof(float);
    if (offset + bytes > blob.size())
      fail(ErrorKind::Shape, "tensor '" + name + "' extent exceeds blob in '" + path + "'");
    std::memcpy(t.data.data(), blob.data() + offset, bytes);
    a.tensors_[name] = std::move(t);
  }
  return a;
}

}  // namespace ply::nn
