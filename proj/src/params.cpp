#include "cmat/params.hpp"

#include <cstring>
#include <fstream>

namespace cmat {

namespace {

constexpr char kMagic[4] = {'C', 'M', 'A', 'T'};

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(b), 8);
}

void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw IoError("checkpoint truncated while reading u32");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw IoError("checkpoint truncated while reading u64");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

std::string read_string(std::istream& is) {
  std::uint32_t n = read_u32(is);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw IoError("checkpoint truncated while reading string");
  return s;
}

struct ManifestEntry {
  std::string name;
  Shape shape;
  std::uint64_t offset;
};

std::vector<ManifestEntry> read_header(std::istream& is, std::string& kind) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) throw IoError("checkpoint magic mismatch, not a CMAT file");
  std::uint32_t version = read_u32(is);
  if (version != 1) throw IoError("unsupported checkpoint format version " + std::to_string(version));
  kind = read_string(is);
  std::uint32_t count = read_u32(is);
  std::vector<ManifestEntry> manifest(count);
  for (auto& m : manifest) {
    m.name = read_string(is);
    std::uint32_t rank = read_u32(is);
    m.shape.resize(rank);
    for (auto& e : m.shape) e = static_cast<int>(read_u64(is));
    m.offset = read_u64(is);
  }
  return manifest;
}

}  // namespace

Tensor& ParameterStore::add(const std::string& name, Tensor t) {
  if (index_.count(name)) throw ContractError("parameter name already registered: " + name);
  index_[name] = entries_.size();
  entries_.push_back({name, std::move(t), false});
  return entries_.back().tensor;
}

Tensor& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  return entries_[it->second].tensor;
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  return entries_[it->second].tensor;
}

void ParameterStore::set_frozen(const std::string& name, bool frozen) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  entries_[it->second].frozen = frozen;
  entries_[it->second].tensor.set_requires_grad(!frozen);
}

bool ParameterStore::frozen(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter: " + name);
  return entries_[it->second].frozen;
}

void ParameterStore::set_trainable_prefixes(const std::vector<std::string>& prefixes) {
  for (auto& e : entries_) {
    bool trainable = false;
    for (const auto& p : prefixes) {
      if (e.name.rfind(p, 0) == 0) {
        trainable = true;
        break;
      }
    }
    e.frozen = !trainable;
    e.tensor.set_requires_grad(trainable);
  }
}

void ParameterStore::thaw_all() {
  for (auto& e : entries_) {
    e.frozen = false;
    e.tensor.set_requires_grad(true);
  }
}

void ParameterStore::zero_grads() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

void ParameterStore::disable_grads() {
  for (auto& e : entries_) e.tensor.set_requires_grad(false);
}

std::size_t ParameterStore::total_size() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::size_t>(e.tensor.size());
  return n;
}

void ParameterStore::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, 4);
  write_u32(os, version_);
  write_string(os, kind_);
  write_u32(os, static_cast<std::uint32_t>(entries_.size()));
  std::uint64_t offset = 0;
  for (const auto& e : entries_) {
    write_string(os, e.name);
    write_u32(os, static_cast<std::uint32_t>(e.tensor.shape().size()));
    for (int ext : e.tensor.shape()) write_u64(os, static_cast<std::uint64_t>(ext));
    write_u64(os, offset);
    offset += static_cast<std::uint64_t>(e.tensor.size()) * 8;
  }
  for (const auto& e : entries_) {
    os.write(reinterpret_cast<const char*>(e.tensor.values().data()),
             static_cast<std::streamsize>(e.tensor.size()) * 8);
  }
  if (!os) throw IoError("failed writing checkpoint: " + path);
}

void ParameterStore::load_values(const std::string& path, const std::string& expected_kind) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  std::string kind;
  auto manifest = read_header(is, kind);
  if (!expected_kind.empty() && kind != expected_kind) {
    throw IoError("checkpoint model kind '" + kind + "' does not match requested '" + expected_kind + "'");
  }
  if (!kind_.empty() && kind != kind_) {
    throw IoError("checkpoint model kind '" + kind + "' does not match store kind '" + kind_ + "'");
  }
  if (manifest.size() != entries_.size()) {
    throw IoError("checkpoint has " + std::to_string(manifest.size()) + " parameters, store expects " +
                  std::to_string(entries_.size()));
  }
  std::streampos payload_start = is.tellg();
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto& m = manifest[i];
    auto it = index_.find(m.name);
    if (it == index_.end()) throw IoError("checkpoint parameter not in store: " + m.name);
    Tensor& t = entries_[it->second].tensor;
    if (t.shape() != m.shape) {
      throw IoError("shape mismatch for " + m.name + ": checkpoint " + shape_str(m.shape) + " vs store " +
                    shape_str(t.shape()));
    }
    is.seekg(payload_start + static_cast<std::streamoff>(m.offset));
    is.read(reinterpret_cast<char*>(t.values().data()), static_cast<std::streamsize>(t.size()) * 8);
    if (!is) throw IoError("checkpoint truncated while reading payload of " + m.name);
  }
}

ParameterStore ParameterStore::load(const std::string& path, const std::string& expected_kind) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  std::string kind;
  auto manifest = read_header(is, kind);
  if (!expected_kind.empty() && kind != expected_kind) {
    throw IoError("checkpoint model kind '" + kind + "' does not match requested '" + expected_kind + "'");
  }
  ParameterStore store(kind);
  std::streampos payload_start = is.tellg();
  for (const auto& m : manifest) {
    Tensor t = Tensor::zeros(m.shape);
    is.seekg(payload_start + static_cast<std::streamoff>(m.offset));
    is.read(reinterpret_cast<char*>(t.values().data()), static_cast<std::streamsize>(t.size()) * 8);
    if (!is) throw IoError("checkpoint truncated while reading payload of " + m.name);
    store.add(m.name, std::move(t));
  }
  return store;
}

ParameterStore ParameterStore::clone_values() const {
  ParameterStore copy(kind_);
  for (const auto& e : entries_) {
    Tensor t = Tensor::from_eigen(e.tensor.shape(), e.tensor.values());
    copy.add(e.name, std::move(t));
  }
  return copy;
}

void ParameterStore::copy_values_from(const ParameterStore& other) {
  if (other.entries_.size() != entries_.size()) {
    throw ContractError("copy_values_from: stores have different parameter counts");
  }
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& src = other.entries_[i];
    auto& dst = entries_[i];
    if (src.name != dst.name || src.tensor.shape() != dst.tensor.shape()) {
      throw ContractError("copy_values_from: mismatched entry " + src.name + " vs " + dst.name);
    }
    dst.tensor.values() = src.tensor.values();
  }
}

}  // namespace cmat
