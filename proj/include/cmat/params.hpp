#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "cmat/tensor.hpp"

namespace cmat {

// Named, ordered model parameters with per-entry freeze flags. Iteration is
// always in insertion order, which keeps init, optimizer steps, and
// checkpoints deterministic.
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
    bool frozen = false;
  };

  ParameterStore() = default;
  explicit ParameterStore(std::string kind) : kind_(std::move(kind)) {}

  Tensor& add(const std::string& name, Tensor t);
  bool has(const std::string& name) const { return index_.count(name) > 0; }
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;

  std::size_t count() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }

  void set_frozen(const std::string& name, bool frozen);
  bool frozen(const std::string& name) const;
  // Freezes every entry, then thaws those whose name starts with one of the
  // given prefixes. Also syncs each tensor's requires_grad flag.
  void set_trainable_prefixes(const std::vector<std::string>& prefixes);
  void thaw_all();

  void zero_grads();
  // Drops gradient participation on every tensor (target/behavior copies).
  void disable_grads();
  std::size_t total_size() const;

  const std::string& kind() const { return kind_; }
  void set_kind(std::string kind) { kind_ = std::move(kind); }
  std::uint32_t version() const { return version_; }

  // Checkpoint format: magic "CMAT", u32 format version, model-kind tag, a
  // manifest of (name, rank, extents, byte offset), then little-endian f64
  // payloads. Round trips are bit-exact.
  void save(const std::string& path) const;
  void load_values(const std::string& path, const std::string& expected_kind = "");
  static ParameterStore load(const std::string& path, const std::string& expected_kind = "");

  // Deep copy of values; the copy takes no gradients.
  ParameterStore clone_values() const;
  // Overwrites this store's values from another with identical names/shapes.
  void copy_values_from(const ParameterStore& other);

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  std::string kind_;
  std::uint32_t version_ = 1;
};

}  // namespace cmat
