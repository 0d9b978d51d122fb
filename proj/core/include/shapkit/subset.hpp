#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace shapkit {

// A coalition of d players (image patches). Integer codes are little-endian:
// bit i of the code is player i.
class Subset {
 public:
  Subset() = default;
  explicit Subset(std::size_t players, bool value = false)
      : bits_(players, value ? 1 : 0) {}

  static Subset full(std::size_t players) { return Subset(players, true); }
  static Subset empty(std::size_t players) { return Subset(players, false); }
  static Subset from_bits(std::vector<std::uint8_t> bits);
  static Subset from_code(std::size_t players, std::uint64_t code);
  static Subset from_indices(std::size_t players, std::span<const std::size_t> indices);

  std::size_t players() const { return bits_.size(); }
  std::size_t cardinality() const;
  bool contains(std::size_t i) const { return bits_[i] != 0; }
  bool operator[](std::size_t i) const { return bits_[i] != 0; }
  void set(std::size_t i, bool value) { bits_[i] = value ? 1 : 0; }

  Subset complement() const;
  Subset with(std::size_t i) const;
  Subset without(std::size_t i) const;

  // Requires players() <= 63.
  std::uint64_t code() const;
  std::span<const std::uint8_t> bits() const { return bits_; }
  std::vector<std::size_t> indices() const;
  std::string to_string() const;

  friend bool operator==(const Subset&, const Subset&) = default;

 private:
  std::vector<std::uint8_t> bits_;
};

}  // namespace shapkit
