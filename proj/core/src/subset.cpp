#include "shapkit/subset.hpp"

#include "shapkit/errors.hpp"

namespace shapkit {

Subset Subset::from_bits(std::vector<std::uint8_t> bits) {
  Subset s;
  for (auto& b : bits) b = b ? 1 : 0;
  s.bits_ = std::move(bits);
  return s;
}

Subset Subset::from_code(std::size_t players, std::uint64_t code) {
  if (players > 63) throw CapabilityError("subset codes support at most 63 players");
  if (players < 64 && (code >> players) != 0) {
    throw UsageError("subset code has bits beyond the player count");
  }
  Subset s(players);
  for (std::size_t i = 0; i < players; ++i) s.bits_[i] = (code >> i) & 1u;
  return s;
}

Subset Subset::from_indices(std::size_t players, std::span<const std::size_t> indices) {
  Subset s(players);
  for (std::size_t i : indices) {
    if (i >= players) throw UsageError("subset index out of range");
    s.bits_[i] = 1;
  }
  return s;
}

std::size_t Subset::cardinality() const {
  std::size_t n = 0;
  for (auto b : bits_) n += b;
  return n;
}

Subset Subset::complement() const {
  Subset s = *this;
  for (auto& b : s.bits_) b = 1 - b;
  return s;
}

Subset Subset::with(std::size_t i) const {
  Subset s = *this;
  s.bits_.at(i) = 1;
  return s;
}

Subset Subset::without(std::size_t i) const {
  Subset s = *this;
  s.bits_.at(i) = 0;
  return s;
}

std::uint64_t Subset::code() const {
  if (bits_.size() > 63) throw CapabilityError("subset codes support at most 63 players");
  std::uint64_t code = 0;
  for (std::size_t i = 0; i < bits_.size(); ++i) {
    code |= static_cast<std::uint64_t>(bits_[i]) << i;
  }
  return code;
}

std::vector<std::size_t> Subset::indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < bits_.size(); ++i) {
    if (bits_[i]) out.push_back(i);
  }
  return out;
}

std::string Subset::to_string() const {
  std::string s;
  for (auto b : bits_) s.push_back(b ? '1' : '0');
  return s;
}

}  // namespace shapkit
