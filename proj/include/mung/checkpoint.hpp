#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mung/tensor.hpp"

namespace mung {

// Portable checkpoint container.
//
// Layout (little-endian throughout):
//   bytes  0..4   magic "MUNG1"
//   u64            entry count
//   per entry:     u32 name length, UTF-8 name bytes,
//                  u32 rank, u64 per dimension,
//                  u64 byte offset into the data section
//   data section:  64-bit IEEE-754 floats, row-major, in entry order
struct Checkpoint {
    std::vector<std::pair<std::string, Tensor>> entries;

    void add(const std::string& name, const Tensor& t) { entries.emplace_back(name, t); }
    const Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const;

    std::vector<std::uint8_t> serialize() const;
    void save(const std::string& path) const;
    static Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);
    static Checkpoint load(const std::string& path);

    // SHA-256 of the serialized byte stream.
    std::string digest() const;
};

}  // namespace mung
