#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "caim/tensor.hpp"

namespace caim {

// IEEE CRC-32 (reflected, poly 0xEDB88320). Pass the previous return value to
// continue a running checksum.
std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t crc = 0);

// Minimal named-tensor container:
//   "CAIMCKPT" | u32 version | u32 count
//   per entry (sorted by name): u32 name_len | name | u8 dtype(1=f64)
//                               | u32 rank | u64 extents[] | f64 payload[]
//   | u32 crc32 of all preceding bytes
// Everything little-endian. Round-trips byte-identically; the CRC is
// validated on load.
class Checkpoint {
  public:
    static constexpr std::uint32_t kVersion = 1;

    void put(const std::string& name, const Tensor& t);
    void put(const std::string& name, Shape shape, std::vector<double> data);
    bool has(const std::string& name) const { return entries_.count(name) != 0; }
    const Shape& shape(const std::string& name) const;
    const std::vector<double>& data(const std::string& name) const;
    std::vector<std::string> names() const;
    std::size_t size() const { return entries_.size(); }

    std::vector<unsigned char> serialize() const;
    static Checkpoint deserialize(const std::vector<unsigned char>& bytes);

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);

  private:
    struct Entry {
        Shape shape;
        std::vector<double> data;
    };
    std::map<std::string, Entry> entries_;  // sorted: serialization is canonical
};

}  // namespace caim
