#include "caim/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace caim {

namespace {

std::array<std::uint32_t, 256> make_crc_table() {
    std::array<std::uint32_t, 256> table{};
    for (std::uint32_t i = 0; i < 256; ++i) {
        std::uint32_t c = i;
        for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
        table[i] = c;
    }
    return table;
}

const char kMagic[8] = {'C', 'A', 'I', 'M', 'C', 'K', 'P', 'T'};

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::vector<unsigned char>& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    put_u64(out, bits);
}

struct Reader {
    const std::vector<unsigned char>& b;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > b.size()) throw std::runtime_error("checkpoint: truncated file");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() {
        std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }
    unsigned char u8() {
        need(1);
        return b[pos++];
    }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(b.data() + pos), n);
        pos += n;
        return s;
    }
};

}  // namespace

std::uint32_t crc32(const void* data, std::size_t len, std::uint32_t crc) {
    static const auto table = make_crc_table();
    const unsigned char* p = static_cast<const unsigned char*>(data);
    std::uint32_t c = crc ^ 0xFFFFFFFFu;
    for (std::size_t i = 0; i < len; ++i) c = table[(c ^ p[i]) & 0xff] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

void Checkpoint::put(const std::string& name, const Tensor& t) {
    put(name, t.shape(), t.data());
}

void Checkpoint::put(const std::string& name, Shape shape, std::vector<double> data) {
    if (shape_size(shape) != data.size())
        throw std::invalid_argument("checkpoint: shape/data mismatch for '" + name + "'");
    entries_[name] = Entry{std::move(shape), std::move(data)};
}

const Shape& Checkpoint::shape(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::runtime_error("checkpoint: missing entry '" + name + "'");
    return it->second.shape;
}

const std::vector<double>& Checkpoint::data(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw std::runtime_error("checkpoint: missing entry '" + name + "'");
    return it->second.data;
}

std::vector<std::string> Checkpoint::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, entry] : entries_) out.push_back(name);
    return out;
}

std::vector<unsigned char> Checkpoint::serialize() const {
    std::vector<unsigned char> out;
    out.insert(out.end(), kMagic, kMagic + 8);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& [name, entry] : entries_) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        out.push_back(1);  // dtype: f64
        put_u32(out, static_cast<std::uint32_t>(entry.shape.size()));
        for (std::size_t d : entry.shape) put_u64(out, d);
        for (double v : entry.data) put_f64(out, v);
    }
    put_u32(out, crc32(out.data(), out.size()));
    return out;
}

Checkpoint Checkpoint::deserialize(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 8 + 4 + 4 + 4) throw std::runtime_error("checkpoint: truncated file");
    std::uint32_t stored = 0;
    for (int i = 0; i < 4; ++i)
        stored |= static_cast<std::uint32_t>(bytes[bytes.size() - 4 + i]) << (8 * i);
    if (crc32(bytes.data(), bytes.size() - 4) != stored)
        throw std::runtime_error("checkpoint: CRC mismatch, file is corrupt");

    Reader r{bytes};
    if (r.str(8) != std::string(kMagic, 8)) throw std::runtime_error("checkpoint: bad magic");
    if (r.u32() != kVersion) throw std::runtime_error("checkpoint: unsupported version");
    std::uint32_t count = r.u32();
    Checkpoint ckpt;
    for (std::uint32_t e = 0; e < count; ++e) {
        std::uint32_t name_len = r.u32();
        std::string name = r.str(name_len);
        if (r.u8() != 1) throw std::runtime_error("checkpoint: unknown dtype in '" + name + "'");
        std::uint32_t rank = r.u32();
        Shape shape(rank);
        for (std::uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<std::size_t>(r.u64());
        std::vector<double> data(shape_size(shape));
        for (double& v : data) v = r.f64();
        ckpt.entries_[name] = Entry{std::move(shape), std::move(data)};
    }
    return ckpt;
}

void Checkpoint::save(const std::string& path) const {
    auto bytes = serialize();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

}  // namespace caim
