#include "mung/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "mung/sha256.hpp"

namespace mung {

namespace {

constexpr char kMagic[5] = {'M', 'U', 'N', 'G', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& in, std::size_t& pos) {
    if (pos + 4 > in.size()) throw ValueError("checkpoint: truncated stream");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(in[pos + i]) << (8 * i);
    pos += 4;
    return v;
}

std::uint64_t get_u64(const std::vector<std::uint8_t>& in, std::size_t& pos) {
    if (pos + 8 > in.size()) throw ValueError("checkpoint: truncated stream");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(in[pos + i]) << (8 * i);
    pos += 8;
    return v;
}

}  // namespace

const Tensor& Checkpoint::get(const std::string& name) const {
    for (const auto& [n, t] : entries) {
        if (n == name) return t;
    }
    throw ValueError("checkpoint: no entry named '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
    for (const auto& [n, t] : entries) {
        if (n == name) return true;
    }
    return false;
}

std::vector<std::uint8_t> Checkpoint::serialize() const {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 5);
    put_u64(out, entries.size());
    std::uint64_t offset = 0;
    for (const auto& [name, t] : entries) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        put_u32(out, static_cast<std::uint32_t>(t.shape().size()));
        for (int d : t.shape()) put_u64(out, static_cast<std::uint64_t>(d));
        put_u64(out, offset);
        offset += t.numel() * sizeof(double);
    }
    for (const auto& [name, t] : entries) {
        for (double x : t.data()) {
            std::uint64_t bits;
            std::memcpy(&bits, &x, sizeof(bits));
            put_u64(out, bits);
        }
    }
    return out;
}

Checkpoint Checkpoint::deserialize(const std::vector<std::uint8_t>& bytes) {
    std::size_t pos = 0;
    if (bytes.size() < 5 || std::memcmp(bytes.data(), kMagic, 5) != 0) {
        throw ValueError("checkpoint: bad magic, not a MUNG1 file");
    }
    pos = 5;
    const std::uint64_t n = get_u64(bytes, pos);
    struct Entry {
        std::string name;
        std::vector<int> shape;
        std::uint64_t offset;
        std::size_t count;
    };
    std::vector<Entry> manifest;
    for (std::uint64_t i = 0; i < n; ++i) {
        Entry e;
        const std::uint32_t name_len = get_u32(bytes, pos);
        if (pos + name_len > bytes.size()) throw ValueError("checkpoint: truncated name");
        e.name.assign(bytes.begin() + pos, bytes.begin() + pos + name_len);
        pos += name_len;
        const std::uint32_t rank = get_u32(bytes, pos);
        std::size_t count = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            const std::uint64_t dim = get_u64(bytes, pos);
            e.shape.push_back(static_cast<int>(dim));
            count *= static_cast<std::size_t>(dim);
        }
        e.offset = get_u64(bytes, pos);
        e.count = count;
        manifest.push_back(std::move(e));
    }
    const std::size_t data_base = pos;
    Checkpoint ckpt;
    for (const Entry& e : manifest) {
        std::size_t p = data_base + e.offset;
        if (p + e.count * sizeof(double) > bytes.size()) {
            throw ValueError("checkpoint: truncated data for '" + e.name + "'");
        }
        std::vector<double> data(e.count);
        for (std::size_t i = 0; i < e.count; ++i) {
            std::uint64_t bits = get_u64(bytes, p);
            double x;
            std::memcpy(&x, &bits, sizeof(x));
            data[i] = x;
        }
        ckpt.add(e.name, Tensor(e.shape, std::move(data)));
    }
    return ckpt;
}

void Checkpoint::save(const std::string& path) const {
    const auto bytes = serialize();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ValueError("checkpoint: cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValueError("checkpoint: cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

std::string Checkpoint::digest() const {
    const auto bytes = serialize();
    return Sha256::of(bytes.data(), bytes.size());
}

}  // namespace mung
