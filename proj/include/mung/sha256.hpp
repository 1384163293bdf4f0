#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mung {

// Minimal SHA-256 (FIPS 180-4), used for checkpoint/config fingerprints.
class Sha256 {
public:
    Sha256();
    void update(const void* data, std::size_t len);
    void update(const std::string& s) { update(s.data(), s.size()); }
    // Finalizes and returns the lowercase hex digest. The object must not be
    // updated afterwards.
    std::string hex_digest();

    static std::string of(const void* data, std::size_t len);
    static std::string of_file(const std::string& path);

private:
    void process_block(const std::uint8_t* block);
    std::uint32_t state_[8];
    std::uint8_t buffer_[64];
    std::size_t buffer_len_ = 0;
    std::uint64_t total_bits_ = 0;
};

}  // namespace mung
