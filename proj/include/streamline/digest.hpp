#pragma once

#include <cstdint>
#include <sstream>
#include <string>

namespace streamline {

// FNV-1a 64-bit; used for model and parameter fingerprints, not security.
class Fnv64 {
public:
    void bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h_ ^= p[i];
            h_ *= 0x100000001b3ULL;
        }
    }
    // Text plus a NUL separator so adjacent fields cannot alias.
    void text(const std::string& s) {
        bytes(s.data(), s.size());
        bytes("\0", 1);
    }
    std::uint64_t value() const { return h_; }
    std::string hex() const {
        std::ostringstream out;
        out << std::hex;
        out.width(16);
        out.fill('0');
        out << h_;
        return out.str();
    }

private:
    std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

} // namespace streamline
