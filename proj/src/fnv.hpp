#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace landsar::detail {

struct Fnv1a {
    std::uint64_t h = 0xcbf29ce484222325ull;

    void bytes(const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 0x100000001b3ull;
        }
    }
    void value(double d) {
        if (d == 0.0) d = 0.0;  // fold -0
        bytes(&d, sizeof d);
    }
    void value(std::uint64_t v) { bytes(&v, sizeof v); }
    void text(std::string_view s) {
        value(static_cast<std::uint64_t>(s.size()));
        bytes(s.data(), s.size());
    }
    void vec(const Eigen::Vector3d& v) {
        for (int i = 0; i < 3; ++i) value(v[i]);
    }
};

}  // namespace landsar::detail
