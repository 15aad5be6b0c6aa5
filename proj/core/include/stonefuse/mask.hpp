#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <vector>

namespace stonefuse {

/// Binary voxel volume, row-major (z, y, x).
struct BinaryMask {
    std::array<std::size_t, 3> dims{};
    std::vector<std::uint8_t> voxels;

    BinaryMask() = default;
    BinaryMask(std::array<std::size_t, 3> d, std::uint8_t fill = 0)
        : dims(d), voxels(d[0] * d[1] * d[2], fill) {}

    std::size_t size() const { return voxels.size(); }
    std::uint8_t& at(std::size_t z, std::size_t y, std::size_t x) {
        return voxels[(z * dims[1] + y) * dims[2] + x];
    }
    std::uint8_t at(std::size_t z, std::size_t y, std::size_t x) const {
        return voxels[(z * dims[1] + y) * dims[2] + x];
    }
    std::size_t count() const {
        std::size_t n = 0;
        for (std::uint8_t v : voxels) n += (v != 0);
        return n;
    }
    bool empty_mask() const { return count() == 0; }
};

}  // namespace stonefuse
