#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "infil/error.hpp"

namespace infil {

// Dense rank-5 feature map, shape (batch, channels, depth, height, width),
// width fastest. 64-bit floats throughout so oracle comparisons measure
// algorithmic error, not precision error.
struct Tensor5 {
    std::array<std::int64_t, 5> shape{0, 0, 0, 0, 0};
    std::vector<double> data;

    Tensor5() = default;
    Tensor5(std::int64_t n, std::int64_t c, std::int64_t d, std::int64_t h,
            std::int64_t w, double fill = 0.0);

    std::int64_t n() const { return shape[0]; }
    std::int64_t c() const { return shape[1]; }
    std::int64_t d() const { return shape[2]; }
    std::int64_t h() const { return shape[3]; }
    std::int64_t w() const { return shape[4]; }
    std::int64_t size() const {
        return shape[0] * shape[1] * shape[2] * shape[3] * shape[4];
    }
    std::int64_t spatial_size() const { return shape[2] * shape[3] * shape[4]; }

    std::int64_t index(std::int64_t n_, std::int64_t c_, std::int64_t z,
                       std::int64_t y, std::int64_t x) const {
        return (((n_ * shape[1] + c_) * shape[2] + z) * shape[3] + y) * shape[4] + x;
    }
    double at(std::int64_t n_, std::int64_t c_, std::int64_t z, std::int64_t y,
              std::int64_t x) const {
        return data[static_cast<std::size_t>(index(n_, c_, z, y, x))];
    }
    double& at(std::int64_t n_, std::int64_t c_, std::int64_t z, std::int64_t y,
               std::int64_t x) {
        return data[static_cast<std::size_t>(index(n_, c_, z, y, x))];
    }

    bool all_finite() const;
};

// Token matrix view used by attention: rows are tokens, columns features.
struct TokenMatrix {
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    std::vector<double> data;

    TokenMatrix() = default;
    TokenMatrix(std::int64_t r, std::int64_t c, double fill = 0.0);

    double at(std::int64_t r, std::int64_t c_) const {
        return data[static_cast<std::size_t>(r * cols + c_)];
    }
    double& at(std::int64_t r, std::int64_t c_) {
        return data[static_cast<std::size_t>(r * cols + c_)];
    }
    const double* row(std::int64_t r) const { return data.data() + r * cols; }
    double* row(std::int64_t r) { return data.data() + r * cols; }
};

// Flattens a single-batch feature map to tokens: one row per spatial position
// in raster (z, y, x) order, one column per channel. Inverse restores the map.
TokenMatrix tokens_from_feature_map(const Tensor5& map);
Tensor5 feature_map_from_tokens(const TokenMatrix& tokens, std::int64_t d,
                                std::int64_t h, std::int64_t w);

// Named parameter tensors with seeded, order-independent initialization:
// tensor values are drawn from a stream keyed by (store seed, tensor name),
// uniform in +-1/sqrt(fan_in), so the same names yield the same values no
// matter which forward pass touches them first.
class ParamStore {
public:
    explicit ParamStore(std::uint64_t seed) : seed_(seed) {}

    // Fetch-or-create. Re-fetching with a different shape is a contract error
    // naming the tensor.
    Tensor5& param(const std::string& name, const std::array<std::int64_t, 5>& shape,
                   std::int64_t fan_in);

    // Fetch-only access (tests use it to pin specific weights).
    Tensor5& existing(const std::string& name);
    bool has(const std::string& name) const { return tensors_.count(name) != 0; }

    const std::map<std::string, Tensor5>& tensors() const { return tensors_; }
    std::uint64_t seed() const { return seed_; }

    // JSON manifest {format, seed, tensors:[{name, shape, offset}]} next to a
    // little-endian float64 payload, so an external implementation can load
    // bit-identical weights.
    void save(const std::filesystem::path& manifest_path) const;
    static ParamStore load(const std::filesystem::path& manifest_path);

private:
    std::uint64_t seed_;
    std::map<std::string, Tensor5> tensors_;
};

}  // namespace infil
