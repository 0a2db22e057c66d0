#include "infil/grid.hpp"

#include <cmath>
#include <string>

namespace infil {

const char* grid_role_name(GridRole role) {
    switch (role) {
        case GridRole::intensity: return "intensity";
        case GridRole::label: return "label";
        case GridRole::distance: return "distance";
        case GridRole::probability: return "probability";
    }
    return "intensity";
}

GridRole grid_role_from_name(const std::string& name) {
    if (name == "intensity") return GridRole::intensity;
    if (name == "label") return GridRole::label;
    if (name == "distance") return GridRole::distance;
    if (name == "probability") return GridRole::probability;
    throw Error("core-grid", "unknown grid role '" + name + "'");
}

VoxelGrid::VoxelGrid(std::int64_t depth, std::int64_t height, std::int64_t width,
                     Spacing sp, GridRole r, double fill)
    : spacing(sp), role(r), dims_{depth, height, width} {
    if (depth < 0 || height < 0 || width < 0)
        throw Error("core-grid", "negative grid dimension");
    if (sp.z <= 0.0 || sp.y <= 0.0 || sp.x <= 0.0)
        throw Error("core-grid", "spacing components must be > 0");
    data_.assign(static_cast<std::size_t>(depth * height * width), fill);
}

bool VoxelGrid::values_in_zone_vocabulary() const {
    for (double v : data_) {
        if (v != 0.0 && v != 1.0 && v != 2.0 && v != 3.0) return false;
    }
    return true;
}

void MultiModalVolume::validate() const {
    for (int m = 1; m < 4; ++m) {
        if (!modalities[m].same_geometry(modalities[0]))
            throw Error("core-grid",
                        "modality " + std::to_string(m) +
                            " disagrees with modality 0 on dims or spacing");
    }
}

VoxelGrid flip_axes(const VoxelGrid& grid, const AxisSet& axes) {
    if (!axes.any()) return grid;
    const std::int64_t D = grid.depth(), H = grid.height(), W = grid.width();
    VoxelGrid out(D, H, W, grid.spacing, grid.role);
    const auto& src = grid.data();
    auto& dst = out.data();
    for (std::int64_t z = 0; z < D; ++z) {
        const std::int64_t sz = axes.depth ? D - 1 - z : z;
        for (std::int64_t y = 0; y < H; ++y) {
            const std::int64_t sy = axes.height ? H - 1 - y : y;
            const std::int64_t row_out = (z * H + y) * W;
            const std::int64_t row_in = (sz * H + sy) * W;
            if (axes.width) {
                for (std::int64_t x = 0; x < W; ++x)
                    dst[static_cast<std::size_t>(row_out + x)] =
                        src[static_cast<std::size_t>(row_in + (W - 1 - x))];
            } else {
                for (std::int64_t x = 0; x < W; ++x)
                    dst[static_cast<std::size_t>(row_out + x)] =
                        src[static_cast<std::size_t>(row_in + x)];
            }
        }
    }
    return out;
}

namespace {

// One quarter turn in the plane of axes (a, b), a < b in (depth,height,width)
// order. out[i_a][i_b] = in[i_b][n_b - 1 - i_a] on the in-plane pair; the
// remaining axis is carried through.
VoxelGrid rot90_once(const VoxelGrid& grid, int a, int b) {
    std::array<std::int64_t, 3> in_dims = grid.dims();
    std::array<std::int64_t, 3> out_dims = in_dims;
    std::swap(out_dims[a], out_dims[b]);

    std::array<double, 3> in_sp{grid.spacing.z, grid.spacing.y, grid.spacing.x};
    std::array<double, 3> out_sp = in_sp;
    std::swap(out_sp[a], out_sp[b]);

    VoxelGrid out(out_dims[0], out_dims[1], out_dims[2],
                  Spacing{out_sp[0], out_sp[1], out_sp[2]}, grid.role);

    std::array<std::int64_t, 3> o{};
    for (o[0] = 0; o[0] < out_dims[0]; ++o[0])
        for (o[1] = 0; o[1] < out_dims[1]; ++o[1])
            for (o[2] = 0; o[2] < out_dims[2]; ++o[2]) {
                std::array<std::int64_t, 3> s = o;
                s[a] = o[b];
                s[b] = in_dims[b] - 1 - o[a];
                out.at(o[0], o[1], o[2]) = grid.at(s[0], s[1], s[2]);
            }
    return out;
}

}  // namespace

VoxelGrid rot90(const VoxelGrid& grid, RotPlane plane, int quarter_turns) {
    int a = 0, b = 1;
    switch (plane) {
        case RotPlane::depth_height: a = 0; b = 1; break;
        case RotPlane::depth_width: a = 0; b = 2; break;
        case RotPlane::height_width: a = 1; b = 2; break;
    }
    int k = ((quarter_turns % 4) + 4) % 4;
    VoxelGrid out = grid;
    for (int i = 0; i < k; ++i) out = rot90_once(out, a, b);
    return out;
}

}  // namespace infil
