#include "infil/io.hpp"

#include <zlib.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

namespace infil {

namespace {

namespace fs = std::filesystem;

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() &&
           s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// ---------------------------------------------------------------------------
// Little-endian (de)serialization, independent of host byte order.

void put_u8(std::vector<unsigned char>& buf, std::size_t off, std::uint8_t v) {
    buf[off] = v;
}
void put_i16(std::vector<unsigned char>& buf, std::size_t off, std::int16_t v) {
    buf[off] = static_cast<unsigned char>(v & 0xff);
    buf[off + 1] = static_cast<unsigned char>((v >> 8) & 0xff);
}
void put_i32(std::vector<unsigned char>& buf, std::size_t off, std::int32_t v) {
    for (int i = 0; i < 4; ++i)
        buf[off + i] = static_cast<unsigned char>((static_cast<std::uint32_t>(v) >> (8 * i)) & 0xff);
}
void put_f32(std::vector<unsigned char>& buf, std::size_t off, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    for (int i = 0; i < 4; ++i)
        buf[off + i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
}

std::uint16_t get_u16(const unsigned char* p, bool swap) {
    std::uint16_t v = static_cast<std::uint16_t>(p[0] | (p[1] << 8));
    return swap ? static_cast<std::uint16_t>((v >> 8) | (v << 8)) : v;
}
std::int16_t get_i16(const unsigned char* p, bool swap) {
    return static_cast<std::int16_t>(get_u16(p, swap));
}
std::uint32_t get_u32(const unsigned char* p, bool swap) {
    std::uint32_t v = static_cast<std::uint32_t>(p[0]) |
                      (static_cast<std::uint32_t>(p[1]) << 8) |
                      (static_cast<std::uint32_t>(p[2]) << 16) |
                      (static_cast<std::uint32_t>(p[3]) << 24);
    if (swap)
        v = ((v & 0x000000ffu) << 24) | ((v & 0x0000ff00u) << 8) |
            ((v & 0x00ff0000u) >> 8) | ((v & 0xff000000u) >> 24);
    return v;
}
std::int32_t get_i32(const unsigned char* p, bool swap) {
    return static_cast<std::int32_t>(get_u32(p, swap));
}
float get_f32(const unsigned char* p, bool swap) {
    std::uint32_t bits = get_u32(p, swap);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

// ---------------------------------------------------------------------------
// NIfTI-1

constexpr int kDtUint8 = 2;
constexpr int kDtInt16 = 4;
constexpr int kDtFloat32 = 16;
constexpr std::int32_t kHeaderSize = 348;
constexpr std::int32_t kVoxOffset = 352;

int dtype_bytes(int code) {
    switch (code) {
        case kDtUint8: return 1;
        case kDtInt16: return 2;
        case kDtFloat32: return 4;
    }
    return 0;
}

struct GzReader {
    gzFile f = nullptr;
    explicit GzReader(const fs::path& path) {
        f = gzopen(path.string().c_str(), "rb");
        if (!f) throw Error("core-grid", "cannot open '" + path.string() + "' for reading");
    }
    ~GzReader() {
        if (f) gzclose(f);
    }
    // Reads exactly n bytes unless EOF; returns bytes read.
    std::size_t read(void* dst, std::size_t n) {
        unsigned char* p = static_cast<unsigned char*>(dst);
        std::size_t got = 0;
        while (got < n) {
            unsigned step = static_cast<unsigned>(std::min<std::size_t>(n - got, 1u << 28));
            int r = gzread(f, p + got, step);
            if (r < 0) throw Error("core-grid", "gzread failure");
            if (r == 0) break;
            got += static_cast<std::size_t>(r);
        }
        return got;
    }
};

VoxelGrid read_nifti(const fs::path& path, GridRole role) {
    GzReader in(path);
    std::vector<unsigned char> hdr(kHeaderSize);
    if (in.read(hdr.data(), hdr.size()) != hdr.size())
        throw Error("core-grid", "NIfTI header truncated in '" + path.string() + "'");

    bool swap = false;
    std::int32_t sizeof_hdr = get_i32(&hdr[0], false);
    if (sizeof_hdr != kHeaderSize) {
        if (get_i32(&hdr[0], true) == kHeaderSize) {
            swap = true;
        } else {
            throw Error("core-grid", "malformed NIfTI header: sizeof_hdr is " +
                                         std::to_string(sizeof_hdr) + ", expected 348");
        }
    }

    if (!(hdr[344] == 'n' && hdr[345] == '+' && hdr[346] == '1' && hdr[347] == 0)) {
        if (hdr[344] == 'n' && hdr[345] == 'i' && hdr[346] == '1')
            throw Error("core-grid", "malformed NIfTI header: magic 'ni1' (two-file "
                                     "variant) is unsupported, expected 'n+1'");
        throw Error("core-grid", "malformed NIfTI header: bad magic");
    }

    std::int16_t ndim = get_i16(&hdr[40], swap);
    if (ndim < 3 || ndim > 7)
        throw Error("core-grid",
                    "malformed NIfTI header: dim[0] = " + std::to_string(ndim));
    std::int64_t nx = get_i16(&hdr[42], swap);
    std::int64_t ny = get_i16(&hdr[44], swap);
    std::int64_t nz = get_i16(&hdr[46], swap);
    if (nx < 1 || ny < 1 || nz < 1)
        throw Error("core-grid", "malformed NIfTI header: non-positive dim");
    for (int d = 4; d <= ndim; ++d) {
        std::int16_t n = get_i16(&hdr[40 + 2 * d], swap);
        if (n > 1)
            throw Error("core-grid", "malformed NIfTI header: dim[" + std::to_string(d) +
                                         "] = " + std::to_string(n) +
                                         " (4D volumes unsupported)");
    }

    int datatype = get_i16(&hdr[70], swap);
    int bpp = dtype_bytes(datatype);
    if (bpp == 0)
        throw Error("core-grid", "malformed NIfTI header: datatype " +
                                     std::to_string(datatype) +
                                     " unsupported (uint8/int16/float32 only)");
    int bitpix = get_i16(&hdr[72], swap);
    if (bitpix != bpp * 8)
        throw Error("core-grid", "malformed NIfTI header: bitpix " +
                                     std::to_string(bitpix) + " does not match datatype");

    float sx = get_f32(&hdr[76 + 4], swap);
    float sy = get_f32(&hdr[76 + 8], swap);
    float sz = get_f32(&hdr[76 + 12], swap);
    if (!(sx > 0.0f) || !(sy > 0.0f) || !(sz > 0.0f))
        throw Error("core-grid", "malformed NIfTI header: non-positive pixdim");

    float vox_offset = get_f32(&hdr[108], swap);
    if (vox_offset < kHeaderSize)
        throw Error("core-grid", "malformed NIfTI header: vox_offset " +
                                     std::to_string(vox_offset));
    float scl_slope = get_f32(&hdr[112], swap);
    float scl_inter = get_f32(&hdr[116], swap);

    // Skip to the payload.
    std::size_t skip = static_cast<std::size_t>(vox_offset) - kHeaderSize;
    std::vector<unsigned char> scratch(4096);
    while (skip > 0) {
        std::size_t step = std::min(skip, scratch.size());
        if (in.read(scratch.data(), step) != step)
            throw Error("core-grid", "NIfTI payload truncated in '" + path.string() + "'");
        skip -= step;
    }

    const std::int64_t count = nx * ny * nz;
    std::vector<unsigned char> payload(static_cast<std::size_t>(count) * bpp);
    if (in.read(payload.data(), payload.size()) != payload.size())
        throw Error("core-grid", "NIfTI payload size does not match header dims in '" +
                                     path.string() + "'");

    VoxelGrid grid(nz, ny, nx, Spacing{sz, sy, sx}, role);
    auto& data = grid.data();
    const unsigned char* p = payload.data();
    for (std::int64_t i = 0; i < count; ++i) {
        double v = 0.0;
        switch (datatype) {
            case kDtUint8: v = static_cast<double>(p[i]); break;
            case kDtInt16: v = static_cast<double>(get_i16(p + 2 * i, swap)); break;
            case kDtFloat32: v = static_cast<double>(get_f32(p + 4 * i, swap)); break;
        }
        data[static_cast<std::size_t>(i)] = v;
    }
    if (scl_slope != 0.0f && (scl_slope != 1.0f || scl_inter != 0.0f)) {
        for (auto& v : data) v = v * scl_slope + scl_inter;
    }
    if (role == GridRole::label) {
        for (auto& v : data) {
            if (std::abs(v - std::round(v)) > 1e-9)
                throw Error("core-grid", "label volume '" + path.string() +
                                             "' contains non-integer value");
            v = std::round(v);
        }
    }
    return grid;
}

void write_nifti(const VoxelGrid& grid, const fs::path& path, bool gz) {
    const int datatype = grid.role == GridRole::label ? kDtUint8 : kDtFloat32;
    const int bpp = dtype_bytes(datatype);

    std::vector<unsigned char> hdr(kVoxOffset, 0);
    put_i32(hdr, 0, kHeaderSize);
    put_u8(hdr, 38, 'r');  // regular
    put_i16(hdr, 40, 3);
    put_i16(hdr, 42, static_cast<std::int16_t>(grid.width()));
    put_i16(hdr, 44, static_cast<std::int16_t>(grid.height()));
    put_i16(hdr, 46, static_cast<std::int16_t>(grid.depth()));
    for (int d = 4; d <= 7; ++d) put_i16(hdr, 40 + 2 * d, 1);
    put_i16(hdr, 70, static_cast<std::int16_t>(datatype));
    put_i16(hdr, 72, static_cast<std::int16_t>(bpp * 8));
    put_f32(hdr, 76, 1.0f);  // qfac
    put_f32(hdr, 76 + 4, static_cast<float>(grid.spacing.x));
    put_f32(hdr, 76 + 8, static_cast<float>(grid.spacing.y));
    put_f32(hdr, 76 + 12, static_cast<float>(grid.spacing.z));
    put_f32(hdr, 108, static_cast<float>(kVoxOffset));
    put_f32(hdr, 112, 1.0f);  // scl_slope
    put_f32(hdr, 116, 0.0f);  // scl_inter
    put_u8(hdr, 123, 2);      // xyzt_units: mm
    put_i16(hdr, 254, 1);     // sform_code: scaled identity, spacing only
    put_f32(hdr, 280, static_cast<float>(grid.spacing.x));
    put_f32(hdr, 296 + 4, static_cast<float>(grid.spacing.y));
    put_f32(hdr, 312 + 8, static_cast<float>(grid.spacing.z));
    hdr[344] = 'n'; hdr[345] = '+'; hdr[346] = '1'; hdr[347] = 0;
    // Bytes 348..351 stay zero: no header extensions.

    const auto& data = grid.data();
    std::vector<unsigned char> payload(data.size() * static_cast<std::size_t>(bpp));
    if (datatype == kDtUint8) {
        for (std::size_t i = 0; i < data.size(); ++i) {
            double v = data[i];
            if (v != std::floor(v) || v < 0.0 || v > 255.0)
                throw Error("core-grid",
                            "label grid value " + std::to_string(v) +
                                " does not fit the uint8 on-disk dtype");
            payload[i] = static_cast<unsigned char>(v);
        }
    } else {
        for (std::size_t i = 0; i < data.size(); ++i)
            put_f32(payload, 4 * i, static_cast<float>(data[i]));
    }

    if (gz) {
        gzFile f = gzopen(path.string().c_str(), "wb6");
        if (!f) throw Error("core-grid", "cannot open '" + path.string() + "' for writing");
        bool ok = gzwrite(f, hdr.data(), static_cast<unsigned>(hdr.size())) ==
                      static_cast<int>(hdr.size()) &&
                  (payload.empty() ||
                   gzwrite(f, payload.data(), static_cast<unsigned>(payload.size())) ==
                       static_cast<int>(payload.size()));
        ok = (gzclose(f) == Z_OK) && ok;
        if (!ok) throw Error("core-grid", "write failure on '" + path.string() + "'");
    } else {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("core-grid", "cannot open '" + path.string() + "' for writing");
        out.write(reinterpret_cast<const char*>(hdr.data()),
                  static_cast<std::streamsize>(hdr.size()));
        out.write(reinterpret_cast<const char*>(payload.data()),
                  static_cast<std::streamsize>(payload.size()));
        if (!out) throw Error("core-grid", "write failure on '" + path.string() + "'");
    }
}

// ---------------------------------------------------------------------------
// Internal JSON + raw format

struct RawDtype {
    enum Kind { uint8, int16, float32, float64 } kind;
    int bytes;
};

RawDtype raw_dtype_from_name(const std::string& name) {
    if (name == "uint8") return {RawDtype::uint8, 1};
    if (name == "int16") return {RawDtype::int16, 2};
    if (name == "float32") return {RawDtype::float32, 4};
    if (name == "float64") return {RawDtype::float64, 8};
    throw Error("core-grid", "unknown raw dtype '" + name + "'");
}

VoxelGrid read_internal(const fs::path& path, GridRole /*role_hint*/) {
    std::ifstream in(path);
    if (!in) throw Error("core-grid", "cannot open '" + path.string() + "' for reading");
    nlohmann::json header;
    try {
        in >> header;
    } catch (const nlohmann::json::exception& e) {
        throw Error("core-grid", "malformed sidecar header '" + path.string() +
                                     "': " + e.what());
    }

    auto require = [&](const char* key) -> const nlohmann::json& {
        if (!header.contains(key))
            throw Error("core-grid", "sidecar header '" + path.string() +
                                         "' missing field '" + key + "'");
        return header.at(key);
    };

    if (require("format").get<std::string>() != "infilmap-raw-v1")
        throw Error("core-grid", "sidecar header '" + path.string() +
                                     "': unknown format tag");
    auto dims = require("dims").get<std::vector<std::int64_t>>();
    auto sp = require("spacing").get<std::vector<double>>();
    if (dims.size() != 3 || sp.size() != 3)
        throw Error("core-grid", "sidecar header '" + path.string() +
                                     "': dims and spacing must have 3 entries");
    RawDtype dt = raw_dtype_from_name(require("dtype").get<std::string>());
    GridRole role = grid_role_from_name(require("role").get<std::string>());
    fs::path raw_path = path.parent_path() / require("raw").get<std::string>();

    VoxelGrid grid(dims[0], dims[1], dims[2], Spacing{sp[0], sp[1], sp[2]}, role);
    const std::int64_t count = grid.size();

    std::ifstream raw(raw_path, std::ios::binary);
    if (!raw) throw Error("core-grid", "cannot open '" + raw_path.string() + "' for reading");
    std::vector<unsigned char> payload(static_cast<std::size_t>(count) * dt.bytes);
    raw.read(reinterpret_cast<char*>(payload.data()),
             static_cast<std::streamsize>(payload.size()));
    if (raw.gcount() != static_cast<std::streamsize>(payload.size()))
        throw Error("core-grid", "raw payload '" + raw_path.string() +
                                     "' shorter than header dims require");

    auto& data = grid.data();
    const unsigned char* p = payload.data();
    for (std::int64_t i = 0; i < count; ++i) {
        switch (dt.kind) {
            case RawDtype::uint8:
                data[static_cast<std::size_t>(i)] = static_cast<double>(p[i]);
                break;
            case RawDtype::int16:
                data[static_cast<std::size_t>(i)] = static_cast<double>(get_i16(p + 2 * i, false));
                break;
            case RawDtype::float32:
                data[static_cast<std::size_t>(i)] = static_cast<double>(get_f32(p + 4 * i, false));
                break;
            case RawDtype::float64: {
                std::uint64_t bits = 0;
                for (int b = 7; b >= 0; --b) bits = (bits << 8) | p[8 * i + b];
                double v;
                std::memcpy(&v, &bits, 8);
                data[static_cast<std::size_t>(i)] = v;
                break;
            }
        }
    }
    return grid;
}

void write_internal(const VoxelGrid& grid, const fs::path& path) {
    const bool as_uint8 = grid.role == GridRole::label;
    fs::path raw_path = path;
    raw_path.replace_extension(".raw");

    nlohmann::ordered_json header;
    header["format"] = "infilmap-raw-v1";
    header["dims"] = {grid.depth(), grid.height(), grid.width()};
    header["spacing"] = {grid.spacing.z, grid.spacing.y, grid.spacing.x};
    header["dtype"] = as_uint8 ? "uint8" : "float64";
    header["role"] = grid_role_name(grid.role);
    header["raw"] = raw_path.filename().string();

    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("core-grid", "cannot open '" + path.string() + "' for writing");
    out << header.dump(2) << "\n";
    if (!out) throw Error("core-grid", "write failure on '" + path.string() + "'");

    const auto& data = grid.data();
    std::vector<unsigned char> payload(data.size() * (as_uint8 ? 1u : 8u));
    if (as_uint8) {
        for (std::size_t i = 0; i < data.size(); ++i) {
            double v = data[i];
            if (v != std::floor(v) || v < 0.0 || v > 255.0)
                throw Error("core-grid",
                            "label grid value " + std::to_string(v) +
                                " does not fit the uint8 on-disk dtype");
            payload[i] = static_cast<unsigned char>(v);
        }
    } else {
        for (std::size_t i = 0; i < data.size(); ++i) {
            std::uint64_t bits;
            std::memcpy(&bits, &data[i], 8);
            for (int b = 0; b < 8; ++b)
                payload[8 * i + b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xff);
        }
    }
    std::ofstream raw(raw_path, std::ios::binary | std::ios::trunc);
    if (!raw) throw Error("core-grid", "cannot open '" + raw_path.string() + "' for writing");
    raw.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size()));
    if (!raw) throw Error("core-grid", "write failure on '" + raw_path.string() + "'");
}

}  // namespace

VoxelGrid read_volume(const std::filesystem::path& path, GridRole role) {
    if (!fs::exists(path))
        throw Error("core-grid", "no such file: '" + path.string() + "'");
    const std::string name = path.filename().string();
    if (ends_with(name, ".nii") || ends_with(name, ".nii.gz"))
        return read_nifti(path, role);
    if (ends_with(name, ".json")) return read_internal(path, role);
    throw Error("core-grid", "unsupported volume extension on '" + name +
                                 "' (expected .nii, .nii.gz, or .json)");
}

void write_volume(const VoxelGrid& grid, const std::filesystem::path& path) {
    if (grid.depth() < 1 || grid.height() < 1 || grid.width() < 1)
        throw Error("core-grid", "refusing to write grid with empty dims to '" +
                                     path.string() + "'");
    const std::string name = path.filename().string();
    if (ends_with(name, ".nii.gz")) {
        write_nifti(grid, path, /*gz=*/true);
    } else if (ends_with(name, ".nii")) {
        write_nifti(grid, path, /*gz=*/false);
    } else if (ends_with(name, ".json")) {
        write_internal(grid, path);
    } else {
        throw Error("core-grid", "unsupported volume extension on '" + name +
                                     "' (expected .nii, .nii.gz, or .json)");
    }
}

}  // namespace infil
