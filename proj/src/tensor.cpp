#include "infil/tensor.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "infil/rng.hpp"

namespace infil {

Tensor5::Tensor5(std::int64_t n, std::int64_t c, std::int64_t d, std::int64_t h,
                 std::int64_t w, double fill)
    : shape{n, c, d, h, w} {
    for (auto s : shape)
        if (s < 1)
            throw Error("netref", "tensor dims must all be >= 1");
    data.assign(static_cast<std::size_t>(size()), fill);
}

bool Tensor5::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

TokenMatrix::TokenMatrix(std::int64_t r, std::int64_t c, double fill) : rows(r), cols(c) {
    if (r < 0 || c < 0) throw Error("netref", "token matrix dims must be >= 0");
    data.assign(static_cast<std::size_t>(r * c), fill);
}

TokenMatrix tokens_from_feature_map(const Tensor5& map) {
    if (map.n() != 1)
        throw Error("netref", "token flattening expects a single-batch feature map");
    TokenMatrix t(map.spatial_size(), map.c());
    const std::int64_t spatial = map.spatial_size();
    for (std::int64_t c = 0; c < map.c(); ++c) {
        const double* src = map.data.data() + c * spatial;
        for (std::int64_t s = 0; s < spatial; ++s) t.at(s, c) = src[s];
    }
    return t;
}

Tensor5 feature_map_from_tokens(const TokenMatrix& tokens, std::int64_t d,
                                std::int64_t h, std::int64_t w) {
    if (tokens.rows != d * h * w)
        throw Error("netref", "token count does not match the target spatial dims");
    Tensor5 map(1, tokens.cols, d, h, w);
    const std::int64_t spatial = d * h * w;
    for (std::int64_t c = 0; c < tokens.cols; ++c) {
        double* dst = map.data.data() + c * spatial;
        for (std::int64_t s = 0; s < spatial; ++s) dst[s] = tokens.at(s, c);
    }
    return map;
}

namespace {

std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace

Tensor5& ParamStore::param(const std::string& name,
                           const std::array<std::int64_t, 5>& shape,
                           std::int64_t fan_in) {
    auto it = tensors_.find(name);
    if (it != tensors_.end()) {
        if (it->second.shape != shape)
            throw Error("netref", "parameter '" + name +
                                      "' requested with a conflicting shape");
        return it->second;
    }
    if (fan_in < 1) throw Error("netref", "parameter '" + name + "': fan_in must be >= 1");
    Tensor5 t(shape[0], shape[1], shape[2], shape[3], shape[4]);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    SplitMix64 rng(seed_ ^ fnv1a64(name));
    for (auto& v : t.data) v = rng.uniform(-bound, bound);
    return tensors_.emplace(name, std::move(t)).first->second;
}

Tensor5& ParamStore::existing(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end())
        throw Error("netref", "parameter '" + name + "' does not exist");
    return it->second;
}

void ParamStore::save(const std::filesystem::path& manifest_path) const {
    std::filesystem::path raw_path = manifest_path;
    raw_path.replace_extension(".raw");

    nlohmann::ordered_json manifest;
    manifest["format"] = "infilmap-params-v1";
    manifest["seed"] = seed_;
    auto& list = manifest["tensors"] = nlohmann::ordered_json::array();
    std::int64_t offset = 0;
    for (const auto& [name, tensor] : tensors_) {
        list.push_back({{"name", name},
                        {"shape", tensor.shape},
                        {"offset", offset}});
        offset += tensor.size();
    }
    manifest["raw"] = raw_path.filename().string();

    std::ofstream out(manifest_path, std::ios::trunc);
    if (!out)
        throw Error("netref", "cannot open '" + manifest_path.string() + "' for writing");
    out << manifest.dump(2) << "\n";

    std::vector<unsigned char> payload(static_cast<std::size_t>(offset) * 8);
    std::size_t pos = 0;
    for (const auto& [name, tensor] : tensors_) {
        for (double v : tensor.data) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, 8);
            for (int b = 0; b < 8; ++b)
                payload[pos * 8 + static_cast<std::size_t>(b)] =
                    static_cast<unsigned char>((bits >> (8 * b)) & 0xff);
            ++pos;
        }
    }
    std::ofstream raw(raw_path, std::ios::binary | std::ios::trunc);
    if (!raw) throw Error("netref", "cannot open '" + raw_path.string() + "' for writing");
    raw.write(reinterpret_cast<const char*>(payload.data()),
              static_cast<std::streamsize>(payload.size()));
    if (!raw) throw Error("netref", "write failure on '" + raw_path.string() + "'");
}

ParamStore ParamStore::load(const std::filesystem::path& manifest_path) {
    std::ifstream in(manifest_path);
    if (!in)
        throw Error("netref", "cannot open '" + manifest_path.string() + "' for reading");
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw Error("netref", "malformed parameter manifest '" + manifest_path.string() +
                                  "': " + e.what());
    }
    if (manifest.value("format", "") != "infilmap-params-v1")
        throw Error("netref", "parameter manifest '" + manifest_path.string() +
                                  "': unknown format tag");

    ParamStore store(manifest.at("seed").get<std::uint64_t>());
    std::filesystem::path raw_path =
        manifest_path.parent_path() / manifest.at("raw").get<std::string>();
    std::ifstream raw(raw_path, std::ios::binary);
    if (!raw) throw Error("netref", "cannot open '" + raw_path.string() + "' for reading");
    std::vector<unsigned char> payload((std::istreambuf_iterator<char>(raw)),
                                       std::istreambuf_iterator<char>());

    for (const auto& entry : manifest.at("tensors")) {
        auto name = entry.at("name").get<std::string>();
        auto shape = entry.at("shape").get<std::array<std::int64_t, 5>>();
        auto offset = entry.at("offset").get<std::int64_t>();
        Tensor5 t(shape[0], shape[1], shape[2], shape[3], shape[4]);
        if (static_cast<std::size_t>((offset + t.size()) * 8) > payload.size())
            throw Error("netref", "parameter payload '" + raw_path.string() +
                                      "' shorter than the manifest requires");
        for (std::int64_t i = 0; i < t.size(); ++i) {
            std::uint64_t bits = 0;
            const unsigned char* p = payload.data() + (offset + i) * 8;
            for (int b = 7; b >= 0; --b) bits = (bits << 8) | p[b];
            std::memcpy(&t.data[static_cast<std::size_t>(i)], &bits, 8);
        }
        store.tensors_.emplace(std::move(name), std::move(t));
    }
    return store;
}

}  // namespace infil
