#include "matprobe/numerics/blob.hpp"

#include <bit>
#include <cstdint>
#include <cstring>

#include "matprobe/error.hpp"
#include "matprobe/fileio.hpp"

namespace matprobe::numerics {

static_assert(std::endian::native == std::endian::little, "blob I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'M', 'P', 'T', 'B'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T get(const std::string& in, std::size_t& pos) {
    if (pos + sizeof(T) > in.size()) throw DataError("tensor blob is truncated");
    T v;
    std::memcpy(&v, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

}  // namespace

const Tensor* Blob::find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) return &t;
    }
    return nullptr;
}

std::string encode_blob(const Blob& blob) {
    nlohmann::json entries = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& [name, t] : blob.tensors) {
        entries.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
        offset += t.size() * sizeof(float);
    }
    const std::string manifest = nlohmann::json{{"header", blob.header}, {"tensors", entries}}.dump();

    std::string out(kMagic, 4);
    put<std::uint32_t>(out, kVersion);
    put<std::uint64_t>(out, manifest.size());
    out += manifest;
    out.reserve(out.size() + offset);
    for (const auto& [name, t] : blob.tensors) {
        for (double v : t.values()) put<float>(out, static_cast<float>(v));
    }
    return out;
}

Blob decode_blob(const std::string& bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw DataError("not a tensor blob (bad magic)");
    std::size_t pos = 4;
    const auto version = get<std::uint32_t>(bytes, pos);
    if (version != kVersion) throw DataError("unsupported tensor blob version " + std::to_string(version));
    const auto manifest_size = get<std::uint64_t>(bytes, pos);
    if (pos + manifest_size > bytes.size()) throw DataError("tensor blob manifest is truncated");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(bytes.substr(pos, manifest_size));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("tensor blob manifest: ") + e.what());
    }
    const std::size_t payload = pos + manifest_size;

    Blob blob;
    blob.header = manifest.value("header", nlohmann::json::object());
    try {
        for (const auto& e : manifest.at("tensors")) {
            Tensor t(e.at("shape").get<std::vector<std::size_t>>());
            std::size_t at = payload + e.at("offset").get<std::size_t>();
            if (at + t.size() * sizeof(float) > bytes.size()) throw DataError("tensor blob payload is truncated");
            for (std::size_t i = 0; i < t.size(); ++i) t[i] = get<float>(bytes, at);
            blob.tensors.emplace_back(e.at("name").get<std::string>(), std::move(t));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("tensor blob manifest: ") + e.what());
    }
    return blob;
}

void save_blob(const std::filesystem::path& path, const Blob& blob) { write_file_atomic(path, encode_blob(blob)); }

Blob load_blob(const std::filesystem::path& path) { return decode_blob(read_file(path)); }

}  // namespace matprobe::numerics
