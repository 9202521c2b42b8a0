#include "biskip/archive.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "biskip/errors.hpp"

namespace biskip {

namespace {
constexpr char kMagic[8] = {'B', 'I', 'S', 'K', 'I', 'P', 'A', '1'};
static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");
}  // namespace

const Tensor* Archive::find(const std::string& name) const {
    for (const auto& [n, t] : arrays) {
        if (n == name) return &t;
    }
    return nullptr;
}

const Tensor& Archive::at(const std::string& name) const {
    if (const Tensor* t = find(name)) return *t;
    throw DataError("archive has no array named '" + name + "'");
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
    nlohmann::json header = archive.header;
    nlohmann::json entries = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& [name, t] : archive.arrays) {
        entries.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
        offset += t.size();
    }
    header["arrays"] = entries;
    const std::string text = header.dump();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    out.write(kMagic, sizeof kMagic);
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : archive.arrays) {
        out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!out) throw DataError("write failed for " + path.string());
}

Archive read_archive(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open archive " + path.string());
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw DataError(path.string() + " is not a biskip archive");
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || len > (1ULL << 32)) throw DataError(path.string() + ": corrupt header length");
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw DataError(path.string() + ": truncated header");

    Archive archive;
    try {
        archive.header = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": bad header JSON: " + e.what());
    }
    const auto entries = archive.header.value("arrays", nlohmann::json::array());
    std::size_t expected_offset = 0;
    for (const auto& entry : entries) {
        Shape shape = entry.at("shape").get<Shape>();
        if (entry.at("offset").get<std::size_t>() != expected_offset) throw DataError(path.string() + ": bad array offset");
        Tensor t(shape);
        in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
        if (!in) throw DataError(path.string() + ": truncated array '" + entry.at("name").get<std::string>() + "'");
        expected_offset += t.size();
        archive.arrays.emplace_back(entry.at("name").get<std::string>(), std::move(t));
    }
    archive.header.erase("arrays");
    return archive;
}

}  // namespace biskip
