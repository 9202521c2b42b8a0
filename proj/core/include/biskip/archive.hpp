#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "biskip/tensor.hpp"

namespace biskip {

using NamedArrays = std::vector<std::pair<std::string, Tensor>>;

// Single-file container: an 8-byte magic, a little-endian u64 header length,
// a JSON header, then every array's doubles back to back. The header gains an
// "arrays" list of {name, shape, offset} entries (offset in doubles). Values
// are stored as raw IEEE-754 bytes, so a round trip is bit-exact.
struct Archive {
    nlohmann::json header;
    NamedArrays arrays;

    const Tensor* find(const std::string& name) const;
    const Tensor& at(const std::string& name) const;
};

void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

}  // namespace biskip
