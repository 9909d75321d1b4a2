#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace gar {

// Git blob id of the given bytes: SHA-1 over "blob <size>\0<content>", hex.
std::string content_hash(std::string_view bytes);
std::string file_hash(const std::filesystem::path& path);

}  // namespace gar
