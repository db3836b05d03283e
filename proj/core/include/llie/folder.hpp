#pragma once

#include <filesystem>
#include <vector>

namespace llie {

// *.png files directly inside `folder`, sorted by filename (byte order).
// Throws DataError when the folder does not exist.
std::vector<std::filesystem::path> list_pngs(const std::filesystem::path& folder);

}  // namespace llie
