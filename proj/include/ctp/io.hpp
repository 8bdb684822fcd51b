#pragma once

#include <filesystem>
#include <functional>
#include <ostream>

namespace ctp {

/// Writes through `fill` into a sibling temp file, then renames it over
/// `path`. On any exception the temp file is removed and `path` is untouched.
void write_file_atomic(const std::filesystem::path& path,
                       const std::function<void(std::ostream&)>& fill);

}  // namespace ctp
