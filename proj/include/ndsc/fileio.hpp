#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>

namespace ndsc {

/// Writes through `<path>.tmp.<pid>` and renames over `path`, so readers never
/// observe a partial file.
void atomic_write(const std::filesystem::path& path, const std::function<void(std::ostream&)>& body);
void atomic_write_text(const std::filesystem::path& path, const std::string& text);

std::string read_text(const std::filesystem::path& path);

}  // namespace ndsc
