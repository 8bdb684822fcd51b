#include "ctp/io.hpp"

#include <fstream>
#include <string>
#include <system_error>

#include <unistd.h>

#include "ctp/error.hpp"

namespace ctp {

void write_file_atomic(const std::filesystem::path& path,
                       const std::function<void(std::ostream&)>& fill) {
  namespace fs = std::filesystem;
  const fs::path tmp =
      path.string() + ".tmp." + std::to_string(static_cast<long>(::getpid()));
  try {
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw UsageError("cannot open '" + tmp.string() + "' for writing");
      fill(out);
      out.flush();
      if (!out) throw UsageError("write to '" + tmp.string() + "' failed");
    }
    fs::rename(tmp, path);
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
}

}  // namespace ctp
