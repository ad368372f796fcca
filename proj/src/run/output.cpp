#include "run/output.hpp"

#include <atomic>
#include <charconv>
#include <exception>
#include <filesystem>
#include <mutex>
#include <thread>

#include "common/error.hpp"
#include "common/hash.hpp"

namespace ply::run {

namespace fs = std::filesystem;

std::string fmt(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return {buf, res.ptr};
}

std::string csv_row(const std::vector<std::string>& fields) {
  std::string line;
  for (size_t i = 0; i < fields.size(); ++i) {
    if (i) line += ',';
    const std::string& f = fields[i];
    if (f.find_first_of(",\"\n") == std::string::npos) {
      line += f;
      continue;
    }
    line += '"';
    for (char c : f) {
      if (c == '"') line += '"';
      line += c;
    }
    line += '"';
  }
  line += '\n';
  return line;
}

OutputDir::OutputDir(const std::string& root) : root_(root) {
  if (root_.empty()) fail(ErrorKind::Config, "output directory must not be empty");
  std::error_code ec;
  fs::create_directories(root_, ec);
  if (ec) fail(ErrorKind::Io, "cannot create output directory '" + root_ + "': " + ec.message());
}

OutputDir::~OutputDir() {
  if (committed_) return;
  std::error_code ec;
  for (const auto& f : files_) fs::remove(f, ec);
}

std::string OutputDir::path(const std::string& name) {
  const fs::path p = fs::path(root_) / name;
  std::error_code ec;
  fs::create_directories(p.parent_path(), ec);
  if (ec) fail(ErrorKind::Io, "cannot create directory for '" + p.string() + "': " + ec.message());
  files_.push_back(p.string());
  return p.string();
}

std::ofstream OutputDir::create(const std::string& name) {
  const std::string p = path(name);
  std::ofstream out(p, std::ios::trunc);
  if (!out) fail(ErrorKind::Io, "cannot write '" + p + "'");
  return out;
}

void parallel_for(size_t n, int jobs, const std::function<void(size_t)>& fn) {
  if (n == 0) return;
  const size_t workers =
      std::min<size_t>(n, jobs > 1 ? static_cast<size_t>(jobs) : 1);
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  std::mutex err_mutex;
  std::exception_ptr first_error;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (;;) {
        const size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          const std::lock_guard<std::mutex> lock(err_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    });
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

std::string file_hash_hex(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open '" + path + "' for hashing");
  Fnv1a64 h;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
    h.update(buf, static_cast<size_t>(in.gcount()));
  return h.hex();
}

}  // namespace ply::run
