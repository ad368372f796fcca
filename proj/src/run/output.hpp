#pragma once

#include <fstream>
#include <functional>
#include <string>
#include <vector>

namespace ply::run {

// Shortest round-trip decimal representation, locale-independent.
std::string fmt(double v);

std::string csv_row(const std::vector<std::string>& fields);

// Creates the run's output directory and tracks every file written through
// it; unless commit() is reached, the destructor removes the partial outputs.
class OutputDir {
 public:
  explicit OutputDir(const std::string& root);
  ~OutputDir();

  OutputDir(const OutputDir&) = delete;
  OutputDir& operator=(const OutputDir&) = delete;

  const std::string& root() const { return root_; }

  // Full path for an artifact (subdirectories created on demand), tracked
  // for failure cleanup.
  std::string path(const std::string& name);
  std::ofstream create(const std::string& name);

  void commit() { committed_ = true; }

 private:
  std::string root_;
  std::vector<std::string> files_;
  bool committed_ = false;
};

// Runs fn(0), ..., fn(n-1) on up to `jobs` threads (sequential when jobs <= 1)
// and rethrows the first exception after all workers finish.
void parallel_for(size_t n, int jobs, const std::function<void(size_t)>& fn);

// FNV-1a64 of a file's bytes, as 16 hex digits.
std::string file_hash_hex(const std::string& path);

}  // namespace ply::run
