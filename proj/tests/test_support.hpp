#pragma once

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <unistd.h>

#include "fixseg/random.hpp"

namespace fixseg::testing {

/// Replays a fixed list of uniform draws; running past the end is a test bug.
class ScriptedRandom final : public RandomSource {
 public:
  explicit ScriptedRandom(std::vector<double> draws) : draws_(std::move(draws)) {}
  double uniform01() override {
    if (pos_ >= draws_.size()) throw std::logic_error("scripted draws exhausted");
    return draws_[pos_++];
  }
  std::size_t consumed() const { return pos_; }

 private:
  std::vector<double> draws_;
  std::size_t pos_ = 0;
};

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("fixseg_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace fixseg::testing
