#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

#include "biastest/specs.hpp"

namespace testsupport {

inline std::filesystem::path source_dir() { return BIASTEST_SOURCE_DIR; }
inline std::filesystem::path data_dir() { return source_dir() / "data"; }

inline biastest::specs::BiasSpecification gender_spec() {
  biastest::specs::BiasSpecification s;
  s.name = "toy_gender";
  s.group1_label = "Male";
  s.group1_terms = {"he", "brother"};
  s.group2_label = "Female";
  s.group2_terms = {"she", "sister"};
  s.attr1_label = "Science";
  s.attr1_terms = {"math", "physics"};
  s.attr2_label = "Arts";
  s.attr2_terms = {"poetry", "dance"};
  s.source = biastest::specs::SpecSource::Custom;
  return s;
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() /
            ("biastest-test-" + std::to_string(stamp) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace testsupport
