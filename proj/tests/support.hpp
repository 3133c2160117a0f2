#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <unistd.h>

#include "harmless/corpus.hpp"

namespace test_support {

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("harmless-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
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
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::filesystem::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << content;
}

// In-memory corpus from bodies; docs listed in `positives` get category "All"
// plus "Other".
inline harmless::Corpus make_corpus(const std::vector<std::string>& bodies,
                                    const std::vector<std::size_t>& positives = {},
                                    const std::vector<std::uint64_t>& crashes = {}) {
  harmless::Corpus c;
  for (std::size_t i = 0; i < bodies.size(); ++i) {
    harmless::DocumentRecord d;
    d.doc_id = i;
    d.path = "f" + std::to_string(i) + ".c";
    d.body = bodies[i];
    if (!crashes.empty()) d.crash_count = crashes[i];
    c.documents.push_back(d);
  }
  for (auto p : positives) c.documents[p].truth_categories = {"All", "Other"};
  harmless::rebuild_category_index(c);
  return c;
}

}  // namespace test_support
