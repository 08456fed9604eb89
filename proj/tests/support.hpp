#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "reltree/cli.hpp"
#include "reltree/io.hpp"
#include "reltree/schema.hpp"
#include "reltree/tree.hpp"

namespace testsupport {

inline std::string data(const std::string& rel) { return std::string(TEST_DATA_DIR) + "/" + rel; }

/// Fresh directory under the system temp dir, removed on scope exit.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("reltree-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

struct CliRun {
  int code = 0;
  std::string out;
  std::string err;
};

inline CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "reltree");
  std::ostringstream out, err;
  CliRun r;
  r.code = reltree::run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

inline reltree::RelationSchema ptv_schema() { return reltree::load_schema_file(data("ptv/schema.json")); }
inline reltree::RelationTree ptv_tree() { return reltree::load_tree_file(data("ptv/tree.json")); }

}  // namespace testsupport
