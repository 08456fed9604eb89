#pragma once

#include <chrono>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "reltree/gateway.hpp"

namespace reltree {

/// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitBackend = 3;
inline constexpr int kExitParse = 4;

/// Record of one command invocation. Digests are taken from the files on
/// disk: inputs when they are registered, outputs when the manifest is written.
class RunManifest {
 public:
  explicit RunManifest(std::string command);

  void set_config(nlohmann::ordered_json config) { config_ = std::move(config); }
  void add_seed(const std::string& name, std::uint64_t seed) { seeds_[name] = seed; }
  void add_input(const std::string& path);
  void add_output(const std::string& path) { outputs_.push_back(path); }
  void set_usage(const UsageTotals& usage) { usage_ = usage; }
  void set_latencies(std::vector<double> seconds) { latencies_ = std::move(seconds); }

  [[nodiscard]] const std::vector<std::string>& outputs() const noexcept { return outputs_; }
  [[nodiscard]] nlohmann::ordered_json to_json() const;
  void write(const std::string& path) const;

 private:
  std::string command_;
  nlohmann::ordered_json config_ = nlohmann::ordered_json::object();
  nlohmann::ordered_json seeds_ = nlohmann::ordered_json::object();
  std::vector<std::pair<std::string, std::string>> inputs_;
  std::vector<std::string> outputs_;
  UsageTotals usage_;
  std::vector<double> latencies_;
  std::chrono::steady_clock::time_point started_;
};

/// Runs the tool with the given arguments (argv[0] included) and returns the exit code.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace reltree
