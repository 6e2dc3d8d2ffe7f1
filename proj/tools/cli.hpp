#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fmed/error.hpp"

namespace fmed::cli {

class UsageError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

enum ExitCode : int { ok = 0, usage = 2, numerical = 3, io = 4 };

struct RunConfig {
  std::string command;
  std::string z_path;
  std::string m_path;
  std::string y_path;
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  int threads = 1;

  // simulate
  std::string model = "concurrent";
  std::string delta = "6";
  int n_subjects = 50;
  int n_time = 150;
  double tr = 2.0;
  double noise = 1.0;

  // effects, bootstrap
  bool per_subject = false;

  // bootstrap
  int replicates = 500;
  double level = 0.95;
  std::string method = "percentile";

  // cv, select-delta
  int folds = 5;
  std::vector<std::string> grid;
  bool tune_lambda = false;
};

// A file written by a command, relative to the output directory.
struct Artifact {
  std::string name;
  std::string content;
};

// Parses argv (without the program name) into a validated config. Throws
// UsageError on bad flags, missing files and schema violations.
RunConfig parse_config(const std::vector<std::string>& args);

// Executes the command; returns the artifacts to write.
std::vector<Artifact> run(const RunConfig& config);

// Writes artifacts plus manifest.json (SHA-256 per file) into out_dir.
void write_report(const std::vector<Artifact>& artifacts, const std::string& out_dir);

std::string sha256_hex(const std::string& bytes);

// Full entry point: parse, run, write; maps failures to exit codes.
int main_entry(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fmed::cli
