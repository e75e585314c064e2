#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "difftune/adamw.hpp"
#include "difftune/mlp.hpp"
#include "difftune/tasks.hpp"

namespace difftune {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Versioned binary model snapshot ("DFTN" magic, little-endian f64 arrays).
struct Checkpoint {
  std::uint32_t version = 1;
  MlpSpec spec;
  std::vector<double> theta;
  std::vector<double> theta_old;
  AdamWState opt;
  std::uint64_t iteration = 0;
  std::vector<std::string> rng_states;  // sampling, timesteps, pretraining
  std::uint64_t config_hash = 0;
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

// Dataset container ("DSET" magic) plus a human-readable sidecar.
void save_dataset(const std::string& path,
                  const std::vector<SceneSample>& data,
                  const std::string& meta_description);
std::vector<SceneSample> load_dataset(const std::string& path);

// CSV metrics with a fixed header; every append rewrites through a temp
// file and renames, so readers never see a torn file.
class MetricsWriter {
 public:
  static const char* header();

  explicit MetricsWriter(std::string path);

  void append(std::uint64_t iteration, const std::string& task,
              double mean_reward, double loss_ppo, double loss_pretrain,
              double statistical_parity, double detection_seen,
              double detection_unseen, double wall_seconds);

  const std::string& path() const { return path_; }

 private:
  void flush() const;
  std::string path_;
  std::vector<std::string> rows_;
};

// Shortest-round-trip decimal formatting for doubles; NaN prints as "nan".
std::string format_double(double v);

// Atomically writes text to path (temp file + rename).
void write_text_atomic(const std::string& path, const std::string& text);

}  // namespace difftune
