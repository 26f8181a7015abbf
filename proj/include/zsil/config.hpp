#pragma once

#include "zsil/learner.hpp"
#include "zsil/recovery.hpp"
#include "zsil/tasks.hpp"
#include "zsil/trainer.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace zsil {

/// Flat "section.key = value" text config. Lines starting with '#' are
/// comments. Keys remember their source line so validation errors can point
/// at them.
class KeyValueConfig {
 public:
  static KeyValueConfig from_file(const std::string& path);

  void set(const std::string& key, const std::string& value, int line = 0);
  /// "key=value" command-line override.
  void apply_override(const std::string& assignment);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& entries() const { return values_; }
  int line_of(const std::string& key) const;
  const std::string& source() const { return source_; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long get_long(const std::string& key, long fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;

  /// Canonical sorted key=value dump.
  std::string resolved() const;

 private:
  [[noreturn]] void fail(const std::string& key, const std::string& message) const;

  std::map<std::string, std::string> values_;
  std::map<std::string, int> lines_;
  std::string source_ = "<config>";
};

enum class Method { kZsil, kNaive, kJoint, kFsil };

std::string method_name(Method m);
std::string setting_name(Setting s);

struct DatasetSpec {
  std::string kind = "synthetic";  // synthetic | cifar10
  std::string path;                // cifar10 binary batch directory
  int tasks = 5;
  int classes_per_task = 2;
  int samples_per_class = 125;
  std::vector<int> image_shape = {1, 8, 8};
  double separation = 0.8;
};

/// Full experiment description. Field defaults follow the reference
/// operating point: SGD lr 0.1, 50 epochs, batches 32/32, lambda 0.3,
/// K 6000, eta 0.7, tau 20, beta shares {1: 1/2, 0.1: 1/2}, Adam lr 0.01
/// with a 1500-step cap.
struct ExperimentConfig {
  DatasetSpec dataset;
  Setting setting = Setting::kClassIL;
  Method method = Method::kZsil;
  std::uint64_t seed = 1;
  std::string backbone = "conv:16x3,relu,avgpool:2,conv:32x3,relu,avgpool:2,flatten,dense:128,relu";
  TrainConfig train;
  RecoveryConfig recovery;
  int memory_capacity = 50;  // few-shot exemplars per class

  /// Parses and validates; unknown keys or bad values raise
  /// std::invalid_argument naming the file, line and field.
  static ExperimentConfig from_kv(const KeyValueConfig& kv);

  KeyValueConfig to_kv() const;
  TaskSequence build_stream() const;
  LearnerConfig learner_config(const TaskSequence& stream) const;
  std::string run_id() const;
};

std::vector<BetaShare> parse_beta_schedule(const std::string& text);
std::string beta_schedule_string(const std::vector<BetaShare>& schedule);

}  // namespace zsil
