#pragma once

#include "zsil/config.hpp"
#include "zsil/metrics.hpp"
#include "zsil/trainer.hpp"

#include <string>
#include <vector>

namespace zsil {

struct RunReport {
  std::string run_dir;
  AccuracyMatrix accuracy;
  std::vector<double> avg_series;  // A_k after each completed task
  std::vector<int> classes_seen;   // cumulative class count per task
};

/// Executes the configured method over the stream and writes the run tree:
/// <out>/<run-id>/{config.resolved, accuracy_matrix.csv, avg_accuracy.csv,
/// transfer_manifest.csv, checkpoints/, plots/}. Identical config and seed
/// reproduce every emitted byte.
RunReport run_experiment(const ExperimentConfig& cfg, const std::string& out_root);

enum class SweepParam { kTransferSize, kLambda, kEta };

SweepParam sweep_param_from_name(const std::string& name);
std::string sweep_param_name(SweepParam p);

/// One run per value under a shared seed; per-value run directories plus a
/// combined wide CSV (one series per value) and overlay plot at the root.
std::vector<RunReport> run_sweep(const ExperimentConfig& cfg, SweepParam param,
                                 const std::vector<double>& values, const std::string& out_root);

/// Polyline chart of one or more A_k-versus-classes-seen series.
void write_series_svg(const std::string& path, const std::vector<std::string>& names,
                      const std::vector<std::vector<int>>& xs,
                      const std::vector<std::vector<double>>& ys);

void write_accuracy_matrix_csv(const AccuracyMatrix& m, const std::string& path);

}  // namespace zsil
