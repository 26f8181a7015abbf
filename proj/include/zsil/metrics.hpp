#pragma once

#include <vector>

namespace zsil {

/// Lower-triangular accuracy record: entry (k, j) is the percent accuracy on
/// task j's test set after training through task k (1-based, j <= k).
class AccuracyMatrix {
 public:
  AccuracyMatrix() = default;
  explicit AccuracyMatrix(int n_tasks) : n_tasks_(n_tasks) {}

  /// Joint-training reference: one full-width row over all tasks.
  static AccuracyMatrix single_row(std::vector<double> row);

  /// Appends the row for the next completed task; row t (0-based) must hold
  /// exactly t+1 entries, each in [0,100].
  void push_row(std::vector<double> row);

  int n_tasks() const { return n_tasks_; }
  int completed() const { return static_cast<int>(rows_.size()); }
  /// a_{k,j}, both 1-based.
  double at(int k, int j) const;
  const std::vector<std::vector<double>>& rows() const { return rows_; }

 private:
  int n_tasks_ = 0;
  std::vector<std::vector<double>> rows_;
};

/// A_k: arithmetic mean of row k (1-based). Throws std::logic_error when the
/// row is not populated yet.
double average_accuracy(const AccuracyMatrix& m, int k);

}  // namespace zsil
