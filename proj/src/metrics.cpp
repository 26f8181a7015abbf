#include "zsil/metrics.hpp"

#include <stdexcept>
#include <string>

namespace zsil {

static void check_range(const std::vector<double>& row) {
  for (double a : row)
    if (!(a >= 0.0 && a <= 100.0))
      throw std::invalid_argument("accuracy matrix: entries must lie in [0,100]");
}

AccuracyMatrix AccuracyMatrix::single_row(std::vector<double> row) {
  check_range(row);
  AccuracyMatrix m(static_cast<int>(row.size()));
  m.rows_.push_back(std::move(row));
  return m;
}

void AccuracyMatrix::push_row(std::vector<double> row) {
  if (completed() >= n_tasks_) throw std::logic_error("accuracy matrix: all rows already recorded");
  if (static_cast<int>(row.size()) != completed() + 1)
    throw std::invalid_argument("accuracy matrix: row " + std::to_string(completed() + 1) +
                                " must have " + std::to_string(completed() + 1) + " entries");
  check_range(row);
  rows_.push_back(std::move(row));
}

double AccuracyMatrix::at(int k, int j) const {
  if (k < 1 || k > completed())
    throw std::out_of_range("accuracy matrix: row " + std::to_string(k) + " not recorded");
  const auto& row = rows_[static_cast<std::size_t>(k - 1)];
  if (j < 1 || j > static_cast<int>(row.size()))
    throw std::out_of_range("accuracy matrix: a_{" + std::to_string(k) + "," + std::to_string(j) +
                            "} not recorded");
  return row[static_cast<std::size_t>(j - 1)];
}

double average_accuracy(const AccuracyMatrix& m, int k) {
  if (k < 1 || k > m.completed())
    throw std::logic_error("average_accuracy: row " + std::to_string(k) + " is not populated");
  const auto& row = m.rows()[static_cast<std::size_t>(k - 1)];
  double acc = 0.0;
  for (double a : row) acc += a;
  return acc / static_cast<double>(row.size());
}

}  // namespace zsil
