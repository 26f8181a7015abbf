#pragma once

#include "zsil/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace zsil {

enum class Split { kTrain, kTest };

/// Immutable image classification dataset. Images are stored as one
/// row-major (N x C*H*W) matrix with pixel values in [0,1]; labels are
/// nonnegative global class ids.
struct LabeledDataset {
  std::vector<int> image_shape;  // {C,H,W}
  MatrixX images;                // N x (C*H*W)
  std::vector<int> labels;
  Split split = Split::kTrain;

  long size() const { return static_cast<long>(labels.size()); }
  /// Single image as a (C,H,W) tensor.
  Tensor image(long i) const;
  /// Rows `indices` stacked into a (B,C,H,W) batch tensor.
  Tensor batch(const std::vector<long>& indices) const;
  std::vector<int> distinct_labels() const;
  void validate() const;
};

struct Task {
  LabeledDataset train;
  LabeledDataset test;
  std::vector<int> classes;  // ascending global ids
};

/// Ordered tasks with pairwise-disjoint class sets.
struct TaskSequence {
  std::vector<Task> tasks;
  std::vector<int> image_shape;
  int total_classes = 0;

  void validate() const;  // disjointness, label membership
};

/// Standard binary-batch CIFAR-10 layout: five train files plus test_batch,
/// 10000 records each, 1 label byte + 3072 channel-major pixel bytes.
/// Pixels are scaled to [0,1] by division by 255.
std::pair<LabeledDataset, LabeledDataset> load_cifar10(const std::string& dir);

/// Desk-scale synthetic stream: each class is an isotropic Gaussian blob
/// (std noise_sigma per pixel) around a distinct template at 0.5 +-
/// separation/2 per pixel, clamped to [0,1]. 80/20 train/test split per
/// class. Deterministic in the seed.
TaskSequence make_synthetic_stream(int n_tasks, int classes_per_task, int samples_per_class,
                                   const std::vector<int>& image_shape, double separation,
                                   std::uint64_t seed, double noise_sigma = 0.05);

/// Random class partition of a (train,test) pair into equally sized tasks.
TaskSequence split_tasks(const LabeledDataset& train, const LabeledDataset& test,
                         int classes_per_task, std::uint64_t seed);

}  // namespace zsil
