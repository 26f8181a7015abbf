#include "zsil/tasks.hpp"

#include "zsil/rng.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

namespace zsil {

Tensor LabeledDataset::image(long i) const {
  if (i < 0 || i >= size()) throw std::out_of_range("dataset: image index out of range");
  std::vector<int> shape = image_shape;
  Tensor t(shape);
  Eigen::Map<Eigen::RowVectorXd>(t.data(), images.cols()) = images.row(i);
  return t;
}

Tensor LabeledDataset::batch(const std::vector<long>& indices) const {
  if (indices.empty()) throw std::invalid_argument("dataset: empty batch");
  std::vector<int> shape;
  shape.push_back(static_cast<int>(indices.size()));
  shape.insert(shape.end(), image_shape.begin(), image_shape.end());
  Tensor t(shape);
  MatrixMap rows(t.data(), static_cast<Eigen::Index>(indices.size()), images.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] < 0 || indices[r] >= size())
      throw std::out_of_range("dataset: batch index out of range");
    rows.row(static_cast<Eigen::Index>(r)) = images.row(indices[r]);
  }
  return t;
}

std::vector<int> LabeledDataset::distinct_labels() const {
  std::set<int> s(labels.begin(), labels.end());
  return {s.begin(), s.end()};
}

void LabeledDataset::validate() const {
  if (images.rows() != static_cast<Eigen::Index>(labels.size()))
    throw std::invalid_argument("dataset: image count does not match label count");
  if (images.cols() != shape_size(image_shape))
    throw std::invalid_argument("dataset: image width does not match declared shape");
  for (int y : labels)
    if (y < 0) throw std::invalid_argument("dataset: labels must be nonnegative");
}

void TaskSequence::validate() const {
  std::set<int> seen;
  for (const Task& t : tasks) {
    for (int c : t.classes)
      if (!seen.insert(c).second)
        throw std::invalid_argument("task sequence: class " + std::to_string(c) +
                                    " appears in more than one task");
    const std::set<int> cls(t.classes.begin(), t.classes.end());
    for (int y : t.train.labels)
      if (!cls.count(y)) throw std::invalid_argument("task sequence: train label outside task classes");
    for (int y : t.test.labels)
      if (!cls.count(y)) throw std::invalid_argument("task sequence: test label outside task classes");
  }
}

namespace {

constexpr int kCifarDim = 32 * 32 * 3;
constexpr int kCifarRecord = kCifarDim + 1;
constexpr int kCifarPerFile = 10000;

void read_cifar_file(const std::string& path, LabeledDataset& out, long row0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cifar10: cannot open " + path);
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<long long>(in.tellg());
  if (bytes != static_cast<long long>(kCifarRecord) * kCifarPerFile)
    throw std::runtime_error("cifar10: " + path + " has " + std::to_string(bytes) +
                             " bytes, expected " + std::to_string(kCifarRecord * kCifarPerFile) +
                             " (3073-byte records)");
  in.seekg(0);
  std::vector<unsigned char> record(kCifarRecord);
  for (int r = 0; r < kCifarPerFile; ++r) {
    in.read(reinterpret_cast<char*>(record.data()), kCifarRecord);
    if (!in) throw std::runtime_error("cifar10: truncated read in " + path);
    const int label = record[0];
    if (label > 9) throw std::runtime_error("cifar10: invalid label byte in " + path);
    out.labels[static_cast<std::size_t>(row0 + r)] = label;
    auto row = out.images.row(row0 + r);
    for (int i = 0; i < kCifarDim; ++i) row(i) = record[static_cast<std::size_t>(i) + 1] / 255.0;
  }
}

}  // namespace

std::pair<LabeledDataset, LabeledDataset> load_cifar10(const std::string& dir) {
  LabeledDataset train, test;
  train.image_shape = {3, 32, 32};
  train.images.resize(5L * kCifarPerFile, kCifarDim);
  train.labels.resize(5 * kCifarPerFile);
  train.split = Split::kTrain;
  for (int f = 0; f < 5; ++f)
    read_cifar_file(dir + "/data_batch_" + std::to_string(f + 1) + ".bin", train,
                    static_cast<long>(f) * kCifarPerFile);

  test.image_shape = {3, 32, 32};
  test.images.resize(kCifarPerFile, kCifarDim);
  test.labels.resize(kCifarPerFile);
  test.split = Split::kTest;
  read_cifar_file(dir + "/test_batch.bin", test, 0);
  return {std::move(train), std::move(test)};
}

TaskSequence make_synthetic_stream(int n_tasks, int classes_per_task, int samples_per_class,
                                   const std::vector<int>& image_shape, double separation,
                                   std::uint64_t seed, double noise_sigma) {
  if (n_tasks < 1 || classes_per_task < 1 || samples_per_class < 1)
    throw std::invalid_argument("synthetic stream: counts must be >= 1");
  if (!(separation > 0.0)) throw std::invalid_argument("synthetic stream: separation must be positive");
  if (!(noise_sigma > 0.0)) throw std::invalid_argument("synthetic stream: noise sigma must be positive");
  const auto dim = shape_size(image_shape);
  const int n_classes = n_tasks * classes_per_task;

  // Templates sit at 0.5 +- amplitude per pixel with a seeded sign pattern;
  // samples add isotropic Gaussian noise and clamp into [0,1].
  const double amplitude = std::min(separation / 2.0, 0.45);
  Rng template_rng(derive_seed(seed, 1));
  MatrixX templates(n_classes, dim);
  for (int c = 0; c < n_classes; ++c)
    for (Eigen::Index i = 0; i < dim; ++i)
      templates(c, i) = 0.5 + (template_rng.bernoulli(0.5) ? amplitude : -amplitude);

  const int n_train = std::max(1, (samples_per_class * 4) / 5);
  const int n_test = samples_per_class - n_train;

  TaskSequence seq;
  seq.image_shape = image_shape;
  seq.total_classes = n_classes;
  for (int t = 0; t < n_tasks; ++t) {
    Task task;
    const int tr_rows = n_train * classes_per_task;
    const int te_rows = n_test * classes_per_task;
    task.train.image_shape = image_shape;
    task.train.images.resize(tr_rows, dim);
    task.train.labels.resize(static_cast<std::size_t>(tr_rows));
    task.train.split = Split::kTrain;
    task.test.image_shape = image_shape;
    task.test.images.resize(std::max(te_rows, 0), dim);
    task.test.labels.resize(static_cast<std::size_t>(std::max(te_rows, 0)));
    task.test.split = Split::kTest;
    long tr = 0, te = 0;
    for (int j = 0; j < classes_per_task; ++j) {
      const int c = t * classes_per_task + j;
      task.classes.push_back(c);
      Rng rng(derive_seed(seed, 2, static_cast<std::uint64_t>(c)));
      for (int s = 0; s < samples_per_class; ++s) {
        const bool is_train = s < n_train;
        auto row = is_train ? task.train.images.row(tr) : task.test.images.row(te);
        for (Eigen::Index i = 0; i < dim; ++i)
          row(i) = std::clamp(templates(c, i) + noise_sigma * rng.normal(), 0.0, 1.0);
        if (is_train)
          task.train.labels[static_cast<std::size_t>(tr++)] = c;
        else
          task.test.labels[static_cast<std::size_t>(te++)] = c;
      }
    }
    seq.tasks.push_back(std::move(task));
  }
  seq.validate();
  return seq;
}

TaskSequence split_tasks(const LabeledDataset& train, const LabeledDataset& test,
                         int classes_per_task, std::uint64_t seed) {
  train.validate();
  test.validate();
  std::vector<int> classes = train.distinct_labels();
  if (classes_per_task < 1 || static_cast<int>(classes.size()) % classes_per_task != 0)
    throw std::invalid_argument("split_tasks: class count " + std::to_string(classes.size()) +
                                " not divisible by classes_per_task " +
                                std::to_string(classes_per_task));
  Rng rng(derive_seed(seed, 3));
  for (std::size_t i = classes.size(); i > 1; --i)
    std::swap(classes[i - 1], classes[rng.uniform_int(i)]);

  const int n_tasks = static_cast<int>(classes.size()) / classes_per_task;
  TaskSequence seq;
  seq.image_shape = train.image_shape;
  seq.total_classes = static_cast<int>(classes.size());

  auto carve = [](const LabeledDataset& src, const std::set<int>& keep, Split split) {
    LabeledDataset out;
    out.image_shape = src.image_shape;
    out.split = split;
    std::vector<long> rows;
    for (long i = 0; i < src.size(); ++i)
      if (keep.count(src.labels[static_cast<std::size_t>(i)])) rows.push_back(i);
    out.images.resize(static_cast<Eigen::Index>(rows.size()), src.images.cols());
    out.labels.resize(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      out.images.row(static_cast<Eigen::Index>(r)) = src.images.row(rows[r]);
      out.labels[r] = src.labels[static_cast<std::size_t>(rows[r])];
    }
    return out;
  };

  for (int t = 0; t < n_tasks; ++t) {
    Task task;
    task.classes.assign(classes.begin() + static_cast<long>(t) * classes_per_task,
                        classes.begin() + static_cast<long>(t + 1) * classes_per_task);
    std::sort(task.classes.begin(), task.classes.end());
    const std::set<int> keep(task.classes.begin(), task.classes.end());
    task.train = carve(train, keep, Split::kTrain);
    task.test = carve(test, keep, Split::kTest);
    seq.tasks.push_back(std::move(task));
  }
  seq.validate();
  return seq;
}

}  // namespace zsil
