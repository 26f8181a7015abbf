#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "zsil/rng.hpp"
#include "zsil/tasks.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

using namespace zsil;
namespace fs = std::filesystem;

namespace {

// Writes CIFAR-layout batch files with label = record index mod 10 and a
// recognizable pixel ramp, so the loader's scaling and ordering can be
// checked byte by byte.
void write_fake_cifar(const fs::path& dir) {
  fs::create_directories(dir);
  auto write_file = [](const fs::path& p, int salt) {
    std::ofstream out(p, std::ios::binary);
    std::vector<unsigned char> record(3073);
    for (int r = 0; r < 10000; ++r) {
      record[0] = static_cast<unsigned char>(r % 10);
      for (int i = 0; i < 3072; ++i)
        record[static_cast<std::size_t>(i) + 1] =
            static_cast<unsigned char>((i + r + salt) % 256);
      out.write(reinterpret_cast<const char*>(record.data()), 3073);
    }
  };
  for (int f = 1; f <= 5; ++f) write_file(dir / ("data_batch_" + std::to_string(f) + ".bin"), f);
  write_file(dir / "test_batch.bin", 99);
}

}  // namespace

TEST_CASE("cifar10 loader reads the binary batch layout") {
  const fs::path dir = fs::temp_directory_path() / "zsil_fake_cifar";
  write_fake_cifar(dir);
  auto [train, test] = load_cifar10(dir.string());

  CHECK(train.size() == 50000);
  CHECK(test.size() == 10000);
  CHECK(train.image_shape == std::vector<int>{3, 32, 32});

  // label of record r is r mod 10; per-class histogram is exactly 5000
  std::map<int, int> hist;
  for (int y : train.labels) ++hist[y];
  for (int c = 0; c < 10; ++c) CHECK(hist[c] == 5000);

  CHECK(train.images.minCoeff() >= 0.0);
  CHECK(train.images.maxCoeff() <= 1.0);
  // first record of batch 1: pixel i holds (i + 0 + 1) mod 256, scaled by 255
  CHECK(train.images(0, 0) == doctest::Approx(1.0 / 255.0));
  CHECK(train.images(0, 253) == doctest::Approx(254.0 / 255.0));
  CHECK(train.images(0, 255) == doctest::Approx(0.0));

  fs::remove_all(dir);
}

TEST_CASE("cifar10 loader reports missing and truncated files") {
  const fs::path dir = fs::temp_directory_path() / "zsil_broken_cifar";
  fs::remove_all(dir);
  try {
    load_cifar10(dir.string());
    CHECK(false);
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("data_batch_1.bin") != std::string::npos);
  }

  write_fake_cifar(dir);
  fs::resize_file(dir / "data_batch_3.bin", 3073 * 100 + 17);
  try {
    load_cifar10(dir.string());
    CHECK(false);
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("data_batch_3.bin") != std::string::npos);
    CHECK(std::string(e.what()).find("3073") != std::string::npos);
  }
  fs::remove_all(dir);
}

TEST_CASE("synthetic stream construction") {
  TaskSequence seq = make_synthetic_stream(5, 2, 20, {1, 4, 4}, 0.8, 42);
  CHECK(seq.tasks.size() == 5);
  CHECK(seq.total_classes == 10);

  std::set<int> all;
  long total = 0;
  for (const Task& t : seq.tasks) {
    CHECK(t.classes.size() == 2);
    for (int c : t.classes) CHECK(all.insert(c).second);  // disjoint
    total += t.train.size() + t.test.size();
    CHECK(t.train.images.minCoeff() >= 0.0);
    CHECK(t.train.images.maxCoeff() <= 1.0);
    CHECK(t.train.size() == 2 * 16);  // 80/20 split of 20
    CHECK(t.test.size() == 2 * 4);
  }
  CHECK(all.size() == 10);
  CHECK(total == 5 * 2 * 20);
}

TEST_CASE("synthetic stream is deterministic in the seed") {
  TaskSequence a = make_synthetic_stream(2, 2, 10, {1, 3, 3}, 0.5, 7);
  TaskSequence b = make_synthetic_stream(2, 2, 10, {1, 3, 3}, 0.5, 7);
  TaskSequence c = make_synthetic_stream(2, 2, 10, {1, 3, 3}, 0.5, 8);
  CHECK((a.tasks[0].train.images.array() == b.tasks[0].train.images.array()).all());
  CHECK((a.tasks[1].test.images.array() == b.tasks[1].test.images.array()).all());
  CHECK(!(a.tasks[0].train.images.array() == c.tasks[0].train.images.array()).all());
}

TEST_CASE("synthetic stream rejects bad arguments") {
  CHECK_THROWS_AS(make_synthetic_stream(0, 2, 10, {1, 3, 3}, 0.5, 1), std::invalid_argument);
  CHECK_THROWS_AS(make_synthetic_stream(2, 2, 10, {1, 3, 3}, 0.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(make_synthetic_stream(2, 2, 10, {1, 3, 3}, -1.0, 1), std::invalid_argument);
}

TEST_CASE("split_tasks partitions every image exactly once") {
  TaskSequence base = make_synthetic_stream(1, 6, 30, {1, 2, 2}, 0.6, 3);
  const LabeledDataset& train = base.tasks[0].train;
  const LabeledDataset& test = base.tasks[0].test;

  TaskSequence seq = split_tasks(train, test, 2, 17);
  CHECK(seq.tasks.size() == 3);

  std::set<int> all;
  long train_total = 0, test_total = 0;
  for (const Task& t : seq.tasks) {
    for (int c : t.classes) CHECK(all.insert(c).second);
    train_total += t.train.size();
    test_total += t.test.size();
    const std::set<int> cls(t.classes.begin(), t.classes.end());
    for (int y : t.train.labels) CHECK(cls.count(y) == 1);
  }
  CHECK(all.size() == 6);
  CHECK(train_total == train.size());
  CHECK(test_total == test.size());

  CHECK_THROWS_AS(split_tasks(train, test, 4, 17), std::invalid_argument);  // 6 % 4 != 0
}

TEST_CASE("dataset batch gathers rows in order") {
  TaskSequence seq = make_synthetic_stream(1, 2, 10, {1, 2, 2}, 0.5, 5);
  const LabeledDataset& d = seq.tasks[0].train;
  Tensor b = d.batch({3, 0});
  CHECK(b.shape() == std::vector<int>{2, 1, 2, 2});
  CHECK(b[0] == d.images(3, 0));
  CHECK(b[4] == d.images(0, 0));
  CHECK_THROWS_AS(d.batch({d.size()}), std::out_of_range);
  CHECK_THROWS_AS(d.batch({}), std::invalid_argument);
}
