#include "zsil/recovery.hpp"

#include "zsil/format.hpp"
#include "zsil/ops.hpp"
#include "zsil/optim.hpp"
#include "zsil/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace zsil {

void RecoveryConfig::validate() const {
  if (transfer_size < 0) throw std::invalid_argument("recovery: transfer_size must be >= 0");
  if (!(eta > 0.0)) throw std::invalid_argument("recovery: eta must be positive");
  if (!(tau > 0.0)) throw std::invalid_argument("recovery: tau must be positive");
  if (beta_schedule.empty()) throw std::invalid_argument("recovery: empty beta schedule");
  double total = 0.0;
  for (const BetaShare& s : beta_schedule) {
    if (!(s.beta > 0.0)) throw std::invalid_argument("recovery: beta values must be positive");
    if (s.proportion < 0.0) throw std::invalid_argument("recovery: negative beta proportion");
    total += s.proportion;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw std::invalid_argument("recovery: beta proportions must sum to 1");
  if (max_resample < 1) throw std::invalid_argument("recovery: max_resample must be >= 1");
  if (inversion.max_steps < 1) throw std::invalid_argument("recovery: inversion step cap must be >= 1");
  if (!(inversion.lr > 0.0)) throw std::invalid_argument("recovery: inversion lr must be positive");
}

VectorX sample_output_vector(const VectorX& alpha, double beta, Rng& rng) {
  if (alpha.size() < 1) throw std::invalid_argument("sample_output_vector: empty alpha");
  if (!(beta > 0.0)) throw std::invalid_argument("sample_output_vector: beta must be positive");
  for (Eigen::Index i = 0; i < alpha.size(); ++i)
    if (!(alpha[i] > 0.0))
      throw std::invalid_argument("sample_output_vector: concentrations must be positive");

  VectorX v(alpha.size());
  for (int attempt = 0; attempt < 100; ++attempt) {
    for (Eigen::Index i = 0; i < alpha.size(); ++i) v[i] = rng.gamma(beta * alpha[i]);
    const double sum = v.sum();
    if (sum > 0.0 && std::isfinite(sum)) return v / sum;
    // All coordinates underflowed (tiny beta*alpha); redraw.
  }
  throw std::runtime_error("sample_output_vector: gamma draws underflowed repeatedly");
}

bool passes_constraint(const VectorX& v, const VectorX& gamma, double eta) {
  if (v.size() != gamma.size())
    throw std::invalid_argument("passes_constraint: length mismatch " + std::to_string(v.size()) +
                                " vs " + std::to_string(gamma.size()));
  if (!(eta > 0.0)) throw std::invalid_argument("passes_constraint: eta must be positive");
  return (v - gamma).squaredNorm() < eta;
}

namespace {

int vec_argmax(const VectorX& v) {
  Eigen::Index i;
  v.maxCoeff(&i);
  return static_cast<int>(i);
}

// Greedy fair apportionment of the beta schedule over the flattened target
// sequence: each share's running count stays within one of its quota.
struct BetaScheduler {
  explicit BetaScheduler(const std::vector<BetaShare>& schedule) : shares(schedule),
                                                                   counts(schedule.size(), 0) {}
  double next() {
    std::size_t best = shares.size();
    double best_score = 0.0;
    for (std::size_t j = 0; j < shares.size(); ++j) {
      if (shares[j].proportion <= 0.0) continue;
      const double score = (static_cast<double>(counts[j]) + 1.0) / shares[j].proportion;
      if (best == shares.size() || score < best_score) {
        best = j;
        best_score = score;
      }
    }
    ++counts[best];
    return shares[best].beta;
  }
  const std::vector<BetaShare>& shares;
  std::vector<long> counts;
};

}  // namespace

std::vector<TargetOutput> generate_target_outputs(const ConfusionMatrix& cm, const Learner& learner,
                                                  const RecoveryConfig& cfg) {
  cfg.validate();
  const int k = learner.n_seen();
  if (k < 1) throw std::invalid_argument("generate_target_outputs: no classes seen");
  if (cm.k() != k || cm.classes != learner.classes_seen())
    throw std::invalid_argument("generate_target_outputs: confusion matrix does not match learner");

  // floor(K/k) per class, remainder going to the lowest global class ids.
  const long base = cfg.transfer_size / k;
  long remainder = cfg.transfer_size - base * k;
  std::vector<long> per_class(static_cast<std::size_t>(k), base);
  std::vector<int> by_id(static_cast<std::size_t>(k));
  std::iota(by_id.begin(), by_id.end(), 0);
  std::sort(by_id.begin(), by_id.end(), [&](int a, int b) {
    return cm.classes[static_cast<std::size_t>(a)] < cm.classes[static_cast<std::size_t>(b)];
  });
  for (int i = 0; i < k && remainder > 0; ++i, --remainder)
    ++per_class[static_cast<std::size_t>(by_id[static_cast<std::size_t>(i)])];

  BetaScheduler betas(cfg.beta_schedule);
  std::vector<TargetOutput> targets;
  targets.reserve(static_cast<std::size_t>(cfg.transfer_size));
  long sample_index = 0;

  for (int ci = 0; ci < k; ++ci) {
    const int class_id = cm.classes[static_cast<std::size_t>(ci)];
    const VectorX alpha = class_similarity_alpha(learner, class_id);
    const int head = learner.multi_head() ? learner.head_of_class(class_id) : -1;
    const int class_index = learner.multi_head() ? learner.head_column(class_id) : ci;

    VectorX gamma;
    if (learner.multi_head()) {
      const auto& head_cls = learner.task_classes()[static_cast<std::size_t>(head)];
      gamma.resize(static_cast<Eigen::Index>(head_cls.size()));
      for (std::size_t j = 0; j < head_cls.size(); ++j)
        gamma[static_cast<Eigen::Index>(j)] = cm.normalized(ci, learner.seen_index(head_cls[j]));
    } else {
      gamma = cm.normalized.row(ci);
    }

    for (long j = 0; j < per_class[static_cast<std::size_t>(ci)]; ++j) {
      TargetOutput t;
      t.class_index = class_index;
      t.class_id = class_id;
      t.head = head;
      t.sample_index = sample_index;
      t.beta = betas.next();

      Rng rng(derive_seed(cfg.seed, 21, static_cast<std::uint64_t>(sample_index)));
      bool accepted = false;
      double best_distance = 0.0;
      VectorX best;
      for (int attempt = 0; attempt < cfg.max_resample && !accepted; ++attempt) {
        VectorX v = sample_output_vector(alpha, t.beta, rng);
        if (vec_argmax(v) != class_index) continue;  // reject mixed-target vectors
        const double d = (v - gamma).squaredNorm();
        if (best.size() == 0 || d < best_distance) {
          best = v;
          best_distance = d;
        }
        if (d < cfg.eta) {
          t.vector = std::move(v);
          t.distance = d;
          accepted = true;
        }
      }
      if (!accepted) {
        // Never loop forever: keep the closest argmax-correct candidate, or
        // the one-hot vertex when even that never showed up.
        if (best.size() == 0) {
          best = VectorX::Zero(gamma.size());
          best[class_index] = 1.0;
          best_distance = (best - gamma).squaredNorm();
        }
        t.vector = std::move(best);
        t.distance = best_distance;
        t.fallback = true;
      }
      targets.push_back(std::move(t));
      ++sample_index;
    }
  }
  return targets;
}

TransferSample synthesize_sample(const Learner& learner, const TargetOutput& target,
                                 const RecoveryConfig& cfg, std::optional<int> head) {
  cfg.validate();
  if (learner.multi_head()) {
    if (!head) head = target.head;
    if (*head < 0 || *head >= learner.config().heads.n_heads())
      throw std::invalid_argument("synthesize_sample: bad head index");
  } else if (head) {
    throw std::invalid_argument("synthesize_sample: single-head learner takes no head index");
  }

  const auto& in_shape = learner.config().input_shape;
  std::vector<int> batch_shape = {1, in_shape[0], in_shape[1], in_shape[2]};

  // Columns of the raw logits that the target vector spans.
  std::vector<int> cols;
  if (learner.multi_head()) {
    cols.resize(static_cast<std::size_t>(learner.config().heads.width(*head)));
    std::iota(cols.begin(), cols.end(), 0);
  } else {
    for (int c : learner.classes_seen()) cols.push_back(learner.head_column(c));
  }
  if (static_cast<Eigen::Index>(cols.size()) != target.vector.size())
    throw std::invalid_argument("synthesize_sample: target width does not match logit span");

  Rng rng(derive_seed(cfg.seed, 22, static_cast<std::uint64_t>(target.sample_index)));
  Tensor x(batch_shape);
  for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = rng.uniform();

  Tensor target_row({1, static_cast<int>(target.vector.size())}, target.vector.array());

  auto eval_loss = [&](const Tensor& image, GradientMap* grads) {
    ForwardGraph fg = forward_graph(learner, image, learner.multi_head()
                                                        ? std::optional<int>(*head)
                                                        : std::nullopt);
    Graph& g = fg.graph;
    NodeId logits = fg.logits;
    const bool full_span = static_cast<Eigen::Index>(cols.size()) == g.value(logits).dim(1) &&
                           std::is_sorted(cols.begin(), cols.end()) &&
                           (cols.empty() || cols.back() == static_cast<int>(cols.size()) - 1);
    if (!full_span) logits = g.select_columns(logits, cols);
    const NodeId probs = g.softmax_temperature(logits, cfg.tau);
    const NodeId loss = g.cross_entropy(probs, g.constant(target_row));
    const double value = g.value(loss).item();
    if (!std::isfinite(value))
      throw std::runtime_error("synthesize_sample: non-finite inversion loss at sample " +
                               std::to_string(target.sample_index));
    if (grads) *grads = g.backward(loss, {"x"});
    return value;
  };

  AdamConfig adam;
  adam.lr = cfg.inversion.lr;
  AdamState state(x.size());

  double best_loss = eval_loss(x, nullptr);
  Tensor best_x = x;
  std::vector<double> best_history{best_loss};
  int iterations = 0;

  for (int step = 1; step <= cfg.inversion.max_steps; ++step) {
    GradientMap grads;
    eval_loss(x, &grads);
    adam_step(x, grads.at("x"), state, adam);
    x.values() = x.values().min(1.0).max(0.0);
    ++iterations;

    const double loss = eval_loss(x, nullptr);
    if (loss < best_loss) {
      best_loss = loss;
      best_x = x;
    }
    best_history.push_back(best_loss);
    const int w = cfg.inversion.early_stop_window;
    if (w > 0 && static_cast<int>(best_history.size()) > w &&
        best_history[best_history.size() - 1 - static_cast<std::size_t>(w)] - best_loss <
            cfg.inversion.early_stop_tol)
      break;
  }

  TransferSample s;
  s.image = best_x.reshaped({in_shape[0], in_shape[1], in_shape[2]});
  s.label = target.class_id;
  s.head = target.head;
  s.target = target.vector;
  s.final_loss = best_loss;
  s.iterations = iterations;
  return s;
}

namespace {

double bilinear(const double* plane, int h, int w, double y, double x) {
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const double wy = y - y0, wx = x - x0;
  double acc = 0.0;
  for (int dy = 0; dy <= 1; ++dy)
    for (int dx = 0; dx <= 1; ++dx) {
      const int yy = y0 + dy, xx = x0 + dx;
      if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;  // zero fill
      const double weight = (dy ? wy : 1.0 - wy) * (dx ? wx : 1.0 - wx);
      acc += weight * plane[yy * w + xx];
    }
  return acc;
}

Tensor resample(const Tensor& img, double cos_t, double sin_t, double inv_scale) {
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  Tensor out(img.shape());
  for (int ch = 0; ch < c; ++ch) {
    const double* in = img.data() + static_cast<std::ptrdiff_t>(ch) * h * w;
    double* o = out.data() + static_cast<std::ptrdiff_t>(ch) * h * w;
    for (int r = 0; r < h; ++r)
      for (int col = 0; col < w; ++col) {
        const double dy = (r - cy) * inv_scale;
        const double dx = (col - cx) * inv_scale;
        const double sy = cy + dy * cos_t + dx * sin_t;
        const double sx = cx - dy * sin_t + dx * cos_t;
        o[r * w + col] = bilinear(in, h, w, sy, sx);
      }
  }
  return out;
}

constexpr int kCropPad = 2;

}  // namespace

TransferSample augment_with(const TransferSample& sample, const AugmentParams& params, Rng& rng) {
  TransferSample out = sample;
  Tensor& img = out.image;
  if (img.rank() != 3) throw std::invalid_argument("augment: expected a (C,H,W) image");
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);

  if (params.rotate_deg) {
    const double rad = *params.rotate_deg * 3.14159265358979323846 / 180.0;
    img = resample(img, std::cos(rad), std::sin(rad), 1.0);
  }
  if (params.scale && *params.scale != 1.0)
    img = resample(img, 1.0, 0.0, 1.0 / *params.scale);
  if (params.channel_jitter) {
    if (params.channel_jitter->size() != c)
      throw std::invalid_argument("augment: jitter size must equal channel count");
    for (int ch = 0; ch < c; ++ch)
      Eigen::Map<ArrayX>(img.data() + static_cast<std::ptrdiff_t>(ch) * h * w, h * w) +=
          (*params.channel_jitter)[ch];
  }
  if (params.crop_offset) {
    const auto [dr, dc] = *params.crop_offset;
    if (dr < 0 || dr > 2 * kCropPad || dc < 0 || dc > 2 * kCropPad)
      throw std::invalid_argument("augment: crop offset out of padded range");
    Tensor cropped(img.shape());
    for (int ch = 0; ch < c; ++ch) {
      const double* in = img.data() + static_cast<std::ptrdiff_t>(ch) * h * w;
      double* o = cropped.data() + static_cast<std::ptrdiff_t>(ch) * h * w;
      for (int r = 0; r < h; ++r)
        for (int col = 0; col < w; ++col) {
          const int sy = r + dr - kCropPad, sx = col + dc - kCropPad;
          o[r * w + col] = (sy >= 0 && sy < h && sx >= 0 && sx < w) ? in[sy * w + sx] : 0.0;
        }
    }
    img = std::move(cropped);
  }
  if (params.noise_amplitude) {
    const double a = *params.noise_amplitude;
    for (Eigen::Index i = 0; i < img.size(); ++i) img[i] += rng.uniform(-a, a);
  }
  img.values() = img.values().min(1.0).max(0.0);
  return out;
}

TransferSample augment(const TransferSample& sample, Rng& rng) {
  static const double kScales[4] = {0.95, 0.975, 1.0, 1.025};
  AugmentParams p;
  if (rng.bernoulli(0.5)) p.rotate_deg = rng.uniform(-50.0, 50.0);
  if (rng.bernoulli(0.5)) p.scale = kScales[rng.uniform_int(4)];
  if (rng.bernoulli(0.5)) {
    VectorX jitter(sample.image.dim(0));
    for (Eigen::Index i = 0; i < jitter.size(); ++i) jitter[i] = rng.uniform(-0.1, 0.1);
    p.channel_jitter = std::move(jitter);
  }
  if (rng.bernoulli(0.5))
    p.crop_offset = std::make_pair(static_cast<int>(rng.uniform_int(2 * kCropPad + 1)),
                                   static_cast<int>(rng.uniform_int(2 * kCropPad + 1)));
  if (rng.bernoulli(0.5)) p.noise_amplitude = 10.0 / 255.0;
  return augment_with(sample, p, rng);
}

TransferSet recover_transfer_set(const Learner& learner, const ConfusionMatrix& cm,
                                 const RecoveryConfig& cfg) {
  cfg.validate();
  TransferSet set;
  set.recorded_classes = learner.classes_seen();
  if (cfg.transfer_size == 0) return set;
  if (learner.n_seen() < 1) throw std::invalid_argument("recover_transfer_set: no classes seen");

  const std::vector<TargetOutput> targets = generate_target_outputs(cm, learner, cfg);
  std::vector<TransferSample> results(targets.size());
  std::vector<char> ok(targets.size(), 0);

  parallel_for(static_cast<long>(targets.size()), [&](long i) {
    const auto idx = static_cast<std::size_t>(i);
    try {
      TransferSample s = synthesize_sample(learner, targets[idx], cfg);
      Rng aug_rng(derive_seed(cfg.seed, 23, static_cast<std::uint64_t>(targets[idx].sample_index)));
      results[idx] = augment(s, aug_rng);
      ok[idx] = 1;
    } catch (const std::runtime_error&) {
      ok[idx] = 0;  // aborted sample (non-finite loss)
    }
  });

  long aborted = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (ok[i])
      set.samples.push_back(std::move(results[i]));
    else
      ++aborted;
  }
  set.aborted = aborted;
  if (aborted * 10 > static_cast<long>(targets.size()))
    throw std::runtime_error("recover_transfer_set: " + std::to_string(aborted) + " of " +
                             std::to_string(targets.size()) + " samples aborted");
  return set;
}

void write_tensor_file(const Tensor& t, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "tensor " << t.rank();
  for (int d : t.shape()) out << ' ' << d;
  out << '\n';
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.size()) * static_cast<std::streamsize>(sizeof(double)));
  if (!out) throw std::runtime_error("write failure on " + path);
}

Tensor read_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("truncated tensor file " + path);
  std::istringstream ls(line);
  std::string tag;
  int rank = 0;
  ls >> tag >> rank;
  if (tag != "tensor" || rank < 0) throw std::runtime_error("bad tensor header in " + path);
  std::vector<int> shape(static_cast<std::size_t>(rank));
  for (int& d : shape)
    if (!(ls >> d)) throw std::runtime_error("bad tensor dims in " + path);
  Tensor t{shape};
  in.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.size()) * static_cast<std::streamsize>(sizeof(double)));
  if (!in) throw std::runtime_error("truncated tensor payload in " + path);
  return t;
}

void export_transfer_set(const TransferSet& set, const std::string& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir + "/manifest.csv", std::ios::binary);
  if (!manifest) throw std::runtime_error("cannot open " + dir + "/manifest.csv");
  manifest << "sample,class_id,head,final_loss,iterations,target\n";
  char name[32];
  for (std::size_t i = 0; i < set.samples.size(); ++i) {
    const TransferSample& s = set.samples[i];
    std::snprintf(name, sizeof(name), "sample_%06zu.bin", i);
    write_tensor_file(s.image, dir + "/" + name);
    manifest << i << ',' << s.label << ',' << s.head << ',' << format_g17(s.final_loss) << ','
             << s.iterations << ',';
    for (Eigen::Index j = 0; j < s.target.size(); ++j) {
      if (j) manifest << ';';
      manifest << format_g17(s.target[j]);
    }
    manifest << '\n';
  }
  if (!manifest) throw std::runtime_error("write failure on manifest.csv");
}

}  // namespace zsil
