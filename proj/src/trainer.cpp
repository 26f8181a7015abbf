#include "zsil/trainer.hpp"

#include "zsil/optim.hpp"
#include "zsil/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

namespace zsil {

void TrainConfig::validate() const {
  if (lambda < 0.0 || lambda1 < 0.0 || lambda2 < 0.0)
    throw std::invalid_argument("train: distillation weights must be nonnegative");
  if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (batch_replay < 1 || batch_new < 1)
    throw std::invalid_argument("train: batch sizes must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("train: learning rate must be positive");
}

namespace {

constexpr long kEvalChunk = 256;

std::vector<int> seen_columns(const Learner& learner) {
  std::vector<int> cols;
  cols.reserve(static_cast<std::size_t>(learner.n_seen()));
  for (int c : learner.classes_seen()) cols.push_back(learner.head_column(c));
  return cols;
}

bool is_identity_span(const std::vector<int>& cols, int width) {
  if (static_cast<int>(cols.size()) != width) return false;
  for (int i = 0; i < width; ++i)
    if (cols[static_cast<std::size_t>(i)] != i) return false;
  return true;
}

// Weighted cross-entropy over one batch group.
struct CeGroup {
  const NewBatch* batch;
  double weight;
};

// Weighted distillation term over one replay source.
struct KdTerm {
  const ReplayBatch* batch;
  double weight;  // lambda
  double* value_out;
};

LossInfo build_loss(const Learner& learner, Setting setting, const std::vector<CeGroup>& ce_groups,
                    const std::vector<KdTerm>& kd_terms) {
  Graph g;
  GraphBuilder builder(learner, g);
  NodeId total = -1;
  auto accumulate = [&](NodeId term) { total = total < 0 ? term : g.add(total, term); };

  LossInfo info;
  int tag = 0;
  for (const CeGroup& cg : ce_groups) {
    if (!cg.batch || cg.batch->labels.empty()) continue;
    const NewBatch& nb = *cg.batch;
    const NodeId x = g.input("new" + std::to_string(tag++) + ".x", nb.x);
    NodeId logits;
    std::vector<int> span;  // global ids defining logit columns and one-hot order
    if (setting == Setting::kTaskIL) {
      logits = builder.logits(x, nb.head);
      span = learner.task_classes()[static_cast<std::size_t>(nb.head)];
    } else {
      logits = builder.logits(x);
      span = learner.classes_seen();
      const std::vector<int> cols = seen_columns(learner);
      if (!is_identity_span(cols, g.value(logits).dim(1)))
        logits = g.select_columns(logits, cols);
    }
    Tensor onehot({static_cast<int>(nb.labels.size()), static_cast<int>(span.size())});
    for (std::size_t r = 0; r < nb.labels.size(); ++r) {
      const auto it = std::find(span.begin(), span.end(), nb.labels[r]);
      if (it == span.end())
        throw std::invalid_argument("loss: label " + std::to_string(nb.labels[r]) +
                                    " outside the logit span");
      onehot[static_cast<Eigen::Index>(r) * static_cast<Eigen::Index>(span.size()) +
             (it - span.begin())] = 1.0;
    }
    const NodeId probs = g.softmax_temperature(logits, 1.0);
    NodeId ce = g.cross_entropy(probs, g.constant(std::move(onehot)));
    info.ce += cg.weight * g.value(ce).item();
    if (cg.weight != 1.0) ce = g.scale(ce, cg.weight);
    accumulate(ce);
  }

  for (const KdTerm& term : kd_terms) {
    if (!term.batch || term.batch->total == 0) continue;
    NodeId kd = -1;
    for (const ReplayBatch::Group& grp : term.batch->groups) {
      const NodeId x = g.input("replay" + std::to_string(tag++) + ".x", grp.x);
      NodeId logits;
      if (setting == Setting::kTaskIL) {
        logits = builder.logits(x, grp.head);
      } else {
        logits = builder.logits(x);
        std::vector<int> cols;
        for (int c : grp.classes) cols.push_back(learner.head_column(c));
        if (!is_identity_span(cols, g.value(logits).dim(1)))
          logits = g.select_columns(logits, cols);
      }
      if (g.value(logits).dim(1) != static_cast<int>(grp.stored_logits.cols()))
        throw std::invalid_argument("loss: stored logit width does not match current span");
      NodeId l2 = g.squared_l2(logits, g.constant(Tensor::from_matrix(grp.stored_logits)));
      // Groups re-weighted so the term is the mean over the whole replay batch.
      const double w = static_cast<double>(grp.stored_logits.rows()) /
                       static_cast<double>(term.batch->total);
      if (w != 1.0) l2 = g.scale(l2, w);
      kd = kd < 0 ? l2 : g.add(kd, l2);
    }
    if (kd < 0) continue;
    const double kd_value = g.value(kd).item();
    if (term.value_out) *term.value_out += kd_value;
    accumulate(g.scale(kd, term.weight));
  }

  if (total < 0) total = g.constant(Tensor::scalar(0.0));
  info.total = g.value(total).item();
  std::vector<std::string> names;
  for (const auto& [name, t] : learner.parameters()) names.push_back(name);
  info.grads = g.backward(total, names);
  return info;
}

}  // namespace

LossInfo total_loss(const Learner& learner, const NewBatch* batch_new,
                    const ReplayBatch* batch_replay, double lambda, Setting setting) {
  double kd = 0.0;
  LossInfo info = build_loss(learner, setting, {{batch_new, 1.0}}, {{batch_replay, lambda, &kd}});
  info.kd = kd;
  return info;
}

LossInfo total_loss_fewshot(const Learner& learner, const NewBatch* batch_new,
                            const ReplayBatch* transfer, const ReplayBatch* memory, double lambda1,
                            double lambda2, Setting setting) {
  double kd = 0.0, kd_mem = 0.0;
  LossInfo info = build_loss(learner, setting, {{batch_new, 1.0}},
                             {{transfer, lambda1, &kd}, {memory, lambda2, &kd_mem}});
  info.kd = kd;
  info.kd_mem = kd_mem;
  return info;
}

namespace {

Tensor stack_images(const std::vector<const Tensor*>& images) {
  std::vector<int> shape = {static_cast<int>(images.size())};
  shape.insert(shape.end(), images[0]->shape().begin(), images[0]->shape().end());
  Tensor out(shape);
  const Eigen::Index stride = images[0]->size();
  for (std::size_t i = 0; i < images.size(); ++i)
    out.values().segment(static_cast<Eigen::Index>(i) * stride, stride) = images[i]->values();
  return out;
}

}  // namespace

TransferSet record_logits(const Learner& learner, TransferSet set) {
  if (set.samples.empty()) return set;
  if (!learner.multi_head()) {
    std::vector<int> cols;
    for (int c : set.recorded_classes) cols.push_back(learner.head_column(c));
    for (std::size_t start = 0; start < set.samples.size(); start += kEvalChunk) {
      const std::size_t stop = std::min(set.samples.size(), start + kEvalChunk);
      std::vector<const Tensor*> imgs;
      for (std::size_t i = start; i < stop; ++i) imgs.push_back(&set.samples[i].image);
      Tensor logits = predict_logits(learner, stack_images(imgs));
      auto lm = logits.as_rows();
      for (std::size_t i = start; i < stop; ++i) {
        VectorX row(static_cast<Eigen::Index>(cols.size()));
        for (std::size_t j = 0; j < cols.size(); ++j)
          row[static_cast<Eigen::Index>(j)] = lm(static_cast<Eigen::Index>(i - start), cols[j]);
        set.samples[i].logits = std::move(row);
      }
    }
  } else {
    std::vector<std::vector<std::size_t>> by_head(
        static_cast<std::size_t>(learner.config().heads.n_heads()));
    for (std::size_t i = 0; i < set.samples.size(); ++i) {
      const int h = set.samples[i].head;
      if (h < 0 || h >= learner.config().heads.n_heads())
        throw std::invalid_argument("record_logits: sample without a valid head");
      by_head[static_cast<std::size_t>(h)].push_back(i);
    }
    for (std::size_t h = 0; h < by_head.size(); ++h) {
      const auto& rows = by_head[h];
      for (std::size_t start = 0; start < rows.size(); start += kEvalChunk) {
        const std::size_t stop = std::min(rows.size(), start + kEvalChunk);
        std::vector<const Tensor*> imgs;
        for (std::size_t i = start; i < stop; ++i) imgs.push_back(&set.samples[rows[i]].image);
        Tensor logits = predict_logits(learner, stack_images(imgs), static_cast<int>(h));
        auto lm = logits.as_rows();
        for (std::size_t i = start; i < stop; ++i)
          set.samples[rows[i]].logits = lm.row(static_cast<Eigen::Index>(i - start));
      }
    }
  }
  return set;
}

long FewShotMemory::total() const {
  long n = 0;
  for (const auto& [c, v] : store) n += static_cast<long>(v.size());
  return n;
}

void FewShotMemory::admit_task(const LabeledDataset& data, const std::vector<int>& classes,
                               int head, std::uint64_t seed) {
  if (capacity_per_class < 1) return;
  for (int c : classes) {
    Rng rng(derive_seed(seed, 44, static_cast<std::uint64_t>(c)));
    std::vector<MemoryItem>& slot = store[c];
    slot.clear();
    long seen = 0;
    for (long i = 0; i < data.size(); ++i) {
      if (data.labels[static_cast<std::size_t>(i)] != c) continue;
      if (static_cast<int>(slot.size()) < capacity_per_class) {
        slot.push_back(MemoryItem{data.image(i), c, head, {}});
      } else {
        const auto j = rng.uniform_int(static_cast<std::uint64_t>(seen + 1));
        if (j < static_cast<std::uint64_t>(capacity_per_class))
          slot[static_cast<std::size_t>(j)] = MemoryItem{data.image(i), c, head, {}};
      }
      ++seen;
    }
  }
}

namespace {

// Common view over transfer samples and memory exemplars for batch cycling.
struct ReplayPool {
  struct Item {
    const Tensor* image;
    int head;
    const VectorX* logits;
  };
  std::vector<Item> items;
  std::vector<int> recorded_classes;  // single-head logit span

  bool empty() const { return items.empty(); }
};

ReplayPool pool_from_transfer(const TransferSet& set) {
  ReplayPool pool;
  pool.recorded_classes = set.recorded_classes;
  for (const TransferSample& s : set.samples) pool.items.push_back({&s.image, s.head, &s.logits});
  return pool;
}

ReplayPool pool_from_memory(const FewShotMemory& memory, const std::vector<int>& recorded_classes) {
  ReplayPool pool;
  pool.recorded_classes = recorded_classes;
  for (const auto& [c, items] : memory.store)
    for (const MemoryItem& m : items) pool.items.push_back({&m.image, m.head, &m.logits});
  return pool;
}

// Independent shuffled cycle over a replay pool.
class ReplayCycler {
 public:
  ReplayCycler(const ReplayPool& pool, std::uint64_t seed) : pool_(pool), rng_(seed) {
    order_.resize(pool.items.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    reshuffle();
  }

  ReplayBatch next(int batch_size, const Learner& learner) {
    ReplayBatch batch;
    if (pool_.empty()) return batch;
    std::vector<std::size_t> picked;
    for (int i = 0; i < batch_size; ++i) {
      if (cursor_ == order_.size()) {
        reshuffle();
        cursor_ = 0;
      }
      picked.push_back(order_[cursor_++]);
    }
    // Group by head; a single-head pool forms one group over its span.
    std::map<int, std::vector<std::size_t>> by_head;
    for (std::size_t idx : picked) by_head[pool_.items[idx].head].push_back(idx);
    for (auto& [head, rows] : by_head) {
      ReplayBatch::Group grp;
      grp.head = head;
      grp.classes = head < 0 ? pool_.recorded_classes
                             : learner.task_classes()[static_cast<std::size_t>(head)];
      std::vector<const Tensor*> imgs;
      grp.stored_logits.resize(static_cast<Eigen::Index>(rows.size()),
                               static_cast<Eigen::Index>(grp.classes.size()));
      for (std::size_t r = 0; r < rows.size(); ++r) {
        const ReplayPool::Item& item = pool_.items[rows[r]];
        imgs.push_back(item.image);
        if (item.logits->size() != static_cast<Eigen::Index>(grp.classes.size()))
          throw std::logic_error("replay: stored logit width does not match span");
        grp.stored_logits.row(static_cast<Eigen::Index>(r)) = *item.logits;
      }
      grp.x = stack_images(imgs);
      batch.total += static_cast<long>(rows.size());
      batch.groups.push_back(std::move(grp));
    }
    return batch;
  }

 private:
  void reshuffle() {
    for (std::size_t i = order_.size(); i > 1; --i)
      std::swap(order_[i - 1], order_[rng_.uniform_int(i)]);
  }

  const ReplayPool& pool_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

void refresh_memory_logits(const Learner& learner, FewShotMemory& memory,
                           const std::vector<int>& recorded_classes) {
  std::vector<int> cols;
  if (!learner.multi_head())
    for (int c : recorded_classes) cols.push_back(learner.head_column(c));
  for (auto& [c, items] : memory.store) {
    for (MemoryItem& m : items) {
      if (!learner.multi_head()) {
        Tensor logits = predict_logits(learner, m.image);
        VectorX row(static_cast<Eigen::Index>(cols.size()));
        for (std::size_t j = 0; j < cols.size(); ++j)
          row[static_cast<Eigen::Index>(j)] = logits[cols[j]];
        m.logits = std::move(row);
      } else {
        Tensor logits = predict_logits(learner, m.image, m.head);
        m.logits = Eigen::Map<const VectorX>(logits.data(), logits.size());
      }
    }
  }
}

// Frozen-row confusion-matrix update: rows of previously seen classes are
// carried over unchanged (their real data is gone); rows of the new classes
// come from replaying the new task's training split through the learner.
void update_confusion_matrix(TrainerState& state, const Learner& learner,
                             const LabeledDataset& incremented) {
  const int k = learner.n_seen();
  const int k_old = state.cm.k();
  ConfusionMatrix fresh = rebuild_confusion_matrix(learner, incremented);
  ConfusionMatrix merged;
  merged.classes = learner.classes_seen();
  merged.counts.setZero(k, k);
  merged.normalized.setZero(k, k);
  if (k_old > 0) {
    merged.counts.topLeftCorner(k_old, k_old) = state.cm.counts;
    merged.normalized.topLeftCorner(k_old, k_old) = state.cm.normalized;
  }
  merged.counts.bottomRows(k - k_old) = fresh.counts.bottomRows(k - k_old);
  merged.normalized.bottomRows(k - k_old) = fresh.normalized.bottomRows(k - k_old);
  state.cm = std::move(merged);
}

Learner train_core(Learner learner, const LabeledDataset& incremented,
                   const std::vector<int>& classes, const TrainConfig& cfg,
                   const RecoveryConfig& rcfg, Setting setting, TrainerState& state,
                   const TaskHooks* hooks, bool fewshot) {
  cfg.validate();
  rcfg.validate();
  incremented.validate();
  if (classes.empty()) throw std::invalid_argument("train_task: empty class set");
  for (int c : classes)
    if (learner.is_seen(c))
      throw std::invalid_argument("train_task: class " + std::to_string(c) + " already seen");
  {
    const std::set<int> cls(classes.begin(), classes.end());
    for (int y : incremented.labels)
      if (!cls.count(y))
        throw std::invalid_argument("train_task: label " + std::to_string(y) +
                                    " outside the incremented class set");
  }
  if ((setting == Setting::kTaskIL) != learner.multi_head())
    throw std::invalid_argument("train_task: setting does not match the learner's head layout");

  const std::vector<int> pre_classes = learner.classes_seen();
  const bool have_past = !pre_classes.empty();

  TransferSet transfer;
  transfer.recorded_classes = pre_classes;
  if (have_past && rcfg.transfer_size > 0) {
    transfer = recover_transfer_set(learner, state.cm, rcfg);
    transfer = record_logits(learner, std::move(transfer));
  }
  if (fewshot && have_past) refresh_memory_logits(learner, state.memory, pre_classes);
  if (hooks && hooks->on_transfer_set) hooks->on_transfer_set(learner, transfer);

  const int task_index = static_cast<int>(learner.task_classes().size());
  learner.register_task_classes(classes);

  const ReplayPool transfer_pool = pool_from_transfer(transfer);
  const ReplayPool memory_pool =
      fewshot ? pool_from_memory(state.memory, pre_classes) : ReplayPool{};
  ReplayCycler transfer_cycler(transfer_pool, derive_seed(cfg.seed, 42, task_index));
  ReplayCycler memory_cycler(memory_pool, derive_seed(cfg.seed, 43, task_index));
  Rng order_rng(derive_seed(cfg.seed, 41, static_cast<std::uint64_t>(task_index)));

  // One epoch walks the combined dataset D once: new data plus every replay
  // source, in steps of b2 + b1 per source. The optimization budget therefore
  // grows with the transfer set, as in the K+L step loop it implements.
  const long n = incremented.size();
  long combined = n;
  long denom = cfg.batch_new;
  if (!transfer_pool.empty()) {
    combined += static_cast<long>(transfer_pool.items.size());
    denom += cfg.batch_replay;
  }
  if (fewshot && !memory_pool.empty()) {
    combined += static_cast<long>(memory_pool.items.size());
    denom += cfg.batch_replay;
  }
  const long steps = (combined + denom - 1) / denom;
  std::vector<long> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0L);
  std::size_t cursor = order.size();  // forces a shuffle on first use

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (long step = 0; step < steps; ++step) {
      std::vector<long> rows;
      rows.reserve(static_cast<std::size_t>(cfg.batch_new));
      for (int i = 0; i < cfg.batch_new; ++i) {
        if (cursor == order.size()) {
          for (std::size_t j = order.size(); j > 1; --j)
            std::swap(order[j - 1], order[order_rng.uniform_int(j)]);
          cursor = 0;
        }
        rows.push_back(order[cursor++]);
      }
      NewBatch nb;
      nb.x = incremented.batch(rows);
      for (long r : rows) nb.labels.push_back(incremented.labels[static_cast<std::size_t>(r)]);
      nb.head = task_index;

      ReplayBatch sb, mb;
      if (!transfer_pool.empty()) sb = transfer_cycler.next(cfg.batch_replay, learner);
      if (fewshot && !memory_pool.empty()) mb = memory_cycler.next(cfg.batch_replay, learner);

      const LossInfo li =
          fewshot ? total_loss_fewshot(learner, &nb, sb.total ? &sb : nullptr,
                                       mb.total ? &mb : nullptr, cfg.lambda1, cfg.lambda2, setting)
                  : total_loss(learner, &nb, sb.total ? &sb : nullptr, cfg.lambda, setting);
      for (auto& [name, p] : learner.parameters()) sgd_step(p, li.grads.at(name), cfg.lr);
    }
  }

  update_confusion_matrix(state, learner, incremented);
  if (fewshot)
    state.memory.admit_task(incremented, classes, learner.multi_head() ? task_index : -1,
                            cfg.seed);
  return learner;
}

}  // namespace

Learner train_task(Learner learner, const LabeledDataset& incremented,
                   const std::vector<int>& classes, const TrainConfig& cfg,
                   const RecoveryConfig& rcfg, Setting setting, TrainerState& state,
                   const TaskHooks* hooks) {
  return train_core(std::move(learner), incremented, classes, cfg, rcfg, setting, state, hooks,
                    false);
}

Learner train_task_fewshot(Learner learner, const LabeledDataset& incremented,
                           const std::vector<int>& classes, const TrainConfig& cfg,
                           const RecoveryConfig& rcfg, Setting setting, TrainerState& state,
                           const TaskHooks* hooks) {
  if (state.memory.capacity_per_class < 1)
    throw std::invalid_argument("train_task_fewshot: memory capacity must be >= 1");
  return train_core(std::move(learner), incremented, classes, cfg, rcfg, setting, state, hooks,
                    true);
}

double evaluate_accuracy(const Learner& learner, const LabeledDataset& data, Setting setting,
                         std::optional<int> task_index) {
  data.validate();
  if (data.size() == 0) throw std::invalid_argument("evaluate_accuracy: empty dataset");
  if ((setting == Setting::kTaskIL) != task_index.has_value())
    throw std::invalid_argument("evaluate_accuracy: task index required iff task-incremental");
  long correct = 0;
  for (long start = 0; start < data.size(); start += kEvalChunk) {
    const long stop = std::min(data.size(), start + kEvalChunk);
    std::vector<long> idx(static_cast<std::size_t>(stop - start));
    std::iota(idx.begin(), idx.end(), start);
    if (setting == Setting::kClassIL) {
      MatrixX logits = seen_logits(learner, data.batch(idx));
      for (long i = start; i < stop; ++i) {
        Eigen::Index best;
        logits.row(i - start).maxCoeff(&best);
        if (learner.classes_seen()[static_cast<std::size_t>(best)] ==
            data.labels[static_cast<std::size_t>(i)])
          ++correct;
      }
    } else {
      Tensor logits = predict_logits(learner, data.batch(idx), *task_index);
      auto lm = logits.as_rows();
      const auto& cls = learner.task_classes()[static_cast<std::size_t>(*task_index)];
      for (long i = start; i < stop; ++i) {
        Eigen::Index best;
        lm.row(i - start).maxCoeff(&best);
        if (cls[static_cast<std::size_t>(best)] == data.labels[static_cast<std::size_t>(i)])
          ++correct;
      }
    }
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(data.size());
}

SequenceResult run_sequence(const TaskSequence& stream, const LearnerConfig& learner_cfg,
                            const TrainConfig& cfg, const RecoveryConfig& rcfg, Setting setting,
                            int fewshot_capacity, const SequenceHooks* hooks) {
  stream.validate();
  if (stream.tasks.empty()) throw std::invalid_argument("run_sequence: empty stream");
  Learner learner = build_learner(learner_cfg);
  TrainerState state;
  state.memory.capacity_per_class = fewshot_capacity;
  AccuracyMatrix acc(static_cast<int>(stream.tasks.size()));

  for (std::size_t t = 0; t < stream.tasks.size(); ++t) {
    const Task& task = stream.tasks[t];
    TaskHooks th;
    if (hooks && hooks->on_transfer_set)
      th.on_transfer_set = [&](const Learner& l, const TransferSet& s) {
        hooks->on_transfer_set(static_cast<int>(t), l, s);
      };
    learner = fewshot_capacity > 0
                  ? train_task_fewshot(std::move(learner), task.train, task.classes, cfg, rcfg,
                                       setting, state, &th)
                  : train_task(std::move(learner), task.train, task.classes, cfg, rcfg, setting,
                               state, &th);
    std::vector<double> row;
    for (std::size_t j = 0; j <= t; ++j)
      row.push_back(evaluate_accuracy(learner, stream.tasks[j].test, setting,
                                      setting == Setting::kTaskIL
                                          ? std::optional<int>(static_cast<int>(j))
                                          : std::nullopt));
    acc.push_row(std::move(row));
    if (hooks && hooks->on_task_done) hooks->on_task_done(static_cast<int>(t), learner, state.cm);
  }
  return {std::move(acc), std::move(learner)};
}

SequenceResult run_joint(const TaskSequence& stream, const LearnerConfig& learner_cfg,
                         const TrainConfig& cfg, Setting setting) {
  stream.validate();
  cfg.validate();
  if (stream.tasks.empty()) throw std::invalid_argument("run_joint: empty stream");
  Learner learner = build_learner(learner_cfg);
  if ((setting == Setting::kTaskIL) != learner.multi_head())
    throw std::invalid_argument("run_joint: setting does not match the learner's head layout");
  for (const Task& task : stream.tasks) learner.register_task_classes(task.classes);

  // Union of all training splits.
  long n = 0;
  for (const Task& task : stream.tasks) n += task.train.size();
  LabeledDataset all;
  all.image_shape = stream.image_shape;
  all.images.resize(n, shape_size(stream.image_shape));
  all.labels.resize(static_cast<std::size_t>(n));
  std::vector<int> head_of_row(static_cast<std::size_t>(n));
  long r = 0;
  for (std::size_t t = 0; t < stream.tasks.size(); ++t) {
    const LabeledDataset& d = stream.tasks[t].train;
    for (long i = 0; i < d.size(); ++i, ++r) {
      all.images.row(r) = d.images.row(i);
      all.labels[static_cast<std::size_t>(r)] = d.labels[static_cast<std::size_t>(i)];
      head_of_row[static_cast<std::size_t>(r)] = static_cast<int>(t);
    }
  }

  Rng order_rng(derive_seed(cfg.seed, 45));
  std::vector<long> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0L);
  const long steps = (n + cfg.batch_new - 1) / cfg.batch_new;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[order_rng.uniform_int(i)]);
    for (long step = 0; step < steps; ++step) {
      const long lo = step * cfg.batch_new;
      const long hi = std::min(n, lo + cfg.batch_new);

      // Multi-head joint training scores each example inside its own head.
      std::map<int, std::vector<long>> by_head;
      for (long i = lo; i < hi; ++i) {
        const long row = order[static_cast<std::size_t>(i)];
        const int h = setting == Setting::kTaskIL ? head_of_row[static_cast<std::size_t>(row)] : 0;
        by_head[h].push_back(row);
      }
      std::vector<NewBatch> batches;
      batches.reserve(by_head.size());
      for (const auto& [h, rows] : by_head) {
        NewBatch nb;
        nb.x = all.batch(rows);
        for (long row : rows) nb.labels.push_back(all.labels[static_cast<std::size_t>(row)]);
        nb.head = h;
        batches.push_back(std::move(nb));
      }
      const double total = static_cast<double>(hi - lo);
      LossInfo li;
      {
        std::vector<CeGroup> groups;
        for (const NewBatch& nb : batches)
          groups.push_back({&nb, static_cast<double>(nb.labels.size()) / total});
        li = build_loss(learner, setting, groups, {});
      }
      for (auto& [name, p] : learner.parameters()) sgd_step(p, li.grads.at(name), cfg.lr);
    }
  }

  std::vector<double> row;
  for (std::size_t j = 0; j < stream.tasks.size(); ++j)
    row.push_back(evaluate_accuracy(learner, stream.tasks[j].test, setting,
                                    setting == Setting::kTaskIL
                                        ? std::optional<int>(static_cast<int>(j))
                                        : std::nullopt));
  return {AccuracyMatrix::single_row(std::move(row)), std::move(learner)};
}

}  // namespace zsil
