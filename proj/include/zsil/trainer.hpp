#pragma once

#include "zsil/learner.hpp"
#include "zsil/metrics.hpp"
#include "zsil/recovery.hpp"
#include "zsil/tasks.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <vector>

namespace zsil {

enum class Setting { kClassIL, kTaskIL };

struct TrainConfig {
  double lambda = 0.3;  // distillation weight on the transfer set
  double lambda1 = 0.3; // few-shot: transfer-set distillation weight
  double lambda2 = 0.3; // few-shot: stored-exemplar distillation weight
  int epochs = 50;
  int batch_replay = 32;  // b1
  int batch_new = 32;     // b2
  double lr = 0.1;        // SGD
  std::uint64_t seed = 0;

  void validate() const;
};

/// One optimization step's worth of new-task data.
struct NewBatch {
  Tensor x;  // (B,C,H,W)
  std::vector<int> labels;
  int head = -1;  // multi-head: the new task's head
};

/// Replay data with stored logits. Samples are grouped by the logit span
/// they were recorded over (one group per head; single-head sets form one
/// group over the classes seen at recording time).
struct ReplayBatch {
  struct Group {
    Tensor x;
    MatrixX stored_logits;     // rows match x
    std::vector<int> classes;  // global ids defining the span
    int head = -1;
  };
  std::vector<Group> groups;
  long total = 0;
};

struct LossInfo {
  double total = 0.0;
  double ce = 0.0;
  double kd = 0.0;      // transfer-set distillation term
  double kd_mem = 0.0;  // few-shot memory distillation term
  GradientMap grads;    // w.r.t. every learner parameter
};

/// ce + lambda*kd over the given batches; either batch pointer may be null
/// (the corresponding term is zero). Gradients cover all parameters, with
/// zeros for parameters off the loss path.
LossInfo total_loss(const Learner& learner, const NewBatch* batch_new,
                    const ReplayBatch* batch_replay, double lambda, Setting setting);

/// Three-term variant: ce + lambda1*kd(transfer) + lambda2*kd(memory).
LossInfo total_loss_fewshot(const Learner& learner, const NewBatch* batch_new,
                            const ReplayBatch* transfer, const ReplayBatch* memory,
                            double lambda1, double lambda2, Setting setting);

/// Stores pre-update logits for every sample: the full seen-class slice
/// (single head) or the sample's own head (multi-head). The learner is
/// read-only.
TransferSet record_logits(const Learner& learner, TransferSet set);

/// Small real-exemplar store for the few-shot variant.
struct MemoryItem {
  Tensor image;
  int label = 0;
  int head = -1;
  VectorX logits;  // refreshed against each task's pre-update snapshot
};

struct FewShotMemory {
  int capacity_per_class = 50;
  std::map<int, std::vector<MemoryItem>> store;  // keyed by class id

  long total() const;
  /// Reservoir-selects up to capacity exemplars per new class.
  void admit_task(const LabeledDataset& data, const std::vector<int>& classes, int head,
                  std::uint64_t seed);
};

/// State the training loop carries across tasks.
struct TrainerState {
  ConfusionMatrix cm;
  FewShotMemory memory;
};

struct TaskHooks {
  /// After recovery and logit recording, before the first optimization step.
  std::function<void(const Learner&, const TransferSet&)> on_transfer_set;
};

/// One incremental step per Alg-1 structure: recover the transfer set from
/// the pre-update learner, record its logits, then optimize ce + lambda*kd
/// with independent replay/new batch cycles. The first task trains with ce
/// only. Updates the trainer state's confusion matrix (rows of classes whose
/// data is gone stay frozen).
Learner train_task(Learner learner, const LabeledDataset& incremented,
                   const std::vector<int>& classes, const TrainConfig& cfg,
                   const RecoveryConfig& rcfg, Setting setting, TrainerState& state,
                   const TaskHooks* hooks = nullptr);

/// Few-shot variant: three-term loss, with stored-exemplar logits refreshed
/// against the pre-update snapshot and the memory restocked after training.
Learner train_task_fewshot(Learner learner, const LabeledDataset& incremented,
                           const std::vector<int>& classes, const TrainConfig& cfg,
                           const RecoveryConfig& rcfg, Setting setting, TrainerState& state,
                           const TaskHooks* hooks = nullptr);

/// Percent accuracy; multi-head evaluation scores inside head `task_index`.
double evaluate_accuracy(const Learner& learner, const LabeledDataset& data, Setting setting,
                         std::optional<int> task_index = {});

struct SequenceHooks {
  std::function<void(int task, const Learner&, const TransferSet&)> on_transfer_set;
  std::function<void(int task, const Learner&, const ConfusionMatrix&)> on_task_done;
};

struct SequenceResult {
  AccuracyMatrix accuracy;
  Learner learner;
};

/// Runs the full stream; after each task k fills row a_{k,j} over the test
/// splits of tasks 1..k. fewshot_capacity <= 0 selects the zero-shot loop.
SequenceResult run_sequence(const TaskSequence& stream, const LearnerConfig& learner_cfg,
                            const TrainConfig& cfg, const RecoveryConfig& rcfg, Setting setting,
                            int fewshot_capacity = 0, const SequenceHooks* hooks = nullptr);

/// Upper-bound reference: all tasks at once, evaluated per task (one row).
SequenceResult run_joint(const TaskSequence& stream, const LearnerConfig& learner_cfg,
                         const TrainConfig& cfg, Setting setting);

}  // namespace zsil
