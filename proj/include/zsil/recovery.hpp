#pragma once

#include "zsil/learner.hpp"
#include "zsil/rng.hpp"
#include "zsil/tensor.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace zsil {

struct BetaShare {
  double beta = 1.0;
  double proportion = 1.0;
};

struct InversionConfig {
  int max_steps = 1500;
  double lr = 0.01;  // Adam, default moments
  // Stop early once the best loss has improved by less than tol over a
  // trailing window of steps; the step cap stays the hard bound.
  int early_stop_window = 50;
  double early_stop_tol = 1e-6;
};

struct RecoveryConfig {
  long transfer_size = 6000;  // K
  double eta = 0.7;           // constraint threshold
  double tau = 20.0;          // distillation temperature
  std::vector<BetaShare> beta_schedule = {{1.0, 0.5}, {0.1, 0.5}};
  InversionConfig inversion;
  int max_resample = 200;
  std::uint64_t seed = 0;

  void validate() const;
};

/// An accepted model-output vector to invert. `class_index` positions the
/// class inside the vector (seen order for a single head, within-head order
/// for multi-head); `class_id` is the global id; `head` is -1 for single.
struct TargetOutput {
  int class_index = 0;
  int class_id = 0;
  int head = -1;
  VectorX vector;
  long sample_index = 0;  // position in the transfer set; seeds the streams
  double beta = 1.0;
  double distance = 0.0;  // squared distance to the recommender row
  bool fallback = false;  // accepted via min-distance fallback
};

struct TransferSample {
  Tensor image;  // (C,H,W), pixels in [0,1]
  int label = 0;
  int head = -1;
  VectorX target;
  double final_loss = 0.0;
  int iterations = 0;
  VectorX logits;  // filled by record_logits
};

struct TransferSet {
  std::vector<TransferSample> samples;
  /// Seen classes (arrival order) at synthesis time; single-head KD compares
  /// logits over exactly these columns.
  std::vector<int> recorded_classes;
  long aborted = 0;

  long size() const { return static_cast<long>(samples.size()); }
};

/// Dirichlet draw via per-coordinate Gamma(beta*alpha_i, 1) normalized by the
/// sum. Result lies on the simplex.
VectorX sample_output_vector(const VectorX& alpha, double beta, Rng& rng);

/// Constraint F(V, gamma): squared Euclidean distance strictly below eta.
bool passes_constraint(const VectorX& v, const VectorX& gamma, double eta);

/// Per class, floor(K/k) targets (+1 for the lowest class ids when K does
/// not divide), each passing the constraint against its confusion-matrix row
/// and peaking at its own class. After max_resample rejections the best
/// candidate seen so far is accepted and flagged.
std::vector<TargetOutput> generate_target_outputs(const ConfusionMatrix& cm,
                                                  const Learner& learner,
                                                  const RecoveryConfig& cfg);

/// Inverts one target: starts from uniform noise in [0,1], runs Adam on the
/// temperature-softened cross-entropy against the target w.r.t. the image
/// only, clamping pixels to [0,1] after every step, and keeps the best
/// iterate. The learner is read-only throughout.
TransferSample synthesize_sample(const Learner& learner, const TargetOutput& target,
                                 const RecoveryConfig& cfg, std::optional<int> head = {});

/// Independent 0.5-probability stages, applied in order: rotation in
/// [-50,50] degrees (bilinear, zero fill), scaling from {0.95,0.975,1.0,
/// 1.025}, per-channel jitter in [-0.1,0.1], random crop after 2-pixel zero
/// pad, uniform pixel noise in [-10/255,10/255]. Result clamped to [0,1].
TransferSample augment(const TransferSample& sample, Rng& rng);

/// Deterministic stage parameters for augment; unset stages are skipped.
struct AugmentParams {
  std::optional<double> rotate_deg;
  std::optional<double> scale;
  std::optional<VectorX> channel_jitter;
  std::optional<std::pair<int, int>> crop_offset;  // row, col in [0, 2*pad]
  std::optional<double> noise_amplitude;           // per-pixel uniform bound
};
TransferSample augment_with(const TransferSample& sample, const AugmentParams& params, Rng& rng);

/// Full memory recovery: target generation, per-sample inversion (parallel
/// across samples, per-sample RNG streams split from the seed so the result
/// is independent of scheduling), then augmentation. Fails if more than 10%
/// of samples abort with non-finite losses.
TransferSet recover_transfer_set(const Learner& learner, const ConfusionMatrix& cm,
                                 const RecoveryConfig& cfg);

/// One binary tensor file per sample plus manifest.csv
/// (sample id, class id, head, target vector, final loss, iterations).
void export_transfer_set(const TransferSet& set, const std::string& dir);

void write_tensor_file(const Tensor& t, const std::string& path);
Tensor read_tensor_file(const std::string& path);

}  // namespace zsil
