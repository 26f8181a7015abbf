#pragma once

#include "zsil/graph.hpp"
#include "zsil/tasks.hpp"
#include "zsil/tensor.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace zsil {

enum class LayerKind { kConv, kRelu, kAvgPool, kFlatten, kDense };

struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  int channels = 0;  // conv output channels
  int kernel = 0;    // conv kernel size (odd)
  int window = 0;    // pool window
  int width = 0;     // dense output width
};

/// Textual backbone grammar: "conv:16x3,relu,avgpool:2,flatten,dense:128".
std::vector<LayerSpec> parse_backbone(const std::string& text);
std::string backbone_string(const std::vector<LayerSpec>& layers);

struct HeadConfig {
  enum class Kind { kSingle, kMulti };
  Kind kind = Kind::kSingle;
  int total_classes = 0;          // single head
  std::vector<int> task_widths;   // one head per task

  static HeadConfig single(int total_classes);
  static HeadConfig multi(std::vector<int> task_widths);
  bool is_multi() const { return kind == Kind::kMulti; }
  int n_heads() const { return is_multi() ? static_cast<int>(task_widths.size()) : 1; }
  int width(int head) const;
  int total() const;
};

struct LearnerConfig {
  std::vector<int> input_shape;  // {C,H,W}
  std::vector<LayerSpec> backbone;
  HeadConfig heads;
  std::uint64_t seed = 0;
};

/// The learner network: named parameter tensors plus bookkeeping of which
/// global classes each task introduced. In the single-head setting the head
/// is allocated at its declared final width up front and logits of classes
/// not yet seen are simply never selected; in the multi-head setting every
/// declared head is allocated at build time.
class Learner {
 public:
  Learner() = default;

  const LearnerConfig& config() const { return config_; }
  std::map<std::string, Tensor>& parameters() { return params_; }
  const std::map<std::string, Tensor>& parameters() const { return params_; }

  /// Global ids in arrival order; recovery vectors, confusion-matrix rows and
  /// evaluation slices all index classes in this order.
  const std::vector<int>& classes_seen() const { return classes_seen_; }
  const std::vector<std::vector<int>>& task_classes() const { return task_classes_; }
  int n_seen() const { return static_cast<int>(classes_seen_.size()); }
  bool multi_head() const { return config_.heads.is_multi(); }
  int feature_width() const { return feature_width_; }

  /// Registers the classes of the next task. Ids must be new; in the
  /// multi-head setting their count must match the declared head width.
  void register_task_classes(std::vector<int> ids);

  int seen_index(int class_id) const;   // throws std::out_of_range when unseen
  bool is_seen(int class_id) const;
  int head_of_class(int class_id) const;
  /// Column of the (single or task) head holding a class's logit.
  int head_column(int class_id) const;

  friend Learner build_learner(const LearnerConfig&);

 private:
  LearnerConfig config_;
  std::map<std::string, Tensor> params_;
  std::vector<int> classes_seen_;
  std::vector<std::vector<int>> task_classes_;
  int feature_width_ = 0;
};

/// Seeded He-uniform initialization; identical config+seed gives bitwise
/// identical parameters.
Learner build_learner(const LearnerConfig& config);

/// Registers every learner parameter in a graph once and builds forward
/// branches on demand, so a single loss graph can mix inputs and heads
/// (new-task batch plus replay groups). Gradients of heads no branch uses
/// come back as zeros.
class GraphBuilder {
 public:
  GraphBuilder(const Learner& learner, Graph& g);
  /// Backbone features for a (N,C,H,W) input node.
  NodeId features(NodeId x);
  /// Backbone plus head; head required iff the learner is multi-head.
  NodeId logits(NodeId x, std::optional<int> head = {});
  NodeId param(const std::string& name) const;

 private:
  const Learner& learner_;
  Graph& g_;
  std::map<std::string, NodeId> params_;
};

struct ForwardGraph {
  Graph graph;
  NodeId input = -1;
  NodeId logits = -1;
};

/// Differentiable forward pass. x is a (N,C,H,W) batch; head selects the
/// task head and is required iff the learner is multi-head. Registers the
/// input as leaf "x" and parameters under their learner names.
ForwardGraph forward_graph(const Learner& learner, const Tensor& x, std::optional<int> head = {});

/// Raw logits; accepts a single (C,H,W) image or a (N,C,H,W) batch.
/// Width is the full head width (single) or the selected head width (multi).
Tensor predict_logits(const Learner& learner, const Tensor& x, std::optional<int> head = {});

/// Single-head logits restricted to seen classes, in arrival order.
MatrixX seen_logits(const Learner& learner, const Tensor& x_batch);

/// Dynamic confusion matrix over seen classes (arrival order). counts[i][j]
/// counts true class i predicted as j; rows of `normalized` sum to 1, with
/// zero-count rows replaced by a one-hot diagonal.
struct ConfusionMatrix {
  Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic> counts;
  MatrixX normalized;
  std::vector<int> classes;  // global ids, arrival order

  int k() const { return static_cast<int>(classes.size()); }
};

/// Counts argmax predictions of the frozen learner over eval_data. In the
/// multi-head setting each example is scored inside its own class's head.
ConfusionMatrix rebuild_confusion_matrix(const Learner& learner, const LabeledDataset& eval_data);

/// Dirichlet concentration vector for a class: softmax of cosine
/// similarities between final-layer weight vectors. Spans seen classes
/// (single head) or the class's head (multi-head).
VectorX class_similarity_alpha(const Learner& learner, int class_id);

/// FNV-1a over parameter bytes in name order; used to assert that recovery
/// and logit recording never touch the weights.
std::uint64_t parameter_checksum(const Learner& learner);

/// Checkpoint: text header (config and class bookkeeping as key=value)
/// followed by named tensors as raw little-endian doubles. Round-trips
/// bitwise. The confusion matrix travels with the learner when given.
void save_checkpoint(const Learner& learner, const std::string& path,
                     const ConfusionMatrix* cm = nullptr);
Learner load_checkpoint(const std::string& path, ConfusionMatrix* cm_out = nullptr);

}  // namespace zsil
