#include "zsil/learner.hpp"

#include "zsil/rng.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

namespace zsil {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

std::vector<LayerSpec> parse_backbone(const std::string& text) {
  std::vector<LayerSpec> layers;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok.erase(std::remove_if(tok.begin(), tok.end(), [](char c) { return c == ' '; }), tok.end());
    if (tok.empty()) continue;
    LayerSpec l;
    if (tok == "relu") {
      l.kind = LayerKind::kRelu;
    } else if (tok == "flatten") {
      l.kind = LayerKind::kFlatten;
    } else if (tok.rfind("avgpool:", 0) == 0) {
      l.kind = LayerKind::kAvgPool;
      l.window = std::stoi(tok.substr(8));
    } else if (tok.rfind("dense:", 0) == 0) {
      l.kind = LayerKind::kDense;
      l.width = std::stoi(tok.substr(6));
    } else if (tok.rfind("conv:", 0) == 0) {
      const auto x = tok.find('x', 5);
      if (x == std::string::npos)
        throw std::invalid_argument("backbone: conv spec must look like conv:16x3, got '" + tok + "'");
      l.kind = LayerKind::kConv;
      l.channels = std::stoi(tok.substr(5, x - 5));
      l.kernel = std::stoi(tok.substr(x + 1));
    } else {
      throw std::invalid_argument("backbone: unknown layer '" + tok + "'");
    }
    layers.push_back(l);
  }
  return layers;
}

std::string backbone_string(const std::vector<LayerSpec>& layers) {
  std::ostringstream os;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (i) os << ',';
    switch (layers[i].kind) {
      case LayerKind::kConv: os << "conv:" << layers[i].channels << 'x' << layers[i].kernel; break;
      case LayerKind::kRelu: os << "relu"; break;
      case LayerKind::kAvgPool: os << "avgpool:" << layers[i].window; break;
      case LayerKind::kFlatten: os << "flatten"; break;
      case LayerKind::kDense: os << "dense:" << layers[i].width; break;
    }
  }
  return os.str();
}

HeadConfig HeadConfig::single(int total_classes) {
  HeadConfig h;
  h.kind = Kind::kSingle;
  h.total_classes = total_classes;
  return h;
}

HeadConfig HeadConfig::multi(std::vector<int> task_widths) {
  HeadConfig h;
  h.kind = Kind::kMulti;
  h.task_widths = std::move(task_widths);
  return h;
}

int HeadConfig::width(int head) const {
  if (!is_multi()) {
    if (head != 0) throw std::invalid_argument("head index on a single-head learner");
    return total_classes;
  }
  if (head < 0 || head >= n_heads())
    throw std::invalid_argument("head index " + std::to_string(head) + " out of range");
  return task_widths[static_cast<std::size_t>(head)];
}

int HeadConfig::total() const {
  if (!is_multi()) return total_classes;
  int n = 0;
  for (int w : task_widths) n += w;
  return n;
}

void Learner::register_task_classes(std::vector<int> ids) {
  if (ids.empty()) throw std::invalid_argument("register_task_classes: empty class list");
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw std::invalid_argument("register_task_classes: duplicate class id");
  for (int id : ids) {
    if (id < 0) throw std::invalid_argument("register_task_classes: negative class id");
    if (is_seen(id))
      throw std::invalid_argument("register_task_classes: class " + std::to_string(id) +
                                  " already seen");
  }
  if (multi_head()) {
    const int t = static_cast<int>(task_classes_.size());
    if (t >= config_.heads.n_heads())
      throw std::invalid_argument("register_task_classes: more tasks than declared heads");
    if (static_cast<int>(ids.size()) != config_.heads.width(t))
      throw std::invalid_argument("register_task_classes: task class count " +
                                  std::to_string(ids.size()) + " does not match head width " +
                                  std::to_string(config_.heads.width(t)));
  } else {
    for (int id : ids)
      if (id >= config_.heads.total_classes)
        throw std::invalid_argument("register_task_classes: class id " + std::to_string(id) +
                                    " exceeds declared head width");
  }
  task_classes_.push_back(ids);
  classes_seen_.insert(classes_seen_.end(), ids.begin(), ids.end());
}

bool Learner::is_seen(int class_id) const {
  return std::find(classes_seen_.begin(), classes_seen_.end(), class_id) != classes_seen_.end();
}

int Learner::seen_index(int class_id) const {
  auto it = std::find(classes_seen_.begin(), classes_seen_.end(), class_id);
  if (it == classes_seen_.end())
    throw std::out_of_range("class " + std::to_string(class_id) + " not seen yet");
  return static_cast<int>(it - classes_seen_.begin());
}

int Learner::head_of_class(int class_id) const {
  for (std::size_t t = 0; t < task_classes_.size(); ++t)
    if (std::find(task_classes_[t].begin(), task_classes_[t].end(), class_id) !=
        task_classes_[t].end())
      return static_cast<int>(t);
  throw std::out_of_range("class " + std::to_string(class_id) + " not seen yet");
}

int Learner::head_column(int class_id) const {
  if (!multi_head()) {
    if (class_id < 0 || class_id >= config_.heads.total_classes)
      throw std::out_of_range("class id out of head range");
    return class_id;
  }
  const auto& cls = task_classes_[static_cast<std::size_t>(head_of_class(class_id))];
  return static_cast<int>(std::find(cls.begin(), cls.end(), class_id) - cls.begin());
}

namespace {

struct ShapeState {
  bool flat = false;
  int c = 0, h = 0, w = 0;  // spatial
  int features = 0;         // flat
};

ShapeState walk_backbone(const LearnerConfig& cfg,
                         const std::function<void(int, const LayerSpec&, const ShapeState&)>& visit) {
  if (cfg.input_shape.size() != 3)
    throw std::invalid_argument("learner: input_shape must be {C,H,W}");
  ShapeState s;
  s.c = cfg.input_shape[0];
  s.h = cfg.input_shape[1];
  s.w = cfg.input_shape[2];
  for (std::size_t i = 0; i < cfg.backbone.size(); ++i) {
    const LayerSpec& l = cfg.backbone[i];
    if (visit) visit(static_cast<int>(i), l, s);
    switch (l.kind) {
      case LayerKind::kConv:
        if (s.flat) throw std::invalid_argument("learner: conv after flatten");
        if (l.channels < 1 || l.kernel < 1 || l.kernel % 2 == 0)
          throw std::invalid_argument("learner: conv needs positive channels and odd kernel");
        s.c = l.channels;
        break;
      case LayerKind::kRelu:
        break;
      case LayerKind::kAvgPool:
        if (s.flat) throw std::invalid_argument("learner: avgpool after flatten");
        if (l.window < 1 || s.h % l.window != 0 || s.w % l.window != 0)
          throw std::invalid_argument("learner: avgpool window must divide spatial dims");
        s.h /= l.window;
        s.w /= l.window;
        break;
      case LayerKind::kFlatten:
        if (!s.flat) {
          s.features = s.c * s.h * s.w;
          s.flat = true;
        }
        break;
      case LayerKind::kDense:
        if (!s.flat) throw std::invalid_argument("learner: dense requires flatten first");
        if (l.width < 1) throw std::invalid_argument("learner: dense width must be positive");
        s.features = l.width;
        break;
    }
  }
  if (!s.flat) throw std::invalid_argument("learner: backbone must flatten before the head");
  return s;
}

Tensor he_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double lim = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (Eigen::Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(-lim, lim);
  return t;
}

}  // namespace

Learner build_learner(const LearnerConfig& config) {
  if (config.backbone.empty()) throw std::invalid_argument("build_learner: empty backbone");
  if (config.heads.total() < 1) throw std::invalid_argument("build_learner: zero classes");
  if (config.heads.is_multi())
    for (int w : config.heads.task_widths)
      if (w < 1) throw std::invalid_argument("build_learner: head widths must be positive");

  Learner learner;
  learner.config_ = config;
  Rng rng(derive_seed(config.seed, 11));

  const ShapeState out = walk_backbone(config, [&](int i, const LayerSpec& l, const ShapeState& s) {
    const std::string base = "layer" + std::to_string(i);
    if (l.kind == LayerKind::kConv) {
      learner.params_.emplace(base + ".w",
                              he_uniform({l.channels, s.c, l.kernel, l.kernel},
                                         s.c * l.kernel * l.kernel, rng));
      learner.params_.emplace(base + ".b", Tensor({l.channels}));
    } else if (l.kind == LayerKind::kDense) {
      learner.params_.emplace(base + ".w", he_uniform({s.features, l.width}, s.features, rng));
      learner.params_.emplace(base + ".b", Tensor({l.width}));
    }
  });
  learner.feature_width_ = out.features;

  if (config.heads.is_multi()) {
    for (int h = 0; h < config.heads.n_heads(); ++h) {
      const std::string base = "head" + std::to_string(h);
      learner.params_.emplace(base + ".w",
                              he_uniform({out.features, config.heads.width(h)}, out.features, rng));
      learner.params_.emplace(base + ".b", Tensor({config.heads.width(h)}));
    }
  } else {
    learner.params_.emplace("head.w",
                            he_uniform({out.features, config.heads.total_classes}, out.features, rng));
    learner.params_.emplace("head.b", Tensor({config.heads.total_classes}));
  }
  return learner;
}

GraphBuilder::GraphBuilder(const Learner& learner, Graph& g) : learner_(learner), g_(g) {
  for (const auto& [name, t] : learner.parameters()) params_[name] = g_.parameter(name, t);
}

NodeId GraphBuilder::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("graph builder: no parameter '" + name + "'");
  return it->second;
}

NodeId GraphBuilder::features(NodeId x) {
  const LearnerConfig& cfg = learner_.config();
  const Tensor& xv = g_.value(x);
  if (xv.rank() != 4 || xv.dim(1) != cfg.input_shape[0] || xv.dim(2) != cfg.input_shape[1] ||
      xv.dim(3) != cfg.input_shape[2])
    throw std::invalid_argument("forward: input shape " + shape_str(xv.shape()) +
                                " does not match learner input " + shape_str(cfg.input_shape));
  NodeId cur = x;
  for (std::size_t i = 0; i < cfg.backbone.size(); ++i) {
    const LayerSpec& l = cfg.backbone[i];
    const std::string base = "layer" + std::to_string(i);
    switch (l.kind) {
      case LayerKind::kConv: cur = g_.conv2d(cur, param(base + ".w"), param(base + ".b")); break;
      case LayerKind::kRelu: cur = g_.relu(cur); break;
      case LayerKind::kAvgPool: cur = g_.avg_pool(cur, l.window); break;
      case LayerKind::kFlatten: cur = g_.flatten(cur); break;
      case LayerKind::kDense: cur = g_.dense(cur, param(base + ".w"), param(base + ".b")); break;
    }
  }
  return cur;
}

NodeId GraphBuilder::logits(NodeId x, std::optional<int> head) {
  if (learner_.multi_head() != head.has_value())
    throw std::invalid_argument(learner_.multi_head()
                                    ? "forward: multi-head learner requires a head index"
                                    : "forward: single-head learner takes no head index");
  if (head && (*head < 0 || *head >= learner_.config().heads.n_heads()))
    throw std::invalid_argument("forward: head index out of range");
  const std::string hb = learner_.multi_head() ? "head" + std::to_string(*head) : "head";
  return g_.dense(features(x), param(hb + ".w"), param(hb + ".b"));
}

ForwardGraph forward_graph(const Learner& learner, const Tensor& x, std::optional<int> head) {
  ForwardGraph fg;
  fg.input = fg.graph.input("x", x);
  GraphBuilder builder(learner, fg.graph);
  fg.logits = builder.logits(fg.input, head);
  return fg;
}

Tensor predict_logits(const Learner& learner, const Tensor& x, std::optional<int> head) {
  const bool single_image = x.rank() == 3;
  Tensor batch = x;
  if (single_image) {
    std::vector<int> s = {1};
    s.insert(s.end(), x.shape().begin(), x.shape().end());
    batch = x.reshaped(s);
  }
  ForwardGraph fg = forward_graph(learner, batch, head);
  const Tensor& logits = fg.graph.value(fg.logits);
  if (single_image) return logits.reshaped({logits.dim(1)});
  return logits;
}

MatrixX seen_logits(const Learner& learner, const Tensor& x_batch) {
  if (learner.multi_head())
    throw std::invalid_argument("seen_logits: use per-head prediction on a multi-head learner");
  if (learner.n_seen() == 0) throw std::logic_error("seen_logits: no classes seen yet");
  Tensor logits = predict_logits(learner, x_batch);
  auto full = logits.as_rows();
  MatrixX out(full.rows(), learner.n_seen());
  for (int j = 0; j < learner.n_seen(); ++j)
    out.col(j) = full.col(learner.head_column(learner.classes_seen()[static_cast<std::size_t>(j)]));
  return out;
}

namespace {

template <typename Derived>
int argmax_row(const Eigen::MatrixBase<Derived>& m, Eigen::Index r) {
  Eigen::Index best;
  m.row(r).maxCoeff(&best);
  return static_cast<int>(best);
}

constexpr long kEvalChunk = 256;

}  // namespace

ConfusionMatrix rebuild_confusion_matrix(const Learner& learner, const LabeledDataset& eval_data) {
  eval_data.validate();
  const int k = learner.n_seen();
  for (int y : eval_data.labels)
    if (!learner.is_seen(y))
      throw std::invalid_argument("confusion matrix: label " + std::to_string(y) +
                                  " outside classes seen");

  ConfusionMatrix cm;
  cm.classes = learner.classes_seen();
  cm.counts.setZero(k, k);
  cm.normalized.setZero(k, k);

  if (!learner.multi_head()) {
    for (long start = 0; start < eval_data.size(); start += kEvalChunk) {
      const long stop = std::min(eval_data.size(), start + kEvalChunk);
      std::vector<long> idx(static_cast<std::size_t>(stop - start));
      for (long i = start; i < stop; ++i) idx[static_cast<std::size_t>(i - start)] = i;
      MatrixX logits = seen_logits(learner, eval_data.batch(idx));
      for (long i = start; i < stop; ++i) {
        const int truth = learner.seen_index(eval_data.labels[static_cast<std::size_t>(i)]);
        cm.counts(truth, argmax_row(logits, i - start)) += 1;
      }
    }
  } else {
    // Task identity is given by the true label's own head.
    std::vector<std::vector<long>> by_head(static_cast<std::size_t>(learner.config().heads.n_heads()));
    for (long i = 0; i < eval_data.size(); ++i)
      by_head[static_cast<std::size_t>(
                  learner.head_of_class(eval_data.labels[static_cast<std::size_t>(i)]))]
          .push_back(i);
    for (std::size_t h = 0; h < by_head.size(); ++h) {
      const auto& rows = by_head[h];
      for (std::size_t start = 0; start < rows.size(); start += kEvalChunk) {
        const std::size_t stop = std::min(rows.size(), start + kEvalChunk);
        const std::vector<long> idx(rows.begin() + static_cast<long>(start),
                                    rows.begin() + static_cast<long>(stop));
        Tensor logits = predict_logits(learner, eval_data.batch(idx), static_cast<int>(h));
        auto lm = logits.as_rows();
        for (std::size_t i = start; i < stop; ++i) {
          const int label = eval_data.labels[static_cast<std::size_t>(rows[i])];
          const int truth = learner.seen_index(label);
          const int within = argmax_row(lm, static_cast<Eigen::Index>(i - start));
          const int pred_global = learner.task_classes()[h][static_cast<std::size_t>(within)];
          cm.counts(truth, learner.seen_index(pred_global)) += 1;
        }
      }
    }
  }

  for (int i = 0; i < k; ++i) {
    const long total = cm.counts.row(i).sum();
    if (total == 0)
      cm.normalized(i, i) = 1.0;  // always provide a usable recommender row
    else
      cm.normalized.row(i) = cm.counts.row(i).cast<double>() / static_cast<double>(total);
  }
  return cm;
}

VectorX class_similarity_alpha(const Learner& learner, int class_id) {
  if (!learner.is_seen(class_id))
    throw std::out_of_range("class_similarity_alpha: class " + std::to_string(class_id) +
                            " not seen yet");
  std::vector<int> span;  // classes sharing the queried class's logit space
  std::string head_name = "head";
  if (learner.multi_head()) {
    const int h = learner.head_of_class(class_id);
    head_name = "head" + std::to_string(h);
    span = learner.task_classes()[static_cast<std::size_t>(h)];
  } else {
    span = learner.classes_seen();
  }
  const Tensor& w = learner.parameters().at(head_name + ".w");
  auto wm = w.as_matrix();  // (features, width)
  const int self_col = learner.head_column(class_id);
  const double self_norm = wm.col(self_col).norm();

  VectorX cos(static_cast<Eigen::Index>(span.size()));
  for (std::size_t j = 0; j < span.size(); ++j) {
    const int col = learner.head_column(span[j]);
    const double denom = std::max(self_norm * wm.col(col).norm(), 1e-300);
    cos[static_cast<Eigen::Index>(j)] = wm.col(self_col).dot(wm.col(col)) / denom;
  }
  const VectorX shifted = (cos.array() - cos.maxCoeff()).exp();
  return shifted / shifted.sum();
}

std::uint64_t parameter_checksum(const Learner& learner) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& [name, t] : learner.parameters()) {
    mix(name.data(), name.size());
    mix(t.data(), static_cast<std::size_t>(t.size()) * sizeof(double));
  }
  return h;
}

namespace {

std::string join_ints(const std::vector<int>& v, char sep) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << sep;
    os << v[i];
  }
  return os.str();
}

std::vector<int> split_ints(const std::string& s, char sep) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, sep))
    if (!tok.empty()) out.push_back(std::stoi(tok));
  return out;
}

void write_tensor_block(std::ofstream& out, const std::string& name, const Tensor& t) {
  out << "tensor " << name << ' ' << t.rank();
  for (int d : t.shape()) out << ' ' << d;
  out << '\n';
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.size()) * static_cast<std::streamsize>(sizeof(double)));
}

Tensor read_tensor_block(std::istream& in, std::string& name) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("checkpoint: truncated tensor block");
  std::istringstream ls(line);
  std::string tag;
  int rank = 0;
  ls >> tag >> name >> rank;
  if (tag != "tensor" || !ls || rank < 0)
    throw std::runtime_error("checkpoint: malformed tensor header '" + line + "'");
  std::vector<int> shape(static_cast<std::size_t>(rank));
  for (int& d : shape)
    if (!(ls >> d)) throw std::runtime_error("checkpoint: malformed tensor dims");
  Tensor t{shape};
  in.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.size()) * static_cast<std::streamsize>(sizeof(double)));
  if (!in) throw std::runtime_error("checkpoint: truncated tensor payload for " + name);
  return t;
}

}  // namespace

void save_checkpoint(const Learner& learner, const std::string& path, const ConfusionMatrix* cm) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  const LearnerConfig& cfg = learner.config();
  out << "zsil checkpoint v1\n";
  out << "input_shape=" << cfg.input_shape[0] << 'x' << cfg.input_shape[1] << 'x'
      << cfg.input_shape[2] << '\n';
  out << "backbone=" << backbone_string(cfg.backbone) << '\n';
  if (cfg.heads.is_multi())
    out << "heads=multi:" << join_ints(cfg.heads.task_widths, ',') << '\n';
  else
    out << "heads=single:" << cfg.heads.total_classes << '\n';
  out << "seed=" << cfg.seed << '\n';
  out << "task_classes=";
  for (std::size_t t = 0; t < learner.task_classes().size(); ++t) {
    if (t) out << ';';
    out << join_ints(learner.task_classes()[t], ',');
  }
  out << '\n';
  out << "tensors=" << learner.parameters().size() << '\n';
  for (const auto& [name, t] : learner.parameters()) write_tensor_block(out, name, t);
  if (cm && cm->k() > 0) {
    out << "cm " << cm->k() << '\n';
    MatrixX counts = cm->counts.cast<double>();
    out.write(reinterpret_cast<const char*>(counts.data()),
              static_cast<std::streamsize>(counts.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(cm->normalized.data()),
              static_cast<std::streamsize>(cm->normalized.size() * sizeof(double)));
  }
  if (!out) throw std::runtime_error("checkpoint: write failure on " + path);
}

Learner load_checkpoint(const std::string& path, ConfusionMatrix* cm_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  std::string line;
  std::getline(in, line);
  if (line != "zsil checkpoint v1") throw std::runtime_error("checkpoint: bad magic in " + path);

  LearnerConfig cfg;
  std::vector<std::vector<int>> task_classes;
  long n_tensors = -1;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error("checkpoint: malformed header line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "input_shape") {
      cfg.input_shape = split_ints(val, 'x');
    } else if (key == "backbone") {
      cfg.backbone = parse_backbone(val);
    } else if (key == "heads") {
      if (val.rfind("single:", 0) == 0)
        cfg.heads = HeadConfig::single(std::stoi(val.substr(7)));
      else if (val.rfind("multi:", 0) == 0)
        cfg.heads = HeadConfig::multi(split_ints(val.substr(6), ','));
      else
        throw std::runtime_error("checkpoint: bad heads spec '" + val + "'");
    } else if (key == "seed") {
      cfg.seed = std::stoull(val);
    } else if (key == "task_classes") {
      std::stringstream ss(val);
      std::string group;
      while (std::getline(ss, group, ';'))
        if (!group.empty()) task_classes.push_back(split_ints(group, ','));
    } else if (key == "tensors") {
      n_tensors = std::stol(val);
      break;
    } else {
      throw std::runtime_error("checkpoint: unknown header key '" + key + "'");
    }
  }
  if (n_tensors < 0) throw std::runtime_error("checkpoint: missing tensors section");

  Learner learner = build_learner(cfg);
  for (auto& group : task_classes) learner.register_task_classes(std::move(group));
  for (long i = 0; i < n_tensors; ++i) {
    std::string name;
    Tensor t = read_tensor_block(in, name);
    auto it = learner.parameters().find(name);
    if (it == learner.parameters().end())
      throw std::runtime_error("checkpoint: unexpected tensor '" + name + "'");
    if (!it->second.same_shape(t))
      throw std::runtime_error("checkpoint: shape mismatch for tensor '" + name + "'");
    it->second = std::move(t);
  }

  if (std::getline(in, line) && !line.empty()) {
    if (line.rfind("cm ", 0) != 0) throw std::runtime_error("checkpoint: unexpected trailer '" + line + "'");
    const int k = std::stoi(line.substr(3));
    if (k != learner.n_seen()) throw std::runtime_error("checkpoint: confusion matrix size mismatch");
    MatrixX counts(k, k), normalized(k, k);
    in.read(reinterpret_cast<char*>(counts.data()),
            static_cast<std::streamsize>(counts.size() * sizeof(double)));
    in.read(reinterpret_cast<char*>(normalized.data()),
            static_cast<std::streamsize>(normalized.size() * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint: truncated confusion matrix");
    if (cm_out) {
      cm_out->classes = learner.classes_seen();
      cm_out->counts = counts.cast<long>();
      cm_out->normalized = normalized;
    }
  }
  return learner;
}

}  // namespace zsil
