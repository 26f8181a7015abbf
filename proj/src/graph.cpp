#include "zsil/graph.hpp"

#include "zsil/ops.hpp"

#include <cmath>
#include <stdexcept>

namespace zsil {

namespace {

int conv_pad(int kernel) { return kernel / 2; }

// Patch matrix for one sample: rows index (ic, di, dj), columns index output
// pixels. Same-size output (stride 1, zero pad k/2).
void im2col(const double* x, int C, int H, int W, int K, MatrixMap col) {
  const int pad = conv_pad(K);
  for (int ic = 0; ic < C; ++ic) {
    const double* plane = x + static_cast<std::ptrdiff_t>(ic) * H * W;
    for (int di = 0; di < K; ++di) {
      for (int dj = 0; dj < K; ++dj) {
        const int r = (ic * K + di) * K + dj;
        for (int oi = 0; oi < H; ++oi) {
          const int ii = oi + di - pad;
          for (int oj = 0; oj < W; ++oj) {
            const int jj = oj + dj - pad;
            col(r, oi * W + oj) =
                (ii >= 0 && ii < H && jj >= 0 && jj < W) ? plane[ii * W + jj] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(ConstMatrixMap col, int C, int H, int W, int K, double* dx) {
  const int pad = conv_pad(K);
  for (int ic = 0; ic < C; ++ic) {
    double* plane = dx + static_cast<std::ptrdiff_t>(ic) * H * W;
    for (int di = 0; di < K; ++di) {
      for (int dj = 0; dj < K; ++dj) {
        const int r = (ic * K + di) * K + dj;
        for (int oi = 0; oi < H; ++oi) {
          const int ii = oi + di - pad;
          if (ii < 0 || ii >= H) continue;
          for (int oj = 0; oj < W; ++oj) {
            const int jj = oj + dj - pad;
            if (jj < 0 || jj >= W) continue;
            plane[ii * W + jj] += col(r, oi * W + oj);
          }
        }
      }
    }
  }
}

}  // namespace

const Graph::Node& Graph::node(NodeId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
    throw std::out_of_range("graph: node id " + std::to_string(id) + " out of range");
  return nodes_[static_cast<std::size_t>(id)];
}

NodeId Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::named_leaf(const std::string& name, Tensor value) {
  if (name.empty()) throw std::invalid_argument("graph: leaf name must not be empty");
  if (leaves_.count(name)) throw std::invalid_argument("graph: duplicate leaf name '" + name + "'");
  value.require_finite("graph leaf");
  Node n;
  n.op = Op::kLeaf;
  n.value = std::move(value);
  n.name = name;
  const NodeId id = push(std::move(n));
  leaves_[name] = id;
  return id;
}

NodeId Graph::parameter(const std::string& name, Tensor value) {
  return named_leaf(name, std::move(value));
}

NodeId Graph::input(const std::string& name, Tensor value) {
  return named_leaf(name, std::move(value));
}

NodeId Graph::constant(Tensor value) {
  value.require_finite("graph constant");
  Node n;
  n.op = Op::kLeaf;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Graph::dense(NodeId x, NodeId w, NodeId b) {
  const Tensor& xv = node(x).value;
  const Tensor& wv = node(w).value;
  const Tensor& bv = node(b).value;
  if (xv.rank() != 2 || wv.rank() != 2 || bv.rank() != 1)
    throw std::invalid_argument("dense: expected x rank 2, w rank 2, b rank 1");
  if (xv.dim(1) != wv.dim(0) || wv.dim(1) != bv.dim(0))
    throw std::invalid_argument("dense: incompatible shapes " + shape_str(xv.shape()) + " * " +
                                shape_str(wv.shape()) + " + " + shape_str(bv.shape()));
  Node n;
  n.op = Op::kDense;
  n.parents = {x, w, b};
  n.value = Tensor({xv.dim(0), wv.dim(1)});
  n.value.as_matrix() = xv.as_matrix() * wv.as_matrix();
  n.value.as_matrix().rowwise() += ConstMatrixMap(bv.data(), 1, bv.dim(0)).row(0);
  return push(std::move(n));
}

NodeId Graph::conv2d(NodeId x, NodeId w, NodeId b) {
  const Tensor& xv = node(x).value;
  const Tensor& wv = node(w).value;
  const Tensor& bv = node(b).value;
  if (xv.rank() != 4 || wv.rank() != 4 || bv.rank() != 1)
    throw std::invalid_argument("conv2d: expected x rank 4 (N,C,H,W), w rank 4 (OC,C,K,K), b rank 1");
  const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int OC = wv.dim(0), K = wv.dim(2);
  if (wv.dim(1) != C || wv.dim(3) != K)
    throw std::invalid_argument("conv2d: weight shape " + shape_str(wv.shape()) +
                                " does not match input channels " + std::to_string(C));
  if (K % 2 == 0) throw std::invalid_argument("conv2d: kernel size must be odd for same padding");
  if (bv.dim(0) != OC) throw std::invalid_argument("conv2d: bias size must equal output channels");

  const int ickk = C * K * K;
  const int hw = H * W;
  Node n;
  n.op = Op::kConv2d;
  n.parents = {x, w, b};
  n.value = Tensor({N, OC, H, W});
  n.cache = Tensor({N, ickk, hw});
  ConstMatrixMap wmat(wv.data(), OC, ickk);
  for (int s = 0; s < N; ++s) {
    MatrixMap col(n.cache.data() + static_cast<std::ptrdiff_t>(s) * ickk * hw, ickk, hw);
    im2col(xv.data() + static_cast<std::ptrdiff_t>(s) * C * H * W, C, H, W, K, col);
    MatrixMap out(n.value.data() + static_cast<std::ptrdiff_t>(s) * OC * hw, OC, hw);
    out.noalias() = wmat * col;
    out.colwise() += Eigen::Map<const Eigen::VectorXd>(bv.data(), OC);
  }
  return push(std::move(n));
}

NodeId Graph::relu(NodeId x) {
  Node n;
  n.op = Op::kRelu;
  n.parents = {x};
  n.value = Tensor(node(x).value.shape(), node(x).value.values().max(0.0));
  return push(std::move(n));
}

NodeId Graph::avg_pool(NodeId x, int window) {
  const Tensor& xv = node(x).value;
  if (xv.rank() != 4) throw std::invalid_argument("avg_pool: expected rank 4 (N,C,H,W)");
  if (window <= 0) throw std::invalid_argument("avg_pool: window must be positive");
  const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  if (H % window != 0 || W % window != 0)
    throw std::invalid_argument("avg_pool: spatial dims " + shape_str(xv.shape()) +
                                " not divisible by window " + std::to_string(window));
  const int OH = H / window, OW = W / window;
  Node n;
  n.op = Op::kAvgPool;
  n.parents = {x};
  n.aux = window;
  n.value = Tensor({N, C, OH, OW});
  const double inv = 1.0 / (window * window);
  for (int s = 0; s < N; ++s)
    for (int c = 0; c < C; ++c) {
      const double* in = xv.data() + (static_cast<std::ptrdiff_t>(s) * C + c) * H * W;
      double* out = n.value.data() + (static_cast<std::ptrdiff_t>(s) * C + c) * OH * OW;
      for (int oi = 0; oi < OH; ++oi)
        for (int oj = 0; oj < OW; ++oj) {
          double acc = 0.0;
          for (int di = 0; di < window; ++di)
            for (int dj = 0; dj < window; ++dj)
              acc += in[(oi * window + di) * W + (oj * window + dj)];
          out[oi * OW + oj] = acc * inv;
        }
    }
  return push(std::move(n));
}

NodeId Graph::flatten(NodeId x) {
  const Tensor& xv = node(x).value;
  if (xv.rank() < 2) throw std::invalid_argument("flatten: expected rank >= 2");
  int rest = 1;
  for (int i = 1; i < xv.rank(); ++i) rest *= xv.dim(i);
  Node n;
  n.op = Op::kFlatten;
  n.parents = {x};
  n.value = xv.reshaped({xv.dim(0), rest});
  return push(std::move(n));
}

NodeId Graph::select_columns(NodeId x, std::vector<int> cols) {
  const Tensor& xv = node(x).value;
  if (xv.rank() != 2) throw std::invalid_argument("select_columns: expected rank 2");
  if (cols.empty()) throw std::invalid_argument("select_columns: empty column list");
  for (int c : cols)
    if (c < 0 || c >= xv.dim(1))
      throw std::invalid_argument("select_columns: column " + std::to_string(c) + " out of range");
  Node n;
  n.op = Op::kSelectCols;
  n.parents = {x};
  n.value = Tensor({xv.dim(0), static_cast<int>(cols.size())});
  auto out = n.value.as_matrix();
  auto in = xv.as_matrix();
  for (std::size_t j = 0; j < cols.size(); ++j)
    out.col(static_cast<Eigen::Index>(j)) = in.col(cols[j]);
  n.cols = std::move(cols);
  return push(std::move(n));
}

NodeId Graph::softmax_temperature(NodeId logits, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("softmax_temperature: tau must be positive");
  const Tensor& zv = node(logits).value;
  Node n;
  n.op = Op::kSoftmaxTemp;
  n.parents = {logits};
  n.aux = tau;
  n.value = Tensor(zv.shape());
  n.value.as_rows() = softmax_rows(zv.as_rows(), tau);
  return push(std::move(n));
}

NodeId Graph::cross_entropy(NodeId pred_probs, NodeId target_probs) {
  const Tensor& p = node(pred_probs).value;
  const Tensor& t = node(target_probs).value;
  if (!p.same_shape(t))
    throw std::invalid_argument("cross_entropy: shape mismatch " + shape_str(p.shape()) + " vs " +
                                shape_str(t.shape()));
  Node n;
  n.op = Op::kCrossEntropy;
  n.parents = {pred_probs, target_probs};
  n.value = Tensor::scalar(cross_entropy_rows(p.as_rows(), t.as_rows()));
  return push(std::move(n));
}

NodeId Graph::squared_l2(NodeId a, NodeId b) {
  const Tensor& av = node(a).value;
  const Tensor& bv = node(b).value;
  if (!av.same_shape(bv))
    throw std::invalid_argument("squared_l2: shape mismatch " + shape_str(av.shape()) + " vs " +
                                shape_str(bv.shape()));
  Node n;
  n.op = Op::kSquaredL2;
  n.parents = {a, b};
  n.value = Tensor::scalar(squared_l2_rows(av.as_rows(), bv.as_rows()));
  return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
  const Tensor& av = node(a).value;
  const Tensor& bv = node(b).value;
  if (!av.same_shape(bv))
    throw std::invalid_argument("add: shape mismatch " + shape_str(av.shape()) + " vs " +
                                shape_str(bv.shape()));
  Node n;
  n.op = Op::kAdd;
  n.parents = {a, b};
  n.value = Tensor(av.shape(), av.values() + bv.values());
  return push(std::move(n));
}

NodeId Graph::scale(NodeId x, double factor) {
  if (!std::isfinite(factor)) throw std::invalid_argument("scale: factor must be finite");
  Node n;
  n.op = Op::kScale;
  n.parents = {x};
  n.aux = factor;
  n.value = Tensor(node(x).value.shape(), node(x).value.values() * factor);
  return push(std::move(n));
}

Tensor& Graph::grad_slot(const Tensor& like, NodeId id, std::vector<Tensor>& grads,
                         std::vector<char>& has_grad) {
  auto idx = static_cast<std::size_t>(id);
  if (!has_grad[idx]) {
    grads[idx] = Tensor::zeros(like.shape());
    has_grad[idx] = 1;
  }
  return grads[idx];
}

void Graph::backprop_node(NodeId id, const Tensor& g, std::vector<Tensor>& grads,
                          std::vector<char>& has_grad) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  auto parent_value = [&](int i) -> const Tensor& {
    return nodes_[static_cast<std::size_t>(n.parents[static_cast<std::size_t>(i)])].value;
  };
  auto parent_grad = [&](int i) -> Tensor& {
    const NodeId pid = n.parents[static_cast<std::size_t>(i)];
    return grad_slot(nodes_[static_cast<std::size_t>(pid)].value, pid, grads, has_grad);
  };

  switch (n.op) {
    case Op::kLeaf:
      break;
    case Op::kDense: {
      const Tensor& xv = parent_value(0);
      const Tensor& wv = parent_value(1);
      auto gy = g.as_matrix();
      parent_grad(0).as_matrix().noalias() += gy * wv.as_matrix().transpose();
      parent_grad(1).as_matrix().noalias() += xv.as_matrix().transpose() * gy;
      MatrixMap(parent_grad(2).data(), 1, parent_value(2).dim(0)) += gy.colwise().sum();
      break;
    }
    case Op::kConv2d: {
      const Tensor& xv = parent_value(0);
      const Tensor& wv = parent_value(1);
      const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
      const int OC = wv.dim(0), K = wv.dim(2);
      const int ickk = C * K * K, hw = H * W;
      Tensor& gx = parent_grad(0);
      Tensor& gw = parent_grad(1);
      Tensor& gb = parent_grad(2);
      MatrixMap gwmat(gw.data(), OC, ickk);
      Eigen::Map<Eigen::VectorXd> gbvec(gb.data(), OC);
      MatrixX dcol(ickk, hw);
      for (int s = 0; s < N; ++s) {
        ConstMatrixMap gy(g.data() + static_cast<std::ptrdiff_t>(s) * OC * hw, OC, hw);
        ConstMatrixMap col(n.cache.data() + static_cast<std::ptrdiff_t>(s) * ickk * hw, ickk, hw);
        gwmat.noalias() += gy * col.transpose();
        gbvec += gy.rowwise().sum();
        dcol.noalias() = ConstMatrixMap(wv.data(), OC, ickk).transpose() * gy;
        col2im_add(ConstMatrixMap(dcol.data(), ickk, hw), C, H, W, K,
                   gx.data() + static_cast<std::ptrdiff_t>(s) * C * H * W);
      }
      break;
    }
    case Op::kRelu: {
      const Tensor& xv = parent_value(0);
      parent_grad(0).values() += g.values() * (xv.values() > 0.0).cast<double>();
      break;
    }
    case Op::kAvgPool: {
      const Tensor& xv = parent_value(0);
      const int window = static_cast<int>(n.aux);
      const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
      const int OH = H / window, OW = W / window;
      const double inv = 1.0 / (window * window);
      Tensor& gx = parent_grad(0);
      for (int s = 0; s < N; ++s)
        for (int c = 0; c < C; ++c) {
          const double* go = g.data() + (static_cast<std::ptrdiff_t>(s) * C + c) * OH * OW;
          double* gi = gx.data() + (static_cast<std::ptrdiff_t>(s) * C + c) * H * W;
          for (int oi = 0; oi < OH; ++oi)
            for (int oj = 0; oj < OW; ++oj) {
              const double v = go[oi * OW + oj] * inv;
              for (int di = 0; di < window; ++di)
                for (int dj = 0; dj < window; ++dj)
                  gi[(oi * window + di) * W + (oj * window + dj)] += v;
            }
        }
      break;
    }
    case Op::kFlatten: {
      parent_grad(0).values() += g.values();
      break;
    }
    case Op::kSelectCols: {
      auto gi = parent_grad(0).as_matrix();
      auto go = g.as_matrix();
      for (std::size_t j = 0; j < n.cols.size(); ++j)
        gi.col(n.cols[j]) += go.col(static_cast<Eigen::Index>(j));
      break;
    }
    case Op::kSoftmaxTemp: {
      auto p = n.value.as_rows();
      auto go = g.as_rows();
      Tensor& gz = parent_grad(0);
      auto gzm = gz.as_rows();
      const double inv_tau = 1.0 / n.aux;
      for (Eigen::Index r = 0; r < p.rows(); ++r) {
        const double dot = go.row(r).cwiseProduct(p.row(r)).sum();
        gzm.row(r) += inv_tau * (p.row(r).array() * (go.row(r).array() - dot)).matrix();
      }
      break;
    }
    case Op::kCrossEntropy: {
      const double gs = g.item();
      auto p = parent_value(0).as_rows();
      auto t = parent_value(1).as_rows();
      const double inv_n = 1.0 / static_cast<double>(p.rows());
      auto gp = parent_grad(0).as_rows();
      auto gt = parent_grad(1).as_rows();
      for (Eigen::Index r = 0; r < p.rows(); ++r)
        for (Eigen::Index c = 0; c < p.cols(); ++c) {
          // log is clamped at kLogClamp: below the floor the loss is constant
          // in pred, so the derivative there is zero.
          if (p(r, c) > kLogClamp) gp(r, c) += -gs * inv_n * t(r, c) / p(r, c);
          gt(r, c) += -gs * inv_n * std::log(std::max(p(r, c), kLogClamp));
        }
      break;
    }
    case Op::kSquaredL2: {
      const double gs = g.item();
      auto a = parent_value(0).as_rows();
      auto b = parent_value(1).as_rows();
      const double f = 2.0 * gs / static_cast<double>(a.rows());
      parent_grad(0).as_rows() += f * (a - b);
      parent_grad(1).as_rows() += f * (b - a);
      break;
    }
    case Op::kAdd: {
      parent_grad(0).values() += g.values();
      parent_grad(1).values() += g.values();
      break;
    }
    case Op::kScale: {
      parent_grad(0).values() += g.values() * n.aux;
      break;
    }
  }
}

GradientMap Graph::backward(NodeId loss, const std::vector<std::string>& wrt) const {
  const Node& loss_node = node(loss);
  if (loss_node.value.size() != 1)
    throw std::invalid_argument("backward: loss node must be scalar, shape is " +
                                shape_str(loss_node.value.shape()));

  // Restrict the sweep to ancestors of the loss.
  std::vector<char> reachable(nodes_.size(), 0);
  std::vector<NodeId> stack{loss};
  reachable[static_cast<std::size_t>(loss)] = 1;
  while (!stack.empty()) {
    const NodeId id = stack.back();
    stack.pop_back();
    for (NodeId p : nodes_[static_cast<std::size_t>(id)].parents)
      if (!reachable[static_cast<std::size_t>(p)]) {
        reachable[static_cast<std::size_t>(p)] = 1;
        stack.push_back(p);
      }
  }

  std::vector<Tensor> grads(nodes_.size());
  std::vector<char> has_grad(nodes_.size(), 0);
  grads[static_cast<std::size_t>(loss)] = Tensor(loss_node.value.shape(), ArrayX::Ones(1));
  has_grad[static_cast<std::size_t>(loss)] = 1;

  for (NodeId id = loss; id >= 0; --id) {
    const auto idx = static_cast<std::size_t>(id);
    if (!reachable[idx] || !has_grad[idx]) continue;
    backprop_node(id, grads[idx], grads, has_grad);
  }

  GradientMap out;
  for (const std::string& name : wrt) {
    auto it = leaves_.find(name);
    if (it == leaves_.end()) throw std::out_of_range("backward: unknown leaf '" + name + "'");
    const auto idx = static_cast<std::size_t>(it->second);
    Tensor grad = has_grad[idx] ? grads[idx] : Tensor::zeros(nodes_[idx].value.shape());
    grad.require_finite("backward gradient");
    out.emplace(name, std::move(grad));
  }
  return out;
}

}  // namespace zsil
