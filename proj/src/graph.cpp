#include "ligr/graph.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace ligr {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::MatMul: return "matmul";
    case OpKind::Transpose: return "transpose";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "multiply";
    case OpKind::AddRows: return "add_rows";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Tanh: return "tanh";
    case OpKind::Gelu: return "gelu";
    case OpKind::LayerNorm: return "layer_norm";
    case OpKind::MaskedSoftmax: return "masked_softmax";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::GatherRows: return "embedding_gather";
    case OpKind::Mean: return "mean";
    case OpKind::Sum: return "sum";
    case OpKind::BceWithLogits: return "binary_cross_entropy_with_logits";
    case OpKind::LogSumExp: return "logsumexp";
    case OpKind::L2NormalizeRows: return "l2_normalize_rows";
  }
  return "unknown";
}

namespace {

[[noreturn]] void shape_error(OpKind kind, const std::string& detail) {
  throw std::invalid_argument(std::string(op_name(kind)) + ": " + detail);
}

bool scalar_like(const Tensor& t) { return t.numel() == 1; }

// ---------------------------------------------------------------------
// Precision-faithful kernels. T is the arithmetic type; storage stays
// double. In float mode every load is rounded to float, every operation
// runs in float, and the float result is widened back.
// ---------------------------------------------------------------------

template <typename T, typename F>
void ew_unary(const std::vector<double>& x, std::vector<double>& out, F f) {
  for (size_t i = 0; i < x.size(); ++i) out[i] = static_cast<double>(f(static_cast<T>(x[i])));
}

template <typename T>
void mm_nn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n) {
  std::vector<T> acc(n);
  for (int64_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), T(0));
    const double* arow = a + i * k;
    for (int64_t l = 0; l < k; ++l) {
      T av = static_cast<T>(arow[l]);
      const double* brow = b + l * n;
      for (int64_t j = 0; j < n; ++j) acc[j] += av * static_cast<T>(brow[j]);
    }
    double* crow = c + i * n;
    for (int64_t j = 0; j < n; ++j) crow[j] = static_cast<double>(acc[j]);
  }
}

void transpose_raw(const double* in, double* out, int64_t m, int64_t n) {
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out[j * m + i] = in[i * n + j];
}

// dst += src, rounded through T
template <typename T>
void axpy(Tensor& dst, const Tensor& src) {
  for (size_t i = 0; i < dst.data.size(); ++i)
    dst.data[i] = static_cast<double>(static_cast<T>(dst.data[i]) + static_cast<T>(src.data[i]));
}

template <typename T>
T sigmoid_scalar(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

template <typename T>
T gelu_scalar(T x) {
  return x * T(0.5) * (T(1) + T(std::erf(static_cast<double>(x) * kInvSqrt2)));
}

template <typename T>
constexpr T ln_eps() {
  return T(1e-6);
}

template <typename T>
void layer_norm_fwd(const Tensor& x, const Tensor& gain, const Tensor& bias, Tensor& out) {
  int64_t m = x.shape[0], n = x.shape[1];
  for (int64_t i = 0; i < m; ++i) {
    const double* row = x.data.data() + i * n;
    T mu = 0;
    for (int64_t j = 0; j < n; ++j) mu += static_cast<T>(row[j]);
    mu /= T(n);
    T var = 0;
    for (int64_t j = 0; j < n; ++j) {
      T d = static_cast<T>(row[j]) - mu;
      var += d * d;
    }
    var /= T(n);
    T inv = T(1) / std::sqrt(var + ln_eps<T>());
    double* orow = out.data.data() + i * n;
    for (int64_t j = 0; j < n; ++j) {
      T xhat = (static_cast<T>(row[j]) - mu) * inv;
      orow[j] = static_cast<double>(xhat * static_cast<T>(gain.data[j]) + static_cast<T>(bias.data[j]));
    }
  }
}

template <typename T>
void masked_softmax_fwd(const Tensor& x, const BoolMask& mask, Tensor& out) {
  int64_t m = x.shape[0], n = x.shape[1];
  for (int64_t i = 0; i < m; ++i) {
    const double* row = x.data.data() + i * n;
    double* orow = out.data.data() + i * n;
    T mx = std::numeric_limits<T>::lowest();
    bool any = false;
    for (int64_t j = 0; j < n; ++j) {
      if (mask.at(i, j)) {
        any = true;
        mx = std::max(mx, static_cast<T>(row[j]));
      }
    }
    if (!any) {
      for (int64_t j = 0; j < n; ++j) orow[j] = 0.0;
      continue;
    }
    T z = 0;
    for (int64_t j = 0; j < n; ++j) {
      if (mask.at(i, j)) {
        T e = std::exp(static_cast<T>(row[j]) - mx);
        orow[j] = static_cast<double>(e);
        z += e;
      } else {
        orow[j] = 0.0;
      }
    }
    T invz = T(1) / z;
    for (int64_t j = 0; j < n; ++j) {
      if (mask.at(i, j)) orow[j] = static_cast<double>(static_cast<T>(orow[j]) * invz);
    }
  }
}

template <typename T>
double logsumexp_fwd(const Tensor& x) {
  T mx = std::numeric_limits<T>::lowest();
  for (double v : x.data) mx = std::max(mx, static_cast<T>(v));
  T z = 0;
  for (double v : x.data) z += std::exp(static_cast<T>(v) - mx);
  return static_cast<double>(mx + std::log(z));
}

template <typename T>
void l2_normalize_fwd(const Tensor& x, Tensor& out, int64_t rows, int64_t n) {
  for (int64_t i = 0; i < rows; ++i) {
    const double* row = x.data.data() + i * n;
    T ss = 0;
    for (int64_t j = 0; j < n; ++j) {
      T v = static_cast<T>(row[j]);
      ss += v * v;
    }
    if (ss == T(0)) shape_error(OpKind::L2NormalizeRows, "zero-norm row " + std::to_string(i));
    T inv = T(1) / std::sqrt(ss);
    double* orow = out.data.data() + i * n;
    for (int64_t j = 0; j < n; ++j) orow[j] = static_cast<double>(static_cast<T>(row[j]) * inv);
  }
}

template <typename T>
void bce_fwd(const Tensor& logits, const Tensor& targets, Tensor& out) {
  // max(x,0) - x*y + log(1 + exp(-|x|))
  for (size_t i = 0; i < logits.data.size(); ++i) {
    T x = static_cast<T>(logits.data[i]);
    T y = static_cast<T>(targets.data[i]);
    T v = std::max(x, T(0)) - x * y + std::log1p(std::exp(-std::abs(x)));
    out.data[i] = static_cast<double>(v);
  }
}

}  // namespace

// ---------------------------------------------------------------------
// builders
// ---------------------------------------------------------------------

NodeId Graph::push(Node node) {
  if (node.kind != OpKind::Leaf) {
    eval(node);
  }
  if (!node.value.all_finite()) {
    shape_error(node.kind, "produced non-finite values");
  }
  nodes_.push_back(std::move(node));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::param(const std::string& name, Tensor value) {
  if (name.empty()) throw std::invalid_argument("param: empty name");
  if (param_index_.count(name)) throw std::invalid_argument("param: duplicate name " + name);
  Node node;
  node.kind = OpKind::Leaf;
  node.value = std::move(value);
  node.needs_grad = true;
  node.name = name;
  NodeId id = push(std::move(node));
  param_index_.emplace(name, id);
  return id;
}

NodeId Graph::find_param(const std::string& name) const {
  auto it = param_index_.find(name);
  return it == param_index_.end() ? NodeId{-1} : it->second;
}

NodeId Graph::constant(Tensor value) {
  Node node;
  node.kind = OpKind::Leaf;
  node.value = std::move(value);
  node.needs_grad = false;
  return push(std::move(node));
}

namespace {
Node make_op(OpKind kind, std::vector<NodeId> inputs, const std::vector<Node>& nodes) {
  Node node;
  node.kind = kind;
  node.inputs = std::move(inputs);
  for (NodeId id : node.inputs) node.needs_grad = node.needs_grad || nodes[id].needs_grad;
  return node;
}
}  // namespace

NodeId Graph::matmul(NodeId a, NodeId b) {
  const Tensor& ta = nodes_[a].value;
  const Tensor& tb = nodes_[b].value;
  if (ta.rank() != 2 || tb.rank() != 2)
    shape_error(OpKind::MatMul, "expects matrices, got " + shape_str(ta.shape) + " x " + shape_str(tb.shape));
  if (ta.shape[1] != tb.shape[0])
    shape_error(OpKind::MatMul, "inner dims differ: " + shape_str(ta.shape) + " x " + shape_str(tb.shape));
  return push(make_op(OpKind::MatMul, {a, b}, nodes_));
}

NodeId Graph::transpose(NodeId a) {
  if (nodes_[a].value.rank() != 2)
    shape_error(OpKind::Transpose, "expects a matrix, got " + shape_str(nodes_[a].value.shape));
  return push(make_op(OpKind::Transpose, {a}, nodes_));
}

NodeId Graph::add(NodeId a, NodeId b) {
  const Tensor& ta = nodes_[a].value;
  const Tensor& tb = nodes_[b].value;
  if (!ta.same_shape(tb) && !scalar_like(ta) && !scalar_like(tb))
    shape_error(OpKind::Add, "shapes " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
  return push(make_op(OpKind::Add, {a, b}, nodes_));
}

NodeId Graph::sub(NodeId a, NodeId b) {
  const Tensor& ta = nodes_[a].value;
  const Tensor& tb = nodes_[b].value;
  if (!ta.same_shape(tb) && !scalar_like(ta) && !scalar_like(tb))
    shape_error(OpKind::Sub, "shapes " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
  return push(make_op(OpKind::Sub, {a, b}, nodes_));
}

NodeId Graph::mul(NodeId a, NodeId b) {
  const Tensor& ta = nodes_[a].value;
  const Tensor& tb = nodes_[b].value;
  if (!ta.same_shape(tb) && !scalar_like(ta) && !scalar_like(tb))
    shape_error(OpKind::Mul, "shapes " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
  return push(make_op(OpKind::Mul, {a, b}, nodes_));
}

NodeId Graph::add_rows(NodeId mat, NodeId vec) {
  const Tensor& tm = nodes_[mat].value;
  const Tensor& tv = nodes_[vec].value;
  if (tm.rank() != 2 || tv.rank() != 1 || tm.shape[1] != tv.shape[0])
    shape_error(OpKind::AddRows, "shapes " + shape_str(tm.shape) + " vs " + shape_str(tv.shape));
  return push(make_op(OpKind::AddRows, {mat, vec}, nodes_));
}

NodeId Graph::sigmoid(NodeId a) { return push(make_op(OpKind::Sigmoid, {a}, nodes_)); }
NodeId Graph::tanh_op(NodeId a) { return push(make_op(OpKind::Tanh, {a}, nodes_)); }
NodeId Graph::gelu(NodeId a) { return push(make_op(OpKind::Gelu, {a}, nodes_)); }

NodeId Graph::layer_norm(NodeId x, NodeId gain, NodeId bias) {
  const Tensor& tx = nodes_[x].value;
  const Tensor& tg = nodes_[gain].value;
  const Tensor& tb = nodes_[bias].value;
  if (tx.rank() != 2)
    shape_error(OpKind::LayerNorm, "expects a matrix, got " + shape_str(tx.shape));
  if (tg.rank() != 1 || tb.rank() != 1 || tg.shape[0] != tx.shape[1] || tb.shape[0] != tx.shape[1])
    shape_error(OpKind::LayerNorm, "affine params must be [" + std::to_string(tx.shape[1]) + "]");
  return push(make_op(OpKind::LayerNorm, {x, gain, bias}, nodes_));
}

NodeId Graph::masked_softmax(NodeId scores, const BoolMask& mask) {
  const Tensor& ts = nodes_[scores].value;
  if (ts.rank() != 2)
    shape_error(OpKind::MaskedSoftmax, "expects a matrix, got " + shape_str(ts.shape));
  if (mask.rows != ts.shape[0] || mask.cols != ts.shape[1])
    shape_error(OpKind::MaskedSoftmax,
                "mask " + std::to_string(mask.rows) + "x" + std::to_string(mask.cols) +
                    " vs scores " + shape_str(ts.shape));
  Node node = make_op(OpKind::MaskedSoftmax, {scores}, nodes_);
  node.mask = mask;
  return push(std::move(node));
}

NodeId Graph::concat(const std::vector<NodeId>& parts, int axis) {
  if (parts.empty()) shape_error(OpKind::Concat, "no inputs");
  if (axis != 0 && axis != 1) shape_error(OpKind::Concat, "axis must be 0 or 1");
  const Tensor& first = nodes_[parts[0]].value;
  for (NodeId id : parts) {
    const Tensor& t = nodes_[id].value;
    if (t.rank() != first.rank())
      shape_error(OpKind::Concat, "mixed ranks");
    if (t.rank() == 1 && axis != 0) shape_error(OpKind::Concat, "axis 1 on vectors");
    if (t.rank() == 2) {
      int other = 1 - axis;
      if (t.shape[other] != first.shape[other])
        shape_error(OpKind::Concat, "mismatched dim " + std::to_string(other) + ": " +
                                        shape_str(t.shape) + " vs " + shape_str(first.shape));
    }
  }
  Node node = make_op(OpKind::Concat, parts, nodes_);
  node.axis = axis;
  return push(std::move(node));
}

NodeId Graph::slice(NodeId a, int axis, int64_t start, int64_t stop) {
  const Tensor& t = nodes_[a].value;
  if (t.rank() != 1 && t.rank() != 2) shape_error(OpKind::Slice, "expects rank 1 or 2");
  if (axis < 0 || axis >= t.rank()) shape_error(OpKind::Slice, "bad axis");
  int64_t dim = t.shape[axis];
  if (start < 0 || stop > dim || start >= stop)
    shape_error(OpKind::Slice, "range [" + std::to_string(start) + "," + std::to_string(stop) +
                                   ") out of dim " + std::to_string(dim));
  Node node = make_op(OpKind::Slice, {a}, nodes_);
  node.axis = axis;
  node.start = start;
  node.stop = stop;
  return push(std::move(node));
}

NodeId Graph::gather_rows(NodeId table, std::vector<int64_t> indices) {
  const Tensor& t = nodes_[table].value;
  if (t.rank() != 2) shape_error(OpKind::GatherRows, "table must be a matrix");
  for (int64_t ix : indices) {
    if (ix < 0 || ix >= t.shape[0])
      shape_error(OpKind::GatherRows, "index " + std::to_string(ix) + " out of [0," +
                                          std::to_string(t.shape[0]) + ")");
  }
  Node node = make_op(OpKind::GatherRows, {table}, nodes_);
  node.indices = std::move(indices);
  return push(std::move(node));
}

NodeId Graph::mean(NodeId a) {
  if (nodes_[a].value.numel() == 0) shape_error(OpKind::Mean, "empty input");
  return push(make_op(OpKind::Mean, {a}, nodes_));
}

NodeId Graph::sum(NodeId a) { return push(make_op(OpKind::Sum, {a}, nodes_)); }

NodeId Graph::bce_with_logits(NodeId logits, NodeId targets) {
  const Tensor& tl = nodes_[logits].value;
  const Tensor& tt = nodes_[targets].value;
  if (!tl.same_shape(tt))
    shape_error(OpKind::BceWithLogits, "shapes " + shape_str(tl.shape) + " vs " + shape_str(tt.shape));
  return push(make_op(OpKind::BceWithLogits, {logits, targets}, nodes_));
}

NodeId Graph::logsumexp(NodeId a) {
  if (nodes_[a].value.numel() == 0) shape_error(OpKind::LogSumExp, "empty input");
  return push(make_op(OpKind::LogSumExp, {a}, nodes_));
}

NodeId Graph::l2_normalize_rows(NodeId a) {
  const Tensor& t = nodes_[a].value;
  if (t.rank() != 1 && t.rank() != 2) shape_error(OpKind::L2NormalizeRows, "expects rank 1 or 2");
  return push(make_op(OpKind::L2NormalizeRows, {a}, nodes_));
}

NodeId Graph::scale(NodeId a, double factor) { return mul(a, constant(Tensor::scalar(factor))); }

// ---------------------------------------------------------------------
// forward evaluation
// ---------------------------------------------------------------------

void Graph::eval(Node& node) {
  ++primitive_ops_;
  const bool f32 = precision_ == Precision::F32;
  auto in = [&](size_t i) -> const Tensor& { return nodes_[node.inputs[i]].value; };

  switch (node.kind) {
    case OpKind::Leaf:
      return;
    case OpKind::MatMul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      int64_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
      node.value = Tensor::zeros({m, n});
      if (f32)
        mm_nn<float>(a.data.data(), b.data.data(), node.value.data.data(), m, k, n);
      else
        mm_nn<double>(a.data.data(), b.data.data(), node.value.data.data(), m, k, n);
      return;
    }
    case OpKind::Transpose: {
      const Tensor& a = in(0);
      node.value = Tensor::zeros({a.shape[1], a.shape[0]});
      transpose_raw(a.data.data(), node.value.data.data(), a.shape[0], a.shape[1]);
      return;
    }
    case OpKind::Add:
    case OpKind::Sub:
    case OpKind::Mul: {
      const Tensor& a = in(0);
      const Tensor& b = in(1);
      const Tensor& big = scalar_like(a) && !scalar_like(b) ? b : a;
      node.value = Tensor::zeros(big.shape);
      auto apply = [&](auto t) {
        using T = decltype(t);
        for (int64_t i = 0; i < node.value.numel(); ++i) {
          T av = static_cast<T>(a.data[scalar_like(a) ? 0 : i]);
          T bv = static_cast<T>(b.data[scalar_like(b) ? 0 : i]);
          T r = node.kind == OpKind::Add ? av + bv : node.kind == OpKind::Sub ? av - bv : av * bv;
          node.value.data[i] = static_cast<double>(r);
        }
      };
      f32 ? apply(float{}) : apply(double{});
      return;
    }
    case OpKind::AddRows: {
      const Tensor& m = in(0);
      const Tensor& v = in(1);
      node.value = Tensor::zeros(m.shape);
      int64_t rows = m.shape[0], n = m.shape[1];
      auto apply = [&](auto t) {
        using T = decltype(t);
        for (int64_t i = 0; i < rows; ++i)
          for (int64_t j = 0; j < n; ++j)
            node.value.data[i * n + j] = static_cast<double>(
                static_cast<T>(m.data[i * n + j]) + static_cast<T>(v.data[j]));
      };
      f32 ? apply(float{}) : apply(double{});
      return;
    }
    case OpKind::Sigmoid: {
      node.value = Tensor::zeros(in(0).shape);
      if (f32)
        ew_unary<float>(in(0).data, node.value.data, [](float x) { return sigmoid_scalar(x); });
      else
        ew_unary<double>(in(0).data, node.value.data, [](double x) { return sigmoid_scalar(x); });
      return;
    }
    case OpKind::Tanh: {
      node.value = Tensor::zeros(in(0).shape);
      if (f32)
        ew_unary<float>(in(0).data, node.value.data, [](float x) { return std::tanh(x); });
      else
        ew_unary<double>(in(0).data, node.value.data, [](double x) { return std::tanh(x); });
      return;
    }
    case OpKind::Gelu: {
      node.value = Tensor::zeros(in(0).shape);
      if (f32)
        ew_unary<float>(in(0).data, node.value.data, [](float x) { return gelu_scalar(x); });
      else
        ew_unary<double>(in(0).data, node.value.data, [](double x) { return gelu_scalar(x); });
      return;
    }
    case OpKind::LayerNorm: {
      node.value = Tensor::zeros(in(0).shape);
      if (f32)
        layer_norm_fwd<float>(in(0), in(1), in(2), node.value);
      else
        layer_norm_fwd<double>(in(0), in(1), in(2), node.value);
      return;
    }
    case OpKind::MaskedSoftmax: {
      node.value = Tensor::zeros(in(0).shape);
      if (f32)
        masked_softmax_fwd<float>(in(0), node.mask, node.value);
      else
        masked_softmax_fwd<double>(in(0), node.mask, node.value);
      return;
    }
    case OpKind::Concat: {
      if (in(0).rank() == 1 || node.axis == 0) {
        // stack along rows (or append vectors)
        int64_t total = 0;
        for (NodeId id : node.inputs) total += nodes_[id].value.shape[0];
        Shape out_shape = in(0).shape;
        out_shape[0] = total;
        node.value = Tensor::zeros(out_shape);
        double* dst = node.value.data.data();
        for (NodeId id : node.inputs) {
          const Tensor& t = nodes_[id].value;
          std::copy(t.data.begin(), t.data.end(), dst);
          dst += t.data.size();
        }
      } else {
        int64_t rows = in(0).shape[0];
        int64_t total_cols = 0;
        for (NodeId id : node.inputs) total_cols += nodes_[id].value.shape[1];
        node.value = Tensor::zeros({rows, total_cols});
        int64_t col0 = 0;
        for (NodeId id : node.inputs) {
          const Tensor& t = nodes_[id].value;
          int64_t c = t.shape[1];
          for (int64_t i = 0; i < rows; ++i)
            std::copy(t.data.begin() + i * c, t.data.begin() + (i + 1) * c,
                      node.value.data.begin() + i * total_cols + col0);
          col0 += c;
        }
      }
      return;
    }
    case OpKind::Slice: {
      const Tensor& t = in(0);
      int64_t len = node.stop - node.start;
      if (t.rank() == 1) {
        node.value = Tensor::zeros({len});
        std::copy(t.data.begin() + node.start, t.data.begin() + node.stop, node.value.data.begin());
      } else if (node.axis == 0) {
        int64_t n = t.shape[1];
        node.value = Tensor::zeros({len, n});
        std::copy(t.data.begin() + node.start * n, t.data.begin() + node.stop * n,
                  node.value.data.begin());
      } else {
        int64_t rows = t.shape[0], n = t.shape[1];
        node.value = Tensor::zeros({rows, len});
        for (int64_t i = 0; i < rows; ++i)
          std::copy(t.data.begin() + i * n + node.start, t.data.begin() + i * n + node.stop,
                    node.value.data.begin() + i * len);
      }
      return;
    }
    case OpKind::GatherRows: {
      const Tensor& t = in(0);
      int64_t n = t.shape[1];
      node.value = Tensor::zeros({static_cast<int64_t>(node.indices.size()), n});
      for (size_t i = 0; i < node.indices.size(); ++i)
        std::copy(t.data.begin() + node.indices[i] * n, t.data.begin() + (node.indices[i] + 1) * n,
                  node.value.data.begin() + i * n);
      return;
    }
    case OpKind::Mean:
    case OpKind::Sum: {
      const Tensor& t = in(0);
      auto apply = [&](auto tv) {
        using T = decltype(tv);
        T acc = 0;
        for (double v : t.data) acc += static_cast<T>(v);
        if (node.kind == OpKind::Mean) acc /= T(t.numel());
        node.value = Tensor::scalar(static_cast<double>(acc));
      };
      f32 ? apply(float{}) : apply(double{});
      return;
    }
    case OpKind::BceWithLogits: {
      node.value = Tensor::zeros(in(0).shape);
      if (f32)
        bce_fwd<float>(in(0), in(1), node.value);
      else
        bce_fwd<double>(in(0), in(1), node.value);
      return;
    }
    case OpKind::LogSumExp: {
      node.value = Tensor::scalar(f32 ? logsumexp_fwd<float>(in(0)) : logsumexp_fwd<double>(in(0)));
      return;
    }
    case OpKind::L2NormalizeRows: {
      const Tensor& t = in(0);
      node.value = Tensor::zeros(t.shape);
      int64_t rows = t.rank() == 2 ? t.shape[0] : 1;
      int64_t n = t.rank() == 2 ? t.shape[1] : t.shape[0];
      if (f32)
        l2_normalize_fwd<float>(t, node.value, rows, n);
      else
        l2_normalize_fwd<double>(t, node.value, rows, n);
      return;
    }
  }
}

void Graph::set_leaf(NodeId id, Tensor value) {
  Node& node = nodes_[id];
  if (node.kind != OpKind::Leaf) throw std::invalid_argument("set_leaf: node is not a leaf");
  if (node.value.shape != value.shape)
    throw std::invalid_argument("set_leaf: shape " + shape_str(value.shape) + " != " +
                                shape_str(node.value.shape));
  node.value = std::move(value);
}

void Graph::recompute() {
  for (Node& node : nodes_) {
    if (node.kind != OpKind::Leaf) {
      eval(node);
      if (!node.value.all_finite()) shape_error(node.kind, "produced non-finite values");
    }
  }
}

// ---------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------

GradMap Graph::backward(NodeId loss) const {
  const Tensor& lv = nodes_[loss].value;
  if (lv.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(lv.shape));
  const bool f32 = precision_ == Precision::F32;

  std::vector<Tensor> grads(nodes_.size());
  std::vector<uint8_t> has(nodes_.size(), 0);
  auto accum = [&](NodeId id, const Tensor& g) {
    if (!nodes_[id].needs_grad) return;
    if (!has[id]) {
      grads[id] = Tensor::zeros(nodes_[id].value.shape);
      has[id] = 1;
    }
    if (f32)
      axpy<float>(grads[id], g);
    else
      axpy<double>(grads[id], g);
  };

  grads[loss] = Tensor::full(lv.shape, 1.0);
  has[loss] = 1;

  for (NodeId id = static_cast<NodeId>(nodes_.size()) - 1; id >= 0; --id) {
    const Node& node = nodes_[id];
    if (!has[id] || node.kind == OpKind::Leaf || !node.needs_grad) continue;
    const Tensor& g = grads[id];
    auto in = [&](size_t i) -> const Tensor& { return nodes_[node.inputs[i]].value; };

    switch (node.kind) {
      case OpKind::Leaf:
        break;
      case OpKind::MatMul: {
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        int64_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
        if (nodes_[node.inputs[0]].needs_grad) {
          Tensor bt = Tensor::zeros({n, k});
          transpose_raw(b.data.data(), bt.data.data(), k, n);
          Tensor da = Tensor::zeros({m, k});
          f32 ? mm_nn<float>(g.data.data(), bt.data.data(), da.data.data(), m, n, k)
              : mm_nn<double>(g.data.data(), bt.data.data(), da.data.data(), m, n, k);
          accum(node.inputs[0], da);
        }
        if (nodes_[node.inputs[1]].needs_grad) {
          Tensor at = Tensor::zeros({k, m});
          transpose_raw(a.data.data(), at.data.data(), m, k);
          Tensor db = Tensor::zeros({k, n});
          f32 ? mm_nn<float>(at.data.data(), g.data.data(), db.data.data(), k, m, n)
              : mm_nn<double>(at.data.data(), g.data.data(), db.data.data(), k, m, n);
          accum(node.inputs[1], db);
        }
        break;
      }
      case OpKind::Transpose: {
        const Tensor& a = in(0);
        Tensor da = Tensor::zeros(a.shape);
        transpose_raw(g.data.data(), da.data.data(), a.shape[1], a.shape[0]);
        accum(node.inputs[0], da);
        break;
      }
      case OpKind::Add:
      case OpKind::Sub: {
        double sign_b = node.kind == OpKind::Sub ? -1.0 : 1.0;
        for (int side = 0; side < 2; ++side) {
          NodeId input = node.inputs[side];
          if (!nodes_[input].needs_grad) continue;
          double sgn = side == 0 ? 1.0 : sign_b;
          const Tensor& t = nodes_[input].value;
          Tensor d = Tensor::zeros(t.shape);
          auto apply = [&](auto tv) {
            using T = decltype(tv);
            if (scalar_like(t) && !scalar_like(node.value)) {
              T acc = 0;
              for (double vg : g.data) acc += static_cast<T>(vg);
              d.data[0] = static_cast<double>(acc * T(sgn));
            } else {
              for (int64_t i = 0; i < t.numel(); ++i)
                d.data[i] = static_cast<double>(static_cast<T>(g.data[i]) * T(sgn));
            }
          };
          f32 ? apply(float{}) : apply(double{});
          accum(input, d);
        }
        break;
      }
      case OpKind::Mul: {
        for (int side = 0; side < 2; ++side) {
          NodeId input = node.inputs[side];
          if (!nodes_[input].needs_grad) continue;
          const Tensor& self = in(side);
          const Tensor& other = in(1 - side);
          Tensor d = Tensor::zeros(self.shape);
          auto apply = [&](auto tv) {
            using T = decltype(tv);
            if (scalar_like(self) && !scalar_like(node.value)) {
              T acc = 0;
              for (int64_t i = 0; i < node.value.numel(); ++i)
                acc += static_cast<T>(g.data[i]) *
                       static_cast<T>(other.data[scalar_like(other) ? 0 : i]);
              d.data[0] = static_cast<double>(acc);
            } else {
              for (int64_t i = 0; i < self.numel(); ++i)
                d.data[i] = static_cast<double>(
                    static_cast<T>(g.data[i]) *
                    static_cast<T>(other.data[scalar_like(other) ? 0 : i]));
            }
          };
          f32 ? apply(float{}) : apply(double{});
          accum(input, d);
        }
        break;
      }
      case OpKind::AddRows: {
        accum(node.inputs[0], g);
        if (nodes_[node.inputs[1]].needs_grad) {
          int64_t rows = node.value.shape[0], n = node.value.shape[1];
          Tensor dv = Tensor::zeros({n});
          auto apply = [&](auto tv) {
            using T = decltype(tv);
            for (int64_t j = 0; j < n; ++j) {
              T acc = 0;
              for (int64_t i = 0; i < rows; ++i) acc += static_cast<T>(g.data[i * n + j]);
              dv.data[j] = static_cast<double>(acc);
            }
          };
          f32 ? apply(float{}) : apply(double{});
          accum(node.inputs[1], dv);
        }
        break;
      }
      case OpKind::Sigmoid: {
        Tensor d = Tensor::zeros(node.value.shape);
        auto apply = [&](auto tv) {
          using T = decltype(tv);
          for (int64_t i = 0; i < d.numel(); ++i) {
            T y = static_cast<T>(node.value.data[i]);
            d.data[i] = static_cast<double>(static_cast<T>(g.data[i]) * y * (T(1) - y));
          }
        };
        f32 ? apply(float{}) : apply(double{});
        accum(node.inputs[0], d);
        break;
      }
      case OpKind::Tanh: {
        Tensor d = Tensor::zeros(node.value.shape);
        auto apply = [&](auto tv) {
          using T = decltype(tv);
          for (int64_t i = 0; i < d.numel(); ++i) {
            T y = static_cast<T>(node.value.data[i]);
            d.data[i] = static_cast<double>(static_cast<T>(g.data[i]) * (T(1) - y * y));
          }
        };
        f32 ? apply(float{}) : apply(double{});
        accum(node.inputs[0], d);
        break;
      }
      case OpKind::Gelu: {
        const Tensor& x = in(0);
        Tensor d = Tensor::zeros(x.shape);
        auto apply = [&](auto tv) {
          using T = decltype(tv);
          for (int64_t i = 0; i < d.numel(); ++i) {
            T xv = static_cast<T>(x.data[i]);
            T phi = T(0.5) * (T(1) + T(std::erf(static_cast<double>(xv) * kInvSqrt2)));
            T dens = T(kInvSqrt2Pi * std::exp(-0.5 * static_cast<double>(xv) * static_cast<double>(xv)));
            d.data[i] = static_cast<double>(static_cast<T>(g.data[i]) * (phi + xv * dens));
          }
        };
        f32 ? apply(float{}) : apply(double{});
        accum(node.inputs[0], d);
        break;
      }
      case OpKind::LayerNorm: {
        const Tensor& x = in(0);
        const Tensor& gain = in(1);
        int64_t m = x.shape[0], n = x.shape[1];
        Tensor dx = Tensor::zeros(x.shape);
        Tensor dg = Tensor::zeros(gain.shape);
        Tensor db = Tensor::zeros(gain.shape);
        auto apply = [&](auto tv) {
          using T = decltype(tv);
          std::vector<T> xhat(n), dxh(n);
          for (int64_t i = 0; i < m; ++i) {
            const double* row = x.data.data() + i * n;
            const double* grow = g.data.data() + i * n;
            T mu = 0;
            for (int64_t j = 0; j < n; ++j) mu += static_cast<T>(row[j]);
            mu /= T(n);
            T var = 0;
            for (int64_t j = 0; j < n; ++j) {
              T dd = static_cast<T>(row[j]) - mu;
              var += dd * dd;
            }
            var /= T(n);
            T inv = T(1) / std::sqrt(var + ln_eps<T>());
            T sum_dxh = 0, sum_dxh_xhat = 0;
            for (int64_t j = 0; j < n; ++j) {
              xhat[j] = (static_cast<T>(row[j]) - mu) * inv;
              dxh[j] = static_cast<T>(grow[j]) * static_cast<T>(gain.data[j]);
              sum_dxh += dxh[j];
              sum_dxh_xhat += dxh[j] * xhat[j];
              dg.data[j] = static_cast<double>(static_cast<T>(dg.data[j]) +
                                               static_cast<T>(grow[j]) * xhat[j]);
              db.data[j] = static_cast<double>(static_cast<T>(db.data[j]) + static_cast<T>(grow[j]));
            }
            for (int64_t j = 0; j < n; ++j) {
              T v = (T(n) * dxh[j] - sum_dxh - xhat[j] * sum_dxh_xhat) * inv / T(n);
              dx.data[i * n + j] = static_cast<double>(v);
            }
          }
        };
        f32 ? apply(float{}) : apply(double{});
        accum(node.inputs[0], dx);
        if (nodes_[node.inputs[1]].needs_grad) accum(node.inputs[1], dg);
        if (nodes_[node.inputs[2]].needs_grad) accum(node.inputs[2], db);
        break;
      }
      case OpKind::MaskedSoftmax: {
        int64_t m = node.value.shape[0], n = node.value.shape[1];
        Tensor d = Tensor::zeros(node.value.shape);
        auto apply = [&](auto tv) {
          using T = decltype(tv);
          for (int64_t i = 0; i < m; ++i) {
            const double* p = node.value.data.data() + i * n;
            const double* grow = g.data.data() + i * n;
            T dot = 0;
            for (int64_t j = 0; j < n; ++j)
              if (node.mask.at(i, j)) dot += static_cast<T>(grow[j]) * static_cast<T>(p[j]);
            for (int64_t j = 0; j < n; ++j) {
              if (!node.mask.at(i, j)) continue;
              d.data[i * n + j] = static_cast<double>(
                  static_cast<T>(p[j]) * (static_cast<T>(grow[j]) - dot));
            }
          }
        };
        f32 ? apply(float{}) : apply(double{});
        accum(node.inputs[0], d);
        break;
      }
      case OpKind::Concat: {
        if (in(0).rank() == 1 || node.axis == 0) {
          int64_t offset = 0;
          for (NodeId input : node.inputs) {
            const Tensor& t = nodes_[input].value;
            if (nodes_[input].needs_grad) {
              Tensor d = Tensor::zeros(t.shape);
              std::copy(g.data.begin() + offset, g.data.begin() + offset + t.numel(),
                        d.data.begin());
              accum(input, d);
            }
            offset += t.numel();
          }
        } else {
          int64_t rows = node.value.shape[0], total = node.value.shape[1];
          int64_t col0 = 0;
          for (NodeId input : node.inputs) {
            const Tensor& t = nodes_[input].value;
            int64_t c = t.shape[1];
            if (nodes_[input].needs_grad) {
              Tensor d = Tensor::zeros(t.shape);
              for (int64_t i = 0; i < rows; ++i)
                std::copy(g.data.begin() + i * total + col0, g.data.begin() + i * total + col0 + c,
                          d.data.begin() + i * c);
              accum(input, d);
            }
            col0 += c;
          }
        }
        break;
      }
      case OpKind::Slice: {
        const Tensor& t = in(0);
        Tensor d = Tensor::zeros(t.shape);
        if (t.rank() == 1) {
          std::copy(g.data.begin(), g.data.end(), d.data.begin() + node.start);
        } else if (node.axis == 0) {
          int64_t n = t.shape[1];
          std::copy(g.data.begin(), g.data.end(), d.data.begin() + node.start * n);
        } else {
          int64_t rows = t.shape[0], n = t.shape[1], len = node.stop - node.start;
          for (int64_t i = 0; i < rows; ++i)
            std::copy(g.data.begin() + i * len, g.data.begin() + (i + 1) * len,
                      d.data.begin() + i * n + node.start);
        }
        accum(node.inputs[0], d);
        break;
      }
      case OpKind::GatherRows: {
        const Tensor& t = in(0);
        int64_t n = t.shape[1];
        Tensor d = Tensor::zeros(t.shape);
        auto apply = [&](auto tv) {
          using T = decltype(tv);
          for (size_t i = 0; i < node.indices.size(); ++i) {
            double* drow = d.data.data() + node.indices[i] * n;
            const double* grow = g.data.data() + i * n;
            for (int64_t j = 0; j < n; ++j)
              drow[j] = static_cast<double>(static_cast<T>(drow[j]) + static_cast<T>(grow[j]));
          }
        };
        f32 ? apply(float{}) : apply(double{});
        accum(node.inputs[0], d);
        break;
      }
      case OpKind::Mean:
      case OpKind::Sum: {
        const Tensor& t = in(0);
        double gv = g.data[0];
        double per = node.kind == OpKind::Mean
                         ? (f32 ? static_cast<double>(static_cast<float>(gv) / static_cast<float>(t.numel()))
                                : gv / static_cast<double>(t.numel()))
                         : gv;
        accum(node.inputs[0], Tensor::full(t.shape, per));
        break;
      }
      case OpKind::BceWithLogits: {
        const Tensor& x = in(0);
        const Tensor& y = in(1);
        if (nodes_[node.inputs[0]].needs_grad) {
          Tensor d = Tensor::zeros(x.shape);
          auto apply = [&](auto tv) {
            using T = decltype(tv);
            for (int64_t i = 0; i < d.numel(); ++i) {
              T s = sigmoid_scalar(static_cast<T>(x.data[i]));
              d.data[i] = static_cast<double>(static_cast<T>(g.data[i]) *
                                              (s - static_cast<T>(y.data[i])));
            }
          };
          f32 ? apply(float{}) : apply(double{});
          accum(node.inputs[0], d);
        }
        if (nodes_[node.inputs[1]].needs_grad) {
          Tensor d = Tensor::zeros(y.shape);
          auto apply = [&](auto tv) {
            using T = decltype(tv);
            for (int64_t i = 0; i < d.numel(); ++i)
              d.data[i] = static_cast<double>(static_cast<T>(g.data[i]) *
                                              (-static_cast<T>(x.data[i])));
          };
          f32 ? apply(float{}) : apply(double{});
          accum(node.inputs[1], d);
        }
        break;
      }
      case OpKind::LogSumExp: {
        const Tensor& x = in(0);
        Tensor d = Tensor::zeros(x.shape);
        auto apply = [&](auto tv) {
          using T = decltype(tv);
          T mx = std::numeric_limits<T>::lowest();
          for (double v : x.data) mx = std::max(mx, static_cast<T>(v));
          T z = 0;
          for (double v : x.data) z += std::exp(static_cast<T>(v) - mx);
          T gv = static_cast<T>(g.data[0]);
          for (int64_t i = 0; i < x.numel(); ++i)
            d.data[i] = static_cast<double>(gv * std::exp(static_cast<T>(x.data[i]) - mx) / z);
        };
        f32 ? apply(float{}) : apply(double{});
        accum(node.inputs[0], d);
        break;
      }
      case OpKind::L2NormalizeRows: {
        const Tensor& x = in(0);
        int64_t rows = x.rank() == 2 ? x.shape[0] : 1;
        int64_t n = x.rank() == 2 ? x.shape[1] : x.shape[0];
        Tensor d = Tensor::zeros(x.shape);
        auto apply = [&](auto tv) {
          using T = decltype(tv);
          for (int64_t i = 0; i < rows; ++i) {
            const double* xr = x.data.data() + i * n;
            const double* yr = node.value.data.data() + i * n;
            const double* gr = g.data.data() + i * n;
            T ss = 0;
            for (int64_t j = 0; j < n; ++j) {
              T v = static_cast<T>(xr[j]);
              ss += v * v;
            }
            T r = std::sqrt(ss);
            T dot = 0;
            for (int64_t j = 0; j < n; ++j) dot += static_cast<T>(yr[j]) * static_cast<T>(gr[j]);
            for (int64_t j = 0; j < n; ++j)
              d.data[i * n + j] = static_cast<double>(
                  (static_cast<T>(gr[j]) - static_cast<T>(yr[j]) * dot) / r);
          }
        };
        f32 ? apply(float{}) : apply(double{});
        accum(node.inputs[0], d);
        break;
      }
    }
  }

  GradMap out;
  for (size_t i = 0; i < nodes_.size(); ++i) {
    const Node& node = nodes_[i];
    if (node.kind == OpKind::Leaf && !node.name.empty()) {
      out[node.name] = has[i] ? std::move(grads[i]) : Tensor::zeros(node.value.shape);
    }
  }
  return out;
}

// ---------------------------------------------------------------------
// finite differences
// ---------------------------------------------------------------------

FdReport finite_difference_check(Graph& graph, NodeId loss, const std::string& parameter,
                                 double tolerance, double step, int64_t max_components) {
  if (graph.precision() != Precision::F64)
    throw std::invalid_argument("finite_difference_check: requires a 64-bit graph");

  GradMap analytic = graph.backward(loss);
  FdReport report;
  report.pass = true;

  for (NodeId id = 0; id < static_cast<NodeId>(graph.size()); ++id) {
    const Node& node = graph.node(id);
    if (node.kind != OpKind::Leaf || node.name.empty()) continue;
    if (!parameter.empty() && node.name != parameter) continue;

    const Tensor base = node.value;
    const Tensor& grad = analytic.at(node.name);
    int64_t n = base.numel();
    int64_t stride = 1;
    if (max_components > 0 && n > max_components) stride = n / max_components;

    for (int64_t i = 0; i < n; i += stride) {
      Tensor perturbed = base;
      perturbed.data[i] = base.data[i] + step;
      graph.set_leaf(id, perturbed);
      graph.recompute();
      double up = graph.value(loss).data[0];
      perturbed.data[i] = base.data[i] - step;
      graph.set_leaf(id, std::move(perturbed));
      graph.recompute();
      double down = graph.value(loss).data[0];
      double numeric = (up - down) / (2.0 * step);
      double a = grad.data[i];
      double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      ++report.checked_components;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_parameter = node.name;
      }
      if (rel > tolerance) {
        report.pass = false;
        report.failures.push_back({node.name, i, a, numeric, rel});
      }
    }
    graph.set_leaf(id, base);
  }
  graph.recompute();
  return report;
}

FdReport finite_difference_check_all(Graph& graph, NodeId loss, double tolerance, double step,
                                     int64_t max_components) {
  return finite_difference_check(graph, loss, "", tolerance, step, max_components);
}

}  // namespace ligr
