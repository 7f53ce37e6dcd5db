#include "imnd/graph.hpp"

#include <Eigen/Core>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <utility>

namespace imnd {

namespace {

using MatX = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<MatX>;
using CMapMat = Eigen::Map<const MatX>;

CMapMat as_mat(const Tensor& t) {
  return CMapMat(t.data.data(), t.dim(0), t.dim(1));
}
MapMat as_mat(Tensor& t) {
  return MapMat(t.data.data(), t.dim(0), t.dim(1));
}

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

double huber(double x, double delta) {
  const double ax = std::abs(x);
  return ax <= delta ? 0.5 * x * x : delta * (ax - 0.5 * delta);
}

double huber_grad(double x, double delta) {
  if (std::abs(x) <= delta) return x;
  return x > 0.0 ? delta : -delta;
}

}  // namespace

Tape::NodeId Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

Tape::NodeId Tape::constant(Tensor value) {
  Node n;
  n.op = Op::kLeaf;
  n.val = std::move(value);
  return push(std::move(n));
}

Tape::NodeId Tape::param(Tensor value) { return constant(std::move(value)); }

const Tensor& Tape::value(NodeId id) const { return nodes_.at(id).val; }

double Tape::value_scalar(NodeId id) const {
  const Tensor& t = nodes_.at(id).val;
  if (t.numel() != 1) throw std::invalid_argument("value_scalar: node is not a scalar");
  return t.data[0];
}

const Tensor& Tape::grad(NodeId id) const {
  const Node& n = nodes_.at(id);
  if (n.grad.data.empty())
    throw std::runtime_error("grad: node has no gradient (backward not run or disconnected)");
  return n.grad;
}

Tape::NodeId Tape::dense(NodeId x, NodeId w, NodeId b) {
  const Tensor& xt = nodes_.at(x).val;
  const Tensor& wt = nodes_.at(w).val;
  if (xt.shape.size() != 2 || wt.shape.size() != 2 || wt.dim(1) != xt.dim(0))
    throw std::invalid_argument("dense: shape mismatch, w " + wt.shape_str() + " vs x " +
                                xt.shape_str());
  Node n;
  n.op = Op::kDense;
  n.a = x;
  n.b = w;
  n.c = b;
  n.val = Tensor::zeros({wt.dim(0), xt.dim(1)});
  as_mat(n.val) = as_mat(wt) * as_mat(xt);
  if (b != kNone) {
    const Tensor& bt = nodes_.at(b).val;
    if (bt.numel() != wt.dim(0)) throw std::invalid_argument("dense: bias shape mismatch");
    MapMat y = as_mat(n.val);
    for (std::int64_t r = 0; r < y.rows(); ++r) y.row(r).array() += bt.data[r];
  }
  return push(std::move(n));
}

Tape::NodeId Tape::conv1d(NodeId x, NodeId w, NodeId b, int dilation) {
  const Tensor& xt = nodes_.at(x).val;
  const Tensor& wt = nodes_.at(w).val;
  if (xt.shape.size() != 2 || wt.shape.size() != 3 || wt.dim(1) != xt.dim(0))
    throw std::invalid_argument("conv1d: shape mismatch, w " + wt.shape_str() + " vs x " +
                                xt.shape_str());
  const std::int64_t cin = xt.dim(0), t_len = xt.dim(1);
  const std::int64_t cout = wt.dim(0), kernel = wt.dim(2);
  const std::int64_t rf = 1 + (kernel - 1) * static_cast<std::int64_t>(dilation);
  if (t_len < rf)
    throw std::invalid_argument("conv1d: input length " + std::to_string(t_len) +
                                " below receptive field " + std::to_string(rf));
  Node n;
  n.op = Op::kConv1d;
  n.a = x;
  n.b = w;
  n.c = b;
  n.dilation = dilation;
  n.val = Tensor::zeros({cout, t_len});
  MapMat y = as_mat(n.val);
  CMapMat xm = as_mat(xt);

  MatX wk(cout, cin), xs(cin, t_len);
  for (std::int64_t k = 0; k < kernel; ++k) {
    const std::int64_t off = (kernel - 1 - k) * dilation;
    for (std::int64_t o = 0; o < cout; ++o)
      for (std::int64_t i = 0; i < cin; ++i) wk(o, i) = wt.data[(o * cin + i) * kernel + k];
    const std::int64_t pad = std::min(off, t_len);
    for (std::int64_t t = 0; t < pad; ++t) xs.col(t) = xm.col(0);
    if (t_len > off) xs.rightCols(t_len - off) = xm.leftCols(t_len - off);
    y.noalias() += wk * xs;
  }
  if (b != kNone) {
    const Tensor& bt = nodes_.at(b).val;
    if (bt.numel() != cout) throw std::invalid_argument("conv1d: bias shape mismatch");
    for (std::int64_t r = 0; r < cout; ++r) y.row(r).array() += bt.data[r];
  }
  return push(std::move(n));
}

Tape::NodeId Tape::gelu(NodeId x) {
  Node n;
  n.op = Op::kGelu;
  n.a = x;
  n.val = nodes_.at(x).val;
  for (double& v : n.val.data) v = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  return push(std::move(n));
}

Tape::NodeId Tape::add(NodeId a, NodeId b) {
  const Tensor& at = nodes_.at(a).val;
  const Tensor& bt = nodes_.at(b).val;
  if (!at.same_shape(bt))
    throw std::invalid_argument("add: shape mismatch " + at.shape_str() + " vs " + bt.shape_str());
  Node n;
  n.op = Op::kAdd;
  n.a = a;
  n.b = b;
  n.val = at;
  for (std::size_t i = 0; i < n.val.data.size(); ++i) n.val.data[i] += bt.data[i];
  return push(std::move(n));
}

Tape::NodeId Tape::scale(NodeId a, double factor) {
  Node n;
  n.op = Op::kScale;
  n.a = a;
  n.factor = factor;
  n.val = nodes_.at(a).val;
  for (double& v : n.val.data) v *= factor;
  return push(std::move(n));
}

Tape::NodeId Tape::mse(NodeId pred, NodeId target) {
  const Tensor& pt = nodes_.at(pred).val;
  const Tensor& tt = nodes_.at(target).val;
  if (!pt.same_shape(tt))
    throw std::invalid_argument("mse: shape mismatch " + pt.shape_str() + " vs " + tt.shape_str());
  double acc = 0.0;
  for (std::size_t i = 0; i < pt.data.size(); ++i) {
    const double d = pt.data[i] - tt.data[i];
    acc += d * d;
  }
  Node n;
  n.op = Op::kMse;
  n.a = pred;
  n.b = target;
  n.val = Tensor::scalar(acc / static_cast<double>(pt.data.size()));
  return push(std::move(n));
}

Tape::NodeId Tape::orientation_loss(NodeId omega_hat, OrientationLossSpec spec) {
  const Tensor& wt = nodes_.at(omega_hat).val;
  if (wt.shape.size() != 2 || wt.dim(0) != 3)
    throw std::invalid_argument("orientation_loss: expected [3 x T] rates, got " + wt.shape_str());
  const std::int64_t t_len = wt.dim(1);
  const double dt = spec.dt;
  double total = 0.0;
  for (const auto& ss : spec.strides) {
    if (ss.starts.size() != ss.gt_increments.size())
      throw std::invalid_argument("orientation_loss: starts/gt size mismatch");
    if (ss.starts.empty())
      throw std::invalid_argument("orientation_loss: sequence too short for stride " +
                                  std::to_string(ss.j));
    double acc = 0.0;
    for (std::size_t w = 0; w < ss.starts.size(); ++w) {
      const std::size_t i = ss.starts[w];
      if (i + ss.j >= static_cast<std::size_t>(t_len))
        throw std::invalid_argument("orientation_loss: window exceeds sequence");
      so3::Mat3 inc = so3::Mat3::Identity();
      for (std::size_t k = i + 1; k <= i + ss.j; ++k) {
        const so3::Vec3 wv(wt.data[0 * t_len + k], wt.data[1 * t_len + k], wt.data[2 * t_len + k]);
        inc = inc * so3::exp_so3(wv * dt);
      }
      const so3::Vec3 r = so3::log_so3(ss.gt_increments[w] * inc.transpose(), 1e-5);
      for (int c = 0; c < 3; ++c) acc += huber(r[c], spec.huber_delta);
    }
    total += acc / (3.0 * static_cast<double>(ss.starts.size()));
  }
  Node n;
  n.op = Op::kOrientLoss;
  n.a = omega_hat;
  n.orient = std::make_shared<OrientationLossSpec>(std::move(spec));
  n.val = Tensor::scalar(total);
  return push(std::move(n));
}

Tape::NodeId Tape::combine(const std::vector<std::pair<NodeId, double>>& terms) {
  double acc = 0.0;
  for (const auto& [id, w] : terms) acc += w * value_scalar(id);
  Node n;
  n.op = Op::kCombine;
  n.terms = terms;
  n.val = Tensor::scalar(acc);
  return push(std::move(n));
}

void Tape::backward(NodeId loss) {
  Node& top = nodes_.at(loss);
  if (top.val.numel() != 1) throw std::invalid_argument("backward: loss must be a scalar");
  if (!std::isfinite(top.val.data[0]))
    throw std::runtime_error("backward: non-finite loss value");
  for (auto& n : nodes_) n.grad.data.clear();
  top.grad = Tensor::scalar(1.0);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->grad.data.empty() || it->op == Op::kLeaf) continue;
    backward_node(*it);
  }
}

namespace {

void ensure_grad(Tensor& grad, const Tensor& like) {
  if (grad.data.empty()) grad = Tensor::zeros(like.shape);
}

}  // namespace

void Tape::backward_node(Node& n) {
  switch (n.op) {
    case Op::kDense: {
      Node& xn = nodes_[n.a];
      Node& wn = nodes_[n.b];
      CMapMat dy = as_mat(std::as_const(n.grad));
      ensure_grad(xn.grad, xn.val);
      ensure_grad(wn.grad, wn.val);
      as_mat(xn.grad).noalias() += as_mat(wn.val).transpose() * dy;
      as_mat(wn.grad).noalias() += dy * as_mat(xn.val).transpose();
      if (n.c != kNone) {
        Node& bn = nodes_[n.c];
        ensure_grad(bn.grad, bn.val);
        for (std::int64_t r = 0; r < dy.rows(); ++r) bn.grad.data[r] += dy.row(r).sum();
      }
      break;
    }
    case Op::kConv1d: {
      Node& xn = nodes_[n.a];
      Node& wn = nodes_[n.b];
      const std::int64_t cin = xn.val.dim(0), t_len = xn.val.dim(1);
      const std::int64_t cout = wn.val.dim(0), kernel = wn.val.dim(2);
      CMapMat dy = as_mat(std::as_const(n.grad));
      CMapMat xm = as_mat(std::as_const(xn.val));
      ensure_grad(xn.grad, xn.val);
      ensure_grad(wn.grad, wn.val);
      MapMat dx = as_mat(xn.grad);
      MatX wk(cout, cin), xs(cin, t_len), dxs(cin, t_len), dwk(cout, cin);
      for (std::int64_t k = 0; k < kernel; ++k) {
        const std::int64_t off = (kernel - 1 - k) * n.dilation;
        for (std::int64_t o = 0; o < cout; ++o)
          for (std::int64_t i = 0; i < cin; ++i)
            wk(o, i) = wn.val.data[(o * cin + i) * kernel + k];
        const std::int64_t pad = std::min(off, t_len);
        for (std::int64_t t = 0; t < pad; ++t) xs.col(t) = xm.col(0);
        if (t_len > off) xs.rightCols(t_len - off) = xm.leftCols(t_len - off);
        dwk.noalias() = dy * xs.transpose();
        for (std::int64_t o = 0; o < cout; ++o)
          for (std::int64_t i = 0; i < cin; ++i)
            wn.grad.data[(o * cin + i) * kernel + k] += dwk(o, i);
        dxs.noalias() = wk.transpose() * dy;
        // fold replicated columns back into column 0
        for (std::int64_t t = 0; t < pad; ++t) dx.col(0) += dxs.col(t);
        if (t_len > off) dx.leftCols(t_len - off) += dxs.rightCols(t_len - off);
      }
      if (n.c != kNone) {
        Node& bn = nodes_[n.c];
        ensure_grad(bn.grad, bn.val);
        for (std::int64_t r = 0; r < cout; ++r) bn.grad.data[r] += dy.row(r).sum();
      }
      break;
    }
    case Op::kGelu: {
      Node& xn = nodes_[n.a];
      ensure_grad(xn.grad, xn.val);
      for (std::size_t i = 0; i < xn.val.data.size(); ++i) {
        const double x = xn.val.data[i];
        const double d =
            0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
        xn.grad.data[i] += d * n.grad.data[i];
      }
      break;
    }
    case Op::kAdd: {
      for (NodeId id : {n.a, n.b}) {
        Node& cn = nodes_[id];
        ensure_grad(cn.grad, cn.val);
        for (std::size_t i = 0; i < cn.grad.data.size(); ++i) cn.grad.data[i] += n.grad.data[i];
      }
      break;
    }
    case Op::kScale: {
      Node& an = nodes_[n.a];
      ensure_grad(an.grad, an.val);
      for (std::size_t i = 0; i < an.grad.data.size(); ++i)
        an.grad.data[i] += n.factor * n.grad.data[i];
      break;
    }
    case Op::kMse: {
      Node& pn = nodes_[n.a];
      const Node& tn = nodes_[n.b];
      ensure_grad(pn.grad, pn.val);
      const double s = 2.0 * n.grad.data[0] / static_cast<double>(pn.val.data.size());
      for (std::size_t i = 0; i < pn.val.data.size(); ++i)
        pn.grad.data[i] += s * (pn.val.data[i] - tn.val.data[i]);
      break;
    }
    case Op::kOrientLoss: {
      Node& wn = nodes_[n.a];
      ensure_grad(wn.grad, wn.val);
      const std::int64_t t_len = wn.val.dim(1);
      const double dt = n.orient->dt;
      const double upstream = n.grad.data[0];
      for (const auto& ss : n.orient->strides) {
        const double norm = upstream / (3.0 * static_cast<double>(ss.starts.size()));
        for (std::size_t w = 0; w < ss.starts.size(); ++w) {
          const std::size_t i = ss.starts[w];
          // forward pass through the window, keeping step rotations
          std::vector<so3::Mat3> steps(ss.j);
          std::vector<so3::Vec3> thetas(ss.j);
          so3::Mat3 inc = so3::Mat3::Identity();
          for (std::size_t s = 0; s < ss.j; ++s) {
            const std::size_t k = i + 1 + s;
            thetas[s] = so3::Vec3(wn.val.data[0 * t_len + k], wn.val.data[1 * t_len + k],
                                  wn.val.data[2 * t_len + k]) * dt;
            steps[s] = so3::exp_so3(thetas[s]);
            inc = inc * steps[s];
          }
          const so3::Vec3 r = so3::log_so3(ss.gt_increments[w] * inc.transpose(), 1e-5);
          so3::Vec3 dr;
          for (int c = 0; c < 3; ++c) dr[c] = norm * huber_grad(r[c], n.orient->huber_delta);
          // d r / d omega_k = -dt * Jr^{-1}(r) * C_k * Jr(theta_k), with C_k the
          // prefix product of step rotations through k.
          const so3::Mat3 jr_inv_t = so3::right_jacobian_inv(r).transpose();
          so3::Mat3 prefix = so3::Mat3::Identity();
          for (std::size_t s = 0; s < ss.j; ++s) {
            prefix = prefix * steps[s];
            const so3::Vec3 g =
                -dt * (so3::right_jacobian(thetas[s]).transpose() * prefix.transpose() *
                       (jr_inv_t * dr));
            const std::size_t k = i + 1 + s;
            for (int c = 0; c < 3; ++c) wn.grad.data[c * t_len + k] += g[c];
          }
        }
      }
      break;
    }
    case Op::kCombine: {
      for (const auto& [id, w] : n.terms) {
        Node& cn = nodes_[id];
        ensure_grad(cn.grad, cn.val);
        cn.grad.data[0] += w * n.grad.data[0];
      }
      break;
    }
    case Op::kLeaf:
      break;
  }
}

}  // namespace imnd
