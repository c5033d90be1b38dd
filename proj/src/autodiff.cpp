#include "geoalign/autodiff.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include <fmt/format.h>

#include "geoalign/ops.hpp"

namespace geoalign {

const Tensor& Var::value() const { return tape_->node(*this).value; }
const Tensor& Var::grad() const { return tape_->node(*this).grad; }
bool Var::requires_grad() const { return tape_->node(*this).requires_grad; }

const Tape::Node& Tape::node(Var v) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) throw std::logic_error("variable does not belong to this tape");
  return nodes_[v.id_];
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.op = "leaf";
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(std::string op, Tensor value, std::vector<Var> inputs, Backward backward) {
  Node n;
  n.op = std::move(op);
  n.value = std::move(value);
  for (const Var& in : inputs) {
    if (!in.valid()) continue;
    node(in);
    n.requires_grad = n.requires_grad || nodes_[in.id_].requires_grad;
    n.inputs.push_back(in.id_);
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

std::vector<std::string> Tape::recorded_ops() const {
  std::vector<std::string> ops;
  for (const Node& n : nodes_) {
    if (!n.inputs.empty()) ops.push_back(n.op);
  }
  return ops;
}

void Tape::backward(Var loss) {
  const Node& root = node(loss);
  if (root.value.size() != 1) {
    throw std::invalid_argument(
        fmt::format("backward needs a scalar loss, got shape {}", shape_string(root.value.shape())));
  }
  for (std::size_t id = 0; id <= loss.id_; ++id) {
    Node& n = nodes_[id];
    if (n.requires_grad) n.grad = Tensor::like(n.value);
  }
  visit_order_.clear();
  if (!root.requires_grad) return;
  nodes_[loss.id_].grad[0] = 1.0;

  std::vector<Tensor*> grads;
  for (std::size_t id = loss.id_ + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.backward) continue;
    grads.clear();
    for (std::size_t in : n.inputs) grads.push_back(nodes_[in].requires_grad ? &nodes_[in].grad : nullptr);
    n.backward(n.grad, n.value, grads);
    visit_order_.push_back(n.op);
  }
}

namespace ad {

namespace {

struct Broadcast {
  Shape out;
  bool same = false;
  std::vector<std::size_t> a_off;
  std::vector<std::size_t> b_off;
};

Broadcast plan_broadcast(const Shape& a, const Shape& b) {
  Broadcast plan;
  if (a == b) {
    plan.out = a;
    plan.same = true;
    return plan;
  }
  if (a.size() != b.size()) {
    throw std::invalid_argument(fmt::format("cannot broadcast {} with {}", shape_string(a), shape_string(b)));
  }
  const std::size_t rank = a.size();
  plan.out.resize(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    if (a[d] != b[d] && a[d] != 1 && b[d] != 1) {
      throw std::invalid_argument(fmt::format("cannot broadcast {} with {}", shape_string(a), shape_string(b)));
    }
    plan.out[d] = std::max(a[d], b[d]);
  }
  std::vector<std::size_t> sa(rank), sb(rank);
  std::size_t ra = 1, rb = 1;
  for (std::size_t d = rank; d-- > 0;) {
    sa[d] = a[d] == 1 ? 0 : ra;
    sb[d] = b[d] == 1 ? 0 : rb;
    ra *= a[d];
    rb *= b[d];
  }
  const std::size_t total = shape_size(plan.out);
  plan.a_off.resize(total);
  plan.b_off.resize(total);
  std::vector<std::size_t> index(rank, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t i = 0; i < total; ++i) {
    plan.a_off[i] = oa;
    plan.b_off[i] = ob;
    for (std::size_t d = rank; d-- > 0;) {
      ++index[d];
      oa += sa[d];
      ob += sb[d];
      if (index[d] < plan.out[d]) break;
      oa -= sa[d] * index[d];
      ob -= sb[d] * index[d];
      index[d] = 0;
    }
  }
  return plan;
}

template <typename Fwd, typename DA, typename DB>
Var binary(const char* name, Var a, Var b, Fwd fwd, DA da, DB db) {
  auto plan = std::make_shared<Broadcast>(plan_broadcast(a.shape(), b.shape()));
  Tensor out(plan->out);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t ia = plan->same ? i : plan->a_off[i];
    const std::size_t ib = plan->same ? i : plan->b_off[i];
    out[i] = fwd(av[ia], bv[ib]);
  }
  return a.tape().record(name, std::move(out), {a, b}, [a, b, plan, da, db](const Tensor& g, const Tensor&, auto grads) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const std::size_t ia = plan->same ? i : plan->a_off[i];
      const std::size_t ib = plan->same ? i : plan->b_off[i];
      if (grads[0]) (*grads[0])[ia] += g[i] * da(av[ia], bv[ib]);
      if (grads[1]) (*grads[1])[ib] += g[i] * db(av[ia], bv[ib]);
    }
  });
}

// y = f(x) elementwise; dfdx receives (x, y).
template <typename F, typename D>
Var unary(const char* name, Var x, F f, D dfdx) {
  Tensor out = Tensor::like(x.value());
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return x.tape().record(name, std::move(out), {x}, [x, dfdx](const Tensor& g, const Tensor& y, auto grads) {
    const Tensor& xv = x.value();
    for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i] * dfdx(xv[i], y[i]);
  });
}

void require_rank4(Var x, const char* what) {
  if (x.value().rank() != 4) {
    throw std::invalid_argument(fmt::format("{} expects a BxCxHxW tensor, got {}", what, shape_string(x.shape())));
  }
}

}  // namespace

Var add(Var a, Var b) {
  return binary("add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
                [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary("sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
                [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary("mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
                [](double x, double) { return x; });
}

Var add(Var a, double c) {
  return unary("add_const", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var scale(Var a, double c) {
  return unary("scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var sigmoid(Var x) {
  return unary("sigmoid", x, [](double v) { return geoalign::sigmoid(v); },
               [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var x) {
  return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var log1p_exp(Var x) {
  return unary("log1p_exp", x, [](double v) { return geoalign::log1p_exp(v); },
               [](double v, double) { return geoalign::sigmoid(v); });
}

Var shifted_softplus(Var x) {
  return unary("shifted_softplus", x, [](double v) { return geoalign::log1p_exp(v) - std::numbers::ln2; },
               [](double v, double) { return geoalign::sigmoid(v); });
}

Var abs(Var x) {
  return unary("abs", x, [](double v) { return std::abs(v); },
               [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  return x.tape().record("sum", Tensor::scalar(total), {x}, [](const Tensor& g, const Tensor&, auto grads) {
    for (double& v : grads[0]->data()) v += g[0];
  });
}

Var mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  return scale(sum(x), 1.0 / n);
}

Var masked_mean(Var x, const Tensor& mask) {
  if (mask.shape() != x.shape()) {
    throw std::invalid_argument(fmt::format("mask {} does not match values {}", shape_string(mask.shape()),
                                            shape_string(x.shape())));
  }
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] != 0.0) {
      total += x.value()[i];
      ++count;
    }
  }
  if (count == 0) throw std::invalid_argument("masked_mean over an empty selection");
  const double inv = 1.0 / static_cast<double>(count);
  return x.tape().record("masked_mean", Tensor::scalar(total * inv), {x}, [mask, inv](const Tensor& g, const Tensor&, auto grads) {
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (mask[i] != 0.0) (*grads[0])[i] += g[0] * inv;
    }
  });
}

Var conv2d(Var input, Var weights, std::size_t dilation, bool depthwise) {
  const Kernel2D kernel{weights.value(), dilation, depthwise};
  Tensor out = geoalign::conv2d(input.value(), kernel);
  return input.tape().record("conv2d", std::move(out), {input, weights},
                             [input, weights, dilation, depthwise](const Tensor& g, const Tensor&, auto grads) {
                               const Kernel2D k{weights.value(), dilation, depthwise};
                               if (grads[0]) {
                                 const Tensor gi = conv2d_grad_input(g, k);
                                 for (std::size_t i = 0; i < gi.size(); ++i) (*grads[0])[i] += gi[i];
                               }
                               if (grads[1]) {
                                 const Tensor gw = conv2d_grad_weights(g, input.value(), k);
                                 for (std::size_t i = 0; i < gw.size(); ++i) (*grads[1])[i] += gw[i];
                               }
                             });
}

Var adaptive_avg_pool(Var x, std::size_t out_h, std::size_t out_w) {
  Tensor out = geoalign::adaptive_avg_pool(x.value(), out_h, out_w);
  const Shape in_shape = x.shape();
  return x.tape().record("adaptive_avg_pool", std::move(out), {x}, [in_shape](const Tensor& g, const Tensor&, auto grads) {
    const Tensor gi = adaptive_avg_pool_grad(g, in_shape);
    for (std::size_t i = 0; i < gi.size(); ++i) (*grads[0])[i] += gi[i];
  });
}

Var softmax(Var x, std::size_t axis) {
  Tensor out = softmax_over_axis(x.value(), axis);
  return x.tape().record("softmax", std::move(out), {x}, [axis](const Tensor& g, const Tensor& y, auto grads) {
    const Tensor gi = softmax_grad(g, y, axis);
    for (std::size_t i = 0; i < gi.size(); ++i) (*grads[0])[i] += gi[i];
  });
}

Var channel_project(Var x, Var weights, Var bias) {
  require_rank4(x, "channel_project");
  const Tensor no_bias;
  Tensor out = geoalign::channel_project(x.value(), weights.value(), bias.valid() ? bias.value() : no_bias);
  return x.tape().record("channel_project", std::move(out), {x, weights, bias},
                         [x, weights, bias](const Tensor& g, const Tensor&, auto grads) {
                           const Tensor& xv = x.value();
                           const Tensor& wv = weights.value();
                           const std::size_t batch = xv.dim(0), in_c = xv.dim(1), out_c = wv.dim(0);
                           const std::size_t plane = xv.dim(2) * xv.dim(3);
                           for (std::size_t b = 0; b < batch; ++b) {
                             for (std::size_t oc = 0; oc < out_c; ++oc) {
                               const double* go = &g.data()[(b * out_c + oc) * plane];
                               for (std::size_t ic = 0; ic < in_c; ++ic) {
                                 const double* xi = &xv.data()[(b * in_c + ic) * plane];
                                 if (grads[0]) {
                                   double* gx = &grads[0]->data()[(b * in_c + ic) * plane];
                                   const double w = wv[oc * in_c + ic];
                                   for (std::size_t p = 0; p < plane; ++p) gx[p] += w * go[p];
                                 }
                                 if (grads[1]) {
                                   double acc = 0.0;
                                   for (std::size_t p = 0; p < plane; ++p) acc += go[p] * xi[p];
                                   (*grads[1])[oc * in_c + ic] += acc;
                                 }
                               }
                               if (grads.size() > 2 && grads[2]) {
                                 double acc = 0.0;
                                 for (std::size_t p = 0; p < plane; ++p) acc += go[p];
                                 (*grads[2])[oc] += acc;
                               }
                             }
                           }
                         });
}

Var channel_mean(Var x) {
  require_rank4(x, "channel_mean");
  const Tensor& xv = x.value();
  const std::size_t batch = xv.dim(0), channels = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
  Tensor out(Shape{batch, 1, xv.dim(2), xv.dim(3)});
  const double inv = 1.0 / static_cast<double>(channels);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t p = 0; p < plane; ++p) out[b * plane + p] += inv * xv[(b * channels + c) * plane + p];
    }
  }
  return x.tape().record("channel_mean", std::move(out), {x}, [batch, channels, plane, inv](const Tensor& g, const Tensor&, auto grads) {
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t p = 0; p < plane; ++p) (*grads[0])[(b * channels + c) * plane + p] += inv * g[b * plane + p];
      }
    }
  });
}

Var select_channel(Var x, std::size_t index) {
  require_rank4(x, "select_channel");
  const Tensor& xv = x.value();
  const std::size_t batch = xv.dim(0), channels = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
  if (index >= channels) {
    throw std::invalid_argument(fmt::format("channel {} out of range for {}", index, shape_string(xv.shape())));
  }
  Tensor out(Shape{batch, 1, xv.dim(2), xv.dim(3)});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t p = 0; p < plane; ++p) out[b * plane + p] = xv[(b * channels + index) * plane + p];
  }
  return x.tape().record("select_channel", std::move(out), {x},
                         [batch, channels, plane, index](const Tensor& g, const Tensor&, auto grads) {
                           for (std::size_t b = 0; b < batch; ++b) {
                             for (std::size_t p = 0; p < plane; ++p) {
                               (*grads[0])[(b * channels + index) * plane + p] += g[b * plane + p];
                             }
                           }
                         });
}

Var normalize(Var x) {
  const Tensor& xv = x.value();
  double sq = 0.0;
  for (double v : xv.data()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm == 0.0) throw std::invalid_argument("cannot normalize a zero vector");
  Tensor out = Tensor::like(xv);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] / norm;
  return x.tape().record("normalize", std::move(out), {x}, [norm](const Tensor& g, const Tensor& y, auto grads) {
    double dot = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * y[i];
    for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += (g[i] - y[i] * dot) / norm;
  });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape().record("reshape", std::move(out), {x}, [](const Tensor& g, const Tensor&, auto grads) {
    for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i];
  });
}

}  // namespace ad

}  // namespace geoalign
