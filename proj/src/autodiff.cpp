#include "autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace pctl {

const Tensor& Var::value() const { return tape_->node(id_).value; }

const Tensor& Var::grad() const {
  const auto& n = tape_->node(id_);
  if (!n.requires_grad) {
    throw Error::runtime("Var::grad: node does not require gradients");
  }
  return n.grad;
}

bool Var::requires_grad() const { return tape_->node(id_).requires_grad; }

void Tape::check_same_tape(Var v, const char* op) const {
  if (v.tape() != this) {
    throw Error::runtime(std::string(op) + ": operand belongs to a different graph");
  }
}

Var Tape::input(Tensor v) {
  if (!v.all_finite()) throw Error::runtime("input: non-finite values");
  Node n;
  n.value = std::move(v);
  n.is_leaf = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Tensor v) {
  if (!v.all_finite()) throw Error::runtime("param: non-finite values");
  Node n;
  n.grad = Tensor(v.rows(), v.cols());
  n.value = std::move(v);
  n.requires_grad = true;
  n.is_leaf = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::make(const char* op, Tensor value, std::vector<std::size_t> parents,
               std::function<void(Tape&, const Node&)> backward_fn) {
  if (!value.all_finite()) {
    throw Error::runtime(std::string(op) + ": non-finite output");
  }
  Node n;
  n.op = op;
  n.requires_grad = false;
  for (std::size_t p : parents) {
    // Construction order is the topological order; a cycle would need a
    // parent id at or past this node.
    if (p >= nodes_.size()) {
      throw Error::runtime(std::string(op) + ": graph cycle detected");
    }
    if (nodes_[p].requires_grad) n.requires_grad = true;
  }
  if (n.requires_grad) {
    n.grad = Tensor(value.rows(), value.cols());
    n.backward_fn = std::move(backward_fn);
  }
  n.value = std::move(value);
  n.parents = std::move(parents);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::add_grad(std::size_t parent, const Tensor& delta) {
  Node& p = nodes_[parent];
  if (!p.requires_grad) return;
  for (std::size_t i = 0; i < delta.numel(); ++i) p.grad[i] += delta[i];
}

namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw Error::runtime(std::string(op) + ": shapes " + a.shape_string() + " and " +
                       b.shape_string() + " do not conform");
}

}  // namespace

Var Tape::add(Var a, Var b) {
  check_same_tape(a, "add");
  check_same_tape(b, "add");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!av.same_shape(bv)) shape_error("add", av, bv);
  Tensor out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
  std::size_t ia = a.id(), ib = b.id();
  return make("add", std::move(out), {ia, ib}, [ia, ib](Tape& t, const Node& n) {
    t.add_grad(ia, n.grad);
    t.add_grad(ib, n.grad);
  });
}

Var Tape::sub(Var a, Var b) {
  check_same_tape(a, "sub");
  check_same_tape(b, "sub");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!av.same_shape(bv)) shape_error("sub", av, bv);
  Tensor out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
  std::size_t ia = a.id(), ib = b.id();
  return make("sub", std::move(out), {ia, ib}, [ia, ib](Tape& t, const Node& n) {
    t.add_grad(ia, n.grad);
    if (t.nodes_[ib].requires_grad) {
      Tensor neg = n.grad;
      for (std::size_t i = 0; i < neg.numel(); ++i) neg[i] = -neg[i];
      t.add_grad(ib, neg);
    }
  });
}

Var Tape::mul(Var a, Var b) {
  check_same_tape(a, "mul");
  check_same_tape(b, "mul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!av.same_shape(bv)) shape_error("mul", av, bv);
  Tensor out = av;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
  std::size_t ia = a.id(), ib = b.id();
  return make("mul", std::move(out), {ia, ib}, [ia, ib](Tape& t, const Node& n) {
    if (t.nodes_[ia].requires_grad) {
      Tensor d = n.grad;
      const Tensor& other = t.nodes_[ib].value;
      for (std::size_t i = 0; i < d.numel(); ++i) d[i] *= other[i];
      t.add_grad(ia, d);
    }
    if (t.nodes_[ib].requires_grad) {
      Tensor d = n.grad;
      const Tensor& other = t.nodes_[ia].value;
      for (std::size_t i = 0; i < d.numel(); ++i) d[i] *= other[i];
      t.add_grad(ib, d);
    }
  });
}

Var Tape::scale(Var a, double c) {
  check_same_tape(a, "scale");
  if (!std::isfinite(c)) throw Error::runtime("scale: non-finite constant");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= c;
  std::size_t ia = a.id();
  return make("scale", std::move(out), {ia}, [ia, c](Tape& t, const Node& n) {
    Tensor d = n.grad;
    for (std::size_t i = 0; i < d.numel(); ++i) d[i] *= c;
    t.add_grad(ia, d);
  });
}

Var Tape::mul_scalar(Var a, Var s) {
  check_same_tape(a, "mul_scalar");
  check_same_tape(s, "mul_scalar");
  const Tensor& sv = s.value();
  if (sv.numel() != 1) shape_error("mul_scalar", a.value(), sv);
  double sc = sv.item();
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= sc;
  std::size_t ia = a.id(), is = s.id();
  return make("mul_scalar", std::move(out), {ia, is}, [ia, is](Tape& t, const Node& n) {
    double sc2 = t.nodes_[is].value.item();
    if (t.nodes_[ia].requires_grad) {
      Tensor d = n.grad;
      for (std::size_t i = 0; i < d.numel(); ++i) d[i] *= sc2;
      t.add_grad(ia, d);
    }
    if (t.nodes_[is].requires_grad) {
      const Tensor& av = t.nodes_[ia].value;
      double acc = 0.0;
      for (std::size_t i = 0; i < av.numel(); ++i) acc += n.grad[i] * av[i];
      t.add_grad(is, Tensor::scalar(acc));
    }
  });
}

Var Tape::add_rowvec(Var a, Var b) {
  check_same_tape(a, "add_rowvec");
  check_same_tape(b, "add_rowvec");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (bv.rows() != 1 || bv.cols() != av.cols()) shape_error("add_rowvec", av, bv);
  Tensor out = av;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out.at(r, c) += bv.at(0, c);
  std::size_t ia = a.id(), ib = b.id();
  return make("add_rowvec", std::move(out), {ia, ib}, [ia, ib](Tape& t, const Node& n) {
    t.add_grad(ia, n.grad);
    if (t.nodes_[ib].requires_grad) {
      Tensor d(1, n.grad.cols());
      for (std::size_t r = 0; r < n.grad.rows(); ++r)
        for (std::size_t c = 0; c < n.grad.cols(); ++c) d.at(0, c) += n.grad.at(r, c);
      t.add_grad(ib, d);
    }
  });
}

Var Tape::matmul(Var a, Var b) {
  check_same_tape(a, "matmul");
  check_same_tape(b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows()) shape_error("matmul", av, bv);
  Tensor out(av.rows(), bv.cols());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    for (std::size_t k = 0; k < av.cols(); ++k) {
      double x = av.at(r, k);
      if (x == 0.0) continue;
      for (std::size_t c = 0; c < bv.cols(); ++c) out.at(r, c) += x * bv.at(k, c);
    }
  }
  std::size_t ia = a.id(), ib = b.id();
  return make("matmul", std::move(out), {ia, ib}, [ia, ib](Tape& t, const Node& n) {
    const Tensor& av2 = t.nodes_[ia].value;
    const Tensor& bv2 = t.nodes_[ib].value;
    const Tensor& g = n.grad;
    if (t.nodes_[ia].requires_grad) {
      // dA = G * B^T
      Tensor d(av2.rows(), av2.cols());
      for (std::size_t r = 0; r < av2.rows(); ++r)
        for (std::size_t k = 0; k < av2.cols(); ++k) {
          double acc = 0.0;
          for (std::size_t c = 0; c < bv2.cols(); ++c) acc += g.at(r, c) * bv2.at(k, c);
          d.at(r, k) = acc;
        }
      t.add_grad(ia, d);
    }
    if (t.nodes_[ib].requires_grad) {
      // dB = A^T * G
      Tensor d(bv2.rows(), bv2.cols());
      for (std::size_t k = 0; k < bv2.rows(); ++k)
        for (std::size_t c = 0; c < bv2.cols(); ++c) {
          double acc = 0.0;
          for (std::size_t r = 0; r < av2.rows(); ++r) acc += av2.at(r, k) * g.at(r, c);
          d.at(k, c) = acc;
        }
      t.add_grad(ib, d);
    }
  });
}

Var Tape::transpose(Var a) {
  check_same_tape(a, "transpose");
  const Tensor& av = a.value();
  Tensor out(av.cols(), av.rows());
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < av.cols(); ++c) out.at(c, r) = av.at(r, c);
  std::size_t ia = a.id();
  return make("transpose", std::move(out), {ia}, [ia](Tape& t, const Node& n) {
    Tensor d(n.grad.cols(), n.grad.rows());
    for (std::size_t r = 0; r < n.grad.rows(); ++r)
      for (std::size_t c = 0; c < n.grad.cols(); ++c) d.at(c, r) = n.grad.at(r, c);
    t.add_grad(ia, d);
  });
}

Var Tape::exp(Var a) {
  check_same_tape(a, "exp");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::exp(out[i]);
  std::size_t ia = a.id();
  return make("exp", std::move(out), {ia}, [ia](Tape& t, const Node& n) {
    Tensor d = n.grad;
    for (std::size_t i = 0; i < d.numel(); ++i) d[i] *= n.value[i];
    t.add_grad(ia, d);
  });
}

Var Tape::log(Var a) {
  check_same_tape(a, "log");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::log(out[i]);
  std::size_t ia = a.id();
  return make("log", std::move(out), {ia}, [ia](Tape& t, const Node& n) {
    Tensor d = n.grad;
    const Tensor& x = t.nodes_[ia].value;
    for (std::size_t i = 0; i < d.numel(); ++i) d[i] /= x[i];
    t.add_grad(ia, d);
  });
}

Var Tape::tanh(Var a) {
  check_same_tape(a, "tanh");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::tanh(out[i]);
  std::size_t ia = a.id();
  return make("tanh", std::move(out), {ia}, [ia](Tape& t, const Node& n) {
    Tensor d = n.grad;
    for (std::size_t i = 0; i < d.numel(); ++i) d[i] *= 1.0 - n.value[i] * n.value[i];
    t.add_grad(ia, d);
  });
}

Var Tape::relu(Var a) {
  check_same_tape(a, "relu");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
  std::size_t ia = a.id();
  return make("relu", std::move(out), {ia}, [ia](Tape& t, const Node& n) {
    Tensor d = n.grad;
    const Tensor& x = t.nodes_[ia].value;
    for (std::size_t i = 0; i < d.numel(); ++i) d[i] = x[i] > 0.0 ? d[i] : 0.0;
    t.add_grad(ia, d);
  });
}

Var Tape::l2_normalize_rows(Var a) {
  check_same_tape(a, "l2_normalize_rows");
  const Tensor& av = a.value();
  Tensor out(av.rows(), av.cols());
  std::vector<double> norms(av.rows(), 0.0);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double sq = 0.0;
    for (std::size_t c = 0; c < av.cols(); ++c) sq += av.at(r, c) * av.at(r, c);
    double norm = std::sqrt(sq);
    norms[r] = norm;
    if (norm == 0.0) {
      ++zero_norm_warnings_;  // row stays zero instead of NaN
      continue;
    }
    for (std::size_t c = 0; c < av.cols(); ++c) out.at(r, c) = av.at(r, c) / norm;
  }
  std::size_t ia = a.id();
  return make("l2_normalize_rows", std::move(out), {ia},
              [ia, norms](Tape& t, const Node& n) {
                // y = x / |x|; dx = (g - y (g . y)) / |x|, zero rows get zero.
                Tensor d(n.grad.rows(), n.grad.cols());
                for (std::size_t r = 0; r < n.grad.rows(); ++r) {
                  if (norms[r] == 0.0) continue;
                  double gy = 0.0;
                  for (std::size_t c = 0; c < n.grad.cols(); ++c)
                    gy += n.grad.at(r, c) * n.value.at(r, c);
                  for (std::size_t c = 0; c < n.grad.cols(); ++c)
                    d.at(r, c) = (n.grad.at(r, c) - n.value.at(r, c) * gy) / norms[r];
                }
                t.add_grad(ia, d);
              });
}

namespace {

// Stabilized per-row softmax of a value tensor into `soft`.
void softmax_into(const Tensor& x, Tensor& soft) {
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double mx = x.at(r, 0);
    for (std::size_t c = 1; c < x.cols(); ++c) mx = std::max(mx, x.at(r, c));
    double denom = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) {
      soft.at(r, c) = std::exp(x.at(r, c) - mx);
      denom += soft.at(r, c);
    }
    for (std::size_t c = 0; c < x.cols(); ++c) soft.at(r, c) /= denom;
  }
}

}  // namespace

Var Tape::log_sum_exp_rows(Var a) {
  check_same_tape(a, "log_sum_exp_rows");
  const Tensor& av = a.value();
  if (av.cols() == 0) throw Error::runtime("log_sum_exp_rows: empty rows");
  Tensor out(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double mx = av.at(r, 0);
    for (std::size_t c = 1; c < av.cols(); ++c) mx = std::max(mx, av.at(r, c));
    double acc = 0.0;
    for (std::size_t c = 0; c < av.cols(); ++c) acc += std::exp(av.at(r, c) - mx);
    out.at(r, 0) = mx + std::log(acc);
  }
  std::size_t ia = a.id();
  return make("log_sum_exp_rows", std::move(out), {ia}, [ia](Tape& t, const Node& n) {
    const Tensor& x = t.nodes_[ia].value;
    Tensor soft(x.rows(), x.cols());
    softmax_into(x, soft);
    for (std::size_t r = 0; r < x.rows(); ++r)
      for (std::size_t c = 0; c < x.cols(); ++c) soft.at(r, c) *= n.grad.at(r, 0);
    t.add_grad(ia, soft);
  });
}

Var Tape::softmax_rows(Var a) {
  check_same_tape(a, "softmax_rows");
  const Tensor& av = a.value();
  if (av.cols() == 0) throw Error::runtime("softmax_rows: empty rows");
  Tensor out(av.rows(), av.cols());
  softmax_into(av, out);
  std::size_t ia = a.id();
  return make("softmax_rows", std::move(out), {ia}, [ia](Tape& t, const Node& n) {
    Tensor d(n.value.rows(), n.value.cols());
    for (std::size_t r = 0; r < n.value.rows(); ++r) {
      double inner = 0.0;
      for (std::size_t c = 0; c < n.value.cols(); ++c)
        inner += n.grad.at(r, c) * n.value.at(r, c);
      for (std::size_t c = 0; c < n.value.cols(); ++c)
        d.at(r, c) = n.value.at(r, c) * (n.grad.at(r, c) - inner);
    }
    t.add_grad(ia, d);
  });
}

Var Tape::dot(Var a, Var b) {
  check_same_tape(a, "dot");
  check_same_tape(b, "dot");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.numel() != bv.numel()) shape_error("dot", av, bv);
  double acc = 0.0;
  for (std::size_t i = 0; i < av.numel(); ++i) acc += av[i] * bv[i];
  std::size_t ia = a.id(), ib = b.id();
  return make("dot", Tensor::scalar(acc), {ia, ib}, [ia, ib](Tape& t, const Node& n) {
    double g = n.grad.item();
    if (t.nodes_[ia].requires_grad) {
      Tensor d = t.nodes_[ib].value;
      for (std::size_t i = 0; i < d.numel(); ++i) d[i] *= g;
      // shapes may differ while numel matches; reuse a's shape
      Tensor shaped(t.nodes_[ia].value.rows(), t.nodes_[ia].value.cols(), d.values());
      t.add_grad(ia, shaped);
    }
    if (t.nodes_[ib].requires_grad) {
      Tensor d = t.nodes_[ia].value;
      for (std::size_t i = 0; i < d.numel(); ++i) d[i] *= g;
      Tensor shaped(t.nodes_[ib].value.rows(), t.nodes_[ib].value.cols(), d.values());
      t.add_grad(ib, shaped);
    }
  });
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error::runtime("concat_rows: no operands");
  std::size_t cols = parts[0].value().cols();
  std::size_t rows = 0;
  for (Var p : parts) {
    check_same_tape(p, "concat_rows");
    if (p.value().cols() != cols) shape_error("concat_rows", parts[0].value(), p.value());
    rows += p.value().rows();
  }
  Tensor out(rows, cols);
  std::vector<std::size_t> ids;
  std::vector<std::size_t> offsets;
  std::size_t r0 = 0;
  for (Var p : parts) {
    const Tensor& pv = p.value();
    offsets.push_back(r0);
    ids.push_back(p.id());
    for (std::size_t r = 0; r < pv.rows(); ++r)
      for (std::size_t c = 0; c < cols; ++c) out.at(r0 + r, c) = pv.at(r, c);
    r0 += pv.rows();
  }
  return make("concat_rows", std::move(out), ids, [ids, offsets](Tape& t, const Node& n) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      Node& p = t.nodes_[ids[i]];
      if (!p.requires_grad) continue;
      Tensor d(p.value.rows(), p.value.cols());
      for (std::size_t r = 0; r < d.rows(); ++r)
        for (std::size_t c = 0; c < d.cols(); ++c) d.at(r, c) = n.grad.at(offsets[i] + r, c);
      t.add_grad(ids[i], d);
    }
  });
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error::runtime("concat_cols: no operands");
  std::size_t rows = parts[0].value().rows();
  std::size_t cols = 0;
  for (Var p : parts) {
    check_same_tape(p, "concat_cols");
    if (p.value().rows() != rows) shape_error("concat_cols", parts[0].value(), p.value());
    cols += p.value().cols();
  }
  Tensor out(rows, cols);
  std::vector<std::size_t> ids;
  std::vector<std::size_t> offsets;
  std::size_t c0 = 0;
  for (Var p : parts) {
    const Tensor& pv = p.value();
    offsets.push_back(c0);
    ids.push_back(p.id());
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < pv.cols(); ++c) out.at(r, c0 + c) = pv.at(r, c);
    c0 += pv.cols();
  }
  return make("concat_cols", std::move(out), ids, [ids, offsets](Tape& t, const Node& n) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      Node& p = t.nodes_[ids[i]];
      if (!p.requires_grad) continue;
      Tensor d(p.value.rows(), p.value.cols());
      for (std::size_t r = 0; r < d.rows(); ++r)
        for (std::size_t c = 0; c < d.cols(); ++c) d.at(r, c) = n.grad.at(r, offsets[i] + c);
      t.add_grad(ids[i], d);
    }
  });
}

Var Tape::slice_rows(Var a, std::vector<std::size_t> rows) {
  check_same_tape(a, "slice_rows");
  const Tensor& av = a.value();
  Tensor out = av.gather_rows(rows);
  std::size_t ia = a.id();
  return make("slice_rows", std::move(out), {ia}, [ia, rows](Tape& t, const Node& n) {
    Tensor d(t.nodes_[ia].value.rows(), t.nodes_[ia].value.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t c = 0; c < d.cols(); ++c) d.at(rows[i], c) += n.grad.at(i, c);
    t.add_grad(ia, d);
  });
}

Var Tape::reshape(Var a, std::size_t rows, std::size_t cols) {
  check_same_tape(a, "reshape");
  const Tensor& av = a.value();
  if (av.numel() != rows * cols) {
    throw Error::runtime("reshape: " + av.shape_string() + " cannot become " +
                         std::to_string(rows) + "x" + std::to_string(cols));
  }
  Tensor out(rows, cols, av.values());
  std::size_t ia = a.id();
  return make("reshape", std::move(out), {ia}, [ia](Tape& t, const Node& n) {
    const Tensor& orig = t.nodes_[ia].value;
    t.add_grad(ia, Tensor(orig.rows(), orig.cols(), n.grad.values()));
  });
}

Var Tape::sum(Var a) {
  check_same_tape(a, "sum");
  double acc = 0.0;
  const Tensor& av = a.value();
  for (std::size_t i = 0; i < av.numel(); ++i) acc += av[i];
  std::size_t ia = a.id();
  return make("sum", Tensor::scalar(acc), {ia}, [ia](Tape& t, const Node& n) {
    double g = n.grad.item();
    Tensor d(t.nodes_[ia].value.rows(), t.nodes_[ia].value.cols());
    d.fill(g);
    t.add_grad(ia, d);
  });
}

Var Tape::mean(Var a) {
  check_same_tape(a, "mean");
  const Tensor& av = a.value();
  if (av.numel() == 0) throw Error::runtime("mean: empty tensor");
  double acc = 0.0;
  for (std::size_t i = 0; i < av.numel(); ++i) acc += av[i];
  double inv = 1.0 / static_cast<double>(av.numel());
  std::size_t ia = a.id();
  return make("mean", Tensor::scalar(acc * inv), {ia}, [ia, inv](Tape& t, const Node& n) {
    double g = n.grad.item() * inv;
    Tensor d(t.nodes_[ia].value.rows(), t.nodes_[ia].value.cols());
    d.fill(g);
    t.add_grad(ia, d);
  });
}

Var Tape::mean_rows(Var a) {
  check_same_tape(a, "mean_rows");
  const Tensor& av = a.value();
  if (av.rows() == 0) throw Error::runtime("mean_rows: empty tensor");
  double inv = 1.0 / static_cast<double>(av.rows());
  Tensor out(1, av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < av.cols(); ++c) out.at(0, c) += av.at(r, c) * inv;
  std::size_t ia = a.id();
  return make("mean_rows", std::move(out), {ia}, [ia, inv](Tape& t, const Node& n) {
    Tensor d(t.nodes_[ia].value.rows(), t.nodes_[ia].value.cols());
    for (std::size_t r = 0; r < d.rows(); ++r)
      for (std::size_t c = 0; c < d.cols(); ++c) d.at(r, c) = n.grad.at(0, c) * inv;
    t.add_grad(ia, d);
  });
}

Var Tape::nll_logits(Var logits, std::vector<int> labels) {
  check_same_tape(logits, "nll_logits");
  const Tensor& lv = logits.value();
  if (labels.size() != lv.rows()) {
    throw Error::runtime("nll_logits: " + std::to_string(labels.size()) + " labels for " +
                         lv.shape_string() + " logits");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= lv.cols()) {
      throw Error::runtime("nll_logits: label " + std::to_string(y) + " outside [0, " +
                           std::to_string(lv.cols()) + ")");
    }
  }
  Tensor out(lv.rows(), 1);
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    double mx = lv.at(r, 0);
    for (std::size_t c = 1; c < lv.cols(); ++c) mx = std::max(mx, lv.at(r, c));
    double acc = 0.0;
    for (std::size_t c = 0; c < lv.cols(); ++c) acc += std::exp(lv.at(r, c) - mx);
    out.at(r, 0) = mx + std::log(acc) - lv.at(r, static_cast<std::size_t>(labels[r]));
  }
  std::size_t ia = logits.id();
  return make("nll_logits", std::move(out), {ia}, [ia, labels](Tape& t, const Node& n) {
    const Tensor& x = t.nodes_[ia].value;
    Tensor soft(x.rows(), x.cols());
    softmax_into(x, soft);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      double g = n.grad.at(r, 0);
      for (std::size_t c = 0; c < x.cols(); ++c) {
        double ind = (c == static_cast<std::size_t>(labels[r])) ? 1.0 : 0.0;
        soft.at(r, c) = g * (soft.at(r, c) - ind);
      }
    }
    t.add_grad(ia, soft);
  });
}

Var Tape::flip_gradient_sign(Var a) {
  check_same_tape(a, "flip_gradient_sign");
  Tensor out = a.value();
  std::size_t ia = a.id();
  return make("flip_gradient_sign", std::move(out), {ia}, [ia](Tape& t, const Node& n) {
    Tensor d = n.grad;
    for (std::size_t i = 0; i < d.numel(); ++i) d[i] = -d[i];
    t.add_grad(ia, d);
  });
}

void Tape::backward(Var loss) {
  check_same_tape(loss, "backward");
  const Node& root = nodes_[loss.id()];
  if (root.value.numel() != 1) {
    throw Error::runtime("backward: loss must be a scalar, got " + root.value.shape_string());
  }
  if (!root.requires_grad) return;  // constant graph; leaf grads stay as they are

  // Mark ancestors of the loss.
  std::vector<char> reachable(nodes_.size(), 0);
  std::vector<std::size_t> stack = {loss.id()};
  reachable[loss.id()] = 1;
  while (!stack.empty()) {
    std::size_t id = stack.back();
    stack.pop_back();
    for (std::size_t p : nodes_[id].parents) {
      if (!reachable[p] && nodes_[p].requires_grad) {
        reachable[p] = 1;
        stack.push_back(p);
      }
    }
  }

  // Intermediate grads are scratch for this pass; leaf grads accumulate
  // across passes until zero_grad().
  for (std::size_t id = 0; id <= loss.id(); ++id) {
    if (reachable[id] && !nodes_[id].is_leaf) nodes_[id].grad.fill(0.0);
  }
  if (nodes_[loss.id()].is_leaf) {
    nodes_[loss.id()].grad[0] += 1.0;
    return;
  }
  nodes_[loss.id()].grad[0] = 1.0;

  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    const Node& n = nodes_[i];
    if (!reachable[i] || n.is_leaf) continue;
    n.backward_fn(*this, n);
  }
}

void Tape::zero_grad() {
  for (Node& n : nodes_) {
    if (n.requires_grad) n.grad.fill(0.0);
  }
}

double gradcheck(const GraphBuilder& build, const Tensor& point, double step) {
  if (!(step > 1e-8 && step < 1e-2)) {
    throw Error::config("gradcheck: step " + format_double(step) + " outside (1e-8, 1e-2)");
  }
  if (!point.all_finite()) throw Error::runtime("gradcheck: non-finite point");

  Tensor analytic;
  {
    Tape tape;
    Var leaf = tape.param(point);
    Var loss = build(tape, leaf);
    if (loss.value().numel() != 1) {
      throw Error::runtime("gradcheck: builder produced a non-scalar loss");
    }
    tape.backward(loss);
    analytic = leaf.grad();
  }

  auto eval_at = [&](const Tensor& p) {
    Tape tape;
    Var leaf = tape.input(p);
    return build(tape, leaf).value().item();
  };

  double max_rel = 0.0;
  for (std::size_t i = 0; i < point.numel(); ++i) {
    Tensor plus = point, minus = point;
    plus[i] += step;
    minus[i] -= step;
    double numeric = (eval_at(plus) - eval_at(minus)) / (2.0 * step);
    double a = analytic[i];
    if (!std::isfinite(a) || !std::isfinite(numeric)) {
      throw Error::runtime("gradcheck: non-finite gradient at coordinate " + std::to_string(i));
    }
    double rel = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace pctl
