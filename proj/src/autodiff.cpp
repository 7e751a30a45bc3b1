// Copyright 2026 The adgen Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "adgen/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace adgen {

const Matrix& Var::value() const { return tape_->Value(id_); }

Var Tape::Constant(Matrix value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::Param(const Matrix& external) {
  if (auto it = params_.find(&external); it != params_.end()) return Var(this, it->second);
  Node node;
  node.external = &external;
  node.needs_grad = record_;
  nodes_.push_back(std::move(node));
  const int id = static_cast<int>(nodes_.size() - 1);
  params_.emplace(&external, id);
  return Var(this, id);
}

Var Tape::Emit(Matrix value, std::span<const Var> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  if (record_) {
    for (const Var& in : inputs) {
      if (in.tape() != this) throw std::invalid_argument("Tape::Emit: input from another tape");
      if (NeedsGrad(in.id())) node.needs_grad = true;
    }
    if (node.needs_grad) node.backward = std::move(backward);
  }
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

const Matrix& Tape::Value(int id) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  return n.external != nullptr ? *n.external : n.value;
}

void Tape::Accumulate(int id, const Matrix& grad) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.needs_grad || grad.empty()) return;
  if (!n.has_grad) {
    n.grad = grad;
    n.has_grad = true;
  } else {
    n.grad.AddInPlace(grad);
  }
}

void Tape::Backward(Var scalar) {
  if (!record_) throw std::logic_error("Tape::Backward on a non-recording tape");
  const Matrix& v = scalar.value();
  if (v.rows() != 1 || v.cols() != 1) throw std::invalid_argument("Backward: output not scalar");
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad = Matrix();
  }
  Accumulate(scalar.id(), Matrix(1, 1, 1.0));
  for (int id = scalar.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.has_grad && n.backward) n.backward(n.grad, *this);
  }
}

const Matrix* Tape::GradOf(const Matrix& external) const {
  auto it = params_.find(&external);
  if (it == params_.end()) return nullptr;
  const Node& n = nodes_[static_cast<std::size_t>(it->second)];
  return n.has_grad ? &n.grad : nullptr;
}

const Matrix* Tape::GradOf(Var v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.id())];
  return n.has_grad ? &n.grad : nullptr;
}

namespace ad {
namespace {

Tape& TapeOf(Var v) {
  if (!v.valid()) throw std::invalid_argument("autodiff: uninitialized Var");
  return *v.tape();
}

}  // namespace

Var MatMul(Var a, Var b) {
  Tape& t = TapeOf(a);
  const Var in[] = {a, b};
  return t.Emit(adgen::MatMul(a.value(), b.value()), in, [a, b](const Matrix& g, Tape& tape) {
    if (tape.NeedsGrad(a.id())) tape.Accumulate(a, MatMulTransB(g, b.value()));
    if (tape.NeedsGrad(b.id())) tape.Accumulate(b, MatMulTransA(a.value(), g));
  });
}

Var Add(Var a, Var b) {
  Tape& t = TapeOf(a);
  const Var in[] = {a, b};
  return t.Emit(adgen::Add(a.value(), b.value()), in, [a, b](const Matrix& g, Tape& tape) {
    tape.Accumulate(a, g);
    tape.Accumulate(b, g);
  });
}

Var AddBias(Var a, Var bias) {
  Tape& t = TapeOf(a);
  const Var in[] = {a, bias};
  return t.Emit(AddRowBroadcast(a.value(), bias.value()), in,
                [a, bias](const Matrix& g, Tape& tape) {
                  tape.Accumulate(a, g);
                  if (tape.NeedsGrad(bias.id())) {
                    Matrix gb(1, g.cols());
                    for (std::size_t i = 0; i < g.rows(); ++i) {
                      for (std::size_t j = 0; j < g.cols(); ++j) gb(0, j) += g(i, j);
                    }
                    tape.Accumulate(bias, gb);
                  }
                });
}

Var Hadamard(Var a, Var b) {
  Tape& t = TapeOf(a);
  const Var in[] = {a, b};
  return t.Emit(adgen::Hadamard(a.value(), b.value()), in, [a, b](const Matrix& g, Tape& tape) {
    if (tape.NeedsGrad(a.id())) tape.Accumulate(a, adgen::Hadamard(g, b.value()));
    if (tape.NeedsGrad(b.id())) tape.Accumulate(b, adgen::Hadamard(g, a.value()));
  });
}

Var Scale(Var a, double s) {
  Tape& t = TapeOf(a);
  Matrix out = a.value();
  for (double& v : out.data()) v *= s;
  const Var in[] = {a};
  return t.Emit(std::move(out), in, [a, s](const Matrix& g, Tape& tape) {
    Matrix ga = g;
    for (double& v : ga.data()) v *= s;
    tape.Accumulate(a, ga);
  });
}

Var LayerNorm(Var x, Var gamma, Var beta) {
  Tape& t = TapeOf(x);
  const Var in[] = {x, gamma, beta};
  return t.Emit(
      adgen::LayerNorm(x.value(), gamma.value(), beta.value()), in,
      [x, gamma, beta](const Matrix& g, Tape& tape) {
        const Matrix& xv = x.value();
        const Matrix& gv = gamma.value();
        const std::size_t d = xv.cols();
        const auto dd = static_cast<double>(d);
        Matrix gx(xv.rows(), d);
        Matrix gg(1, d);
        Matrix gbeta(1, d);
        std::vector<double> xhat(d);
        std::vector<double> dxhat(d);
        for (std::size_t i = 0; i < xv.rows(); ++i) {
          auto in = xv.row(i);
          double mean = 0.0;
          for (double v : in) mean += v;
          mean /= dd;
          double var = 0.0;
          for (double v : in) var += (v - mean) * (v - mean);
          var /= dd;
          const double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
          double sum_dxhat = 0.0;
          double sum_dxhat_xhat = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            xhat[j] = (in[j] - mean) * inv_std;
            dxhat[j] = g(i, j) * gv(0, j);
            gg(0, j) += g(i, j) * xhat[j];
            gbeta(0, j) += g(i, j);
            sum_dxhat += dxhat[j];
            sum_dxhat_xhat += dxhat[j] * xhat[j];
          }
          for (std::size_t j = 0; j < d; ++j) {
            gx(i, j) = inv_std / dd * (dd * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat);
          }
        }
        tape.Accumulate(x, gx);
        tape.Accumulate(gamma, gg);
        tape.Accumulate(beta, gbeta);
      });
}

Var Gelu(Var x) {
  Tape& t = TapeOf(x);
  const Var in[] = {x};
  return t.Emit(adgen::Gelu(x.value()), in, [x](const Matrix& g, Tape& tape) {
    Matrix gx = g;
    auto xv = x.value().data();
    auto gd = gx.data();
    for (std::size_t i = 0; i < gd.size(); ++i) gd[i] *= GeluDerivative(xv[i]);
    tape.Accumulate(x, gx);
  });
}

Var ConcatCols(Var a, Var b) {
  Tape& t = TapeOf(a);
  const Var in[] = {a, b};
  return t.Emit(adgen::ConcatCols(a.value(), b.value()), in, [a, b](const Matrix& g, Tape& tape) {
    const std::size_t ca = a.value().cols();
    const std::size_t cb = b.value().cols();
    Matrix ga(g.rows(), ca);
    Matrix gb(g.rows(), cb);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      for (std::size_t j = 0; j < ca; ++j) ga(i, j) = g(i, j);
      for (std::size_t j = 0; j < cb; ++j) gb(i, j) = g(i, ca + j);
    }
    tape.Accumulate(a, ga);
    tape.Accumulate(b, gb);
  });
}

Var SliceRows(Var a, std::size_t begin, std::size_t count) {
  Tape& t = TapeOf(a);
  const Var in[] = {a};
  return t.Emit(adgen::SliceRows(a.value(), begin, count), in,
                [a, begin](const Matrix& g, Tape& tape) {
                  Matrix ga(a.value().rows(), a.value().cols());
                  for (std::size_t i = 0; i < g.rows(); ++i) {
                    for (std::size_t j = 0; j < g.cols(); ++j) ga(begin + i, j) = g(i, j);
                  }
                  tape.Accumulate(a, ga);
                });
}

Var StackRows(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("StackRows: no parts");
  Tape& t = TapeOf(parts.front());
  std::vector<const Matrix*> mats;
  mats.reserve(parts.size());
  for (const Var& p : parts) mats.push_back(&p.value());
  std::vector<Var> saved(parts.begin(), parts.end());
  return t.Emit(adgen::StackRows(mats), parts, [saved](const Matrix& g, Tape& tape) {
    std::size_t r = 0;
    for (const Var& p : saved) {
      const std::size_t n = p.value().rows();
      if (tape.NeedsGrad(p.id())) tape.Accumulate(p, adgen::SliceRows(g, r, n));
      r += n;
    }
  });
}

Var Attention(Var queries, Var keys, Var values, bool causal) {
  Tape& t = TapeOf(queries);
  const Matrix& q = queries.value();
  const Matrix& k = keys.value();
  const Matrix& v = values.value();
  if (q.cols() != k.cols() || k.rows() != v.rows()) {
    throw std::invalid_argument("Attention: shape mismatch");
  }
  if (causal && k.rows() < q.rows()) {
    throw std::invalid_argument("Attention: causal attention needs a key per query");
  }
  Matrix out(q.rows(), v.cols());
  Matrix weights(q.rows(), k.rows());
  for (std::size_t i = 0; i < q.rows(); ++i) {
    const std::size_t n = causal ? i + 1 : k.rows();
    AttendRow(q.row(i), k, v, n, weights.row(i).first(n), out.row(i));
  }
  const Var in[] = {queries, keys, values};
  return t.Emit(
      std::move(out), in,
      [queries, keys, values, causal, weights = std::move(weights)](const Matrix& g, Tape& tape) {
        const Matrix& qv = queries.value();
        const Matrix& kv = keys.value();
        const Matrix& vv = values.value();
        const double scale = 1.0 / std::sqrt(static_cast<double>(qv.cols()));
        Matrix gq(qv.rows(), qv.cols());
        Matrix gk(kv.rows(), kv.cols());
        Matrix gv(vv.rows(), vv.cols());
        std::vector<double> dw(kv.rows());
        for (std::size_t i = 0; i < qv.rows(); ++i) {
          const std::size_t n = causal ? i + 1 : kv.rows();
          auto gi = g.row(i);
          double inner = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            dw[j] = Dot(gi, vv.row(j));
            inner += weights(i, j) * dw[j];
            auto gvj = gv.row(j);
            for (std::size_t c = 0; c < gvj.size(); ++c) gvj[c] += weights(i, j) * gi[c];
          }
          for (std::size_t j = 0; j < n; ++j) {
            const double ds = weights(i, j) * (dw[j] - inner) * scale;
            auto gqi = gq.row(i);
            auto gkj = gk.row(j);
            auto qi = qv.row(i);
            auto kj = kv.row(j);
            for (std::size_t c = 0; c < gqi.size(); ++c) {
              gqi[c] += ds * kj[c];
              gkj[c] += ds * qi[c];
            }
          }
        }
        tape.Accumulate(queries, gq);
        tape.Accumulate(keys, gk);
        tape.Accumulate(values, gv);
      });
}

Var LogSoftmaxRows(Var logits) {
  Tape& t = TapeOf(logits);
  Matrix out = adgen::LogSoftmaxRows(logits.value());
  const Var in[] = {logits};
  Matrix probs = out;
  for (double& v : probs.data()) v = std::exp(v);
  return t.Emit(std::move(out), in, [logits, probs = std::move(probs)](const Matrix& g, Tape& tape) {
    Matrix gx(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.rows(); ++i) {
      double s = 0.0;
      for (double v : g.row(i)) s += v;
      for (std::size_t j = 0; j < g.cols(); ++j) gx(i, j) = g(i, j) - probs(i, j) * s;
    }
    tape.Accumulate(logits, gx);
  });
}

Var Pick(Var x, std::size_t r, std::size_t c) {
  Tape& t = TapeOf(x);
  const Var in[] = {x};
  return t.Emit(Matrix(1, 1, x.value()(r, c)), in, [x, r, c](const Matrix& g, Tape& tape) {
    Matrix gx(x.value().rows(), x.value().cols());
    gx(r, c) = g(0, 0);
    tape.Accumulate(x, gx);
  });
}

Var WeightedSum(std::span<const Var> scalars, std::span<const double> weights) {
  if (scalars.empty()) throw std::invalid_argument("WeightedSum: no terms");
  if (scalars.size() != weights.size()) throw std::invalid_argument("WeightedSum: size mismatch");
  Tape& t = TapeOf(scalars.front());
  double total = 0.0;
  for (std::size_t i = 0; i < scalars.size(); ++i) total += weights[i] * scalars[i].scalar();
  std::vector<Var> saved(scalars.begin(), scalars.end());
  std::vector<double> w(weights.begin(), weights.end());
  return t.Emit(Matrix(1, 1, total), scalars, [saved, w](const Matrix& g, Tape& tape) {
    for (std::size_t i = 0; i < saved.size(); ++i) {
      tape.Accumulate(saved[i], Matrix(1, 1, w[i] * g(0, 0)));
    }
  });
}

Var Sum(std::span<const Var> scalars) {
  std::vector<double> ones(scalars.size(), 1.0);
  return WeightedSum(scalars, ones);
}

Var Custom(std::span<const Var> inputs, Matrix value,
           std::function<std::vector<Matrix>(const Matrix& out_grad)> vjp) {
  if (inputs.empty()) throw std::invalid_argument("Custom: no inputs");
  Tape& t = TapeOf(inputs.front());
  std::vector<Var> saved(inputs.begin(), inputs.end());
  return t.Emit(std::move(value), inputs,
                [saved, vjp = std::move(vjp)](const Matrix& g, Tape& tape) {
                  std::vector<Matrix> grads = vjp(g);
                  for (std::size_t i = 0; i < saved.size() && i < grads.size(); ++i) {
                    tape.Accumulate(saved[i], grads[i]);
                  }
                });
}

}  // namespace ad
}  // namespace adgen
