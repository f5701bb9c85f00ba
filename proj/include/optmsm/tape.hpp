// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "optmsm/errors.hpp"
#include "optmsm/params.hpp"
#include "optmsm/tensor.hpp"

namespace optmsm {

using NodeId = int;

/// Define-by-run reverse-mode differentiation tape.
///
/// Every forward primitive appends one node holding its output value, a
/// zero-initialized gradient accumulator, and a backward closure. The tape is
/// rebuilt for every forward pass; backward() walks nodes in exact reverse
/// creation order, so gradient accumulation order is fixed and results are
/// bitwise deterministic for a fixed op sequence.
///
/// Nodes whose gradient was never written are skipped during the sweep, which
/// both saves work and guarantees that parameters unreachable from the loss
/// keep an exactly-zero gradient.
class Tape {
 public:
  struct Node {
    Tensor val;
    Tensor grad;
    bool touched = false;
    std::function<void(Tape&)> back;  // empty for leaves
  };

  static constexpr double kCosineEps = 1e-12;
  static constexpr double kBceClamp = 1e-12;

  const Tensor& val(NodeId id) const { return nodes_[id].val; }
  const Tensor& grad(NodeId id) const { return nodes_[id].grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Constant / input leaf.
  NodeId leaf(Tensor t) {
    Node n;
    n.grad = Tensor::zeros(t.rows, t.cols);
    n.val = std::move(t);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size()) - 1;
  }

  /// Leaf bound to a named parameter; backward() flushes its gradient into
  /// the store's slot.
  NodeId param(ParameterStore& store, const std::string& name) {
    const NodeId id = leaf(store.value(name));
    bindings_.push_back({id, &store, name});
    return id;
  }

  // ---------------------------------------------------------------- matmul

  NodeId matmul(NodeId a, NodeId b) {
    const Tensor& A = nodes_[a].val;
    const Tensor& B = nodes_[b].val;
    if (A.cols != B.rows) {
      throw ShapeError("matmul: inner dimensions disagree " + A.shape_str() + " vs " +
                       B.shape_str());
    }
    Tensor out(A.rows, B.cols);
    for (int i = 0; i < A.rows; ++i) {
      const double* arow = A.row_ptr(i);
      double* orow = out.row_ptr(i);
      for (int k = 0; k < A.cols; ++k) {
        const double aik = arow[k];
        if (aik == 0.0) continue;
        const double* brow = B.row_ptr(k);
        for (int j = 0; j < B.cols; ++j) orow[j] += aik * brow[j];
      }
    }
    return make(std::move(out), [a, b](Tape& t) {
      Node& n = t.nodes_[t.cursor_];
      const Tensor& A = t.nodes_[a].val;
      const Tensor& B = t.nodes_[b].val;
      const Tensor& G = n.grad;
      // dA += G * B^T
      Tensor& dA = t.touch(a);
      for (int i = 0; i < A.rows; ++i) {
        const double* grow = G.row_ptr(i);
        double* darow = dA.row_ptr(i);
        for (int k = 0; k < A.cols; ++k) {
          const double* brow = B.row_ptr(k);
          double s = 0.0;
          for (int j = 0; j < B.cols; ++j) s += grow[j] * brow[j];
          darow[k] += s;
        }
      }
      // dB += A^T * G
      Tensor& dB = t.touch(b);
      for (int k = 0; k < A.cols; ++k) {
        double* dbrow = dB.row_ptr(k);
        for (int i = 0; i < A.rows; ++i) {
          const double aik = A.at(i, k);
          if (aik == 0.0) continue;
          const double* grow = G.row_ptr(i);
          for (int j = 0; j < B.cols; ++j) dbrow[j] += aik * grow[j];
        }
      }
    });
  }

  // ----------------------------------------------------------- elementwise

  NodeId add(NodeId a, NodeId b) {
    const Tensor& A = nodes_[a].val;
    const Tensor& B = nodes_[b].val;
    require_same_shape(A, B, "add");
    Tensor out = A;
    for (int i = 0; i < out.numel(); ++i) out.v[i] += B.v[i];
    return make(std::move(out), [a, b](Tape& t) {
      const Tensor& G = t.nodes_[t.cursor_].grad;
      Tensor& dA = t.touch(a);
      for (int i = 0; i < G.numel(); ++i) dA.v[i] += G.v[i];
      Tensor& dB = t.touch(b);
      for (int i = 0; i < G.numel(); ++i) dB.v[i] += G.v[i];
    });
  }

  NodeId sub(NodeId a, NodeId b) {
    const Tensor& A = nodes_[a].val;
    const Tensor& B = nodes_[b].val;
    require_same_shape(A, B, "sub");
    Tensor out = A;
    for (int i = 0; i < out.numel(); ++i) out.v[i] -= B.v[i];
    return make(std::move(out), [a, b](Tape& t) {
      const Tensor& G = t.nodes_[t.cursor_].grad;
      Tensor& dA = t.touch(a);
      for (int i = 0; i < G.numel(); ++i) dA.v[i] += G.v[i];
      Tensor& dB = t.touch(b);
      for (int i = 0; i < G.numel(); ++i) dB.v[i] -= G.v[i];
    });
  }

  NodeId mul(NodeId a, NodeId b) {
    const Tensor& A = nodes_[a].val;
    const Tensor& B = nodes_[b].val;
    require_same_shape(A, B, "mul");
    Tensor out = A;
    for (int i = 0; i < out.numel(); ++i) out.v[i] *= B.v[i];
    return make(std::move(out), [a, b](Tape& t) {
      const Tensor& G = t.nodes_[t.cursor_].grad;
      const Tensor& A = t.nodes_[a].val;
      const Tensor& B = t.nodes_[b].val;
      Tensor& dA = t.touch(a);
      for (int i = 0; i < G.numel(); ++i) dA.v[i] += G.v[i] * B.v[i];
      Tensor& dB = t.touch(b);
      for (int i = 0; i < G.numel(); ++i) dB.v[i] += G.v[i] * A.v[i];
    });
  }

  /// Multiply by a compile-time-known scalar. A zero factor cuts the edge:
  /// nothing is propagated, so the operand subtree keeps exactly-zero
  /// gradients and is skipped by the backward sweep.
  NodeId scale(NodeId a, double c) {
    Tensor out = nodes_[a].val;
    for (double& e : out.v) e *= c;
    return make(std::move(out), [a, c](Tape& t) {
      if (c == 0.0) return;
      const Tensor& G = t.nodes_[t.cursor_].grad;
      Tensor& dA = t.touch(a);
      for (int i = 0; i < G.numel(); ++i) dA.v[i] += c * G.v[i];
    });
  }

  /// Multiply a tensor by a 1x1 node (both differentiable).
  NodeId scale_by(NodeId a, NodeId s) {
    if (nodes_[s].val.numel() != 1)
      throw ShapeError("scale_by: scale must be 1x1, got " + nodes_[s].val.shape_str());
    const double c = nodes_[s].val.v[0];
    Tensor out = nodes_[a].val;
    for (double& e : out.v) e *= c;
    return make(std::move(out), [a, s](Tape& t) {
      const Tensor& G = t.nodes_[t.cursor_].grad;
      const Tensor& A = t.nodes_[a].val;
      const double c = t.nodes_[s].val.v[0];
      Tensor& dA = t.touch(a);
      for (int i = 0; i < G.numel(); ++i) dA.v[i] += c * G.v[i];
      double ds = 0.0;
      for (int i = 0; i < G.numel(); ++i) ds += G.v[i] * A.v[i];
      t.touch(s).v[0] += ds;
    });
  }

  NodeId relu(NodeId a) {
    Tensor out = nodes_[a].val;
    for (double& e : out.v) e = e > 0.0 ? e : 0.0;
    return make(std::move(out), [a](Tape& t) {
      const Tensor& G = t.nodes_[t.cursor_].grad;
      const Tensor& A = t.nodes_[a].val;
      Tensor& dA = t.touch(a);
      for (int i = 0; i < G.numel(); ++i) dA.v[i] += A.v[i] > 0.0 ? G.v[i] : 0.0;
    });
  }

  NodeId sigmoid(NodeId a) {
    Tensor out = nodes_[a].val;
    for (double& e : out.v) e = sigmoid_scalar(e);
    return make(std::move(out), [a](Tape& t) {
      Node& n = t.nodes_[t.cursor_];
      const Tensor& G = n.grad;
      const Tensor& Y = n.val;
      Tensor& dA = t.touch(a);
      for (int i = 0; i < G.numel(); ++i) dA.v[i] += G.v[i] * Y.v[i] * (1.0 - Y.v[i]);
    });
  }

  static double sigmoid_scalar(double x) {
    if (x >= 0.0) {
      const double z = std::exp(-x);
      return 1.0 / (1.0 + z);
    }
    const double z = std::exp(x);
    return z / (1.0 + z);
  }

  // ------------------------------------------------------- shape movement

  /// Concatenate along axis (0 = stack rows, 1 = widen columns).
  NodeId concat(const std::vector<NodeId>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no operands");
    if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
    const Tensor& first = nodes_[parts[0]].val;
    int total = 0;
    for (NodeId p : parts) {
      const Tensor& t = nodes_[p].val;
      const int fixed = axis == 0 ? t.cols : t.rows;
      const int fixed0 = axis == 0 ? first.cols : first.rows;
      if (fixed != fixed0) {
        throw ShapeError("concat: incompatible shapes " + first.shape_str() + " vs " +
                         t.shape_str());
      }
      total += axis == 0 ? t.rows : t.cols;
    }
    Tensor out = axis == 0 ? Tensor(total, first.cols) : Tensor(first.rows, total);
    int offset = 0;
    for (NodeId p : parts) {
      const Tensor& t = nodes_[p].val;
      if (axis == 0) {
        std::copy(t.v.begin(), t.v.end(), out.v.begin() + static_cast<std::size_t>(offset) * out.cols);
        offset += t.rows;
      } else {
        for (int r = 0; r < t.rows; ++r)
          std::copy(t.row_ptr(r), t.row_ptr(r) + t.cols, out.row_ptr(r) + offset);
        offset += t.cols;
      }
    }
    auto ids = std::make_shared<std::vector<NodeId>>(parts);
    return make(std::move(out), [ids, axis](Tape& t) {
      const Tensor& G = t.nodes_[t.cursor_].grad;
      int offset = 0;
      for (NodeId p : *ids) {
        Tensor& dP = t.touch(p);
        if (axis == 0) {
          for (int i = 0; i < dP.numel(); ++i)
            dP.v[i] += G.v[static_cast<std::size_t>(offset) * G.cols + i];
          offset += dP.rows;
        } else {
          for (int r = 0; r < dP.rows; ++r) {
            const double* grow = G.row_ptr(r) + offset;
            double* drow = dP.row_ptr(r);
            for (int c = 0; c < dP.cols; ++c) drow[c] += grow[c];
          }
          offset += dP.cols;
        }
      }
    });
  }

  /// Columns [c0, c0+len) of a.
  NodeId slice_cols(NodeId a, int c0, int len) {
    const Tensor& A = nodes_[a].val;
    if (c0 < 0 || len < 1 || c0 + len > A.cols)
      throw ShapeError("slice_cols: [" + std::to_string(c0) + ", " + std::to_string(c0 + len) +
                       ") out of " + A.shape_str());
    Tensor out(A.rows, len);
    for (int r = 0; r < A.rows; ++r)
      std::copy(A.row_ptr(r) + c0, A.row_ptr(r) + c0 + len, out.row_ptr(r));
    return make(std::move(out), [a, c0, len](Tape& t) {
      const Tensor& G = t.nodes_[t.cursor_].grad;
      Tensor& dA = t.touch(a);
      for (int r = 0; r < G.rows; ++r) {
        const double* grow = G.row_ptr(r);
        double* drow = dA.row_ptr(r) + c0;
        for (int c = 0; c < len; ++c) drow[c] += grow[c];
      }
    });
  }

  /// out(i, :) = a(indices[i], :). Rows may repeat; backward accumulates.
  NodeId gather_rows(NodeId a, std::vector<int> indices) {
    const Tensor& A = nodes_[a].val;
    for (int idx : indices) {
      if (idx < 0 || idx >= A.rows)
        throw ShapeError("gather_rows: index " + std::to_string(idx) + " out of " + A.shape_str());
    }
    Tensor out(static_cast<int>(indices.size()), A.cols);
    for (std::size_t i = 0; i < indices.size(); ++i)
      std::copy(A.row_ptr(indices[i]), A.row_ptr(indices[i]) + A.cols,
                out.row_ptr(static_cast<int>(i)));
    auto idx = std::make_shared<std::vector<int>>(std::move(indices));
    return make(std::move(out), [a, idx](Tape& t) {
      const Tensor& G = t.nodes_[t.cursor_].grad;
      Tensor& dA = t.touch(a);
      for (std::size_t i = 0; i < idx->size(); ++i) {
        const double* grow = G.row_ptr(static_cast<int>(i));
        double* drow = dA.row_ptr((*idx)[i]);
        for (int c = 0; c < G.cols; ++c) drow[c] += grow[c];
      }
    });
  }

  /// Inverse of gather for distinct indices: out has out_rows rows, row
  /// indices[i] holds a's row i, all other rows are zero.
  NodeId scatter_rows(NodeId a, std::vector<int> indices, int out_rows) {
    const Tensor& A = nodes_[a].val;
    if (static_cast<int>(indices.size()) != A.rows)
      throw ShapeError("scatter_rows: index count " + std::to_string(indices.size()) +
                       " vs rows of " + A.shape_str());
    for (int idx : indices) {
      if (idx < 0 || idx >= out_rows)
        throw ShapeError("scatter_rows: index " + std::to_string(idx) + " out of " +
                         std::to_string(out_rows) + " rows");
    }
    Tensor out(out_rows, A.cols);
    for (std::size_t i = 0; i < indices.size(); ++i)
      std::copy(A.row_ptr(static_cast<int>(i)), A.row_ptr(static_cast<int>(i)) + A.cols,
                out.row_ptr(indices[i]));
    auto idx = std::make_shared<std::vector<int>>(std::move(indices));
    return make(std::move(out), [a, idx](Tape& t) {
      const Tensor& G = t.nodes_[t.cursor_].grad;
      Tensor& dA = t.touch(a);
      for (std::size_t i = 0; i < idx->size(); ++i) {
        const double* grow = G.row_ptr((*idx)[i]);
        double* drow = dA.row_ptr(static_cast<int>(i));
        for (int c = 0; c < G.cols; ++c) drow[c] += grow[c];
      }
    });
  }

  /// (r x c) + broadcast (1 x c).
  NodeId add_rowvec(NodeId mat, NodeId vec) {
    const Tensor& A = nodes_[mat].val;
    const Tensor& B = nodes_[vec].val;
    if (B.rows != 1 || B.cols != A.cols)
      throw ShapeError("add_rowvec: " + A.shape_str() + " vs " + B.shape_str());
    Tensor out = A;
    for (int r = 0; r < out.rows; ++r) {
      double* orow = out.row_ptr(r);
      for (int c = 0; c < out.cols; ++c) orow[c] += B.v[c];
    }
    return make(std::move(out), [mat, vec](Tape& t) {
      const Tensor& G = t.nodes_[t.cursor_].grad;
      Tensor& dA = t.touch(mat);
      for (int i = 0; i < G.numel(); ++i) dA.v[i] += G.v[i];
      Tensor& dB = t.touch(vec);
      for (int r = 0; r < G.rows; ++r) {
        const double* grow = G.row_ptr(r);
        for (int c = 0; c < G.cols; ++c) dB.v[c] += grow[c];
      }
    });
  }

  /// Row-wise scale: (r x c) * broadcast (r x 1).
  NodeId mul_colvec(NodeId mat, NodeId col) {
    const Tensor& A = nodes_[mat].val;
    const Tensor& B = nodes_[col].val;
    if (B.cols != 1 || B.rows != A.rows)
      throw ShapeError("mul_colvec: " + A.shape_str() + " vs " + B.shape_str());
    Tensor out = A;
    for (int r = 0; r < out.rows; ++r) {
      const double s = B.v[r];
      double* orow = out.row_ptr(r);
      for (int c = 0; c < out.cols; ++c) orow[c] *= s;
    }
    return make(std::move(out), [mat, col](Tape& t) {
      const Tensor& G = t.nodes_[t.cursor_].grad;
      const Tensor& A = t.nodes_[mat].val;
      const Tensor& B = t.nodes_[col].val;
      Tensor& dA = t.touch(mat);
      Tensor& dB = t.touch(col);
      for (int r = 0; r < G.rows; ++r) {
        const double* grow = G.row_ptr(r);
        const double* arow = A.row_ptr(r);
        double* darow = dA.row_ptr(r);
        const double s = B.v[r];
        double ds = 0.0;
        for (int c = 0; c < G.cols; ++c) {
          darow[c] += grow[c] * s;
          ds += grow[c] * arow[c];
        }
        dB.v[r] += ds;
      }
    });
  }

  // ------------------------------------------------------------ reductions

  /// Arithmetic mean along axis, keeping the reduced axis as size 1.
  NodeId mean_axis(NodeId a, int axis) {
    const Tensor& A = nodes_[a].val;
    if (axis != 0 && axis != 1) throw ShapeError("mean_axis: axis must be 0 or 1");
    const int len = axis == 0 ? A.rows : A.cols;
    if (len == 0) throw ShapeError("mean_axis: empty axis in " + A.shape_str());
    Tensor out = axis == 0 ? Tensor(1, A.cols) : Tensor(A.rows, 1);
    if (axis == 0) {
      for (int r = 0; r < A.rows; ++r) {
        const double* arow = A.row_ptr(r);
        for (int c = 0; c < A.cols; ++c) out.v[c] += arow[c];
      }
    } else {
      for (int r = 0; r < A.rows; ++r) {
        const double* arow = A.row_ptr(r);
        double s = 0.0;
        for (int c = 0; c < A.cols; ++c) s += arow[c];
        out.v[r] = s;
      }
    }
    for (double& e : out.v) e /= len;
    return make(std::move(out), [a, axis, len](Tape& t) {
      const Tensor& G = t.nodes_[t.cursor_].grad;
      Tensor& dA = t.touch(a);
      const double inv = 1.0 / len;
      for (int r = 0; r < dA.rows; ++r) {
        double* drow = dA.row_ptr(r);
        for (int c = 0; c < dA.cols; ++c) drow[c] += inv * (axis == 0 ? G.v[c] : G.v[r]);
      }
    });
  }

  NodeId sum_all(NodeId a) {
    const Tensor& A = nodes_[a].val;
    double s = 0.0;
    for (double e : A.v) s += e;
    return make(Tensor::scalar(s), [a](Tape& t) {
      const double g = t.nodes_[t.cursor_].grad.v[0];
      Tensor& dA = t.touch(a);
      for (double& e : dA.v) e += g;
    });
  }

  // --------------------------------------------------------- vector geometry

  /// Row-wise L2 normalization. Rows with norm below eps map to zero rows and
  /// receive zero gradient, mirroring the epsilon guard of cosine().
  NodeId rownorm(NodeId a, double eps = kCosineEps) {
    const Tensor& A = nodes_[a].val;
    Tensor out(A.rows, A.cols);
    auto norms = std::make_shared<std::vector<double>>(A.rows, 0.0);
    for (int r = 0; r < A.rows; ++r) {
      const double* arow = A.row_ptr(r);
      double s = 0.0;
      for (int c = 0; c < A.cols; ++c) s += arow[c] * arow[c];
      const double n = std::sqrt(s);
      (*norms)[r] = n;
      if (n >= eps) {
        double* orow = out.row_ptr(r);
        for (int c = 0; c < A.cols; ++c) orow[c] = arow[c] / n;
      }
    }
    return make(std::move(out), [a, norms, eps](Tape& t) {
      Node& n = t.nodes_[t.cursor_];
      const Tensor& G = n.grad;
      const Tensor& Y = n.val;
      Tensor& dA = t.touch(a);
      for (int r = 0; r < G.rows; ++r) {
        const double nr = (*norms)[r];
        if (nr < eps) continue;
        const double* grow = G.row_ptr(r);
        const double* yrow = Y.row_ptr(r);
        double* drow = dA.row_ptr(r);
        double gy = 0.0;
        for (int c = 0; c < G.cols; ++c) gy += grow[c] * yrow[c];
        for (int c = 0; c < G.cols; ++c) drow[c] += (grow[c] - gy * yrow[c]) / nr;
      }
    });
  }

  /// Cosine similarity of two same-shape vectors -> 1x1. If either L2 norm is
  /// below eps the result is 0 with zero gradient.
  NodeId cosine(NodeId a, NodeId b, double eps = kCosineEps) {
    const Tensor& A = nodes_[a].val;
    const Tensor& B = nodes_[b].val;
    require_same_shape(A, B, "cosine");
    double dot = 0.0, na2 = 0.0, nb2 = 0.0;
    for (int i = 0; i < A.numel(); ++i) {
      dot += A.v[i] * B.v[i];
      na2 += A.v[i] * A.v[i];
      nb2 += B.v[i] * B.v[i];
    }
    const double na = std::sqrt(na2), nb = std::sqrt(nb2);
    const bool degenerate = na < eps || nb < eps;
    const double cosv = degenerate ? 0.0 : dot / (na * nb);
    return make(Tensor::scalar(cosv), [a, b, na, nb, cosv, degenerate](Tape& t) {
      if (degenerate) return;
      const double g = t.nodes_[t.cursor_].grad.v[0];
      const Tensor& A = t.nodes_[a].val;
      const Tensor& B = t.nodes_[b].val;
      Tensor& dA = t.touch(a);
      Tensor& dB = t.touch(b);
      const double inv = 1.0 / (na * nb);
      for (int i = 0; i < A.numel(); ++i) {
        dA.v[i] += g * (B.v[i] * inv - cosv * A.v[i] / (na * na));
        dB.v[i] += g * (A.v[i] * inv - cosv * B.v[i] / (nb * nb));
      }
    });
  }

  /// Fused hypernetwork gating: x ⊙ (2 * sigmoid(relu(ctx*w0 + b0) * w1 + b1)).
  /// This runs once per tower layer per scenario on every batch, so spelling
  /// it out as nine primitives keeps the allocator on the hot path; one node
  /// with a hand-derived backward does not. The gate matrix lives only inside
  /// the node. Gradients flow into all six operands; x and ctx may be the
  /// same node (layer 0 gates its own hypernetwork input).
  NodeId apply_two_layer_gate(NodeId x, NodeId ctx, NodeId w0, NodeId b0, NodeId w1, NodeId b1) {
    const Tensor& X = nodes_[x].val;
    const Tensor& C = nodes_[ctx].val;
    const Tensor& W0 = nodes_[w0].val;
    const Tensor& B0 = nodes_[b0].val;
    const Tensor& W1 = nodes_[w1].val;
    const Tensor& B1 = nodes_[b1].val;
    if (C.cols != W0.rows || B0.rows != 1 || B0.cols != W0.cols || W0.cols != W1.rows ||
        B1.rows != 1 || B1.cols != W1.cols || X.rows != C.rows || X.cols != W1.cols)
      throw ShapeError("apply_two_layer_gate: " + X.shape_str() + " gated from " + C.shape_str() +
                       " * " + W0.shape_str() + " + " + B0.shape_str() + ", then * " +
                       W1.shape_str() + " + " + B1.shape_str());
    auto hidden = std::make_shared<Tensor>(C.rows, W0.cols);
    Tensor& H = *hidden;
    for (int r = 0; r < C.rows; ++r) {
      const double* crow = C.row_ptr(r);
      double* hrow = H.row_ptr(r);
      for (int c = 0; c < H.cols; ++c) hrow[c] = B0.v[c];
      for (int k = 0; k < C.cols; ++k) {
        const double cv = crow[k];  // ctx is dense: no zero-skip, straight FMA
        const double* wrow = W0.row_ptr(k);
        for (int c = 0; c < H.cols; ++c) hrow[c] += cv * wrow[c];
      }
      for (int c = 0; c < H.cols; ++c) hrow[c] = hrow[c] > 0.0 ? hrow[c] : 0.0;
    }
    auto gate = std::make_shared<Tensor>(X.rows, X.cols);
    Tensor& Gt = *gate;
    Tensor out(X.rows, X.cols);
    for (int r = 0; r < X.rows; ++r) {
      const double* hrow = H.row_ptr(r);
      double* grow = Gt.row_ptr(r);
      for (int c = 0; c < Gt.cols; ++c) grow[c] = B1.v[c];
      for (int k = 0; k < H.cols; ++k) {
        const double hv = hrow[k];
        if (hv == 0.0) continue;
        const double* wrow = W1.row_ptr(k);
        for (int c = 0; c < Gt.cols; ++c) grow[c] += hv * wrow[c];
      }
      const double* xrow = X.row_ptr(r);
      double* orow = out.row_ptr(r);
      for (int c = 0; c < Gt.cols; ++c) {
        grow[c] = 2.0 * sigmoid_scalar(grow[c]);
        orow[c] = xrow[c] * grow[c];
      }
    }
    return make(std::move(out), [x, ctx, w0, b0, w1, b1, hidden, gate](Tape& t) {
      Node& n = t.nodes_[t.cursor_];
      const Tensor& G = n.grad;
      const Tensor& X = t.nodes_[x].val;
      const Tensor& C = t.nodes_[ctx].val;
      const Tensor& W0 = t.nodes_[w0].val;
      const Tensor& W1 = t.nodes_[w1].val;
      const Tensor& H = *hidden;
      const Tensor& Gt = *gate;
      // Direct path: d x += upstream ⊙ gate. Gate path: gradient at the
      // sigmoid pre-activation is upstream ⊙ x ⊙ g(1 - g/2).
      Tensor dz1(G.rows, G.cols);
      {
        Tensor& dX = t.touch(x);
        for (int i = 0; i < G.numel(); ++i) {
          const double gv = Gt.v[i];
          dX.v[i] += G.v[i] * gv;
          dz1.v[i] = G.v[i] * X.v[i] * gv * (1.0 - 0.5 * gv);
        }
      }
      Tensor& dB1 = t.touch(b1);
      for (int r = 0; r < dz1.rows; ++r) {
        const double* zrow = dz1.row_ptr(r);
        for (int c = 0; c < dz1.cols; ++c) dB1.v[c] += zrow[c];
      }
      Tensor& dW1 = t.touch(w1);
      for (int k = 0; k < H.cols; ++k) {
        double* wrow = dW1.row_ptr(k);
        for (int r = 0; r < H.rows; ++r) {
          const double hv = H.at(r, k);
          if (hv == 0.0) continue;
          const double* zrow = dz1.row_ptr(r);
          for (int c = 0; c < dz1.cols; ++c) wrow[c] += hv * zrow[c];
        }
      }
      Tensor dz0(H.rows, H.cols);  // gradient at the relu pre-activation
      for (int r = 0; r < H.rows; ++r) {
        const double* zrow = dz1.row_ptr(r);
        const double* hrow = H.row_ptr(r);
        double* drow = dz0.row_ptr(r);
        for (int k = 0; k < H.cols; ++k) {
          if (hrow[k] <= 0.0) continue;  // relu cut; dz0 starts zeroed
          const double* wrow = W1.row_ptr(k);
          double s = 0.0;
          for (int c = 0; c < dz1.cols; ++c) s += zrow[c] * wrow[c];
          drow[k] = s;
        }
      }
      Tensor& dB0 = t.touch(b0);
      for (int r = 0; r < dz0.rows; ++r) {
        const double* zrow = dz0.row_ptr(r);
        for (int c = 0; c < dz0.cols; ++c) dB0.v[c] += zrow[c];
      }
      // dz0 is relu-masked (roughly half its entries are zero), so both
      // remaining products skip on it and run contiguous ctx-width rows:
      // dW0 accumulates transposed, dC reads a transposed copy of W0.
      Tensor w0t(W0.cols, W0.rows);
      for (int k = 0; k < W0.rows; ++k)
        for (int c = 0; c < W0.cols; ++c) w0t.at(c, k) = W0.at(k, c);
      Tensor dw0t(W0.cols, W0.rows);
      Tensor& dC = t.touch(ctx);
      for (int r = 0; r < C.rows; ++r) {
        const double* zrow = dz0.row_ptr(r);
        const double* crow = C.row_ptr(r);
        double* grow = dC.row_ptr(r);
        for (int k = 0; k < dz0.cols; ++k) {
          const double zv = zrow[k];
          if (zv == 0.0) continue;
          double* wrow = dw0t.row_ptr(k);
          const double* trow = w0t.row_ptr(k);
          for (int c = 0; c < C.cols; ++c) {
            wrow[c] += zv * crow[c];
            grow[c] += zv * trow[c];
          }
        }
      }
      Tensor& dW0 = t.touch(w0);
      for (int k = 0; k < W0.rows; ++k)
        for (int c = 0; c < W0.cols; ++c) dW0.at(k, c) += dw0t.at(c, k);
    });
  }

  /// Row-wise numerically stable softmax.
  NodeId softmax_row(NodeId a) {
    const Tensor& A = nodes_[a].val;
    Tensor out(A.rows, A.cols);
    for (int r = 0; r < A.rows; ++r) {
      const double* arow = A.row_ptr(r);
      double* orow = out.row_ptr(r);
      double mx = arow[0];
      for (int c = 1; c < A.cols; ++c) mx = std::max(mx, arow[c]);
      double z = 0.0;
      for (int c = 0; c < A.cols; ++c) {
        orow[c] = std::exp(arow[c] - mx);
        z += orow[c];
      }
      for (int c = 0; c < A.cols; ++c) orow[c] /= z;
    }
    return make(std::move(out), [a](Tape& t) {
      Node& n = t.nodes_[t.cursor_];
      const Tensor& G = n.grad;
      const Tensor& Y = n.val;
      Tensor& dA = t.touch(a);
      for (int r = 0; r < G.rows; ++r) {
        const double* grow = G.row_ptr(r);
        const double* yrow = Y.row_ptr(r);
        double* drow = dA.row_ptr(r);
        double gy = 0.0;
        for (int c = 0; c < G.cols; ++c) gy += grow[c] * yrow[c];
        for (int c = 0; c < G.cols; ++c) drow[c] += yrow[c] * (grow[c] - gy);
      }
    });
  }

  /// Mean binary cross entropy of predicted probabilities (n x 1) against
  /// 0/1 labels. Predictions are clamped to [kBceClamp, 1 - kBceClamp];
  /// clamped entries get zero gradient (the forward value is locally flat
  /// there).
  NodeId bce(NodeId pred, std::vector<double> labels) {
    const Tensor& P = nodes_[pred].val;
    if (P.cols != 1 || static_cast<std::size_t>(P.rows) != labels.size())
      throw ShapeError("bce: predictions " + P.shape_str() + " vs " +
                       std::to_string(labels.size()) + " labels");
    const int n = P.rows;
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
      const double p = std::clamp(P.v[i], kBceClamp, 1.0 - kBceClamp);
      loss -= labels[i] * std::log(p) + (1.0 - labels[i]) * std::log(1.0 - p);
    }
    loss /= n;
    auto lab = std::make_shared<std::vector<double>>(std::move(labels));
    return make(Tensor::scalar(loss), [pred, lab, n](Tape& t) {
      const double g = t.nodes_[t.cursor_].grad.v[0];
      const Tensor& P = t.nodes_[pred].val;
      Tensor& dP = t.touch(pred);
      for (int i = 0; i < n; ++i) {
        const double p = P.v[i];
        if (p <= kBceClamp || p >= 1.0 - kBceClamp) continue;
        dP.v[i] += g * (p - (*lab)[i]) / (p * (1.0 - p) * n);
      }
    });
  }

  // -------------------------------------------------------------- backward

  /// Reverse sweep from a scalar loss node. Flushes accumulated gradients of
  /// parameter leaves into their stores.
  void backward(NodeId loss) {
    Node& ln = nodes_[loss];
    if (ln.val.numel() != 1)
      throw ShapeError("backward: loss must be scalar, got " + ln.val.shape_str());
    ln.grad.v[0] = 1.0;
    ln.touched = true;
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.touched || !n.back) continue;
      cursor_ = i;
      n.back(*this);
    }
    for (const Binding& b : bindings_) {
      const Tensor& g = nodes_[b.node].grad;
      Tensor& slot = b.store->grad(b.name);
      for (int i = 0; i < g.numel(); ++i) slot.v[i] += g.v[i];
    }
  }

 private:
  struct Binding {
    NodeId node;
    ParameterStore* store;
    std::string name;
  };

  NodeId make(Tensor out, std::function<void(Tape&)> back) {
    Node n;
    n.grad = Tensor::zeros(out.rows, out.cols);
    n.val = std::move(out);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size()) - 1;
  }

  Tensor& touch(NodeId id) {
    nodes_[id].touched = true;
    return nodes_[id].grad;
  }

  std::vector<Node> nodes_;
  std::vector<Binding> bindings_;
  int cursor_ = 0;
};

}  // namespace optmsm
