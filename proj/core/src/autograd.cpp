#include "uio/autograd.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

namespace uio {

namespace {

constexpr double kRmsEps = 1e-6;
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluK = 0.044715;

// C += A^T B with A [m,k], B [m,n], C [k,n].
void matmul_tn_accum(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<size_t>(i) * k;
    const double* brow = b + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      double av = arow[p];
      if (av == 0.0) continue;
      double* crow = c + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void check_2d(const Tensor& t, const char* who) {
  if (t.ndim() != 2) throw std::invalid_argument(std::string(who) + ": tensor must be 2-D");
}

}  // namespace

int Graph::push(Tensor value, bool needs_grad, std::function<void(Graph&)> back) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Tensor& Graph::grad(int id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (n.grad.data.empty()) n.grad = Tensor(n.value.shape, 0.0);
  return n.grad;
}

int Graph::leaf(Tensor value, bool needs_grad) {
  return push(std::move(value), needs_grad, nullptr);
}

int Graph::add(int a, int b) {
  if (!value(a).same_shape(value(b)))
    throw std::invalid_argument("add: shape mismatch " + value(a).shape_str() + " vs " +
                                value(b).shape_str());
  Tensor out = value(a);
  const Tensor& bv = value(b);
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv.data[i];
  bool ng = wants_grad(a) || wants_grad(b);
  int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_.back().back = [id, a, b](Graph& g) {
      const Tensor& go = g.grad(id);
      for (int src : {a, b}) {
        if (!g.wants_grad(src)) continue;
        Tensor& gs = g.grad(src);
        for (size_t i = 0; i < go.data.size(); ++i) gs.data[i] += go.data[i];
      }
    };
  return id;
}

int Graph::add_row_broadcast(int a, int bias) {
  const Tensor& av = value(a);
  const Tensor& bv = value(bias);
  check_2d(av, "add_row_broadcast");
  if (bv.numel() != av.cols())
    throw std::invalid_argument("add_row_broadcast: bias size mismatch");
  int m = av.rows(), n = av.cols();
  Tensor out = av;
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(i, j) += bv.data[static_cast<size_t>(j)];
  bool ng = wants_grad(a) || wants_grad(bias);
  int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_.back().back = [id, a, bias, m, n](Graph& g) {
      const Tensor& go = g.grad(id);
      if (g.wants_grad(a)) {
        Tensor& ga = g.grad(a);
        for (size_t i = 0; i < go.data.size(); ++i) ga.data[i] += go.data[i];
      }
      if (g.wants_grad(bias)) {
        Tensor& gb = g.grad(bias);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) gb.data[static_cast<size_t>(j)] += go.at(i, j);
      }
    };
  return id;
}

int Graph::scale(int a, double s) {
  Tensor out = value(a);
  for (double& v : out.data) v *= s;
  bool ng = wants_grad(a);
  int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_.back().back = [id, a, s](Graph& g) {
      const Tensor& go = g.grad(id);
      Tensor& ga = g.grad(a);
      for (size_t i = 0; i < go.data.size(); ++i) ga.data[i] += s * go.data[i];
    };
  return id;
}

int Graph::mul(int a, int b) {
  if (!value(a).same_shape(value(b))) throw std::invalid_argument("mul: shape mismatch");
  Tensor out = value(a);
  const Tensor& bv = value(b);
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv.data[i];
  bool ng = wants_grad(a) || wants_grad(b);
  int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_.back().back = [id, a, b](Graph& g) {
      const Tensor& go = g.grad(id);
      if (g.wants_grad(a)) {
        Tensor& ga = g.grad(a);
        const Tensor& bv2 = g.value(b);
        for (size_t i = 0; i < go.data.size(); ++i) ga.data[i] += go.data[i] * bv2.data[i];
      }
      if (g.wants_grad(b)) {
        Tensor& gb = g.grad(b);
        const Tensor& av2 = g.value(a);
        for (size_t i = 0; i < go.data.size(); ++i) gb.data[i] += go.data[i] * av2.data[i];
      }
    };
  return id;
}

int Graph::matmul(int a, int b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  check_2d(av, "matmul");
  check_2d(bv, "matmul");
  if (av.cols() != bv.rows())
    throw std::invalid_argument("matmul: " + av.shape_str() + " x " + bv.shape_str());
  int m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out({m, n});
  matmul_accum(av.data.data(), bv.data.data(), out.data.data(), m, k, n, false);
  bool ng = wants_grad(a) || wants_grad(b);
  int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_.back().back = [id, a, b, m, k, n](Graph& g) {
      const Tensor& go = g.grad(id);
      if (g.wants_grad(a))
        matmul_nt_accum(go.data.data(), g.value(b).data.data(), g.grad(a).data.data(), m, n, k,
                        true);
      if (g.wants_grad(b))
        matmul_tn_accum(g.value(a).data.data(), go.data.data(), g.grad(b).data.data(), m, k, n);
    };
  return id;
}

int Graph::matmul_nt(int a, int b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  check_2d(av, "matmul_nt");
  check_2d(bv, "matmul_nt");
  if (av.cols() != bv.cols())
    throw std::invalid_argument("matmul_nt: " + av.shape_str() + " x " + bv.shape_str() + "^T");
  int m = av.rows(), k = av.cols(), n = bv.rows();
  Tensor out({m, n});
  matmul_nt_accum(av.data.data(), bv.data.data(), out.data.data(), m, k, n, false);
  bool ng = wants_grad(a) || wants_grad(b);
  int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_.back().back = [id, a, b, m, k, n](Graph& g) {
      const Tensor& go = g.grad(id);
      if (g.wants_grad(a))
        matmul_accum(go.data.data(), g.value(b).data.data(), g.grad(a).data.data(), m, n, k,
                     true);
      if (g.wants_grad(b))
        matmul_tn_accum(go.data.data(), g.value(a).data.data(), g.grad(b).data.data(), m, n, k);
    };
  return id;
}

int Graph::gelu(int a) {
  Tensor out = value(a);
  for (double& x : out.data) {
    double u = kGeluC * (x + kGeluK * x * x * x);
    x = 0.5 * x * (1.0 + std::tanh(u));
  }
  bool ng = wants_grad(a);
  int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_.back().back = [id, a](Graph& g) {
      const Tensor& go = g.grad(id);
      const Tensor& av = g.value(a);
      Tensor& ga = g.grad(a);
      for (size_t i = 0; i < go.data.size(); ++i) {
        double x = av.data[i];
        double t = std::tanh(kGeluC * (x + kGeluK * x * x * x));
        double d = 0.5 * (1.0 + t) +
                   0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluK * x * x);
        ga.data[i] += go.data[i] * d;
      }
    };
  return id;
}

int Graph::rmsnorm(int a, int gain) {
  const Tensor& av = value(a);
  const Tensor& gv = value(gain);
  check_2d(av, "rmsnorm");
  if (gv.numel() != av.cols()) throw std::invalid_argument("rmsnorm: gain size mismatch");
  int m = av.rows(), n = av.cols();
  Tensor out({m, n});
  for (int i = 0; i < m; ++i) {
    double ms = 0.0;
    for (int j = 0; j < n; ++j) ms += av.at(i, j) * av.at(i, j);
    double r = 1.0 / std::sqrt(ms / n + kRmsEps);
    for (int j = 0; j < n; ++j) out.at(i, j) = av.at(i, j) * r * gv.data[static_cast<size_t>(j)];
  }
  bool ng = wants_grad(a) || wants_grad(gain);
  int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_.back().back = [id, a, gain, m, n](Graph& g) {
      const Tensor& go = g.grad(id);
      const Tensor& av2 = g.value(a);
      const Tensor& gv2 = g.value(gain);
      for (int i = 0; i < m; ++i) {
        double ms = 0.0;
        for (int j = 0; j < n; ++j) ms += av2.at(i, j) * av2.at(i, j);
        double r = 1.0 / std::sqrt(ms / n + kRmsEps);
        if (g.wants_grad(gain)) {
          Tensor& gg = g.grad(gain);
          for (int j = 0; j < n; ++j)
            gg.data[static_cast<size_t>(j)] += go.at(i, j) * av2.at(i, j) * r;
        }
        if (g.wants_grad(a)) {
          double dot = 0.0;
          for (int j = 0; j < n; ++j)
            dot += go.at(i, j) * gv2.data[static_cast<size_t>(j)] * av2.at(i, j);
          Tensor& ga = g.grad(a);
          for (int j = 0; j < n; ++j)
            ga.at(i, j) += r * gv2.data[static_cast<size_t>(j)] * go.at(i, j) -
                           r * r * r * av2.at(i, j) * dot / n;
        }
      }
    };
  return id;
}

int Graph::gather_rows(int table, std::vector<int> indices) {
  const Tensor& tv = value(table);
  check_2d(tv, "gather_rows");
  int n = tv.cols();
  for (int ix : indices)
    if (ix < 0 || ix >= tv.rows())
      throw std::out_of_range("gather_rows: index " + std::to_string(ix) + " outside [0, " +
                              std::to_string(tv.rows()) + ")");
  Tensor out({static_cast<int>(indices.size()), n});
  for (size_t i = 0; i < indices.size(); ++i)
    for (int j = 0; j < n; ++j) out.at(static_cast<int>(i), j) = tv.at(indices[i], j);
  bool ng = wants_grad(table);
  int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_.back().back = [id, table, idx = std::move(indices), n](Graph& g) {
      const Tensor& go = g.grad(id);
      Tensor& gt = g.grad(table);
      for (size_t i = 0; i < idx.size(); ++i)
        for (int j = 0; j < n; ++j) gt.at(idx[i], j) += go.at(static_cast<int>(i), j);
    };
  return id;
}

int Graph::concat_rows(int a, int b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  check_2d(av, "concat_rows");
  check_2d(bv, "concat_rows");
  if (av.cols() != bv.cols()) throw std::invalid_argument("concat_rows: column mismatch");
  int ma = av.rows(), mb = bv.rows(), n = av.cols();
  Tensor out({ma + mb, n});
  std::copy(av.data.begin(), av.data.end(), out.data.begin());
  std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + av.data.size());
  bool ng = wants_grad(a) || wants_grad(b);
  int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_.back().back = [id, a, b, ma, mb, n](Graph& g) {
      const Tensor& go = g.grad(id);
      if (g.wants_grad(a)) {
        Tensor& ga = g.grad(a);
        for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += go.data[i];
      }
      if (g.wants_grad(b)) {
        Tensor& gb = g.grad(b);
        size_t off = static_cast<size_t>(ma) * n;
        for (size_t i = 0; i < gb.data.size(); ++i) gb.data[i] += go.data[off + i];
      }
      (void)mb;
    };
  return id;
}

int Graph::slice_rows(int a, int begin, int count) {
  const Tensor& av = value(a);
  check_2d(av, "slice_rows");
  if (begin < 0 || count <= 0 || begin + count > av.rows())
    throw std::out_of_range("slice_rows: [" + std::to_string(begin) + ", " +
                            std::to_string(begin + count) + ") outside " + av.shape_str());
  int n = av.cols();
  Tensor out({count, n});
  std::copy(av.data.begin() + static_cast<int64_t>(begin) * n,
            av.data.begin() + static_cast<int64_t>(begin + count) * n, out.data.begin());
  bool ng = wants_grad(a);
  int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_.back().back = [id, a, begin, count, n](Graph& g) {
      const Tensor& go = g.grad(id);
      Tensor& ga = g.grad(a);
      for (int i = 0; i < count; ++i)
        for (int j = 0; j < n; ++j) ga.at(begin + i, j) += go.at(i, j);
    };
  return id;
}

int Graph::replace_rows(int a, int single_row, std::vector<uint8_t> mask) {
  const Tensor& av = value(a);
  const Tensor& sv = value(single_row);
  check_2d(av, "replace_rows");
  if (sv.numel() != av.cols()) throw std::invalid_argument("replace_rows: row size mismatch");
  if (mask.size() != static_cast<size_t>(av.rows()))
    throw std::invalid_argument("replace_rows: mask size mismatch");
  int m = av.rows(), n = av.cols();
  Tensor out = av;
  for (int i = 0; i < m; ++i)
    if (mask[static_cast<size_t>(i)])
      for (int j = 0; j < n; ++j) out.at(i, j) = sv.data[static_cast<size_t>(j)];
  bool ng = wants_grad(a) || wants_grad(single_row);
  int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_.back().back = [id, a, single_row, msk = std::move(mask), m, n](Graph& g) {
      const Tensor& go = g.grad(id);
      for (int i = 0; i < m; ++i) {
        if (msk[static_cast<size_t>(i)]) {
          if (g.wants_grad(single_row)) {
            Tensor& gs = g.grad(single_row);
            for (int j = 0; j < n; ++j) gs.data[static_cast<size_t>(j)] += go.at(i, j);
          }
        } else if (g.wants_grad(a)) {
          Tensor& ga = g.grad(a);
          for (int j = 0; j < n; ++j) ga.at(i, j) += go.at(i, j);
        }
      }
    };
  return id;
}

int Graph::attention(int q, int k, int v, AttentionSpec spec) {
  const Tensor& qv = value(q);
  const Tensor& kv = value(k);
  const Tensor& vv = value(v);
  check_2d(qv, "attention");
  int h = spec.num_heads, dh = spec.head_dim;
  int m = qv.rows(), n = kv.rows();
  if (qv.cols() != h * dh || kv.cols() != h * dh || vv.cols() != h * dh)
    throw std::invalid_argument("attention: feature dim must equal heads*head_dim");
  if (vv.rows() != n) throw std::invalid_argument("attention: K/V row mismatch");
  if (spec.causal && m != n)
    throw std::invalid_argument("attention: causal mask requires square score matrix");
  for (const AttentionBias& b : spec.biases) {
    if (b.buckets.size() != static_cast<size_t>(m) * n)
      throw std::invalid_argument("attention: bucket matrix size mismatch");
    if (b.table < 0) throw std::invalid_argument("attention: bias without a table node");
    if (value(b.table).cols() != h)
      throw std::invalid_argument("attention: bias table must have one column per head");
  }
  double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  auto probs = std::make_shared<std::vector<double>>(
      static_cast<size_t>(h) * m * n);  // softmax rows, kept for backward
  Tensor out({m, h * dh});
  std::vector<double> row(static_cast<size_t>(n));
  for (int hh = 0; hh < h; ++hh) {
    int off = hh * dh;
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int p = 0; p < dh; ++p) s += qv.at(i, off + p) * kv.at(j, off + p);
        s *= inv_scale;
        for (const AttentionBias& b : spec.biases) {
          int bucket = b.buckets[static_cast<size_t>(i) * n + j];
          if (bucket >= 0) s += value(b.table).at(bucket, hh);
        }
        if (spec.causal && j > i) s = -1e30;
        row[static_cast<size_t>(j)] = s;
      }
      softmax_row(row.data(), n);
      double* arow = probs->data() + (static_cast<size_t>(hh) * m + i) * n;
      std::copy(row.begin(), row.end(), arow);
      for (int p = 0; p < dh; ++p) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += arow[j] * vv.at(j, off + p);
        out.at(i, off + p) = acc;
      }
    }
  }

  bool ng = wants_grad(q) || wants_grad(k) || wants_grad(v);
  for (const AttentionBias& b : spec.biases) ng = ng || wants_grad(b.table);
  int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_.back().back = [id, q, k, v, sp = std::move(spec), probs, m, n, inv_scale](Graph& g) {
      int h = sp.num_heads, dh = sp.head_dim;
      const Tensor& go = g.grad(id);
      const Tensor& qv2 = g.value(q);
      const Tensor& kv2 = g.value(k);
      const Tensor& vv2 = g.value(v);
      std::vector<double> da(static_cast<size_t>(n));
      std::vector<double> ds(static_cast<size_t>(n));
      for (int hh = 0; hh < h; ++hh) {
        int off = hh * dh;
        for (int i = 0; i < m; ++i) {
          const double* arow = probs->data() + (static_cast<size_t>(hh) * m + i) * n;
          for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < dh; ++p) acc += go.at(i, off + p) * vv2.at(j, off + p);
            da[static_cast<size_t>(j)] = acc;
          }
          double rowdot = 0.0;
          for (int j = 0; j < n; ++j) rowdot += da[static_cast<size_t>(j)] * arow[j];
          for (int j = 0; j < n; ++j)
            ds[static_cast<size_t>(j)] = arow[j] * (da[static_cast<size_t>(j)] - rowdot);

          if (g.wants_grad(v)) {
            Tensor& gv = g.grad(v);
            for (int j = 0; j < n; ++j) {
              if (arow[j] == 0.0) continue;
              for (int p = 0; p < dh; ++p) gv.at(j, off + p) += arow[j] * go.at(i, off + p);
            }
          }
          if (g.wants_grad(q)) {
            Tensor& gq = g.grad(q);
            for (int j = 0; j < n; ++j) {
              double s = ds[static_cast<size_t>(j)] * inv_scale;
              if (s == 0.0) continue;
              for (int p = 0; p < dh; ++p) gq.at(i, off + p) += s * kv2.at(j, off + p);
            }
          }
          if (g.wants_grad(k)) {
            Tensor& gk = g.grad(k);
            for (int j = 0; j < n; ++j) {
              double s = ds[static_cast<size_t>(j)] * inv_scale;
              if (s == 0.0) continue;
              for (int p = 0; p < dh; ++p) gk.at(j, off + p) += s * qv2.at(i, off + p);
            }
          }
          for (const AttentionBias& b : sp.biases) {
            if (!g.wants_grad(b.table)) continue;
            Tensor& gb = g.grad(b.table);
            for (int j = 0; j < n; ++j) {
              int bucket = b.buckets[static_cast<size_t>(i) * n + j];
              if (bucket >= 0) gb.at(bucket, hh) += ds[static_cast<size_t>(j)];
            }
          }
        }
      }
    };
  return id;
}

int Graph::cross_entropy_mean(int logits, std::vector<int> targets, int ignore_id) {
  const Tensor& lv = value(logits);
  check_2d(lv, "cross_entropy_mean");
  if (targets.size() != static_cast<size_t>(lv.rows()))
    throw std::invalid_argument("cross_entropy_mean: one target per row required");
  int m = lv.rows(), vsize = lv.cols();
  int counted = 0;
  for (int t : targets) {
    if (t == ignore_id) continue;
    if (t < 0 || t >= vsize)
      throw std::out_of_range("cross_entropy_mean: target " + std::to_string(t) +
                              " outside vocabulary");
    ++counted;
  }
  if (counted == 0)
    throw std::invalid_argument("cross_entropy_mean: every target is the ignored id");

  auto probs = std::make_shared<std::vector<double>>(lv.data);
  double total = 0.0;
  for (int i = 0; i < m; ++i) {
    double* row = probs->data() + static_cast<size_t>(i) * vsize;
    softmax_row(row, vsize);
    if (targets[static_cast<size_t>(i)] != ignore_id)
      total -= std::log(std::max(row[targets[static_cast<size_t>(i)]], 1e-300));
  }
  Tensor out({1});
  out.data[0] = total / counted;
  bool ng = wants_grad(logits);
  int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_.back().back = [id, logits, tg = std::move(targets), ignore_id, probs, m, vsize,
                          counted](Graph& g) {
      double go = g.grad(id).data[0] / counted;
      Tensor& gl = g.grad(logits);
      for (int i = 0; i < m; ++i) {
        if (tg[static_cast<size_t>(i)] == ignore_id) continue;
        const double* row = probs->data() + static_cast<size_t>(i) * vsize;
        for (int j = 0; j < vsize; ++j) gl.at(i, j) += go * row[j];
        gl.at(i, tg[static_cast<size_t>(i)]) -= go;
      }
    };
  return id;
}

int Graph::mse(int a, int b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (!av.same_shape(bv)) throw std::invalid_argument("mse: shape mismatch");
  double total = 0.0;
  for (size_t i = 0; i < av.data.size(); ++i) {
    double d = av.data[i] - bv.data[i];
    total += d * d;
  }
  Tensor out({1});
  double inv_n = 1.0 / static_cast<double>(av.numel());
  out.data[0] = total * inv_n;
  bool ng = wants_grad(a) || wants_grad(b);
  int id = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_.back().back = [id, a, b, inv_n](Graph& g) {
      double go = g.grad(id).data[0];
      const Tensor& av2 = g.value(a);
      const Tensor& bv2 = g.value(b);
      if (g.wants_grad(a)) {
        Tensor& ga = g.grad(a);
        for (size_t i = 0; i < av2.data.size(); ++i)
          ga.data[i] += go * 2.0 * (av2.data[i] - bv2.data[i]) * inv_n;
      }
      if (g.wants_grad(b)) {
        Tensor& gb = g.grad(b);
        for (size_t i = 0; i < av2.data.size(); ++i)
          gb.data[i] -= go * 2.0 * (av2.data[i] - bv2.data[i]) * inv_n;
      }
    };
  return id;
}

int Graph::straight_through(int src, Tensor replaced) {
  if (!value(src).same_shape(replaced))
    throw std::invalid_argument("straight_through: shape mismatch");
  bool ng = wants_grad(src);
  int id = push(std::move(replaced), ng, nullptr);
  if (ng)
    nodes_.back().back = [id, src](Graph& g) {
      const Tensor& go = g.grad(id);
      Tensor& gs = g.grad(src);
      for (size_t i = 0; i < go.data.size(); ++i) gs.data[i] += go.data[i];
    };
  return id;
}

int Graph::stop_gradient(int a) { return push(value(a), false, nullptr); }

void Graph::backward(int loss) {
  if (value(loss).numel() != 1)
    throw std::invalid_argument("backward: loss must be a scalar node");
  grad(loss).data[0] = 1.0;
  for (int i = loss; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (n.back && !n.grad.data.empty()) n.back(*this);
  }
}

}  // namespace uio
