#include "blm/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace blm {

void softmax_inplace(double* x, int n) {
  double mx = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) mx = std::max(mx, x[i]);
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    x[i] = std::exp(x[i] - mx);
    s += x[i];
  }
  for (int i = 0; i < n; ++i) x[i] /= s;
}

double log_sum_exp(const double* x, int n) {
  double mx = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) mx = std::max(mx, x[i]);
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += std::exp(x[i] - mx);
  return mx + std::log(s);
}

Tape::Id Tape::push(Tensor val, std::function<void()> back) {
  Node n;
  n.grad = Tensor(val.rows, val.cols);
  n.val = std::move(val);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size()) - 1;
}

Tape::Id Tape::leaf(Tensor v) { return push(std::move(v)); }

Tape::Id Tape::param(Param& p) {
  Id id = push(p.value);
  Param* pp = &p;
  nodes_[id].back = [this, id, pp]() {
    const Tensor& g = nodes_[id].grad;
    for (size_t i = 0; i < g.v.size(); ++i) pp->grad.v[i] += g.v[i];
  };
  return id;
}

Tape::Id Tape::add(Id a, Id b) {
  assert(val(a).same_shape(val(b)));
  Tensor out = val(a);
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += val(b).v[i];
  Id id = push(std::move(out), nullptr);
  nodes_[id].back = [this, id, a, b]() {
    const Tensor& g = nodes_[id].grad;
    for (size_t i = 0; i < g.v.size(); ++i) {
      grad_mut(a).v[i] += g.v[i];
      grad_mut(b).v[i] += g.v[i];
    }
  };
  return id;
}

Tape::Id Tape::sub(Id a, Id b) {
  assert(val(a).same_shape(val(b)));
  Tensor out = val(a);
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] -= val(b).v[i];
  Id id = push(std::move(out), nullptr);
  nodes_[id].back = [this, id, a, b]() {
    const Tensor& g = nodes_[id].grad;
    for (size_t i = 0; i < g.v.size(); ++i) {
      grad_mut(a).v[i] += g.v[i];
      grad_mut(b).v[i] -= g.v[i];
    }
  };
  return id;
}

Tape::Id Tape::mul(Id a, Id b) {
  assert(val(a).same_shape(val(b)));
  Tensor out = val(a);
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] *= val(b).v[i];
  Id id = push(std::move(out), nullptr);
  nodes_[id].back = [this, id, a, b]() {
    const Tensor& g = nodes_[id].grad;
    for (size_t i = 0; i < g.v.size(); ++i) {
      grad_mut(a).v[i] += g.v[i] * val(b).v[i];
      grad_mut(b).v[i] += g.v[i] * val(a).v[i];
    }
  };
  return id;
}

Tape::Id Tape::affine(Id a, double alpha, double beta) {
  Tensor out = val(a);
  for (double& x : out.v) x = alpha * x + beta;
  Id id = push(std::move(out), nullptr);
  nodes_[id].back = [this, id, a, alpha]() {
    const Tensor& g = nodes_[id].grad;
    for (size_t i = 0; i < g.v.size(); ++i) grad_mut(a).v[i] += alpha * g.v[i];
  };
  return id;
}

Tape::Id Tape::add_rowvec(Id a, Id r) {
  assert(val(r).rows == 1 && val(r).cols == val(a).cols);
  Tensor out = val(a);
  for (int i = 0; i < out.rows; ++i)
    for (int c = 0; c < out.cols; ++c) out.at(i, c) += val(r).at(0, c);
  Id id = push(std::move(out), nullptr);
  nodes_[id].back = [this, id, a, r]() {
    const Tensor& g = nodes_[id].grad;
    for (int i = 0; i < g.rows; ++i)
      for (int c = 0; c < g.cols; ++c) {
        grad_mut(a).at(i, c) += g.at(i, c);
        grad_mut(r).at(0, c) += g.at(i, c);
      }
  };
  return id;
}

Tape::Id Tape::mul_colvec(Id a, Id c) {
  assert(val(c).rows == val(a).rows && val(c).cols == 1);
  Tensor out = val(a);
  for (int i = 0; i < out.rows; ++i) {
    const double s = val(c).at(i, 0);
    for (int j = 0; j < out.cols; ++j) out.at(i, j) *= s;
  }
  Id id = push(std::move(out), nullptr);
  nodes_[id].back = [this, id, a, c]() {
    const Tensor& g = nodes_[id].grad;
    for (int i = 0; i < g.rows; ++i) {
      const double s = val(c).at(i, 0);
      double acc = 0.0;
      for (int j = 0; j < g.cols; ++j) {
        grad_mut(a).at(i, j) += g.at(i, j) * s;
        acc += g.at(i, j) * val(a).at(i, j);
      }
      grad_mut(c).at(i, 0) += acc;
    }
  };
  return id;
}

Tape::Id Tape::sigmoid(Id a) {
  Tensor out = val(a);
  for (double& x : out.v) x = 1.0 / (1.0 + std::exp(-x));
  Id id = push(std::move(out), nullptr);
  nodes_[id].back = [this, id, a]() {
    const Tensor& g = nodes_[id].grad;
    const Tensor& y = val(id);
    for (size_t i = 0; i < g.v.size(); ++i)
      grad_mut(a).v[i] += g.v[i] * y.v[i] * (1.0 - y.v[i]);
  };
  return id;
}

Tape::Id Tape::silu(Id a) {
  Tensor out = val(a);
  for (double& x : out.v) x = x / (1.0 + std::exp(-x));
  Id id = push(std::move(out), nullptr);
  nodes_[id].back = [this, id, a]() {
    const Tensor& g = nodes_[id].grad;
    for (size_t i = 0; i < g.v.size(); ++i) {
      const double x = val(a).v[i];
      const double s = 1.0 / (1.0 + std::exp(-x));
      grad_mut(a).v[i] += g.v[i] * s * (1.0 + x * (1.0 - s));
    }
  };
  return id;
}

Tape::Id Tape::matmul(Id a, Id b, bool ta, bool tb) {
  Tensor out = blm::matmul(val(a), val(b), ta, tb);
  Id id = push(std::move(out), nullptr);
  nodes_[id].back = [this, id, a, b, ta, tb]() {
    const Tensor& g = nodes_[id].grad;
    // d(opA) = g * opB^T ; d(opB) = opA^T * g
    Tensor d_op_a = blm::matmul(g, val(b), false, !tb);
    Tensor d_op_b = blm::matmul(val(a), g, !ta, false);
    Tensor& ga = grad_mut(a);
    if (!ta) {
      for (size_t i = 0; i < ga.v.size(); ++i) ga.v[i] += d_op_a.v[i];
    } else {
      for (int i = 0; i < ga.rows; ++i)
        for (int j = 0; j < ga.cols; ++j) ga.at(i, j) += d_op_a.at(j, i);
    }
    Tensor& gb = grad_mut(b);
    if (!tb) {
      for (size_t i = 0; i < gb.v.size(); ++i) gb.v[i] += d_op_b.v[i];
    } else {
      for (int i = 0; i < gb.rows; ++i)
        for (int j = 0; j < gb.cols; ++j) gb.at(i, j) += d_op_b.at(j, i);
    }
  };
  return id;
}

Tape::Id Tape::gather_rows(Id a, std::vector<int> idx) {
  Tensor out(static_cast<int>(idx.size()), val(a).cols);
  for (size_t r = 0; r < idx.size(); ++r) {
    assert(idx[r] >= 0 && idx[r] < val(a).rows);
    std::copy_n(val(a).row(idx[r]), val(a).cols, out.row(static_cast<int>(r)));
  }
  Id id = push(std::move(out), nullptr);
  nodes_[id].back = [this, id, a, idx = std::move(idx)]() {
    const Tensor& g = nodes_[id].grad;
    for (size_t r = 0; r < idx.size(); ++r)
      axpy(g.cols, 1.0, g.row(static_cast<int>(r)), grad_mut(a).row(idx[r]));
  };
  return id;
}

Tape::Id Tape::concat_rows(Id a, Id b) {
  assert(val(a).cols == val(b).cols);
  Tensor out(val(a).rows + val(b).rows, val(a).cols);
  std::copy(val(a).v.begin(), val(a).v.end(), out.v.begin());
  std::copy(val(b).v.begin(), val(b).v.end(), out.v.begin() + val(a).v.size());
  Id id = push(std::move(out), nullptr);
  nodes_[id].back = [this, id, a, b]() {
    const Tensor& g = nodes_[id].grad;
    const size_t na = grad_mut(a).v.size();
    for (size_t i = 0; i < na; ++i) grad_mut(a).v[i] += g.v[i];
    for (size_t i = 0; i < grad_mut(b).v.size(); ++i) grad_mut(b).v[i] += g.v[na + i];
  };
  return id;
}

namespace {
constexpr double kRmsEps = 1e-8;
}

Tape::Id Tape::rmsnorm(Id x, Id gain) {
  const Tensor& xv = val(x);
  assert(val(gain).rows == 1 && val(gain).cols == xv.cols);
  const int n = xv.cols;
  Tensor out(xv.rows, n);
  std::vector<double> rms(xv.rows);
  for (int i = 0; i < xv.rows; ++i) {
    double ss = 0.0;
    for (int c = 0; c < n; ++c) ss += xv.at(i, c) * xv.at(i, c);
    rms[i] = std::sqrt(ss / n + kRmsEps);
    for (int c = 0; c < n; ++c) out.at(i, c) = xv.at(i, c) / rms[i] * val(gain).at(0, c);
  }
  Id id = push(std::move(out), nullptr);
  nodes_[id].back = [this, id, x, gain, rms = std::move(rms)]() {
    const Tensor& g = nodes_[id].grad;
    const Tensor& xv = val(x);
    const Tensor& gv = val(gain);
    const int n = xv.cols;
    for (int i = 0; i < xv.rows; ++i) {
      const double r = rms[i];
      double xw = 0.0;  // sum_c x_c * gain_c * dy_c
      for (int c = 0; c < n; ++c) xw += xv.at(i, c) * gv.at(0, c) * g.at(i, c);
      for (int c = 0; c < n; ++c) {
        grad_mut(x).at(i, c) +=
            gv.at(0, c) * g.at(i, c) / r - xv.at(i, c) * xw / (n * r * r * r);
        grad_mut(gain).at(0, c) += g.at(i, c) * xv.at(i, c) / r;
      }
    }
  };
  return id;
}

Tape::Id Tape::sum_all(Id a) {
  double s = 0.0;
  for (double x : val(a).v) s += x;
  Id id = push(Tensor::full(1, 1, s), nullptr);
  nodes_[id].back = [this, id, a]() {
    const double g = nodes_[id].grad.at(0, 0);
    for (double& x : grad_mut(a).v) x += g;
  };
  return id;
}

Tape::Id Tape::mean_all(Id a) {
  const double n = static_cast<double>(val(a).size());
  double s = 0.0;
  for (double x : val(a).v) s += x;
  Id id = push(Tensor::full(1, 1, s / n), nullptr);
  nodes_[id].back = [this, id, a, n]() {
    const double g = nodes_[id].grad.at(0, 0) / n;
    for (double& x : grad_mut(a).v) x += g;
  };
  return id;
}

Tape::Id Tape::sq_l2_mean(Id a, Id b) {
  assert(val(a).same_shape(val(b)));
  const int rows = val(a).rows;
  double s = 0.0;
  for (size_t i = 0; i < val(a).v.size(); ++i) {
    const double d = val(a).v[i] - val(b).v[i];
    s += d * d;
  }
  Id id = push(Tensor::full(1, 1, s / rows), nullptr);
  nodes_[id].back = [this, id, a, b, rows]() {
    const double g = nodes_[id].grad.at(0, 0);
    for (size_t i = 0; i < val(a).v.size(); ++i) {
      const double d = 2.0 * (val(a).v[i] - val(b).v[i]) * g / rows;
      grad_mut(a).v[i] += d;
      grad_mut(b).v[i] -= d;
    }
  };
  return id;
}

Tape::Id Tape::kl_from_const(const Tensor& teacher_logits, Id student_logits,
                             double temperature) {
  const Tensor& sv = val(student_logits);
  assert(teacher_logits.rows == sv.rows && teacher_logits.cols == sv.cols);
  const int rows = sv.rows;
  const int cols = sv.cols;
  auto p = std::make_shared<Tensor>(rows, cols);
  auto q = std::make_shared<Tensor>(rows, cols);
  double total = 0.0;
  for (int i = 0; i < rows; ++i) {
    for (int c = 0; c < cols; ++c) {
      p->at(i, c) = teacher_logits.at(i, c) / temperature;
      q->at(i, c) = sv.at(i, c) / temperature;
    }
    softmax_inplace(p->row(i), cols);
    softmax_inplace(q->row(i), cols);
    for (int c = 0; c < cols; ++c) {
      const double pc = p->at(i, c);
      if (pc > 0.0) total += pc * (std::log(pc) - std::log(std::max(q->at(i, c), 1e-300)));
    }
  }
  Id id = push(Tensor::full(1, 1, total / rows), nullptr);
  nodes_[id].back = [this, id, student_logits, p, q, rows, temperature]() {
    const double g = nodes_[id].grad.at(0, 0) / (temperature * rows);
    Tensor& gs = grad_mut(student_logits);
    for (size_t i = 0; i < gs.v.size(); ++i) gs.v[i] += g * (q->v[i] - p->v[i]);
  };
  return id;
}

Tape::Id Tape::cross_entropy_rows(Id logits, std::vector<int> targets) {
  const Tensor& lv = val(logits);
  assert(static_cast<int>(targets.size()) == lv.rows);
  int count = 0;
  double total = 0.0;
  for (int i = 0; i < lv.rows; ++i) {
    if (targets[i] < 0) continue;
    assert(targets[i] < lv.cols);
    total += log_sum_exp(lv.row(i), lv.cols) - lv.at(i, targets[i]);
    ++count;
  }
  assert(count > 0);
  Id id = push(Tensor::full(1, 1, total / count), nullptr);
  nodes_[id].back = [this, id, logits, targets = std::move(targets), count]() {
    const double g = nodes_[id].grad.at(0, 0) / count;
    const Tensor& lv = val(logits);
    std::vector<double> row(lv.cols);
    for (int i = 0; i < lv.rows; ++i) {
      if (targets[i] < 0) continue;
      std::copy_n(lv.row(i), lv.cols, row.data());
      softmax_inplace(row.data(), lv.cols);
      for (int c = 0; c < lv.cols; ++c)
        grad_mut(logits).at(i, c) += g * (row[c] - (c == targets[i] ? 1.0 : 0.0));
    }
  };
  return id;
}

Tape::Id Tape::bce(Id p, std::vector<int> y, double eps) {
  const Tensor& pv = val(p);
  assert(pv.cols == 1 && static_cast<int>(y.size()) == pv.rows);
  const int rows = pv.rows;
  double total = 0.0;
  for (int i = 0; i < rows; ++i) {
    const double pc = std::clamp(pv.at(i, 0), eps, 1.0 - eps);
    total -= y[i] ? std::log(pc) : std::log(1.0 - pc);
  }
  Id id = push(Tensor::full(1, 1, total / rows), nullptr);
  nodes_[id].back = [this, id, p, y = std::move(y), eps, rows]() {
    const double g = nodes_[id].grad.at(0, 0) / rows;
    for (int i = 0; i < rows; ++i) {
      const double raw = val(p).at(i, 0);
      if (raw <= eps || raw >= 1.0 - eps) continue;  // clipped: no gradient
      grad_mut(p).at(i, 0) += g * (raw - y[i]) / (raw * (1.0 - raw));
    }
  };
  return id;
}

Tape::Id Tape::masked_mean(Id p, std::vector<char> mask) {
  const Tensor& pv = val(p);
  assert(pv.cols == 1 && static_cast<int>(mask.size()) == pv.rows);
  int count = 0;
  double total = 0.0;
  for (int i = 0; i < pv.rows; ++i)
    if (mask[i]) {
      total += pv.at(i, 0);
      ++count;
    }
  Id id = push(Tensor::full(1, 1, count ? total / count : 0.0), nullptr);
  nodes_[id].back = [this, id, p, mask = std::move(mask), count]() {
    if (!count) return;
    const double g = nodes_[id].grad.at(0, 0) / count;
    for (size_t i = 0; i < mask.size(); ++i)
      if (mask[i]) grad_mut(p).at(static_cast<int>(i), 0) += g;
  };
  return id;
}

Tape::Id Tape::linear_recurrence(Id gate, Id u) {
  const Tensor& gv = val(gate);
  const Tensor& uv = val(u);
  assert(gv.same_shape(uv));
  Tensor out(gv.rows, gv.cols);
  for (int t = 0; t < gv.rows; ++t)
    for (int c = 0; c < gv.cols; ++c)
      out.at(t, c) = gv.at(t, c) * (t ? out.at(t - 1, c) : 0.0) + uv.at(t, c);
  Id id = push(std::move(out), nullptr);
  nodes_[id].back = [this, id, gate, u]() {
    const Tensor& g = nodes_[id].grad;
    const Tensor& h = val(id);
    const Tensor& gv = val(gate);
    const int rows = g.rows;
    const int cols = g.cols;
    std::vector<double> carry(cols, 0.0);
    for (int t = rows - 1; t >= 0; --t) {
      for (int c = 0; c < cols; ++c) {
        const double dh = g.at(t, c) + carry[c];
        grad_mut(u).at(t, c) += dh;
        grad_mut(gate).at(t, c) += dh * (t ? h.at(t - 1, c) : 0.0);
        carry[c] = dh * gv.at(t, c);
      }
    }
  };
  return id;
}

Tape::Id Tape::causal_attention(Id q, Id k, Id v, int nhead) {
  const Tensor& qv = val(q);
  const Tensor& kv = val(k);
  const Tensor& vv = val(v);
  assert(qv.same_shape(kv) && qv.same_shape(vv));
  assert(qv.cols % nhead == 0);
  const int L = qv.rows;
  const int dh = qv.cols / nhead;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  auto attn = std::make_shared<std::vector<Tensor>>();
  Tensor out(L, qv.cols);
  for (int h = 0; h < nhead; ++h) {
    Tensor a(L, L);
    for (int i = 0; i < L; ++i) {
      for (int j = 0; j <= i; ++j)
        a.at(i, j) = scale * dot(qv.row(i) + h * dh, kv.row(j) + h * dh, dh);
      // softmax over the causal prefix only
      softmax_inplace(a.row(i), i + 1);
      for (int j = i + 1; j < L; ++j) a.at(i, j) = 0.0;
      for (int j = 0; j <= i; ++j)
        axpy(dh, a.at(i, j), vv.row(j) + h * dh, out.row(i) + h * dh);
    }
    attn->push_back(std::move(a));
  }
  Id id = push(std::move(out), nullptr);
  nodes_[id].back = [this, id, q, k, v, nhead, dh, scale, attn]() {
    const Tensor& g = nodes_[id].grad;
    const Tensor& qv = val(q);
    const Tensor& kv = val(k);
    const Tensor& vv = val(v);
    const int L = g.rows;
    for (int h = 0; h < nhead; ++h) {
      const Tensor& a = (*attn)[h];
      for (int i = 0; i < L; ++i) {
        const double* go = g.row(i) + h * dh;
        // dV_j += a_ij * dO_i ; dA_ij = dO_i . V_j
        std::vector<double> da(i + 1);
        for (int j = 0; j <= i; ++j) {
          axpy(dh, a.at(i, j), go, grad_mut(v).row(j) + h * dh);
          da[j] = dot(go, vv.row(j) + h * dh, dh);
        }
        double dot_da_a = 0.0;
        for (int j = 0; j <= i; ++j) dot_da_a += da[j] * a.at(i, j);
        for (int j = 0; j <= i; ++j) {
          const double ds = a.at(i, j) * (da[j] - dot_da_a) * scale;
          axpy(dh, ds, kv.row(j) + h * dh, grad_mut(q).row(i) + h * dh);
          axpy(dh, ds, qv.row(i) + h * dh, grad_mut(k).row(j) + h * dh);
        }
      }
    }
  };
  return id;
}

Tape::Id Tape::cosine_pairs(Id a, Id b, double eps, int* degenerate_count) {
  const Tensor& av = val(a);
  const Tensor& bv = val(b);
  assert(av.same_shape(bv));
  const int rows = av.rows;
  const int n = av.cols;
  Tensor out(rows, 1);
  auto degenerate = std::make_shared<std::vector<char>>(rows, 0);
  for (int i = 0; i < rows; ++i) {
    const double na = l2_norm(av.row(i), n);
    const double nb = l2_norm(bv.row(i), n);
    if (na < eps || nb < eps) {
      (*degenerate)[i] = 1;
      if (degenerate_count) ++*degenerate_count;
      out.at(i, 0) = 0.0;
    } else {
      out.at(i, 0) = dot(av.row(i), bv.row(i), n) / (na * nb);
    }
  }
  Id id = push(std::move(out), nullptr);
  nodes_[id].back = [this, id, a, b, degenerate]() {
    const Tensor& g = nodes_[id].grad;
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    const int n = av.cols;
    for (int i = 0; i < av.rows; ++i) {
      if ((*degenerate)[i]) continue;
      const double na = l2_norm(av.row(i), n);
      const double nb = l2_norm(bv.row(i), n);
      const double cos = val(id).at(i, 0);
      const double gi = g.at(i, 0);
      for (int c = 0; c < n; ++c) {
        grad_mut(a).at(i, c) +=
            gi * (bv.at(i, c) / (na * nb) - cos * av.at(i, c) / (na * na));
        grad_mut(b).at(i, c) +=
            gi * (av.at(i, c) / (na * nb) - cos * bv.at(i, c) / (nb * nb));
      }
    }
  };
  return id;
}

Tape::Id Tape::smooth_chunks(Id h, Id p) {
  const Tensor& hv = val(h);
  const Tensor& pv = val(p);
  assert(pv.rows == hv.rows && pv.cols == 1);
  const int n = hv.rows;
  const int d = hv.cols;
  Tensor out(n, d);
  std::copy_n(hv.row(0), d, out.row(0));
  for (int k = 1; k < n; ++k) {
    const double pk = pv.at(k, 0);
    for (int c = 0; c < d; ++c)
      out.at(k, c) = pk * hv.at(k, c) + (1.0 - pk) * out.at(k - 1, c);
  }
  Id id = push(std::move(out), nullptr);
  nodes_[id].back = [this, id, h, p]() {
    const Tensor& g = nodes_[id].grad;
    const Tensor& hv = val(h);
    const Tensor& pv = val(p);
    const Tensor& z = val(id);
    const int n = hv.rows;
    const int d = hv.cols;
    std::vector<double> carry(d, 0.0);
    for (int k = n - 1; k >= 1; --k) {
      const double pk = pv.at(k, 0);
      double dp = 0.0;
      for (int c = 0; c < d; ++c) {
        const double dz = g.at(k, c) + carry[c];
        grad_mut(h).at(k, c) += pk * dz;
        dp += (hv.at(k, c) - z.at(k - 1, c)) * dz;
        carry[c] = (1.0 - pk) * dz;
      }
      grad_mut(p).at(k, 0) += dp;
    }
    for (int c = 0; c < d; ++c) grad_mut(h).at(0, c) += g.at(0, c) + carry[c];
  };
  return id;
}

Tape::Id Tape::shifted_upsample(Id h, Id null_row, std::vector<int> boundaries,
                                int total_len) {
  const Tensor& hv = val(h);
  assert(val(null_row).rows == 1 && val(null_row).cols == hv.cols);
  assert(static_cast<int>(boundaries.size()) == hv.rows);
  assert(!boundaries.empty() && boundaries.back() == total_len - 1);
  const int d = hv.cols;
  Tensor out(total_len, d);
  int k = 0;
  for (int i = 0; i < total_len; ++i) {
    if (i == boundaries[k]) {
      std::copy_n(hv.row(k), d, out.row(i));
      ++k;
    } else if (k == 0) {
      std::copy_n(val(null_row).row(0), d, out.row(i));
    } else {
      std::copy_n(hv.row(k - 1), d, out.row(i));
    }
  }
  Id id = push(std::move(out), nullptr);
  nodes_[id].back = [this, id, h, null_row, boundaries = std::move(boundaries),
                     total_len]() {
    const Tensor& g = nodes_[id].grad;
    const int d = g.cols;
    int k = 0;
    for (int i = 0; i < total_len; ++i) {
      if (i == boundaries[k]) {
        axpy(d, 1.0, g.row(i), grad_mut(h).row(k));
        ++k;
      } else if (k == 0) {
        axpy(d, 1.0, g.row(i), grad_mut(null_row).row(0));
      } else {
        axpy(d, 1.0, g.row(i), grad_mut(h).row(k - 1));
      }
    }
  };
  return id;
}

Tape::Id Tape::confidence_scale(Id u, Id c, bool hard) {
  const Tensor& uv = val(u);
  const Tensor& cv = val(c);
  assert(cv.rows == uv.rows && cv.cols == 1);
  Tensor out = uv;
  if (!hard) {
    for (int i = 0; i < out.rows; ++i) {
      const double s = cv.at(i, 0);
      for (int j = 0; j < out.cols; ++j) out.at(i, j) *= s;
    }
  }
  Id id = push(std::move(out), nullptr);
  nodes_[id].back = [this, id, u, c]() {
    const Tensor& g = nodes_[id].grad;
    const Tensor& uv = val(u);
    const Tensor& cv = val(c);
    for (int i = 0; i < g.rows; ++i) {
      const double s = cv.at(i, 0);
      double acc = 0.0;
      for (int j = 0; j < g.cols; ++j) {
        grad_mut(u).at(i, j) += g.at(i, j) * s;
        acc += g.at(i, j) * uv.at(i, j);
      }
      grad_mut(c).at(i, 0) += acc;
    }
  };
  return id;
}

void Tape::backward(Id root) {
  assert(val(root).rows == 1 && val(root).cols == 1);
  nodes_[root].grad.at(0, 0) = 1.0;
  for (int i = root; i >= 0; --i)
    if (nodes_[i].back) nodes_[i].back();
}

}  // namespace blm
