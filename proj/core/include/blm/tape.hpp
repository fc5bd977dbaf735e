#pragma once

#include <functional>
#include <string>
#include <vector>

#include "blm/tensor.hpp"

namespace blm {

// Named trainable parameter with gradient and optimizer state.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor m;  // AdamW first moment
  Tensor u;  // AdamW second moment

  Param() = default;
  Param(std::string n, Tensor v)
      : name(std::move(n)),
        value(std::move(v)),
        grad(value.rows, value.cols),
        m(value.rows, value.cols),
        u(value.rows, value.cols) {}

  void zero_grad() { grad.fill(0.0); }
};

// Reverse-mode autodiff over a linear tape of Tensor nodes. Ops may only
// reference earlier node ids, so reverse creation order is a valid
// topological order for backward.
class Tape {
 public:
  using Id = int;

  Id leaf(Tensor v);
  // Leaf bound to an external parameter; backward accumulates into p.grad.
  Id param(Param& p);

  const Tensor& val(Id id) const { return nodes_[id].val; }
  const Tensor& grad(Id id) const { return nodes_[id].grad; }

  // --- elementwise / shape ---
  Id add(Id a, Id b);
  Id sub(Id a, Id b);
  Id mul(Id a, Id b);
  Id affine(Id a, double alpha, double beta);  // alpha*a + beta
  Id add_rowvec(Id a, Id r);                   // a(LxC) + broadcast r(1xC)
  Id mul_colvec(Id a, Id c);                   // row i of a scaled by c(i,0)
  Id sigmoid(Id a);
  Id silu(Id a);
  Id matmul(Id a, Id b, bool ta = false, bool tb = false);
  Id gather_rows(Id a, std::vector<int> idx);
  Id concat_rows(Id a, Id b);
  Id rmsnorm(Id x, Id gain);  // gain is 1xC

  // --- reductions / losses ---
  Id sum_all(Id a);
  Id mean_all(Id a);
  // mean over rows of squared L2 distance between matching rows
  Id sq_l2_mean(Id a, Id b);
  // mean over rows of KL(softmax(t/T) || softmax(s/T)); t is a constant
  Id kl_from_const(const Tensor& teacher_logits, Id student_logits, double temperature);
  // mean CE over rows with target >= 0; target -1 rows are excluded
  Id cross_entropy_rows(Id logits, std::vector<int> targets);
  // mean BCE over all rows of p (Lx1) against labels y, with p clipped to [eps, 1-eps]
  Id bce(Id p, std::vector<int> y, double eps);
  // mean of p over rows where mask!=0; 0 if mask empty
  Id masked_mean(Id p, std::vector<char> mask);

  // --- sequence ops ---
  // h_t = gate_t (*) h_{t-1} + u_t, h_0 = 0
  Id linear_recurrence(Id gate, Id u);
  // per-head causal self-attention; q,k,v are Lxd with d = nhead*dh
  Id causal_attention(Id q, Id k, Id v, int nhead);
  // cosine of matching rows of a and b -> Lx1; rows where either norm < eps
  // yield 0 with zero gradient and bump *degenerate_count if given
  Id cosine_pairs(Id a, Id b, double eps = 1e-12, int* degenerate_count = nullptr);
  // z_1 = H_1; z_k = p_k*H_k + (1-p_k)*z_{k-1}
  Id smooth_chunks(Id h, Id p);
  // U_i = H_k at the final byte of chunk k, else H_{k-1} (null_row for k=1);
  // boundaries are the chunk-final byte indices, strictly increasing, last = L-1
  Id shifted_upsample(Id h, Id null_row, std::vector<int> boundaries, int total_len);
  // straight-through confidence scaling: forward is U (c rounded to 1) when
  // hard=true, c*U when hard=false; backward always treats output as c*U
  Id confidence_scale(Id u, Id c, bool hard);

  void backward(Id root);

  size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor val;
    Tensor grad;
    std::function<void()> back;
  };

  Id push(Tensor val, std::function<void()> back = nullptr);
  Tensor& grad_mut(Id id) { return nodes_[id].grad; }

  std::vector<Node> nodes_;
};

// Value-only helpers shared with inference/eval paths.
void softmax_inplace(double* x, int n);
double log_sum_exp(const double* x, int n);

}  // namespace blm
