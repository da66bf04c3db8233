#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace ceph3d::nn {

/// Dense row-major double tensor; the last dimension varies fastest.
struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(std::vector<std::int64_t> s) : shape(std::move(s)) {
        v.assign(static_cast<std::size_t>(numel_of(shape)), 0.0);
    }

    static std::int64_t numel_of(const std::vector<std::int64_t>& s) {
        std::int64_t n = 1;
        for (auto d : s) n *= d;
        return n;
    }
    std::int64_t numel() const { return static_cast<std::int64_t>(v.size()); }

    double* data() { return v.data(); }
    const double* data() const { return v.data(); }
};

/// One node of the computation tape: a value, an optional gradient buffer,
/// and a pull-style backward that scatters this node's gradient into its
/// parents. Graphs are rebuilt every step; parameters are long-lived nodes.
class Node {
public:
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool grad_allocated = false;
    std::string name;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (!grad_allocated) {
            grad = Tensor(value.shape);
            grad_allocated = true;
        }
    }
    void zero_grad() {
        if (grad_allocated)
            std::fill(grad.v.begin(), grad.v.end(), 0.0);
    }
};

using Var = std::shared_ptr<Node>;

Var make_input(Tensor value, bool requires_grad = false);
Var make_param(Tensor value, std::string name);

// ---- Operations -------------------------------------------------------------
// Spatial tensors are (N, C, D, H, W). Convolutions use kernel size 1 or 3
// with same-padding (pad = k/2); stride 2 halves even spatial dims exactly.
// Weight layout (Cout, Cin/groups, k, k, k); bias (Cout).

Var conv3d(const Var& x, const Var& w, const Var& b, int stride, int groups);
Var linear(const Var& x, const Var& w, const Var& b); // x (N,F), w (O,F), b (O)
Var relu(const Var& x);
Var sigmoid(const Var& x);
Var add(const Var& a, const Var& b);
Var scale(const Var& x, double c);
Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps = 1e-5);
Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var global_avg_pool(const Var& x);     // (N,C,D,H,W) -> (N,C)
Var upsample_nearest2(const Var& x);   // doubles D,H,W
Var reshape(const Var& x, std::vector<std::int64_t> shape);

/// Rectify-normalize each (n, l) channel and take expected indices. Output
/// (N, L, 3) holds per-axis coordinates normalized to [0,1] in (x, y, z)
/// order. The rectified mass is guarded by +1e-12 so gradients stay finite
/// on all-nonpositive maps (inference-level degeneracy is policed by the
/// caller via `dsnt_rectified_mass`).
Var dsnt_coords(const Var& x);
std::vector<double> dsnt_rectified_mass(const Tensor& x); // per (n,l)

/// Mean over all elements of the numerically stable binary cross-entropy
/// between sigmoid(logits) and target. Scalar output (shape {1}).
Var bce_with_logits_mean(const Var& logits, const Var& target);
Var mse_mean(const Var& pred, const Var& target);

/// Reverse-mode sweep from a scalar loss.
void backward(const Var& loss);

// ---- Optimizer ---------------------------------------------------------------

/// Adam with L2-coupled weight decay (decay folded into the gradient),
/// matching the common framework semantics.
class Adam {
public:
    Adam(std::vector<Var> params, double lr, double weight_decay,
         double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void zero_grad();
    void step();

    double lr;
    double weight_decay;

private:
    std::vector<Var> params_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    double beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
};

} // namespace ceph3d::nn
