#ifndef DYNMIX_GRAPH_HPP
#define DYNMIX_GRAPH_HPP

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dynmix/common.hpp"

namespace dynmix::ad {

/// Dense tensor: shape plus a flat row-major payload. All public operations
/// keep entries finite; a NaN/Inf result raises NonFiniteError instead of
/// propagating.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {}

    static Tensor scalar(double v) { return Tensor({}, {v}); }
    static Tensor vec(std::vector<double> v) {
        int n = static_cast<int>(v.size());
        return Tensor({n}, std::move(v));
    }
    static Tensor zeros(std::vector<int> s);
    static Tensor matrix(int r, int c, std::vector<double> v);

    int size() const {
        int n = 1;
        for (int s : shape) n *= s;
        return n;
    }
    bool is_scalar() const { return shape.empty() || size() == 1; }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool all_finite() const;
};

/// Named trainable tensor with an accumulated gradient of the same shape.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string n, Tensor v)
        : name(std::move(n)), grad(Tensor::zeros(v.shape)) {
        value = std::move(v);
    }
    void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

struct NonDifferentiableError : Error {
    explicit NonDifferentiableError(const std::string& msg) : Error(msg) {}
};

/// Handle to a node on a Graph tape.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

/// Single-threaded reverse-mode tape over the op set required by the model:
/// affine maps, pointwise nonlinearities, softmax/log-softmax, reductions,
/// concatenation and masked squared distance. Distinct graphs are
/// independent; one graph must not be shared across threads.
class Graph {
public:
    Var constant(Tensor t);
    Var scalar(double v) { return constant(Tensor::scalar(v)); }
    Var param(Parameter& p);

    // Elementwise, shapes must match.
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var div(Var a, Var b);

    Var neg(Var a);
    Var scale(Var a, double c);
    Var add_scalar(Var a, double c);

    Var exp(Var a);
    Var log(Var a);
    Var tanh(Var a);
    Var sigmoid(Var a);
    Var softplus(Var a);

    /// y = W x + b with W of shape m x n, x of shape n, b of shape m.
    Var affine(Var x, Var W, Var b);

    Var softmax(Var logits);
    Var log_softmax(Var logits);

    Var sum(Var a);
    Var dot(Var a, Var b);
    Var concat(Var a, Var b);

    /// Assembles scalars into a vector.
    Var pack(const std::vector<Var>& scalars);
    /// Scalar element of a vector.
    Var at(Var v, int i);
    /// Row r of a matrix as a vector.
    Var row(Var m, int r);
    /// Column c of a matrix as a vector.
    Var col(Var m, int c);
    /// Scalar times vector.
    Var smul(Var s, Var v);

    /// Sum over observed entries of (mu_i - x_i)^2. Entries of x with
    /// mask = 0 are never read, so placeholder payloads cannot leak in.
    Var masked_sqdist(const std::vector<double>& x, const std::vector<uint8_t>& mask, Var mu);

    /// Hard one-hot draw from a probability vector. Not differentiable:
    /// backward through this node raises NonDifferentiableError. Training
    /// paths must use the Gumbel-softmax relaxation instead.
    Var categorical_sample(Var probs, uint64_t seed);

    const Tensor& tensor(Var v) const { return nodes_[v.id].val; }
    double value(Var v) const;
    const Tensor& grad(Var v) const { return nodes_[v.id].grad; }

    /// Reverse sweep from a scalar loss. Gradients accumulate into every
    /// Parameter leaf reachable from the loss; call Parameter::zero_grad
    /// between optimization steps.
    void backward(Var loss);

    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor val;
        Tensor grad;
        bool differentiable = true;
        Parameter* param = nullptr;
        std::function<void(Graph&, const Tensor&)> back;  // receives this node's grad
    };

    std::vector<Node> nodes_;

    Var push(Tensor val, std::function<void(Graph&, const Tensor&)> back, const char* op,
             bool differentiable = true);
    void add_grad(int id, const std::vector<double>& g);
    void add_grad_at(int id, int index, double g);

    friend struct GradAccess;
};

/// Per-parameter outcome of a finite-difference gradient comparison.
struct FdEntry {
    std::string name;
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
};

struct FdReport {
    std::vector<FdEntry> entries;
    double max_rel_err = 0.0;
    bool pass = false;
};

/// Compares analytic gradients against central finite differences.
/// `loss` evaluates the objective at the current parameter values;
/// `analytic_grads` zeroes gradients, rebuilds the graph and runs backward.
/// Relative error per element is |a - f| / max(|a|, |f|, floor).
FdReport fd_check(const std::function<double()>& loss,
                  const std::function<void()>& analytic_grads,
                  std::span<Parameter* const> params, double h, double tol,
                  double floor = 1e-2);

}  // namespace dynmix::ad

#endif
