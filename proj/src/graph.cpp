#include "dynmix/graph.hpp"

#include <algorithm>
#include <cmath>

#include "dynmix/rng.hpp"

namespace dynmix::ad {

Tensor Tensor::zeros(std::vector<int> s) {
    Tensor t;
    t.shape = std::move(s);
    t.data.assign(static_cast<size_t>(t.size()), 0.0);
    return t;
}

Tensor Tensor::matrix(int r, int c, std::vector<double> v) {
    if (static_cast<int>(v.size()) != r * c) throw ShapeError("matrix: payload size mismatch");
    return Tensor({r, c}, std::move(v));
}

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) throw ShapeError(std::string(op) + ": shape mismatch");
}

}  // namespace

Var Graph::push(Tensor val, std::function<void(Graph&, const Tensor&)> back, const char* op,
                bool differentiable) {
    if (!val.all_finite()) throw NonFiniteError(std::string(op) + ": non-finite result");
    Node n;
    n.val = std::move(val);
    n.back = std::move(back);
    n.differentiable = differentiable;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

void Graph::add_grad(int id, const std::vector<double>& g) {
    Node& n = nodes_[id];
    if (n.grad.data.empty()) n.grad = Tensor::zeros(n.val.shape);
    for (size_t i = 0; i < g.size(); ++i) n.grad.data[i] += g[i];
}

void Graph::add_grad_at(int id, int index, double g) {
    Node& n = nodes_[id];
    if (n.grad.data.empty()) n.grad = Tensor::zeros(n.val.shape);
    n.grad.data[index] += g;
}

Var Graph::constant(Tensor t) {
    if (!t.all_finite()) throw NonFiniteError("constant: non-finite payload");
    Node n;
    n.val = std::move(t);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Graph::param(Parameter& p) {
    Node n;
    n.val = p.value;
    n.param = &p;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Graph::add(Var a, Var b) {
    const Tensor& ta = nodes_[a.id].val;
    const Tensor& tb = nodes_[b.id].val;
    check_same_shape(ta, tb, "add");
    Tensor out = ta;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += tb.data[i];
    return push(std::move(out), [a, b](Graph& g, const Tensor& gr) {
        g.add_grad(a.id, gr.data);
        g.add_grad(b.id, gr.data);
    }, "add");
}

Var Graph::sub(Var a, Var b) {
    const Tensor& ta = nodes_[a.id].val;
    const Tensor& tb = nodes_[b.id].val;
    check_same_shape(ta, tb, "sub");
    Tensor out = ta;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= tb.data[i];
    return push(std::move(out), [a, b](Graph& g, const Tensor& gr) {
        g.add_grad(a.id, gr.data);
        Node& nb = g.nodes_[b.id];
        if (nb.grad.data.empty()) nb.grad = Tensor::zeros(nb.val.shape);
        for (size_t i = 0; i < gr.data.size(); ++i) nb.grad.data[i] -= gr.data[i];
    }, "sub");
}

Var Graph::mul(Var a, Var b) {
    const Tensor& ta = nodes_[a.id].val;
    const Tensor& tb = nodes_[b.id].val;
    check_same_shape(ta, tb, "mul");
    Tensor out = ta;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= tb.data[i];
    return push(std::move(out), [a, b](Graph& g, const Tensor& gr) {
        const Tensor& va = g.nodes_[a.id].val;
        const Tensor& vb = g.nodes_[b.id].val;
        Node& na = g.nodes_[a.id];
        Node& nb = g.nodes_[b.id];
        if (na.grad.data.empty()) na.grad = Tensor::zeros(va.shape);
        if (nb.grad.data.empty()) nb.grad = Tensor::zeros(vb.shape);
        for (size_t i = 0; i < gr.data.size(); ++i) {
            na.grad.data[i] += gr.data[i] * vb.data[i];
            nb.grad.data[i] += gr.data[i] * va.data[i];
        }
    }, "mul");
}

Var Graph::div(Var a, Var b) {
    const Tensor& ta = nodes_[a.id].val;
    const Tensor& tb = nodes_[b.id].val;
    check_same_shape(ta, tb, "div");
    Tensor out = ta;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] /= tb.data[i];
    return push(std::move(out), [a, b](Graph& g, const Tensor& gr) {
        const Tensor& va = g.nodes_[a.id].val;
        const Tensor& vb = g.nodes_[b.id].val;
        Node& na = g.nodes_[a.id];
        Node& nb = g.nodes_[b.id];
        if (na.grad.data.empty()) na.grad = Tensor::zeros(va.shape);
        if (nb.grad.data.empty()) nb.grad = Tensor::zeros(vb.shape);
        for (size_t i = 0; i < gr.data.size(); ++i) {
            double inv = 1.0 / vb.data[i];
            na.grad.data[i] += gr.data[i] * inv;
            nb.grad.data[i] -= gr.data[i] * va.data[i] * inv * inv;
        }
    }, "div");
}

Var Graph::neg(Var a) { return scale(a, -1.0); }

Var Graph::scale(Var a, double c) {
    Tensor out = nodes_[a.id].val;
    for (double& v : out.data) v *= c;
    return push(std::move(out), [a, c](Graph& g, const Tensor& gr) {
        Node& na = g.nodes_[a.id];
        if (na.grad.data.empty()) na.grad = Tensor::zeros(na.val.shape);
        for (size_t i = 0; i < gr.data.size(); ++i) na.grad.data[i] += c * gr.data[i];
    }, "scale");
}

Var Graph::add_scalar(Var a, double c) {
    Tensor out = nodes_[a.id].val;
    for (double& v : out.data) v += c;
    return push(std::move(out), [a](Graph& g, const Tensor& gr) {
        g.add_grad(a.id, gr.data);
    }, "add_scalar");
}

Var Graph::exp(Var a) {
    Tensor out = nodes_[a.id].val;
    for (double& v : out.data) v = std::exp(v);
    Tensor saved = out;
    return push(std::move(out), [a, saved](Graph& g, const Tensor& gr) {
        Node& na = g.nodes_[a.id];
        if (na.grad.data.empty()) na.grad = Tensor::zeros(na.val.shape);
        for (size_t i = 0; i < gr.data.size(); ++i)
            na.grad.data[i] += gr.data[i] * saved.data[i];
    }, "exp");
}

Var Graph::log(Var a) {
    Tensor out = nodes_[a.id].val;
    for (double& v : out.data) v = std::log(v);
    return push(std::move(out), [a](Graph& g, const Tensor& gr) {
        Node& na = g.nodes_[a.id];
        if (na.grad.data.empty()) na.grad = Tensor::zeros(na.val.shape);
        for (size_t i = 0; i < gr.data.size(); ++i)
            na.grad.data[i] += gr.data[i] / na.val.data[i];
    }, "log");
}

Var Graph::tanh(Var a) {
    Tensor out = nodes_[a.id].val;
    for (double& v : out.data) v = std::tanh(v);
    Tensor saved = out;
    return push(std::move(out), [a, saved](Graph& g, const Tensor& gr) {
        Node& na = g.nodes_[a.id];
        if (na.grad.data.empty()) na.grad = Tensor::zeros(na.val.shape);
        for (size_t i = 0; i < gr.data.size(); ++i)
            na.grad.data[i] += gr.data[i] * (1.0 - saved.data[i] * saved.data[i]);
    }, "tanh");
}

Var Graph::sigmoid(Var a) {
    Tensor out = nodes_[a.id].val;
    for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
    Tensor saved = out;
    return push(std::move(out), [a, saved](Graph& g, const Tensor& gr) {
        Node& na = g.nodes_[a.id];
        if (na.grad.data.empty()) na.grad = Tensor::zeros(na.val.shape);
        for (size_t i = 0; i < gr.data.size(); ++i) {
            double s = saved.data[i];
            na.grad.data[i] += gr.data[i] * s * (1.0 - s);
        }
    }, "sigmoid");
}

Var Graph::softplus(Var a) {
    const Tensor& ta = nodes_[a.id].val;
    Tensor out = ta;
    for (double& v : out.data) {
        if (v > 30.0)
            ;  // softplus(v) ~ v
        else if (v < -30.0)
            v = std::exp(v);
        else
            v = std::log1p(std::exp(v));
    }
    return push(std::move(out), [a](Graph& g, const Tensor& gr) {
        Node& na = g.nodes_[a.id];
        if (na.grad.data.empty()) na.grad = Tensor::zeros(na.val.shape);
        for (size_t i = 0; i < gr.data.size(); ++i) {
            double x = na.val.data[i];
            na.grad.data[i] += gr.data[i] / (1.0 + std::exp(-x));
        }
    }, "softplus");
}

Var Graph::affine(Var x, Var W, Var b) {
    const Tensor& tx = nodes_[x.id].val;
    const Tensor& tw = nodes_[W.id].val;
    const Tensor& tb = nodes_[b.id].val;
    if (tw.shape.size() != 2) throw ShapeError("affine: W must be a matrix");
    int m = tw.shape[0], n = tw.shape[1];
    if (tx.size() != n || tb.size() != m) throw ShapeError("affine: incompatible shapes");
    Tensor out = Tensor::zeros({m});
    for (int i = 0; i < m; ++i) {
        double acc = tb.data[i];
        const double* wrow = &tw.data[static_cast<size_t>(i) * n];
        for (int j = 0; j < n; ++j) acc += wrow[j] * tx.data[j];
        out.data[i] = acc;
    }
    return push(std::move(out), [x, W, b, m, n](Graph& g, const Tensor& gr) {
        const Tensor& vx = g.nodes_[x.id].val;
        const Tensor& vw = g.nodes_[W.id].val;
        Node& nx = g.nodes_[x.id];
        Node& nw = g.nodes_[W.id];
        Node& nb = g.nodes_[b.id];
        if (nx.grad.data.empty()) nx.grad = Tensor::zeros(nx.val.shape);
        if (nw.grad.data.empty()) nw.grad = Tensor::zeros(nw.val.shape);
        if (nb.grad.data.empty()) nb.grad = Tensor::zeros(nb.val.shape);
        for (int i = 0; i < m; ++i) {
            double gi = gr.data[i];
            nb.grad.data[i] += gi;
            const double* wrow = &vw.data[static_cast<size_t>(i) * n];
            double* wgrow = &nw.grad.data[static_cast<size_t>(i) * n];
            for (int j = 0; j < n; ++j) {
                nx.grad.data[j] += gi * wrow[j];
                wgrow[j] += gi * vx.data[j];
            }
        }
    }, "affine");
}

Var Graph::softmax(Var logits) {
    const Tensor& tl = nodes_[logits.id].val;
    Tensor out = tl;
    double mx = *std::max_element(out.data.begin(), out.data.end());
    double z = 0.0;
    for (double& v : out.data) {
        v = std::exp(v - mx);
        z += v;
    }
    for (double& v : out.data) v /= z;
    Tensor saved = out;
    return push(std::move(out), [logits, saved](Graph& g, const Tensor& gr) {
        Node& nl = g.nodes_[logits.id];
        if (nl.grad.data.empty()) nl.grad = Tensor::zeros(nl.val.shape);
        double dotgy = 0.0;
        for (size_t i = 0; i < gr.data.size(); ++i) dotgy += gr.data[i] * saved.data[i];
        for (size_t i = 0; i < gr.data.size(); ++i)
            nl.grad.data[i] += saved.data[i] * (gr.data[i] - dotgy);
    }, "softmax");
}

Var Graph::log_softmax(Var logits) {
    const Tensor& tl = nodes_[logits.id].val;
    Tensor out = tl;
    double mx = *std::max_element(out.data.begin(), out.data.end());
    double z = 0.0;
    for (double v : out.data) z += std::exp(v - mx);
    double lse = mx + std::log(z);
    for (double& v : out.data) v -= lse;
    Tensor saved = out;
    return push(std::move(out), [logits, saved](Graph& g, const Tensor& gr) {
        Node& nl = g.nodes_[logits.id];
        if (nl.grad.data.empty()) nl.grad = Tensor::zeros(nl.val.shape);
        double gsum = 0.0;
        for (double gv : gr.data) gsum += gv;
        for (size_t i = 0; i < gr.data.size(); ++i)
            nl.grad.data[i] += gr.data[i] - std::exp(saved.data[i]) * gsum;
    }, "log_softmax");
}

Var Graph::sum(Var a) {
    const Tensor& ta = nodes_[a.id].val;
    double acc = 0.0;
    for (double v : ta.data) acc += v;
    return push(Tensor::scalar(acc), [a](Graph& g, const Tensor& gr) {
        Node& na = g.nodes_[a.id];
        if (na.grad.data.empty()) na.grad = Tensor::zeros(na.val.shape);
        for (double& gv : na.grad.data) gv += gr.data[0];
    }, "sum");
}

Var Graph::dot(Var a, Var b) {
    const Tensor& ta = nodes_[a.id].val;
    const Tensor& tb = nodes_[b.id].val;
    check_same_shape(ta, tb, "dot");
    double acc = 0.0;
    for (size_t i = 0; i < ta.data.size(); ++i) acc += ta.data[i] * tb.data[i];
    return push(Tensor::scalar(acc), [a, b](Graph& g, const Tensor& gr) {
        const Tensor& va = g.nodes_[a.id].val;
        const Tensor& vb = g.nodes_[b.id].val;
        Node& na = g.nodes_[a.id];
        Node& nb = g.nodes_[b.id];
        if (na.grad.data.empty()) na.grad = Tensor::zeros(va.shape);
        if (nb.grad.data.empty()) nb.grad = Tensor::zeros(vb.shape);
        double g0 = gr.data[0];
        for (size_t i = 0; i < va.data.size(); ++i) {
            na.grad.data[i] += g0 * vb.data[i];
            nb.grad.data[i] += g0 * va.data[i];
        }
    }, "dot");
}

Var Graph::concat(Var a, Var b) {
    const Tensor& ta = nodes_[a.id].val;
    const Tensor& tb = nodes_[b.id].val;
    int na = ta.size(), nb = tb.size();
    Tensor out = Tensor::zeros({na + nb});
    std::copy(ta.data.begin(), ta.data.end(), out.data.begin());
    std::copy(tb.data.begin(), tb.data.end(), out.data.begin() + na);
    return push(std::move(out), [a, b, na, nb](Graph& g, const Tensor& gr) {
        Node& xa = g.nodes_[a.id];
        Node& xb = g.nodes_[b.id];
        if (xa.grad.data.empty()) xa.grad = Tensor::zeros(xa.val.shape);
        if (xb.grad.data.empty()) xb.grad = Tensor::zeros(xb.val.shape);
        for (int i = 0; i < na; ++i) xa.grad.data[i] += gr.data[i];
        for (int i = 0; i < nb; ++i) xb.grad.data[i] += gr.data[na + i];
    }, "concat");
}

Var Graph::pack(const std::vector<Var>& scalars) {
    int n = static_cast<int>(scalars.size());
    Tensor out = Tensor::zeros({n});
    for (int i = 0; i < n; ++i) {
        const Tensor& t = nodes_[scalars[i].id].val;
        if (!t.is_scalar()) throw ShapeError("pack: inputs must be scalars");
        out.data[i] = t.data[0];
    }
    std::vector<Var> srcs = scalars;
    return push(std::move(out), [srcs](Graph& g, const Tensor& gr) {
        for (size_t i = 0; i < srcs.size(); ++i) g.add_grad_at(srcs[i].id, 0, gr.data[i]);
    }, "pack");
}

Var Graph::at(Var v, int i) {
    const Tensor& tv = nodes_[v.id].val;
    if (i < 0 || i >= tv.size()) throw ShapeError("at: index out of range");
    return push(Tensor::scalar(tv.data[i]), [v, i](Graph& g, const Tensor& gr) {
        g.add_grad_at(v.id, i, gr.data[0]);
    }, "at");
}

Var Graph::row(Var m, int r) {
    const Tensor& tm = nodes_[m.id].val;
    if (tm.shape.size() != 2) throw ShapeError("row: input must be a matrix");
    int rows = tm.shape[0], cols = tm.shape[1];
    if (r < 0 || r >= rows) throw ShapeError("row: index out of range");
    Tensor out = Tensor::zeros({cols});
    std::copy(tm.data.begin() + static_cast<size_t>(r) * cols,
              tm.data.begin() + static_cast<size_t>(r + 1) * cols, out.data.begin());
    return push(std::move(out), [m, r, cols](Graph& g, const Tensor& gr) {
        Node& nm = g.nodes_[m.id];
        if (nm.grad.data.empty()) nm.grad = Tensor::zeros(nm.val.shape);
        for (int j = 0; j < cols; ++j)
            nm.grad.data[static_cast<size_t>(r) * cols + j] += gr.data[j];
    }, "row");
}

Var Graph::col(Var m, int c) {
    const Tensor& tm = nodes_[m.id].val;
    if (tm.shape.size() != 2) throw ShapeError("col: input must be a matrix");
    int rows = tm.shape[0], cols = tm.shape[1];
    if (c < 0 || c >= cols) throw ShapeError("col: index out of range");
    Tensor out = Tensor::zeros({rows});
    for (int i = 0; i < rows; ++i) out.data[i] = tm.data[static_cast<size_t>(i) * cols + c];
    return push(std::move(out), [m, c, cols](Graph& g, const Tensor& gr) {
        Node& nm = g.nodes_[m.id];
        if (nm.grad.data.empty()) nm.grad = Tensor::zeros(nm.val.shape);
        for (size_t i = 0; i < gr.data.size(); ++i)
            nm.grad.data[i * cols + c] += gr.data[i];
    }, "col");
}

Var Graph::smul(Var s, Var v) {
    const Tensor& ts = nodes_[s.id].val;
    const Tensor& tv = nodes_[v.id].val;
    if (!ts.is_scalar()) throw ShapeError("smul: first input must be scalar");
    Tensor out = tv;
    for (double& x : out.data) x *= ts.data[0];
    return push(std::move(out), [s, v](Graph& g, const Tensor& gr) {
        const Tensor& vs = g.nodes_[s.id].val;
        const Tensor& vv = g.nodes_[v.id].val;
        Node& ns = g.nodes_[s.id];
        Node& nv = g.nodes_[v.id];
        if (ns.grad.data.empty()) ns.grad = Tensor::zeros(vs.shape);
        if (nv.grad.data.empty()) nv.grad = Tensor::zeros(vv.shape);
        double acc = 0.0;
        for (size_t i = 0; i < gr.data.size(); ++i) {
            acc += gr.data[i] * vv.data[i];
            nv.grad.data[i] += gr.data[i] * vs.data[0];
        }
        ns.grad.data[0] += acc;
    }, "smul");
}

Var Graph::masked_sqdist(const std::vector<double>& x, const std::vector<uint8_t>& mask, Var mu) {
    const Tensor& tm = nodes_[mu.id].val;
    if (tm.size() != static_cast<int>(x.size()) || x.size() != mask.size())
        throw ShapeError("masked_sqdist: size mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        if (!mask[i]) continue;
        double dlt = tm.data[i] - x[i];
        acc += dlt * dlt;
    }
    std::vector<double> xc = x;
    std::vector<uint8_t> mc = mask;
    return push(Tensor::scalar(acc), [mu, xc, mc](Graph& g, const Tensor& gr) {
        Node& nm = g.nodes_[mu.id];
        if (nm.grad.data.empty()) nm.grad = Tensor::zeros(nm.val.shape);
        for (size_t i = 0; i < xc.size(); ++i) {
            if (!mc[i]) continue;
            nm.grad.data[i] += gr.data[0] * 2.0 * (nm.val.data[i] - xc[i]);
        }
    }, "masked_sqdist");
}

Var Graph::categorical_sample(Var probs, uint64_t seed) {
    const Tensor& tp = nodes_[probs.id].val;
    rng::Engine eng(seed);
    std::vector<double> p(tp.data.begin(), tp.data.end());
    int idx = eng.categorical(p);
    Tensor out = Tensor::zeros(tp.shape);
    out.data[idx] = 1.0;
    return push(std::move(out), {}, "categorical_sample", /*differentiable=*/false);
}

double Graph::value(Var v) const {
    const Tensor& t = nodes_[v.id].val;
    if (!t.is_scalar()) throw ShapeError("value: node is not scalar");
    return t.data[0];
}

void Graph::backward(Var loss) {
    if (!loss.valid() || loss.id >= static_cast<int>(nodes_.size()))
        throw InvalidArgument("backward: invalid loss node");
    if (!nodes_[loss.id].val.is_scalar()) throw ShapeError("backward: loss must be scalar");
    nodes_[loss.id].grad = Tensor::scalar(1.0);
    for (int id = loss.id; id >= 0; --id) {
        Node& n = nodes_[id];
        if (n.grad.data.empty()) continue;  // not reached from the loss
        bool nonzero = false;
        for (double g : n.grad.data)
            if (g != 0.0) {
                nonzero = true;
                break;
            }
        if (!nonzero) continue;
        if (!n.differentiable)
            throw NonDifferentiableError(
                "backward: gradient reached a sampling node without a relaxation");
        if (n.back) n.back(*this, n.grad);
        if (n.param) {
            for (size_t i = 0; i < n.grad.data.size(); ++i)
                n.param->grad.data[i] += n.grad.data[i];
        }
    }
}

FdReport fd_check(const std::function<double()>& loss,
                  const std::function<void()>& analytic_grads,
                  std::span<Parameter* const> params, double h, double tol, double floor) {
    require(h > 0, "fd_check: h must be positive");
    analytic_grads();
    std::vector<Tensor> saved;
    saved.reserve(params.size());
    for (Parameter* p : params) saved.push_back(p->grad);

    FdReport report;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Parameter* p = params[pi];
        FdEntry entry;
        entry.name = p->name;
        for (size_t i = 0; i < p->value.data.size(); ++i) {
            double orig = p->value.data[i];
            p->value.data[i] = orig + h;
            double fp = loss();
            p->value.data[i] = orig - h;
            double fm = loss();
            p->value.data[i] = orig;
            double fd = (fp - fm) / (2.0 * h);
            double an = saved[pi].data[i];
            double abs_err = std::abs(an - fd);
            double rel = abs_err / std::max({std::abs(an), std::abs(fd), floor});
            entry.max_abs_err = std::max(entry.max_abs_err, abs_err);
            entry.max_rel_err = std::max(entry.max_rel_err, rel);
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.entries.push_back(std::move(entry));
    }
    report.pass = report.max_rel_err < tol;
    return report;
}

}  // namespace dynmix::ad
