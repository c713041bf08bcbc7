#include "mdx/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_set>

#include "mdx/kernels.hpp"
#include "mdx/log.hpp"

namespace mdx {

namespace detail {

struct Node {
    Tensor value;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;  // reads this->grad, accumulates into parents
    Tensor grad;
    bool grad_set = false;
    std::uint64_t id = 0;
    const char* op = "leaf";
};

namespace {
std::atomic<std::uint64_t> g_next_id{1};
}

std::shared_ptr<Node> new_node(Tensor value, bool requires_grad, const char* op) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    n->op = op;
    return n;
}

void accumulate(Node& node, const Tensor& g) {
    if (!node.grad_set) {
        node.grad = g;
        node.grad_set = true;
        return;
    }
    double* dst = node.grad.data();
    const double* src = g.data();
    const std::int64_t n = node.grad.size();
    for (std::int64_t i = 0; i < n; ++i) dst[i] += src[i];
}

}  // namespace detail

using detail::Node;

const Tensor& Var::value() const { return n_->value; }
bool Var::requires_grad() const { return n_ && n_->requires_grad; }
std::uint64_t Var::id() const { return n_ ? n_->id : 0; }
bool Var::grad_populated() const { return n_ && n_->grad_set; }

Tensor Var::grad() const {
    if (n_ && n_->grad_set) return n_->grad;
    return Tensor(n_ ? n_->value.shape() : std::vector<std::int64_t>{});
}

Var make_leaf(Tensor value, bool requires_grad) {
    return Var(detail::new_node(std::move(value), requires_grad, "leaf"));
}

Var make_constant(Tensor value) { return make_leaf(std::move(value), false); }

namespace {

void check_same_shape(const char* op, const Var& a, const Var& b) {
    if (!a.value().same_shape(b.value())) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.value().shape_str() +
                                    " vs " + b.value().shape_str());
    }
}

Var unary(const char* op, const Var& a, Tensor out,
          std::function<void(Node&, Node&)> back) {
    auto n = detail::new_node(std::move(out), a.requires_grad(), op);
    n->parents = {a.ptr()};
    if (a.requires_grad()) {
        n->backprop = [back = std::move(back)](Node& self) { back(self, *self.parents[0]); };
    }
    return Var(n);
}

Tensor transpose_values(const Tensor& t) {
    const std::int64_t r = t.dim(0), c = t.dim(1);
    Tensor out({c, r});
    for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j) out.at2(j, i) = t.at2(i, j);
    return out;
}

}  // namespace

Var add(const Var& a, const Var& b) {
    check_same_shape("add", a, b);
    Tensor out(a.value().shape());
    const std::int64_t n = out.size();
    for (std::int64_t i = 0; i < n; ++i) out[i] = a.value()[i] + b.value()[i];
    auto node = detail::new_node(std::move(out), a.requires_grad() || b.requires_grad(), "add");
    node->parents = {a.ptr(), b.ptr()};
    node->backprop = [](Node& self) {
        if (self.parents[0]->requires_grad) detail::accumulate(*self.parents[0], self.grad);
        if (self.parents[1]->requires_grad) detail::accumulate(*self.parents[1], self.grad);
    };
    return Var(node);
}

Var sub(const Var& a, const Var& b) {
    check_same_shape("sub", a, b);
    Tensor out(a.value().shape());
    const std::int64_t n = out.size();
    for (std::int64_t i = 0; i < n; ++i) out[i] = a.value()[i] - b.value()[i];
    auto node = detail::new_node(std::move(out), a.requires_grad() || b.requires_grad(), "sub");
    node->parents = {a.ptr(), b.ptr()};
    node->backprop = [](Node& self) {
        if (self.parents[0]->requires_grad) detail::accumulate(*self.parents[0], self.grad);
        if (self.parents[1]->requires_grad) {
            Tensor neg(self.grad.shape());
            for (std::int64_t i = 0; i < neg.size(); ++i) neg[i] = -self.grad[i];
            detail::accumulate(*self.parents[1], neg);
        }
    };
    return Var(node);
}

Var mul(const Var& a, const Var& b) {
    check_same_shape("mul", a, b);
    Tensor out(a.value().shape());
    const std::int64_t n = out.size();
    for (std::int64_t i = 0; i < n; ++i) out[i] = a.value()[i] * b.value()[i];
    auto node = detail::new_node(std::move(out), a.requires_grad() || b.requires_grad(), "mul");
    node->parents = {a.ptr(), b.ptr()};
    node->backprop = [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) {
            Tensor ga(self.grad.shape());
            for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] = self.grad[i] * pb.value[i];
            detail::accumulate(pa, ga);
        }
        if (pb.requires_grad) {
            Tensor gb(self.grad.shape());
            for (std::int64_t i = 0; i < gb.size(); ++i) gb[i] = self.grad[i] * pa.value[i];
            detail::accumulate(pb, gb);
        }
    };
    return Var(node);
}

Var scale(const Var& a, double factor) {
    Tensor out(a.value().shape());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * factor;
    return unary("scale", a, std::move(out), [factor](Node& self, Node& pa) {
        Tensor ga(self.grad.shape());
        for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] = self.grad[i] * factor;
        detail::accumulate(pa, ga);
    });
}

Var add_bias(const Var& mat, const Var& bias) {
    if (mat.value().rank() != 2 || bias.value().rank() != 1 || mat.value().dim(1) != bias.value().dim(0)) {
        throw std::invalid_argument("add_bias: shape mismatch " + mat.value().shape_str() + " vs " +
                                    bias.value().shape_str());
    }
    const std::int64_t r = mat.value().dim(0), c = mat.value().dim(1);
    Tensor out({r, c});
    for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j) out.at2(i, j) = mat.value().at2(i, j) + bias.value()[j];
    auto node = detail::new_node(std::move(out), mat.requires_grad() || bias.requires_grad(), "add_bias");
    node->parents = {mat.ptr(), bias.ptr()};
    node->backprop = [r, c](Node& self) {
        if (self.parents[0]->requires_grad) detail::accumulate(*self.parents[0], self.grad);
        if (self.parents[1]->requires_grad) {
            Tensor gb({c});
            for (std::int64_t j = 0; j < c; ++j) {
                double acc = 0.0;
                for (std::int64_t i = 0; i < r; ++i) acc += self.grad.at2(i, j);
                gb[j] = acc;
            }
            detail::accumulate(*self.parents[1], gb);
        }
    };
    return Var(node);
}

Var matmul(const Var& a, const Var& b) {
    if (a.value().rank() != 2 || b.value().rank() != 2 || a.value().dim(1) != b.value().dim(0)) {
        throw std::invalid_argument("matmul: shape mismatch " + a.value().shape_str() + " vs " +
                                    b.value().shape_str());
    }
    const std::int64_t m = a.value().dim(0), k = a.value().dim(1), n = b.value().dim(1);
    Tensor out({m, n});
    kernels::matmul(a.value().data(), b.value().data(), out.data(), m, k, n);
    auto node = detail::new_node(std::move(out), a.requires_grad() || b.requires_grad(), "matmul");
    node->parents = {a.ptr(), b.ptr()};
    node->backprop = [m, k, n](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) {
            Tensor ga({m, k});  // dA = G * B^T
            kernels::matmul_nt(self.grad.data(), pb.value.data(), ga.data(), m, n, k);
            detail::accumulate(pa, ga);
        }
        if (pb.requires_grad) {
            Tensor at = transpose_values(pa.value);  // dB = A^T * G
            Tensor gb({k, n});
            kernels::matmul(at.data(), self.grad.data(), gb.data(), k, m, n);
            detail::accumulate(pb, gb);
        }
    };
    return Var(node);
}

Var transpose(const Var& a) {
    if (a.value().rank() != 2) {
        throw std::invalid_argument("transpose: expected rank-2 tensor, got " + a.value().shape_str());
    }
    return unary("transpose", a, transpose_values(a.value()), [](Node& self, Node& pa) {
        detail::accumulate(pa, transpose_values(self.grad));
    });
}

Var conv2d(const Var& x, const Var& w, const Var& bias, std::int64_t pad) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    if (xv.rank() != 3 || wv.rank() != 4) {
        throw std::invalid_argument("conv2d: expected x (H,W,Ci) and w (K,K,Ci,Co), got " +
                                    xv.shape_str() + " and " + wv.shape_str());
    }
    if (wv.dim(0) != wv.dim(1) || wv.dim(2) != xv.dim(2)) {
        throw std::invalid_argument("conv2d: kernel " + wv.shape_str() + " incompatible with input " +
                                    xv.shape_str());
    }
    if (pad < 0) throw std::invalid_argument("conv2d: negative padding");
    const std::int64_t h = xv.dim(0), wd = xv.dim(1), ci = xv.dim(2);
    const std::int64_t ksize = wv.dim(0), co = wv.dim(3);
    if (bias.defined() && (bias.value().rank() != 1 || bias.value().dim(0) != co)) {
        throw std::invalid_argument("conv2d: bias shape " + bias.value().shape_str() +
                                    " does not match output channels " + std::to_string(co));
    }
    if (2 * pad + 1 != ksize) {
        // Same-size output is all the toy models need; other paddings would
        // change the output extents and the kernels assume they do not.
        throw std::invalid_argument("conv2d: pad must equal (K-1)/2 for same-size output");
    }

    Tensor out({h, wd, co});
    kernels::conv2d(xv.data(), wv.data(), bias.defined() ? bias.value().data() : nullptr, out.data(),
                    h, wd, ci, co, ksize, pad);
    bool req = x.requires_grad() || w.requires_grad() || (bias.defined() && bias.requires_grad());
    auto node = detail::new_node(std::move(out), req, "conv2d");
    node->parents = {x.ptr(), w.ptr()};
    if (bias.defined()) node->parents.push_back(bias.ptr());
    node->backprop = [h, wd, ci, co, ksize, pad](Node& self) {
        Node& px = *self.parents[0];
        Node& pw = *self.parents[1];
        Node* pb = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
        if (px.requires_grad) {
            Tensor dx({h, wd, ci});
            kernels::conv2d_grad_input(self.grad.data(), pw.value.data(), dx.data(),
                                       h, wd, ci, co, ksize, pad);
            detail::accumulate(px, dx);
        }
        if (pw.requires_grad || (pb && pb->requires_grad)) {
            Tensor dw({ksize, ksize, ci, co});
            Tensor db({co});
            kernels::conv2d_grad_weights(px.value.data(), self.grad.data(), dw.data(),
                                         pb ? db.data() : nullptr, h, wd, ci, co, ksize, pad);
            if (pw.requires_grad) detail::accumulate(pw, dw);
            if (pb && pb->requires_grad) detail::accumulate(*pb, db);
        }
    };
    return Var(node);
}

Var relu(const Var& a) {
    Tensor out(a.value().shape());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] > 0.0 ? a.value()[i] : 0.0;
    // Subgradient at exactly 0 is taken as 0.
    return unary("relu", a, std::move(out), [](Node& self, Node& pa) {
        Tensor ga(self.grad.shape());
        for (std::int64_t i = 0; i < ga.size(); ++i) ga[i] = pa.value[i] > 0.0 ? self.grad[i] : 0.0;
        detail::accumulate(pa, ga);
    });
}

Var softplus(const Var& a) {
    Tensor out(a.value().shape());
    for (std::int64_t i = 0; i < out.size(); ++i) {
        const double v = a.value()[i];
        out[i] = v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
    }
    return unary("softplus", a, std::move(out), [](Node& self, Node& pa) {
        Tensor ga(self.grad.shape());
        for (std::int64_t i = 0; i < ga.size(); ++i) {
            const double v = pa.value[i];
            ga[i] = self.grad[i] / (1.0 + std::exp(-v));
        }
        detail::accumulate(pa, ga);
    });
}

Var softmax_last(const Var& a) {
    if (a.value().rank() < 1) throw std::invalid_argument("softmax_last: rank-0 tensor");
    const std::int64_t cols = a.value().dim(a.value().rank() - 1);
    const std::int64_t rows = a.value().size() / cols;
    Tensor out(a.value().shape());
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* in = a.value().data() + r * cols;
        double* o = out.data() + r * cols;
        double mx = in[0];
        for (std::int64_t j = 1; j < cols; ++j) mx = std::max(mx, in[j]);
        double sum = 0.0;
        for (std::int64_t j = 0; j < cols; ++j) {
            o[j] = std::exp(in[j] - mx);
            sum += o[j];
        }
        for (std::int64_t j = 0; j < cols; ++j) o[j] /= sum;
    }
    return unary("softmax", a, std::move(out), [rows, cols](Node& self, Node& pa) {
        Tensor ga(self.grad.shape());
        for (std::int64_t r = 0; r < rows; ++r) {
            const double* y = self.value.data() + r * cols;
            const double* g = self.grad.data() + r * cols;
            double dot = 0.0;
            for (std::int64_t j = 0; j < cols; ++j) dot += g[j] * y[j];
            double* o = ga.data() + r * cols;
            for (std::int64_t j = 0; j < cols; ++j) o[j] = y[j] * (g[j] - dot);
        }
        detail::accumulate(pa, ga);
    });
}

Var mean_all(const Var& a) {
    if (a.value().size() == 0) throw std::invalid_argument("mean_all: empty tensor");
    const std::int64_t n = a.value().size();
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) s += a.value()[i];
    return unary("mean", a, Tensor::scalar(s / static_cast<double>(n)), [n](Node& self, Node& pa) {
        Tensor ga(pa.value.shape());
        const double g = self.grad[0] / static_cast<double>(n);
        for (std::int64_t i = 0; i < n; ++i) ga[i] = g;
        detail::accumulate(pa, ga);
    });
}

Var sum_all(const Var& a) {
    const std::int64_t n = a.value().size();
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) s += a.value()[i];
    return unary("sum", a, Tensor::scalar(s), [n](Node& self, Node& pa) {
        Tensor ga(pa.value.shape());
        const double g = self.grad[0];
        for (std::int64_t i = 0; i < n; ++i) ga[i] = g;
        detail::accumulate(pa, ga);
    });
}

Var reshape(const Var& a, std::vector<std::int64_t> shape) {
    if (shape_product(shape) != a.value().size()) {
        throw std::invalid_argument("reshape: cannot view " + a.value().shape_str() + " as " +
                                    shape_to_string(shape));
    }
    Tensor out(shape, std::vector<double>(a.value().values().begin(), a.value().values().end()));
    auto old_shape = a.value().shape();
    return unary("reshape", a, std::move(out), [old_shape](Node& self, Node& pa) {
        Tensor ga(old_shape, std::vector<double>(self.grad.values().begin(), self.grad.values().end()));
        detail::accumulate(pa, ga);
    });
}

Var patchify(const Var& image, std::int64_t patch) {
    const Tensor& v = image.value();
    if (v.rank() != 3) throw std::invalid_argument("patchify: expected (H,W,C), got " + v.shape_str());
    const std::int64_t h = v.dim(0), w = v.dim(1), c = v.dim(2);
    if (patch <= 0 || h % patch != 0 || w % patch != 0) {
        throw std::invalid_argument("patchify: patch size " + std::to_string(patch) +
                                    " does not divide image dims " + v.shape_str());
    }
    const std::int64_t gh = h / patch, gw = w / patch;
    const std::int64_t n = gh * gw, d = patch * patch * c;
    Tensor out({n, d});
    for (std::int64_t gy = 0; gy < gh; ++gy)
        for (std::int64_t gx = 0; gx < gw; ++gx) {
            double* row = out.data() + (gy * gw + gx) * d;
            for (std::int64_t py = 0; py < patch; ++py)
                for (std::int64_t px = 0; px < patch; ++px)
                    for (std::int64_t ch = 0; ch < c; ++ch)
                        row[(py * patch + px) * c + ch] = v.at3(gy * patch + py, gx * patch + px, ch);
        }
    return unary("patchify", image, std::move(out), [h, w, c, patch, gh, gw, d](Node& self, Node& pa) {
        Tensor ga({h, w, c});
        for (std::int64_t gy = 0; gy < gh; ++gy)
            for (std::int64_t gx = 0; gx < gw; ++gx) {
                const double* row = self.grad.data() + (gy * gw + gx) * d;
                for (std::int64_t py = 0; py < patch; ++py)
                    for (std::int64_t px = 0; px < patch; ++px)
                        for (std::int64_t ch = 0; ch < c; ++ch)
                            ga.at3(gy * patch + py, gx * patch + px, ch) = row[(py * patch + px) * c + ch];
            }
        detail::accumulate(pa, ga);
    });
}

Var upsample_nearest(const Var& grid, std::int64_t factor) {
    const Tensor& v = grid.value();
    if (v.rank() != 2) throw std::invalid_argument("upsample_nearest: expected (h,w), got " + v.shape_str());
    if (factor < 1) throw std::invalid_argument("upsample_nearest: factor must be >= 1");
    const std::int64_t gh = v.dim(0), gw = v.dim(1);
    Tensor out({gh * factor, gw * factor});
    for (std::int64_t y = 0; y < gh * factor; ++y)
        for (std::int64_t x = 0; x < gw * factor; ++x) out.at2(y, x) = v.at2(y / factor, x / factor);
    return unary("upsample", grid, std::move(out), [gh, gw, factor](Node& self, Node& pa) {
        Tensor ga({gh, gw});
        for (std::int64_t gy = 0; gy < gh; ++gy)
            for (std::int64_t gx = 0; gx < gw; ++gx) {
                double acc = 0.0;
                for (std::int64_t py = 0; py < factor; ++py)
                    for (std::int64_t px = 0; px < factor; ++px)
                        acc += self.grad.at2(gy * factor + py, gx * factor + px);
                ga.at2(gy, gx) = acc;
            }
        detail::accumulate(pa, ga);
    });
}

namespace {

// Post-order over the graph below `output`; deterministic for a fixed graph.
std::vector<Node*> backward_sweep(const Var& output) {
    if (!output.defined()) throw std::invalid_argument("run_backward: undefined output");
    if (output.value().size() != 1) {
        throw std::invalid_argument("run_backward: output must be scalar, got shape " +
                                    output.value().shape_str());
    }

    std::vector<Node*> topo;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(output.node(), 0);
    visited.insert(output.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* n : topo) n->grad_set = false;

    Node* out = output.node();
    out->grad = Tensor(out->value.shape(), std::vector<double>{1.0});
    out->grad_set = true;

    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node* n = *it;
        if (n->grad_set && n->backprop && n->requires_grad) n->backprop(*n);
    }
    return topo;
}

}  // namespace

void run_backward(const Var& output) { backward_sweep(output); }

Gradient backward(const Var& output, const Var& wrt) {
    if (!wrt.defined()) throw std::invalid_argument("backward: undefined wrt");
    if (!wrt.requires_grad()) {
        throw std::invalid_argument("backward: wrt tensor does not track gradients");
    }
    const std::vector<Node*> topo = backward_sweep(output);
    Gradient g;
    g.wrt_id = wrt.id();
    const bool reachable = std::find(topo.begin(), topo.end(), wrt.node()) != topo.end();
    if (reachable && wrt.grad_populated()) {
        g.values = wrt.grad();
    } else {
        g.values = Tensor(wrt.value().shape());
        g.disconnected = true;
        log::warn("backward: tensor " + std::to_string(wrt.id()) +
                  " is not an ancestor of the output; returning zero gradient");
    }
    return g;
}

Gradient finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
    if (!(h > 0.0)) throw std::invalid_argument("finite_diff_grad: step size must be positive");
    Gradient g;
    g.values = Tensor(x.shape());
    const std::int64_t n = x.size();
#pragma omp parallel for schedule(dynamic, 8)
    for (std::int64_t i = 0; i < n; ++i) {
        Tensor probe = x;
        probe[i] = x[i] + h;
        const double fp = f(probe);
        probe[i] = x[i] - h;
        const double fm = f(probe);
        g.values[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

}  // namespace mdx
