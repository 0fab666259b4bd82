#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

// Reverse-mode automatic differentiation over dense 2-D real tensors.
// Everything is 64-bit; scalars are 1x1 tensors. Each Tape owns one
// forward pass; backward walks the recorded steps in reverse.

namespace fairlong {

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Persistent parameter buffer. Outlives any tape; bound onto a tape as a
// leaf via Tape::bind so gradients can be read back after backward().
struct Param {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> value;

    Param() = default;
    Param(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), value(r * c, fill) {}

    std::size_t size() const { return rows * cols; }
};

struct Node {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;

    std::size_t size() const { return rows * cols; }
    double& v(std::size_t i, std::size_t j) { return value[i * cols + j]; }
    double v(std::size_t i, std::size_t j) const { return value[i * cols + j]; }
    double& g(std::size_t i, std::size_t j) { return grad[i * cols + j]; }
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

    bool valid() const { return n_ != nullptr; }
    std::size_t rows() const { return n_->rows; }
    std::size_t cols() const { return n_->cols; }
    std::size_t size() const { return n_->size(); }
    bool is_scalar() const { return n_->rows == 1 && n_->cols == 1; }
    bool requires_grad() const { return n_->requires_grad; }

    const std::vector<double>& value() const { return n_->value; }
    const std::vector<double>& grad() const { return n_->grad; }
    double value_at(std::size_t i, std::size_t j) const { return n_->v(i, j); }
    double scalar_value() const { return n_->value[0]; }

    std::shared_ptr<Node> node() const { return n_; }

private:
    std::shared_ptr<Node> n_;
};

namespace detail {
inline std::string dim_str(const Node& n) {
    std::ostringstream os;
    os << n.rows << "x" << n.cols;
    return os.str();
}
}  // namespace detail

class Tape {
public:
    Tensor leaf(std::size_t rows, std::size_t cols, std::vector<double> values,
                bool requires_grad = false) {
        if (values.size() != rows * cols)
            throw ShapeError("leaf: value count " + std::to_string(values.size()) +
                             " does not match shape " + std::to_string(rows) + "x" +
                             std::to_string(cols));
        auto n = std::make_shared<Node>();
        n->rows = rows;
        n->cols = cols;
        n->value = std::move(values);
        n->grad.assign(n->size(), 0.0);
        n->requires_grad = requires_grad;
        check_finite(*n, "leaf");
        steps_.push_back({n, nullptr});
        return Tensor(n);
    }

    Tensor constant(std::size_t rows, std::size_t cols, std::vector<double> values) {
        return leaf(rows, cols, std::move(values), false);
    }

    Tensor full(std::size_t rows, std::size_t cols, double v, bool requires_grad = false) {
        return leaf(rows, cols, std::vector<double>(rows * cols, v), requires_grad);
    }

    Tensor scalar(double v) { return constant(1, 1, {v}); }

    // Memoized binding of a persistent Param: one leaf per (tape, param).
    Tensor bind(Param& p, bool requires_grad) {
        auto it = bound_.find(&p);
        if (it != bound_.end()) {
            if (it->second.requires_grad() != requires_grad)
                throw ValidationError("bind: param bound twice with different requires_grad");
            return it->second;
        }
        Tensor t = leaf(p.rows, p.cols, p.value, requires_grad);
        bound_.emplace(&p, t);
        return t;
    }

    bool is_bound(const Param& p) const { return bound_.count(&p) != 0; }

    const std::vector<double>& grad_of(const Param& p) const {
        auto it = bound_.find(&p);
        if (it == bound_.end()) throw ValidationError("grad_of: param not bound on this tape");
        return it->second.grad();
    }

    // ---- primitives -------------------------------------------------------

    Tensor add(const Tensor& a, const Tensor& b) {
        require_same_shape(a, b, "add");
        return elementwise2(
            a, b, "add", [](double x, double y) { return x + y; },
            [](Node& ga, Node& gb, const Node& a_, const Node& b_, const Node& out) {
                for (std::size_t i = 0; i < out.size(); ++i) {
                    if (ga.requires_grad) ga.grad[i] += out.grad[i];
                    if (gb.requires_grad) gb.grad[i] += out.grad[i];
                }
            });
    }

    Tensor sub(const Tensor& a, const Tensor& b) {
        require_same_shape(a, b, "sub");
        return elementwise2(
            a, b, "sub", [](double x, double y) { return x - y; },
            [](Node& ga, Node& gb, const Node&, const Node&, const Node& out) {
                for (std::size_t i = 0; i < out.size(); ++i) {
                    if (ga.requires_grad) ga.grad[i] += out.grad[i];
                    if (gb.requires_grad) gb.grad[i] -= out.grad[i];
                }
            });
    }

    Tensor mul(const Tensor& a, const Tensor& b) {
        require_same_shape(a, b, "mul");
        return elementwise2(
            a, b, "mul", [](double x, double y) { return x * y; },
            [](Node& ga, Node& gb, const Node& a_, const Node& b_, const Node& out) {
                for (std::size_t i = 0; i < out.size(); ++i) {
                    if (ga.requires_grad) ga.grad[i] += out.grad[i] * b_.value[i];
                    if (gb.requires_grad) gb.grad[i] += out.grad[i] * a_.value[i];
                }
            });
    }

    Tensor matmul(const Tensor& a, const Tensor& b) {
        if (a.cols() != b.rows())
            throw ShapeError("matmul: inner dimensions differ, " + detail::dim_str(*a.node()) +
                             " vs " + detail::dim_str(*b.node()));
        const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
        auto an = a.node(), bn = b.node();
        std::vector<double> out(m * n, 0.0);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
                const double av = an->value[i * k + p];
                if (av == 0.0) continue;
                const double* brow = &bn->value[p * n];
                double* orow = &out[i * n];
                for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
            }
        return record(m, n, std::move(out), "matmul", {a, b}, [an, bn, m, k, n](const Node& o) {
            if (an->requires_grad) {
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        const double go = o.grad[i * n + j];
                        if (go == 0.0) continue;
                        for (std::size_t p = 0; p < k; ++p)
                            an->grad[i * k + p] += go * bn->value[p * n + j];
                    }
            }
            if (bn->requires_grad) {
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        const double av = an->value[i * k + p];
                        if (av == 0.0) continue;
                        for (std::size_t j = 0; j < n; ++j)
                            bn->grad[p * n + j] += av * o.grad[i * n + j];
                    }
            }
        });
    }

    Tensor sigmoid(const Tensor& a) {
        auto an = a.node();
        std::vector<double> out(a.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(an->value[i]);
        return record(a.rows(), a.cols(), std::move(out), "sigmoid", {a}, [an](const Node& o) {
            if (!an->requires_grad) return;
            for (std::size_t i = 0; i < o.size(); ++i) {
                const double s = o.value[i];
                an->grad[i] += o.grad[i] * s * (1.0 - s);
            }
        });
    }

    Tensor tanh_(const Tensor& a) {
        auto an = a.node();
        std::vector<double> out(a.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(an->value[i]);
        return record(a.rows(), a.cols(), std::move(out), "tanh", {a}, [an](const Node& o) {
            if (!an->requires_grad) return;
            for (std::size_t i = 0; i < o.size(); ++i) {
                const double t = o.value[i];
                an->grad[i] += o.grad[i] * (1.0 - t * t);
            }
        });
    }

    Tensor exp_(const Tensor& a) {
        auto an = a.node();
        std::vector<double> out(a.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(an->value[i]);
        return record(a.rows(), a.cols(), std::move(out), "exp", {a}, [an](const Node& o) {
            if (!an->requires_grad) return;
            for (std::size_t i = 0; i < o.size(); ++i) an->grad[i] += o.grad[i] * o.value[i];
        });
    }

    Tensor log_(const Tensor& a) {
        auto an = a.node();
        std::vector<double> out(a.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(an->value[i]);
        return record(a.rows(), a.cols(), std::move(out), "log", {a}, [an](const Node& o) {
            if (!an->requires_grad) return;
            for (std::size_t i = 0; i < o.size(); ++i)
                an->grad[i] += o.grad[i] / an->value[i];
        });
    }

    Tensor sum(const Tensor& a) {
        auto an = a.node();
        double s = 0.0;
        for (double v : an->value) s += v;
        return record(1, 1, {s}, "sum", {a}, [an](const Node& o) {
            if (!an->requires_grad) return;
            for (std::size_t i = 0; i < an->size(); ++i) an->grad[i] += o.grad[0];
        });
    }

    Tensor mean(const Tensor& a) {
        if (a.size() == 0) throw ShapeError("mean: empty tensor");
        auto an = a.node();
        double s = 0.0;
        for (double v : an->value) s += v;
        const double inv = 1.0 / static_cast<double>(a.size());
        return record(1, 1, {s * inv}, "mean", {a}, [an, inv](const Node& o) {
            if (!an->requires_grad) return;
            for (std::size_t i = 0; i < an->size(); ++i) an->grad[i] += o.grad[0] * inv;
        });
    }

    Tensor scale(const Tensor& a, double c) {
        auto an = a.node();
        std::vector<double> out(a.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * an->value[i];
        return record(a.rows(), a.cols(), std::move(out), "scale", {a}, [an, c](const Node& o) {
            if (!an->requires_grad) return;
            for (std::size_t i = 0; i < o.size(); ++i) an->grad[i] += c * o.grad[i];
        });
    }

    Tensor add_const(const Tensor& a, double c) {
        auto an = a.node();
        std::vector<double> out(a.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = an->value[i] + c;
        return record(a.rows(), a.cols(), std::move(out), "add_const", {a}, [an](const Node& o) {
            if (!an->requires_grad) return;
            for (std::size_t i = 0; i < o.size(); ++i) an->grad[i] += o.grad[i];
        });
    }

    // 1 - a, convenience for gate complements and log(1-p)
    Tensor one_minus(const Tensor& a) {
        auto an = a.node();
        std::vector<double> out(a.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 - an->value[i];
        return record(a.rows(), a.cols(), std::move(out), "one_minus", {a}, [an](const Node& o) {
            if (!an->requires_grad) return;
            for (std::size_t i = 0; i < o.size(); ++i) an->grad[i] -= o.grad[i];
        });
    }

    Tensor max_const(const Tensor& a, double c) {
        auto an = a.node();
        std::vector<double> out(a.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(an->value[i], c);
        return record(a.rows(), a.cols(), std::move(out), "max_const", {a}, [an, c](const Node& o) {
            if (!an->requires_grad) return;
            for (std::size_t i = 0; i < o.size(); ++i)
                if (an->value[i] > c) an->grad[i] += o.grad[i];
        });
    }

    Tensor abs_(const Tensor& a) {
        auto an = a.node();
        std::vector<double> out(a.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(an->value[i]);
        return record(a.rows(), a.cols(), std::move(out), "abs", {a}, [an](const Node& o) {
            if (!an->requires_grad) return;
            for (std::size_t i = 0; i < o.size(); ++i) {
                const double x = an->value[i];
                if (x > 0.0)
                    an->grad[i] += o.grad[i];
                else if (x < 0.0)
                    an->grad[i] -= o.grad[i];
            }
        });
    }

    Tensor concat_cols(const std::vector<Tensor>& parts) {
        if (parts.empty()) throw ShapeError("concat_cols: no inputs");
        const std::size_t m = parts[0].rows();
        std::size_t total = 0;
        for (const auto& p : parts) {
            if (p.rows() != m)
                throw ShapeError("concat_cols: row mismatch " + detail::dim_str(*p.node()));
            total += p.cols();
        }
        std::vector<double> out(m * total);
        std::size_t off = 0;
        for (const auto& p : parts) {
            auto pn = p.node();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < pn->cols; ++j)
                    out[i * total + off + j] = pn->v(i, j);
            off += p.cols();
        }
        std::vector<std::shared_ptr<Node>> nodes;
        for (const auto& p : parts) nodes.push_back(p.node());
        return record(m, total, std::move(out), "concat_cols", parts,
                      [nodes, m, total](const Node& o) {
                          std::size_t off2 = 0;
                          for (const auto& pn : nodes) {
                              if (pn->requires_grad) {
                                  for (std::size_t i = 0; i < m; ++i)
                                      for (std::size_t j = 0; j < pn->cols; ++j)
                                          pn->grad[i * pn->cols + j] +=
                                              o.grad[i * total + off2 + j];
                              }
                              off2 += pn->cols;
                          }
                      });
    }

    Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1) {
        if (c0 >= c1 || c1 > a.cols())
            throw ShapeError("slice_cols: bad range [" + std::to_string(c0) + "," +
                             std::to_string(c1) + ") for " + detail::dim_str(*a.node()));
        const std::size_t m = a.rows(), w = c1 - c0;
        auto an = a.node();
        std::vector<double> out(m * w);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) out[i * w + j] = an->v(i, c0 + j);
        return record(m, w, std::move(out), "slice_cols", {a}, [an, m, w, c0](const Node& o) {
            if (!an->requires_grad) return;
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < w; ++j)
                    an->grad[i * an->cols + c0 + j] += o.grad[i * w + j];
        });
    }

    Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& idx) {
        if (idx.empty()) throw ShapeError("gather_rows: empty index set");
        const std::size_t w = a.cols();
        auto an = a.node();
        std::vector<double> out(idx.size() * w);
        for (std::size_t r = 0; r < idx.size(); ++r) {
            if (idx[r] >= a.rows()) throw ShapeError("gather_rows: index out of range");
            for (std::size_t j = 0; j < w; ++j) out[r * w + j] = an->v(idx[r], j);
        }
        return record(idx.size(), w, std::move(out), "gather_rows", {a},
                      [an, idx, w](const Node& o) {
                          if (!an->requires_grad) return;
                          for (std::size_t r = 0; r < idx.size(); ++r)
                              for (std::size_t j = 0; j < w; ++j)
                                  an->grad[idx[r] * w + j] += o.grad[r * w + j];
                      });
    }

    // mat [m x n] + row [1 x n], broadcast down rows (bias add)
    Tensor add_rowvec(const Tensor& mat, const Tensor& row) {
        if (row.rows() != 1 || row.cols() != mat.cols())
            throw ShapeError("add_rowvec: " + detail::dim_str(*mat.node()) + " + " +
                             detail::dim_str(*row.node()));
        const std::size_t m = mat.rows(), n = mat.cols();
        auto mn = mat.node(), rn = row.node();
        std::vector<double> out(m * n);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) out[i * n + j] = mn->v(i, j) + rn->value[j];
        return record(m, n, std::move(out), "add_rowvec", {mat, row},
                      [mn, rn, m, n](const Node& o) {
                          for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < n; ++j) {
                                  const double go = o.grad[i * n + j];
                                  if (mn->requires_grad) mn->grad[i * n + j] += go;
                                  if (rn->requires_grad) rn->grad[j] += go;
                              }
                      });
    }

    // scalar-with-tensor broadcast multiply: s is 1x1
    Tensor scale_by(const Tensor& a, const Tensor& s) {
        if (!s.is_scalar()) throw ShapeError("scale_by: scale factor must be scalar");
        auto an = a.node(), sn = s.node();
        std::vector<double> out(a.size());
        const double sv = sn->value[0];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = sv * an->value[i];
        return record(a.rows(), a.cols(), std::move(out), "scale_by", {a, s},
                      [an, sn, sv](const Node& o) {
                          for (std::size_t i = 0; i < o.size(); ++i) {
                              if (an->requires_grad) an->grad[i] += sv * o.grad[i];
                              if (sn->requires_grad) sn->grad[0] += an->value[i] * o.grad[i];
                          }
                      });
    }

    // Custom primitive: caller supplies forward values and the backward rule.
    Tensor custom(std::size_t rows, std::size_t cols, std::vector<double> values,
                  const std::vector<Tensor>& inputs,
                  std::function<void(const Node&)> backward_fn, const char* name = "custom") {
        return record(rows, cols, std::move(values), name, inputs, std::move(backward_fn));
    }

    // ---- backward ---------------------------------------------------------

    void backward(const Tensor& loss) {
        if (!loss.is_scalar()) throw ShapeError("backward: loss must be a scalar tensor");
        loss.node()->grad[0] += 1.0;
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
            if (it->back && it->out->requires_grad) it->back(*it->out);
        }
        for (const auto& s : steps_) {
            for (double g : s.out->grad)
                if (!std::isfinite(g))
                    throw NumericError("backward: non-finite gradient encountered");
        }
    }

    std::size_t step_count() const { return steps_.size(); }

private:
    struct Step {
        std::shared_ptr<Node> out;
        std::function<void(const Node&)> back;
    };

    static double stable_sigmoid(double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
    }

    static void check_finite(const Node& n, const char* op) {
        for (double v : n.value)
            if (!std::isfinite(v))
                throw NumericError(std::string(op) + ": non-finite output value");
    }

    static void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
        if (a.rows() != b.rows() || a.cols() != b.cols())
            throw ShapeError(std::string(op) + ": shape mismatch " + detail::dim_str(*a.node()) +
                             " vs " + detail::dim_str(*b.node()));
    }

    template <typename Fwd, typename Bwd>
    Tensor elementwise2(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Bwd bwd) {
        auto an = a.node(), bn = b.node();
        std::vector<double> out(a.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(an->value[i], bn->value[i]);
        return record(a.rows(), a.cols(), std::move(out), name, {a, b}, [an, bn, bwd](const Node& o) {
            bwd(*an, *bn, *an, *bn, o);
        });
    }

    Tensor record(std::size_t rows, std::size_t cols, std::vector<double> values,
                  const char* name, const std::vector<Tensor>& inputs,
                  std::function<void(const Node&)> back) {
        auto n = std::make_shared<Node>();
        n->rows = rows;
        n->cols = cols;
        n->value = std::move(values);
        n->grad.assign(n->size(), 0.0);
        for (const auto& in : inputs)
            if (in.requires_grad()) n->requires_grad = true;
        check_finite(*n, name);
        steps_.push_back({n, std::move(back)});
        return Tensor(n);
    }

    std::vector<Step> steps_;
    std::unordered_map<const Param*, Tensor> bound_;
};

// ---- finite-difference oracle ---------------------------------------------

// Max over coordinates of |analytic - central difference| /
// (|analytic| + |central| + 1e-12). The function is re-evaluated on fresh
// tapes so the check stays independent of any particular forward pass.
inline double finite_difference_check(
    const std::function<Tensor(Tape&, const Tensor&)>& f, std::size_t rows, std::size_t cols,
    const std::vector<double>& point, double step) {
    if (step <= 0.0) throw ValidationError("finite_difference_check: step must be > 0");

    Tape tape;
    Tensor x = tape.leaf(rows, cols, point, true);
    Tensor y = f(tape, x);
    if (!y.is_scalar()) throw ShapeError("finite_difference_check: f must return a scalar");
    tape.backward(y);
    const std::vector<double> analytic = x.grad();

    auto eval = [&](const std::vector<double>& p) {
        Tape t;
        Tensor xi = t.leaf(rows, cols, p, false);
        Tensor yi = f(t, xi);
        return yi.scalar_value();
    };

    double worst = 0.0;
    std::vector<double> p = point;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double orig = p[i];
        p[i] = orig + step;
        const double fp = eval(p);
        p[i] = orig - step;
        const double fm = eval(p);
        p[i] = orig;
        const double central = (fp - fm) / (2.0 * step);
        if (!std::isfinite(central)) throw NumericError("finite_difference_check: non-finite");
        const double err =
            std::fabs(analytic[i] - central) / (std::fabs(analytic[i]) + std::fabs(central) + 1e-12);
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace fairlong
