#include "bmpc/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <stdexcept>
#include <unordered_set>
#include <utility>

namespace bmpc::ad {
namespace {

thread_local bool g_grad_enabled = true;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatrix = Eigen::Map<RowMatrix>;
using ConstMapMatrix = Eigen::Map<const RowMatrix>;

ConstMapMatrix as_matrix(const Tensor& t) {
    return {t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}
MapMatrix as_matrix(Tensor& t) {
    return {t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                                " vs " + shape_string(b.shape()));
}

void require_rank2(const char* op, const Tensor& t) {
    if (t.rank() != 2) {
        throw std::invalid_argument(std::string(op) + ": expected rank-2 operand, got " +
                                    shape_string(t.shape()));
    }
}

Var make_result(Tensor value, std::vector<NodePtr> parents, std::function<void(Node&)> fn) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    const bool any = std::any_of(parents.begin(), parents.end(),
                                 [](const NodePtr& p) { return p->requires_grad; });
    if (g_grad_enabled && any) {
        node->requires_grad = true;
        node->parents = std::move(parents);
        node->backward_fn = std::move(fn);
    }
    return Var(std::move(node));
}

// Accumulates into a parent's gradient when that parent participates.
template <typename F>
void with_grad(const NodePtr& parent, F&& f) {
    if (parent->requires_grad) {
        f(parent->grad_buffer());
    }
}

// Result of an elementwise op whose forward values are already computed.
template <typename Deriv>
Var unary_result(const Var& a, Tensor y, Deriv deriv) {
    return make_result(std::move(y), {a.node()}, [deriv](Node& self) {
        const Tensor& x = self.parents[0]->value;
        with_grad(self.parents[0], [&](Tensor& g) {
            for (std::size_t i = 0; i < x.size(); ++i) {
                g[i] += self.grad[i] * deriv(x[i], self.value[i]);
            }
        });
    });
}

bool needs_graph(std::initializer_list<const Var*> inputs) {
    return g_grad_enabled &&
           std::any_of(inputs.begin(), inputs.end(), [](const Var* v) { return v->node()->requires_grad; });
}

template <typename Fwd, typename Deriv>
Var unary(const Var& a, Fwd fwd, Deriv deriv) {
    const Tensor& x = a.value();
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] = fwd(x[i]);
    }
    return unary_result(a, std::move(y), deriv);
}

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

Tensor& Node::grad_buffer() {
    if (grad.size() != value.size() || grad.shape() != value.shape()) {
        grad = Tensor(value.shape(), 0.0);
    }
    return grad;
}

const Tensor& Var::grad() const {
    return node_->grad_buffer();
}

void Var::zero_grad() {
    node_->grad_buffer().fill(0.0);
}

Var constant(Tensor value) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return Var(std::move(node));
}

Var parameter(Tensor value, std::string name) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = true;
    node->is_parameter = true;
    node->name = std::move(name);
    node->grad_buffer();
    return Var(std::move(node));
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Var add(const Var& a, const Var& b) {
    if (!a.value().same_shape(b.value())) {
        shape_error("add", a.value(), b.value());
    }
    Tensor y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] += b.value()[i];
    }
    return make_result(std::move(y), {a.node(), b.node()}, [](Node& self) {
        for (const auto& p : self.parents) {
            with_grad(p, [&](Tensor& g) {
                for (std::size_t i = 0; i < g.size(); ++i) {
                    g[i] += self.grad[i];
                }
            });
        }
    });
}

Var sub(const Var& a, const Var& b) {
    if (!a.value().same_shape(b.value())) {
        shape_error("sub", a.value(), b.value());
    }
    Tensor y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] -= b.value()[i];
    }
    return make_result(std::move(y), {a.node(), b.node()}, [](Node& self) {
        with_grad(self.parents[0], [&](Tensor& g) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i];
            }
        });
        with_grad(self.parents[1], [&](Tensor& g) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] -= self.grad[i];
            }
        });
    });
}

Var mul(const Var& a, const Var& b) {
    if (!a.value().same_shape(b.value())) {
        shape_error("mul", a.value(), b.value());
    }
    Tensor y = a.value();
    for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] *= b.value()[i];
    }
    return make_result(std::move(y), {a.node(), b.node()}, [](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const Tensor& bv = self.parents[1]->value;
        with_grad(self.parents[0], [&](Tensor& g) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i] * bv[i];
            }
        });
        with_grad(self.parents[1], [&](Tensor& g) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i] * av[i];
            }
        });
    });
}

Var scale(const Var& a, double factor) {
    return unary(
        a, [factor](double x) { return x * factor; },
        [factor](double, double) { return factor; });
}

Var add_scalar(const Var& a, double offset) {
    return unary(
        a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Var tanh(const Var& a) {
    return unary(
        a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& a) {
    return unary(
        a, [](double x) { return stable_sigmoid(x); },
        [](double, double y) { return y * (1.0 - y); });
}

Var silu(const Var& a) {
    const Tensor& x = a.value();
    Tensor y(x.shape());
    // x / (1 + e^-x) saturates to 0 and x at the two ends without a branch.
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] = -x[i];
    }
    exp_inplace(y.data(), y.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] = x[i] / (1.0 + y[i]);
    }
    return unary_result(
        a, std::move(y),
        [](double x, double) {
            const double s = stable_sigmoid(x);
            return s * (1.0 + x * (1.0 - s));
        });
}

Var softplus(const Var& a) {
    return unary(
        a,
        [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
        [](double x, double) { return stable_sigmoid(x); });
}

Var exp(const Var& a) {
    return unary(
        a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
    return unary(
        a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var square(const Var& a) {
    return unary(
        a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var matmul(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_rank2("matmul", av);
    require_rank2("matmul", bv);
    if (av.cols() != bv.rows()) {
        shape_error("matmul", av, bv);
    }
    Tensor y = Tensor::matrix(av.rows(), bv.cols());
    as_matrix(y).noalias() = as_matrix(av) * as_matrix(bv);
    return make_result(std::move(y), {a.node(), b.node()}, [](Node& self) {
        const Tensor& av = self.parents[0]->value;
        const Tensor& bv = self.parents[1]->value;
        const auto dy = as_matrix(static_cast<const Tensor&>(self.grad));
        with_grad(self.parents[0], [&](Tensor& g) {
            as_matrix(g).noalias() += dy * as_matrix(bv).transpose();
        });
        with_grad(self.parents[1], [&](Tensor& g) {
            as_matrix(g).noalias() += as_matrix(av).transpose() * dy;
        });
    });
}

Var add_bias(const Var& x, const Var& bias) {
    const Tensor& xv = x.value();
    const Tensor& bv = bias.value();
    require_rank2("add_bias", xv);
    if (bv.rank() != 1 || bv.size() != xv.cols()) {
        shape_error("add_bias", xv, bv);
    }
    Tensor y = xv;
    const std::size_t n = xv.rows();
    const std::size_t d = xv.cols();
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
            y[r * d + c] += bv[c];
        }
    }
    return make_result(std::move(y), {x.node(), bias.node()}, [n, d](Node& self) {
        with_grad(self.parents[0], [&](Tensor& g) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i];
            }
        });
        with_grad(self.parents[1], [&](Tensor& g) {
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t c = 0; c < d; ++c) {
                    g[c] += self.grad[r * d + c];
                }
            }
        });
    });
}

Var sum(const Var& a) {
    double total = 0.0;
    for (double v : a.value().values()) {
        total += v;
    }
    return make_result(Tensor::scalar(total), {a.node()}, [](Node& self) {
        with_grad(self.parents[0], [&](Tensor& g) {
            const double up = self.grad[0];
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += up;
            }
        });
    });
}

Var mean(const Var& a) {
    const std::size_t n = a.value().size();
    if (n == 0) {
        throw std::invalid_argument("mean: empty tensor");
    }
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var sum_cols(const Var& a) {
    const Tensor& x = a.value();
    require_rank2("sum_cols", x);
    const std::size_t n = x.rows();
    const std::size_t d = x.cols();
    Tensor y({n}, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            s += x[r * d + c];
        }
        y[r] = s;
    }
    return make_result(std::move(y), {a.node()}, [n, d](Node& self) {
        with_grad(self.parents[0], [&](Tensor& g) {
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t c = 0; c < d; ++c) {
                    g[r * d + c] += self.grad[r];
                }
            }
        });
    });
}

namespace {

Tensor row_softmax(const Tensor& x) {
    const std::size_t n = x.rows();
    const std::size_t d = x.cols();
    Tensor y(x.shape());
    for (std::size_t r = 0; r < n; ++r) {
        const double* in = x.data() + r * d;
        double* out = y.data() + r * d;
        const double m = *std::max_element(in, in + d);
        for (std::size_t c = 0; c < d; ++c) {
            out[c] = in[c] - m;
        }
        exp_inplace(out, d);
        double z = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            z += out[c];
        }
        for (std::size_t c = 0; c < d; ++c) {
            out[c] /= z;
        }
    }
    return y;
}

}  // namespace

Var softmax(const Var& logits) {
    require_rank2("softmax", logits.value());
    Tensor y = row_softmax(logits.value());
    return make_result(std::move(y), {logits.node()}, [](Node& self) {
        const std::size_t n = self.value.rows();
        const std::size_t d = self.value.cols();
        with_grad(self.parents[0], [&](Tensor& g) {
            for (std::size_t r = 0; r < n; ++r) {
                const double* y = self.value.data() + r * d;
                const double* dy = self.grad.data() + r * d;
                double dot = 0.0;
                for (std::size_t c = 0; c < d; ++c) {
                    dot += dy[c] * y[c];
                }
                for (std::size_t c = 0; c < d; ++c) {
                    g[r * d + c] += y[c] * (dy[c] - dot);
                }
            }
        });
    });
}

Var log_softmax(const Var& logits) {
    require_rank2("log_softmax", logits.value());
    Tensor p = row_softmax(logits.value());
    Tensor y(p.shape());
    for (std::size_t i = 0; i < p.size(); ++i) {
        y[i] = std::log(p[i]);
    }
    // log(p) underflows for very negative logits; recompute those from the logits.
    const std::size_t n = y.rows();
    const std::size_t d = y.cols();
    for (std::size_t r = 0; r < n; ++r) {
        const double* in = logits.value().data() + r * d;
        const double m = *std::max_element(in, in + d);
        double z = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            z += std::exp(in[c] - m);
        }
        const double lse = m + std::log(z);
        for (std::size_t c = 0; c < d; ++c) {
            y[r * d + c] = in[c] - lse;
        }
    }
    return make_result(std::move(y), {logits.node()}, [p = std::move(p)](Node& self) {
        const std::size_t n = self.value.rows();
        const std::size_t d = self.value.cols();
        with_grad(self.parents[0], [&](Tensor& g) {
            for (std::size_t r = 0; r < n; ++r) {
                const double* dy = self.grad.data() + r * d;
                double total = 0.0;
                for (std::size_t c = 0; c < d; ++c) {
                    total += dy[c];
                }
                for (std::size_t c = 0; c < d; ++c) {
                    g[r * d + c] += dy[c] - p[r * d + c] * total;
                }
            }
        });
    });
}

Var cross_entropy(const Var& logits, const Tensor& target_probs) {
    const Tensor& x = logits.value();
    require_rank2("cross_entropy", x);
    if (!x.same_shape(target_probs)) {
        shape_error("cross_entropy", x, target_probs);
    }
    const std::size_t n = x.rows();
    const std::size_t d = x.cols();
    Tensor p = row_softmax(x);
    Tensor y({n}, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        const double* in = x.data() + r * d;
        const double m = *std::max_element(in, in + d);
        double z = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            z += std::exp(in[c] - m);
        }
        const double lse = m + std::log(z);
        double loss = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            const double t = target_probs[r * d + c];
            if (t != 0.0) {
                loss -= t * (in[c] - lse);
            }
        }
        y[r] = loss;
    }
    return make_result(std::move(y), {logits.node()},
                       [p = std::move(p), target = target_probs, n, d](Node& self) {
                           with_grad(self.parents[0], [&](Tensor& g) {
                               for (std::size_t r = 0; r < n; ++r) {
                                   double mass = 0.0;
                                   for (std::size_t c = 0; c < d; ++c) {
                                       mass += target[r * d + c];
                                   }
                                   const double up = self.grad[r];
                                   for (std::size_t c = 0; c < d; ++c) {
                                       g[r * d + c] +=
                                           up * (p[r * d + c] * mass - target[r * d + c]);
                                   }
                               }
                           });
                       });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
    const Tensor& xv = x.value();
    require_rank2("layer_norm", xv);
    const std::size_t n = xv.rows();
    const std::size_t d = xv.cols();
    if (gain.value().size() != d || bias.value().size() != d) {
        shape_error("layer_norm", xv, gain.value());
    }
    const bool track = needs_graph({&x, &gain, &bias});
    Tensor xhat(track ? xv.shape() : std::vector<std::size_t>{0});
    std::vector<double> inv_std(track ? n : 0);
    Tensor y(xv.shape());
    const double* gp = gain.value().data();
    const double* bp = bias.value().data();
    for (std::size_t r = 0; r < n; ++r) {
        const double* in = xv.data() + r * d;
        double* out = y.data() + r * d;
        double mu = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            mu += in[c];
        }
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            var += (in[c] - mu) * (in[c] - mu);
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::size_t c = 0; c < d; ++c) {
            out[c] = (in[c] - mu) * inv;
        }
        if (track) {
            inv_std[r] = inv;
            std::copy_n(out, d, xhat.data() + r * d);
        }
        for (std::size_t c = 0; c < d; ++c) {
            out[c] = out[c] * gp[c] + bp[c];
        }
    }
    return make_result(
        std::move(y), {x.node(), gain.node(), bias.node()},
        [xhat = std::move(xhat), inv_std = std::move(inv_std), n, d](Node& self) {
            const Tensor& gv = self.parents[1]->value;
            with_grad(self.parents[0], [&](Tensor& g) {
                std::vector<double> dh(d);
                for (std::size_t r = 0; r < n; ++r) {
                    double mean_dh = 0.0;
                    double mean_dh_h = 0.0;
                    for (std::size_t c = 0; c < d; ++c) {
                        dh[c] = self.grad[r * d + c] * gv[c];
                        mean_dh += dh[c];
                        mean_dh_h += dh[c] * xhat[r * d + c];
                    }
                    mean_dh /= static_cast<double>(d);
                    mean_dh_h /= static_cast<double>(d);
                    for (std::size_t c = 0; c < d; ++c) {
                        g[r * d + c] +=
                            inv_std[r] * (dh[c] - mean_dh - xhat[r * d + c] * mean_dh_h);
                    }
                }
            });
            with_grad(self.parents[1], [&](Tensor& g) {
                for (std::size_t r = 0; r < n; ++r) {
                    for (std::size_t c = 0; c < d; ++c) {
                        g[c] += self.grad[r * d + c] * xhat[r * d + c];
                    }
                }
            });
            with_grad(self.parents[2], [&](Tensor& g) {
                for (std::size_t r = 0; r < n; ++r) {
                    for (std::size_t c = 0; c < d; ++c) {
                        g[c] += self.grad[r * d + c];
                    }
                }
            });
        });
}

Var concat_cols(const Var& a, const Var& b) {
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    require_rank2("concat_cols", av);
    require_rank2("concat_cols", bv);
    if (av.rows() != bv.rows()) {
        shape_error("concat_cols", av, bv);
    }
    const std::size_t n = av.rows();
    const std::size_t da = av.cols();
    const std::size_t db = bv.cols();
    Tensor y = Tensor::matrix(n, da + db);
    for (std::size_t r = 0; r < n; ++r) {
        std::copy_n(av.data() + r * da, da, y.data() + r * (da + db));
        std::copy_n(bv.data() + r * db, db, y.data() + r * (da + db) + da);
    }
    return make_result(std::move(y), {a.node(), b.node()}, [n, da, db](Node& self) {
        with_grad(self.parents[0], [&](Tensor& g) {
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t c = 0; c < da; ++c) {
                    g[r * da + c] += self.grad[r * (da + db) + c];
                }
            }
        });
        with_grad(self.parents[1], [&](Tensor& g) {
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t c = 0; c < db; ++c) {
                    g[r * db + c] += self.grad[r * (da + db) + da + c];
                }
            }
        });
    });
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
    const Tensor& av = a.value();
    require_rank2("slice_cols", av);
    if (begin >= end || end > av.cols()) {
        throw std::invalid_argument("slice_cols: range [" + std::to_string(begin) + ", " +
                                    std::to_string(end) + ") outside " + shape_string(av.shape()));
    }
    const std::size_t n = av.rows();
    const std::size_t d = av.cols();
    const std::size_t w = end - begin;
    Tensor y = Tensor::matrix(n, w);
    for (std::size_t r = 0; r < n; ++r) {
        std::copy_n(av.data() + r * d + begin, w, y.data() + r * w);
    }
    return make_result(std::move(y), {a.node()}, [n, d, w, begin](Node& self) {
        with_grad(self.parents[0], [&](Tensor& g) {
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t c = 0; c < w; ++c) {
                    g[r * d + begin + c] += self.grad[r * w + c];
                }
            }
        });
    });
}

Var reshape(const Var& a, std::vector<std::size_t> shape) {
    Tensor y = a.value().reshaped(std::move(shape));
    return make_result(std::move(y), {a.node()}, [](Node& self) {
        with_grad(self.parents[0], [&](Tensor& g) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                g[i] += self.grad[i];
            }
        });
    });
}

Var detach(const Var& a) { return constant(a.value()); }

void backward(const Var& loss) {
    if (loss.value().size() != 1) {
        throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                    shape_string(loss.shape()));
    }
    if (!loss.requires_grad()) {
        return;
    }
    // Iterative post-order DFS gives a topological order; reverse it for the sweep.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (Node* n : order) {
        if (!n->is_parameter) {
            n->grad_buffer().fill(0.0);
        }
    }
    loss.node()->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) {
            n->backward_fn(*n);
        }
    }
    for (Node* n : order) {
        if (!n->is_parameter) {
            n->grad = Tensor();
        }
    }
}

}  // namespace bmpc::ad
