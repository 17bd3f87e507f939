#include "clis/autograd.hpp"

#include <Eigen/Core>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace clis::ag {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using CMapVec = Eigen::Map<const Eigen::VectorXd>;
using MapVec = Eigen::Map<Eigen::VectorXd>;

void require(bool cond, const std::string& what) {
    if (!cond) throw invalid_argument(what);
}

}  // namespace

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return n;
}

double* Node::ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad.data();
}

Var Var::constant(Shape shape, std::vector<double> values) {
    return constant(std::move(shape), Buffer(values.begin(), values.end()));
}

Var Var::constant(Shape shape, Buffer values) {
    require(numel(shape) == values.size(), "constant: shape/value size mismatch");
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    return Var(std::move(n));
}

Var Var::zeros(Shape shape) {
    Buffer v(numel(shape), 0.0);
    return constant(std::move(shape), std::move(v));
}

Var Var::scalar(double v) { return constant({}, {v}); }

Var Var::parameter(Shape shape, std::vector<double> values) {
    Var v = constant(std::move(shape), std::move(values));
    v.node_->requires_grad = true;
    return v;
}

double Var::item() const {
    require(node_->value.size() == 1, "item: tensor is not a scalar");
    return node_->value[0];
}

Var Var::detach() const { return constant(node_->shape, node_->value); }

Var make_result(Shape shape, const std::vector<double>& value, const std::vector<Var>& inputs,
                std::function<void(Node&)> backward_fn) {
    return make_result(std::move(shape), Buffer(value.begin(), value.end()), inputs, std::move(backward_fn));
}

Var make_result(Shape shape, Buffer value, const std::vector<Var>& inputs, std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->is_leaf = false;
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
        n->requires_grad = true;
        n->inputs.reserve(inputs.size());
        for (const auto& in : inputs) n->inputs.push_back(in.ptr());
        n->backward = std::move(backward_fn);
    }
    return Var(std::move(n));
}

void backward(const Var& loss) {
    require(loss.size() == 1, "backward: loss must be a scalar");
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.node(), 0}};
    seen.insert(loss.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && !seen.count(child)) {
                seen.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.node()->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->is_leaf || !n->backward || n->grad.empty()) continue;
        n->backward(*n);
    }
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
    require(x.shape().size() == 3, "conv2d: input must be [C,H,W]");
    require(weight.shape().size() == 4, "conv2d: weight must be [O,C,k,k]");
    const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
    const int O = weight.dim(0), k = weight.dim(2);
    require(weight.dim(1) == C && weight.dim(3) == k, "conv2d: weight/input channel mismatch");
    require(bias.size() == static_cast<std::size_t>(O), "conv2d: bias size mismatch");
    const int Ho = (H + 2 * pad - k) / stride + 1;
    const int Wo = (W + 2 * pad - k) / stride + 1;
    require(Ho > 0 && Wo > 0, "conv2d: input too small");
    const int rows = C * k * k;
    const int cols_n = Ho * Wo;

    auto cols = std::make_shared<Buffer>(static_cast<std::size_t>(rows) * cols_n, 0.0);
    const double* xv = x.value().data();
    for (int c = 0; c < C; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                double* row = cols->data() + static_cast<std::size_t>((c * k + ky) * k + kx) * cols_n;
                for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) continue;
                    const double* src = xv + (static_cast<std::size_t>(c) * H + iy) * W;
                    double* dst = row + oy * Wo;
                    for (int ox = 0; ox < Wo; ++ox) {
                        const int ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < W) dst[ox] = src[ix];
                    }
                }
            }
        }
    }

    Buffer out(static_cast<std::size_t>(O) * cols_n);
    MapMat out_m(out.data(), O, cols_n);
    CMapMat w_m(weight.value().data(), O, rows);
    CMapMat cols_m(cols->data(), rows, cols_n);
    out_m.noalias() = w_m * cols_m;
    out_m.colwise() += CMapVec(bias.value().data(), O);

    return make_result({O, Ho, Wo}, std::move(out), {x, weight, bias},
                       [=](Node& self) {
                           const auto& xn = self.inputs[0];
                           const auto& wn = self.inputs[1];
                           const auto& bn = self.inputs[2];
                           CMapMat g(self.grad.data(), O, cols_n);
                           if (wn->requires_grad) {
                               MapMat gw(wn->ensure_grad(), O, rows);
                               gw.noalias() += g * CMapMat(cols->data(), rows, cols_n).transpose();
                           }
                           if (bn->requires_grad) {
                               MapVec gb(bn->ensure_grad(), O);
                               gb += g.rowwise().sum();
                           }
                           if (xn->requires_grad) {
                               RowMat gcols = CMapMat(wn->value.data(), O, rows).transpose() * g;
                               double* gx = xn->ensure_grad();
                               for (int c = 0; c < C; ++c) {
                                   for (int ky = 0; ky < k; ++ky) {
                                       for (int kx = 0; kx < k; ++kx) {
                                           const double* row = gcols.data() +
                                               static_cast<std::size_t>((c * k + ky) * k + kx) * cols_n;
                                           for (int oy = 0; oy < Ho; ++oy) {
                                               const int iy = oy * stride - pad + ky;
                                               if (iy < 0 || iy >= H) continue;
                                               double* dst = gx + (static_cast<std::size_t>(c) * H + iy) * W;
                                               const double* src = row + oy * Wo;
                                               for (int ox = 0; ox < Wo; ++ox) {
                                                   const int ix = ox * stride - pad + kx;
                                                   if (ix >= 0 && ix < W) dst[ix] += src[ox];
                                               }
                                           }
                                       }
                                   }
                               }
                           }
                       });
}

Var relu(const Var& x) {
    Buffer out(x.value().begin(), x.value().end());
    for (double& v : out) v = v > 0 ? v : 0.0;
    return make_result(x.shape(), std::move(out), {x}, [](Node& self) {
        auto& in = self.inputs[0];
        double* g = in->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (in->value[i] > 0) g[i] += self.grad[i];
    });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
    require(x.shape().size() == 2 && weight.shape().size() == 2, "linear: expects [N,D] x [O,D]");
    const int N = x.dim(0), D = x.dim(1), O = weight.dim(0);
    require(weight.dim(1) == D, "linear: inner dimension mismatch");
    require(bias.size() == static_cast<std::size_t>(O), "linear: bias size mismatch");
    Buffer out(static_cast<std::size_t>(N) * O);
    MapMat out_m(out.data(), N, O);
    out_m.noalias() = CMapMat(x.value().data(), N, D) * CMapMat(weight.value().data(), O, D).transpose();
    out_m.rowwise() += CMapVec(bias.value().data(), O).transpose();
    return make_result({N, O}, std::move(out), {x, weight, bias}, [=](Node& self) {
        const auto& xn = self.inputs[0];
        const auto& wn = self.inputs[1];
        const auto& bn = self.inputs[2];
        CMapMat g(self.grad.data(), N, O);
        if (xn->requires_grad) {
            MapMat gx(xn->ensure_grad(), N, D);
            gx.noalias() += g * CMapMat(wn->value.data(), O, D);
        }
        if (wn->requires_grad) {
            MapMat gw(wn->ensure_grad(), O, D);
            gw.noalias() += g.transpose() * CMapMat(xn->value.data(), N, D);
        }
        if (bn->requires_grad) {
            MapVec gb(bn->ensure_grad(), O);
            gb += g.colwise().sum().transpose();
        }
    });
}

Var reshape(const Var& x, Shape shape) {
    require(numel(shape) == x.size(), "reshape: element count mismatch");
    return make_result(std::move(shape), Buffer(x.value().begin(), x.value().end()), {x},
                       [](Node& self) {
                           double* g = self.inputs[0]->ensure_grad();
                           for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
                       });
}

Var gather(const Var& x, std::vector<int> index, Shape shape) {
    require(numel(shape) == index.size(), "gather: shape/index size mismatch");
    Buffer out(index.size());
    const auto xv = x.value();
    for (std::size_t i = 0; i < index.size(); ++i) {
        require(index[i] >= 0 && static_cast<std::size_t>(index[i]) < xv.size(), "gather: index out of range");
        out[i] = xv[static_cast<std::size_t>(index[i])];
    }
    auto idx = std::make_shared<std::vector<int>>(std::move(index));
    return make_result(std::move(shape), std::move(out), {x}, [idx](Node& self) {
        double* g = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < idx->size(); ++i) g[(*idx)[i]] += self.grad[i];
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_rows: no inputs");
    const int D = parts.front().dim(1);
    int N = 0;
    for (const auto& p : parts) {
        require(p.shape().size() == 2 && p.dim(1) == D, "concat_rows: column mismatch");
        N += p.dim(0);
    }
    Buffer out;
    out.reserve(static_cast<std::size_t>(N) * D);
    for (const auto& p : parts) out.insert(out.end(), p.value().begin(), p.value().end());
    return make_result({N, D}, std::move(out), parts, [](Node& self) {
        std::size_t off = 0;
        for (auto& in : self.inputs) {
            const std::size_t n = in->value.size();
            if (in->requires_grad) {
                double* g = in->ensure_grad();
                for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[off + i];
            }
            off += n;
        }
    });
}

Var add(const Var& a, const Var& b) {
    require(a.size() == b.size(), "add: size mismatch");
    Buffer out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        for (auto& in : self.inputs) {
            if (!in->requires_grad) continue;
            double* g = in->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Var scale(const Var& a, double c) {
    Buffer out(a.value().begin(), a.value().end());
    for (double& v : out) v *= c;
    return make_result(a.shape(), std::move(out), {a}, [c](Node& self) {
        double* g = self.inputs[0]->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += c * self.grad[i];
    });
}

Var sum(const Var& x) {
    double s = 0;
    for (double v : x.value()) s += v;
    return make_result({}, {s}, {x}, [](Node& self) {
        double* g = self.inputs[0]->ensure_grad();
        const double g0 = self.grad[0];
        for (std::size_t i = 0; i < self.inputs[0]->value.size(); ++i) g[i] += g0;
    });
}

Var add_n(const std::vector<Var>& terms) {
    double s = 0;
    for (const auto& t : terms) s += t.item();
    return make_result({}, {s}, terms, [](Node& self) {
        for (auto& in : self.inputs)
            if (in->requires_grad) in->ensure_grad()[0] += self.grad[0];
    });
}

Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels) {
    require(logits.shape().size() == 2, "softmax_cross_entropy: logits must be [N,K]");
    const int N = logits.dim(0), K = logits.dim(1);
    require(labels.size() == static_cast<std::size_t>(N), "softmax_cross_entropy: label count mismatch");
    if (N == 0) return Var::scalar(0.0);
    auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(N) * K);
    double loss = 0;
    const double* z = logits.value().data();
    for (int n = 0; n < N; ++n) {
        require(labels[n] >= 0 && labels[n] < K, "softmax_cross_entropy: label out of range");
        const double* row = z + static_cast<std::size_t>(n) * K;
        const double mx = *std::max_element(row, row + K);
        double se = 0;
        for (int k = 0; k < K; ++k) se += std::exp(row[k] - mx);
        const double lse = mx + std::log(se);
        for (int k = 0; k < K; ++k) (*probs)[static_cast<std::size_t>(n) * K + k] = std::exp(row[k] - lse);
        loss += lse - row[labels[n]];
    }
    loss /= N;
    return make_result({}, {loss}, {logits}, [probs, labels, N, K](Node& self) {
        double* g = self.inputs[0]->ensure_grad();
        const double s = self.grad[0] / N;
        for (int n = 0; n < N; ++n) {
            for (int k = 0; k < K; ++k) {
                const std::size_t i = static_cast<std::size_t>(n) * K + k;
                g[i] += s * ((*probs)[i] - (k == labels[n] ? 1.0 : 0.0));
            }
        }
    });
}

Var bce_with_logits(const Var& logits, const std::vector<double>& targets) {
    require(targets.size() == logits.size(), "bce_with_logits: target count mismatch");
    const std::size_t N = targets.size();
    if (N == 0) return Var::scalar(0.0);
    double loss = 0;
    for (std::size_t i = 0; i < N; ++i) {
        const double x = logits.value()[i];
        loss += std::max(x, 0.0) - x * targets[i] + std::log1p(std::exp(-std::abs(x)));
    }
    loss /= static_cast<double>(N);
    return make_result({}, {loss}, {logits}, [targets](Node& self) {
        auto& in = self.inputs[0];
        double* g = in->ensure_grad();
        const double s = self.grad[0] / static_cast<double>(targets.size());
        for (std::size_t i = 0; i < targets.size(); ++i) {
            const double sig = 1.0 / (1.0 + std::exp(-in->value[i]));
            g[i] += s * (sig - targets[i]);
        }
    });
}

Var smooth_l1(const Var& pred, const std::vector<double>& target, double beta, double normalizer) {
    require(target.size() == pred.size(), "smooth_l1: target size mismatch");
    require(normalizer > 0, "smooth_l1: normalizer must be positive");
    double loss = 0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        const double d = std::abs(pred.value()[i] - target[i]);
        loss += (d < beta) ? 0.5 * d * d / beta : d - 0.5 * beta;
    }
    loss /= normalizer;
    return make_result({}, {loss}, {pred}, [target, beta, normalizer](Node& self) {
        auto& in = self.inputs[0];
        double* g = in->ensure_grad();
        const double s = self.grad[0] / normalizer;
        for (std::size_t i = 0; i < target.size(); ++i) {
            const double d = in->value[i] - target[i];
            const double dd = (std::abs(d) < beta) ? d / beta : (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0));
            g[i] += s * dd;
        }
    });
}

Var l2_normalize_rows(const Var& x, std::vector<bool>* zero_rows) {
    require(x.shape().size() == 2, "l2_normalize_rows: expects [N,D]");
    const int N = x.dim(0), D = x.dim(1);
    Buffer out(x.size(), 0.0);
    auto norms = std::make_shared<std::vector<double>>(N, 0.0);
    if (zero_rows) zero_rows->assign(N, false);
    for (int n = 0; n < N; ++n) {
        const double* r = x.value().data() + static_cast<std::size_t>(n) * D;
        double ss = 0;
        for (int d = 0; d < D; ++d) ss += r[d] * r[d];
        const double nr = std::sqrt(ss);
        (*norms)[n] = nr;
        double* o = out.data() + static_cast<std::size_t>(n) * D;
        if (nr == 0.0) {
            o[0] = 1.0;
            if (zero_rows) (*zero_rows)[n] = true;
        } else {
            for (int d = 0; d < D; ++d) o[d] = r[d] / nr;
        }
    }
    return make_result(x.shape(), std::move(out), {x}, [norms, N, D](Node& self) {
        double* g = self.inputs[0]->ensure_grad();
        for (int n = 0; n < N; ++n) {
            const double nr = (*norms)[n];
            if (nr == 0.0) continue;
            const double* y = self.value.data() + static_cast<std::size_t>(n) * D;
            const double* gy = self.grad.data() + static_cast<std::size_t>(n) * D;
            double dot = 0;
            for (int d = 0; d < D; ++d) dot += y[d] * gy[d];
            double* gx = g + static_cast<std::size_t>(n) * D;
            for (int d = 0; d < D; ++d) gx[d] += (gy[d] - y[d] * dot) / nr;
        }
    });
}

Var roi_align(const std::vector<Var>& levels, const std::vector<int>& strides,
              const std::vector<Box>& boxes, const std::vector<int>& box_levels, int pool) {
    require(!levels.empty() && levels.size() == strides.size(), "roi_align: levels/strides mismatch");
    require(boxes.size() == box_levels.size(), "roi_align: boxes/levels mismatch");
    require(pool > 0, "roi_align: pool must be positive");
    const int C = levels.front().dim(0);
    for (const auto& l : levels) require(l.shape().size() == 3 && l.dim(0) == C, "roi_align: channel mismatch");
    const int N = static_cast<int>(boxes.size());
    const int P2 = pool * pool;

    struct Tap {
        int i00, i01, i10, i11;
        double w00, w01, w10, w11;
    };
    auto taps = std::make_shared<std::vector<Tap>>(static_cast<std::size_t>(N) * P2);
    Buffer out(static_cast<std::size_t>(N) * C * P2);

    for (int n = 0; n < N; ++n) {
        const Box& b = boxes[n];
        if (!(b.w > 1.0 && b.h > 1.0)) throw invalid_argument("roi_align: degenerate box (w or h <= 1 px)");
        const int l = box_levels[n];
        require(l >= 0 && l < static_cast<int>(levels.size()), "roi_align: bad level index");
        const int H = levels[l].dim(1), W = levels[l].dim(2);
        const double s = strides[l];
        for (int i = 0; i < pool; ++i) {
            double fy = (b.y0() + (i + 0.5) * b.h / pool) / s - 0.5;
            fy = std::clamp(fy, 0.0, static_cast<double>(H - 1));
            const int y0 = static_cast<int>(std::floor(fy));
            const int y1 = std::min(y0 + 1, H - 1);
            const double ly = fy - y0;
            for (int j = 0; j < pool; ++j) {
                double fx = (b.x0() + (j + 0.5) * b.w / pool) / s - 0.5;
                fx = std::clamp(fx, 0.0, static_cast<double>(W - 1));
                const int x0 = static_cast<int>(std::floor(fx));
                const int x1 = std::min(x0 + 1, W - 1);
                const double lx = fx - x0;
                Tap t{y0 * W + x0, y0 * W + x1, y1 * W + x0, y1 * W + x1,
                      (1 - ly) * (1 - lx), (1 - ly) * lx, ly * (1 - lx), ly * lx};
                (*taps)[static_cast<std::size_t>(n) * P2 + i * pool + j] = t;
                const double* f = levels[l].value().data();
                const std::size_t plane = static_cast<std::size_t>(H) * W;
                for (int c = 0; c < C; ++c) {
                    const double* fc = f + c * plane;
                    out[(static_cast<std::size_t>(n) * C + c) * P2 + i * pool + j] =
                        t.w00 * fc[t.i00] + t.w01 * fc[t.i01] + t.w10 * fc[t.i10] + t.w11 * fc[t.i11];
                }
            }
        }
    }

    std::vector<int> lv(box_levels);
    return make_result({N, C * P2}, std::move(out), levels, [taps, lv, N, C, P2](Node& self) {
        for (int n = 0; n < N; ++n) {
            auto& in = self.inputs[lv[n]];
            if (!in->requires_grad) continue;
            double* g = in->ensure_grad();
            const std::size_t plane = static_cast<std::size_t>(in->shape[1]) * in->shape[2];
            for (int p = 0; p < P2; ++p) {
                const Tap& t = (*taps)[static_cast<std::size_t>(n) * P2 + p];
                for (int c = 0; c < C; ++c) {
                    const double go = self.grad[(static_cast<std::size_t>(n) * C + c) * P2 + p];
                    if (go == 0.0) continue;
                    double* gc = g + c * plane;
                    gc[t.i00] += t.w00 * go;
                    gc[t.i01] += t.w01 * go;
                    gc[t.i10] += t.w10 * go;
                    gc[t.i11] += t.w11 * go;
                }
            }
        }
    });
}

}  // namespace clis::ag
