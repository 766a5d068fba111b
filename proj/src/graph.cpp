#include "streamline/graph.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

#include "streamline/error.hpp"

namespace streamline {

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluK = 0.044715;

// out[m x n] = a[m x k] * b[k x n], accumulated in double row by row.
// Four output rows share each pass over a row of b. Every output element
// accumulates its k products in index order whatever the blocking or the
// instruction set picked at load time, so results are identical across
// clones (the library builds with -ffp-contract=off).
__attribute__((target_clones("avx512f", "avx2", "default")))
void gemm(const float* a, const float* b, float* out, std::size_t m, std::size_t k, std::size_t n) {
    std::vector<double> acc(4 * n);
    for (std::size_t i0 = 0; i0 < m; i0 += 4) {
        const std::size_t rows = std::min<std::size_t>(4, m - i0);
        std::fill(acc.begin(), acc.end(), 0.0);
        double* __restrict r0 = acc.data();
        double* __restrict r1 = r0 + n;
        double* __restrict r2 = r1 + n;
        double* __restrict r3 = r2 + n;
        for (std::size_t p = 0; p < k; ++p) {
            const float* __restrict brow = b + p * n;
            const double a0 = a[i0 * k + p];
            const double a1 = rows > 1 ? a[(i0 + 1) * k + p] : 0.0;
            const double a2 = rows > 2 ? a[(i0 + 2) * k + p] : 0.0;
            const double a3 = rows > 3 ? a[(i0 + 3) * k + p] : 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double bv = brow[j];
                r0[j] += a0 * bv;
                r1[j] += a1 * bv;
                r2[j] += a2 * bv;
                r3[j] += a3 * bv;
            }
        }
        for (std::size_t r = 0; r < rows; ++r) {
            float* orow = out + (i0 + r) * n;
            const double* src = acc.data() + r * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] = static_cast<float>(src[j]);
        }
    }
}

Tensor transposed(const Tensor& a) {
    const std::size_t r = a.dim(0), c = a.dim(1);
    Tensor t({c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) t[j * r + i] = a[i * c + j];
    return t;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void require_matrix(const Tensor& t, const char* op) {
    if (t.rank() != 2) throw DimensionError(std::string(op) + " expects a matrix, got " + shape_string(t.shape()));
}

#ifndef NDEBUG
void check_finite(const Tensor& t, OpKind kind) {
    assert(t.all_finite() && "non-finite value produced by forward op");
    (void)kind;
}
#endif

} // namespace

const char* op_name(OpKind kind) {
    switch (kind) {
    case OpKind::Leaf: return "leaf";
    case OpKind::MatMul: return "matmul";
    case OpKind::Transpose: return "transpose";
    case OpKind::Reshape: return "reshape";
    case OpKind::Add: return "add";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::Silu: return "silu";
    case OpKind::Gelu: return "gelu";
    case OpKind::RmsNorm: return "rmsnorm";
    case OpKind::Rope: return "rope";
    case OpKind::CausalSoftmax: return "causal_softmax";
    case OpKind::SliceCols: return "slice_cols";
    case OpKind::ConcatCols: return "concat_cols";
    case OpKind::ConcatRows: return "concat_rows";
    case OpKind::Gather: return "gather";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    case OpKind::Mse: return "mse";
    case OpKind::SoftmaxCe: return "softmax_ce";
    }
    return "?";
}

const Graph::Record& Graph::rec(Node n) const {
    if (n.id < 0 || static_cast<std::size_t>(n.id) >= nodes_.size()) throw ContractError("invalid graph node");
    return nodes_[n.id];
}

const Tensor& Graph::value(Node n) const { return rec(n).value(); }

Node Graph::push(OpKind kind, std::vector<int> inputs, Tensor value) {
#ifndef NDEBUG
    bool inputs_finite = true;
    for (int i : inputs) inputs_finite = inputs_finite && nodes_[i].value().all_finite();
    if (inputs_finite) check_finite(value, kind);
#endif
    Record r;
    r.kind = kind;
    r.requires_grad = std::any_of(inputs.begin(), inputs.end(), [&](int i) { return nodes_[i].requires_grad; });
    r.inputs = std::move(inputs);
    r.owned = std::move(value);
    nodes_.push_back(std::move(r));
    return Node{static_cast<int>(nodes_.size() - 1)};
}

Node Graph::leaf(Tensor value, bool requires_grad) {
    Record r;
    r.owned = std::move(value);
    r.requires_grad = requires_grad;
    nodes_.push_back(std::move(r));
    return Node{static_cast<int>(nodes_.size() - 1)};
}

Node Graph::leaf_ref(const Tensor& value, bool requires_grad) {
    Record r;
    r.borrowed = &value;
    r.requires_grad = requires_grad;
    nodes_.push_back(std::move(r));
    return Node{static_cast<int>(nodes_.size() - 1)};
}

Node Graph::matmul(Node a, Node b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    require_matrix(av, "matmul");
    require_matrix(bv, "matmul");
    if (av.dim(1) != bv.dim(0)) {
        throw DimensionError("matmul inner dimensions differ: " + shape_string(av.shape()) + " x " +
                             shape_string(bv.shape()));
    }
    Tensor out({av.dim(0), bv.dim(1)});
    gemm(av.data().data(), bv.data().data(), out.data().data(), av.dim(0), av.dim(1), bv.dim(1));
    return push(OpKind::MatMul, {a.id, b.id}, std::move(out));
}

Node Graph::transpose(Node a) {
    require_matrix(value(a), "transpose");
    return push(OpKind::Transpose, {a.id}, transposed(value(a)));
}

Node Graph::reshape(Node a, Shape shape) { return push(OpKind::Reshape, {a.id}, value(a).reshaped(std::move(shape))); }

Node Graph::add(Node a, Node b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (av.shape() == bv.shape()) {
        Tensor out(av.shape());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
        return push(OpKind::Add, {a.id, b.id}, std::move(out));
    }
    if (bv.size() == 1 || av.size() == 1) {
        const Tensor& full = bv.size() == 1 ? av : bv;
        const float s = bv.size() == 1 ? bv[0] : av[0];
        Tensor out(full.shape());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = full[i] + s;
        return push(OpKind::Add, {a.id, b.id}, std::move(out));
    }
    throw DimensionError("add: incompatible shapes " + shape_string(av.shape()) + " and " + shape_string(bv.shape()));
}

Node Graph::mul(Node a, Node b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (av.shape() == bv.shape()) {
        Tensor out(av.shape());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
        return push(OpKind::Mul, {a.id, b.id}, std::move(out));
    }
    if (bv.size() == 1 || av.size() == 1) {
        const Tensor& full = bv.size() == 1 ? av : bv;
        const float s = bv.size() == 1 ? bv[0] : av[0];
        Tensor out(full.shape());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = full[i] * s;
        return push(OpKind::Mul, {a.id, b.id}, std::move(out));
    }
    throw DimensionError("mul: incompatible shapes " + shape_string(av.shape()) + " and " + shape_string(bv.shape()));
}

Node Graph::scale(Node a, float s) {
    const Tensor& av = value(a);
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
    Node n = push(OpKind::Scale, {a.id}, std::move(out));
    nodes_[n.id].param = s;
    return n;
}

Node Graph::silu(Node a) {
    const Tensor& av = value(a);
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = av[i];
        out[i] = static_cast<float>(x * sigmoid(x));
    }
    return push(OpKind::Silu, {a.id}, std::move(out));
}

Node Graph::gelu(Node a) {
    const Tensor& av = value(a);
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = av[i];
        out[i] = static_cast<float>(0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluK * x * x * x))));
    }
    return push(OpKind::Gelu, {a.id}, std::move(out));
}

Node Graph::rmsnorm(Node x, Node gain, float eps) {
    const Tensor& xv = value(x);
    const Tensor& gv = value(gain);
    const std::size_t d = xv.cols();
    if (gv.size() != d) {
        throw DimensionError("rmsnorm: gain " + shape_string(gv.shape()) + " does not match last dimension of " +
                             shape_string(xv.shape()));
    }
    Tensor out(xv.shape());
    std::vector<double> inv(xv.rows());
    for (std::size_t r = 0; r < xv.rows(); ++r) {
        double ss = 0.0;
        for (std::size_t j = 0; j < d; ++j) ss += static_cast<double>(xv.at(r, j)) * xv.at(r, j);
        const double ms = ss / static_cast<double>(d) + eps;
        const double ir = ms > 0.0 ? 1.0 / std::sqrt(ms) : 0.0;
        inv[r] = ir;
        for (std::size_t j = 0; j < d; ++j) out.at(r, j) = static_cast<float>(xv.at(r, j) * ir * gv[j]);
    }
    Node n = push(OpKind::RmsNorm, {x.id, gain.id}, std::move(out));
    nodes_[n.id].saved = std::move(inv);
    return n;
}

Node Graph::rope(Node x, std::size_t n_heads, float base) {
    const Tensor& xv = value(x);
    require_matrix(xv, "rope");
    const std::size_t width = xv.dim(1);
    if (n_heads == 0 || width % n_heads != 0 || (width / n_heads) % 2 != 0) {
        throw DimensionError("rope: width " + std::to_string(width) + " is not n_heads x even head_dim");
    }
    const std::size_t hd = width / n_heads;
    Tensor out(xv.shape());
    for (std::size_t t = 0; t < xv.dim(0); ++t) {
        for (std::size_t i = 0; i < hd / 2; ++i) {
            const double theta = static_cast<double>(t) * std::pow(static_cast<double>(base), -2.0 * i / hd);
            const double c = std::cos(theta), s = std::sin(theta);
            for (std::size_t h = 0; h < n_heads; ++h) {
                const std::size_t j = h * hd + 2 * i;
                const double x0 = xv.at(t, j), x1 = xv.at(t, j + 1);
                out.at(t, j) = static_cast<float>(x0 * c - x1 * s);
                out.at(t, j + 1) = static_cast<float>(x0 * s + x1 * c);
            }
        }
    }
    Node n = push(OpKind::Rope, {x.id}, std::move(out));
    nodes_[n.id].iparam = n_heads;
    nodes_[n.id].param = base;
    return n;
}

Node Graph::causal_softmax(Node scores) {
    const Tensor& sv = value(scores);
    require_matrix(sv, "causal_softmax");
    if (sv.dim(0) != sv.dim(1)) throw DimensionError("causal_softmax expects a square matrix, got " + shape_string(sv.shape()));
    const std::size_t T = sv.dim(0);
    Tensor out({T, T});
    for (std::size_t i = 0; i < T; ++i) {
        double m = sv.at(i, 0);
        for (std::size_t j = 1; j <= i; ++j) m = std::max(m, static_cast<double>(sv.at(i, j)));
        double z = 0.0;
        for (std::size_t j = 0; j <= i; ++j) z += std::exp(sv.at(i, j) - m);
        for (std::size_t j = 0; j <= i; ++j) out.at(i, j) = static_cast<float>(std::exp(sv.at(i, j) - m) / z);
    }
    return push(OpKind::CausalSoftmax, {scores.id}, std::move(out));
}

Node Graph::slice_cols(Node a, std::size_t start, std::size_t width) {
    const Tensor& av = value(a);
    require_matrix(av, "slice_cols");
    if (width == 0 || start + width > av.dim(1)) {
        throw DimensionError("slice_cols: [" + std::to_string(start) + ", " + std::to_string(start + width) +
                             ") out of range for " + shape_string(av.shape()));
    }
    Tensor out({av.dim(0), width});
    for (std::size_t r = 0; r < av.dim(0); ++r)
        for (std::size_t c = 0; c < width; ++c) out.at(r, c) = av.at(r, start + c);
    Node n = push(OpKind::SliceCols, {a.id}, std::move(out));
    nodes_[n.id].iparam = start;
    return n;
}

Node Graph::concat_cols(std::span<const Node> parts) {
    if (parts.empty()) throw ContractError("concat_cols of zero tensors");
    const std::size_t rows = value(parts[0]).dim(0);
    std::size_t total = 0;
    std::vector<int> ids;
    for (Node p : parts) {
        const Tensor& v = value(p);
        require_matrix(v, "concat_cols");
        if (v.dim(0) != rows) throw DimensionError("concat_cols: row counts differ, " + shape_string(v.shape()));
        total += v.dim(1);
        ids.push_back(p.id);
    }
    Tensor out({rows, total});
    std::size_t off = 0;
    for (Node p : parts) {
        const Tensor& v = value(p);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < v.dim(1); ++c) out.at(r, off + c) = v.at(r, c);
        off += v.dim(1);
    }
    return push(OpKind::ConcatCols, std::move(ids), std::move(out));
}

Node Graph::concat_rows(std::span<const Node> parts) {
    if (parts.empty()) throw ContractError("concat_rows of zero tensors");
    const std::size_t cols = value(parts[0]).cols();
    std::size_t total = 0;
    std::vector<int> ids;
    for (Node p : parts) {
        const Tensor& v = value(p);
        require_matrix(v, "concat_rows");
        if (v.dim(1) != cols) throw DimensionError("concat_rows: column counts differ, " + shape_string(v.shape()));
        total += v.dim(0);
        ids.push_back(p.id);
    }
    std::vector<float> data;
    data.reserve(total * cols);
    for (Node p : parts) {
        auto d = value(p).data();
        data.insert(data.end(), d.begin(), d.end());
    }
    return push(OpKind::ConcatRows, std::move(ids), Tensor({total, cols}, std::move(data)));
}

Node Graph::gather(Node table, std::span<const int> ids) {
    const Tensor& tv = value(table);
    require_matrix(tv, "gather");
    if (ids.empty()) throw ContractError("gather with no ids");
    Tensor out({ids.size(), tv.dim(1)});
    for (std::size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= tv.dim(0)) {
            throw ContractError("gather: id " + std::to_string(ids[r]) + " out of range for table " +
                                shape_string(tv.shape()));
        }
        auto src = tv.row(static_cast<std::size_t>(ids[r]));
        std::copy(src.begin(), src.end(), out.row(r).begin());
    }
    Node n = push(OpKind::Gather, {table.id}, std::move(out));
    nodes_[n.id].ids.assign(ids.begin(), ids.end());
    return n;
}

Node Graph::sum(Node a) {
    double s = 0.0;
    for (float v : value(a).data()) s += v;
    return push(OpKind::Sum, {a.id}, Tensor::scalar(static_cast<float>(s)));
}

Node Graph::mean(Node a) {
    double s = 0.0;
    for (float v : value(a).data()) s += v;
    return push(OpKind::Mean, {a.id}, Tensor::scalar(static_cast<float>(s / static_cast<double>(value(a).size()))));
}

Node Graph::mse(Node a, Node b) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    if (av.shape() != bv.shape()) {
        throw DimensionError("mse: shapes differ, " + shape_string(av.shape()) + " vs " + shape_string(bv.shape()));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double d = static_cast<double>(av[i]) - bv[i];
        s += d * d;
    }
    return push(OpKind::Mse, {a.id, b.id}, Tensor::scalar(static_cast<float>(s / static_cast<double>(av.size()))));
}

Node Graph::softmax_ce(Node logits, std::span<const int> targets) {
    const Tensor& lv = value(logits);
    require_matrix(lv, "softmax_ce");
    const std::size_t T = lv.dim(0), V = lv.dim(1);
    if (targets.size() != T) {
        throw DimensionError("softmax_ce: " + std::to_string(targets.size()) + " targets for " + std::to_string(T) +
                             " rows");
    }
    std::vector<double> lse(T);
    double total = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
        if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= V) {
            throw ContractError("softmax_ce: target " + std::to_string(targets[t]) + " out of range [0, " +
                                std::to_string(V) + ")");
        }
        double m = lv.at(t, 0);
        for (std::size_t v = 1; v < V; ++v) m = std::max(m, static_cast<double>(lv.at(t, v)));
        double z = 0.0;
        for (std::size_t v = 0; v < V; ++v) z += std::exp(lv.at(t, v) - m);
        lse[t] = m + std::log(z);
        total += lse[t] - lv.at(t, static_cast<std::size_t>(targets[t]));
    }
    Node n = push(OpKind::SoftmaxCe, {logits.id}, Tensor::scalar(static_cast<float>(total / static_cast<double>(T))));
    nodes_[n.id].saved = std::move(lse);
    nodes_[n.id].ids.assign(targets.begin(), targets.end());
    return n;
}

Tensor& Graph::grad_slot(int id) {
    auto& slot = grads_[id];
    if (!slot) slot = Tensor(nodes_[id].value().shape(), 0.0f);
    return *slot;
}

const Tensor& Graph::grad(Node n) {
    rec(n);
    if (grads_.size() < nodes_.size()) grads_.resize(nodes_.size());
    return grad_slot(n.id);
}

void Graph::backward(Node loss) {
    const Record& lr = rec(loss);
    if (lr.value().size() != 1) {
        throw ContractError("backward requires a scalar loss, got " + shape_string(lr.value().shape()));
    }
    if (backward_done_) throw ContractError("backward already ran on this graph");
    backward_done_ = true;
    grads_.assign(nodes_.size(), std::nullopt);
    grads_[loss.id] = Tensor(lr.value().shape(), 1.0f);
    for (int id = loss.id; id >= 0; --id) {
        if (nodes_[id].requires_grad && grads_[id] && nodes_[id].kind != OpKind::Leaf) backprop(id);
    }
}

void Graph::backprop(int id) {
    const Record& r = nodes_[id];
    const Tensor& g = *grads_[id];
    auto wants = [&](std::size_t k) { return nodes_[r.inputs[k]].requires_grad; };
    auto in = [&](std::size_t k) -> const Tensor& { return nodes_[r.inputs[k]].value(); };

    switch (r.kind) {
    case OpKind::Leaf: break;
    case OpKind::MatMul: {
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
        if (wants(0)) {
            Tensor bt = transposed(b);
            Tensor da({m, k});
            gemm(g.data().data(), bt.data().data(), da.data().data(), m, n, k);
            Tensor& ga = grad_slot(r.inputs[0]);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += da[i];
        }
        if (wants(1)) {
            Tensor at = transposed(a);
            Tensor db({k, n});
            gemm(at.data().data(), g.data().data(), db.data().data(), k, m, n);
            Tensor& gb = grad_slot(r.inputs[1]);
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += db[i];
        }
        break;
    }
    case OpKind::Transpose: {
        Tensor gt = transposed(g);
        Tensor& ga = grad_slot(r.inputs[0]);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gt[i];
        break;
    }
    case OpKind::Reshape:
    case OpKind::ConcatRows: {
        std::size_t off = 0;
        for (std::size_t k = 0; k < r.inputs.size(); ++k) {
            const std::size_t n = in(k).size();
            if (wants(k)) {
                Tensor& gi = grad_slot(r.inputs[k]);
                for (std::size_t i = 0; i < n; ++i) gi[i] += g[off + i];
            }
            off += n;
        }
        break;
    }
    case OpKind::Add:
    case OpKind::Mul: {
        const bool is_mul = r.kind == OpKind::Mul;
        for (std::size_t k = 0; k < 2; ++k) {
            if (!wants(k)) continue;
            const Tensor& self = in(k);
            const Tensor& other = in(1 - k);
            Tensor& gi = grad_slot(r.inputs[k]);
            if (self.size() == g.size()) {
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const double o = !is_mul ? 1.0 : (other.size() == 1 ? other[0] : other[i]);
                    gi[i] += static_cast<float>(g[i] * o);
                }
            } else {
                double s = 0.0;
                for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * (is_mul ? static_cast<double>(other[i]) : 1.0);
                gi[0] += static_cast<float>(s);
            }
        }
        break;
    }
    case OpKind::Scale: {
        Tensor& ga = grad_slot(r.inputs[0]);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += static_cast<float>(g[i] * r.param);
        break;
    }
    case OpKind::Silu: {
        const Tensor& x = in(0);
        Tensor& ga = grad_slot(r.inputs[0]);
        for (std::size_t i = 0; i < ga.size(); ++i) {
            const double xv = x[i];
            const double s = sigmoid(xv);
            ga[i] += static_cast<float>(g[i] * s * (1.0 + xv * (1.0 - s)));
        }
        break;
    }
    case OpKind::Gelu: {
        const Tensor& x = in(0);
        Tensor& ga = grad_slot(r.inputs[0]);
        for (std::size_t i = 0; i < ga.size(); ++i) {
            const double xv = x[i];
            const double t = std::tanh(kGeluC * (xv + kGeluK * xv * xv * xv));
            const double d = 0.5 * (1.0 + t) + 0.5 * xv * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluK * xv * xv);
            ga[i] += static_cast<float>(g[i] * d);
        }
        break;
    }
    case OpKind::RmsNorm: {
        const Tensor& x = in(0);
        const Tensor& gain = in(1);
        const std::size_t d = x.cols();
        std::vector<double> dgain(d, 0.0);
        Tensor* gx = wants(0) ? &grad_slot(r.inputs[0]) : nullptr;
        for (std::size_t row = 0; row < x.rows(); ++row) {
            const double ir = r.saved[row];
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                dot += static_cast<double>(g.at(row, j)) * gain[j] * x.at(row, j);
                dgain[j] += static_cast<double>(g.at(row, j)) * x.at(row, j) * ir;
            }
            if (gx) {
                const double c = ir * ir * ir * dot / static_cast<double>(d);
                for (std::size_t j = 0; j < d; ++j) {
                    gx->at(row, j) += static_cast<float>(ir * gain[j] * g.at(row, j) - x.at(row, j) * c);
                }
            }
        }
        if (wants(1)) {
            Tensor& gg = grad_slot(r.inputs[1]);
            for (std::size_t j = 0; j < d; ++j) gg[j] += static_cast<float>(dgain[j]);
        }
        break;
    }
    case OpKind::Rope: {
        const std::size_t n_heads = r.iparam;
        const std::size_t hd = g.dim(1) / n_heads;
        Tensor& ga = grad_slot(r.inputs[0]);
        for (std::size_t t = 0; t < g.dim(0); ++t) {
            for (std::size_t i = 0; i < hd / 2; ++i) {
                const double theta = static_cast<double>(t) * std::pow(r.param, -2.0 * i / hd);
                const double c = std::cos(theta), s = std::sin(theta);
                for (std::size_t h = 0; h < n_heads; ++h) {
                    const std::size_t j = h * hd + 2 * i;
                    const double g0 = g.at(t, j), g1 = g.at(t, j + 1);
                    ga.at(t, j) += static_cast<float>(g0 * c + g1 * s);
                    ga.at(t, j + 1) += static_cast<float>(-g0 * s + g1 * c);
                }
            }
        }
        break;
    }
    case OpKind::CausalSoftmax: {
        const Tensor& p = r.value();
        Tensor& ga = grad_slot(r.inputs[0]);
        const std::size_t T = p.dim(0);
        for (std::size_t i = 0; i < T; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j <= i; ++j) dot += static_cast<double>(p.at(i, j)) * g.at(i, j);
            for (std::size_t j = 0; j <= i; ++j) ga.at(i, j) += static_cast<float>(p.at(i, j) * (g.at(i, j) - dot));
        }
        break;
    }
    case OpKind::SliceCols: {
        Tensor& ga = grad_slot(r.inputs[0]);
        for (std::size_t row = 0; row < g.dim(0); ++row)
            for (std::size_t c = 0; c < g.dim(1); ++c) ga.at(row, r.iparam + c) += g.at(row, c);
        break;
    }
    case OpKind::ConcatCols: {
        std::size_t off = 0;
        for (std::size_t k = 0; k < r.inputs.size(); ++k) {
            const std::size_t w = in(k).dim(1);
            if (wants(k)) {
                Tensor& gi = grad_slot(r.inputs[k]);
                for (std::size_t row = 0; row < g.dim(0); ++row)
                    for (std::size_t c = 0; c < w; ++c) gi.at(row, c) += g.at(row, off + c);
            }
            off += w;
        }
        break;
    }
    case OpKind::Gather: {
        Tensor& gt = grad_slot(r.inputs[0]);
        for (std::size_t row = 0; row < r.ids.size(); ++row) {
            auto dst = gt.row(static_cast<std::size_t>(r.ids[row]));
            auto src = g.row(row);
            for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
        }
        break;
    }
    case OpKind::Sum:
    case OpKind::Mean: {
        Tensor& ga = grad_slot(r.inputs[0]);
        const double s = r.kind == OpKind::Sum ? g[0] : g[0] / static_cast<double>(ga.size());
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += static_cast<float>(s);
        break;
    }
    case OpKind::Mse: {
        const Tensor& a = in(0);
        const Tensor& b = in(1);
        const double c = 2.0 * g[0] / static_cast<double>(a.size());
        Tensor* ga = wants(0) ? &grad_slot(r.inputs[0]) : nullptr;
        Tensor* gb = wants(1) ? &grad_slot(r.inputs[1]) : nullptr;
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double d = c * (static_cast<double>(a[i]) - b[i]);
            if (ga) (*ga)[i] += static_cast<float>(d);
            if (gb) (*gb)[i] -= static_cast<float>(d);
        }
        break;
    }
    case OpKind::SoftmaxCe: {
        const Tensor& logits = in(0);
        Tensor& gl = grad_slot(r.inputs[0]);
        const std::size_t T = logits.dim(0), V = logits.dim(1);
        const double c = g[0] / static_cast<double>(T);
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t v = 0; v < V; ++v) {
                double p = std::exp(logits.at(t, v) - r.saved[t]);
                if (static_cast<int>(v) == r.ids[t]) p -= 1.0;
                gl.at(t, v) += static_cast<float>(c * p);
            }
        }
        break;
    }
    }
}

} // namespace streamline
