#pragma once

// Test-only reference implementations in double precision. Nothing here
// calls into the library's graph code, so these serve as independent
// oracles for forward values and finite-difference gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;

struct Mat {
    std::size_t r = 0, c = 0;
    Vec v;
    Mat() = default;
    Mat(std::size_t rows, std::size_t cols) : r(rows), c(cols), v(rows * cols, 0.0) {}
    double& operator()(std::size_t i, std::size_t j) { return v[i * c + j]; }
    double operator()(std::size_t i, std::size_t j) const { return v[i * c + j]; }
};

template <typename T>
Mat to_mat(const T& tensor) {
    Mat m(tensor.rows(), tensor.cols());
    for (std::size_t i = 0; i < m.v.size(); ++i) m.v[i] = tensor[i];
    return m;
}

inline Mat matmul(const Mat& a, const Mat& b) {
    Mat out(a.r, b.c);
    for (std::size_t i = 0; i < a.r; ++i)
        for (std::size_t j = 0; j < b.c; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.c; ++k) s += a(i, k) * b(k, j);
            out(i, j) = s;
        }
    return out;
}

inline Mat add(const Mat& a, const Mat& b) {
    Mat out = a;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += b.v[i];
    return out;
}

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }

inline double gelu(double x) {
    return 0.5 * x * (1.0 + std::tanh(0.7978845608028654 * (x + 0.044715 * x * x * x)));
}

inline Mat rmsnorm(const Mat& x, const Vec& gain, double eps) {
    Mat out(x.r, x.c);
    for (std::size_t i = 0; i < x.r; ++i) {
        double ss = 0.0;
        for (std::size_t j = 0; j < x.c; ++j) ss += x(i, j) * x(i, j);
        const double ms = ss / static_cast<double>(x.c) + eps;
        const double inv = ms > 0 ? 1.0 / std::sqrt(ms) : 0.0;
        for (std::size_t j = 0; j < x.c; ++j) out(i, j) = x(i, j) * inv * gain[j];
    }
    return out;
}

inline Mat rope(const Mat& x, std::size_t heads, double base = 10000.0) {
    Mat out = x;
    const std::size_t hd = x.c / heads;
    for (std::size_t t = 0; t < x.r; ++t)
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < hd / 2; ++i) {
                const double theta = static_cast<double>(t) / std::pow(base, 2.0 * i / hd);
                const std::size_t j = h * hd + 2 * i;
                out(t, j) = x(t, j) * std::cos(theta) - x(t, j + 1) * std::sin(theta);
                out(t, j + 1) = x(t, j) * std::sin(theta) + x(t, j + 1) * std::cos(theta);
            }
    return out;
}

// Causal multi-head attention without output projection.
inline Mat attention(const Mat& q, const Mat& k, const Mat& v, std::size_t heads) {
    const std::size_t T = q.r, hd = q.c / heads;
    Mat out(T, q.c);
    for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t i = 0; i < T; ++i) {
            Vec s(i + 1);
            double m = -1e300;
            for (std::size_t j = 0; j <= i; ++j) {
                double dot = 0.0;
                for (std::size_t e = 0; e < hd; ++e) dot += q(i, h * hd + e) * k(j, h * hd + e);
                s[j] = dot / std::sqrt(static_cast<double>(hd));
                m = std::max(m, s[j]);
            }
            double z = 0.0;
            for (double& sj : s) z += (sj = std::exp(sj - m));
            for (std::size_t j = 0; j <= i; ++j)
                for (std::size_t e = 0; e < hd; ++e) out(i, h * hd + e) += s[j] / z * v(j, h * hd + e);
        }
    return out;
}

struct Layer {
    Mat wq, wk, wv, wo, w_gate, w_up, w_down;
    Vec attn_norm, mlp_norm;
};

struct LayerOut {
    Mat attn, mlp, out;
};

inline LayerOut layer(const Mat& x, const Layer& w, std::size_t heads, double eps) {
    LayerOut r;
    Mat h = rmsnorm(x, w.attn_norm, eps);
    Mat q = rope(matmul(h, w.wq), heads);
    Mat k = rope(matmul(h, w.wk), heads);
    Mat v = matmul(h, w.wv);
    r.attn = matmul(attention(q, k, v, heads), w.wo);
    Mat x1 = add(x, r.attn);
    Mat h2 = rmsnorm(x1, w.mlp_norm, eps);
    Mat g = matmul(h2, w.w_gate), u = matmul(h2, w.w_up);
    for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] = silu(g.v[i]) * u.v[i];
    r.mlp = matmul(g, w.w_down);
    r.out = add(x1, r.mlp);
    return r;
}

// Residual FFN: x + silu(rmsnorm(x) W_in) W_out.
inline Mat ffn_residual(const Mat& x, const Vec& norm, const Mat& w_in, const Mat& w_out, double eps) {
    Mat h = matmul(rmsnorm(x, norm, eps), w_in);
    for (double& e : h.v) e = silu(e);
    return add(x, matmul(h, w_out));
}

inline Mat swiglu_residual(const Mat& x, const Vec& norm, const Mat& w_gate, const Mat& w_up, const Mat& w_down,
                           double eps) {
    Mat n = rmsnorm(x, norm, eps);
    Mat g = matmul(n, w_gate), u = matmul(n, w_up);
    for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] = silu(g.v[i]) * u.v[i];
    return add(x, matmul(g, w_down));
}

inline double mse(const Mat& a, const Mat& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.v.size(); ++i) s += (a.v[i] - b.v[i]) * (a.v[i] - b.v[i]);
    return s / static_cast<double>(a.v.size());
}

inline double softmax_ce(const Mat& logits, const std::vector<int>& targets) {
    double total = 0.0;
    for (std::size_t t = 0; t < logits.r; ++t) {
        double m = -1e300;
        for (std::size_t v = 0; v < logits.c; ++v) m = std::max(m, logits(t, v));
        double z = 0.0;
        for (std::size_t v = 0; v < logits.c; ++v) z += std::exp(logits(t, v) - m);
        total += m + std::log(z) - logits(t, static_cast<std::size_t>(targets[t]));
    }
    return total / static_cast<double>(logits.r);
}

// Central differences of f at x with step h.
inline Vec finite_difference(const std::function<double(const Vec&)>& f, Vec x, double h = 1e-3) {
    Vec g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + h;
        const double fp = f(x);
        x[i] = orig - h;
        const double fm = f(x);
        x[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

// ||a - b|| / max(||a||, ||b||), with a tiny floor so exact zeros compare.
template <typename A, typename B>
double relative_error(const A& a, const B& b) {
    double diff = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < b.size(); ++i) {
        const double x = a[i], y = b[i];
        diff += (x - y) * (x - y);
        na += x * x;
        nb += y * y;
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-30});
}

// Cosine of two vectors, or nullopt-like negative sentinel when degenerate.
inline bool token_cosine(const double* a, const double* b, std::size_t d, double& out) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return false;
    out = dot / (std::sqrt(na) * std::sqrt(nb));
    return true;
}

} // namespace oracle
