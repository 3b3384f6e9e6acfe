#include "tensor.hpp"

#include <algorithm>
#include <cmath>

namespace svs {

static std::string shape_str(const std::vector<int64_t> &s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); i++) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

tensor_ptr make_tensor(std::vector<int64_t> shape, bool requires_grad, std::string name) {
    auto t = std::make_shared<tensor>();
    t->shape = std::move(shape);
    t->data.assign(size_t(t->numel()), 0.0);
    t->requires_grad = requires_grad;
    t->needs_grad = requires_grad;
    t->name = std::move(name);
    if (t->needs_grad) t->alloc_grad();
    return t;
}

tensor_ptr make_tensor(std::vector<int64_t> shape, std::vector<double> vals,
                       bool requires_grad, std::string name) {
    auto t = make_tensor(std::move(shape), requires_grad, std::move(name));
    if (int64_t(vals.size()) != t->numel())
        fail(errc::usage, strfmt("tensor %s: %zu values for shape %s", t->name.c_str(),
                                 vals.size(), shape_str(t->shape).c_str()));
    t->data = std::move(vals);
    return t;
}

tensor_ptr full_tensor(std::vector<int64_t> shape, double v) {
    auto t = make_tensor(std::move(shape));
    std::fill(t->data.begin(), t->data.end(), v);
    return t;
}

tensor_ptr randn_tensor(rng &r, std::vector<int64_t> shape, double scale,
                        bool requires_grad, std::string name) {
    auto t = make_tensor(std::move(shape), requires_grad, std::move(name));
    for (auto &x : t->data) x = r.normal() * scale;
    return t;
}

//
// raw matmul kernels
//

void matmul_raw(const double *a, const double *b, double *c, int64_t m, int64_t k, int64_t n) {
    std::fill(c, c + m * n, 0.0);
    for (int64_t i = 0; i < m; i++) {
        const double *arow = a + i * k;
        double *crow = c + i * n;
        for (int64_t l = 0; l < k; l++) {
            const double ail = arow[l];
            const double *brow = b + l * n;
            for (int64_t j = 0; j < n; j++) crow[j] += ail * brow[j];
        }
    }
}

void matmul_nt_acc(const double *a, const double *b, double *c, int64_t m, int64_t k, int64_t n) {
    for (int64_t i = 0; i < m; i++) {
        const double *arow = a + i * k;
        double *crow = c + i * n;
        for (int64_t j = 0; j < n; j++) {
            const double *brow = b + j * k;
            double acc = 0.0;
            for (int64_t l = 0; l < k; l++) acc += arow[l] * brow[l];
            crow[j] += acc;
        }
    }
}

void matmul_tn_acc(const double *a, const double *b, double *c, int64_t m, int64_t k, int64_t n) {
    for (int64_t l = 0; l < k; l++) {
        const double *arow = a + l * m;
        const double *brow = b + l * n;
        for (int64_t i = 0; i < m; i++) {
            const double ali = arow[i];
            if (ali == 0.0) continue;
            double *crow = c + i * n;
            for (int64_t j = 0; j < n; j++) crow[j] += ali * brow[j];
        }
    }
}

//
// tape
//

tensor_ptr tape::record(tensor_ptr t) {
    for (const auto &in : t->inputs)
        if (in->needs_grad) { t->needs_grad = true; break; }
    if (t->needs_grad) t->alloc_grad();
    for (double v : t->data)
        if (!std::isfinite(v))
            fail(errc::runtime, strfmt("non-finite value produced by op '%s'", t->op));
    nodes.push_back(t);
    return t;
}

// b broadcasts over a's leading dims when its shape equals a trailing
// suffix of a's shape; anything else is a shape error.
static int64_t broadcast_reps(const tensor_ptr &a, const tensor_ptr &b, const char *op) {
    if (b->numel() > a->numel() || a->numel() % std::max<int64_t>(b->numel(), 1) != 0)
        fail(errc::usage, strfmt("%s: shapes %s and %s not trailing-broadcastable", op,
                                 shape_str(a->shape).c_str(), shape_str(b->shape).c_str()));
    size_t off = a->shape.size() - b->shape.size();
    if (b->shape.size() > a->shape.size()) off = 0;
    int64_t bn = 1;
    for (size_t i = 0; i < b->shape.size(); i++) {
        if (a->shape.size() < b->shape.size() || a->shape[off + i] != b->shape[i])
            fail(errc::usage, strfmt("%s: shapes %s and %s not trailing-broadcastable", op,
                                     shape_str(a->shape).c_str(), shape_str(b->shape).c_str()));
        bn *= b->shape[i];
    }
    return a->numel() / std::max<int64_t>(bn, 1);
}

tensor_ptr tape::add(const tensor_ptr &a, const tensor_ptr &b) {
    int64_t reps = broadcast_reps(a, b, "add");
    auto out = make_tensor(a->shape);
    out->op = "add";
    out->inputs = {a, b};
    const int64_t bn = b->numel();
    for (int64_t r = 0; r < reps; r++)
        for (int64_t i = 0; i < bn; i++)
            out->data[r * bn + i] = a->data[r * bn + i] + b->data[i];
    out->backprop = [reps, bn](tensor &t) {
        auto &a = t.inputs[0], &b = t.inputs[1];
        if (!a->grad.empty())
            for (size_t i = 0; i < t.grad.size(); i++) a->grad[i] += t.grad[i];
        if (!b->grad.empty())
            for (int64_t r = 0; r < reps; r++)
                for (int64_t i = 0; i < bn; i++) b->grad[i] += t.grad[r * bn + i];
    };
    return record(out);
}

tensor_ptr tape::sub(const tensor_ptr &a, const tensor_ptr &b) {
    int64_t reps = broadcast_reps(a, b, "sub");
    auto out = make_tensor(a->shape);
    out->op = "sub";
    out->inputs = {a, b};
    const int64_t bn = b->numel();
    for (int64_t r = 0; r < reps; r++)
        for (int64_t i = 0; i < bn; i++)
            out->data[r * bn + i] = a->data[r * bn + i] - b->data[i];
    out->backprop = [reps, bn](tensor &t) {
        auto &a = t.inputs[0], &b = t.inputs[1];
        if (!a->grad.empty())
            for (size_t i = 0; i < t.grad.size(); i++) a->grad[i] += t.grad[i];
        if (!b->grad.empty())
            for (int64_t r = 0; r < reps; r++)
                for (int64_t i = 0; i < bn; i++) b->grad[i] -= t.grad[r * bn + i];
    };
    return record(out);
}

tensor_ptr tape::mul(const tensor_ptr &a, const tensor_ptr &b) {
    int64_t reps = broadcast_reps(a, b, "mul");
    auto out = make_tensor(a->shape);
    out->op = "mul";
    out->inputs = {a, b};
    const int64_t bn = b->numel();
    for (int64_t r = 0; r < reps; r++)
        for (int64_t i = 0; i < bn; i++)
            out->data[r * bn + i] = a->data[r * bn + i] * b->data[i];
    out->backprop = [reps, bn](tensor &t) {
        auto &a = t.inputs[0], &b = t.inputs[1];
        if (!a->grad.empty())
            for (int64_t r = 0; r < reps; r++)
                for (int64_t i = 0; i < bn; i++)
                    a->grad[r * bn + i] += t.grad[r * bn + i] * b->data[i];
        if (!b->grad.empty())
            for (int64_t r = 0; r < reps; r++)
                for (int64_t i = 0; i < bn; i++)
                    b->grad[i] += t.grad[r * bn + i] * a->data[r * bn + i];
    };
    return record(out);
}

tensor_ptr tape::scale(const tensor_ptr &a, double c) {
    auto out = make_tensor(a->shape);
    out->op = "scale";
    out->inputs = {a};
    for (size_t i = 0; i < out->data.size(); i++) out->data[i] = a->data[i] * c;
    out->backprop = [c](tensor &t) {
        auto &a = t.inputs[0];
        if (!a->grad.empty())
            for (size_t i = 0; i < t.grad.size(); i++) a->grad[i] += t.grad[i] * c;
    };
    return record(out);
}

tensor_ptr tape::tanh_act(const tensor_ptr &a) {
    auto out = make_tensor(a->shape);
    out->op = "tanh";
    out->inputs = {a};
    for (size_t i = 0; i < out->data.size(); i++) out->data[i] = std::tanh(a->data[i]);
    out->backprop = [](tensor &t) {
        auto &a = t.inputs[0];
        if (a->grad.empty()) return;
        for (size_t i = 0; i < t.grad.size(); i++)
            a->grad[i] += t.grad[i] * (1.0 - t.data[i] * t.data[i]);
    };
    return record(out);
}

static const double kInvSqrt2 = 0.70710678118654752440;
static const double kInvSqrt2Pi = 0.39894228040143267794;

tensor_ptr tape::gelu(const tensor_ptr &a) {
    auto out = make_tensor(a->shape);
    out->op = "gelu";
    out->inputs = {a};
    for (size_t i = 0; i < out->data.size(); i++) {
        double x = a->data[i];
        out->data[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
    out->backprop = [](tensor &t) {
        auto &a = t.inputs[0];
        if (a->grad.empty()) return;
        for (size_t i = 0; i < t.grad.size(); i++) {
            double x = a->data[i];
            double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            a->grad[i] += t.grad[i] * (cdf + x * pdf);
        }
    };
    return record(out);
}

tensor_ptr tape::matmul(const tensor_ptr &a, const tensor_ptr &b) {
    if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[0])
        fail(errc::usage, strfmt("matmul: incompatible shapes %s and %s",
                                 shape_str(a->shape).c_str(), shape_str(b->shape).c_str()));
    const int64_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
    auto out = make_tensor({m, n});
    out->op = "matmul";
    out->inputs = {a, b};
    matmul_raw(a->data.data(), b->data.data(), out->data.data(), m, k, n);
    out->backprop = [m, k, n](tensor &t) {
        auto &a = t.inputs[0], &b = t.inputs[1];
        // grad_a += grad_out · b^T, grad_b += a^T · grad_out
        if (!a->grad.empty())
            matmul_nt_acc(t.grad.data(), b->data.data(), a->grad.data(), m, n, k);
        if (!b->grad.empty())
            matmul_tn_acc(a->data.data(), t.grad.data(), b->grad.data(), k, m, n);
    };
    return record(out);
}

tensor_ptr tape::transpose(const tensor_ptr &a) {
    if (a->shape.size() != 2)
        fail(errc::usage, strfmt("transpose: rank-2 required, got %s", shape_str(a->shape).c_str()));
    const int64_t m = a->shape[0], n = a->shape[1];
    auto out = make_tensor({n, m});
    out->op = "transpose";
    out->inputs = {a};
    for (int64_t i = 0; i < m; i++)
        for (int64_t j = 0; j < n; j++) out->data[j * m + i] = a->data[i * n + j];
    out->backprop = [m, n](tensor &t) {
        auto &a = t.inputs[0];
        if (a->grad.empty()) return;
        for (int64_t i = 0; i < m; i++)
            for (int64_t j = 0; j < n; j++) a->grad[i * n + j] += t.grad[j * m + i];
    };
    return record(out);
}

tensor_ptr tape::softmax_rows(const tensor_ptr &a) {
    if (a->shape.size() != 2)
        fail(errc::usage, "softmax_rows: rank-2 required");
    const int64_t m = a->shape[0], n = a->shape[1];
    auto out = make_tensor(a->shape);
    out->op = "softmax_rows";
    out->inputs = {a};
    for (int64_t i = 0; i < m; i++) {
        const double *x = a->data.data() + i * n;
        double *y = out->data.data() + i * n;
        double mx = x[0];
        for (int64_t j = 1; j < n; j++) mx = std::max(mx, x[j]);
        double sum = 0.0;
        for (int64_t j = 0; j < n; j++) { y[j] = std::exp(x[j] - mx); sum += y[j]; }
        for (int64_t j = 0; j < n; j++) y[j] /= sum;
    }
    out->backprop = [m, n](tensor &t) {
        auto &a = t.inputs[0];
        if (a->grad.empty()) return;
        for (int64_t i = 0; i < m; i++) {
            const double *y = t.data.data() + i * n;
            const double *g = t.grad.data() + i * n;
            double dot = 0.0;
            for (int64_t j = 0; j < n; j++) dot += y[j] * g[j];
            double *ga = a->grad.data() + i * n;
            for (int64_t j = 0; j < n; j++) ga[j] += y[j] * (g[j] - dot);
        }
    };
    return record(out);
}

static const double kLnEps = 1e-5;

tensor_ptr tape::layer_norm(const tensor_ptr &a, const tensor_ptr &gain, const tensor_ptr &bias) {
    if (a->shape.size() != 2)
        fail(errc::usage, "layer_norm: rank-2 required");
    const int64_t m = a->shape[0], n = a->shape[1];
    if (gain->numel() != n || bias->numel() != n)
        fail(errc::usage, "layer_norm: gain/bias must match feature dim");
    auto out = make_tensor(a->shape);
    out->op = "layer_norm";
    out->inputs = {a, gain, bias};
    // cache inverse stddev per row for backward
    auto inv_std = std::make_shared<std::vector<double>>(size_t(m));
    auto xhat = std::make_shared<std::vector<double>>(size_t(m * n));
    for (int64_t i = 0; i < m; i++) {
        const double *x = a->data.data() + i * n;
        double mu = 0.0;
        for (int64_t j = 0; j < n; j++) mu += x[j];
        mu /= double(n);
        double var = 0.0;
        for (int64_t j = 0; j < n; j++) { double d = x[j] - mu; var += d * d; }
        var /= double(n);
        double is = 1.0 / std::sqrt(var + kLnEps);
        (*inv_std)[i] = is;
        for (int64_t j = 0; j < n; j++) {
            double xh = (x[j] - mu) * is;
            (*xhat)[i * n + j] = xh;
            out->data[i * n + j] = gain->data[j] * xh + bias->data[j];
        }
    }
    out->backprop = [m, n, inv_std, xhat](tensor &t) {
        auto &a = t.inputs[0], &gain = t.inputs[1], &bias = t.inputs[2];
        for (int64_t i = 0; i < m; i++) {
            const double *g = t.grad.data() + i * n;
            const double *xh = xhat->data() + i * n;
            if (!gain->grad.empty())
                for (int64_t j = 0; j < n; j++) gain->grad[j] += g[j] * xh[j];
            if (!bias->grad.empty())
                for (int64_t j = 0; j < n; j++) bias->grad[j] += g[j];
            if (!a->grad.empty()) {
                double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                for (int64_t j = 0; j < n; j++) {
                    double dxh = g[j] * gain->data[j];
                    mean_dxh += dxh;
                    mean_dxh_xh += dxh * xh[j];
                }
                mean_dxh /= double(n);
                mean_dxh_xh /= double(n);
                double is = (*inv_std)[i];
                double *ga = a->grad.data() + i * n;
                for (int64_t j = 0; j < n; j++) {
                    double dxh = g[j] * gain->data[j];
                    ga[j] += is * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
                }
            }
        }
    };
    return record(out);
}

tensor_ptr tape::embedding(const tensor_ptr &table, const std::vector<int64_t> &ids) {
    if (table->shape.size() != 2)
        fail(errc::usage, "embedding: table must be rank-2");
    const int64_t v = table->shape[0], d = table->shape[1];
    for (int64_t id : ids)
        if (id < 0 || id >= v)
            fail(errc::usage, strfmt("embedding: id %lld out of range [0,%lld)",
                                     (long long)id, (long long)v));
    auto out = make_tensor({int64_t(ids.size()), d});
    out->op = "embedding";
    out->inputs = {table};
    auto idv = std::make_shared<std::vector<int64_t>>(ids);
    for (size_t i = 0; i < ids.size(); i++)
        std::copy_n(table->data.data() + ids[i] * d, d, out->data.data() + i * d);
    out->backprop = [d, idv](tensor &t) {
        auto &table = t.inputs[0];
        if (table->grad.empty()) return;
        for (size_t i = 0; i < idv->size(); i++) {
            double *dst = table->grad.data() + (*idv)[i] * d;
            const double *src = t.grad.data() + i * d;
            for (int64_t j = 0; j < d; j++) dst[j] += src[j];
        }
    };
    return record(out);
}

tensor_ptr tape::slice_rows(const tensor_ptr &a, int64_t r0, int64_t r1) {
    const int64_t m = a->rows(), n = a->cols();
    if (r0 < 0 || r1 > m || r0 >= r1)
        fail(errc::usage, strfmt("slice_rows: [%lld,%lld) invalid for %lld rows",
                                 (long long)r0, (long long)r1, (long long)m));
    auto out = make_tensor({r1 - r0, n});
    out->op = "slice_rows";
    out->inputs = {a};
    std::copy_n(a->data.data() + r0 * n, (r1 - r0) * n, out->data.data());
    out->backprop = [r0, n](tensor &t) {
        auto &a = t.inputs[0];
        if (a->grad.empty()) return;
        for (size_t i = 0; i < t.grad.size(); i++) a->grad[r0 * n + i] += t.grad[i];
    };
    return record(out);
}

tensor_ptr tape::slice_cols(const tensor_ptr &a, int64_t c0, int64_t c1) {
    if (a->shape.size() != 2)
        fail(errc::usage, "slice_cols: rank-2 required");
    const int64_t m = a->shape[0], n = a->shape[1];
    if (c0 < 0 || c1 > n || c0 >= c1)
        fail(errc::usage, strfmt("slice_cols: [%lld,%lld) invalid for %lld cols",
                                 (long long)c0, (long long)c1, (long long)n));
    const int64_t w = c1 - c0;
    auto out = make_tensor({m, w});
    out->op = "slice_cols";
    out->inputs = {a};
    for (int64_t i = 0; i < m; i++)
        std::copy_n(a->data.data() + i * n + c0, w, out->data.data() + i * w);
    out->backprop = [m, n, c0, w](tensor &t) {
        auto &a = t.inputs[0];
        if (a->grad.empty()) return;
        for (int64_t i = 0; i < m; i++) {
            const double *g = t.grad.data() + i * w;
            double *ga = a->grad.data() + i * n + c0;
            for (int64_t j = 0; j < w; j++) ga[j] += g[j];
        }
    };
    return record(out);
}

tensor_ptr tape::shift_rows(const tensor_ptr &a, int64_t delta) {
    const int64_t m = a->rows(), n = a->cols();
    auto out = make_tensor({m, n});
    out->op = "shift_rows";
    out->inputs = {a};
    for (int64_t i = 0; i < m; i++) {
        int64_t src = i + delta;
        if (src >= 0 && src < m)
            std::copy_n(a->data.data() + src * n, n, out->data.data() + i * n);
    }
    out->backprop = [m, n, delta](tensor &t) {
        auto &a = t.inputs[0];
        if (a->grad.empty()) return;
        for (int64_t i = 0; i < m; i++) {
            int64_t src = i + delta;
            if (src < 0 || src >= m) continue;
            const double *g = t.grad.data() + i * n;
            double *ga = a->grad.data() + src * n;
            for (int64_t j = 0; j < n; j++) ga[j] += g[j];
        }
    };
    return record(out);
}

tensor_ptr tape::concat_cols(const std::vector<tensor_ptr> &parts) {
    if (parts.empty()) fail(errc::usage, "concat_cols: no inputs");
    const int64_t m = parts[0]->rows();
    int64_t total = 0;
    for (const auto &p : parts) {
        if (p->rows() != m) fail(errc::usage, "concat_cols: row count mismatch");
        total += p->cols();
    }
    auto out = make_tensor({m, total});
    out->op = "concat_cols";
    out->inputs = parts;
    int64_t off = 0;
    for (const auto &p : parts) {
        const int64_t w = p->cols();
        for (int64_t i = 0; i < m; i++)
            std::copy_n(p->data.data() + i * w, w, out->data.data() + i * total + off);
        off += w;
    }
    out->backprop = [m, total](tensor &t) {
        int64_t off = 0;
        for (auto &p : t.inputs) {
            const int64_t w = p->cols();
            if (!p->grad.empty())
                for (int64_t i = 0; i < m; i++) {
                    const double *g = t.grad.data() + i * total + off;
                    double *gp = p->grad.data() + i * w;
                    for (int64_t j = 0; j < w; j++) gp[j] += g[j];
                }
            off += w;
        }
    };
    return record(out);
}

tensor_ptr tape::sum_all(const tensor_ptr &a) {
    auto out = make_tensor({1});
    out->op = "sum";
    out->inputs = {a};
    double s = 0.0;
    for (double v : a->data) s += v;
    out->data[0] = s;
    out->backprop = [](tensor &t) {
        auto &a = t.inputs[0];
        if (a->grad.empty()) return;
        const double g = t.grad[0];
        for (auto &x : a->grad) x += g;
    };
    return record(out);
}

tensor_ptr tape::softmax_cross_entropy(const tensor_ptr &logits,
                                       const std::vector<int64_t> &targets) {
    if (logits->shape.size() != 2)
        fail(errc::usage, "softmax_cross_entropy: logits must be rank-2");
    const int64_t b = logits->shape[0], v = logits->shape[1];
    if (int64_t(targets.size()) != b || b < 1)
        fail(errc::usage, strfmt("softmax_cross_entropy: %zu targets for %lld rows",
                                 targets.size(), (long long)b));
    for (int64_t t : targets)
        if (t < 0 || t >= v)
            fail(errc::usage, strfmt("softmax_cross_entropy: target %lld out of range [0,%lld)",
                                     (long long)t, (long long)v));
    auto out = make_tensor({1});
    out->op = "softmax_cross_entropy";
    out->inputs = {logits};
    auto tgt = std::make_shared<std::vector<int64_t>>(targets);
    double total = 0.0;
    for (int64_t i = 0; i < b; i++) {
        const double *x = logits->data.data() + i * v;
        double mx = x[0];
        for (int64_t j = 1; j < v; j++) mx = std::max(mx, x[j]);
        double sum = 0.0;
        for (int64_t j = 0; j < v; j++) sum += std::exp(x[j] - mx);
        total += mx + std::log(sum) - x[targets[i]];
    }
    out->data[0] = total / double(b);
    out->backprop = [b, v, tgt](tensor &t) {
        auto &logits = t.inputs[0];
        if (logits->grad.empty()) return;
        const double g = t.grad[0] / double(b);
        for (int64_t i = 0; i < b; i++) {
            const double *x = logits->data.data() + i * v;
            double *gx = logits->grad.data() + i * v;
            double mx = x[0];
            for (int64_t j = 1; j < v; j++) mx = std::max(mx, x[j]);
            double sum = 0.0;
            for (int64_t j = 0; j < v; j++) sum += std::exp(x[j] - mx);
            for (int64_t j = 0; j < v; j++) {
                double p = std::exp(x[j] - mx) / sum;
                gx[j] += g * (p - (j == (*tgt)[i] ? 1.0 : 0.0));
            }
        }
    };
    return record(out);
}

void tape::backward(const tensor_ptr &loss, const std::vector<tensor_ptr> &params) {
    if (!loss->is_scalar())
        fail(errc::usage, strfmt("backward: loss must be scalar, got shape with %lld elements",
                                 (long long)loss->numel()));
    for (auto &n : nodes) n->zero_grad();
    for (auto &p : params) {
        p->alloc_grad();
        p->zero_grad();
    }
    if (!loss->grad.empty()) loss->grad[0] = 1.0;
    for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) {
        tensor &t = **it;
        if (t.backprop && t.needs_grad) t.backprop(t);
    }
}

//
// Adam
//

void adam_state::init(const std::vector<tensor_ptr> &params) {
    m.clear();
    v.clear();
    for (const auto &p : params) {
        m.emplace_back(p->data.size(), 0.0);
        v.emplace_back(p->data.size(), 0.0);
    }
    step = 0;
}

void adam_step(std::vector<tensor_ptr> &params, adam_state &st) {
    if (!st.initialized()) st.init(params);
    if (st.m.size() != params.size())
        fail(errc::usage, "adam_step: state does not match parameter list");
    if (st.lr <= 0.0) fail(errc::usage, "adam_step: lr must be positive");
    st.step++;
    const double bc1 = 1.0 - std::pow(st.beta1, double(st.step));
    const double bc2 = 1.0 - std::pow(st.beta2, double(st.step));
    for (size_t pi = 0; pi < params.size(); pi++) {
        tensor &p = *params[pi];
        if (p.grad.size() != p.data.size())
            fail(errc::usage, strfmt("adam_step: parameter '%s' has no gradient", p.name.c_str()));
        auto &m = st.m[pi];
        auto &v = st.v[pi];
        for (size_t i = 0; i < p.data.size(); i++) {
            const double g = p.grad[i];
            if (!std::isfinite(g))
                fail(errc::runtime, strfmt("adam_step: non-finite gradient in parameter '%s'",
                                           p.name.c_str()));
            m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g;
            v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g * g;
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p.data[i] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
        }
    }
}

double grad_global_norm(const std::vector<tensor_ptr> &params) {
    double sq = 0.0;
    for (const auto &p : params)
        for (double g : p->grad) sq += g * g;
    return std::sqrt(sq);
}

void clip_grad_norm(std::vector<tensor_ptr> &params, double max_norm) {
    double norm = grad_global_norm(params);
    if (norm <= max_norm || norm == 0.0) return;
    const double s = max_norm / norm;
    for (auto &p : params)
        for (auto &g : p->grad) g *= s;
}

} // namespace svs
