#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "common.hpp"

namespace svs {

//
// Dense f64 tensors with reverse-mode autodiff.
//
// Define-by-run: every op records a node on a tape whose creation order is
// the topological order, and the backward pass walks it in exact reverse.
// The tape is rebuilt every step; no graph caching. All values are checked
// finite at the op that produced them.
//

struct tensor;
using tensor_ptr = std::shared_ptr<tensor>;

struct tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;
    std::vector<double> grad;   // allocated only when gradient flows here
    bool requires_grad = false; // leaf parameter flag
    bool needs_grad = false;    // requires_grad or downstream of one
    std::string name;           // parameters carry names for diagnostics

    std::vector<tensor_ptr> inputs;
    std::function<void(tensor &)> backprop;
    const char *op = "leaf";

    int64_t numel() const {
        int64_t n = 1;
        for (int64_t d : shape) n *= d;
        return n;
    }
    int64_t rows() const { return shape.empty() ? 1 : shape[0]; }
    int64_t cols() const {
        int64_t n = 1;
        for (size_t i = 1; i < shape.size(); i++) n *= shape[i];
        return n;
    }
    bool is_scalar() const { return numel() == 1; }
    void alloc_grad() { if (grad.size() != data.size()) grad.assign(data.size(), 0.0); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

tensor_ptr make_tensor(std::vector<int64_t> shape, bool requires_grad = false,
                       std::string name = "");
tensor_ptr make_tensor(std::vector<int64_t> shape, std::vector<double> vals,
                       bool requires_grad = false, std::string name = "");
tensor_ptr full_tensor(std::vector<int64_t> shape, double v);
// Gaussian init, values scaled by `scale`
tensor_ptr randn_tensor(rng &r, std::vector<int64_t> shape, double scale,
                        bool requires_grad = false, std::string name = "");

// raw row-major kernels, shared with the tape-free inference paths
void matmul_raw(const double *a, const double *b, double *c, int64_t m, int64_t k, int64_t n);
// c[m×n] += a[m×k] · b[n×k]^T
void matmul_nt_acc(const double *a, const double *b, double *c, int64_t m, int64_t k, int64_t n);
// c[m×n] += a[k×m]^T · b[k×n]
void matmul_tn_acc(const double *a, const double *b, double *c, int64_t m, int64_t k, int64_t n);

struct tape {
    std::vector<tensor_ptr> nodes;

    // binary / unary elementwise (trailing-dimension broadcast of b only)
    tensor_ptr add(const tensor_ptr &a, const tensor_ptr &b);
    tensor_ptr sub(const tensor_ptr &a, const tensor_ptr &b);
    tensor_ptr mul(const tensor_ptr &a, const tensor_ptr &b);
    tensor_ptr scale(const tensor_ptr &a, double c);
    tensor_ptr tanh_act(const tensor_ptr &a);
    tensor_ptr gelu(const tensor_ptr &a);

    tensor_ptr matmul(const tensor_ptr &a, const tensor_ptr &b);
    tensor_ptr transpose(const tensor_ptr &a);

    tensor_ptr softmax_rows(const tensor_ptr &a);
    tensor_ptr layer_norm(const tensor_ptr &a, const tensor_ptr &gain, const tensor_ptr &bias);
    tensor_ptr embedding(const tensor_ptr &table, const std::vector<int64_t> &ids);

    tensor_ptr slice_rows(const tensor_ptr &a, int64_t r0, int64_t r1);
    tensor_ptr slice_cols(const tensor_ptr &a, int64_t c0, int64_t c1);
    // rows shifted by delta, vacated rows zero-filled
    tensor_ptr shift_rows(const tensor_ptr &a, int64_t delta);
    tensor_ptr concat_cols(const std::vector<tensor_ptr> &parts);

    tensor_ptr sum_all(const tensor_ptr &a);
    // mean negative log-softmax of the target entry per row, stabilized
    tensor_ptr softmax_cross_entropy(const tensor_ptr &logits, const std::vector<int64_t> &targets);

    // Seeds d(loss)=1 and walks the tape in reverse creation order.
    // Every tensor in `params` gets a gradient of its own shape (zeros when
    // the loss does not reach it).
    void backward(const tensor_ptr &loss, const std::vector<tensor_ptr> &params);

    void clear() { nodes.clear(); }

  private:
    tensor_ptr record(tensor_ptr t);
};

//
// Adam with bias correction
//

struct adam_state {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    int64_t step = 0;
    std::vector<std::vector<double>> m, v;

    void init(const std::vector<tensor_ptr> &params);
    bool initialized() const { return !m.empty(); }
};

void adam_step(std::vector<tensor_ptr> &params, adam_state &st);
double grad_global_norm(const std::vector<tensor_ptr> &params);
void clip_grad_norm(std::vector<tensor_ptr> &params, double max_norm);

} // namespace svs
