#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>

#include "tensor.hpp"

using namespace svs;

// central finite differences against the analytic gradient; loss_fn must
// rebuild its tape from the parameter values on every call
static double max_grad_rel_error(std::vector<tensor_ptr> params,
                                 const std::function<double()> &loss_fn,
                                 const std::function<tensor_ptr(tape &)> &build_loss) {
    tape tp;
    tensor_ptr loss = build_loss(tp);
    tp.backward(loss, params);
    std::vector<std::vector<double>> analytic;
    for (auto &p : params) analytic.push_back(p->grad);

    const double h = 1e-5;
    double worst = 0.0;
    for (size_t pi = 0; pi < params.size(); pi++) {
        for (size_t i = 0; i < params[pi]->data.size(); i++) {
            double saved = params[pi]->data[i];
            params[pi]->data[i] = saved + h;
            double up = loss_fn();
            params[pi]->data[i] = saved - h;
            double down = loss_fn();
            params[pi]->data[i] = saved;
            double fd = (up - down) / (2.0 * h);
            double g = analytic[pi][i];
            double rel = std::fabs(fd - g) / std::max({std::fabs(fd), std::fabs(g), 1e-6});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

TEST_CASE("matmul identity and zeros") {
    tape tp;
    auto eye = make_tensor({2, 2}, {1, 0, 0, 1});
    auto a = make_tensor({2, 2}, {1, 2, 3, 4});
    auto out = tp.matmul(eye, a);
    for (int i = 0; i < 4; i++) CHECK(out->data[size_t(i)] == a->data[size_t(i)]);

    auto z = make_tensor({2, 3});
    auto b = make_tensor({3, 4}, std::vector<double>(12, 7.0));
    auto zz = tp.matmul(z, b);
    CHECK(zz->shape == std::vector<int64_t>{2, 4});
    for (double v : zz->data) CHECK(v == 0.0);
}

TEST_CASE("matmul shape error reports both shapes") {
    tape tp;
    auto a = make_tensor({2, 3});
    auto b = make_tensor({2, 3});
    CHECK_THROWS_WITH_AS(tp.matmul(a, b), doctest::Contains("[2x3]"), error);
}

TEST_CASE("matmul gradient: d(sum(A·B))/dA is row sums of B^T") {
    rng r(7);
    auto a = randn_tensor(r, {2, 3}, 1.0, true, "a");
    auto b = randn_tensor(r, {3, 4}, 1.0, true, "b");
    auto build = [&](tape &tp) { return tp.sum_all(tp.matmul(a, b)); };
    auto eval = [&]() {
        tape tp;
        return build(tp)->data[0];
    };

    tape tp;
    auto loss = build(tp);
    tp.backward(loss, {a, b});
    // analytic expectation: grad_a[i][k] = sum_j b[k][j]
    for (int64_t i = 0; i < 2; i++)
        for (int64_t k = 0; k < 3; k++) {
            double want = 0.0;
            for (int64_t j = 0; j < 4; j++) want += b->data[size_t(k * 4 + j)];
            CHECK(a->grad[size_t(i * 3 + k)] == doctest::Approx(want).epsilon(1e-12));
        }
    CHECK(max_grad_rel_error({a, b}, eval, build) < 1e-5);
}

TEST_CASE("elementwise basics") {
    tape tp;
    auto x = make_tensor({2, 2}, {1, -2, 3, -4});
    auto zero = make_tensor({2, 2});
    auto same = tp.add(x, zero);
    for (int i = 0; i < 4; i++) CHECK(same->data[size_t(i)] == x->data[size_t(i)]);

    auto t0 = make_tensor({1}, {0.0}, true, "t0");
    tape tp2;
    auto th = tp2.tanh_act(t0);
    CHECK(th->data[0] == 0.0);
    tp2.backward(tp2.sum_all(th), {t0});
    CHECK(t0->grad[0] == 1.0);
}

TEST_CASE("trailing broadcast add and its reduction gradient") {
    auto a = make_tensor({2, 3}, {1, 2, 3, 4, 5, 6}, true, "a");
    auto b = make_tensor({3}, {10, 20, 30}, true, "b");
    tape tp;
    auto out = tp.add(a, b);
    CHECK(out->data[0] == 11.0);
    CHECK(out->data[5] == 36.0);
    tp.backward(tp.sum_all(out), {a, b});
    for (double g : a->grad) CHECK(g == 1.0);
    for (double g : b->grad) CHECK(g == 2.0); // two rows fold into each entry

    auto bad = make_tensor({2});
    CHECK_THROWS_AS(tp.add(a, bad), error);
}

TEST_CASE("gelu gradient matches finite differences") {
    rng r(123);
    auto x = randn_tensor(r, {3, 5}, 1.5, true, "x");
    auto build = [&](tape &tp) { return tp.sum_all(tp.gelu(x)); };
    auto eval = [&]() {
        tape tp;
        return build(tp)->data[0];
    };
    CHECK(max_grad_rel_error({x}, eval, build) < 1e-5);
}

TEST_CASE("softmax cross entropy: uniform logits give ln V") {
    tape tp;
    auto logits = make_tensor({2, 8});
    auto loss = tp.softmax_cross_entropy(logits, {3, 5});
    CHECK(loss->data[0] == doctest::Approx(std::log(8.0)).epsilon(1e-12));
}

TEST_CASE("softmax cross entropy: saturated target gives ~0") {
    tape tp;
    auto logits = make_tensor({1, 4});
    logits->data[2] = 1000.0;
    auto loss = tp.softmax_cross_entropy(logits, {2});
    CHECK(loss->data[0] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("softmax cross entropy matches a direct log-sum-exp computation") {
    rng r(99);
    auto logits = randn_tensor(r, {3, 5}, 2.0, true, "logits");
    std::vector<int64_t> targets = {4, 0, 2};
    tape tp;
    auto loss = tp.softmax_cross_entropy(logits, targets);

    // independent scalar route
    double want = 0.0;
    for (int64_t i = 0; i < 3; i++) {
        double lse = 0.0;
        for (int64_t j = 0; j < 5; j++) lse += std::exp(logits->data[size_t(i * 5 + j)]);
        want += std::log(lse) - logits->data[size_t(i * 5 + targets[size_t(i)])];
    }
    want /= 3.0;
    CHECK(loss->data[0] == doctest::Approx(want).epsilon(1e-12));

    auto build = [&](tape &t) { return t.softmax_cross_entropy(logits, targets); };
    auto eval = [&]() {
        tape t;
        return build(t)->data[0];
    };
    CHECK(max_grad_rel_error({logits}, eval, build) < 1e-5);

    CHECK_THROWS_AS(tp.softmax_cross_entropy(logits, {4, 0, 5}), error);
}

TEST_CASE("backward: sum gives ones, dot gives 2x") {
    auto x = make_tensor({4}, {1, 2, 3, 4}, true, "x");
    {
        tape tp;
        tp.backward(tp.sum_all(x), {x});
        for (double g : x->grad) CHECK(g == 1.0);
    }
    {
        tape tp;
        auto loss = tp.sum_all(tp.mul(x, x));
        tp.backward(loss, {x});
        for (int i = 0; i < 4; i++) CHECK(x->grad[size_t(i)] == 2.0 * x->data[size_t(i)]);
    }
}

TEST_CASE("backward rejects non-scalar loss and zeroes unused parameters") {
    auto x = make_tensor({3}, {1, 2, 3}, true, "x");
    auto unused = make_tensor({2}, {5, 5}, true, "unused");
    tape tp;
    auto y = tp.scale(x, 2.0);
    CHECK_THROWS_AS(tp.backward(y, {x}), error);
    auto loss = tp.sum_all(y);
    tp.backward(loss, {x, unused});
    for (double g : unused->grad) CHECK(g == 0.0);
    for (double g : x->grad) CHECK(g == 2.0);
}

TEST_CASE("two-layer net gradient vs finite differences") {
    rng r(2024);
    auto w1 = randn_tensor(r, {6, 8}, 0.5, true, "w1");
    auto b1 = randn_tensor(r, {8}, 0.1, true, "b1");
    auto w2 = randn_tensor(r, {8, 3}, 0.5, true, "w2");
    auto b2 = randn_tensor(r, {3}, 0.1, true, "b2");
    auto input = randn_tensor(r, {4, 6}, 1.0);
    std::vector<int64_t> targets = {0, 2, 1, 2};

    auto build = [&](tape &tp) {
        auto h = tp.gelu(tp.add(tp.matmul(input, w1), b1));
        auto logits = tp.add(tp.matmul(h, w2), b2);
        return tp.softmax_cross_entropy(logits, targets);
    };
    auto eval = [&]() {
        tape tp;
        return build(tp)->data[0];
    };
    CHECK(max_grad_rel_error({w1, b1, w2, b2}, eval, build) < 1e-4);
}

TEST_CASE("non-finite values are raised at the producing op") {
    tape tp;
    auto big = make_tensor({2}, {1e308, 1e308});
    CHECK_THROWS_WITH_AS(tp.add(big, big), doctest::Contains("add"), error);
}

TEST_CASE("layer_norm and softmax_rows gradients") {
    rng r(55);
    auto x = randn_tensor(r, {3, 6}, 1.0, true, "x");
    auto g = randn_tensor(r, {6}, 0.3, true, "g");
    auto b = randn_tensor(r, {6}, 0.3, true, "b");
    auto build = [&](tape &tp) {
        auto ln = tp.layer_norm(x, g, b);
        return tp.sum_all(tp.mul(tp.softmax_rows(ln), ln));
    };
    auto eval = [&]() {
        tape tp;
        return build(tp)->data[0];
    };
    CHECK(max_grad_rel_error({x, g, b}, eval, build) < 1e-4);
}

TEST_CASE("embedding, slicing and shift ops round-trip gradients") {
    rng r(77);
    auto table = randn_tensor(r, {5, 4}, 1.0, true, "table");
    std::vector<int64_t> ids = {3, 0, 3, 2};
    auto build = [&](tape &tp) {
        auto e = tp.embedding(table, ids);
        auto shifted = tp.shift_rows(e, 1);
        auto cat = tp.concat_cols({tp.slice_cols(e, 0, 2), tp.slice_cols(shifted, 2, 4)});
        auto rows = tp.slice_rows(cat, 1, 4);
        return tp.sum_all(tp.mul(rows, rows));
    };
    auto eval = [&]() {
        tape tp;
        return build(tp)->data[0];
    };
    CHECK(max_grad_rel_error({table}, eval, build) < 1e-5);

    tape tp;
    CHECK_THROWS_AS(tp.embedding(table, {5}), error);
}

TEST_CASE("adam: zero gradient leaves parameters, constant gradient moves ~lr") {
    auto p = make_tensor({3}, {1.0, -2.0, 0.5}, true, "p");
    auto q = make_tensor({2}, {0.0, 0.0}, true, "q");
    std::vector<tensor_ptr> params = {p, q};
    adam_state st;
    st.lr = 1e-3;
    st.init(params);

    p->alloc_grad();
    q->alloc_grad();
    p->zero_grad();
    q->zero_grad();
    auto before = p->data;
    adam_step(params, st);
    CHECK(p->data == before);

    // one bias-corrected step from zero state against constant gradients
    adam_state fresh;
    fresh.lr = 1e-3;
    fresh.init(params);
    std::fill(q->grad.begin(), q->grad.end(), 0.25);
    adam_step(params, fresh);
    for (double v : q->data)
        CHECK(std::fabs(v) == doctest::Approx(fresh.lr).epsilon(1e-4));

    q->grad[0] = std::nan("");
    CHECK_THROWS_WITH_AS(adam_step(params, fresh), doctest::Contains("q"), error);
}

TEST_CASE("adam determinism: identical runs produce identical parameters") {
    auto run = [&]() {
        rng r(31);
        auto w = randn_tensor(r, {4, 4}, 1.0, true, "w");
        auto x = randn_tensor(r, {2, 4}, 1.0);
        adam_state st;
        st.lr = 3e-3;
        std::vector<tensor_ptr> params = {w};
        st.init(params);
        for (int i = 0; i < 25; i++) {
            tape tp;
            auto out = tp.matmul(x, w);
            auto loss = tp.sum_all(tp.mul(out, out));
            tp.backward(loss, params);
            adam_step(params, st);
        }
        return w->data;
    };
    CHECK(run() == run());
}
