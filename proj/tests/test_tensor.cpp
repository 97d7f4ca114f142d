#include <cmath>
#include <cstdio>
#include <functional>

#include "doctest.h"
#include "gridhack/common/rng.hpp"
#include "gridhack/nn/checkpoint.hpp"
#include "gridhack/nn/ops.hpp"
#include "gridhack/nn/optim.hpp"
#include "gridhack/nn/tensor.hpp"

using namespace gridhack;
using nn::ArrayX;
using nn::ParamStore;
using nn::Shape;
using nn::Tape;
using nn::Tensor;

namespace {

// Central finite differences against the reverse-mode gradient, fp64.
// loss_fn must rebuild the graph from the store's current values; when
// with_grad is set it must also run backward so gradients land in the
// store.
void check_gradients(ParamStore<double>& store,
                     const std::function<double(bool with_grad)>& loss_fn, double eps = 1e-5,
                     double tol = 1e-6) {
    store.zero_grads();
    loss_fn(true);
    for (auto& p : store.all()) {
        if (!p->trainable) continue;
        for (Eigen::Index i = 0; i < p->value.size(); ++i) {
            const double v0 = p->value(i);
            p->value(i) = v0 + eps;
            const double up = loss_fn(false);
            p->value(i) = v0 - eps;
            const double down = loss_fn(false);
            p->value(i) = v0;
            const double fd = (up - down) / (2.0 * eps);
            const double g = p->grad(i);
            const double denom = std::max({1.0, std::abs(fd), std::abs(g)});
            const double rel = std::abs(fd - g) / denom;
            if (rel >= tol) {
                CAPTURE(p->name);
                CAPTURE(i);
                CAPTURE(fd);
                CAPTURE(g);
            }
            REQUIRE(rel < tol);
        }
    }
}

void randomize(ParamStore<double>& store, Rng& rng, double scale = 1.0) {
    for (auto& p : store.all()) {
        for (Eigen::Index i = 0; i < p->value.size(); ++i) {
            p->value(i) = (rng.next_double() * 2.0 - 1.0) * scale;
        }
    }
}

std::shared_ptr<std::vector<int>> random_labels(Rng& rng, int n, int classes) {
    auto ids = std::make_shared<std::vector<int>>();
    for (int i = 0; i < n; ++i) ids->push_back(static_cast<int>(rng.bounded(classes)));
    return ids;
}

}  // namespace

TEST_CASE("linear with identity weights and zero bias is the identity") {
    Tape<float> tape;
    ParamStore<float> store;
    auto& w = store.add("w", {3, 3});
    auto& b = store.add("b", {3});
    w.value << 1, 0, 0, 0, 1, 0, 0, 0, 1;
    ArrayX<float> x(6);
    x << 1, 2, 3, 4, 5, 6;
    Tensor<float> xt = tape.constant({2, 3}, x);
    Tensor<float> y = nn::linear(xt, tape.param(w), tape.param(b));
    for (int i = 0; i < 6; ++i) CHECK(y.value()(i) == doctest::Approx(x(i)));
}

TEST_CASE("shape mismatches name both shapes") {
    Tape<float> tape;
    Tensor<float> a = tape.constant({2, 3}, ArrayX<float>::Zero(6));
    Tensor<float> b = tape.constant({3, 4}, ArrayX<float>::Zero(12));
    CHECK_THROWS_WITH_AS(nn::add(a, b), doctest::Contains("[2, 3]"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(nn::matmul(b, b), doctest::Contains("[3, 4]"), std::invalid_argument);
}

TEST_CASE("gradient suite: linear / elementwise / reductions") {
    Rng shape_rng(101);
    for (int trial = 0; trial < 5; ++trial) {
        const int m = 1 + static_cast<int>(shape_rng.bounded(4));
        const int k = 1 + static_cast<int>(shape_rng.bounded(4));
        const int p = 1 + static_cast<int>(shape_rng.bounded(4));
        ParamStore<double> store;
        store.add("x", {m, k});
        store.add("w", {k, p});
        store.add("b", {p});
        store.add("c", {m, p});
        Rng rng(200 + trial);
        randomize(store, rng);
        check_gradients(store, [&](bool with_grad) {
            Tape<double> tape;
            Tensor<double> x = tape.param(*store.find("x"));
            Tensor<double> w = tape.param(*store.find("w"));
            Tensor<double> b = tape.param(*store.find("b"));
            Tensor<double> c = tape.param(*store.find("c"));
            Tensor<double> y = nn::linear(x, w, b);
            y = nn::mul(y, c);
            y = nn::add(y, nn::scale(c, 0.5));
            y = nn::sub(y, nn::mul_colvec(c, nn::slice_cols(c, 0, 1)));
            Tensor<double> loss = nn::mean_all(nn::tanh_op(y));
            if (with_grad) {
                store.zero_grads();
                tape.backward(loss);
            }
            return loss.scalar();
        });
    }
}

TEST_CASE("gradient suite: activations and softmax family") {
    for (int trial = 0; trial < 5; ++trial) {
        Rng rng(300 + trial);
        const int m = 2 + static_cast<int>(rng.bounded(3));
        const int c = 2 + static_cast<int>(rng.bounded(4));
        ParamStore<double> store;
        store.add("x", {m, c});
        randomize(store, rng, 2.0);
        auto labels = random_labels(rng, m, c);
        check_gradients(store, [&](bool with_grad) {
            Tape<double> tape;
            Tensor<double> x = tape.param(*store.find("x"));
            Tensor<double> a = nn::elu(nn::slice_cols(x, 0, c));
            Tensor<double> g = nn::gelu(x);
            Tensor<double> s = nn::sigmoid(x);
            Tensor<double> sm = nn::softmax_rows(nn::mul(a, s));
            Tensor<double> lsm = nn::log_softmax_rows(g);
            Tensor<double> picked = nn::gather_cols(lsm, labels);
            Tensor<double> loss =
                nn::add(nn::mean_all(nn::mul(sm, sm)), nn::mean_all(picked));
            if (with_grad) {
                store.zero_grads();
                tape.backward(loss);
            }
            return loss.scalar();
        });
    }
}

TEST_CASE("gradient suite: layer_norm") {
    for (int trial = 0; trial < 5; ++trial) {
        Rng rng(400 + trial);
        const int m = 1 + static_cast<int>(rng.bounded(4));
        const int c = 2 + static_cast<int>(rng.bounded(5));
        ParamStore<double> store;
        store.add("x", {m, c});
        store.add("g", {c});
        store.add("b", {c});
        randomize(store, rng);
        check_gradients(store, [&](bool with_grad) {
            Tape<double> tape;
            Tensor<double> y = nn::layer_norm(tape.param(*store.find("x")),
                                              tape.param(*store.find("g")),
                                              tape.param(*store.find("b")));
            Tensor<double> loss = nn::mean_all(nn::mul(y, y));
            if (with_grad) {
                store.zero_grads();
                tape.backward(loss);
            }
            return loss.scalar();
        });
    }
}

TEST_CASE("gradient suite: embedding and cross entropy") {
    for (int trial = 0; trial < 5; ++trial) {
        Rng rng(500 + trial);
        const int vocab = 4 + static_cast<int>(rng.bounded(5));
        const int dim = 2 + static_cast<int>(rng.bounded(4));
        const int n = 3 + static_cast<int>(rng.bounded(4));
        ParamStore<double> store;
        store.add("table", {vocab, dim});
        store.add("w", {dim, vocab});
        store.add("b", {vocab});
        randomize(store, rng);
        auto ids = random_labels(rng, n, vocab);
        auto labels = random_labels(rng, n, vocab);
        ArrayX<double> mask(n);
        for (int i = 0; i < n; ++i) mask(i) = rng.chance(0.8) ? 1.0 : 0.0;
        check_gradients(store, [&](bool with_grad) {
            Tape<double> tape;
            Tensor<double> e = nn::embedding(tape.param(*store.find("table")), ids);
            Tensor<double> logits =
                nn::linear(e, tape.param(*store.find("w")), tape.param(*store.find("b")));
            Tensor<double> m = tape.constant({n, 1}, mask);
            Tensor<double> loss = nn::scale(nn::cross_entropy_sum(logits, labels, m),
                                            1.0 / std::max(1.0, mask.sum()));
            if (with_grad) {
                store.zero_grads();
                tape.backward(loss);
            }
            return loss.scalar();
        });
    }
}

TEST_CASE("gradient suite: conv1d and conv2d") {
    for (int trial = 0; trial < 5; ++trial) {
        Rng rng(600 + trial);
        const int batch = 1 + static_cast<int>(rng.bounded(3));
        const int cin = 1 + static_cast<int>(rng.bounded(2));
        const int h = 3 + static_cast<int>(rng.bounded(3));
        const int w = 3 + static_cast<int>(rng.bounded(3));
        const int f = 1 + static_cast<int>(rng.bounded(3));
        nn::ConvDims d;
        d.channels = cin;
        d.height = h;
        d.width = w;
        d.kernel_h = 3;
        d.kernel_w = 3;
        d.pad_h = 1;
        d.pad_w = 1;
        ParamStore<double> store;
        store.add("x", {batch, cin * h * w});
        store.add("k", {cin * 9, f});
        store.add("b", {f});
        store.add("k1", {3, f});  // conv1d below runs single-channel
        store.add("b1", {f});
        randomize(store, rng);
        check_gradients(store, [&](bool with_grad) {
            Tape<double> tape;
            Tensor<double> x = tape.param(*store.find("x"));
            Tensor<double> y = nn::conv2d(x, tape.param(*store.find("k")),
                                          tape.param(*store.find("b")), d);
            // conv1d over the flattened activation, one channel.
            Tensor<double> y1 =
                nn::conv1d(nn::reshape(y, Shape{batch, y.cols()}),
                           tape.param(*store.find("k1")), tape.param(*store.find("b1")),
                           /*channels=*/1, /*length=*/y.cols(), /*kernel_w=*/3, /*pad=*/1);
            Tensor<double> loss = nn::mean_all(nn::gelu(y1));
            if (with_grad) {
                store.zero_grads();
                tape.backward(loss);
            }
            return loss.scalar();
        });
    }
}

TEST_CASE("gradient suite: lstm cell over a short unroll") {
    for (int trial = 0; trial < 5; ++trial) {
        Rng rng(700 + trial);
        const int batch = 1 + static_cast<int>(rng.bounded(3));
        const int din = 2 + static_cast<int>(rng.bounded(3));
        const int hidden = 2 + static_cast<int>(rng.bounded(3));
        const int steps = 1 + static_cast<int>(rng.bounded(3));
        ParamStore<double> store;
        store.add("wx", {din, 4 * hidden});
        store.add("wh", {hidden, 4 * hidden});
        store.add("b", {4 * hidden});
        for (int t = 0; t < steps; ++t) store.add("x" + std::to_string(t), {batch, din});
        randomize(store, rng);
        check_gradients(store, [&](bool with_grad) {
            Tape<double> tape;
            nn::LstmWeights<double> w{tape.param(*store.find("wx")),
                                      tape.param(*store.find("wh")),
                                      tape.param(*store.find("b"))};
            nn::LstmState<double> state{
                tape.constant({batch, hidden}, ArrayX<double>::Zero(batch * hidden)),
                tape.constant({batch, hidden}, ArrayX<double>::Zero(batch * hidden))};
            Tensor<double> acc;
            for (int t = 0; t < steps; ++t) {
                state = nn::lstm_cell(tape.param(*store.find("x" + std::to_string(t))), state, w,
                                      hidden);
                acc = t == 0 ? state.h : nn::add(acc, state.h);
            }
            Tensor<double> loss = nn::mean_all(nn::mul(acc, acc));
            if (with_grad) {
                store.zero_grads();
                tape.backward(loss);
            }
            return loss.scalar();
        });
    }
}

TEST_CASE("gradient suite: causal multi-head attention block") {
    for (int trial = 0; trial < 5; ++trial) {
        Rng rng(800 + trial);
        const int batch = 1 + static_cast<int>(rng.bounded(2));
        const int seq = 2 + static_cast<int>(rng.bounded(3));
        const int heads = 1 + static_cast<int>(rng.bounded(2));
        const int dim = heads * (2 + static_cast<int>(rng.bounded(2)));
        const int ff = 2 * dim;
        ParamStore<double> store;
        store.add("x", {batch * seq, dim});
        store.add("ln1_g", {dim});
        store.add("ln1_b", {dim});
        store.add("wq", {dim, dim});
        store.add("bq", {dim});
        store.add("wk", {dim, dim});
        store.add("bk", {dim});
        store.add("wv", {dim, dim});
        store.add("bv", {dim});
        store.add("wo", {dim, dim});
        store.add("bo", {dim});
        store.add("ln2_g", {dim});
        store.add("ln2_b", {dim});
        store.add("w_ff1", {dim, ff});
        store.add("b_ff1", {ff});
        store.add("w_ff2", {ff, dim});
        store.add("b_ff2", {dim});
        randomize(store, rng, 0.5);
        // Keep layer-norm gains away from zero so the FD step is stable.
        store.find("ln1_g")->value += 1.0;
        store.find("ln2_g")->value += 1.0;
        Rng dropout_rng(1);  // inert: dropout_p = 0 in this check
        check_gradients(store, [&](bool with_grad) {
            Tape<double> tape;
            nn::AttentionWeights<double> w{
                tape.param(*store.find("ln1_g")), tape.param(*store.find("ln1_b")),
                tape.param(*store.find("wq")),    tape.param(*store.find("wk")),
                tape.param(*store.find("wv")),    tape.param(*store.find("wo")),
                tape.param(*store.find("bq")),    tape.param(*store.find("bk")),
                tape.param(*store.find("bv")),    tape.param(*store.find("bo")),
                tape.param(*store.find("ln2_g")), tape.param(*store.find("ln2_b")),
                tape.param(*store.find("w_ff1")), tape.param(*store.find("b_ff1")),
                tape.param(*store.find("w_ff2")), tape.param(*store.find("b_ff2"))};
            Tensor<double> y = nn::transformer_block(tape.param(*store.find("x")), w, batch, seq,
                                                     heads, 0.0, dropout_rng, true);
            Tensor<double> loss = nn::mean_all(nn::mul(y, y));
            if (with_grad) {
                store.zero_grads();
                tape.backward(loss);
            }
            return loss.scalar();
        });
    }
}

TEST_CASE("gradient suite: dropout with a fixed mask") {
    for (int trial = 0; trial < 5; ++trial) {
        Rng rng(900 + trial);
        const int m = 2 + static_cast<int>(rng.bounded(3));
        const int c = 2 + static_cast<int>(rng.bounded(4));
        ParamStore<double> store;
        store.add("x", {m, c});
        randomize(store, rng);
        const std::uint64_t mask_seed = rng.next_u64();
        check_gradients(store, [&](bool with_grad) {
            Tape<double> tape;
            Rng mask_rng(mask_seed);  // same mask for every FD evaluation
            Tensor<double> y =
                nn::dropout(tape.param(*store.find("x")), 0.4, mask_rng, true);
            Tensor<double> loss = nn::mean_all(nn::mul(y, y));
            if (with_grad) {
                store.zero_grads();
                tape.backward(loss);
            }
            return loss.scalar();
        });
    }
}

TEST_CASE("causal attention: future tokens cannot influence the past") {
    Rng rng(1001);
    const int seq = 5, dim = 4, heads = 2;
    ParamStore<float> store;
    auto add = [&](const std::string& n, Shape s) -> nn::Param<float>& {
        auto& p = store.add(n, s);
        nn::fill_uniform(p, -0.5, 0.5, rng);
        return p;
    };
    add("x", {seq, dim});
    add("ln1_g", {dim}).value += 1.0f;
    add("ln1_b", {dim});
    add("wq", {dim, dim});
    add("bq", {dim});
    add("wk", {dim, dim});
    add("bk", {dim});
    add("wv", {dim, dim});
    add("bv", {dim});
    add("wo", {dim, dim});
    add("bo", {dim});
    add("ln2_g", {dim}).value += 1.0f;
    add("ln2_b", {dim});
    add("w_ff1", {dim, 2 * dim});
    add("b_ff1", {2 * dim});
    add("w_ff2", {2 * dim, dim});
    add("b_ff2", {dim});
    Rng drop(1);
    auto run = [&] {
        Tape<float> tape;
        nn::AttentionWeights<float> w{
            tape.param(*store.find("ln1_g")), tape.param(*store.find("ln1_b")),
            tape.param(*store.find("wq")),    tape.param(*store.find("wk")),
            tape.param(*store.find("wv")),    tape.param(*store.find("wo")),
            tape.param(*store.find("bq")),    tape.param(*store.find("bk")),
            tape.param(*store.find("bv")),    tape.param(*store.find("bo")),
            tape.param(*store.find("ln2_g")), tape.param(*store.find("ln2_b")),
            tape.param(*store.find("w_ff1")), tape.param(*store.find("b_ff1")),
            tape.param(*store.find("w_ff2")), tape.param(*store.find("b_ff2"))};
        Tensor<float> y =
            nn::transformer_block(tape.param(*store.find("x")), w, 1, seq, heads, 0.0, drop, false);
        return ArrayX<float>(y.value());
    };
    const ArrayX<float> before = run();
    // Perturb the last token; outputs at earlier positions must not move.
    for (int c = 0; c < dim; ++c) store.find("x")->value((seq - 1) * dim + c) += 3.0f;
    const ArrayX<float> after = run();
    for (int t = 0; t < seq - 1; ++t) {
        for (int c = 0; c < dim; ++c) {
            CHECK(before(t * dim + c) == doctest::Approx(after(t * dim + c)).epsilon(1e-6));
        }
    }
}

TEST_CASE("uniform logits cross-entropy equals ln(num classes)") {
    Tape<float> tape;
    const int n = 4, classes = 16;
    Tensor<float> logits = tape.constant({n, classes}, ArrayX<float>::Zero(n * classes));
    auto labels = std::make_shared<std::vector<int>>(std::vector<int>{0, 3, 7, 15});
    Tensor<float> mask = tape.constant({n, 1}, ArrayX<float>::Ones(n));
    Tensor<float> loss = nn::scale(nn::cross_entropy_sum(logits, labels, mask), 1.0f / n);
    CHECK(loss.scalar() == doctest::Approx(std::log(16.0)).epsilon(1e-6));
}

TEST_CASE("one-hot-correct logits drive cross-entropy to zero") {
    Tape<float> tape;
    const int n = 3, classes = 5;
    ArrayX<float> data = ArrayX<float>::Zero(n * classes);
    auto labels = std::make_shared<std::vector<int>>(std::vector<int>{1, 2, 4});
    for (int i = 0; i < n; ++i) data(i * classes + (*labels)[i]) = 50.0f;
    Tensor<float> logits = tape.constant({n, classes}, data);
    Tensor<float> mask = tape.constant({n, 1}, ArrayX<float>::Ones(n));
    Tensor<float> loss = nn::scale(nn::cross_entropy_sum(logits, labels, mask), 1.0f / n);
    CHECK(loss.scalar() == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("softmax cross-entropy stays finite for extreme logits") {
    Tape<double> tape;
    ArrayX<double> data(4);
    data << 1e4, -1e4, 5e3, -5e3;
    Tensor<double> logits = tape.constant({1, 4}, data);
    auto labels = std::make_shared<std::vector<int>>(std::vector<int>{1});
    Tensor<double> mask = tape.constant({1, 1}, ArrayX<double>::Ones(1));
    Tensor<double> loss = nn::cross_entropy_sum(logits, labels, mask);
    CHECK(std::isfinite(loss.scalar()));
    CHECK(loss.scalar() == doctest::Approx(2e4));
}

TEST_CASE("dropout in eval mode is the identity") {
    Tape<float> tape;
    Rng rng(4);
    ArrayX<float> data(6);
    data << 1, 2, 3, 4, 5, 6;
    Tensor<float> x = tape.constant({2, 3}, data);
    Tensor<float> y = nn::dropout(x, 0.5, rng, false);
    CHECK(y.id == x.id);  // passthrough, not even a new node
}

TEST_CASE("seeded stochastic ops are reproducible") {
    for (int i = 0; i < 3; ++i) {
        Tape<float> t1, t2;
        Rng r1(77), r2(77);
        ArrayX<float> data = ArrayX<float>::Ones(12);
        Tensor<float> a1 = nn::dropout(t1.constant({3, 4}, data), 0.5, r1, true);
        Tensor<float> a2 = nn::dropout(t2.constant({3, 4}, data), 0.5, r2, true);
        for (int j = 0; j < 12; ++j) CHECK(a1.value()(j) == a2.value()(j));
        Tensor<float> g1 = nn::gumbel_softmax(t1.constant({2, 6}, ArrayX<float>::Zero(12)), 0.7,
                                              false, r1);
        Tensor<float> g2 = nn::gumbel_softmax(t2.constant({2, 6}, ArrayX<float>::Zero(12)), 0.7,
                                              false, r2);
        for (int j = 0; j < 12; ++j) CHECK(g1.value()(j) == g2.value()(j));
    }
}

TEST_CASE("gumbel-softmax hard mode: argmax frequency and straight-through gradient") {
    // logits (10, 0, 0), tau = 0.1: the closed-form Gumbel argmax
    // probability of class 0 is e^10/(e^10+2) > 0.9999.
    Rng rng(31337);
    int hits = 0;
    const int draws = 1000;
    for (int i = 0; i < draws; ++i) {
        Tape<double> tape;
        ArrayX<double> data(3);
        data << 10.0, 0.0, 0.0;
        Tensor<double> logits = tape.leaf({1, 3}, data, true);
        Tensor<double> hard = nn::gumbel_softmax(logits, 0.1, true, rng);
        if (hard.value()(0) == 1.0) ++hits;
    }
    CHECK(hits >= 990);

    // Straight-through: the hard sample's gradient equals the soft
    // sample's gradient exactly, draw for draw.
    Rng ra(9), rb(9);
    Tape<double> ta, tb;
    ArrayX<double> data(3);
    data << 0.5, -0.2, 0.1;
    Tensor<double> la = ta.leaf({1, 3}, data, true);
    Tensor<double> lb = tb.leaf({1, 3}, data, true);
    Tensor<double> soft = nn::gumbel_softmax(la, 0.5, false, ra);
    Tensor<double> hard = nn::gumbel_softmax(lb, 0.5, true, rb);
    ArrayX<double> weights(3);
    weights << 0.3, -1.2, 0.7;
    Tensor<double> loss_soft = nn::sum_all(nn::mul(soft, ta.constant({1, 3}, weights)));
    Tensor<double> loss_hard = nn::sum_all(nn::mul(hard, tb.constant({1, 3}, weights)));
    ta.backward(loss_soft);
    tb.backward(loss_hard);
    for (int i = 0; i < 3; ++i) {
        CHECK(ta.grad(la.id)(i) == tb.grad(lb.id)(i));
    }
}

TEST_CASE("gumbel-softmax at huge tau approaches uniform") {
    Rng rng(555);
    const int draws = 10000, classes = 3;
    ArrayX<double> acc = ArrayX<double>::Zero(classes);
    for (int i = 0; i < draws; ++i) {
        Tape<double> tape;
        ArrayX<double> data(classes);
        data << 2.0, -1.0, 0.5;
        Tensor<double> soft = nn::gumbel_softmax(tape.constant({1, classes}, data), 1e6, false, rng);
        acc += soft.value();
    }
    acc /= draws;
    for (int c = 0; c < classes; ++c) CHECK(std::abs(acc(c) - 1.0 / classes) < 0.05);
}

TEST_CASE("gumbel-softmax rejects non-positive tau") {
    Tape<double> tape;
    Rng rng(1);
    Tensor<double> logits = tape.constant({1, 3}, ArrayX<double>::Zero(3));
    CHECK_THROWS_AS(nn::gumbel_softmax(logits, 0.0, false, rng), std::invalid_argument);
    CHECK_THROWS_AS(nn::gumbel_softmax(logits, -1.0, true, rng), std::invalid_argument);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged but counts the step") {
    ParamStore<float> store;
    auto& p = store.add("p", {3});
    p.value << 1.0f, -2.0f, 3.0f;
    nn::AdamState adam;
    store.zero_grads();
    nn::adam_step(store, adam, 0.1);
    CHECK(adam.step_count == 1);
    CHECK(p.value(0) == 1.0f);
    CHECK(p.value(1) == -2.0f);
    CHECK(p.value(2) == 3.0f);
}

TEST_CASE("adam matches a hand-computed trajectory for a constant gradient") {
    ParamStore<double> store;
    auto& p = store.add("p", {1});
    p.value(0) = 1.0;
    nn::AdamState adam;
    const double g = 0.5, lr = 0.1;

    // Independent scalar recurrence.
    double x = 1.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 3; ++t) {
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mh = m / (1.0 - std::pow(0.9, t));
        const double vh = v / (1.0 - std::pow(0.999, t));
        x -= lr * mh / (std::sqrt(vh) + 1e-7);

        p.grad(0) = g;
        nn::adam_step(store, adam, lr);
        CHECK(p.value(0) == doctest::Approx(x).epsilon(1e-12));
    }
}

TEST_CASE("adam minimizes a 1-D quadratic") {
    ParamStore<double> store;
    auto& p = store.add("p", {1});
    p.value(0) = 5.0;
    nn::AdamState adam;
    for (int step = 0; step < 2000; ++step) {
        // d/dx (x - 2)^2 = 2 (x - 2)
        store.zero_grads();
        p.grad(0) = 2.0 * (p.value(0) - 2.0);
        nn::adam_step(store, adam, 1e-2);
    }
    CHECK(std::abs(p.value(0) - 2.0) < 1e-3);
}

TEST_CASE("frozen parameters never move under the optimizer") {
    ParamStore<float> store;
    auto& frozen = store.add("frozen", {4}, /*trainable=*/false);
    frozen.value << 1, 2, 3, 4;
    auto& live = store.add("live", {4});
    const auto checksum = store.checksum();
    for (int i = 0; i < 5; ++i) {
        frozen.grad.setConstant(1.0f);  // even a hostile gradient buffer
        live.grad.setConstant(1.0f);
        nn::AdamState adam;
        nn::adam_step(store, adam, 0.1);
    }
    CHECK(frozen.value(0) == 1.0f);
    CHECK(live.value(0) != 0.0f);
    ParamStore<float> frozen_only;
    auto& f2 = frozen_only.add("frozen", {4}, false);
    f2.value << 1, 2, 3, 4;
    CHECK(frozen_only.checksum() == [&] {
        ParamStore<float> probe;
        auto& p2 = probe.add("frozen", {4}, false);
        p2.value << 1, 2, 3, 4;
        return probe.checksum();
    }());
    (void)checksum;
}

TEST_CASE("gradient clipping: under, over and property sweep") {
    ParamStore<float> store;
    auto& a = store.add("a", {4});
    SUBCASE("under the threshold: unchanged") {
        a.grad << 1, 1, 1, 1;  // norm 2
        const double norm = nn::clip_global_grad_norm(store, 4.0);
        CHECK(norm == doctest::Approx(2.0));
        CHECK(a.grad(0) == doctest::Approx(1.0));
    }
    SUBCASE("over the threshold: rescaled to the cap") {
        a.grad << 4, 4, 4, 4;  // norm 8
        const double norm = nn::clip_global_grad_norm(store, 4.0);
        CHECK(norm == doctest::Approx(8.0));
        const double post = std::sqrt(static_cast<double>(a.grad.square().sum()));
        CHECK(std::abs(post - 4.0) < 1e-6);
    }
    SUBCASE("random gradients never exceed the cap after clipping") {
        Rng rng(12);
        for (int trial = 0; trial < 200; ++trial) {
            for (int i = 0; i < 4; ++i) a.grad(i) = static_cast<float>(rng.next_double() * 20 - 10);
            nn::clip_global_grad_norm(store, 4.0);
            const double post = std::sqrt(static_cast<double>(a.grad.square().sum()));
            CHECK(post <= 4.0 + 1e-6);
        }
    }
}

TEST_CASE("checkpoints round-trip bit-exactly with metadata") {
    ParamStore<float> store;
    Rng rng(88);
    nn::fill_uniform(store.add("enc/w", {7, 3}), -1, 1, rng);
    nn::fill_uniform(store.add("enc/b", {3}), -1, 1, rng);
    nn::fill_uniform(store.add("frozen/w", {2, 2}, false), -1, 1, rng);
    const std::string path = "test_ckpt_tmp.bin";
    nn::save_checkpoint(path, store, {{"arch", "tiny"}, {"config_hash", "abc123"}});

    auto ckpt = nn::load_checkpoint<float>(path);
    CHECK(ckpt.metadata.at("arch") == "tiny");
    CHECK(ckpt.metadata.at("config_hash") == "abc123");
    ParamStore<float> restored;
    restored.add("enc/w", {7, 3});
    restored.add("enc/b", {3});
    restored.add("frozen/w", {2, 2}, false);
    nn::load_into(ckpt, restored);
    CHECK(restored.checksum() == store.checksum());

    // Mismatched architectures are rejected naming the offenders.
    ParamStore<float> wrong;
    wrong.add("enc/w", {7, 3});
    wrong.add("dec/w", {3, 3});
    CHECK_THROWS_WITH_AS(nn::load_into(nn::load_checkpoint<float>(path), wrong),
                         doctest::Contains("dec/w"), std::runtime_error);
    std::remove(path.c_str());
}
