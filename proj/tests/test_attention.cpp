#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <utility>
#include <vector>

#include "aligncat/attention.hpp"
#include "oracles.hpp"

using namespace aligncat;

namespace {

// GRU recurrence recomputed with plain scalar loops, written directly from
// the gate formulas rather than through tape ops.
std::vector<double> gru_step_oracle(const GruDirection& d, const std::vector<double>& x,
                                    const std::vector<double>& h) {
    std::size_t hid = d.update.b.size();
    auto preact = [&](const GruGate& g, const std::vector<double>& state) {
        std::vector<double> out(hid);
        for (std::size_t j = 0; j < hid; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < x.size(); ++k) acc += x[k] * g.w.at(k, j);
            for (std::size_t k = 0; k < hid; ++k) acc += state[k] * g.u.at(k, j);
            out[j] = acc + g.b[j];
        }
        return out;
    };
    auto sigmoid = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };

    std::vector<double> z = preact(d.update, h);
    std::vector<double> r = preact(d.reset, h);
    for (std::size_t j = 0; j < hid; ++j) {
        z[j] = sigmoid(z[j]);
        r[j] = sigmoid(r[j]);
    }
    std::vector<double> rh(hid);
    for (std::size_t j = 0; j < hid; ++j) rh[j] = r[j] * h[j];
    std::vector<double> cand = preact(d.cand, rh);
    std::vector<double> out(hid);
    for (std::size_t j = 0; j < hid; ++j)
        out[j] = (1.0 - z[j]) * h[j] + z[j] * std::tanh(cand[j]);
    return out;
}

// full bidirectional pass via the scalar oracle
std::vector<std::vector<double>> bigru_oracle(const GruParams& g, const Tensor& words) {
    std::size_t l = words.rows(), d_t = words.cols(), hid = g.fwd.update.b.size();
    auto word = [&](std::size_t i) {
        std::vector<double> x(d_t);
        for (std::size_t k = 0; k < d_t; ++k) x[k] = words.at(i, k);
        return x;
    };
    std::vector<std::vector<double>> fwd(l), bwd(l);
    std::vector<double> h(hid, 0.0);
    for (std::size_t i = 0; i < l; ++i) fwd[i] = h = gru_step_oracle(g.fwd, word(i), h);
    h.assign(hid, 0.0);
    for (std::size_t i = l; i-- > 0;) bwd[i] = h = gru_step_oracle(g.bwd, word(i), h);
    std::vector<std::vector<double>> out(l);
    for (std::size_t i = 0; i < l; ++i) {
        out[i] = fwd[i];
        out[i].insert(out[i].end(), bwd[i].begin(), bwd[i].end());
    }
    return out;
}

Tensor identity_extended(std::size_t rows, std::size_t cols) {
    Tensor m(std::vector<std::size_t>{rows, cols});
    for (std::size_t i = 0; i < std::min(rows, cols); ++i) m.at(i, i) = 1.0;
    return m;
}

void zero_gru(GruParams& g) {
    for (GruDirection* d : {&g.fwd, &g.bwd})
        for (GruGate* gate : {&d->update, &d->reset, &d->cand}) {
            gate->w.fill(0.0);
            gate->u.fill(0.0);
            gate->b.fill(0.0);
        }
}

}  // namespace

TEST_CASE("zero-weight recurrence is a fixed point at zero") {
    ModelParams mp = init_params(ModelDims{4, 6, 4, 2}, 5);
    zero_gru(mp.gru);
    std::mt19937_64 rng(1);
    Tensor words = oracle::random_tensor({4, 6}, rng, -2.0, 2.0);
    Tape t;
    BoundParams bp = bind_params(t, mp);
    std::vector<Var> rows = bigru_forward(t, bp, words);
    REQUIRE(rows.size() == 4);
    for (const Var& r : rows) {
        REQUIRE(r.value().size() == 6);
        for (std::size_t k = 0; k < 6; ++k) CHECK(r.value()[k] == 0.0);
    }
}

TEST_CASE("single-word recurrence reads the same word in both directions") {
    ModelParams mp = init_params(ModelDims{4, 6, 4, 2}, 6);
    std::mt19937_64 rng(2);
    Tensor words = oracle::random_tensor({1, 6}, rng, -1.0, 1.0);
    Tape t;
    BoundParams bp = bind_params(t, mp);
    std::vector<Var> rows = bigru_forward(t, bp, words);
    REQUIRE(rows.size() == 1);
    std::vector<std::vector<double>> expect = bigru_oracle(mp.gru, words);
    for (std::size_t k = 0; k < 6; ++k)
        CHECK(rows[0].value()[k] == Catch::Approx(expect[0][k]).margin(1e-12));
}

TEST_CASE("recurrence matches a scalar-loop reimplementation") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        ModelParams mp = init_params(ModelDims{4, 6, 4, 2}, 100 + trial);
        Tensor words = oracle::random_tensor({3, 6}, rng, -1.5, 1.5);
        Tape t;
        BoundParams bp = bind_params(t, mp);
        std::vector<Var> rows = bigru_forward(t, bp, words);
        std::vector<std::vector<double>> expect = bigru_oracle(mp.gru, words);
        REQUIRE(rows.size() == 3);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t k = 0; k < 6; ++k)
                CHECK(rows[i].value()[k] == Catch::Approx(expect[i][k]).margin(1e-12));
    }
}

TEST_CASE("reversing words and swapping directions swaps the halves") {
    ModelParams mp = init_params(ModelDims{4, 6, 4, 2}, 7);
    std::mt19937_64 rng(4);
    const std::size_t l = 5, d_t = 6, hid = 3;
    Tensor words = oracle::random_tensor({l, d_t}, rng, -1.0, 1.0);
    Tensor reversed(std::vector<std::size_t>{l, d_t});
    for (std::size_t i = 0; i < l; ++i)
        for (std::size_t k = 0; k < d_t; ++k) reversed.at(i, k) = words.at(l - 1 - i, k);
    ModelParams swapped = mp;
    std::swap(swapped.gru.fwd, swapped.gru.bwd);

    Tape t;
    BoundParams bp = bind_params(t, mp);
    BoundParams bp2 = bind_params(t, swapped);
    std::vector<Var> base = bigru_forward(t, bp, words);
    std::vector<Var> mirror = bigru_forward(t, bp2, reversed);
    for (std::size_t i = 0; i < l; ++i) {
        const Tensor& m = mirror[i].value();
        const Tensor& b = base[l - 1 - i].value();
        for (std::size_t k = 0; k < hid; ++k) {
            CHECK(m[k] == b[hid + k]);
            CHECK(m[hid + k] == b[k]);
        }
    }
}

TEST_CASE("attention weights form a probability vector") {
    SECTION("single row gets weight one") {
        Tape t;
        Var row = t.constant(Tensor::vec({1.0, -2.0, 0.5}));
        Var w = t.constant(Tensor::vec({0.3, 0.1, -0.2}));
        Var b = t.constant(Tensor::scalar(0.7));
        AttentionOutcome out = adaptive_attention(t, {row}, w, b);
        REQUIRE(out.weights.value().size() == 1);
        CHECK(out.weights.value()[0] == 1.0);
        for (std::size_t k = 0; k < 3; ++k)
            CHECK(out.reweighted[0].value()[k] == row.value()[k]);
    }
    SECTION("identical rows share weight equally") {
        Tape t;
        Var a = t.constant(Tensor::vec({0.4, 0.2}));
        Var b = t.constant(Tensor::vec({0.4, 0.2}));
        Var w = t.constant(Tensor::vec({1.0, -1.0}));
        Var bias = t.constant(Tensor::scalar(0.0));
        AttentionOutcome out = adaptive_attention(t, {a, b}, w, bias);
        CHECK(out.weights.value()[0] == 0.5);
        CHECK(out.weights.value()[1] == 0.5);
    }
    SECTION("random rows: nonnegative, sums to one") {
        std::mt19937_64 rng(8);
        for (int trial = 0; trial < 20; ++trial) {
            Tape t;
            std::vector<Var> rows;
            std::size_t l = 2 + trial % 5;
            for (std::size_t i = 0; i < l; ++i)
                rows.push_back(t.constant(oracle::random_tensor({4}, rng, -3.0, 3.0)));
            Var w = t.constant(oracle::random_tensor({4}, rng, -1.0, 1.0));
            Var b = t.constant(Tensor::scalar(0.2));
            AttentionOutcome out = adaptive_attention(t, rows, w, b);
            double sum = 0.0;
            for (std::size_t i = 0; i < l; ++i) {
                CHECK(out.weights.value()[i] >= 0.0);
                sum += out.weights.value()[i];
            }
            CHECK(sum == Catch::Approx(1.0).margin(1e-12));
        }
    }
}

TEST_CASE("aggregation sums rows then projects") {
    SECTION("cancelling rows leave only the bias") {
        Tape t;
        Var r1 = t.constant(Tensor::vec({1.5, -0.5, 2.0}));
        Var r2 = t.constant(Tensor::vec({-1.5, 0.5, -2.0}));
        Var head_w = t.constant(Tensor::vec({0.0, 0.0, 0.0}));
        Var head_b = t.constant(Tensor::scalar(0.0));
        AttentionOutcome att = adaptive_attention(t, {r1, r2}, head_w, head_b);
        Var w = t.constant(identity_extended(3, 3));
        Var b = t.constant(Tensor::vec({0.25, -1.0, 4.0}));
        Var emb = aggregate_and_project(t, att.reweighted, w, b);
        CHECK(emb.value()[0] == 0.25);
        CHECK(emb.value()[1] == -1.0);
        CHECK(emb.value()[2] == 4.0);
    }
    SECTION("single word with identity projection passes through") {
        ModelParams mp = init_params(ModelDims{4, 4, 4, 2}, 9);
        mp.fine.w_t = identity_extended(4, 4);
        mp.fine.b_t = Tensor::vec(std::vector<double>(4, 0.0));
        std::mt19937_64 rng(10);
        Tensor words = oracle::random_tensor({1, 4}, rng, -1.0, 1.0);
        Tape t;
        BoundParams bp = bind_params(t, mp);
        FineText ft = fine_text(t, bp, words);
        REQUIRE(ft.context.size() == 1);
        for (std::size_t k = 0; k < 4; ++k)
            CHECK(ft.embedding.value()[k] == ft.context[0].value()[k]);
    }
    SECTION("random fixture equals a plain sum-then-affine recomputation") {
        std::mt19937_64 rng(11);
        Tape t;
        std::vector<Var> rows;
        for (int i = 0; i < 3; ++i)
            rows.push_back(t.constant(oracle::random_tensor({3}, rng, -1.0, 1.0)));
        Tensor wm = oracle::random_tensor({3, 2}, rng, -1.0, 1.0);
        Tensor bv = oracle::random_tensor({2}, rng, -1.0, 1.0);
        Var emb = aggregate_and_project(t, rows, t.constant(wm), t.constant(bv));
        for (std::size_t c = 0; c < 2; ++c) {
            double expect = bv[c];
            for (std::size_t k = 0; k < 3; ++k) {
                double sum = rows[0].value()[k] + rows[1].value()[k] + rows[2].value()[k];
                expect += sum * wm.at(k, c);
            }
            CHECK(emb.value()[c] == Catch::Approx(expect).margin(1e-12));
        }
    }
}

TEST_CASE("fine scores are dot products in the projected space") {
    ModelParams mp = init_params(ModelDims{3, 4, 3, 2}, 12);
    mp.fine.w_q = identity_extended(3, 3);
    mp.fine.b_q = Tensor::vec(std::vector<double>(3, 0.0));

    SECTION("orthogonal embeddings score zero, aligned units score one") {
        Tape t;
        BoundParams bp = bind_params(t, mp);
        Var text = t.constant(Tensor::vec({1.0, 0.0, 0.0}));
        FineScores fs =
            fine_scores(t, bp, {Tensor::vec({0.0, 1.0, 0.0}), Tensor::vec({1.0, 0.0, 0.0})}, text);
        CHECK(fs.scores[0].value().item() == 0.0);
        CHECK(fs.scores[1].value().item() == 1.0);
    }
    SECTION("five-query fixture matches the elementwise oracle") {
        std::mt19937_64 rng(13);
        ModelParams rp = init_params(ModelDims{3, 4, 3, 2}, 14);
        Tape t;
        BoundParams bp = bind_params(t, rp);
        Tensor text_emb = oracle::random_tensor({3}, rng, -1.0, 1.0);
        std::vector<Tensor> feats;
        for (int i = 0; i < 5; ++i) feats.push_back(oracle::random_tensor({3}, rng, -1.0, 1.0));
        FineScores fs = fine_scores(t, bp, feats, t.constant(text_emb));
        for (std::size_t i = 0; i < 5; ++i) {
            std::vector<double> proj(3, 0.0);
            for (std::size_t c = 0; c < 3; ++c) {
                proj[c] = rp.fine.b_q[c];
                for (std::size_t k = 0; k < 3; ++k) proj[c] += feats[i][k] * rp.fine.w_q.at(k, c);
            }
            double expect = 0.0;
            for (std::size_t c = 0; c < 3; ++c) expect += proj[c] * text_emb[c];
            CHECK(fs.scores[i].value().item() == Catch::Approx(expect).margin(1e-12));
        }
    }
    SECTION("empty query list refused") {
        Tape t;
        BoundParams bp = bind_params(t, mp);
        CHECK_THROWS_AS(fine_scores(t, bp, {}, t.constant(Tensor::vec({1.0, 0.0, 0.0}))),
                        std::invalid_argument);
    }
}

TEST_CASE("positive selection takes the argmax with index ties") {
    CHECK(select_positive({4, 7, 9}, {0.1, 0.9, 0.3}) == 7);
    CHECK(select_positive({5, 2, 8}, {0.4, 0.4, 0.4}) == 2);
    CHECK(select_positive({3}, {(-1.0)}) == 3);
    CHECK_THROWS_AS(select_positive({}, {}), std::invalid_argument);
    CHECK_THROWS_AS(select_positive({1, 2}, {0.5}), std::invalid_argument);

    SECTION("invariant under strictly increasing transforms") {
        std::mt19937_64 rng(15);
        std::uniform_real_distribution<double> score(-2.0, 2.0);
        std::uniform_real_distribution<double> gain(0.1, 5.0);
        for (int trial = 0; trial < 30; ++trial) {
            std::size_t n = 2 + trial % 6;
            std::vector<std::size_t> idx(n);
            std::vector<double> s(n);
            for (std::size_t i = 0; i < n; ++i) {
                idx[i] = i * 2 + 1;
                s[i] = score(rng);
            }
            std::size_t base = select_positive(idx, s);
            double a = gain(rng), c = score(rng);
            std::vector<double> transformed(n);
            for (std::size_t i = 0; i < n; ++i) transformed[i] = a * s[i] + c;
            CHECK(select_positive(idx, transformed) == base);
            for (std::size_t i = 0; i < n; ++i) transformed[i] = s[i] + 100.0;
            CHECK(select_positive(idx, transformed) == base);
        }
    }
}

TEST_CASE("gradients through the full fine text chain match finite differences") {
    ModelParams mp = init_params(ModelDims{4, 4, 3, 2}, 17);
    std::mt19937_64 rng(18);
    Tensor words = oracle::random_tensor({3, 4}, rng, -1.0, 1.0);

    auto eval = [&]() {
        Tape t;
        BoundParams bp = bind_params(t, mp);
        FineText ft = fine_text(t, bp, words);
        return t.dot(ft.embedding, ft.embedding).value().item();
    };
    auto analytic = [&](auto pick) {
        Tape t;
        BoundParams bp = bind_params(t, mp);
        FineText ft = fine_text(t, bp, words);
        t.backward(t.dot(ft.embedding, ft.embedding));
        return t.grad_of(pick(bp));
    };

    struct Target {
        const char* name;
        Tensor* param;
        std::function<Var(const BoundParams&)> pick;
    };
    std::vector<Target> targets = {
        {"fwd cand w", &mp.gru.fwd.cand.w, [](const BoundParams& b) { return b.fwd.cand.w; }},
        {"fwd update u", &mp.gru.fwd.update.u,
         [](const BoundParams& b) { return b.fwd.update.u; }},
        {"bwd reset b", &mp.gru.bwd.reset.b, [](const BoundParams& b) { return b.bwd.reset.b; }},
        {"attn w", &mp.gru.attn_w, [](const BoundParams& b) { return b.attn_w; }},
        {"attn b", &mp.gru.attn_b, [](const BoundParams& b) { return b.attn_b; }},
        {"fine w_t", &mp.fine.w_t, [](const BoundParams& b) { return b.fine_w_t; }},
        {"fine b_t", &mp.fine.b_t, [](const BoundParams& b) { return b.fine_b_t; }},
    };
    for (const Target& tgt : targets) {
        INFO(tgt.name);
        Tensor g_fd = oracle::fd_grad(*tgt.param, eval);
        Tensor g_an = analytic(tgt.pick);
        CHECK(oracle::max_rel_err(g_an, g_fd) < 1e-6);
    }
}
