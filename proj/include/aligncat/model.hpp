#pragma once

// Trainable parameters: coarse and fine projection pairs, the bidirectional
// GRU with its attention head, and the text classifier. Every trainable
// tensor lives here exactly once; for_each fixes the enumeration order used
// by the optimizer and the checkpoint format.

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>

#include "aligncat/tape.hpp"
#include "aligncat/tensor.hpp"

namespace aligncat {

struct ModelDims {
    std::size_t d_v = 256;
    std::size_t d_t = 512;
    std::size_t d_s = 512;
    int categories = 80;

    std::size_t hidden() const { return d_t / 2; }

    void validate() const {
        if (d_v == 0 || d_t == 0 || d_s == 0)
            throw std::invalid_argument("dims: extents must be positive");
        if (d_t % 2 != 0)
            throw std::invalid_argument("dims: d_t must be even (two GRU directions concatenate)");
        if (categories < 2) throw std::invalid_argument("dims: at least 2 categories");
    }
};

struct ProjectionPair {
    Tensor w_q, b_q;  // d_v x d_s, d_s
    Tensor w_t, b_t;  // d_t x d_s, d_s
};

using FineParams = ProjectionPair;

struct GruGate {
    Tensor w;  // d_t x h
    Tensor u;  // h x h
    Tensor b;  // h
};

struct GruDirection {
    GruGate update, reset, cand;
};

struct GruParams {
    GruDirection fwd, bwd;
    Tensor attn_w;  // d_t
    Tensor attn_b;  // scalar
};

struct ClassifierParams {
    Tensor w;  // d_t x C
    Tensor b;  // C
};

struct ModelParams {
    ModelDims dims;
    ProjectionPair coarse;
    FineParams fine;
    GruParams gru;
    ClassifierParams cls;

    template <typename Self, typename F>
    static void enumerate(Self& self, F&& f) {
        f("coarse.w_q", self.coarse.w_q);
        f("coarse.b_q", self.coarse.b_q);
        f("coarse.w_t", self.coarse.w_t);
        f("coarse.b_t", self.coarse.b_t);
        f("fine.w_q", self.fine.w_q);
        f("fine.b_q", self.fine.b_q);
        f("fine.w_t", self.fine.w_t);
        f("fine.b_t", self.fine.b_t);
        auto dir = [&](const char* prefix, auto& d) {
            std::string p(prefix);
            f((p + ".update.w").c_str(), d.update.w);
            f((p + ".update.u").c_str(), d.update.u);
            f((p + ".update.b").c_str(), d.update.b);
            f((p + ".reset.w").c_str(), d.reset.w);
            f((p + ".reset.u").c_str(), d.reset.u);
            f((p + ".reset.b").c_str(), d.reset.b);
            f((p + ".cand.w").c_str(), d.cand.w);
            f((p + ".cand.u").c_str(), d.cand.u);
            f((p + ".cand.b").c_str(), d.cand.b);
        };
        dir("gru.fwd", self.gru.fwd);
        dir("gru.bwd", self.gru.bwd);
        f("gru.attn_w", self.gru.attn_w);
        f("gru.attn_b", self.gru.attn_b);
        f("cls.w", self.cls.w);
        f("cls.b", self.cls.b);
    }

    template <typename F>
    void for_each(F&& f) {
        enumerate(*this, f);
    }
    template <typename F>
    void for_each(F&& f) const {
        enumerate(*this, f);
    }

    std::vector<Tensor*> tensors() {
        std::vector<Tensor*> out;
        for_each([&](const char*, Tensor& t) { out.push_back(&t); });
        return out;
    }
};

// uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) per matrix; biases start at zero
inline ModelParams init_params(const ModelDims& dims, std::uint64_t seed) {
    dims.validate();
    std::mt19937_64 rng(seed);
    auto uniform_mat = [&](std::size_t rows, std::size_t cols) {
        double bound = 1.0 / std::sqrt(static_cast<double>(rows));
        std::uniform_real_distribution<double> d(-bound, bound);
        Tensor t({rows, cols});
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = d(rng);
        return t;
    };
    auto uniform_vec = [&](std::size_t n, std::size_t fan_in) {
        double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> d(-bound, bound);
        Tensor t({n});
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = d(rng);
        return t;
    };

    std::size_t h = dims.hidden();
    std::size_t C = static_cast<std::size_t>(dims.categories);
    ModelParams p;
    p.dims = dims;
    p.coarse.w_q = uniform_mat(dims.d_v, dims.d_s);
    p.coarse.b_q = Tensor({dims.d_s});
    p.coarse.w_t = uniform_mat(dims.d_t, dims.d_s);
    p.coarse.b_t = Tensor({dims.d_s});
    p.fine.w_q = uniform_mat(dims.d_v, dims.d_s);
    p.fine.b_q = Tensor({dims.d_s});
    p.fine.w_t = uniform_mat(dims.d_t, dims.d_s);
    p.fine.b_t = Tensor({dims.d_s});
    for (GruDirection* d : {&p.gru.fwd, &p.gru.bwd}) {
        for (GruGate* g : {&d->update, &d->reset, &d->cand}) {
            g->w = uniform_mat(dims.d_t, h);
            g->u = uniform_mat(h, h);
            g->b = Tensor({h});
        }
    }
    p.gru.attn_w = uniform_vec(dims.d_t, dims.d_t);
    p.gru.attn_b = Tensor::scalar(0.0);
    p.cls.w = uniform_mat(dims.d_t, C);
    p.cls.b = Tensor({C});
    return p;
}

// Tape handles for one batch's differentiable view of the parameters.
struct BoundGate {
    Var w, u, b;
};
struct BoundDirection {
    BoundGate update, reset, cand;
};
struct BoundParams {
    Var coarse_w_q, coarse_b_q, coarse_w_t, coarse_b_t;
    Var fine_w_q, fine_b_q, fine_w_t, fine_b_t;
    BoundDirection fwd, bwd;
    Var attn_w, attn_b;
    Var cls_w, cls_b;
};

inline BoundParams bind_params(Tape& t, const ModelParams& p) {
    auto leaf = [&](const Tensor& x) { return t.leaf(x, true); };
    BoundParams b;
    b.coarse_w_q = leaf(p.coarse.w_q);
    b.coarse_b_q = leaf(p.coarse.b_q);
    b.coarse_w_t = leaf(p.coarse.w_t);
    b.coarse_b_t = leaf(p.coarse.b_t);
    b.fine_w_q = leaf(p.fine.w_q);
    b.fine_b_q = leaf(p.fine.b_q);
    b.fine_w_t = leaf(p.fine.w_t);
    b.fine_b_t = leaf(p.fine.b_t);
    auto dir = [&](const GruDirection& d) {
        BoundDirection out;
        out.update = {leaf(d.update.w), leaf(d.update.u), leaf(d.update.b)};
        out.reset = {leaf(d.reset.w), leaf(d.reset.u), leaf(d.reset.b)};
        out.cand = {leaf(d.cand.w), leaf(d.cand.u), leaf(d.cand.b)};
        return out;
    };
    b.fwd = dir(p.gru.fwd);
    b.bwd = dir(p.gru.bwd);
    b.attn_w = leaf(p.gru.attn_w);
    b.attn_b = leaf(p.gru.attn_b);
    b.cls_w = leaf(p.cls.w);
    b.cls_b = leaf(p.cls.b);
    return b;
}

// Gradients for every parameter, in enumeration order matching for_each.
inline std::vector<Tensor> collect_grads(const Tape& t, const BoundParams& b) {
    std::vector<Var> order = {b.coarse_w_q, b.coarse_b_q, b.coarse_w_t, b.coarse_b_t,
                              b.fine_w_q,   b.fine_b_q,   b.fine_w_t,   b.fine_b_t,
                              b.fwd.update.w, b.fwd.update.u, b.fwd.update.b,
                              b.fwd.reset.w,  b.fwd.reset.u,  b.fwd.reset.b,
                              b.fwd.cand.w,   b.fwd.cand.u,   b.fwd.cand.b,
                              b.bwd.update.w, b.bwd.update.u, b.bwd.update.b,
                              b.bwd.reset.w,  b.bwd.reset.u,  b.bwd.reset.b,
                              b.bwd.cand.w,   b.bwd.cand.u,   b.bwd.cand.b,
                              b.attn_w, b.attn_b, b.cls_w, b.cls_b};
    std::vector<Tensor> out;
    out.reserve(order.size());
    for (Var v : order) out.push_back(t.grad_of(v));
    return out;
}

}  // namespace aligncat
