#pragma once

// Reverse-mode autodiff. Every operation appends a node to a Tape; node order
// is creation order, so walking the tape backwards is already a topological
// replay. Reductions and inner products accumulate strictly left to right so
// results are reproducible bit for bit.

#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "aligncat/tensor.hpp"

namespace aligncat {

class Tape;

struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;
    const Tensor& value() const;
};

class Tape {
public:
    Var leaf(Tensor value, bool requires_grad = false) {
        return push(std::move(value), requires_grad, nullptr);
    }

    Var constant(Tensor value) { return leaf(std::move(value), false); }

    std::size_t size() const { return nodes_.size(); }

    const Tensor& value(Var v) const { return nodes_[v.id].value; }

    // Gradient of the last backward() target w.r.t. v; zero if v was untouched.
    Tensor grad_of(Var v) const {
        const Node& n = nodes_[v.id];
        return n.grad_alloc ? n.grad : Tensor::zeros_like(n.value);
    }

    // --- arithmetic ---

    Var add(Var a, Var b) { return ew2(a, b, "add", [](double x, double y) { return x + y; }, 1.0, 1.0); }
    Var sub(Var a, Var b) { return ew2(a, b, "sub", [](double x, double y) { return x - y; }, 1.0, -1.0); }

    Var mul(Var a, Var b) {
        check_same(a, b, "mul");
        const Tensor& av = val(a);
        const Tensor& bv = val(b);
        Tensor out(av.shape());
        for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
        std::size_t ia = a.id, ib = b.id;
        return push(std::move(out), wants(a) || wants(b), [ia, ib](Tape& t, std::size_t o) {
            const Tensor& g = t.nodes_[o].grad;
            const Tensor& av = t.nodes_[ia].value;
            const Tensor& bv = t.nodes_[ib].value;
            if (t.wants_id(ia)) {
                Tensor da(av.shape());
                for (std::size_t i = 0; i < da.size(); ++i) da[i] = g[i] * bv[i];
                t.accum(ia, da);
            }
            if (t.wants_id(ib)) {
                Tensor db(bv.shape());
                for (std::size_t i = 0; i < db.size(); ++i) db[i] = g[i] * av[i];
                t.accum(ib, db);
            }
        });
    }

    // k*a + c elementwise
    Var affine_const(Var a, double k, double c) {
        const Tensor& av = val(a);
        Tensor out(av.shape());
        for (std::size_t i = 0; i < av.size(); ++i) out[i] = k * av[i] + c;
        std::size_t ia = a.id;
        return push(std::move(out), wants(a), [ia, k](Tape& t, std::size_t o) {
            const Tensor& g = t.nodes_[o].grad;
            Tensor da(t.nodes_[ia].value.shape());
            for (std::size_t i = 0; i < da.size(); ++i) da[i] = k * g[i];
            t.accum(ia, da);
        });
    }

    Var scale(Var a, double k) { return affine_const(a, k, 0.0); }

    // scalar s times tensor a
    Var smul(Var s, Var a) {
        if (val(s).rank() != 0)
            throw shape_error("smul: scalar operand required, have " + shape_str(val(s).shape()));
        const Tensor& av = val(a);
        double sv = val(s).item();
        Tensor out(av.shape());
        for (std::size_t i = 0; i < av.size(); ++i) out[i] = sv * av[i];
        std::size_t is = s.id, ia = a.id;
        return push(std::move(out), wants(s) || wants(a), [is, ia](Tape& t, std::size_t o) {
            const Tensor& g = t.nodes_[o].grad;
            const Tensor& av = t.nodes_[ia].value;
            double sv = t.nodes_[is].value.item();
            if (t.wants_id(is)) {
                double acc = 0.0;
                for (std::size_t i = 0; i < av.size(); ++i) acc += g[i] * av[i];
                t.accum(is, Tensor::scalar(acc));
            }
            if (t.wants_id(ia)) {
                Tensor da(av.shape());
                for (std::size_t i = 0; i < da.size(); ++i) da[i] = sv * g[i];
                t.accum(ia, da);
            }
        });
    }

    // --- linear algebra ---

    Var matmul(Var a, Var b) {
        const Tensor& av = val(a);
        const Tensor& bv = val(b);
        if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows())
            throw shape_error("matmul: shapes disagree " + shape_str(av.shape()) + " vs " +
                              shape_str(bv.shape()));
        std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
        Tensor out({m, n});
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0.0;
                for (std::size_t p = 0; p < k; ++p) acc += av.at(i, p) * bv.at(p, j);
                out.at(i, j) = acc;
            }
        std::size_t ia = a.id, ib = b.id;
        return push(std::move(out), wants(a) || wants(b), [ia, ib](Tape& t, std::size_t o) {
            const Tensor& g = t.nodes_[o].grad;
            const Tensor& av = t.nodes_[ia].value;
            const Tensor& bv = t.nodes_[ib].value;
            std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
            if (t.wants_id(ia)) {
                Tensor da({m, k});
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < n; ++j) acc += g.at(i, j) * bv.at(p, j);
                        da.at(i, p) = acc;
                    }
                t.accum(ia, da);
            }
            if (t.wants_id(ib)) {
                Tensor db({k, n});
                for (std::size_t p = 0; p < k; ++p)
                    for (std::size_t j = 0; j < n; ++j) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < m; ++i) acc += av.at(i, p) * g.at(i, j);
                        db.at(p, j) = acc;
                    }
                t.accum(ib, db);
            }
        });
    }

    // row vector x times matrix w
    Var vecmat(Var x, Var w) {
        const Tensor& xv = val(x);
        const Tensor& wv = val(w);
        if (xv.rank() != 1 || wv.rank() != 2 || xv.size() != wv.rows())
            throw shape_error("vecmat: shapes disagree " + shape_str(xv.shape()) + " vs " +
                              shape_str(wv.shape()));
        std::size_t k = xv.size(), n = wv.cols();
        Tensor out({n});
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += xv[p] * wv.at(p, j);
            out[j] = acc;
        }
        std::size_t ix = x.id, iw = w.id;
        return push(std::move(out), wants(x) || wants(w), [ix, iw](Tape& t, std::size_t o) {
            const Tensor& g = t.nodes_[o].grad;
            const Tensor& xv = t.nodes_[ix].value;
            const Tensor& wv = t.nodes_[iw].value;
            std::size_t k = xv.size(), n = wv.cols();
            if (t.wants_id(ix)) {
                Tensor dx({k});
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += wv.at(p, j) * g[j];
                    dx[p] = acc;
                }
                t.accum(ix, dx);
            }
            if (t.wants_id(iw)) {
                Tensor dw({k, n});
                for (std::size_t p = 0; p < k; ++p)
                    for (std::size_t j = 0; j < n; ++j) dw.at(p, j) = xv[p] * g[j];
                t.accum(iw, dw);
            }
        });
    }

    Var dot(Var a, Var b) {
        const Tensor& av = val(a);
        const Tensor& bv = val(b);
        if (av.rank() != 1 || bv.rank() != 1 || av.size() != bv.size())
            throw shape_error("dot: shapes disagree " + shape_str(av.shape()) + " vs " +
                              shape_str(bv.shape()));
        double acc = 0.0;
        for (std::size_t i = 0; i < av.size(); ++i) acc += av[i] * bv[i];
        std::size_t ia = a.id, ib = b.id;
        return push(Tensor::scalar(acc), wants(a) || wants(b), [ia, ib](Tape& t, std::size_t o) {
            double g = t.nodes_[o].grad.item();
            const Tensor& av = t.nodes_[ia].value;
            const Tensor& bv = t.nodes_[ib].value;
            if (t.wants_id(ia)) {
                Tensor da(av.shape());
                for (std::size_t i = 0; i < da.size(); ++i) da[i] = g * bv[i];
                t.accum(ia, da);
            }
            if (t.wants_id(ib)) {
                Tensor db(bv.shape());
                for (std::size_t i = 0; i < db.size(); ++i) db[i] = g * av[i];
                t.accum(ib, db);
            }
        });
    }

    Var sum(Var a) {
        const Tensor& av = val(a);
        double acc = 0.0;
        for (std::size_t i = 0; i < av.size(); ++i) acc += av[i];
        std::size_t ia = a.id;
        return push(Tensor::scalar(acc), wants(a), [ia](Tape& t, std::size_t o) {
            double g = t.nodes_[o].grad.item();
            Tensor da(t.nodes_[ia].value.shape());
            for (std::size_t i = 0; i < da.size(); ++i) da[i] = g;
            t.accum(ia, da);
        });
    }

    // left-to-right sum of same-shape terms
    Var add_n(const std::vector<Var>& terms) {
        if (terms.empty()) throw shape_error("add_n: no terms");
        const Tensor& t0 = val(terms[0]);
        Tensor out = t0;
        bool rg = wants(terms[0]);
        std::vector<std::size_t> ids{terms[0].id};
        for (std::size_t i = 1; i < terms.size(); ++i) {
            check_same(terms[0], terms[i], "add_n");
            const Tensor& tv = val(terms[i]);
            for (std::size_t j = 0; j < out.size(); ++j) out[j] += tv[j];
            rg = rg || wants(terms[i]);
            ids.push_back(terms[i].id);
        }
        return push(std::move(out), rg, [ids](Tape& t, std::size_t o) {
            const Tensor& g = t.nodes_[o].grad;
            for (std::size_t id : ids)
                if (t.wants_id(id)) t.accum(id, g);
        });
    }

    // --- nonlinearities ---

    Var sigmoid(Var a) {
        const Tensor& av = val(a);
        Tensor out(av.shape());
        for (std::size_t i = 0; i < av.size(); ++i) {
            double x = av[i];
            out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                              : std::exp(x) / (1.0 + std::exp(x));
        }
        std::size_t ia = a.id;
        return push(std::move(out), wants(a), [ia](Tape& t, std::size_t o) {
            const Tensor& g = t.nodes_[o].grad;
            const Tensor& y = t.nodes_[o].value;
            Tensor da(y.shape());
            for (std::size_t i = 0; i < da.size(); ++i) da[i] = g[i] * y[i] * (1.0 - y[i]);
            t.accum(ia, da);
        });
    }

    Var tanh(Var a) {
        const Tensor& av = val(a);
        Tensor out(av.shape());
        for (std::size_t i = 0; i < av.size(); ++i) out[i] = std::tanh(av[i]);
        std::size_t ia = a.id;
        return push(std::move(out), wants(a), [ia](Tape& t, std::size_t o) {
            const Tensor& g = t.nodes_[o].grad;
            const Tensor& y = t.nodes_[o].value;
            Tensor da(y.shape());
            for (std::size_t i = 0; i < da.size(); ++i) da[i] = g[i] * (1.0 - y[i] * y[i]);
            t.accum(ia, da);
        });
    }

    // softmax over a vector, max-subtracted for stability
    Var softmax(Var a) {
        const Tensor& av = val(a);
        if (av.rank() != 1 || av.size() == 0)
            throw shape_error("softmax: nonempty vector required, have " + shape_str(av.shape()));
        double mx = av[0];
        for (std::size_t i = 1; i < av.size(); ++i) mx = std::max(mx, av[i]);
        Tensor out(av.shape());
        double z = 0.0;
        for (std::size_t i = 0; i < av.size(); ++i) {
            out[i] = std::exp(av[i] - mx);
            z += out[i];
        }
        for (std::size_t i = 0; i < av.size(); ++i) out[i] /= z;
        std::size_t ia = a.id;
        return push(std::move(out), wants(a), [ia](Tape& t, std::size_t o) {
            const Tensor& g = t.nodes_[o].grad;
            const Tensor& y = t.nodes_[o].value;
            double gy = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) gy += g[i] * y[i];
            Tensor da(y.shape());
            for (std::size_t i = 0; i < da.size(); ++i) da[i] = y[i] * (g[i] - gy);
            t.accum(ia, da);
        });
    }

    // log sum exp over a vector, max-subtracted
    Var logsumexp(Var a) {
        const Tensor& av = val(a);
        if (av.rank() != 1 || av.size() == 0)
            throw shape_error("logsumexp: nonempty vector required, have " + shape_str(av.shape()));
        double mx = av[0];
        for (std::size_t i = 1; i < av.size(); ++i) mx = std::max(mx, av[i]);
        double z = 0.0;
        for (std::size_t i = 0; i < av.size(); ++i) z += std::exp(av[i] - mx);
        double lse = mx + std::log(z);
        std::size_t ia = a.id;
        return push(Tensor::scalar(lse), wants(a), [ia](Tape& t, std::size_t o) {
            double g = t.nodes_[o].grad.item();
            double lse = t.nodes_[o].value.item();
            const Tensor& x = t.nodes_[ia].value;
            Tensor da(x.shape());
            for (std::size_t i = 0; i < da.size(); ++i) da[i] = g * std::exp(x[i] - lse);
            t.accum(ia, da);
        });
    }

    // --- shuffling ---

    Var concat(const std::vector<Var>& parts) {
        if (parts.empty()) throw shape_error("concat: no parts");
        std::size_t total = 0;
        bool rg = false;
        std::vector<std::size_t> ids;
        for (Var p : parts) {
            if (val(p).rank() != 1)
                throw shape_error("concat: vector parts required, have " + shape_str(val(p).shape()));
            total += val(p).size();
            rg = rg || wants(p);
            ids.push_back(p.id);
        }
        Tensor out({total});
        std::size_t off = 0;
        for (Var p : parts) {
            const Tensor& pv = val(p);
            for (std::size_t i = 0; i < pv.size(); ++i) out[off + i] = pv[i];
            off += pv.size();
        }
        return push(std::move(out), rg, [ids](Tape& t, std::size_t o) {
            const Tensor& g = t.nodes_[o].grad;
            std::size_t off = 0;
            for (std::size_t id : ids) {
                const Tensor& pv = t.nodes_[id].value;
                if (t.wants_id(id)) {
                    Tensor dp(pv.shape());
                    for (std::size_t i = 0; i < pv.size(); ++i) dp[i] = g[off + i];
                    t.accum(id, dp);
                }
                off += pv.size();
            }
        });
    }

    // scalars stacked into a vector
    Var stack(const std::vector<Var>& scalars) {
        if (scalars.empty()) throw shape_error("stack: no parts");
        Tensor out({scalars.size()});
        bool rg = false;
        std::vector<std::size_t> ids;
        for (std::size_t i = 0; i < scalars.size(); ++i) {
            if (val(scalars[i]).rank() != 0)
                throw shape_error("stack: scalar parts required, have " +
                                  shape_str(val(scalars[i]).shape()));
            out[i] = val(scalars[i]).item();
            rg = rg || wants(scalars[i]);
            ids.push_back(scalars[i].id);
        }
        return push(std::move(out), rg, [ids](Tape& t, std::size_t o) {
            const Tensor& g = t.nodes_[o].grad;
            for (std::size_t i = 0; i < ids.size(); ++i)
                if (t.wants_id(ids[i])) t.accum(ids[i], Tensor::scalar(g[i]));
        });
    }

    Var row(Var m, std::size_t i) {
        const Tensor& mv = val(m);
        if (mv.rank() != 2 || i >= mv.rows())
            throw shape_error("row: index " + std::to_string(i) + " out of " + shape_str(mv.shape()));
        Tensor out({mv.cols()});
        for (std::size_t j = 0; j < mv.cols(); ++j) out[j] = mv.at(i, j);
        std::size_t im = m.id;
        return push(std::move(out), wants(m), [im, i](Tape& t, std::size_t o) {
            const Tensor& g = t.nodes_[o].grad;
            const Tensor& mv = t.nodes_[im].value;
            Tensor dm(mv.shape());
            for (std::size_t j = 0; j < mv.cols(); ++j) dm.at(i, j) = g[j];
            t.accum(im, dm);
        });
    }

    Var at(Var v, std::size_t i) {
        const Tensor& vv = val(v);
        if (vv.rank() != 1 || i >= vv.size())
            throw shape_error("at: index " + std::to_string(i) + " out of " + shape_str(vv.shape()));
        std::size_t iv = v.id;
        return push(Tensor::scalar(vv[i]), wants(v), [iv, i](Tape& t, std::size_t o) {
            double g = t.nodes_[o].grad.item();
            Tensor dv(t.nodes_[iv].value.shape());
            dv[i] = g;
            t.accum(iv, dv);
        });
    }

    // --- backward ---

    void backward(Var loss) {
        if (val(loss).rank() != 0)
            throw shape_error("backward: scalar loss required, have " + shape_str(val(loss).shape()));
        for (Node& n : nodes_) n.grad_alloc = false;
        accum(loss.id, Tensor::scalar(1.0));
        for (std::size_t id = nodes_.size(); id-- > 0;) {
            Node& n = nodes_[id];
            if (n.grad_alloc && n.requires_grad && n.backprop) n.backprop(*this, id);
        }
    }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        bool grad_alloc = false;
        std::function<void(Tape&, std::size_t)> backprop;
    };

    const Tensor& val(Var v) const { return nodes_[v.id].value; }
    bool wants(Var v) const { return nodes_[v.id].requires_grad; }
    bool wants_id(std::size_t id) const { return nodes_[id].requires_grad; }

    void check_same(Var a, Var b, const char* op) const {
        if (!val(a).same_shape(val(b)))
            throw shape_error(std::string(op) + ": shapes disagree " + shape_str(val(a).shape()) +
                              " vs " + shape_str(val(b).shape()));
    }

    Var push(Tensor value, bool requires_grad, std::function<void(Tape&, std::size_t)> backprop) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        n.backprop = std::move(backprop);
        nodes_.push_back(std::move(n));
        return Var{this, nodes_.size() - 1};
    }

    void accum(std::size_t id, const Tensor& g) {
        Node& n = nodes_[id];
        if (!n.grad_alloc) {
            n.grad = g;
            n.grad_alloc = true;
        } else {
            n.grad.add_inplace(g);
        }
    }

    template <typename F>
    Var ew2(Var a, Var b, const char* name, F f, double ka, double kb) {
        check_same(a, b, name);
        const Tensor& av = val(a);
        const Tensor& bv = val(b);
        Tensor out(av.shape());
        for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i], bv[i]);
        std::size_t ia = a.id, ib = b.id;
        return push(std::move(out), wants(a) || wants(b), [ia, ib, ka, kb](Tape& t, std::size_t o) {
            const Tensor& g = t.nodes_[o].grad;
            if (t.wants_id(ia)) {
                Tensor da(t.nodes_[ia].value.shape());
                for (std::size_t i = 0; i < da.size(); ++i) da[i] = ka * g[i];
                t.accum(ia, da);
            }
            if (t.wants_id(ib)) {
                Tensor db(t.nodes_[ib].value.shape());
                for (std::size_t i = 0; i < db.size(); ++i) db[i] = kb * g[i];
                t.accum(ib, db);
            }
        });
    }

    std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape->value(*this); }

// x * W + b for a rank-1 x
inline Var affine(Tape& t, Var x, Var w, Var b) { return t.add(t.vecmat(x, w), b); }

}  // namespace aligncat
