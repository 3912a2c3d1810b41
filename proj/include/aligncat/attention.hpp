#pragma once

// Fine-grained text side: a bidirectional GRU over word embeddings, an
// adaptive attention head that reweights the contextual rows, and the
// projection into the shared fine space where refined queries are scored.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "aligncat/model.hpp"
#include "aligncat/tape.hpp"
#include "aligncat/tensor.hpp"

namespace aligncat {

// One GRU step: h' = (1 - z) * h + z * cand, with the reset gate applied to
// the previous state inside the candidate.
inline Var gru_cell(Tape& t, const BoundDirection& g, Var x, Var h) {
    Var z = t.sigmoid(t.add(t.add(t.vecmat(x, g.update.w), t.vecmat(h, g.update.u)), g.update.b));
    Var r = t.sigmoid(t.add(t.add(t.vecmat(x, g.reset.w), t.vecmat(h, g.reset.u)), g.reset.b));
    Var cand =
        t.tanh(t.add(t.add(t.vecmat(x, g.cand.w), t.vecmat(t.mul(r, h), g.cand.u)), g.cand.b));
    return t.add(h, t.mul(z, t.sub(cand, h)));
}

// Contextual word rows: forward and backward states (zero-initialized)
// concatenated per position, so each output row keeps the input width.
inline std::vector<Var> bigru_forward(Tape& t, const BoundParams& p, const Tensor& words) {
    std::size_t l = words.rows();
    if (l == 0) throw std::invalid_argument("bigru_forward: no word rows");
    std::size_t hidden = p.fwd.update.b.value().size();

    Var m = t.constant(words);
    std::vector<Var> xs;
    for (std::size_t i = 0; i < l; ++i) xs.push_back(t.row(m, i));

    Tensor zero = Tensor::vec(std::vector<double>(hidden, 0.0));
    std::vector<Var> fwd(l), bwd(l);
    Var h = t.constant(zero);
    for (std::size_t i = 0; i < l; ++i) fwd[i] = h = gru_cell(t, p.fwd, xs[i], h);
    h = t.constant(zero);
    for (std::size_t i = l; i-- > 0;) bwd[i] = h = gru_cell(t, p.bwd, xs[i], h);

    std::vector<Var> out;
    for (std::size_t i = 0; i < l; ++i) out.push_back(t.concat({fwd[i], bwd[i]}));
    return out;
}

struct AttentionOutcome {
    Var weights;                  // softmax distribution over rows
    std::vector<Var> reweighted;  // weights[i] * rows[i]
};

// Per-row scalar head, softmax over rows, rows rescaled by their weight.
inline AttentionOutcome adaptive_attention(Tape& t, const std::vector<Var>& rows, Var attn_w,
                                           Var attn_b) {
    if (rows.empty()) throw std::invalid_argument("adaptive_attention: no rows");
    std::vector<Var> scores;
    for (const Var& r : rows) scores.push_back(t.add(t.dot(r, attn_w), attn_b));
    AttentionOutcome out;
    out.weights = t.softmax(t.stack(scores));
    for (std::size_t i = 0; i < rows.size(); ++i)
        out.reweighted.push_back(t.smul(t.at(out.weights, i), rows[i]));
    return out;
}

// Sum the reweighted rows and project into the shared fine space.
inline Var aggregate_and_project(Tape& t, const std::vector<Var>& reweighted, Var w_t, Var b_t) {
    if (reweighted.empty()) throw std::invalid_argument("aggregate_and_project: no rows");
    return affine(t, t.add_n(reweighted), w_t, b_t);
}

struct FineText {
    std::vector<Var> context;  // contextual word rows
    Var weights;               // attention distribution
    Var embedding;             // weighted row sum projected into the shared fine space
};

inline FineText fine_text(Tape& t, const BoundParams& p, const Tensor& words) {
    FineText out;
    out.context = bigru_forward(t, p, words);
    AttentionOutcome attn = adaptive_attention(t, out.context, p.attn_w, p.attn_b);
    out.weights = attn.weights;
    out.embedding = aggregate_and_project(t, attn.reweighted, p.fine_w_t, p.fine_b_t);
    return out;
}

inline Var fine_query(Tape& t, const BoundParams& p, const Tensor& feature) {
    return affine(t, t.constant(feature), p.fine_w_q, p.fine_b_q);
}

struct FineScores {
    std::vector<Var> embeddings;  // projected query features
    std::vector<Var> scores;      // dot against the fine text embedding
};

inline FineScores fine_scores(Tape& t, const BoundParams& p, const std::vector<Tensor>& features,
                              Var text_embedding) {
    if (features.empty()) throw std::invalid_argument("fine_scores: no queries to score");
    FineScores out;
    for (const Tensor& f : features) {
        Var q = fine_query(t, p, f);
        Var s = t.dot(q, text_embedding);
        if (!std::isfinite(s.value().item()))
            throw numeric_error("fine alignment: non-finite score at query " +
                                std::to_string(out.scores.size()));
        out.embeddings.push_back(q);
        out.scores.push_back(s);
    }
    return out;
}

// Winner among scored queries; equal scores go to the lower query index.
inline std::size_t select_positive(const std::vector<std::size_t>& indices,
                                   const std::vector<double>& scores) {
    if (indices.empty()) throw std::invalid_argument("select_positive: no candidates");
    if (indices.size() != scores.size())
        throw std::invalid_argument("select_positive: " + std::to_string(indices.size()) +
                                    " indices vs " + std::to_string(scores.size()) + " scores");
    std::size_t best = 0;
    for (std::size_t i = 1; i < indices.size(); ++i)
        if (scores[i] > scores[best] || (scores[i] == scores[best] && indices[i] < indices[best]))
            best = i;
    return indices[best];
}

}  // namespace aligncat
