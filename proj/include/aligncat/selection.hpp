#pragma once

// Query filtering: confidence top-O, coarse category+global alignment with
// the adaptive refined-set rule, and greedy negative mining. All ranking is
// deterministic; every tie anywhere breaks by ascending original query index.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "aligncat/data.hpp"
#include "aligncat/model.hpp"
#include "aligncat/tape.hpp"

namespace aligncat {

// Where negative candidates come from: this image's filtered queries, other
// images' queries, or both pools merged.
enum class NegativePool { in_image, cross_batch, both };

// Similarity space for negative mining. raw works only when query and text
// features share a width; auto_select falls back to the coarse projections.
enum class NegativeSpace { raw, coarse, auto_select };

inline const char* negative_pool_name(NegativePool p) {
    switch (p) {
        case NegativePool::in_image: return "in_image";
        case NegativePool::cross_batch: return "cross_batch";
        default: return "both";
    }
}

inline NegativePool negative_pool_from(const std::string& s) {
    if (s == "in_image") return NegativePool::in_image;
    if (s == "cross_batch") return NegativePool::cross_batch;
    if (s == "both") return NegativePool::both;
    throw std::invalid_argument("unknown negative_pool: " + s);
}

inline const char* negative_space_name(NegativeSpace s) {
    switch (s) {
        case NegativeSpace::raw: return "raw";
        case NegativeSpace::coarse: return "coarse";
        default: return "auto";
    }
}

inline NegativeSpace negative_space_from(const std::string& s) {
    if (s == "raw") return NegativeSpace::raw;
    if (s == "coarse") return NegativeSpace::coarse;
    if (s == "auto") return NegativeSpace::auto_select;
    throw std::invalid_argument("unknown negative_space: " + s);
}

struct SelectionConfig {
    std::size_t max_candidates = 20;  // O
    std::size_t max_refined = 10;     // K
    double alpha = 100.0;
    std::size_t n_neg = 8;
    NegativePool negative_pool = NegativePool::in_image;
    NegativeSpace negative_space = NegativeSpace::auto_select;

    void validate() const {
        if (max_refined < 1 || max_refined > max_candidates)
            throw std::invalid_argument("selection: need 1 <= K <= O, have K=" +
                                        std::to_string(max_refined) + " O=" +
                                        std::to_string(max_candidates));
        if (alpha < 0.0) throw std::invalid_argument("selection: alpha must be nonnegative");
        if (n_neg < 1) throw std::invalid_argument("selection: n_neg must be at least 1");
    }
};

struct ScoreRecord {
    std::size_t query_index = 0;  // original index into bundle.queries
    int s_class = 0;
    double s_global = 0.0;
    double s_coarse = 0.0;
    std::optional<double> s_fine;
    std::optional<double> s_d, s_u, s_q;  // set for picked negatives, at their pick step
};

// top-min(O, N) by confidence descending, ties ascending index
inline std::vector<std::size_t> confidence_filter(const FeatureBundle& b, std::size_t o) {
    if (o < 1) throw std::invalid_argument("confidence_filter: O must be at least 1");
    std::vector<std::size_t> idx(b.queries.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t c) {
        double ca = b.queries[a].confidence, cc = b.queries[c].confidence;
        if (ca != cc) return ca > cc;
        return a < c;
    });
    idx.resize(std::min(o, idx.size()));
    return idx;
}

inline int category_score(int c_v, int c_star, int categories) {
    if (c_v < 0 || c_v >= categories || c_star < 0 || c_star >= categories)
        throw std::invalid_argument("category_score: category outside [0," +
                                    std::to_string(categories) + "): c_v=" + std::to_string(c_v) +
                                    " c_star=" + std::to_string(c_star));
    return c_v == c_star ? 1 : 0;
}

// Coarse alignment of the filtered queries. Embeddings stay on the tape so a
// training caller can keep differentiating through them; the records carry
// plain values for ranking and audit.
struct CoarseResult {
    Var text;                    // projected global text feature
    std::vector<Var> queries;    // projected query features, parallel to q_o
    std::vector<ScoreRecord> records;
};

inline CoarseResult coarse_scores(Tape& t, const FeatureBundle& b,
                                  const std::vector<std::size_t>& q_o, const BoundParams& params,
                                  double alpha, std::optional<int> target_category,
                                  int categories) {
    CoarseResult out;
    out.text = affine(t, t.constant(b.text.global), params.coarse_w_t, params.coarse_b_t);
    for (std::size_t i : q_o) {
        Var fq = affine(t, t.constant(b.queries[i].feature), params.coarse_w_q, params.coarse_b_q);
        Var s = t.dot(fq, out.text);
        ScoreRecord rec;
        rec.query_index = i;
        rec.s_class = target_category ? category_score(b.queries[i].category, *target_category,
                                                       categories)
                                      : 0;
        rec.s_global = s.value().item();
        if (!std::isfinite(rec.s_global))
            throw numeric_error("coarse alignment: non-finite score for query " +
                                std::to_string(i));
        rec.s_coarse = alpha * rec.s_class + rec.s_global;
        out.queries.push_back(fq);
        out.records.push_back(rec);
    }
    return out;
}

// Adaptive refined set. With M category-matched queries: all of them when
// 0 < M < K, otherwise the coarse top-K. alpha = 0 turns category matching
// off entirely, so the result is the pure global top-K.
inline std::vector<std::size_t> select_refined(const std::vector<ScoreRecord>& records,
                                               const SelectionConfig& cfg) {
    if (records.empty()) throw std::invalid_argument("select_refined: no records");
    std::vector<std::size_t> pos(records.size());
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
    auto by_coarse = [&](std::size_t a, std::size_t c) {
        if (records[a].s_coarse != records[c].s_coarse)
            return records[a].s_coarse > records[c].s_coarse;
        return records[a].query_index < records[c].query_index;
    };

    std::size_t m = 0;
    if (cfg.alpha > 0.0)
        for (const ScoreRecord& r : records) m += r.s_class;

    std::vector<std::size_t> chosen;
    if (m > 0 && m < cfg.max_refined) {
        for (std::size_t i = 0; i < records.size(); ++i)
            if (records[i].s_class == 1) chosen.push_back(i);
        std::sort(chosen.begin(), chosen.end(), by_coarse);
    } else {
        chosen = pos;
        std::sort(chosen.begin(), chosen.end(), by_coarse);
        chosen.resize(std::min(cfg.max_refined, chosen.size()));
    }
    std::vector<std::size_t> out;
    for (std::size_t i : chosen) out.push_back(records[i].query_index);
    return out;
}

// --- greedy negative mining ---

namespace detail {

inline double dot_plain(const Tensor& a, const Tensor& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

inline double cosine_plain(const Tensor& a, const Tensor& b) {
    double num = dot_plain(a, b);
    double na = std::sqrt(dot_plain(a, a));
    double nb = std::sqrt(dot_plain(b, b));
    double denom = na * nb;
    return denom > 0.0 ? num / denom : 0.0;
}

// min-max over the active entries; all-equal collapses to 0.5
inline void minmax_norm(std::vector<double>& vals, const std::vector<bool>& active) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < vals.size(); ++i)
        if (active[i]) {
            lo = std::min(lo, vals[i]);
            hi = std::max(hi, vals[i]);
        }
    for (std::size_t i = 0; i < vals.size(); ++i)
        if (active[i]) vals[i] = hi > lo ? (vals[i] - lo) / (hi - lo) : 0.5;
}

}  // namespace detail

struct NegativePick {
    std::size_t pool_pos;  // position in the candidate list handed in
    double s_d, s_u, s_q;
};

// Greedy quality-driven picks over a candidate feature list (positive already
// excluded). Each step renormalizes difficulty and uniqueness over what is
// left; the first pick has no prior selections, so its uniqueness is 1.
inline std::vector<NegativePick> greedy_negatives(const std::vector<Tensor>& features,
                                                  const Tensor& text, std::size_t n_neg) {
    if (features.size() < n_neg)
        throw std::invalid_argument("greedy_negatives: pool of " +
                                    std::to_string(features.size()) + " cannot supply " +
                                    std::to_string(n_neg) + " negatives");
    std::vector<double> raw_d(features.size());
    for (std::size_t i = 0; i < features.size(); ++i)
        raw_d[i] = detail::dot_plain(features[i], text);

    std::vector<bool> active(features.size(), true);
    std::vector<std::size_t> picked;
    std::vector<NegativePick> out;
    for (std::size_t step = 0; step < n_neg; ++step) {
        std::vector<double> s_d = raw_d;
        detail::minmax_norm(s_d, active);

        std::vector<double> s_u(features.size(), 1.0);
        if (!picked.empty()) {
            for (std::size_t i = 0; i < features.size(); ++i) {
                if (!active[i]) continue;
                double worst = -std::numeric_limits<double>::infinity();
                for (std::size_t j : picked)
                    worst = std::max(worst, detail::cosine_plain(features[i], features[j]));
                s_u[i] = -worst;
            }
            detail::minmax_norm(s_u, active);
        }

        std::size_t best = features.size();
        double best_q = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < features.size(); ++i) {
            if (!active[i]) continue;
            double q = s_d[i] * s_u[i];
            if (q > best_q) {
                best_q = q;
                best = i;
            }
        }
        active[best] = false;
        picked.push_back(best);
        out.push_back({best, s_d[best], s_u[best], s_d[best] * s_u[best]});
    }
    return out;
}

// Negative selection over the filtered queries, excluding the positive.
// Returns original query indices in pick order and writes the pick-step
// scores into the matching records.
inline std::vector<std::size_t> select_negatives(std::vector<ScoreRecord>& records,
                                                 const std::vector<Tensor>& features,
                                                 const Tensor& text, std::size_t n_neg,
                                                 std::size_t positive_index) {
    if (records.size() != features.size())
        throw std::invalid_argument("select_negatives: records and features disagree");
    if (records.size() < n_neg + 1)
        throw std::invalid_argument("select_negatives: pool of " + std::to_string(records.size()) +
                                    " cannot supply " + std::to_string(n_neg) +
                                    " negatives plus a positive");
    std::vector<Tensor> pool;
    std::vector<std::size_t> pool_to_record;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].query_index == positive_index) continue;
        pool.push_back(features[i]);
        pool_to_record.push_back(i);
    }
    std::vector<std::size_t> out;
    for (const NegativePick& pick : greedy_negatives(pool, text, n_neg)) {
        ScoreRecord& rec = records[pool_to_record[pick.pool_pos]];
        rec.s_d = pick.s_d;
        rec.s_u = pick.s_u;
        rec.s_q = pick.s_q;
        out.push_back(rec.query_index);
    }
    return out;
}

}  // namespace aligncat
