#pragma once

// One sample's forward pass: confidence filter, coarse alignment, refined
// selection, fine alignment, positive pick, negative mining, and the text
// classifier. Everything trainable stays on the tape; the returned run also
// carries plain values for ranking, audit, and metrics.

#include <algorithm>
#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "aligncat/attention.hpp"
#include "aligncat/data.hpp"
#include "aligncat/model.hpp"
#include "aligncat/selection.hpp"
#include "aligncat/tape.hpp"

namespace aligncat {

// Which stage scores drive refined selection and the final argmax.
//   global_only      rank by S_global at both stages
//   global_class     coarse only: refine and pick by S_coarse
//   global_fine      refine by S_global, pick by S_fine
//   fine_then_coarse swapped stages: refine by S_fine, pick by S_coarse
//   full             refine by S_coarse, pick by S_fine
enum class ScoreFormula { global_only, global_class, global_fine, fine_then_coarse, full };

enum class CategorySource { none, gt, predicted };

inline const char* formula_name(ScoreFormula f) {
    switch (f) {
        case ScoreFormula::global_only: return "global";
        case ScoreFormula::global_class: return "global_class";
        case ScoreFormula::global_fine: return "global_fine";
        case ScoreFormula::fine_then_coarse: return "fine_then_coarse";
        default: return "full";
    }
}

inline ScoreFormula formula_from(const std::string& s) {
    if (s == "global") return ScoreFormula::global_only;
    if (s == "global_class") return ScoreFormula::global_class;
    if (s == "global_fine") return ScoreFormula::global_fine;
    if (s == "fine_then_coarse") return ScoreFormula::fine_then_coarse;
    if (s == "full") return ScoreFormula::full;
    throw std::invalid_argument("unknown score formula: " + s);
}

inline const char* category_source_name(CategorySource c) {
    switch (c) {
        case CategorySource::none: return "none";
        case CategorySource::gt: return "gt";
        default: return "predicted";
    }
}

inline CategorySource category_source_from(const std::string& s) {
    if (s == "none") return CategorySource::none;
    if (s == "gt") return CategorySource::gt;
    if (s == "predicted") return CategorySource::predicted;
    throw std::invalid_argument("unknown category source: " + s);
}

inline bool uses_fine(ScoreFormula f) {
    return f == ScoreFormula::global_fine || f == ScoreFormula::fine_then_coarse ||
           f == ScoreFormula::full;
}

inline bool uses_class(ScoreFormula f) {
    return f == ScoreFormula::global_class || f == ScoreFormula::fine_then_coarse ||
           f == ScoreFormula::full;
}

struct PipelineConfig {
    SelectionConfig selection;
    ScoreFormula formula = ScoreFormula::full;
    CategorySource train_category = CategorySource::gt;
    CategorySource infer_category = CategorySource::predicted;

    void validate() const { selection.validate(); }
};

// A mined negative with its embeddings in both shared spaces. query_index is
// set when the negative came from this sample's own queries.
struct ChosenNegative {
    std::optional<std::size_t> query_index;
    Var coarse_emb;
    Var fine_emb;  // meaningful only when the formula runs the fine stage
};

struct SampleRun {
    std::vector<std::size_t> q_o;      // confidence-filtered original indices
    std::vector<ScoreRecord> records;  // parallel to q_o
    std::vector<std::size_t> refined;  // original indices, selection order
    std::size_t q_star = 0;            // original index of the positive
    std::vector<ChosenNegative> negatives;

    Var text_coarse;      // projected global text feature
    Var positive_coarse;  // projected positive query
    bool fine_ran = false;
    Var text_fine;      // aggregated, projected text feature
    Var positive_fine;  // projected positive query, fine space
    Tensor attention;   // word attention weights (when the fine stage ran)

    Var ce;                       // classifier cross-entropy against gt_category
    int predicted_category = -1;  // classifier argmax
};

namespace detail {

inline std::size_t argmax_plain(const std::vector<double>& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

// positions of q_o sorted by the given score descending, query-index ties
// ascending, truncated to k
inline std::vector<std::size_t> top_k_positions(const std::vector<ScoreRecord>& records,
                                                const std::vector<double>& score, std::size_t k) {
    std::vector<std::size_t> pos(records.size());
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
    std::sort(pos.begin(), pos.end(), [&](std::size_t a, std::size_t b) {
        if (score[a] != score[b]) return score[a] > score[b];
        return records[a].query_index < records[b].query_index;
    });
    pos.resize(std::min(k, pos.size()));
    return pos;
}

}  // namespace detail

// Classifier logits for the global text feature; plain affine into C scores.
inline Var classifier_logits(Tape& t, const BoundParams& p, const Tensor& f_t) {
    return t.add(t.vecmat(t.constant(f_t), p.cls_w), p.cls_b);
}

// Softmax cross-entropy of the logits against the true category, plus the
// argmax prediction.
struct ClassifierResult {
    Var loss;
    int predicted = -1;
};

inline ClassifierResult text_classifier_loss(Tape& t, const BoundParams& p, const Tensor& f_t,
                                             int c_star) {
    std::size_t c = p.cls_b.value().size();
    if (c_star < 0 || static_cast<std::size_t>(c_star) >= c)
        throw std::invalid_argument("text_classifier_loss: category " + std::to_string(c_star) +
                                    " outside [0," + std::to_string(c) + ")");
    Var logits = classifier_logits(t, p, f_t);
    ClassifierResult out;
    out.loss = t.sub(t.logsumexp(logits), t.at(logits, static_cast<std::size_t>(c_star)));
    const Tensor& v = logits.value();
    out.predicted = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[static_cast<std::size_t>(out.predicted)]) out.predicted = static_cast<int>(i);
    return out;
}

// Full forward pass for one sample. cat_source is the resolved source for
// this call (training and inference callers pass their own); extra_negatives
// supplies other images' raw query features for the cross-image pools.
// Callers that only need the selected query can skip negative mining.
inline SampleRun run_sample(Tape& t, const BoundParams& p, const FeatureBundle& b,
                            const PipelineConfig& cfg, CategorySource cat_source,
                            const std::vector<Tensor>* extra_negatives = nullptr,
                            bool with_negatives = true) {
    cfg.validate();
    const std::size_t categories = p.cls_b.value().size();
    SampleRun run;

    ClassifierResult cls = text_classifier_loss(t, p, b.text.global, b.gt_category);
    run.ce = cls.loss;
    run.predicted_category = cls.predicted;

    run.q_o = confidence_filter(b, cfg.selection.max_candidates);

    std::optional<int> target;
    if (uses_class(cfg.formula) && cat_source != CategorySource::none)
        target = cat_source == CategorySource::gt ? b.gt_category : cls.predicted;

    CoarseResult coarse = coarse_scores(t, b, run.q_o, p, cfg.selection.alpha, target,
                                        static_cast<int>(categories));
    run.records = std::move(coarse.records);
    run.text_coarse = coarse.text;

    // fine text side, shared by every formula that scores in the fine space
    FineText ft;
    if (uses_fine(cfg.formula)) {
        ft = fine_text(t, p, b.text.words);
        run.fine_ran = true;
        run.text_fine = ft.embedding;
        run.attention = ft.weights.value();
    }

    // refined selection
    std::vector<std::size_t> refined_pos;  // positions within q_o
    if (cfg.formula == ScoreFormula::fine_then_coarse) {
        std::vector<Tensor> feats;
        for (std::size_t i : run.q_o) feats.push_back(b.queries[i].feature);
        FineScores all = fine_scores(t, p, feats, run.text_fine);
        std::vector<double> s(all.scores.size());
        for (std::size_t j = 0; j < s.size(); ++j) {
            s[j] = all.scores[j].value().item();
            run.records[j].s_fine = s[j];
        }
        refined_pos = detail::top_k_positions(run.records, s, cfg.selection.max_refined);
    } else {
        std::vector<std::size_t> order = select_refined(run.records, cfg.selection);
        for (std::size_t qi : order) {
            for (std::size_t j = 0; j < run.q_o.size(); ++j)
                if (run.q_o[j] == qi) refined_pos.push_back(j);
        }
    }
    for (std::size_t j : refined_pos) run.refined.push_back(run.q_o[j]);

    // final pick
    std::vector<double> final_scores(refined_pos.size());
    if (cfg.formula == ScoreFormula::global_only) {
        for (std::size_t i = 0; i < refined_pos.size(); ++i)
            final_scores[i] = run.records[refined_pos[i]].s_global;
    } else if (cfg.formula == ScoreFormula::global_class ||
               cfg.formula == ScoreFormula::fine_then_coarse) {
        for (std::size_t i = 0; i < refined_pos.size(); ++i)
            final_scores[i] = run.records[refined_pos[i]].s_coarse;
    } else {  // global_fine, full
        std::vector<Tensor> feats;
        for (std::size_t j : refined_pos) feats.push_back(b.queries[run.q_o[j]].feature);
        FineScores fs = fine_scores(t, p, feats, run.text_fine);
        for (std::size_t i = 0; i < refined_pos.size(); ++i) {
            final_scores[i] = fs.scores[i].value().item();
            run.records[refined_pos[i]].s_fine = final_scores[i];
        }
    }
    run.q_star = select_positive(run.refined, final_scores);

    std::size_t star_pos = 0;  // position within q_o
    for (std::size_t j = 0; j < run.q_o.size(); ++j)
        if (run.q_o[j] == run.q_star) star_pos = j;
    run.positive_coarse = coarse.queries[star_pos];
    if (run.fine_ran) {
        run.positive_fine = fine_query(t, p, b.queries[run.q_star].feature);
    }

    // --- negative mining ---
    if (!with_negatives) return run;
    NegativeSpace space = cfg.selection.negative_space;
    const std::size_t d_v = b.queries.empty() ? 0 : b.queries.front().feature.size();
    if (space == NegativeSpace::auto_select)
        space = d_v == b.text.global.size() ? NegativeSpace::raw : NegativeSpace::coarse;
    if (space == NegativeSpace::raw && d_v != b.text.global.size())
        throw std::invalid_argument(
            "negative mining: raw similarity needs matching query/text widths, have " +
            std::to_string(d_v) + " vs " + std::to_string(b.text.global.size()));

    struct PoolEntry {
        bool external;
        std::size_t pos;  // q_o position, or index into extra_negatives
    };
    std::vector<PoolEntry> entries;
    std::vector<Tensor> pool_feats;
    std::vector<Var> ext_coarse;

    bool use_own = cfg.selection.negative_pool != NegativePool::cross_batch;
    bool use_ext = cfg.selection.negative_pool != NegativePool::in_image;
    if (use_own) {
        for (std::size_t j = 0; j < run.q_o.size(); ++j) {
            if (run.q_o[j] == run.q_star) continue;
            entries.push_back({false, j});
            pool_feats.push_back(space == NegativeSpace::raw ? b.queries[run.q_o[j]].feature
                                                             : coarse.queries[j].value());
        }
    }
    if (use_ext && extra_negatives) {
        for (std::size_t e = 0; e < extra_negatives->size(); ++e) {
            Var emb = affine(t, t.constant((*extra_negatives)[e]), p.coarse_w_q, p.coarse_b_q);
            ext_coarse.push_back(emb);
            entries.push_back({true, e});
            pool_feats.push_back(space == NegativeSpace::raw ? (*extra_negatives)[e]
                                                             : emb.value());
        }
    }
    const Tensor& sim_text =
        space == NegativeSpace::raw ? b.text.global : run.text_coarse.value();

    for (const NegativePick& pick : greedy_negatives(pool_feats, sim_text, cfg.selection.n_neg)) {
        const PoolEntry& ent = entries[pick.pool_pos];
        ChosenNegative neg;
        if (ent.external) {
            neg.coarse_emb = ext_coarse[ent.pos];
            if (run.fine_ran) neg.fine_emb = fine_query(t, p, (*extra_negatives)[ent.pos]);
        } else {
            ScoreRecord& rec = run.records[ent.pos];
            rec.s_d = pick.s_d;
            rec.s_u = pick.s_u;
            rec.s_q = pick.s_q;
            neg.query_index = rec.query_index;
            neg.coarse_emb = coarse.queries[ent.pos];
            if (run.fine_ran) neg.fine_emb = fine_query(t, p, b.queries[rec.query_index].feature);
        }
        run.negatives.push_back(neg);
    }
    return run;
}

// Fraction of samples whose text is classified into its true category.
inline double classifier_accuracy(const std::vector<FeatureBundle>& bundles,
                                  const ModelParams& params) {
    if (bundles.empty()) return 0.0;
    std::size_t hits = 0;
    for (const FeatureBundle& b : bundles) {
        Tape t;
        BoundParams bp = bind_params(t, params);
        ClassifierResult r = text_classifier_loss(t, bp, b.text.global, b.gt_category);
        if (r.predicted == b.gt_category) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(bundles.size());
}

// Fraction of samples whose selected query matches the planted answer.
inline double selection_accuracy(const std::vector<FeatureBundle>& bundles,
                                 const ModelParams& params, const PipelineConfig& cfg,
                                 CategorySource cat_source,
                                 const std::map<std::string, std::size_t>& answer_key) {
    if (bundles.empty()) return 0.0;
    std::size_t hits = 0;
    for (const FeatureBundle& b : bundles) {
        Tape t;
        BoundParams bp = bind_params(t, params);
        SampleRun run = run_sample(t, bp, b, cfg, cat_source, nullptr, false);
        auto it = answer_key.find(b.sample_id);
        if (it != answer_key.end() && run.q_star == it->second) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(bundles.size());
}

}  // namespace aligncat
