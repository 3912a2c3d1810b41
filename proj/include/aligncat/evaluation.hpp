#pragma once
// Inference-side metrics: region overlap, the grounding lookup, and
// split-level reports with per-sample drill-down.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "aligncat/data.hpp"
#include "aligncat/pipeline.hpp"

namespace aligncat {

enum class EvalMode { rec, res };

inline const char* eval_mode_name(EvalMode m) { return m == EvalMode::rec ? "rec" : "res"; }

inline EvalMode eval_mode_from(const std::string& s) {
    if (s == "rec") return EvalMode::rec;
    if (s == "res") return EvalMode::res;
    throw std::invalid_argument("eval mode: expected rec|res, found \"" + s + "\"");
}

// The detector head upstream is frozen, so grounding a chosen query is a
// verbatim lookup of the region it arrived with.
inline const Region& grounding_head(const VisualQuery& q) { return q.region; }

// Boxes are continuous rectangles: area (x2-x1)*(y2-y1), zero overlap -> 0.
// Masks are binary grids over a shared frame: |A and B| / |A or B|, and two
// all-empty masks agree perfectly -> 1.
inline double iou(const Region& a, const Region& b) {
    if (a.kind != b.kind) throw std::invalid_argument("iou: region kinds differ");
    if (a.kind == RegionKind::box) {
        const double ix1 = std::max(a.box[0], b.box[0]);
        const double iy1 = std::max(a.box[1], b.box[1]);
        const double ix2 = std::min(a.box[2], b.box[2]);
        const double iy2 = std::min(a.box[3], b.box[3]);
        const double iw = ix2 - ix1;
        const double ih = iy2 - iy1;
        if (iw <= 0.0 || ih <= 0.0) return 0.0;
        const double inter = iw * ih;
        const double area_a = (a.box[2] - a.box[0]) * (a.box[3] - a.box[1]);
        const double area_b = (b.box[2] - b.box[0]) * (b.box[3] - b.box[1]);
        const double uni = area_a + area_b - inter;
        return uni > 0.0 ? inter / uni : 0.0;
    }
    if (a.mask.size() != b.mask.size())
        throw std::invalid_argument("iou: mask frames differ in height");
    std::size_t inter = 0;
    std::size_t uni = 0;
    for (std::size_t r = 0; r < a.mask.size(); ++r) {
        if (a.mask[r].size() != b.mask[r].size())
            throw std::invalid_argument("iou: mask frames differ in width");
        for (std::size_t c = 0; c < a.mask[r].size(); ++c) {
            const bool pa = a.mask[r][c] != 0;
            const bool pb = b.mask[r][c] != 0;
            inter += pa && pb;
            uni += pa || pb;
        }
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

struct SampleEval {
    std::string sample_id;
    std::size_t q_star = 0;
    double iou = 0.0;
    bool hit = false;                  // iou above the threshold
    bool refined_hit = false;          // some refined query clears the threshold
    std::size_t retained = 0;          // candidates whose class indicator fired
    std::size_t retained_correct = 0;  // ... of those, how many clear the threshold
    double s_coarse = 0.0;             // scores of the chosen query
    std::optional<double> s_fine;
    int predicted_category = 0;
};

struct EvalReport {
    std::string split = "all";
    EvalMode mode = EvalMode::rec;
    double threshold = 0.5;
    std::size_t n_samples = 0;
    bool defined = false;  // an empty split yields no meaningful metrics
    double rec_accuracy = 0.0;
    double mean_iou = 0.0;
    double category_precision = 0.0;  // correct retained / all retained, whole split
    double refined_hit_rate = 0.0;
    std::vector<SampleEval> per_sample;
};

// Runs the full inference pipeline sample by sample (no negative mining) and
// scores the grounded region against the ground truth. Parameters are taken
// by const reference and copied onto a throwaway tape per sample, so two
// consecutive calls see identical weights and produce identical reports.
inline EvalReport evaluate(const std::vector<FeatureBundle>& dataset,
                           const ModelParams& params,
                           const PipelineConfig& cfg,
                           CategorySource infer_source,
                           EvalMode mode,
                           std::optional<Split> split = std::nullopt,
                           double threshold = 0.5) {
    if (!(threshold >= 0.0 && threshold < 1.0))
        throw std::invalid_argument("evaluate: threshold must lie in [0, 1)");
    EvalReport rep;
    rep.mode = mode;
    rep.threshold = threshold;
    rep.split = split ? split_name(*split) : "all";

    double iou_sum = 0.0;
    std::size_t hits = 0;
    std::size_t refined_hits = 0;
    std::size_t retained_total = 0;
    std::size_t retained_correct_total = 0;

    for (const FeatureBundle& b : dataset) {
        if (split && b.split != *split) continue;
        Tape t;
        BoundParams bp = bind_params(t, params);
        SampleRun run = run_sample(t, bp, b, cfg, infer_source, nullptr, false);

        SampleEval se;
        se.sample_id = b.sample_id;
        se.q_star = run.q_star;
        se.predicted_category = run.predicted_category;
        se.iou = iou(grounding_head(b.queries[run.q_star]), b.gt_region);
        se.hit = se.iou > threshold;

        for (const ScoreRecord& r : run.records) {
            if (r.query_index == run.q_star) {
                se.s_coarse = r.s_coarse;
                se.s_fine = r.s_fine;
            }
            if (r.s_class == 1) {
                ++se.retained;
                if (iou(grounding_head(b.queries[r.query_index]), b.gt_region) > threshold)
                    ++se.retained_correct;
            }
        }
        for (std::size_t qi : run.refined) {
            if (iou(grounding_head(b.queries[qi]), b.gt_region) > threshold) {
                se.refined_hit = true;
                break;
            }
        }

        iou_sum += se.iou;
        hits += se.hit;
        refined_hits += se.refined_hit;
        retained_total += se.retained;
        retained_correct_total += se.retained_correct;
        rep.per_sample.push_back(std::move(se));
    }

    rep.n_samples = rep.per_sample.size();
    if (rep.n_samples == 0) return rep;
    rep.defined = true;
    const double n = static_cast<double>(rep.n_samples);
    rep.rec_accuracy = static_cast<double>(hits) / n;
    rep.mean_iou = iou_sum / n;
    rep.refined_hit_rate = static_cast<double>(refined_hits) / n;
    rep.category_precision =
        retained_total == 0
            ? 0.0
            : static_cast<double>(retained_correct_total) / static_cast<double>(retained_total);
    return rep;
}

}  // namespace aligncat
