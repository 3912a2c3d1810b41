#pragma once

// Weakly supervised training: dual-space contrastive loss over mined
// negatives, classifier cross-entropy with an exponentially decaying weight,
// the batched epoch loop, and resume-exact checkpointing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "aligncat/adam.hpp"
#include "aligncat/pipeline.hpp"

namespace aligncat {

// Contrastive pull of one positive against a set of negatives:
// -log( exp(s+/τ) / (exp(s+/τ) + Σ exp(s-/τ)) ), stabilized through the
// shared log-sum-exp.
inline Var infonce(Tape& t, Var h_t, Var h_pos, const std::vector<Var>& h_negs, double tau) {
    if (tau <= 0.0) throw std::invalid_argument("infonce: temperature must be positive");
    if (h_negs.empty()) throw std::invalid_argument("infonce: at least one negative required");
    double inv = 1.0 / tau;
    Var s_pos = t.affine_const(t.dot(h_t, h_pos), inv, 0.0);
    std::vector<Var> sims = {s_pos};
    for (const Var& n : h_negs) sims.push_back(t.affine_const(t.dot(h_t, n), inv, 0.0));
    return t.sub(t.logsumexp(t.stack(sims)), s_pos);
}

// Batch-mean contrastive loss, coarse and fine space summed per sample. The
// fine term joins only for runs whose formula exercised the fine stage.
inline Var total_contrastive(Tape& t, const std::vector<SampleRun>& runs, double tau) {
    if (runs.empty()) throw std::invalid_argument("total_contrastive: empty batch");
    std::vector<Var> per_sample;
    for (const SampleRun& run : runs) {
        if (run.negatives.empty())
            throw std::invalid_argument("total_contrastive: sample has no mined negatives");
        std::vector<Var> coarse_negs, fine_negs;
        for (const ChosenNegative& n : run.negatives) {
            coarse_negs.push_back(n.coarse_emb);
            if (run.fine_ran) fine_negs.push_back(n.fine_emb);
        }
        Var loss = infonce(t, run.text_coarse, run.positive_coarse, coarse_negs, tau);
        if (run.fine_ran)
            loss = t.add(loss, infonce(t, run.text_fine, run.positive_fine, fine_negs, tau));
        per_sample.push_back(loss);
    }
    Var sum = t.add_n(per_sample);
    return t.affine_const(sum, 1.0 / static_cast<double>(per_sample.size()), 0.0);
}

struct LossSchedule {
    double lambda1 = 1.0;
    double lambda2_0 = 5.0;
    double gamma = 0.3;  // per-epoch decay of the classifier weight
    double tau = 0.1;    // contrastive temperature

    double lambda2(std::size_t epoch) const {
        return lambda2_0 * std::exp(-gamma * static_cast<double>(epoch));
    }

    void validate() const {
        if (tau <= 0.0) throw std::invalid_argument("schedule: tau must be positive");
        if (lambda1 < 0.0) throw std::invalid_argument("schedule: lambda1 must be nonnegative");
        if (lambda2_0 <= 0.0) throw std::invalid_argument("schedule: lambda2_0 must be positive");
        if (gamma <= 0.0) throw std::invalid_argument("schedule: gamma must be positive");
    }
};

struct TrainConfig {
    AdamConfig adam;
    std::size_t epochs = 25;
    std::size_t batch_size = 14;
    std::uint64_t seed = 7;
    LossSchedule schedule;
    PipelineConfig pipeline;

    void validate() const {
        if (batch_size < 1) throw std::invalid_argument("training: batch_size must be positive");
        schedule.validate();
        pipeline.validate();
    }
};

// The classifier term trains only when some phase will consume predictions.
inline bool classifier_active(const PipelineConfig& cfg) {
    return uses_class(cfg.formula) && (cfg.train_category == CategorySource::predicted ||
                                       cfg.infer_category == CategorySource::predicted);
}

struct EpochMetrics {
    std::size_t epoch = 0;
    double l_cl = 0.0;      // mean contrastive loss over samples
    double l_ce = 0.0;      // mean classifier loss over samples
    double lambda2 = 0.0;   // classifier weight used this epoch
    double accuracy = 0.0;  // planted-answer selection accuracy, when key given
    bool has_accuracy = false;
};

// Sample visit order for one epoch: a pure function of (seed, epoch), so a
// resumed run shuffles identically without carrying stream state.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed,
                                            std::size_t epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + 0x1000003ull * (epoch + 1));
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

// One pass over the dataset: shuffle, batch, forward, backward, Adam.
inline EpochMetrics train_epoch(const std::vector<FeatureBundle>& dataset, ModelParams& params,
                                AdamState& state, const TrainConfig& cfg, std::size_t epoch,
                                const std::map<std::string, std::size_t>* answer_key = nullptr) {
    cfg.validate();
    if (dataset.empty()) throw std::invalid_argument("train_epoch: empty dataset");

    EpochMetrics metrics;
    metrics.epoch = epoch;
    metrics.lambda2 = cfg.schedule.lambda2(epoch);
    bool want_ce = classifier_active(cfg.pipeline);
    bool cross = cfg.pipeline.selection.negative_pool != NegativePool::in_image;

    std::vector<std::size_t> order = epoch_order(dataset.size(), cfg.seed, epoch);
    double sum_cl = 0.0, sum_ce = 0.0;
    std::size_t hits = 0, counted = 0;

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        std::size_t end = std::min(order.size(), start + cfg.batch_size);
        std::size_t batch_id = start / cfg.batch_size;

        // other batch members' filtered raw query features, for cross pools
        std::vector<std::vector<Tensor>> own_feats(end - start);
        if (cross) {
            for (std::size_t k = start; k < end; ++k) {
                const FeatureBundle& b = dataset[order[k]];
                for (std::size_t qi : confidence_filter(b, cfg.pipeline.selection.max_candidates))
                    own_feats[k - start].push_back(b.queries[qi].feature);
            }
        }

        Tape t;
        BoundParams bp = bind_params(t, params);
        std::vector<SampleRun> runs;
        std::vector<Var> ce_terms;
        try {
            for (std::size_t k = start; k < end; ++k) {
                const FeatureBundle& b = dataset[order[k]];
                std::vector<Tensor> extra;
                if (cross) {
                    for (std::size_t j = 0; j < own_feats.size(); ++j) {
                        if (j == k - start) continue;
                        extra.insert(extra.end(), own_feats[j].begin(), own_feats[j].end());
                    }
                }
                SampleRun run = run_sample(t, bp, b, cfg.pipeline, cfg.pipeline.train_category,
                                           cross ? &extra : nullptr);
                ce_terms.push_back(run.ce);
                if (answer_key) {
                    auto it = answer_key->find(b.sample_id);
                    if (it != answer_key->end()) {
                        ++counted;
                        if (run.q_star == it->second) ++hits;
                    }
                }
                runs.push_back(std::move(run));
            }
        } catch (const numeric_error& e) {
            throw numeric_error("batch " + std::to_string(batch_id) + ": " + e.what());
        }

        Var l_cl = total_contrastive(t, runs, cfg.schedule.tau);
        Var l_ce = t.affine_const(t.add_n(ce_terms), 1.0 / static_cast<double>(ce_terms.size()),
                                  0.0);
        Var loss = t.affine_const(l_cl, cfg.schedule.lambda1, 0.0);
        if (want_ce) loss = t.add(loss, t.affine_const(l_ce, metrics.lambda2, 0.0));

        double cl_val = l_cl.value().item();
        double ce_val = l_ce.value().item();
        if (!std::isfinite(cl_val) || !std::isfinite(ce_val) || !std::isfinite(loss.value().item()))
            throw numeric_error("batch " + std::to_string(batch_id) +
                                ": non-finite loss (contrastive=" + std::to_string(cl_val) +
                                ", classifier=" + std::to_string(ce_val) + ")");

        t.backward(loss);
        std::vector<Tensor> grads = collect_grads(t, bp);
        adam_step(params.tensors(), grads, state, cfg.adam);

        double n = static_cast<double>(end - start);
        sum_cl += cl_val * n;
        sum_ce += ce_val * n;
    }

    double total = static_cast<double>(dataset.size());
    metrics.l_cl = sum_cl / total;
    metrics.l_ce = sum_ce / total;
    if (answer_key && counted > 0) {
        metrics.accuracy = static_cast<double>(hits) / static_cast<double>(counted);
        metrics.has_accuracy = true;
    }
    return metrics;
}

// --- checkpointing ---

struct Checkpoint {
    ModelDims dims;
    ModelParams params;
    AdamState adam;
    std::size_t epoch = 0;  // epochs already completed
    std::uint64_t seed = 7;
    std::uint64_t config_hash = 0;
};

// A checkpoint file that cannot be used with the active configuration:
// missing, malformed, or produced under a different setup.
struct checkpoint_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline nlohmann::json tensor_to_json(const Tensor& t) {
    nlohmann::json j;
    j["shape"] = t.shape();
    j["data"] = t.data();
    return j;
}

inline Tensor tensor_from_json(const nlohmann::json& j, const std::string& where) {
    if (!j.is_object() || !j.contains("shape") || !j.contains("data"))
        throw checkpoint_error("checkpoint: " + where + " is not a tensor object");
    std::vector<std::size_t> shape = j.at("shape").get<std::vector<std::size_t>>();
    std::vector<double> data = j.at("data").get<std::vector<double>>();
    Tensor out{shape};
    if (out.size() != data.size())
        throw checkpoint_error("checkpoint: " + where + " shape disagrees with data length");
    for (std::size_t i = 0; i < data.size(); ++i) out[i] = data[i];
    return out;
}

inline std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace detail

inline constexpr const char* kCheckpointFormat = "aligncat-checkpoint-v1";

inline void save_checkpoint(std::ostream& out, const Checkpoint& cp) {
    nlohmann::json j;
    j["format"] = kCheckpointFormat;
    j["config_hash"] = detail::hash_hex(cp.config_hash);
    j["epoch"] = cp.epoch;
    j["seed"] = cp.seed;
    j["dims"] = {{"d_v", cp.dims.d_v},
                 {"d_t", cp.dims.d_t},
                 {"d_s", cp.dims.d_s},
                 {"categories", cp.dims.categories}};
    nlohmann::json params = nlohmann::json::object();
    cp.params.for_each(
        [&](const char* name, const Tensor& t) { params[name] = detail::tensor_to_json(t); });
    j["params"] = std::move(params);
    nlohmann::json adam;
    adam["step"] = cp.adam.step;
    adam["m"] = nlohmann::json::array();
    adam["v"] = nlohmann::json::array();
    for (const Tensor& t : cp.adam.m) adam["m"].push_back(detail::tensor_to_json(t));
    for (const Tensor& t : cp.adam.v) adam["v"].push_back(detail::tensor_to_json(t));
    j["adam"] = std::move(adam);
    out << j.dump() << "\n";
    if (!out) throw std::runtime_error("checkpoint: write failed");
}

inline void save_checkpoint(const std::string& path, const Checkpoint& cp) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    save_checkpoint(f, cp);
}

// The caller passes the hash of its active config; a stored hash that
// differs means the checkpoint belongs to another setup and is refused.
inline Checkpoint load_checkpoint(std::istream& in, const std::string& name,
                                  std::uint64_t expected_hash) {
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw checkpoint_error("checkpoint: " + name + " is not valid JSON: " + e.what());
    }
    if (!j.is_object() || j.value("format", "") != kCheckpointFormat)
        throw checkpoint_error("checkpoint: " + name + " has no " +
                                 std::string(kCheckpointFormat) + " format tag");
    try {
        Checkpoint cp;
        std::string stored = j.at("config_hash").get<std::string>();
        if (stored != detail::hash_hex(expected_hash))
            throw checkpoint_error("checkpoint: " + name + " was produced under config hash " +
                                     stored + " but the active config hashes to " +
                                     detail::hash_hex(expected_hash));
        cp.config_hash = expected_hash;
        cp.epoch = j.at("epoch").get<std::size_t>();
        cp.seed = j.at("seed").get<std::uint64_t>();
        const nlohmann::json& d = j.at("dims");
        cp.dims.d_v = d.at("d_v").get<std::size_t>();
        cp.dims.d_t = d.at("d_t").get<std::size_t>();
        cp.dims.d_s = d.at("d_s").get<std::size_t>();
        cp.dims.categories = d.at("categories").get<int>();
        cp.dims.validate();

        cp.params = init_params(cp.dims, cp.seed);
        const nlohmann::json& pj = j.at("params");
        cp.params.for_each([&](const char* pname, Tensor& t) {
            if (!pj.contains(pname))
                throw checkpoint_error("checkpoint: " + name + " is missing parameter " +
                                         pname);
            Tensor loaded = detail::tensor_from_json(pj.at(pname), pname);
            if (!loaded.same_shape(t))
                throw checkpoint_error("checkpoint: parameter " + std::string(pname) +
                                         " has shape " + shape_str(loaded.shape()) +
                                         ", expected " + shape_str(t.shape()));
            t = std::move(loaded);
        });

        const nlohmann::json& aj = j.at("adam");
        cp.adam.step = aj.at("step").get<std::size_t>();
        for (std::size_t i = 0; i < aj.at("m").size(); ++i)
            cp.adam.m.push_back(detail::tensor_from_json(aj.at("m")[i], "adam.m"));
        for (std::size_t i = 0; i < aj.at("v").size(); ++i)
            cp.adam.v.push_back(detail::tensor_from_json(aj.at("v")[i], "adam.v"));
        return cp;
    } catch (const nlohmann::json::exception& e) {
        throw checkpoint_error("checkpoint: " + name + " is malformed: " + e.what());
    }
}

inline Checkpoint load_checkpoint(const std::string& path, std::uint64_t expected_hash) {
    std::ifstream f(path);
    if (!f) throw checkpoint_error("checkpoint: cannot open " + path);
    return load_checkpoint(f, path, expected_hash);
}

}  // namespace aligncat
