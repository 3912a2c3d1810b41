#pragma once
// One declarative run document covering model dims, selection, scoring,
// training, and dataset paths. Keys are checked strictly — a typo'd or
// unknown key is an error, not a silent default — and the semantic part of
// the document (everything except where files live) has a canonical hash so
// artifacts from different runs can refuse to mix.

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

#include <json.hpp>

#include "aligncat/model.hpp"
#include "aligncat/training.hpp"

namespace aligncat {

struct config_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataPaths {
    std::string dir = "data";
    std::string train = "train.ndjson";
    std::string val = "val.ndjson";
    std::string test = "test.ndjson";
    std::string answers = "answers.json";

    std::string resolve(const std::string& leaf) const {
        if (leaf.empty() || dir.empty() || leaf.front() == '/') return leaf;
        return dir + "/" + leaf;
    }
};

struct RunConfig {
    ModelDims dims;
    TrainConfig training;  // carries adam, schedule, and the pipeline config
    DataPaths data;

    PipelineConfig& pipeline() { return training.pipeline; }
    const PipelineConfig& pipeline() const { return training.pipeline; }
    SelectionConfig& selection() { return training.pipeline.selection; }
    const SelectionConfig& selection() const { return training.pipeline.selection; }

    void validate() const {
        dims.validate();
        training.validate();
        if (training.pipeline.selection.n_neg < 1)
            throw config_error("config: n_neg must be positive");
    }
};

namespace detail {

inline void expect_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                        const std::string& where) {
    if (!j.is_object()) throw config_error("config: " + where + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                known = true;
                break;
            }
        if (!known)
            throw config_error("config: unknown key \"" + it.key() + "\" in " + where);
    }
}

template <typename T>
void read_field(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw config_error("config: " + where + "." + key + " has the wrong type");
    }
}

template <typename Enum, typename From>
void read_enum(const nlohmann::json& j, const char* key, Enum& out, From from,
               const std::string& where) {
    if (!j.contains(key)) return;
    std::string s;
    read_field(j, key, s, where);
    try {
        out = from(s);
    } catch (const std::exception& e) {
        throw config_error("config: " + where + "." + key + ": " + e.what());
    }
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
    detail::expect_keys(j, {"model", "selection", "pipeline", "training", "data"}, "top level");
    RunConfig c;

    if (j.contains("model")) {
        const auto& m = j.at("model");
        detail::expect_keys(m, {"d_v", "d_t", "d_s", "categories"}, "model");
        detail::read_field(m, "d_v", c.dims.d_v, "model");
        detail::read_field(m, "d_t", c.dims.d_t, "model");
        detail::read_field(m, "d_s", c.dims.d_s, "model");
        detail::read_field(m, "categories", c.dims.categories, "model");
    }
    if (j.contains("selection")) {
        const auto& s = j.at("selection");
        detail::expect_keys(s,
                            {"max_candidates", "max_refined", "alpha", "n_neg", "negative_pool",
                             "negative_space"},
                            "selection");
        SelectionConfig& sel = c.selection();
        detail::read_field(s, "max_candidates", sel.max_candidates, "selection");
        detail::read_field(s, "max_refined", sel.max_refined, "selection");
        detail::read_field(s, "alpha", sel.alpha, "selection");
        detail::read_field(s, "n_neg", sel.n_neg, "selection");
        detail::read_enum(s, "negative_pool", sel.negative_pool, negative_pool_from, "selection");
        detail::read_enum(s, "negative_space", sel.negative_space, negative_space_from,
                          "selection");
    }
    if (j.contains("pipeline")) {
        const auto& p = j.at("pipeline");
        detail::expect_keys(p, {"formula", "train_category", "infer_category"}, "pipeline");
        PipelineConfig& pipe = c.pipeline();
        detail::read_enum(p, "formula", pipe.formula, formula_from, "pipeline");
        detail::read_enum(p, "train_category", pipe.train_category, category_source_from,
                          "pipeline");
        detail::read_enum(p, "infer_category", pipe.infer_category, category_source_from,
                          "pipeline");
    }
    if (j.contains("training")) {
        const auto& t = j.at("training");
        detail::expect_keys(t,
                            {"epochs", "batch_size", "seed", "lr", "beta1", "beta2", "eps",
                             "lambda1", "lambda2_0", "gamma", "tau"},
                            "training");
        detail::read_field(t, "epochs", c.training.epochs, "training");
        detail::read_field(t, "batch_size", c.training.batch_size, "training");
        detail::read_field(t, "seed", c.training.seed, "training");
        detail::read_field(t, "lr", c.training.adam.lr, "training");
        detail::read_field(t, "beta1", c.training.adam.beta1, "training");
        detail::read_field(t, "beta2", c.training.adam.beta2, "training");
        detail::read_field(t, "eps", c.training.adam.eps, "training");
        detail::read_field(t, "lambda1", c.training.schedule.lambda1, "training");
        detail::read_field(t, "lambda2_0", c.training.schedule.lambda2_0, "training");
        detail::read_field(t, "gamma", c.training.schedule.gamma, "training");
        detail::read_field(t, "tau", c.training.schedule.tau, "training");
    }
    if (j.contains("data")) {
        const auto& d = j.at("data");
        detail::expect_keys(d, {"dir", "train", "val", "test", "answers"}, "data");
        detail::read_field(d, "dir", c.data.dir, "data");
        detail::read_field(d, "train", c.data.train, "data");
        detail::read_field(d, "val", c.data.val, "data");
        detail::read_field(d, "test", c.data.test, "data");
        detail::read_field(d, "answers", c.data.answers, "data");
    }

    try {
        c.validate();
    } catch (const config_error&) {
        throw;
    } catch (const std::exception& e) {
        throw config_error(std::string("config: ") + e.what());
    }
    return c;
}

inline RunConfig parse_run_config(const std::string& text, const std::string& name) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw config_error("config: " + name + " is not valid JSON: " + e.what());
    }
    return parse_run_config(j);
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw config_error("config: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str(), path);
}

// Full round-trippable document with every field spelled out, so the dump
// does not depend on which keys the source file happened to mention.
inline nlohmann::json config_to_json(const RunConfig& c) {
    nlohmann::json j;
    j["model"] = {{"d_v", c.dims.d_v},
                  {"d_t", c.dims.d_t},
                  {"d_s", c.dims.d_s},
                  {"categories", c.dims.categories}};
    const SelectionConfig& s = c.selection();
    j["selection"] = {{"max_candidates", s.max_candidates},
                      {"max_refined", s.max_refined},
                      {"alpha", s.alpha},
                      {"n_neg", s.n_neg},
                      {"negative_pool", negative_pool_name(s.negative_pool)},
                      {"negative_space", negative_space_name(s.negative_space)}};
    const PipelineConfig& p = c.pipeline();
    j["pipeline"] = {{"formula", formula_name(p.formula)},
                     {"train_category", category_source_name(p.train_category)},
                     {"infer_category", category_source_name(p.infer_category)}};
    j["training"] = {{"epochs", c.training.epochs},
                     {"batch_size", c.training.batch_size},
                     {"seed", c.training.seed},
                     {"lr", c.training.adam.lr},
                     {"beta1", c.training.adam.beta1},
                     {"beta2", c.training.adam.beta2},
                     {"eps", c.training.adam.eps},
                     {"lambda1", c.training.schedule.lambda1},
                     {"lambda2_0", c.training.schedule.lambda2_0},
                     {"gamma", c.training.schedule.gamma},
                     {"tau", c.training.schedule.tau}};
    j["data"] = {{"dir", c.data.dir},
                 {"train", c.data.train},
                 {"val", c.data.val},
                 {"test", c.data.test},
                 {"answers", c.data.answers}};
    return j;
}

// Hash of what the run computes. Two fields are deliberately excluded: file
// locations (moving a dataset does not change the model, so it must not
// orphan checkpoints) and the epoch budget (a checkpoint already records how
// far it got — training the same setup for longer is a continuation, not a
// different run, or resuming would be impossible). nlohmann::json keeps
// object keys sorted and prints doubles shortest-round-trip, which makes the
// dump canonical.
inline std::uint64_t config_hash(const RunConfig& c) {
    nlohmann::json j = config_to_json(c);
    j.erase("data");
    j["training"].erase("epochs");
    return detail::fnv1a64(j.dump());
}

}  // namespace aligncat
