// aligncat command-line front end.
//
// Subcommands: gen (synthetic datasets), train (contrastive training with
// checkpoints + metrics CSV), select (per-candidate score audit), eval
// (grounding metrics report), ablate (score-formula and alpha sweeps).
//
// Exit codes: 0 success, 2 usage/config/input problems, 3 runtime numeric
// failures (non-finite losses and the like).

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "aligncat/config.hpp"
#include "aligncat/evaluation.hpp"
#include "aligncat/generator.hpp"
#include "aligncat/training.hpp"

namespace fs = std::filesystem;
using namespace aligncat;

namespace {

std::string fmt_g(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_text(const std::string& path, const std::string& body) {
    std::ofstream out(path);
    if (!out) throw config_error("cannot open " + path + " for writing");
    out << body;
    out.flush();
    if (!out) throw std::runtime_error(path + ": write failed");
}

// --- answers files -------------------------------------------------------

constexpr const char* kAnswersFormat = "aligncat-answers-v1";

void save_answers(const std::string& path, const std::map<std::string, std::size_t>& answers,
                  std::uint64_t generator_hash) {
    nlohmann::json j;
    j["format"] = kAnswersFormat;
    j["generator_hash"] = detail::hash_hex(generator_hash);
    j["answers"] = answers;
    write_text(path, j.dump(2) + "\n");
}

std::map<std::string, std::size_t> load_answers(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error(path + ": cannot open");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw data_error(path + ": not valid JSON: " + e.what());
    }
    if (!j.is_object() || j.value("format", "") != kAnswersFormat)
        throw data_error(path + ": not an answers file");
    std::map<std::string, std::size_t> out;
    for (auto it = j.at("answers").begin(); it != j.at("answers").end(); ++it)
        out[it.key()] = it.value().get<std::size_t>();
    return out;
}

// --- dataset plumbing ----------------------------------------------------

std::string split_path(const RunConfig& cfg, Split s) {
    switch (s) {
        case Split::train: return cfg.data.resolve(cfg.data.train);
        case Split::val: return cfg.data.resolve(cfg.data.val);
        default: return cfg.data.resolve(cfg.data.test);
    }
}

void check_dims(const std::vector<FeatureBundle>& bundles, const ModelDims& dims,
                const std::string& name) {
    if (bundles.empty()) return;
    const FeatureBundle& b0 = bundles.front();
    if (b0.queries[0].feature.size() != dims.d_v)
        throw config_error(name + ": visual width " +
                           std::to_string(b0.queries[0].feature.size()) +
                           " does not match configured d_v=" + std::to_string(dims.d_v));
    if (b0.text.global.size() != dims.d_t)
        throw config_error(name + ": text width " + std::to_string(b0.text.global.size()) +
                           " does not match configured d_t=" + std::to_string(dims.d_t));
    for (const FeatureBundle& b : bundles) {
        if (b.gt_category >= dims.categories)
            throw config_error(name + ": " + b.sample_id + " has category " +
                               std::to_string(b.gt_category) + " outside configured range " +
                               std::to_string(dims.categories));
        for (const VisualQuery& q : b.queries)
            if (q.category >= dims.categories)
                throw config_error(name + ": " + b.sample_id + " has a query category " +
                                   std::to_string(q.category) + " outside configured range " +
                                   std::to_string(dims.categories));
    }
}

std::map<std::string, std::size_t> maybe_load_answers(const RunConfig& cfg) {
    const std::string path = cfg.data.resolve(cfg.data.answers);
    if (!fs::exists(path)) return {};
    return load_answers(path);
}

// --- flag overrides ------------------------------------------------------

// One declarative config file, flags win: every field below is applied only
// when the flag was actually passed.
struct Overrides {
    std::size_t epochs = 0, batch = 0, k = 0, o = 0, n_neg = 0;
    std::uint64_t seed = 0;
    double lr = 0, alpha = 0, tau = 0, lambda1 = 0, lambda2_0 = 0, gamma = 0;
    std::string formula, train_cat, infer_cat, neg_pool, neg_space;

    CLI::Option *o_epochs = nullptr, *o_batch = nullptr, *o_k = nullptr, *o_o = nullptr,
                *o_n_neg = nullptr, *o_seed = nullptr, *o_lr = nullptr, *o_alpha = nullptr,
                *o_tau = nullptr, *o_l1 = nullptr, *o_l2 = nullptr, *o_gamma = nullptr,
                *o_formula = nullptr, *o_tcat = nullptr, *o_icat = nullptr, *o_pool = nullptr,
                *o_space = nullptr;

    void add(CLI::App* cmd) {
        o_epochs = cmd->add_option("--epochs", epochs, "training epochs");
        o_batch = cmd->add_option("--batch", batch, "batch size");
        o_seed = cmd->add_option("--seed", seed, "training seed");
        o_lr = cmd->add_option("--lr", lr, "Adam learning rate");
        o_alpha = cmd->add_option("--alpha", alpha, "class-score weight in the coarse stage");
        o_tau = cmd->add_option("--tau", tau, "contrastive temperature");
        o_l1 = cmd->add_option("--lambda1", lambda1, "contrastive loss weight");
        o_l2 = cmd->add_option("--lambda2", lambda2_0, "initial classifier loss weight");
        o_gamma = cmd->add_option("--gamma", gamma, "classifier weight decay rate");
        o_k = cmd->add_option("--refined", k, "refined set size cap");
        o_o = cmd->add_option("--candidates", o, "confidence filter size");
        o_n_neg = cmd->add_option("--negatives", n_neg, "negatives mined per sample");
        o_formula = cmd->add_option("--formula", formula,
                                    "score formula: global_only|global_class|global_fine|"
                                    "fine_then_coarse|full");
        o_tcat = cmd->add_option("--train-cat", train_cat,
                                 "category source during training: none|gt|predicted");
        o_icat = cmd->add_option("--infer-cat", infer_cat,
                                 "category source at inference: none|gt|predicted");
        o_pool = cmd->add_option("--neg-pool", neg_pool,
                                 "negative pool: in_image|cross_batch|both");
        o_space = cmd->add_option("--neg-space", neg_space,
                                  "negative similarity space: raw|coarse|auto");
    }

    void apply(RunConfig& cfg) const {
        if (o_epochs->count()) cfg.training.epochs = epochs;
        if (o_batch->count()) cfg.training.batch_size = batch;
        if (o_seed->count()) cfg.training.seed = seed;
        if (o_lr->count()) cfg.training.adam.lr = lr;
        if (o_tau->count()) cfg.training.schedule.tau = tau;
        if (o_l1->count()) cfg.training.schedule.lambda1 = lambda1;
        if (o_l2->count()) cfg.training.schedule.lambda2_0 = lambda2_0;
        if (o_gamma->count()) cfg.training.schedule.gamma = gamma;
        if (o_alpha->count()) cfg.selection().alpha = alpha;
        if (o_k->count()) cfg.selection().max_refined = k;
        if (o_o->count()) cfg.selection().max_candidates = o;
        if (o_n_neg->count()) cfg.selection().n_neg = n_neg;
        try {
            if (o_formula->count()) cfg.pipeline().formula = formula_from(formula);
            if (o_tcat->count()) cfg.pipeline().train_category = category_source_from(train_cat);
            if (o_icat->count()) cfg.pipeline().infer_category = category_source_from(infer_cat);
            if (o_pool->count()) cfg.selection().negative_pool = negative_pool_from(neg_pool);
            if (o_space->count()) cfg.selection().negative_space = negative_space_from(neg_space);
        } catch (const std::exception& e) {
            throw config_error(std::string("flags: ") + e.what());
        }
        try {
            cfg.validate();
        } catch (const config_error&) {
            throw;
        } catch (const std::exception& e) {
            throw config_error(std::string("flags: ") + e.what());
        }
    }
};

// --- gen -----------------------------------------------------------------

struct GenArgs {
    std::string out = "data";
    std::size_t count = 2000;
    GeneratorSpec spec;
    std::string regime = "mixed";
    std::string regions = "box";
};

nlohmann::json gen_spec_json(const GeneratorSpec& s, std::size_t count) {
    return {{"seed", s.seed},           {"count", count},
            {"queries", s.n_queries},   {"categories", s.categories},
            {"attributes", s.attributes}, {"d_v", s.d_v},
            {"d_t", s.d_t},             {"text_len", s.text_len},
            {"regime", regime_name(s.regime)}, {"noise", s.noise_scale},
            {"regions", s.region_kind == RegionKind::box ? "box" : "mask"}};
}

int run_gen(GenArgs& a) {
    a.spec.regime = regime_from(a.regime);
    if (a.regions == "box")
        a.spec.region_kind = RegionKind::box;
    else if (a.regions == "mask")
        a.spec.region_kind = RegionKind::mask;
    else
        throw config_error("gen: --regions expects box|mask, found \"" + a.regions + "\"");

    GeneratedData data = generate(a.spec, a.count);
    const std::uint64_t gh = detail::fnv1a64(gen_spec_json(a.spec, a.count).dump());

    fs::create_directories(a.out);
    std::map<Split, std::vector<FeatureBundle>> by_split;
    for (FeatureBundle& b : data.bundles) by_split[b.split].push_back(std::move(b));

    for (Split s : {Split::train, Split::val, Split::test}) {
        const std::string path = a.out + "/" + split_name(s) + ".ndjson";
        emit_bundles(by_split[s], path);
        std::printf("%s: %zu samples\n", path.c_str(), by_split[s].size());
    }
    save_answers(a.out + "/answers.json", data.answer_key, gh);
    std::printf("%s/answers.json: %zu entries (generator hash %s)\n", a.out.c_str(),
                data.answer_key.size(), detail::hash_hex(gh).c_str());
    return 0;
}

// --- train ---------------------------------------------------------------

struct TrainArgs {
    std::string config;
    std::string data_dir;
    std::string out = "runs";
    std::string resume;
    Overrides ov;
    CLI::Option* o_data = nullptr;
};

RunConfig load_cli_config(const std::string& path, const std::string& data_dir,
                          const CLI::Option* o_data, const Overrides& ov) {
    RunConfig cfg = load_run_config(path);
    if (o_data && o_data->count()) cfg.data.dir = data_dir;
    ov.apply(cfg);
    return cfg;
}

int run_train(TrainArgs& a) {
    RunConfig cfg = load_cli_config(a.config, a.data_dir, a.o_data, a.ov);
    const std::uint64_t hash = config_hash(cfg);

    std::vector<FeatureBundle> train_set = load_bundles(split_path(cfg, Split::train));
    if (train_set.empty()) throw config_error("train: training split is empty");
    check_dims(train_set, cfg.dims, "train split");

    std::vector<FeatureBundle> val_set;
    const std::string val_path = split_path(cfg, Split::val);
    if (fs::exists(val_path)) {
        val_set = load_bundles(val_path);
        check_dims(val_set, cfg.dims, "val split");
    }
    std::map<std::string, std::size_t> answers = maybe_load_answers(cfg);

    ModelParams params;
    AdamState adam;
    std::size_t start_epoch = 0;
    if (!a.resume.empty()) {
        Checkpoint ck = load_checkpoint(a.resume, hash);
        params = std::move(ck.params);
        adam = std::move(ck.adam);
        start_epoch = ck.epoch;
        std::printf("resumed from %s at epoch %zu\n", a.resume.c_str(), start_epoch);
    } else {
        params = init_params(cfg.dims, cfg.training.seed);
    }

    fs::create_directories(a.out);
    std::ofstream csv(a.out + "/metrics.csv");
    if (!csv) throw config_error("cannot open " + a.out + "/metrics.csv for writing");
    csv << "# config_hash=" << detail::hash_hex(hash) << "\n";
    csv << "epoch,l_cl,l_ce,lambda2,train_acc,val_acc\n";

    auto save = [&](const std::string& leaf, std::size_t done) {
        Checkpoint ck;
        ck.dims = cfg.dims;
        ck.params = params;
        ck.adam = adam;
        ck.epoch = done;
        ck.seed = cfg.training.seed;
        ck.config_hash = hash;
        save_checkpoint(a.out + "/" + leaf, ck);
    };

    const bool have_val = !val_set.empty() && !answers.empty();
    double best_val = -1.0;
    for (std::size_t e = start_epoch; e < cfg.training.epochs; ++e) {
        EpochMetrics m = train_epoch(train_set, params, adam, cfg.training, e,
                                     answers.empty() ? nullptr : &answers);
        std::string train_acc = m.has_accuracy ? fmt_g(m.accuracy) : "";
        std::string val_acc;
        double va = 0.0;
        if (have_val) {
            va = selection_accuracy(val_set, params, cfg.pipeline(),
                                    cfg.pipeline().infer_category, answers);
            val_acc = fmt_g(va);
            if (va > best_val) {
                best_val = va;
                save("best.ckpt.json", e + 1);
            }
        }
        csv << e << ',' << fmt_g(m.l_cl) << ',' << fmt_g(m.l_ce) << ',' << fmt_g(m.lambda2)
            << ',' << train_acc << ',' << val_acc << '\n';
        csv.flush();
        save("last.ckpt.json", e + 1);
        std::printf("epoch %zu: l_cl=%.6f l_ce=%.6f lambda2=%.4f", e, m.l_cl, m.l_ce, m.lambda2);
        if (!train_acc.empty()) std::printf(" train_acc=%.4f", m.accuracy);
        if (have_val) std::printf(" val_acc=%.4f", va);
        std::printf("\n");
    }
    const bool ran_epochs = start_epoch < cfg.training.epochs;
    if (!ran_epochs) {
        // nothing left to train: persist the parameters as they stand, but
        // never clobber a best checkpoint from the run being resumed
        save("last.ckpt.json", start_epoch);
        if (!fs::exists(a.out + "/best.ckpt.json")) save("best.ckpt.json", start_epoch);
    } else if (!have_val) {
        // no validation signal: the freshest parameters are the best known
        save("best.ckpt.json", cfg.training.epochs);
    }
    if (!csv) throw std::runtime_error(a.out + "/metrics.csv: write failed");
    std::printf("wrote %s/metrics.csv, %s/best.ckpt.json, %s/last.ckpt.json\n", a.out.c_str(),
                a.out.c_str(), a.out.c_str());
    return 0;
}

// --- select --------------------------------------------------------------

struct SelectArgs {
    std::string config;
    std::string data_dir;
    std::string checkpoint;
    std::string split = "val";
    std::string audit;
    std::string dump_attention;
    Overrides ov;
    CLI::Option* o_data = nullptr;
};

ModelParams params_for(const RunConfig& cfg, const std::string& checkpoint,
                       std::uint64_t hash) {
    if (checkpoint.empty()) return init_params(cfg.dims, cfg.training.seed);
    return load_checkpoint(checkpoint, hash).params;
}

int run_select(SelectArgs& a) {
    RunConfig cfg = load_cli_config(a.config, a.data_dir, a.o_data, a.ov);
    const std::uint64_t hash = config_hash(cfg);
    const Split split = split_from(a.split);

    std::vector<FeatureBundle> bundles = load_bundles(split_path(cfg, split));
    check_dims(bundles, cfg.dims, a.split + " split");
    std::map<std::string, std::size_t> answers = maybe_load_answers(cfg);
    ModelParams params = params_for(cfg, a.checkpoint, hash);

    if (!a.dump_attention.empty() && !uses_fine(cfg.pipeline().formula))
        throw config_error("select: --dump-attention needs a formula with a fine stage");

    std::ofstream audit;
    if (!a.audit.empty()) {
        audit.open(a.audit);
        if (!audit) throw config_error("cannot open " + a.audit + " for writing");
    }
    std::ofstream attn;
    if (!a.dump_attention.empty()) {
        attn.open(a.dump_attention);
        if (!attn) throw config_error("cannot open " + a.dump_attention + " for writing");
    }

    const std::string hash_str = detail::hash_hex(hash);
    std::size_t hits = 0, keyed = 0, rows = 0;
    for (const FeatureBundle& b : bundles) {
        Tape t;
        BoundParams bp = bind_params(t, params);
        SampleRun run = run_sample(t, bp, b, cfg.pipeline(), cfg.pipeline().infer_category,
                                   nullptr, false);
        auto it = answers.find(b.sample_id);
        if (it != answers.end()) {
            ++keyed;
            if (run.q_star == it->second) ++hits;
        }
        if (audit.is_open()) {
            for (const ScoreRecord& r : run.records) {
                nlohmann::json row = {
                    {"config_hash", hash_str},
                    {"sample_id", b.sample_id},
                    {"query_index", r.query_index},
                    {"s_class", r.s_class},
                    {"s_global", r.s_global},
                    {"s_coarse", r.s_coarse},
                    {"refined", std::find(run.refined.begin(), run.refined.end(),
                                          r.query_index) != run.refined.end()},
                    {"chosen", r.query_index == run.q_star}};
                if (r.s_fine)
                    row["s_fine"] = *r.s_fine;
                else
                    row["s_fine"] = nullptr;
                audit << row.dump() << '\n';
                ++rows;
            }
        }
        if (attn.is_open()) {
            nlohmann::json row = {{"config_hash", hash_str},
                                  {"sample_id", b.sample_id},
                                  {"weights", run.attention.data()}};
            attn << row.dump() << '\n';
        }
    }
    if (audit.is_open()) {
        audit.flush();
        if (!audit) throw std::runtime_error(a.audit + ": write failed");
        std::printf("%s: %zu rows\n", a.audit.c_str(), rows);
    }
    if (attn.is_open()) {
        attn.flush();
        if (!attn) throw std::runtime_error(a.dump_attention + ": write failed");
    }
    std::printf("split=%s samples=%zu", a.split.c_str(), bundles.size());
    if (keyed > 0)
        std::printf(" selection_accuracy=%.4f", static_cast<double>(hits) / keyed);
    std::printf("\n");
    return 0;
}

// --- eval ----------------------------------------------------------------

struct EvalArgs {
    std::string config;
    std::string data_dir;
    std::string checkpoint;
    std::string split = "test";
    std::string mode = "rec";
    double threshold = 0.5;
    std::string out;
    std::string per_sample;
    Overrides ov;
    CLI::Option* o_data = nullptr;
};

nlohmann::json report_json(const EvalReport& rep, std::uint64_t hash) {
    return {{"format", "aligncat-eval-v1"},
            {"config_hash", detail::hash_hex(hash)},
            {"split", rep.split},
            {"mode", eval_mode_name(rep.mode)},
            {"threshold", rep.threshold},
            {"n_samples", rep.n_samples},
            {"defined", rep.defined},
            {"rec_accuracy", rep.rec_accuracy},
            {"mean_iou", rep.mean_iou},
            {"category_precision", rep.category_precision},
            {"refined_hit_rate", rep.refined_hit_rate}};
}

int run_eval(EvalArgs& a) {
    RunConfig cfg = load_cli_config(a.config, a.data_dir, a.o_data, a.ov);
    const std::uint64_t hash = config_hash(cfg);
    const Split split = split_from(a.split);
    const EvalMode mode = eval_mode_from(a.mode);

    std::vector<FeatureBundle> bundles = load_bundles(split_path(cfg, split));
    check_dims(bundles, cfg.dims, a.split + " split");
    ModelParams params = params_for(cfg, a.checkpoint, hash);

    EvalReport rep = evaluate(bundles, params, cfg.pipeline(), cfg.pipeline().infer_category,
                              mode, std::nullopt, a.threshold);
    rep.split = a.split;  // evaluate() saw pre-filtered bundles

    std::printf("split               %s\n", rep.split.c_str());
    std::printf("mode                %s\n", eval_mode_name(rep.mode));
    std::printf("samples             %zu\n", rep.n_samples);
    if (!rep.defined) {
        std::printf("metrics             undefined (empty split)\n");
    } else {
        std::printf("rec_accuracy@%.2g    %.4f\n", rep.threshold, rep.rec_accuracy);
        std::printf("mean_iou            %.4f\n", rep.mean_iou);
        std::printf("category_precision  %.4f\n", rep.category_precision);
        std::printf("refined_hit_rate    %.4f\n", rep.refined_hit_rate);
    }

    if (!a.out.empty()) write_text(a.out, report_json(rep, hash).dump(2) + "\n");
    if (!a.per_sample.empty()) {
        std::ofstream ps(a.per_sample);
        if (!ps) throw config_error("cannot open " + a.per_sample + " for writing");
        const std::string hash_str = detail::hash_hex(hash);
        for (const SampleEval& se : rep.per_sample) {
            nlohmann::json row = {{"config_hash", hash_str},
                                  {"sample_id", se.sample_id},
                                  {"q_star", se.q_star},
                                  {"iou", se.iou},
                                  {"hit", se.hit},
                                  {"s_coarse", se.s_coarse},
                                  {"predicted_category", se.predicted_category}};
            if (se.s_fine)
                row["s_fine"] = *se.s_fine;
            else
                row["s_fine"] = nullptr;
            ps << row.dump() << '\n';
        }
        ps.flush();
        if (!ps) throw std::runtime_error(a.per_sample + ": write failed");
    }
    return 0;
}

// --- ablate --------------------------------------------------------------

struct AblateArgs {
    std::string config;
    std::string data_dir;
    std::string checkpoint;
    std::string mode;  // formula | alpha
    std::string split = "val";
    std::string out;
    Overrides ov;
    CLI::Option* o_data = nullptr;
};

ModelParams train_fresh(const RunConfig& cfg, const std::vector<FeatureBundle>& train_set,
                        const std::map<std::string, std::size_t>* answers) {
    ModelParams params = init_params(cfg.dims, cfg.training.seed);
    AdamState adam;
    for (std::size_t e = 0; e < cfg.training.epochs; ++e)
        train_epoch(train_set, params, adam, cfg.training, e, answers);
    return params;
}

int run_ablate(AblateArgs& a) {
    RunConfig base = load_cli_config(a.config, a.data_dir, a.o_data, a.ov);
    const Split split = split_from(a.split);

    std::vector<FeatureBundle> train_set = load_bundles(split_path(base, Split::train));
    check_dims(train_set, base.dims, "train split");
    std::vector<FeatureBundle> eval_set = load_bundles(split_path(base, split));
    check_dims(eval_set, base.dims, a.split + " split");
    std::map<std::string, std::size_t> answers = maybe_load_answers(base);
    const std::map<std::string, std::size_t>* key = answers.empty() ? nullptr : &answers;

    struct Row {
        std::string variant;
        std::uint64_t hash;
        double rec = 0, miou = 0, sel = -1;
    };
    std::vector<Row> rows;

    auto measure = [&](const std::string& variant, const RunConfig& cfg,
                       const ModelParams& params) {
        Row r;
        r.variant = variant;
        r.hash = config_hash(cfg);
        EvalReport rep = evaluate(eval_set, params, cfg.pipeline(),
                                  cfg.pipeline().infer_category, EvalMode::rec);
        r.rec = rep.rec_accuracy;
        r.miou = rep.mean_iou;
        if (key)
            r.sel = selection_accuracy(eval_set, params, cfg.pipeline(),
                                       cfg.pipeline().infer_category, answers);
        rows.push_back(r);
    };

    if (a.mode == "formula") {
        for (ScoreFormula f : {ScoreFormula::global_only, ScoreFormula::global_class,
                               ScoreFormula::global_fine, ScoreFormula::fine_then_coarse,
                               ScoreFormula::full}) {
            RunConfig cfg = base;
            cfg.pipeline().formula = f;
            ModelParams params = train_fresh(cfg, train_set, key);
            measure(formula_name(f), cfg, params);
        }
    } else if (a.mode == "alpha") {
        ModelParams params = a.checkpoint.empty()
                                 ? train_fresh(base, train_set, key)
                                 : load_checkpoint(a.checkpoint, config_hash(base)).params;
        for (double alpha : {0.0, 1.0, 10.0, 20.0, 100.0}) {
            RunConfig cfg = base;
            cfg.selection().alpha = alpha;
            measure("alpha=" + fmt_g(alpha), cfg, params);
        }
    } else {
        throw config_error("ablate: --mode expects formula|alpha, found \"" + a.mode + "\"");
    }

    std::printf("%-18s %-10s %-10s %-10s\n", "variant", "rec_acc", "mean_iou", "sel_acc");
    for (const Row& r : rows) {
        std::printf("%-18s %-10.4f %-10.4f ", r.variant.c_str(), r.rec, r.miou);
        if (r.sel >= 0)
            std::printf("%-10.4f\n", r.sel);
        else
            std::printf("%-10s\n", "n/a");
    }

    if (!a.out.empty()) {
        nlohmann::json j;
        j["format"] = "aligncat-ablate-v1";
        j["mode"] = a.mode;
        j["split"] = a.split;
        j["base_config_hash"] = detail::hash_hex(config_hash(base));
        j["rows"] = nlohmann::json::array();
        for (const Row& r : rows) {
            nlohmann::json row = {{"variant", r.variant},
                                  {"config_hash", detail::hash_hex(r.hash)},
                                  {"rec_accuracy", r.rec},
                                  {"mean_iou", r.miou}};
            if (r.sel >= 0) row["selection_accuracy"] = r.sel;
            j["rows"].push_back(row);
        }
        write_text(a.out, j.dump(2) + "\n");
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"category-then-attribute query grounding on synthetic feature bundles"};
    app.require_subcommand(1);

    GenArgs gen;
    CLI::App* gen_cmd = app.add_subcommand("gen", "generate a synthetic dataset");
    gen_cmd->add_option("--out", gen.out, "output directory");
    gen_cmd->add_option("--seed", gen.spec.seed, "generator seed");
    gen_cmd->add_option("--n", gen.count, "total sample count");
    gen_cmd->add_option("--queries", gen.spec.n_queries, "queries per sample");
    gen_cmd->add_option("--categories", gen.spec.categories, "category vocabulary size");
    gen_cmd->add_option("--attributes", gen.spec.attributes, "attribute vocabulary size");
    gen_cmd->add_option("--dv", gen.spec.d_v, "visual feature width");
    gen_cmd->add_option("--dt", gen.spec.d_t, "text feature width");
    gen_cmd->add_option("--len", gen.spec.text_len, "words per expression");
    gen_cmd->add_option("--noise", gen.spec.noise_scale, "feature noise scale");
    gen_cmd->add_option("--regime", gen.regime,
                        "distractor regime: category-confusable|attribute-confusable|mixed");
    gen_cmd->add_option("--regions", gen.regions, "region kind: box|mask");

    TrainArgs tr;
    CLI::App* train_cmd = app.add_subcommand("train", "train on a generated dataset");
    train_cmd->add_option("--config", tr.config, "run config JSON")->required();
    tr.o_data = train_cmd->add_option("--data", tr.data_dir, "dataset directory override");
    train_cmd->add_option("--out", tr.out, "artifact directory");
    train_cmd->add_option("--resume", tr.resume, "checkpoint to resume from");
    tr.ov.add(train_cmd);

    SelectArgs sel;
    CLI::App* select_cmd = app.add_subcommand("select", "audit per-candidate scores");
    select_cmd->add_option("--config", sel.config, "run config JSON")->required();
    sel.o_data = select_cmd->add_option("--data", sel.data_dir, "dataset directory override");
    select_cmd->add_option("--checkpoint", sel.checkpoint, "trained checkpoint (else fresh init)");
    select_cmd->add_option("--split", sel.split, "dataset split: train|val|test");
    select_cmd->add_option("--audit", sel.audit, "write one NDJSON row per candidate here");
    select_cmd->add_option("--dump-attention", sel.dump_attention,
                           "write per-sample word attention weights here");
    sel.ov.add(select_cmd);

    EvalArgs ev;
    CLI::App* eval_cmd = app.add_subcommand("eval", "grounding metrics on a split");
    eval_cmd->add_option("--config", ev.config, "run config JSON")->required();
    ev.o_data = eval_cmd->add_option("--data", ev.data_dir, "dataset directory override");
    eval_cmd->add_option("--checkpoint", ev.checkpoint, "trained checkpoint (else fresh init)");
    eval_cmd->add_option("--split", ev.split, "dataset split: train|val|test");
    eval_cmd->add_option("--mode", ev.mode, "task: rec|res");
    eval_cmd->add_option("--threshold", ev.threshold, "hit threshold on IoU");
    eval_cmd->add_option("--out", ev.out, "write the report JSON here");
    eval_cmd->add_option("--per-sample", ev.per_sample, "write per-sample NDJSON here");
    ev.ov.add(eval_cmd);

    AblateArgs ab;
    CLI::App* ablate_cmd = app.add_subcommand("ablate", "score-formula or alpha sweeps");
    ablate_cmd->add_option("--config", ab.config, "run config JSON")->required();
    ab.o_data = ablate_cmd->add_option("--data", ab.data_dir, "dataset directory override");
    ablate_cmd->add_option("--mode", ab.mode, "sweep: formula|alpha")->required();
    ablate_cmd->add_option("--checkpoint", ab.checkpoint,
                           "reuse this checkpoint for the alpha sweep");
    ablate_cmd->add_option("--split", ab.split, "evaluation split: train|val|test");
    ablate_cmd->add_option("--out", ab.out, "write the sweep table JSON here");
    ab.ov.add(ablate_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*gen_cmd) return run_gen(gen);
        if (*train_cmd) return run_train(tr);
        if (*select_cmd) return run_select(sel);
        if (*eval_cmd) return run_eval(ev);
        if (*ablate_cmd) return run_ablate(ab);
    } catch (const config_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const data_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const checkpoint_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const numeric_error& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "runtime failure: %s\n", e.what());
        return 3;
    }
    return 2;
}
