#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "aligncat/data.hpp"
#include "aligncat/evaluation.hpp"

using namespace aligncat;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Every test works inside its own scratch directory so runs cannot collide.
fs::path fresh_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / ("aligncat_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

RunResult run_cli(const fs::path& cwd, const std::string& args) {
    RunResult r;
    const fs::path out = cwd / "_stdout.txt";
    const fs::path err = cwd / "_stderr.txt";
    const std::string cmd = "cd '" + cwd.string() + "' && '" + ALIGNCAT_BIN + "' " + args +
                            " > '" + out.string() + "' 2> '" + err.string() + "'";
    int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

const char* kTinyConfig = R"({
  "model": {"d_v": 8, "d_t": 16, "d_s": 8, "categories": 6},
  "selection": {"max_candidates": 6, "max_refined": 3, "alpha": 100.0, "n_neg": 3},
  "pipeline": {"formula": "full", "train_category": "gt", "infer_category": "predicted"},
  "training": {"epochs": 3, "batch_size": 8, "seed": 7, "lr": 0.003},
  "data": {"dir": "data"}
})";

void write_file(const fs::path& p, const std::string& body) {
    std::ofstream out(p);
    REQUIRE(out);
    out << body;
}

constexpr const char* kGenFlags =
    "--seed 7 --n 60 --queries 6 --categories 6 --attributes 4 --dv 8 --dt 16 "
    "--len 4 --noise 0.05 --regime mixed";

void gen_data(const fs::path& dir) {
    RunResult g = run_cli(dir, std::string("gen --out data ") + kGenFlags);
    REQUIRE(g.code == 0);
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream ss(text);
    std::string line;
    while (std::getline(ss, line))
        if (!line.empty()) out.push_back(line);
    return out;
}

}  // namespace

TEST_CASE("gen is deterministic and refuses infeasible setups") {
    fs::path dir = fresh_dir("gen");

    RunResult a = run_cli(dir, std::string("gen --out d1 ") + kGenFlags);
    RunResult b = run_cli(dir, std::string("gen --out d2 ") + kGenFlags);
    REQUIRE(a.code == 0);
    REQUIRE(b.code == 0);
    for (const char* leaf : {"train.ndjson", "val.ndjson", "test.ndjson", "answers.json"})
        CHECK(slurp(dir / "d1" / leaf) == slurp(dir / "d2" / leaf));

    // the summary reports one line per emitted file
    CHECK(a.out.find("train.ndjson") != std::string::npos);

    RunResult bad = run_cli(dir, "gen --out d3 --regime attribute-confusable --queries 1");
    CHECK(bad.code == 2);
    CHECK(bad.err.find("at least 2 queries") != std::string::npos);
}

TEST_CASE("config files are strict about keys and syntax") {
    fs::path dir = fresh_dir("cfg");
    gen_data(dir);
    write_file(dir / "bad_key.json", R"({"model": {"d_v": 8}, "trainning": {}})");
    write_file(dir / "bad_syntax.json", "{not json");
    write_file(dir / "bad_value.json", R"({"model": {"d_t": 15}})");

    RunResult k = run_cli(dir, "train --config bad_key.json");
    CHECK(k.code == 2);
    CHECK(k.err.find("trainning") != std::string::npos);

    RunResult s = run_cli(dir, "train --config bad_syntax.json");
    CHECK(s.code == 2);

    RunResult v = run_cli(dir, "train --config bad_value.json");
    CHECK(v.code == 2);
    CHECK(v.err.find("d_t") != std::string::npos);

    RunResult m = run_cli(dir, "train --config missing.json");
    CHECK(m.code == 2);
}

TEST_CASE("train writes metrics and checkpoints deterministically") {
    fs::path dir = fresh_dir("train");
    gen_data(dir);
    write_file(dir / "tiny.json", kTinyConfig);

    RunResult t1 = run_cli(dir, "train --config tiny.json --out r1");
    REQUIRE(t1.code == 0);
    REQUIRE(fs::exists(dir / "r1/metrics.csv"));
    REQUIRE(fs::exists(dir / "r1/best.ckpt.json"));
    REQUIRE(fs::exists(dir / "r1/last.ckpt.json"));

    std::vector<std::string> csv = lines_of(slurp(dir / "r1/metrics.csv"));
    REQUIRE(csv.size() == 2 + 3);  // hash comment + header + one row per epoch
    CHECK(csv[0].rfind("# config_hash=", 0) == 0);
    CHECK(csv[1] == "epoch,l_cl,l_ce,lambda2,train_acc,val_acc");

    RunResult t2 = run_cli(dir, "train --config tiny.json --out r2");
    REQUIRE(t2.code == 0);
    CHECK(slurp(dir / "r1/metrics.csv") == slurp(dir / "r2/metrics.csv"));
    CHECK(slurp(dir / "r1/last.ckpt.json") == slurp(dir / "r2/last.ckpt.json"));
}

TEST_CASE("zero-epoch training checkpoints the initialization") {
    fs::path dir = fresh_dir("zero");
    gen_data(dir);
    write_file(dir / "tiny.json", kTinyConfig);

    RunResult t = run_cli(dir, "train --config tiny.json --out r0 --epochs 0");
    REQUIRE(t.code == 0);
    std::vector<std::string> csv = lines_of(slurp(dir / "r0/metrics.csv"));
    CHECK(csv.size() == 2);  // hash comment + header, no epochs

    nlohmann::json ck = nlohmann::json::parse(slurp(dir / "r0/last.ckpt.json"));
    CHECK(ck.at("epoch").get<std::size_t>() == 0);
    CHECK(fs::exists(dir / "r0/best.ckpt.json"));
}

TEST_CASE("resume reproduces the uninterrupted run") {
    fs::path dir = fresh_dir("resume");
    gen_data(dir);
    write_file(dir / "tiny.json", kTinyConfig);

    RunResult full = run_cli(dir, "train --config tiny.json --out full");
    REQUIRE(full.code == 0);

    RunResult part = run_cli(dir, "train --config tiny.json --out part --epochs 2");
    REQUIRE(part.code == 0);
    RunResult rest = run_cli(
        dir, "train --config tiny.json --out part2 --resume part/last.ckpt.json");
    REQUIRE(rest.code == 0);

    // the resumed run picks up at epoch 2 and finishes the configured 3
    CHECK(slurp(dir / "full/last.ckpt.json") == slurp(dir / "part2/last.ckpt.json"));
}

TEST_CASE("exploding training reports a numeric failure") {
    fs::path dir = fresh_dir("nan");
    gen_data(dir);
    write_file(dir / "tiny.json", kTinyConfig);

    RunResult t = run_cli(dir, "train --config tiny.json --out boom --lr 1e200");
    CHECK(t.code == 3);
    CHECK(t.err.find("batch") != std::string::npos);
}

TEST_CASE("select audit emits one row per surviving candidate") {
    fs::path dir = fresh_dir("select");
    gen_data(dir);
    write_file(dir / "tiny.json", kTinyConfig);
    REQUIRE(run_cli(dir, "train --config tiny.json --out runs").code == 0);

    RunResult s = run_cli(dir,
                          "select --config tiny.json --checkpoint runs/last.ckpt.json "
                          "--split val --audit audit.ndjson --dump-attention attn.ndjson");
    REQUIRE(s.code == 0);

    std::vector<FeatureBundle> val = load_bundles((dir / "data/val.ndjson").string());
    std::vector<std::string> rows = lines_of(slurp(dir / "audit.ndjson"));
    CHECK(rows.size() == val.size() * 6);  // every sample keeps min(O, N) = 6 candidates

    std::string hash;
    std::size_t chosen = 0;
    for (const std::string& line : rows) {
        nlohmann::json j = nlohmann::json::parse(line);
        if (hash.empty()) hash = j.at("config_hash").get<std::string>();
        CHECK(j.at("config_hash").get<std::string>() == hash);
        chosen += j.at("chosen").get<bool>() ? 1 : 0;
    }
    CHECK(chosen == val.size());  // exactly one winner per sample

    std::vector<std::string> attn = lines_of(slurp(dir / "attn.ndjson"));
    REQUIRE(attn.size() == val.size());
    for (const std::string& line : attn) {
        nlohmann::json j = nlohmann::json::parse(line);
        double sum = 0.0;
        for (double w : j.at("weights").get<std::vector<double>>()) sum += w;
        CHECK(sum == Catch::Approx(1.0).margin(1e-9));
    }

    // attention dumping requires a fine stage
    RunResult g = run_cli(dir,
                          "select --config tiny.json --formula global_only "
                          "--dump-attention nope.ndjson");
    CHECK(g.code == 2);
}

TEST_CASE("eval reports are byte-stable and IoU values recompute") {
    fs::path dir = fresh_dir("eval");
    gen_data(dir);
    write_file(dir / "tiny.json", kTinyConfig);
    REQUIRE(run_cli(dir, "train --config tiny.json --out runs").code == 0);

    const std::string args =
        "eval --config tiny.json --checkpoint runs/last.ckpt.json --split test";
    REQUIRE(run_cli(dir, args + " --out rep1.json --per-sample ps1.ndjson").code == 0);
    REQUIRE(run_cli(dir, args + " --out rep2.json --per-sample ps2.ndjson").code == 0);
    CHECK(slurp(dir / "rep1.json") == slurp(dir / "rep2.json"));
    CHECK(slurp(dir / "ps1.ndjson") == slurp(dir / "ps2.ndjson"));

    // recompute each reported IoU from the raw dataset
    std::vector<FeatureBundle> test_set = load_bundles((dir / "data/test.ndjson").string());
    std::map<std::string, const FeatureBundle*> by_id;
    for (const FeatureBundle& b : test_set) by_id[b.sample_id] = &b;

    std::vector<std::string> rows = lines_of(slurp(dir / "ps1.ndjson"));
    REQUIRE(rows.size() == test_set.size());
    double iou_sum = 0.0;
    for (const std::string& line : rows) {
        nlohmann::json j = nlohmann::json::parse(line);
        const FeatureBundle* b = by_id.at(j.at("sample_id").get<std::string>());
        std::size_t q = j.at("q_star").get<std::size_t>();
        double expected = iou(b->queries.at(q).region, b->gt_region);
        CHECK(j.at("iou").get<double>() == expected);
        iou_sum += expected;
    }
    nlohmann::json rep = nlohmann::json::parse(slurp(dir / "rep1.json"));
    CHECK(rep.at("mean_iou").get<double>() ==
          Catch::Approx(iou_sum / static_cast<double>(rows.size())).margin(1e-15));
    CHECK(rep.at("format").get<std::string>() == "aligncat-eval-v1");
}

TEST_CASE("artifacts from a different config are refused") {
    fs::path dir = fresh_dir("mixing");
    gen_data(dir);
    write_file(dir / "tiny.json", kTinyConfig);
    REQUIRE(run_cli(dir, "train --config tiny.json --out runs --epochs 1").code == 0);

    // same config file, but a flag changes the semantic content
    RunResult e = run_cli(dir,
                          "eval --config tiny.json --alpha 1.0 "
                          "--checkpoint runs/last.ckpt.json --split val");
    CHECK(e.code == 2);
    CHECK(e.err.find("config hash") != std::string::npos);
}

TEST_CASE("alpha sweep covers the published grid") {
    fs::path dir = fresh_dir("ablate");
    gen_data(dir);
    write_file(dir / "tiny.json", kTinyConfig);
    REQUIRE(run_cli(dir, "train --config tiny.json --out runs --epochs 1").code == 0);

    RunResult a = run_cli(dir,
                          "ablate --config tiny.json --mode alpha "
                          "--checkpoint runs/last.ckpt.json --out sweep.json");
    REQUIRE(a.code == 0);
    nlohmann::json j = nlohmann::json::parse(slurp(dir / "sweep.json"));
    REQUIRE(j.at("rows").size() == 5);
    std::vector<std::string> variants;
    for (const auto& row : j.at("rows")) variants.push_back(row.at("variant"));
    CHECK(variants ==
          std::vector<std::string>{"alpha=0", "alpha=1", "alpha=10", "alpha=20", "alpha=100"});

    RunResult bad = run_cli(dir, "ablate --config tiny.json --mode sideways");
    CHECK(bad.code == 2);
}

TEST_CASE("formula sweep trains every variant") {
    fs::path dir = fresh_dir("ablate_f");
    gen_data(dir);
    write_file(dir / "tiny.json", kTinyConfig);

    RunResult a = run_cli(dir,
                          "ablate --config tiny.json --mode formula --epochs 1 "
                          "--out sweep.json");
    REQUIRE(a.code == 0);
    nlohmann::json j = nlohmann::json::parse(slurp(dir / "sweep.json"));
    REQUIRE(j.at("rows").size() == 5);
    // every variant hashes differently: they are different run setups
    std::vector<std::string> hashes;
    for (const auto& row : j.at("rows")) hashes.push_back(row.at("config_hash"));
    std::sort(hashes.begin(), hashes.end());
    CHECK(std::adjacent_find(hashes.begin(), hashes.end()) == hashes.end());
}

TEST_CASE("usage errors exit with the usage code") {
    fs::path dir = fresh_dir("usage");
    CHECK(run_cli(dir, "").code == 2);                    // subcommand required
    CHECK(run_cli(dir, "frobnicate").code == 2);          // unknown subcommand
    CHECK(run_cli(dir, "train").code == 2);               // --config required
    CHECK(run_cli(dir, "--help").code == 0);              // help is a success
    CHECK(run_cli(dir, "gen --regions pentagon").code == 2);
}
