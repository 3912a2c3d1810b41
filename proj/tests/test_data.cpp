#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <sstream>

#include "aligncat/data.hpp"
#include "aligncat/generator.hpp"

using namespace aligncat;

namespace {

bool tensors_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && a.data() == b.data();
}

bool regions_equal(const Region& a, const Region& b) {
    if (a.kind != b.kind) return false;
    if (a.kind == RegionKind::box) return a.box == b.box;
    return a.mask == b.mask;
}

bool bundles_equal(const FeatureBundle& a, const FeatureBundle& b) {
    if (a.sample_id != b.sample_id || a.split != b.split || a.gt_category != b.gt_category)
        return false;
    if (!regions_equal(a.gt_region, b.gt_region)) return false;
    if (!tensors_equal(a.text.global, b.text.global) || !tensors_equal(a.text.words, b.text.words))
        return false;
    if (a.queries.size() != b.queries.size()) return false;
    for (std::size_t i = 0; i < a.queries.size(); ++i) {
        const auto& qa = a.queries[i];
        const auto& qb = b.queries[i];
        if (!tensors_equal(qa.feature, qb.feature) || qa.confidence != qb.confidence ||
            qa.category != qb.category || !regions_equal(qa.region, qb.region))
            return false;
    }
    return true;
}

GeneratorSpec tiny_spec() {
    GeneratorSpec s;
    s.seed = 42;
    s.n_queries = 5;
    s.categories = 8;
    s.attributes = 8;
    s.d_v = 8;
    s.d_t = 16;
    s.text_len = 4;
    s.regime = Regime::mixed;
    s.noise_scale = 0.05;
    return s;
}

std::string emit_to_string(const std::vector<FeatureBundle>& bs) {
    std::ostringstream os;
    emit_bundles(bs, os);
    return os.str();
}

}  // namespace

TEST_CASE("empty ndjson file loads to empty sequence") {
    std::istringstream in("");
    CHECK(load_bundles(in, "mem").empty());
}

TEST_CASE("emit then load is the identity") {
    GeneratedData gen = generate(tiny_spec(), 10);
    std::string text = emit_to_string(gen.bundles);
    std::istringstream in(text);
    std::vector<FeatureBundle> back = load_bundles(in, "mem");
    REQUIRE(back.size() == gen.bundles.size());
    for (std::size_t i = 0; i < back.size(); ++i) CHECK(bundles_equal(back[i], gen.bundles[i]));
}

TEST_CASE("awkward floats survive the round trip bit exactly") {
    GeneratedData gen = generate(tiny_spec(), 1);
    FeatureBundle b = gen.bundles[0];
    b.queries[0].feature[0] = 0.1;
    b.queries[0].feature[1] = 1.0 / 3.0;
    b.queries[0].feature[2] = 1e-300;
    b.text.global[0] = -0.30000000000000004;
    std::string text = emit_to_string({b});
    std::istringstream in(text);
    FeatureBundle back = load_bundles(in, "mem")[0];
    for (std::size_t i : {0u, 1u, 2u}) {
        double want = b.queries[0].feature[i];
        double got = back.queries[0].feature[i];
        CHECK(std::memcmp(&want, &got, sizeof want) == 0);
    }
    CHECK(back.text.global[0] == -0.30000000000000004);
}

TEST_CASE("loader reports the offending line and field") {
    GeneratedData gen = generate(tiny_spec(), 2);
    std::string good = emit_to_string({gen.bundles[0]});

    SECTION("ragged words matrix names words") {
        nlohmann::json j = bundle_to_json(gen.bundles[1]);
        j["text"]["words"][1].erase(j["text"]["words"][1].size() - 1);
        std::istringstream in(good + j.dump() + "\n");
        CHECK_THROWS_WITH(load_bundles(in, "mem"),
                          Catch::Matchers::ContainsSubstring("mem:2") &&
                              Catch::Matchers::ContainsSubstring("words"));
    }
    SECTION("malformed json names the line") {
        std::istringstream in(good + "{not json\n");
        CHECK_THROWS_WITH(load_bundles(in, "mem"), Catch::Matchers::ContainsSubstring("mem:2"));
    }
    SECTION("confidence outside the unit interval is rejected") {
        nlohmann::json j = bundle_to_json(gen.bundles[1]);
        j["queries"][0]["confidence"] = 1.5;
        std::istringstream in(j.dump() + "\n");
        CHECK_THROWS_WITH(load_bundles(in, "mem"),
                          Catch::Matchers::ContainsSubstring("confidence"));
    }
    SECTION("feature width must match the rest of the file") {
        nlohmann::json j = bundle_to_json(gen.bundles[1]);
        // widen every feature so the record is self-consistent but disagrees
        // with the first line of the file
        for (auto& q : j["queries"]) q["feature"].push_back(0.0);
        std::istringstream in(good + j.dump() + "\n");
        CHECK_THROWS_WITH(load_bundles(in, "mem"),
                          Catch::Matchers::ContainsSubstring("expected") &&
                              Catch::Matchers::ContainsSubstring("feature"));
    }
}

TEST_CASE("nan refuses emission") {
    GeneratedData gen = generate(tiny_spec(), 1);
    gen.bundles[0].queries[0].feature[0] = std::nan("");
    std::ostringstream os;
    CHECK_THROWS_AS(emit_bundles(gen.bundles, os), data_error);
    CHECK(os.str().empty());
}

TEST_CASE("generation is deterministic in seed and count") {
    GeneratorSpec s = tiny_spec();
    GeneratedData a = generate(s, 20);
    GeneratedData b = generate(s, 20);
    CHECK(emit_to_string(a.bundles) == emit_to_string(b.bundles));
    CHECK(a.answer_key == b.answer_key);

    s.seed = 43;
    GeneratedData c = generate(s, 20);
    CHECK(emit_to_string(a.bundles) != emit_to_string(c.bundles));
}

TEST_CASE("zero noise category-confusable plants the only matching category") {
    GeneratorSpec s = tiny_spec();
    s.regime = Regime::category_confusable;
    s.noise_scale = 0.0;
    GeneratedData gen = generate(s, 50);
    for (const FeatureBundle& b : gen.bundles) {
        std::size_t planted = gen.answer_key.at(b.sample_id);
        std::size_t matches = 0;
        for (std::size_t q = 0; q < b.queries.size(); ++q)
            if (b.queries[q].category == b.gt_category) {
                ++matches;
                CHECK(q == planted);
            }
        CHECK(matches == 1);
    }
}

TEST_CASE("planted query always carries the gt category") {
    for (Regime r : {Regime::category_confusable, Regime::attribute_confusable, Regime::mixed}) {
        GeneratorSpec s = tiny_spec();
        s.regime = r;
        GeneratedData gen = generate(s, 30);
        REQUIRE(gen.answer_key.size() == 30);
        for (const FeatureBundle& b : gen.bundles) {
            std::size_t planted = gen.answer_key.at(b.sample_id);
            REQUIRE(planted < b.queries.size());
            CHECK(b.queries[planted].category == b.gt_category);
            validate_bundle(b);
        }
    }
}

TEST_CASE("attribute-confusable bundles share the gt category at least twice") {
    GeneratorSpec s = tiny_spec();
    s.regime = Regime::attribute_confusable;
    GeneratedData gen = generate(s, 30);
    for (const FeatureBundle& b : gen.bundles) {
        std::size_t matches = 0;
        for (const VisualQuery& q : b.queries)
            if (q.category == b.gt_category) ++matches;
        CHECK(matches >= 2);
    }
}

TEST_CASE("infeasible regimes are config errors") {
    GeneratorSpec s = tiny_spec();
    s.n_queries = 1;
    s.regime = Regime::attribute_confusable;
    CHECK_THROWS_AS(generate(s, 1), data_error);
    s.regime = Regime::mixed;
    CHECK_THROWS_AS(generate(s, 1), data_error);
    s.regime = Regime::category_confusable;
    CHECK_NOTHROW(generate(s, 1));

    GeneratorSpec bad = tiny_spec();
    bad.noise_scale = -0.1;
    CHECK_THROWS_AS(generate(bad, 1), data_error);
}

TEST_CASE("nearest-neighbor oracle recovers the answer key at noise 0.1") {
    GeneratorSpec s = tiny_spec();
    s.n_queries = 10;
    s.text_len = 6;
    s.noise_scale = 0.1;
    GeneratedData gen = generate(s, 1000);

    // oracle: cosine between block-aligned slices of the query feature and
    // the mean word feature
    std::size_t hv = s.d_v / 2, ht = s.d_t / 2;
    std::size_t mc = std::min(hv, ht), ma = std::min(s.d_v - hv, s.d_t - ht);
    std::size_t hits = 0;
    for (const FeatureBundle& b : gen.bundles) {
        std::vector<double> mean(s.d_t, 0.0);
        for (std::size_t r = 0; r < b.text.words.rows(); ++r)
            for (std::size_t c = 0; c < s.d_t; ++c) mean[c] += b.text.words.at(r, c);
        for (double& v : mean) v /= static_cast<double>(b.text.words.rows());

        std::vector<double> tv;
        for (std::size_t i = 0; i < mc; ++i) tv.push_back(mean[i]);
        for (std::size_t i = 0; i < ma; ++i) tv.push_back(mean[ht + i]);

        double best = -2.0;
        std::size_t best_q = 0;
        for (std::size_t q = 0; q < b.queries.size(); ++q) {
            std::vector<double> qv;
            for (std::size_t i = 0; i < mc; ++i) qv.push_back(b.queries[q].feature[i]);
            for (std::size_t i = 0; i < ma; ++i) qv.push_back(b.queries[q].feature[hv + i]);
            double dot = 0.0, nq = 0.0, nt = 0.0;
            for (std::size_t i = 0; i < qv.size(); ++i) {
                dot += qv[i] * tv[i];
                nq += qv[i] * qv[i];
                nt += tv[i] * tv[i];
            }
            double cos = dot / std::max(std::sqrt(nq * nt), 1e-12);
            if (cos > best) {
                best = cos;
                best_q = q;
            }
        }
        if (best_q == gen.answer_key.at(b.sample_id)) ++hits;
    }
    double agreement = static_cast<double>(hits) / static_cast<double>(gen.bundles.size());
    INFO("oracle agreement " << agreement);
    CHECK(agreement >= 0.99);
}

TEST_CASE("mask regions rasterize consistently") {
    GeneratorSpec s = tiny_spec();
    s.region_kind = RegionKind::mask;
    GeneratedData gen = generate(s, 5);
    for (const FeatureBundle& b : gen.bundles) {
        CHECK(b.gt_region.kind == RegionKind::mask);
        validate_bundle(b);
        std::size_t on = 0;
        for (const auto& row : b.gt_region.mask)
            for (auto v : row) on += v;
        CHECK(on > 0);
    }
}

TEST_CASE("splits interleave deterministically") {
    GeneratedData gen = generate(tiny_spec(), 100);
    std::size_t train = 0, val = 0, test = 0;
    for (const FeatureBundle& b : gen.bundles) {
        if (b.split == Split::train) ++train;
        if (b.split == Split::val) ++val;
        if (b.split == Split::test) ++test;
    }
    CHECK(train == 80);
    CHECK(val == 10);
    CHECK(test == 10);
}
