#pragma once

// Sample domain types and NDJSON ingestion/emission. One JSON object per
// line; field names are part of the on-disk contract and must not drift.

#include <array>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "aligncat/tensor.hpp"

namespace aligncat {

struct data_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class RegionKind { box, mask };

struct Region {
    RegionKind kind = RegionKind::box;
    std::array<double, 4> box{};                     // x1, y1, x2, y2
    std::vector<std::vector<std::uint8_t>> mask;     // row-major binary grid

    static Region make_box(double x1, double y1, double x2, double y2) {
        Region r;
        r.kind = RegionKind::box;
        r.box = {x1, y1, x2, y2};
        return r;
    }

    static Region make_mask(std::vector<std::vector<std::uint8_t>> rows) {
        Region r;
        r.kind = RegionKind::mask;
        r.mask = std::move(rows);
        return r;
    }
};

enum class Split { train, val, test };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        default: return "test";
    }
}

inline Split split_from(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw data_error("split: expected train|val|test, found \"" + s + "\"");
}

struct VisualQuery {
    Tensor feature;       // length d_v
    double confidence = 0.0;
    int category = 0;     // c^V
    Region region;
};

struct TextEncoding {
    Tensor global;  // length d_t
    Tensor words;   // l x d_t

    std::size_t length() const { return words.rows(); }
};

struct FeatureBundle {
    std::string sample_id;
    Split split = Split::train;
    int gt_category = 0;  // c*
    Region gt_region;
    TextEncoding text;
    std::vector<VisualQuery> queries;
};

// --- validation ---

inline void validate_region(const Region& r, const std::string& where) {
    if (r.kind == RegionKind::box) {
        if (!(r.box[0] < r.box[2]) || !(r.box[1] < r.box[3]))
            throw data_error(where + ": box coordinates must satisfy x1<x2, y1<y2");
        for (double v : r.box)
            if (!std::isfinite(v)) throw data_error(where + ": box coordinate not finite");
    } else {
        if (r.mask.empty() || r.mask[0].empty())
            throw data_error(where + ": mask must be a nonempty grid");
        std::size_t w = r.mask[0].size();
        for (const auto& row : r.mask) {
            if (row.size() != w)
                throw data_error(where + ": mask rows ragged, expected " + std::to_string(w) +
                                 " entries, found " + std::to_string(row.size()));
            for (auto v : row)
                if (v > 1) throw data_error(where + ": mask entries must be 0 or 1");
        }
    }
}

inline void validate_bundle(const FeatureBundle& b) {
    const std::string id = b.sample_id;
    if (id.empty()) throw data_error("sample_id: empty");
    if (b.queries.empty()) throw data_error(id + ": queries: at least one required");
    if (b.gt_category < 0) throw data_error(id + ": gt_category: negative");
    validate_region(b.gt_region, id + ": gt_region");

    std::size_t d_t = b.text.global.size();
    if (b.text.global.rank() != 1 || d_t == 0)
        throw data_error(id + ": text.global: nonempty vector required");
    if (b.text.words.rank() != 2 || b.text.words.rows() == 0)
        throw data_error(id + ": words: at least one row required");
    if (b.text.words.cols() != d_t)
        throw data_error(id + ": words: expected " + std::to_string(d_t) +
                         " entries per row, found " + std::to_string(b.text.words.cols()));
    if (!b.text.global.all_finite() || !b.text.words.all_finite())
        throw data_error(id + ": text: non-finite entry");

    std::size_t d_v = b.queries[0].feature.size();
    for (std::size_t i = 0; i < b.queries.size(); ++i) {
        const VisualQuery& q = b.queries[i];
        const std::string where = id + ": queries[" + std::to_string(i) + "]";
        if (q.feature.rank() != 1 || q.feature.size() == 0)
            throw data_error(where + ": feature: nonempty vector required");
        if (q.feature.size() != d_v)
            throw data_error(where + ": feature: expected " + std::to_string(d_v) +
                             " entries, found " + std::to_string(q.feature.size()));
        if (!q.feature.all_finite()) throw data_error(where + ": feature: non-finite entry");
        if (!(q.confidence >= 0.0 && q.confidence <= 1.0))
            throw data_error(where + ": confidence: " + std::to_string(q.confidence) +
                             " outside [0,1]");
        if (q.category < 0) throw data_error(where + ": category: negative");
        validate_region(q.region, where + ": region");
    }
}

// --- JSON conversion ---

namespace detail {

inline nlohmann::json region_to_json(const Region& r) {
    nlohmann::json j;
    if (r.kind == RegionKind::box) {
        j["kind"] = "box";
        j["box"] = r.box;
    } else {
        j["kind"] = "mask";
        nlohmann::json rows = nlohmann::json::array();
        for (const auto& row : r.mask) rows.push_back(row);
        j["mask"] = std::move(rows);
    }
    return j;
}

inline Region region_from_json(const nlohmann::json& j, const std::string& where) {
    if (!j.is_object() || !j.contains("kind"))
        throw data_error(where + ": region: object with kind required");
    std::string kind = j.at("kind").get<std::string>();
    Region r;
    if (kind == "box") {
        r.kind = RegionKind::box;
        const auto& b = j.at("box");
        if (!b.is_array() || b.size() != 4)
            throw data_error(where + ": box: 4 coordinates required");
        for (std::size_t i = 0; i < 4; ++i) r.box[i] = b[i].get<double>();
    } else if (kind == "mask") {
        r.kind = RegionKind::mask;
        for (const auto& row : j.at("mask")) {
            std::vector<std::uint8_t> out;
            for (const auto& v : row) out.push_back(v.get<std::uint8_t>());
            r.mask.push_back(std::move(out));
        }
    } else {
        throw data_error(where + ": region kind: expected box|mask, found \"" + kind + "\"");
    }
    return r;
}

inline Tensor vec_from_json(const nlohmann::json& j, const std::string& where) {
    if (!j.is_array()) throw data_error(where + ": array required");
    std::vector<double> v;
    v.reserve(j.size());
    for (const auto& x : j) v.push_back(x.get<double>());
    return Tensor::vec(std::move(v));
}

}  // namespace detail

inline nlohmann::json bundle_to_json(const FeatureBundle& b) {
    nlohmann::json j;
    j["sample_id"] = b.sample_id;
    j["split"] = split_name(b.split);
    j["gt_category"] = b.gt_category;
    j["gt_region"] = detail::region_to_json(b.gt_region);
    j["text"]["global"] = b.text.global.data();
    nlohmann::json words = nlohmann::json::array();
    for (std::size_t r = 0; r < b.text.words.rows(); ++r) {
        std::vector<double> row(b.text.words.cols());
        for (std::size_t c = 0; c < b.text.words.cols(); ++c) row[c] = b.text.words.at(r, c);
        words.push_back(std::move(row));
    }
    j["text"]["words"] = std::move(words);
    nlohmann::json queries = nlohmann::json::array();
    for (const VisualQuery& q : b.queries) {
        nlohmann::json qj;
        qj["feature"] = q.feature.data();
        qj["confidence"] = q.confidence;
        qj["category"] = q.category;
        qj["region"] = detail::region_to_json(q.region);
        queries.push_back(std::move(qj));
    }
    j["queries"] = std::move(queries);
    return j;
}

inline FeatureBundle bundle_from_json(const nlohmann::json& j) {
    FeatureBundle b;
    b.sample_id = j.at("sample_id").get<std::string>();
    b.split = split_from(j.at("split").get<std::string>());
    b.gt_category = j.at("gt_category").get<int>();
    b.gt_region = detail::region_from_json(j.at("gt_region"), b.sample_id + ": gt_region");

    const auto& text = j.at("text");
    b.text.global = detail::vec_from_json(text.at("global"), b.sample_id + ": text.global");
    const auto& words = text.at("words");
    if (!words.is_array() || words.empty())
        throw data_error(b.sample_id + ": words: at least one row required");
    std::size_t d_t = b.text.global.size();
    std::vector<double> flat;
    for (std::size_t r = 0; r < words.size(); ++r) {
        Tensor row = detail::vec_from_json(words[r], b.sample_id + ": words");
        if (row.size() != d_t)
            throw data_error(b.sample_id + ": words: expected " + std::to_string(d_t) +
                             " entries per row, found " + std::to_string(row.size()));
        flat.insert(flat.end(), row.data().begin(), row.data().end());
    }
    b.text.words = Tensor::mat(words.size(), d_t, std::move(flat));

    for (std::size_t i = 0; i < j.at("queries").size(); ++i) {
        const auto& qj = j.at("queries")[i];
        const std::string where = b.sample_id + ": queries[" + std::to_string(i) + "]";
        VisualQuery q;
        q.feature = detail::vec_from_json(qj.at("feature"), where + ": feature");
        q.confidence = qj.at("confidence").get<double>();
        q.category = qj.at("category").get<int>();
        q.region = detail::region_from_json(qj.at("region"), where + ": region");
        b.queries.push_back(std::move(q));
    }
    return b;
}

// --- NDJSON IO ---

inline std::vector<FeatureBundle> load_bundles(std::istream& in, const std::string& name) {
    std::vector<FeatureBundle> out;
    std::string line;
    std::size_t lineno = 0;
    std::size_t d_v = 0, d_t = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::string where = name + ":" + std::to_string(lineno);
        FeatureBundle b;
        try {
            b = bundle_from_json(nlohmann::json::parse(line));
            validate_bundle(b);
        } catch (const nlohmann::json::exception& e) {
            throw data_error(where + ": " + e.what());
        } catch (const data_error& e) {
            throw data_error(where + ": " + e.what());
        }
        if (d_v == 0) {
            d_v = b.queries[0].feature.size();
            d_t = b.text.global.size();
        } else {
            if (b.queries[0].feature.size() != d_v)
                throw data_error(where + ": feature: expected " + std::to_string(d_v) +
                                 " entries, found " + std::to_string(b.queries[0].feature.size()));
            if (b.text.global.size() != d_t)
                throw data_error(where + ": text.global: expected " + std::to_string(d_t) +
                                 " entries, found " + std::to_string(b.text.global.size()));
        }
        out.push_back(std::move(b));
    }
    return out;
}

inline std::vector<FeatureBundle> load_bundles(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error(path + ": cannot open");
    return load_bundles(in, path);
}

inline void emit_bundles(const std::vector<FeatureBundle>& bundles, std::ostream& out) {
    // refuse the whole batch (non-finite values included) before writing a byte
    for (const FeatureBundle& b : bundles) validate_bundle(b);
    for (const FeatureBundle& b : bundles) out << bundle_to_json(b).dump() << '\n';
}

inline void emit_bundles(const std::vector<FeatureBundle>& bundles, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw data_error(path + ": cannot open for writing");
    emit_bundles(bundles, out);
    out.flush();
    if (!out) throw data_error(path + ": write failed");
}

}  // namespace aligncat
