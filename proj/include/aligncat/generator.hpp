#pragma once

// Planted-target synthetic data. Every bundle hides exactly one query whose
// feature matches the expression's category and attribute codes; the rest are
// confusable distractors and low-confidence noise padding. Visual and word
// features carry the category code and the attribute code in disjoint
// coordinate blocks, so a linear scorer can recover the planted query when
// noise is off.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "aligncat/data.hpp"
#include "aligncat/tensor.hpp"

namespace aligncat {

enum class Regime { category_confusable, attribute_confusable, mixed };

inline const char* regime_name(Regime r) {
    switch (r) {
        case Regime::category_confusable: return "category-confusable";
        case Regime::attribute_confusable: return "attribute-confusable";
        default: return "mixed";
    }
}

inline Regime regime_from(const std::string& s) {
    if (s == "category-confusable" || s == "category") return Regime::category_confusable;
    if (s == "attribute-confusable" || s == "attribute") return Regime::attribute_confusable;
    if (s == "mixed") return Regime::mixed;
    throw data_error("regime: expected category-confusable|attribute-confusable|mixed, found \"" +
                     s + "\"");
}

struct GeneratorSpec {
    std::uint64_t seed = 7;
    std::size_t n_queries = 10;  // N
    int categories = 80;         // C
    int attributes = 8;
    std::size_t d_v = 256;
    std::size_t d_t = 512;
    std::size_t text_len = 6;  // l
    Regime regime = Regime::mixed;
    double noise_scale = 0.1;
    RegionKind region_kind = RegionKind::box;
};

struct GeneratedData {
    std::vector<FeatureBundle> bundles;
    std::map<std::string, std::size_t> answer_key;  // sample_id -> planted query index
};

// Block layout shared by the generator and any oracle that wants to compare
// visual and text features directly: category code in the first half of each
// space, attribute code in the second half, zero padded when halves differ.
struct CodeLayout {
    std::size_t d_v, d_t;
    std::size_t hv, ht;  // half points
    std::size_t mc, ma;  // code lengths

    CodeLayout(std::size_t dv, std::size_t dt)
        : d_v(dv), d_t(dt), hv(dv / 2), ht(dt / 2),
          mc(std::min(dv / 2, dt / 2)), ma(std::min(dv - dv / 2, dt - dt / 2)) {}
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline std::vector<double> random_unit(std::size_t len, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> v(len);
    double norm2 = 0.0;
    do {
        norm2 = 0.0;
        for (double& x : v) {
            x = g(rng);
            norm2 += x * x;
        }
    } while (norm2 < 1e-12);
    double inv = 1.0 / std::sqrt(norm2);
    for (double& x : v) x *= inv;
    return v;
}

// count well-separated unit vectors in R^len. Up to 2*len codes come from a
// randomly rotated signed orthonormal basis (pairwise orthogonal or
// antipodal); beyond that, greedy farthest-point packing over a random pool.
inline std::vector<std::vector<double>> code_book(std::size_t len, std::size_t count,
                                                  std::mt19937_64& rng) {
    std::vector<std::vector<double>> codes;
    if (count <= 2 * len) {
        std::vector<std::vector<double>> basis;
        while (basis.size() < std::min(count, len)) {
            std::vector<double> v = random_unit(len, rng);
            for (const auto& b : basis) {
                double d = 0.0;
                for (std::size_t i = 0; i < len; ++i) d += v[i] * b[i];
                for (std::size_t i = 0; i < len; ++i) v[i] -= d * b[i];
            }
            double n2 = 0.0;
            for (double x : v) n2 += x * x;
            if (n2 < 1e-8) continue;
            double inv = 1.0 / std::sqrt(n2);
            for (double& x : v) x *= inv;
            basis.push_back(std::move(v));
        }
        codes = basis;
        for (std::size_t i = 0; codes.size() < count; ++i) {
            std::vector<double> neg = basis[i];
            for (double& x : neg) x = -x;
            codes.push_back(std::move(neg));
        }
        return codes;
    }
    std::vector<std::vector<double>> pool;
    for (std::size_t i = 0; i < 64 * count; ++i) pool.push_back(random_unit(len, rng));
    std::vector<double> best_cos(pool.size(), -2.0);
    codes.push_back(pool[0]);
    while (codes.size() < count) {
        std::size_t pick = 0;
        double lowest = 2.0;
        for (std::size_t i = 0; i < pool.size(); ++i) {
            double c = 0.0;
            for (std::size_t k = 0; k < len; ++k) c += pool[i][k] * codes.back()[k];
            best_cos[i] = std::max(best_cos[i], c);
            if (best_cos[i] < lowest) {
                lowest = best_cos[i];
                pick = i;
            }
        }
        codes.push_back(pool[pick]);
    }
    return codes;
}

}  // namespace detail

// Codes are a pure function of (seed, C, attributes, layout), so every sample
// of a run shares them.
struct CodeBooks {
    std::vector<std::vector<double>> cat;   // C codes of length layout.mc
    std::vector<std::vector<double>> attr;  // attribute codes of length layout.ma

    CodeBooks(const GeneratorSpec& spec, const CodeLayout& layout) {
        std::mt19937_64 rng(detail::splitmix64(spec.seed ^ 0xC0DEB00C5ull));
        cat = detail::code_book(layout.mc, static_cast<std::size_t>(spec.categories), rng);
        attr = detail::code_book(layout.ma, static_cast<std::size_t>(spec.attributes), rng);
    }

    // visual-space embedding of a (category, attribute) pair
    std::vector<double> visual(const CodeLayout& lo, int c, int a) const {
        std::vector<double> f(lo.d_v, 0.0);
        for (std::size_t i = 0; i < lo.mc; ++i) f[i] = cat[c][i];
        for (std::size_t i = 0; i < lo.ma; ++i) f[lo.hv + i] = attr[a][i];
        return f;
    }
};

inline void validate_spec(const GeneratorSpec& spec) {
    if (spec.d_v < 2 || spec.d_t < 2)
        throw data_error("generator: d_v and d_t must be at least 2");
    if (spec.categories < 2) throw data_error("generator: at least 2 categories required");
    if (spec.attributes < 2) throw data_error("generator: at least 2 attributes required");
    if (spec.text_len < 2) throw data_error("generator: text_len must be at least 2");
    if (spec.n_queries < 1) throw data_error("generator: n_queries must be positive");
    if (spec.noise_scale < 0.0) throw data_error("generator: noise_scale must be nonnegative");
    if (spec.regime != Regime::category_confusable && spec.n_queries < 2)
        throw data_error(std::string("generator: ") + regime_name(spec.regime) +
                         " regime needs at least 2 queries");
}

inline GeneratedData generate(const GeneratorSpec& spec, std::size_t count) {
    validate_spec(spec);
    CodeLayout layout(spec.d_v, spec.d_t);
    CodeBooks books(spec, layout);

    constexpr double kFrame = 416.0;
    constexpr std::size_t kMaskCell = 8;

    GeneratedData out;
    for (std::size_t idx = 0; idx < count; ++idx) {
        std::mt19937_64 rng(detail::splitmix64(spec.seed) ^ detail::splitmix64(idx + 1));
        std::normal_distribution<double> gauss(0.0, 1.0);
        std::uniform_real_distribution<double> unit(0.0, 1.0);

        auto other_than = [&](int taken, int total) {
            std::uniform_int_distribution<int> d(0, total - 2);
            int v = d(rng);
            return v >= taken ? v + 1 : v;
        };

        bool attr_sample = spec.regime == Regime::attribute_confusable ||
                           (spec.regime == Regime::mixed && unit(rng) < 0.5);

        std::uniform_int_distribution<int> cat_d(0, spec.categories - 1);
        std::uniform_int_distribution<int> attr_d(0, spec.attributes - 1);
        std::uniform_int_distribution<std::size_t> idx_d(0, spec.n_queries - 1);

        int c_star = cat_d(rng);
        int a_star = attr_d(rng);
        std::size_t planted = idx_d(rng);

        std::size_t confusable = planted;
        if (attr_sample)
            while (confusable == planted) confusable = idx_d(rng);

        auto random_box = [&]() {
            std::uniform_real_distribution<double> size_d(30.0, 120.0);
            double w = std::floor(size_d(rng));
            double h = std::floor(size_d(rng));
            std::uniform_real_distribution<double> x_d(0.0, kFrame - w);
            std::uniform_real_distribution<double> y_d(0.0, kFrame - h);
            double x1 = std::floor(x_d(rng));
            double y1 = std::floor(y_d(rng));
            return Region::make_box(x1, y1, x1 + w, y1 + h);
        };

        auto to_region = [&](const Region& box) {
            if (spec.region_kind == RegionKind::box) return box;
            std::size_t grid = static_cast<std::size_t>(kFrame) / kMaskCell;
            std::vector<std::vector<std::uint8_t>> rows(grid, std::vector<std::uint8_t>(grid, 0));
            for (std::size_t r = 0; r < grid; ++r)
                for (std::size_t c = 0; c < grid; ++c) {
                    double cx = static_cast<double>(c * kMaskCell) + kMaskCell / 2.0;
                    double cy = static_cast<double>(r * kMaskCell) + kMaskCell / 2.0;
                    if (cx >= box.box[0] && cx < box.box[2] && cy >= box.box[1] && cy < box.box[3])
                        rows[r][c] = 1;
                }
            return Region::make_mask(std::move(rows));
        };

        auto noisy = [&](std::vector<double> v) {
            for (double& x : v) x += spec.noise_scale * gauss(rng);
            return Tensor::vec(std::move(v));
        };

        FeatureBundle b;
        char id[32];
        std::snprintf(id, sizeof id, "s%06zu", idx);
        b.sample_id = id;
        b.split = idx % 10 < 8 ? Split::train : (idx % 10 == 8 ? Split::val : Split::test);
        b.gt_category = c_star;

        std::uniform_real_distribution<double> conf_hi(0.5, 1.0);
        std::uniform_real_distribution<double> conf_lo(0.0, 0.6);

        for (std::size_t q = 0; q < spec.n_queries; ++q) {
            VisualQuery vq;
            if (q == planted) {
                vq.category = c_star;
                vq.feature = noisy(books.visual(layout, c_star, a_star));
                vq.confidence = conf_hi(rng);
            } else if (attr_sample && q == confusable) {
                int a = other_than(a_star, spec.attributes);
                vq.category = c_star;
                vq.feature = noisy(books.visual(layout, c_star, a));
                vq.confidence = conf_hi(rng);
            } else if (unit(rng) < 0.5) {
                // relevant distractor from another category
                int c = other_than(c_star, spec.categories);
                int a = attr_d(rng);
                vq.category = c;
                vq.feature = noisy(books.visual(layout, c, a));
                vq.confidence = conf_hi(rng);
            } else {
                // unstructured noise padding
                std::vector<double> f(spec.d_v);
                for (double& x : f) x = 0.3 * gauss(rng);
                vq.category = other_than(c_star, spec.categories);
                vq.feature = Tensor::vec(std::move(f));
                vq.confidence = conf_lo(rng);
            }
            vq.region = to_region(random_box());
            b.queries.push_back(std::move(vq));
        }
        b.gt_region = b.queries[planted].region;

        // expression: a category word and an attribute word land at random
        // distinct positions, the rest is filler. Keyword rows carry their
        // code at double amplitude so the signal survives averaging over l.
        constexpr double kWordGain = 2.0;
        std::size_t cat_word = 0, attr_word = 0;
        {
            std::uniform_int_distribution<std::size_t> word_d(0, spec.text_len - 1);
            cat_word = word_d(rng);
            attr_word = cat_word;
            while (attr_word == cat_word) attr_word = word_d(rng);
        }
        std::vector<double> flat;
        flat.reserve(spec.text_len * spec.d_t);
        for (std::size_t wpos = 0; wpos < spec.text_len; ++wpos) {
            std::vector<double> row(spec.d_t, 0.0);
            if (wpos == cat_word)
                for (std::size_t i = 0; i < layout.mc; ++i)
                    row[i] = kWordGain * books.cat[c_star][i];
            if (wpos == attr_word)
                for (std::size_t i = 0; i < layout.ma; ++i)
                    row[layout.ht + i] = kWordGain * books.attr[a_star][i];
            Tensor noised = noisy(std::move(row));
            flat.insert(flat.end(), noised.data().begin(), noised.data().end());
        }
        b.text.words = Tensor::mat(spec.text_len, spec.d_t, std::move(flat));

        std::vector<double> global(spec.d_t, 0.0);
        for (std::size_t i = 0; i < layout.mc; ++i) global[i] = books.cat[c_star][i];
        for (std::size_t i = 0; i < layout.ma; ++i) global[layout.ht + i] = books.attr[a_star][i];
        b.text.global = noisy(std::move(global));

        out.answer_key[b.sample_id] = planted;
        out.bundles.push_back(std::move(b));
    }
    return out;
}

}  // namespace aligncat
