#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <set>
#include <sstream>

#include "m2r2/data/dataset.hpp"
#include "m2r2/data/dataset_io.hpp"
#include "m2r2/data/mask.hpp"
#include "m2r2/data/synthetic.hpp"

using namespace m2r2::data;

namespace {

const std::filesystem::path kFixtures = M2R2_FIXTURE_DIR;

SynthSpec small_spec(std::uint64_t seed) {
    SynthSpec s;
    s.seed = seed;
    s.dims = {3, 2, 4};
    return s;
}

std::string to_text(const Dataset& ds) {
    std::ostringstream os;
    write_dataset(ds, os);
    return os.str();
}

}  // namespace

TEST_CASE("fixture file parses with the authored turn counts") {
    const Dataset ds = load_dataset(kFixtures / "two_conversations.jsonl");
    REQUIRE(ds.conversations.size() == 2);
    CHECK(ds.conversations[0].length() == 3);
    CHECK(ds.conversations[1].length() == 5);
    CHECK(ds.total_turns() == 8);
    CHECK(ds.dims == ModalityDims{2, 2, 1});
    CHECK(ds.classes == std::vector<std::string>{"calm", "angry"});
    CHECK_FALSE(ds.conversations[0].utterances[1].features[0].has_value());
    CHECK(*ds.conversations[0].utterances[1].features[1] == std::vector<double>{0.0, 2.0});
    CHECK(ds.max_parties() == 2);
    // Absent slots in the file: conv a has 3 of 9, conv b has 4 of 15.
    CHECK(missing_rate(masks_of(ds)) == doctest::Approx(7.0 / 24.0));
}

TEST_CASE("round trip through the file format is the identity") {
    const Dataset ds = generate_synthetic(small_spec(4), 6);
    std::stringstream ss;
    write_dataset(ds, ss);
    const Dataset back = read_dataset(ss);
    CHECK(back == ds);

    const Dataset masked = apply_mask(ds, generate_mask(ds, 0.4, 1));
    std::stringstream ss2;
    write_dataset(masked, ss2);
    CHECK(read_dataset(ss2) == masked);
}

TEST_CASE("an utterance with every modality null is rejected") {
    std::istringstream in(
        R"({"dims": {"audio": 1, "text": 1, "visual": 1}, "classes": ["x"]})"
        "\n"
        R"({"id": "c", "num_parties": 1, "utterances": [{"t": 0, "speaker": 0, "label": 0, "audio": null, "text": null, "visual": null}]})"
        "\n");
    CHECK_THROWS_AS(read_dataset(in), DatasetError);
}

TEST_CASE("malformed records are rejected with the line number") {
    std::istringstream wrong_dim(
        R"({"dims": {"audio": 2, "text": 1, "visual": 1}, "classes": ["x"]})"
        "\n"
        R"({"id": "c", "num_parties": 1, "utterances": [{"t": 0, "speaker": 0, "label": 0, "audio": [1], "text": [1], "visual": [1]}]})"
        "\n");
    try {
        read_dataset(wrong_dim);
        FAIL("expected rejection");
    } catch (const DatasetError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
    std::istringstream empty("");
    CHECK_THROWS_AS(read_dataset(empty), DatasetError);
    std::istringstream bad_label(
        R"({"dims": {"audio": 1, "text": 1, "visual": 1}, "classes": ["x"]})"
        "\n"
        R"({"id": "c", "num_parties": 1, "utterances": [{"t": 0, "speaker": 0, "label": 3, "audio": [1], "text": [1], "visual": [1]}]})"
        "\n");
    CHECK_THROWS_AS(read_dataset(bad_label), DatasetError);
}

TEST_CASE("missing rate") {
    Dataset ds = generate_synthetic(small_spec(1), 3);
    CHECK(missing_rate(full_masks(ds)) == 0.0);
    MaskSet masks = full_masks(ds);
    for (auto& m : masks)
        for (auto& row : m.observed) row[1] = false;
    CHECK(missing_rate(masks) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("mask generation boundaries") {
    const Dataset ds = generate_synthetic(small_spec(2), 10);
    const MaskSet none = generate_mask(ds, 0.0, 5);
    CHECK(none == full_masks(ds));
    const MaskSet tight = generate_mask(ds, 2.0 / 3.0, 5);
    for (const auto& m : tight)
        for (const auto& row : m.observed) CHECK(std::count(row.begin(), row.end(), true) == 1);
    CHECK_THROWS(generate_mask(ds, 0.7, 5));
    CHECK_THROWS(generate_mask(ds, -0.1, 5));
}

TEST_CASE("realized missing rate on 1000 turns stays within 0.01") {
    SynthSpec spec = small_spec(3);
    spec.min_turns = spec.max_turns = 10;
    const Dataset ds = generate_synthetic(spec, 100);
    REQUIRE(ds.total_turns() == 1000);
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const MaskSet masks = generate_mask(ds, 0.5, seed);
        // Counting oracle: absent slots over all 3000 slots.
        std::size_t absent = 0;
        for (const auto& m : masks)
            for (const auto& row : m.observed) {
                absent += std::count(row.begin(), row.end(), false);
                CHECK(std::count(row.begin(), row.end(), true) >= 1);
            }
        const double eta = static_cast<double>(absent) / 3000.0;
        CHECK(eta >= 0.49);
        CHECK(eta <= 0.51);
        CHECK(missing_rate(masks) == doctest::Approx(eta));
    }
}

TEST_CASE("masks are deterministic in the seed") {
    const Dataset ds = generate_synthetic(small_spec(2), 5);
    CHECK(generate_mask(ds, 0.3, 8) == generate_mask(ds, 0.3, 8));
    CHECK_FALSE(generate_mask(ds, 0.3, 8) == generate_mask(ds, 0.3, 9));
}

TEST_CASE("applying a mask keeps observed vectors bit-identical") {
    const Dataset ds = generate_synthetic(small_spec(6), 8);
    CHECK(apply_mask(ds, full_masks(ds)) == ds);
    const MaskSet masks = generate_mask(ds, 0.45, 2);
    const Dataset masked = apply_mask(ds, masks);
    CHECK(missing_rate(masks_of(masked)) == doctest::Approx(missing_rate(masks)));
    for (std::size_t n = 0; n < ds.conversations.size(); ++n)
        for (std::size_t t = 0; t < ds.conversations[n].length(); ++t)
            for (std::size_t m = 0; m < kModalityCount; ++m) {
                const auto& before = ds.conversations[n].utterances[t].features[m];
                const auto& after = masked.conversations[n].utterances[t].features[m];
                if (masks[n].observed[t][m]) {
                    REQUIRE(after.has_value());
                    CHECK(std::equal(before->begin(), before->end(), after->begin(), after->end()));
                } else {
                    CHECK_FALSE(after.has_value());
                }
            }
}

TEST_CASE("mask validation") {
    const Dataset ds = generate_synthetic(small_spec(6), 2);
    MaskSet masks = full_masks(ds);
    masks[0].observed[0] = {false, false, false};
    CHECK_THROWS_AS(validate_masks(ds, masks), DatasetError);
    masks.pop_back();
    CHECK_THROWS_AS(validate_masks(ds, masks), DatasetError);
}

TEST_CASE("synthetic generation is deterministic") {
    CHECK(to_text(generate_synthetic(small_spec(7), 4)) == to_text(generate_synthetic(small_spec(7), 4)));
    CHECK(to_text(generate_synthetic(small_spec(7), 4)) != to_text(generate_synthetic(small_spec(8), 4)));
}

TEST_CASE("synthetic structure") {
    SynthSpec spec = small_spec(9);
    spec.num_parties = 3;
    const Dataset ds = generate_synthetic(spec, 20);
    validate(ds);
    CHECK(ds.num_classes() == 4);
    for (const auto& c : ds.conversations) {
        CHECK(c.length() >= spec.min_turns);
        CHECK(c.length() <= spec.max_turns);
        for (const auto& u : c.utterances) CHECK(u.speaker < 3);
    }
}

TEST_CASE("with rho = 1 every label is the coupling image of the previous one") {
    SynthSpec spec = small_spec(10);
    spec.rho = 1.0;
    const auto perm = coupling_permutation(spec);
    CHECK(std::set<std::size_t>(perm.begin(), perm.end()).size() == spec.num_classes);
    const Dataset ds = generate_synthetic(spec, 10);
    for (const auto& c : ds.conversations)
        for (std::size_t t = 1; t < c.length(); ++t) CHECK(c.utterances[t].label == perm[c.utterances[t - 1].label]);
}

TEST_CASE("with rho = 0 and full persistence each party keeps its first emotion") {
    SynthSpec spec = small_spec(11);
    spec.rho = 0.0;
    spec.persistence = 1.0;
    const Dataset ds = generate_synthetic(spec, 10);
    for (const auto& c : ds.conversations) {
        std::vector<int> first(c.num_parties, -1);
        for (const auto& u : c.utterances) {
            if (first[u.speaker] < 0) first[u.speaker] = static_cast<int>(u.label);
            CHECK(static_cast<int>(u.label) == first[u.speaker]);
        }
    }
}

TEST_CASE("with rho = 0 and tiny noise every modality alone identifies the class") {
    SynthSpec spec = small_spec(12);
    spec.rho = 0.0;
    spec.noise = 1e-6;
    const auto means = class_means(spec);
    const Dataset ds = generate_synthetic(spec, 10);
    for (const auto& c : ds.conversations)
        for (const auto& u : c.utterances)
            for (std::size_t m = 0; m < kModalityCount; ++m) {
                std::size_t best = 0;
                double best_d = 1e300;
                for (std::size_t k = 0; k < means.size(); ++k) {
                    double d = 0;
                    for (std::size_t i = 0; i < spec.dims[m]; ++i)
                        d += ((*u.features[m])[i] - means[k][m][i]) * ((*u.features[m])[i] - means[k][m][i]);
                    if (d < best_d) {
                        best_d = d;
                        best = k;
                    }
                }
                CHECK(best == u.label);
            }
}

TEST_CASE("synthetic generator settings are validated") {
    SynthSpec spec;
    spec.noise = 0;
    CHECK_THROWS(generate_synthetic(spec, 1));
    spec = {};
    spec.rho = 1.5;
    CHECK_THROWS(generate_synthetic(spec, 1));
    spec = {};
    spec.min_turns = 5;
    spec.max_turns = 4;
    CHECK_THROWS(generate_synthetic(spec, 1));
}

TEST_CASE("split partitions the conversations deterministically") {
    const Dataset ds = generate_synthetic(small_spec(13), 20);
    const auto [a, b] = split_dataset(ds, 0.75, 3);
    CHECK(a.conversations.size() == 15);
    CHECK(b.conversations.size() == 5);
    std::multiset<std::string> ids;
    for (const auto& c : a.conversations) ids.insert(c.id);
    for (const auto& c : b.conversations) ids.insert(c.id);
    std::multiset<std::string> original;
    for (const auto& c : ds.conversations) original.insert(c.id);
    CHECK(ids == original);
    const auto [a2, b2] = split_dataset(ds, 0.75, 3);
    CHECK(a2 == a);
    CHECK(b2 == b);
    CHECK_THROWS(split_dataset(ds, 1.0, 3));
}
