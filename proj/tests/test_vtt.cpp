#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "stonefuse/rng.hpp"
#include "stonefuse/vtt.hpp"

using namespace stonefuse;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
    rng::Engine eng(seed);
    std::vector<double> v(shape_size(shape));
    for (double& x : v) x = eng.uniform(-1.0, 1.0);
    return Tensor(std::move(shape), std::move(v));
}

EhrRecord sample_record() {
    EhrRecord r;
    r.age = 52.0;
    r.gender = Gender::female;
    r.blood_leukocyte = 7.2;
    r.serum_creatinine = 88.0;
    r.urine_leukocyte = 40.0;
    r.urine_ph = 6.1;
    r.stone_location = 3;
    return r;
}

}  // namespace

TEST_CASE("ModelConfig validation") {
    ModelConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.token_count() == 64);
    CHECK(cfg.decoder_stages() == 2);

    ModelConfig bad = cfg;
    bad.patch_side = 5;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    bad = cfg;
    bad.heads = 5;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    bad = cfg;
    bad.tap_indices = {2, 4, 6, 7};
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    bad = cfg;
    bad.tap_indices = {4, 2, 6, 8};
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    bad = cfg;
    bad.decoder_channels = {12};
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    // paper-scale configuration is expressible
    ModelConfig paper;
    paper.volume_side = 48;
    paper.patch_side = 16;
    paper.embed_dim = 384;
    paper.encoder_layers = 12;
    paper.tap_indices = {3, 6, 9, 12};
    paper.heads = 12;
    paper.decoder_channels = {192, 96, 48, 24};
    CHECK_NOTHROW(paper.validate());
}

TEST_CASE("patchify counts follow the patch formula") {
    Tensor v48 = random_tensor({48, 48, 48}, 1);
    Tensor p48 = patchify(v48, 16);
    CHECK(p48.shape() == Shape{27, 4096});

    Tensor v16 = random_tensor({16, 16, 16}, 2);
    Tensor p16 = patchify(v16, 4);
    CHECK(p16.shape() == Shape{64, 64});

    // S == P: single row equal to the flattened volume
    Tensor v4 = random_tensor({4, 4, 4}, 3);
    Tensor p4 = patchify(v4, 4);
    CHECK(p4.shape() == Shape{1, 64});
    CHECK(p4.values() == v4.values());

    CHECK_THROWS_AS(patchify(v16, 5), std::invalid_argument);
}

TEST_CASE("patchify then unpatchify is the identity, exactly") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Tensor v = random_tensor({12, 12, 12}, 50 + seed);
        for (std::size_t p : {1, 2, 3, 4, 6, 12}) {
            Tensor back = unpatchify(patchify(v, p), 12, p);
            CHECK(back.values() == v.values());
        }
    }
}

TEST_CASE("patch rows are lexicographic over the grid") {
    // volume value encodes its own coordinates, so row origins are checkable
    const std::size_t S = 8, P = 4;
    std::vector<double> vals(S * S * S);
    for (std::size_t z = 0; z < S; ++z)
        for (std::size_t y = 0; y < S; ++y)
            for (std::size_t x = 0; x < S; ++x) vals[(z * S + y) * S + x] = double((z * S + y) * S + x);
    Tensor p = patchify(Tensor({S, S, S}, vals), P);
    // row 1 is grid coordinate (0,0,1) -> first voxel (0,0,4)
    CHECK(p.at({1, 0}) == 4.0);
    // row 2 is (0,1,0) -> first voxel (0,4,0)
    CHECK(p.at({2, 0}) == double(4 * S));
    // row 4 is (1,0,0) -> first voxel (4,0,0)
    CHECK(p.at({4, 0}) == double(4 * S * S));
}

TEST_CASE("embed_patches") {
    Tensor patches = random_tensor({8, 27}, 7);
    Tensor proj = random_tensor({27, 6}, 8);
    Tensor pos = random_tensor({8, 6}, 9);

    // zero patches -> tokens == pos
    TokenSequence zt = embed_patches(Tensor::zeros({8, 27}), proj, pos);
    CHECK(zt.kind == TokenKind::vision);
    CHECK(zt.tokens.values() == pos.values());

    // zero pos + identity-extended projection replicates patch values
    std::vector<double> eye(27 * 6, 0.0);
    for (std::size_t i = 0; i < 6; ++i) eye[i * 6 + i] = 1.0;
    TokenSequence it = embed_patches(patches, Tensor({27, 6}, eye), Tensor::zeros({8, 6}));
    for (std::size_t r = 0; r < 8; ++r)
        for (std::size_t c = 0; c < 6; ++c) CHECK(it.tokens.at({r, c}) == patches.at({r, c}));

    // random case matches hand matmul + add
    TokenSequence t = embed_patches(patches, proj, pos);
    for (std::size_t r = 0; r < 8; ++r) {
        for (std::size_t c = 0; c < 6; ++c) {
            double acc = pos.at({r, c});
            for (std::size_t k = 0; k < 27; ++k) acc += patches.at({r, k}) * proj.at({k, c});
            CHECK(t.tokens.at({r, c}) == doctest::Approx(acc).epsilon(1e-12));
        }
    }

    CHECK_THROWS_AS(embed_patches(patches, random_tensor({26, 6}, 1), pos), std::invalid_argument);
}

TEST_CASE("ehr stats standardize the training split to mean 0 / std 1") {
    rng::Engine eng(77);
    std::vector<EhrRecord> records;
    for (int i = 0; i < 40; ++i) {
        EhrRecord r = sample_record();
        r.age = eng.uniform(20, 80);
        r.blood_leukocyte = eng.uniform(4, 12);
        r.serum_creatinine = eng.uniform(50, 120);
        r.urine_leukocyte = eng.uniform(0, 100);
        r.urine_ph = eng.uniform(4.5, 8.0);
        records.push_back(r);
    }
    EhrStats stats = compute_ehr_stats(records);
    std::array<double, 5> mean{}, var{};
    for (const auto& r : records) {
        const std::array<double, 5> f{r.age, r.blood_leukocyte, r.serum_creatinine,
                                      r.urine_leukocyte, r.urine_ph};
        for (int i = 0; i < 5; ++i) {
            const double s = (f[i] - stats.mean[i]) / stats.stddev[i];
            mean[i] += s;
            var[i] += s * s;
        }
    }
    for (int i = 0; i < 5; ++i) {
        CHECK(std::abs(mean[i] / 40.0) <= 1e-10);
        CHECK(std::abs(var[i] / 40.0 - 1.0) <= 1e-10);
    }

    // constant field -> zero stddev -> error at construction
    std::vector<EhrRecord> degenerate(5, sample_record());
    CHECK_THROWS_AS(compute_ehr_stats(degenerate), std::invalid_argument);
}

TEST_CASE("encode_ehr token contract") {
    const std::size_t E = 6;
    EhrEmbeddings emb;
    emb.age = random_tensor({1, E}, 11);
    emb.gender = random_tensor({2, E}, 12);
    emb.blood_leukocyte = random_tensor({1, E}, 13);
    emb.serum_creatinine = random_tensor({1, E}, 14);
    emb.urine_leukocyte = random_tensor({1, E}, 15);
    emb.urine_ph = random_tensor({1, E}, 16);
    emb.stone_location = random_tensor({8, E}, 17);

    EhrStats stats;
    stats.mean = {50, 7, 80, 30, 6};
    stats.stddev = {10, 2, 20, 25, 0.5};

    EhrRecord r = sample_record();
    TokenSequence seq = encode_ehr(r, stats, emb);
    CHECK(seq.kind == TokenKind::ehr);
    CHECK(seq.tokens.shape() == Shape{7, E});

    // age equal to the training mean gives a zero age token
    EhrRecord at_mean = r;
    at_mean.age = 50;
    TokenSequence zs = encode_ehr(at_mean, stats, emb);
    for (std::size_t c = 0; c < E; ++c) CHECK(zs.tokens.at({0, c}) == 0.0);

    // gender one-hot selects distinct embedding rows
    EhrRecord male = r;
    male.gender = Gender::male;
    EhrRecord female = r;
    female.gender = Gender::female;
    TokenSequence ms = encode_ehr(male, stats, emb);
    TokenSequence fs = encode_ehr(female, stats, emb);
    for (std::size_t c = 0; c < E; ++c) {
        CHECK(ms.tokens.at({1, c}) == emb.gender.at({0, c}));
        CHECK(fs.tokens.at({1, c}) == emb.gender.at({1, c}));
    }

    // full record matches hand-computed standardization + projection
    const double s_ph = (r.urine_ph - 6.0) / 0.5;
    for (std::size_t c = 0; c < E; ++c) {
        CHECK(seq.tokens.at({5, c}) == doctest::Approx(s_ph * emb.urine_ph.at({0, c})).epsilon(1e-12));
        CHECK(seq.tokens.at({6, c}) == emb.stone_location.at({r.stone_location, c}));
    }

    // invalid categorical value is rejected
    EhrRecord bad = r;
    bad.stone_location = 9;
    CHECK_THROWS_AS(encode_ehr(bad, stats, emb), std::invalid_argument);
    bad = r;
    bad.urine_ph = 11.0;
    CHECK_THROWS_AS(encode_ehr(bad, stats, emb), std::invalid_argument);
}
