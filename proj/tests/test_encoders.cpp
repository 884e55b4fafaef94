#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "kpdistill/encoders.hpp"
#include "testutil.hpp"

using namespace kpd;
using Catch::Approx;

TEST_CASE("tokenize folds case and splits on non-alphanumerics") {
    const auto a = tokenize("iPhone 13 Case", 4096);
    const auto b = tokenize("iphone 13 case", 4096);
    REQUIRE(a == b);
    REQUIRE(a.size() == 3);
    const auto c = tokenize("Blue iPhone 13 Pro Max case!", 4096);
    REQUIRE(c.size() == 6);
}

TEST_CASE("tokenize rejects text without alphanumeric content") {
    REQUIRE_THROWS_AS(tokenize("", 4096), Error);
    REQUIRE_THROWS_AS(tokenize("--- !!!", 4096), Error);
    try {
        tokenize("   ", 4096);
        FAIL("expected error");
    } catch (const Error& e) {
        REQUIRE(e.kind() == ErrorKind::EmptyInput);
    }
}

TEST_CASE("tokenize matches frozen reference ids") {
    // Golden ids computed once from the FNV-1a reference, id = 1 + h % (V-1).
    const auto c = tokenize("Blue iPhone 13 Pro Max case!", 4096);
    const std::vector<std::int32_t> expected = {750, 775, 605, 2277, 3332, 976};
    REQUIRE(c.ids == expected);
    const auto d = tokenize("wireless noise-cancelling headphones", 2048);
    const std::vector<std::int32_t> expected2 = {323, 1578, 1183, 1093};
    REQUIRE(d.ids == expected2);
    REQUIRE(fnv1a64("iphone") == 11210257152898246944ULL);
}

TEST_CASE("tokenize never emits the reserved separator id") {
    Rng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        std::string word;
        for (int i = 0; i < 1 + static_cast<int>(rng.uniform_below(8)); ++i)
            word.push_back(static_cast<char>('a' + rng.uniform_below(26)));
        const auto seq = tokenize(word, 7);
        for (auto id : seq.ids) {
            REQUIRE(id >= 1);
            REQUIRE(id < 7);
        }
    }
}

TEST_CASE("encode_bi mean pooling treats repeats like single occurrences") {
    const auto p = BiEncoderParams::random(64, 8, 8, 1);
    TokenSeq once{{5}};
    TokenSeq thrice{{5, 5, 5}};
    const auto a = encode_bi(p, once);
    const auto b = encode_bi(p, thrice);
    REQUIRE(a.values == b.values);
}

TEST_CASE("encode_bi output has unit norm") {
    const auto p = BiEncoderParams::random(128, 16, 12, 2);
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        TokenSeq seq;
        for (int i = 0; i < 1 + static_cast<int>(rng.uniform_below(10)); ++i)
            seq.ids.push_back(static_cast<std::int32_t>(rng.uniform_below(128)));
        const auto e = encode_bi(p, seq);
        REQUIRE(norm2(e.values) == Approx(1.0).margin(1e-9));
    }
}

TEST_CASE("encode_bi is exactly permutation invariant") {
    const auto p = BiEncoderParams::random(64, 8, 8, 3);
    TokenSeq seq{{9, 3, 41, 3, 17, 9, 60}};
    const auto base = encode_bi(p, seq);
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        TokenSeq shuffled = seq;
        rng.shuffle(shuffled.ids);
        const auto e = encode_bi(p, shuffled);
        REQUIRE(e.values == base.values);  // bitwise
    }
}

TEST_CASE("encode_bi rejects empty sequences and unknown ids") {
    const auto p = BiEncoderParams::random(64, 8, 8, 4);
    REQUIRE_THROWS_AS(encode_bi(p, TokenSeq{}), Error);
    REQUIRE_THROWS_AS(encode_bi(p, TokenSeq{{64}}), Error);
}

TEST_CASE("cosine identities") {
    const auto u = kpdtest::unit_embedding({1.0, 0.0});
    const auto v = Embedding{{0.6, 0.8}};
    REQUIRE(cosine(u, u) == Approx(1.0).margin(1e-12));
    REQUIRE(cosine(u, Embedding{{0.0, 1.0}}) == 0.0);
    REQUIRE(cosine(u, v) == Approx(0.6).margin(1e-12));
    REQUIRE(cosine_distance(u, v) == Approx(0.4).margin(1e-12));
    REQUIRE_THROWS_AS(cosine(u, Embedding{{1.0, 0.0, 0.0}}), Error);
}

TEST_CASE("score_cross stays in [0,1] and is deterministic") {
    const auto p = CrossEncoderParams::random(256, 16, 5);
    Rng rng(21);
    for (int trial = 0; trial < 1000; ++trial) {
        TokenSeq kp, cat, title;
        for (int i = 0; i < 1 + static_cast<int>(rng.uniform_below(4)); ++i)
            kp.ids.push_back(1 + static_cast<std::int32_t>(rng.uniform_below(255)));
        for (int i = 0; i < static_cast<int>(rng.uniform_below(3)); ++i)
            cat.ids.push_back(1 + static_cast<std::int32_t>(rng.uniform_below(255)));
        for (int i = 0; i < 1 + static_cast<int>(rng.uniform_below(8)); ++i)
            title.ids.push_back(1 + static_cast<std::int32_t>(rng.uniform_below(255)));
        const double s = score_cross(p, kp, cat, title);
        REQUIRE(s >= 0.0);
        REQUIRE(s <= 1.0);
        REQUIRE(s == score_cross(p, kp, cat, title));
    }
}

TEST_CASE("score_cross rejects empty keyphrase or title") {
    const auto p = CrossEncoderParams::random(64, 8, 6);
    TokenSeq ok{{3}};
    REQUIRE_THROWS_AS(score_cross(p, TokenSeq{}, ok, ok), Error);
    REQUIRE_THROWS_AS(score_cross(p, ok, ok, TokenSeq{}), Error);
    REQUIRE_NOTHROW(score_cross(p, ok, TokenSeq{}, ok));  // category may be empty
}

TEST_CASE("forward passes are finite for bounded random parameters") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        auto bp = BiEncoderParams::random(32, 6, 6, 100 + trial);
        auto cp = CrossEncoderParams::random(32, 6, 200 + trial);
        for (double& x : bp.token_table.a) x = rng.uniform01() * 10.0 - 5.0;
        for (double& x : bp.projection.a) x = rng.uniform01() * 10.0 - 5.0;
        for (double& x : cp.token_table.a) x = rng.uniform01() * 10.0 - 5.0;
        for (double& x : cp.w1.a) x = rng.uniform01() * 10.0 - 5.0;
        for (double& x : cp.w2.a) x = rng.uniform01() * 10.0 - 5.0;
        TokenSeq seq{{1, 4, 9}};
        const auto e = encode_bi(bp, seq);
        REQUIRE(all_finite(e.values));
        const double s = score_cross(cp, seq, TokenSeq{{2}}, TokenSeq{{7, 8}});
        REQUIRE(std::isfinite(s));
    }
}

TEST_CASE("matryoshka prefix is unit norm and a pure function of the embedding") {
    const auto embs = kpdtest::random_unit_embeddings(20, 32, 77);
    for (const auto& e : embs) {
        const auto p8 = prefix_embedding(e, 8);
        REQUIRE(p8.dim() == 8);
        REQUIRE(norm2(p8.values) == Approx(1.0).margin(1e-12));
        const auto again = prefix_embedding(e, 8);
        REQUIRE(again.values == p8.values);
        const auto full = prefix_embedding(e, 32);
        REQUIRE(full.values == e.values);  // identity at full dim
    }
    REQUIRE_THROWS_AS(prefix_embedding(embs[0], 33), Error);
}

TEST_CASE("bi-encoder parameters round-trip bit-exactly") {
    const auto p = BiEncoderParams::random(64, 8, 16, 42);
    std::ostringstream os(std::ios::binary);
    save_bi(os, p);
    const std::string blob = os.str();
    std::istringstream is(blob, std::ios::binary);
    const auto q = load_bi(is);
    REQUIRE(q.token_table == p.token_table);
    REQUIRE(q.projection == p.projection);
    std::ostringstream os2(std::ios::binary);
    save_bi(os2, q);
    REQUIRE(os2.str() == blob);
}

TEST_CASE("cross-encoder parameters round-trip bit-exactly") {
    auto p = CrossEncoderParams::random(64, 8, 43);
    p.trained = true;
    p.b2.a[0] = -0.125;
    std::ostringstream os(std::ios::binary);
    save_cross(os, p);
    const std::string blob = os.str();
    std::istringstream is(blob, std::ios::binary);
    const auto q = load_cross(is);
    REQUIRE(q.trained);
    REQUIRE(q.token_table == p.token_table);
    REQUIRE(q.w1 == p.w1);
    REQUIRE(q.b1 == p.b1);
    REQUIRE(q.w2 == p.w2);
    REQUIRE(q.b2 == p.b2);
    std::ostringstream os2(std::ios::binary);
    save_cross(os2, q);
    REQUIRE(os2.str() == blob);
}

TEST_CASE("params checksum distinguishes different weights") {
    const auto p = BiEncoderParams::random(64, 8, 16, 1);
    auto q = p;
    q.projection.a[0] += 1e-9;
    REQUIRE(params_checksum(p) != params_checksum(q));
    REQUIRE(params_checksum(p) == params_checksum(BiEncoderParams::random(64, 8, 16, 1)));
}
