#include <doctest.h>

#include <cmath>
#include <map>

#include "musicdiff/embedding.hpp"
#include "support/gradcheck.hpp"

using namespace musicdiff;

TEST_CASE("octave shifts and equal intervals are structural") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto params = PitchEmbeddingParams::init(16, rng);
    const ad::Vec u = params.octave_direction.col(0);

    // |D4 - C4| == |D5 - C5|
    const double a = (embed_note(62, params) - embed_note(60, params)).norm();
    const double b = (embed_note(74, params) - embed_note(72, params)).norm();
    CHECK(std::abs(a - b) <= 1e-12 * std::max(1.0, a));

    // |C5 - C4| == |C6 - C5| == octave direction
    const ad::Vec d1 = embed_note(72, params) - embed_note(60, params);
    const ad::Vec d2 = embed_note(84, params) - embed_note(72, params);
    CHECK((d1 - u).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((d2 - u).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("interval differences depend only on pitch class and shift") {
  Rng rng(2);
  const auto params = PitchEmbeddingParams::init(8, rng);
  std::map<std::pair<int, int>, ad::Vec> seen;
  for (int p = 0; p < 128; ++p) {
    for (int k = 0; k + p < 128; ++k) {
      const ad::Vec diff = embed_note(p + k, params) - embed_note(p, params);
      const auto key = std::make_pair(p % 12, k);
      auto it = seen.find(key);
      if (it == seen.end()) {
        seen.emplace(key, diff);
      } else {
        CHECK((diff - it->second).cwiseAbs().maxCoeff() <= 1e-12);
      }
    }
  }
}

TEST_CASE("pitch range is enforced") {
  Rng rng(3);
  const auto params = PitchEmbeddingParams::init(4, rng);
  CHECK_THROWS_AS(embed_note(-1, params), Error);
  CHECK_THROWS_AS(embed_note(128, params), Error);
}

TEST_CASE("decode inverts embed on the lattice and under small noise") {
  Rng rng(4);
  const auto params = PitchEmbeddingParams::init(24, rng);
  for (int p = 0; p < 128; ++p) CHECK(decode_note(embed_note(p, params), params) == p);

  // Minimal inter-pitch gap by enumeration; perturbations below half of it
  // cannot change the nearest neighbour.
  double min_gap = 1e300;
  for (int p = 0; p < 128; ++p)
    for (int q = p + 1; q < 128; ++q)
      min_gap = std::min(min_gap, (embed_note(p, params) - embed_note(q, params)).norm());
  REQUIRE(min_gap > 0);
  for (int trial = 0; trial < 50; ++trial) {
    const int p = static_cast<int>(rng.uniform_int(128));
    ad::Vec noise(24);
    for (int i = 0; i < 24; ++i) noise(i) = rng.normal();
    noise *= 0.49 * min_gap / noise.norm();
    CHECK(decode_note(embed_note(p, params) + noise, params) == p);
  }

  // Total on arbitrary vectors.
  for (int trial = 0; trial < 20; ++trial) {
    ad::Vec z(24);
    for (int i = 0; i < 24; ++i) z(i) = 100.0 * rng.normal();
    const int p = decode_note(z, params);
    CHECK(p >= 0);
    CHECK(p <= 127);
  }
}

TEST_CASE("encode_triplet is deterministic, 3D wide, accepts the full vocabulary") {
  Rng rng(5);
  auto enc = SemanticEncoders::init(12, rng);
  const Triplet t{60, 5, 3};
  const ad::Vec z1 = enc.encode_triplet(t).concat();
  const ad::Vec z2 = enc.encode_triplet(t).concat();
  CHECK((z1 - z2).norm() == 0.0);
  CHECK(z1.size() == 36);

  // 128 * 48 * 10 joint combinations all encode (spot check the lattice
  // corners plus a random sample; every index is exercised at least once).
  for (int note : {0, 127})
    for (int chord : {0, 47, kNoChord})
      for (int sec : {0, 9}) CHECK(enc.encode_triplet({note, chord, sec}).concat().allFinite());
  for (int it = 0; it < 500; ++it) {
    const Triplet r{static_cast<int>(rng.uniform_int(128)), static_cast<int>(rng.uniform_int(48)),
                    static_cast<int>(rng.uniform_int(10))};
    CHECK(enc.encode_triplet(r).concat().allFinite());
  }
}

TEST_CASE("ablated encoders isolate the note block") {
  Rng rng(6);
  auto enc = SemanticEncoders::init(12, rng);
  enc.chord_ignores_note = true;
  enc.section_ignores_chord = false;  // section input is (chord, section); both triplets share them
  const TripletLatent a = enc.encode_triplet({60, 7, 2});
  const TripletLatent b = enc.encode_triplet({72, 7, 2});
  CHECK((a.zc - b.zc).norm() == 0.0);
  CHECK((a.zs - b.zs).norm() == 0.0);
  CHECK((a.zn - b.zn).norm() > 0.0);
}

TEST_CASE("symmetric loss closed form on an identity similarity matrix") {
  // Orthonormal towers give S = tau * I, whose symmetric cross entropy is
  // log(1 + (B-1) exp(-tau)) exactly.
  for (const double tau : {0.5, 1.0, 2.5}) {
    const int B = 6;
    ad::Tape tape;
    const ad::Var u = tape.leaf(ad::Mat::Identity(B, B));
    const ad::Var log_tau = tape.leaf(std::log(tau));
    const ad::Var loss = jsp_symmetric_loss(tape, u, u, log_tau);
    const double expected = std::log(1.0 + (B - 1) * std::exp(-tau));
    CHECK(tape.scalar(loss) == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("aligned positives with orthogonal negatives drive the loss to zero") {
  const int B = 5, D = 8;
  ad::Mat u = ad::Mat::Zero(D, B);
  for (int i = 0; i < B; ++i) u(i, i) = 1.0;
  ad::Tape tape;
  const ad::Var uu = tape.leaf(u);
  const ad::Var big_tau = tape.leaf(std::log(50.0));
  const double loss = tape.scalar(jsp_symmetric_loss(tape, uu, uu, big_tau));
  CHECK(loss == doctest::Approx(0.0).epsilon(1e-10));

  const double analytic = std::log(1.0 + (B - 1) * std::exp(-50.0));
  CHECK(loss == doctest::Approx(analytic).epsilon(1e-10));
}

TEST_CASE("jsp loss is permutation equivariant") {
  Rng rng(7);
  const int B = 7, D = 5;
  ad::Mat u(D, B), w(D, B);
  for (int j = 0; j < B; ++j)
    for (int i = 0; i < D; ++i) {
      u(i, j) = rng.normal();
      w(i, j) = rng.normal();
    }
  ad::Tape t1;
  const double base = t1.scalar(jsp_symmetric_loss(t1, t1.leaf(u), t1.leaf(w), t1.leaf(0.3)));
  std::vector<int> perm = {3, 1, 4, 0, 6, 2, 5};
  ad::Mat up(D, B), wp(D, B);
  for (int j = 0; j < B; ++j) {
    up.col(j) = u.col(perm[static_cast<std::size_t>(j)]);
    wp.col(j) = w.col(perm[static_cast<std::size_t>(j)]);
  }
  ad::Tape t2;
  const double permuted = t2.scalar(jsp_symmetric_loss(t2, t2.leaf(up), t2.leaf(wp), t2.leaf(0.3)));
  CHECK(permuted == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("jsp loss gradients pass finite differences") {
  Rng rng(8);
  auto res = musicdiff::testing::grad_check(
      {ad::Mat::Random(6, 5), ad::Mat::Random(6, 5), ad::Mat::Constant(1, 1, 0.2)},
      [](ad::Tape& t, const std::vector<ad::Var>& v) {
        return jsp_symmetric_loss(t, v[0], v[1], v[2]);
      },
      rng, 40);
  CHECK(res.probes >= 100);
  CHECK(res.ok(1e-4));
}

TEST_CASE("pretraining separates positives from negatives on a toy corpus") {
  Rng rng(9);
  auto enc = SemanticEncoders::init(16, rng);

  // Three chords, each co-occurring with its own pitch neighbourhood.
  std::vector<std::vector<Triplet>> corpus;
  for (int piece = 0; piece < 6; ++piece) {
    std::vector<Triplet> seq;
    for (int i = 0; i < 60; ++i) {
      const int chord = (piece + i / 20) % 3;
      const int note = 40 + chord * 24 + static_cast<int>(rng.uniform_int(8));
      seq.push_back({note, chord, chord % kSectionClasses});
    }
    corpus.push_back(seq);
  }

  JspConfig cfg;
  cfg.steps = 200;
  cfg.batch = 24;
  cfg.lr = 3e-3;
  cfg.context_radius = 4;
  Rng train_rng(123);
  const JspStats stats = jsp_pretrain(enc, corpus, cfg, train_rng);
  CHECK(stats.losses.back() < stats.losses.front());

  // Mean positive-pair cosine must exceed mean negative-pair cosine for the
  // chord-context tower.
  auto tower = [&](const std::vector<int>& ctx, int tgt) {
    ad::Vec pooled = ad::Vec::Zero(16);
    for (int p : ctx) pooled += embed_note(p, enc.pitch);
    pooled /= static_cast<double>(ctx.size());
    ad::Vec a = enc.proj_cn_ctx * pooled;
    ad::Vec b = enc.proj_cn_tgt * enc.chord_table.col(tgt);
    return a.dot(b) / (a.norm() * b.norm());
  };
  double pos = 0, neg = 0;
  int pos_n = 0, neg_n = 0;
  for (int chord = 0; chord < 3; ++chord) {
    std::vector<int> ctx;
    for (int i = 0; i < 8; ++i) ctx.push_back(40 + chord * 24 + i);
    for (int other = 0; other < 3; ++other) {
      const double c = tower(ctx, other);
      if (other == chord) {
        pos += c;
        ++pos_n;
      } else {
        neg += c;
        ++neg_n;
      }
    }
  }
  CHECK(pos / pos_n > neg / neg_n);
}

TEST_CASE("insufficient corpus is rejected") {
  Rng rng(10);
  auto enc = SemanticEncoders::init(8, rng);
  JspConfig cfg;
  CHECK_THROWS_AS(jsp_pretrain(enc, {{{60, 0, 0}}}, cfg, rng), Error);
  CHECK_THROWS_AS(jsp_pretrain(enc, {}, cfg, rng), Error);
}
