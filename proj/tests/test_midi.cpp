#include <doctest.h>

#include <map>

#include "musicdiff/midi.hpp"
#include "musicdiff/rng.hpp"

using namespace musicdiff;

namespace {

// Random well-formed Score: same-pitch notes within a track never overlap.
Score random_score(Rng& rng, int max_notes, int tracks = 2) {
  Score s;
  s.ticks_per_quarter = 480;
  const int n = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(max_notes) + 1));
  // Per (track, pitch) running end tick to keep intervals disjoint.
  std::map<std::pair<int, int>, long> next_free;
  for (int i = 0; i < n; ++i) {
    MidiNote note;
    note.track = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(tracks)));
    note.pitch = static_cast<int>(rng.uniform_int(128));
    note.velocity = 1 + static_cast<int>(rng.uniform_int(127));
    long base = next_free[{note.track, note.pitch}];
    note.onset = base + static_cast<long>(rng.uniform_int(2000));
    note.duration = 1 + static_cast<long>(rng.uniform_int(1920));
    next_free[{note.track, note.pitch}] = note.onset + note.duration;
    s.notes.push_back(note);
  }
  s.sort_notes();
  return s;
}

}  // namespace

TEST_CASE("empty track parses to empty score") {
  Score empty;
  const auto bytes = write_midi(empty);
  const Score parsed = parse_midi(bytes);
  CHECK(parsed.notes.empty());
  CHECK(parsed.ticks_per_quarter == 480);
}

TEST_CASE("single note field mapping") {
  Score s;
  s.ticks_per_quarter = 480;
  s.notes.push_back({60, 0, 480, 100, 0});
  const Score parsed = parse_midi(write_midi(s));
  REQUIRE(parsed.notes.size() == 1);
  CHECK(parsed.notes[0] == MidiNote{60, 0, 480, 100, 0});
}

TEST_CASE("malformed and unsupported inputs") {
  CHECK_THROWS_AS(parse_midi({}), Error);
  CHECK_THROWS_AS(parse_midi({'M', 'T', 'h', 'd'}), Error);

  Score s;
  auto bytes = write_midi(s);
  bytes[9] = 2;  // format 2
  CHECK_THROWS_WITH_AS(parse_midi(bytes), doctest::Contains("format 2"), Error);
}

TEST_CASE("dangling note-on truncates at track end with a warning") {
  // Header + one track: note-on with no matching off, then end-of-track
  // after 960 ticks.
  std::vector<std::uint8_t> bytes = {
      'M', 'T', 'h', 'd', 0, 0, 0, 6, 0, 0, 0, 1, 0x01, 0xe0,
      'M', 'T', 'r', 'k', 0, 0, 0, 12,
      0x00, 0x90, 60, 100,        // note on C4
      0x87, 0x40, 0xff, 0x2f, 0,  // delta 960, end of track
      0, 0, 0,                    // padding inside declared length
  };
  bytes[21] = 9;  // actual track body length
  bytes.resize(22 + 9);
  std::vector<std::string> warnings;
  const Score s = parse_midi(bytes, &warnings);
  REQUIRE(s.notes.size() == 1);
  CHECK(s.notes[0].onset == 0);
  CHECK(s.notes[0].duration == 960);
  CHECK(warnings.size() == 1);
}

TEST_CASE("round-trip is exact over random scores") {
  Rng rng(42);
  for (int it = 0; it < 200; ++it) {
    const Score s = random_score(rng, 60);
    const Score back = parse_midi(write_midi(s));
    CHECK(back == s);
  }
}

TEST_CASE("1000-note round trip") {
  Rng rng(7);
  Score s;
  s.ticks_per_quarter = 480;
  std::map<std::pair<int, int>, long> next_free;
  for (int i = 0; i < 1000; ++i) {
    MidiNote note;
    note.track = static_cast<int>(rng.uniform_int(4));
    note.pitch = static_cast<int>(rng.uniform_int(128));
    note.velocity = 1 + static_cast<int>(rng.uniform_int(127));
    note.onset = next_free[{note.track, note.pitch}] + static_cast<long>(rng.uniform_int(960));
    note.duration = 1 + static_cast<long>(rng.uniform_int(960));
    next_free[{note.track, note.pitch}] = note.onset + note.duration;
    s.notes.push_back(note);
  }
  s.sort_notes();
  const Score back = parse_midi(write_midi(s));
  CHECK(back == s);
}

TEST_CASE("quantize snaps onsets with ties rounding down") {
  Score s;
  s.ticks_per_quarter = 480;       // semiquaver = 120 ticks
  s.notes.push_back({60, 239, 120, 90, 0});
  s.notes.push_back({62, 240, 120, 90, 0});   // grid-exact
  s.notes.push_back({64, 60, 120, 90, 0});    // exact half step: rounds down
  const QuantizedScore q = quantize(s);
  REQUIRE(q.notes.size() == 3);
  CHECK(q.notes[0].onset == 0);  // pitch 64 tie at 60 ticks -> step 0
  CHECK(q.notes[0].pitch == 64);
  CHECK(q.notes[1].onset == 2);  // 239 -> step 2
  CHECK(q.notes[1].pitch == 60);
  CHECK(q.notes[2].onset == 2);  // 240 -> step 2 exactly
  CHECK(q.notes[2].pitch == 62);
}

TEST_CASE("quantize merges overlapping same-pitch notes") {
  Score s;
  s.ticks_per_quarter = 480;
  s.notes.push_back({60, 0, 480, 90, 0});
  s.notes.push_back({60, 240, 480, 70, 1});
  const QuantizedScore q = quantize(s);
  REQUIRE(q.notes.size() == 1);
  CHECK(q.notes[0].onset == 0);
  CHECK(q.notes[0].duration == 6);  // union [0, 720) ticks -> 6 steps
  CHECK(q.notes[0].velocity == 90);
}

TEST_CASE("quantize-dequantize idempotence") {
  Rng rng(11);
  for (int it = 0; it < 100; ++it) {
    const QuantizedScore q = quantize(random_score(rng, 40, 1));
    const QuantizedScore q2 = quantize(dequantize(q));
    CHECK(q2 == q);
  }
}

TEST_CASE("grid bound and sustain invariants") {
  Rng rng(13);
  for (int it = 0; it < 50; ++it) {
    const QuantizedScore q = quantize(random_score(rng, 40));
    for (const GridNote& n : q.notes) {
      CHECK(n.onset >= 0);
      CHECK(n.onset < q.bar_count * q.steps_per_bar);
      CHECK(n.onset + n.duration <= q.bar_count * q.steps_per_bar);
    }
    // sustained[t][p] implies an onset at some earlier step of that pitch
    for (const Bar& bar : q.bars) {
      for (int t = 0; t < bar.steps; ++t) {
        for (int p = 0; p < 128; ++p) {
          if (!bar.sus(t, p)) continue;
          bool found = false;
          const int global = bar.index * q.steps_per_bar + t;
          for (const GridNote& n : q.notes) {
            if (n.pitch == p && n.onset < global && global < n.onset + n.duration) found = true;
          }
          CHECK(found);
        }
      }
    }
  }
}

TEST_CASE("non-4/4 grids") {
  Score s;
  s.ticks_per_quarter = 480;
  s.time_signature = {3, 4};
  s.notes.push_back({60, 0, 480, 90, 0});
  const QuantizedScore q = quantize(s);
  CHECK(q.steps_per_bar == 12);
}
