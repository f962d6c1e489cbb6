#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "musicdiff/common.hpp"

namespace musicdiff {

struct MidiNote {
  int pitch = 60;      // semitone index, 0..127
  long onset = 0;      // ticks, >= 0
  long duration = 1;   // ticks, >= 1
  int velocity = 64;   // 1..127
  int track = 0;

  friend bool operator==(const MidiNote&, const MidiNote&) = default;
};

struct TimeSignature {
  int numerator = 4;
  int denominator = 4;  // one of 1, 2, 4, 8, 16

  friend bool operator==(const TimeSignature&, const TimeSignature&) = default;
};

struct Score {
  int ticks_per_quarter = 480;
  TimeSignature time_signature;
  std::vector<MidiNote> notes;  // sorted by (onset, pitch, track)

  void sort_notes();
  friend bool operator==(const Score&, const Score&) = default;
};

// One bar of the semiquaver piano roll. `cells` marks onsets, `sustained`
// marks continuation steps of notes that started earlier.
struct Bar {
  int index = 0;
  int steps = 16;
  std::vector<std::uint8_t> cells;      // steps x 128, row-major by step
  std::vector<std::uint8_t> sustained;  // same layout

  Bar() = default;
  Bar(int idx, int steps_per_bar)
      : index(idx), steps(steps_per_bar),
        cells(static_cast<std::size_t>(steps_per_bar) * 128, 0),
        sustained(static_cast<std::size_t>(steps_per_bar) * 128, 0) {}

  bool cell(int step, int pitch) const { return cells[static_cast<std::size_t>(step) * 128 + pitch] != 0; }
  bool sus(int step, int pitch) const { return sustained[static_cast<std::size_t>(step) * 128 + pitch] != 0; }
  void set_cell(int step, int pitch) { cells[static_cast<std::size_t>(step) * 128 + pitch] = 1; }
  void set_sus(int step, int pitch) { sustained[static_cast<std::size_t>(step) * 128 + pitch] = 1; }

  friend bool operator==(const Bar&, const Bar&) = default;
};

// A note snapped to the semiquaver grid. Onset is a global step index.
struct GridNote {
  int pitch = 60;
  int onset = 0;      // semiquaver steps from piece start
  int duration = 1;   // semiquaver steps, >= 1
  int velocity = 64;

  friend bool operator==(const GridNote&, const GridNote&) = default;
};

struct QuantizedScore {
  int steps_per_bar = 16;  // 16 for 4/4
  int bar_count = 0;
  std::vector<GridNote> notes;  // sorted by (onset, pitch)
  std::vector<Bar> bars;

  int total_steps() const { return bar_count * steps_per_bar; }

  // Recomputes `bars` and `bar_count` from the note list. `min_bars` pads
  // trailing empty bars so a fixed piece length can be represented.
  void rebuild_bars(int min_bars = 0);

  friend bool operator==(const QuantizedScore&, const QuantizedScore&) = default;
};

// Parses a Standard MIDI File (format 0 or 1). Note-on/note-off pairs become
// MidiNote records with track = chunk index. Dangling note-ons are truncated
// at the end of their track and reported through `warnings`.
Score parse_midi(const std::vector<std::uint8_t>& bytes,
                 std::vector<std::string>* warnings = nullptr);

// Serializes to a format-1 SMF. parse_midi(write_midi(s)) == s for any Score
// whose same-pitch notes within a track do not overlap.
std::vector<std::uint8_t> write_midi(const Score& score);

// Snaps onsets and durations to the semiquaver grid. Ties at exactly half a
// step round toward the earlier step; durations are floored at one step.
// Overlapping same-pitch notes are merged into one note spanning their union.
QuantizedScore quantize(const Score& score);

// Inverse of quantize on its image; emits a 4/4-style Score at the given
// resolution (ticks_per_quarter must be a multiple of 4).
Score dequantize(const QuantizedScore& q, int ticks_per_quarter = 480);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace musicdiff
