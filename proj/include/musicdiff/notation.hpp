#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "musicdiff/midi.hpp"
#include "musicdiff/sections.hpp"

namespace musicdiff {

constexpr int kNoChord = 48;
constexpr int kMaxDurationSteps = 64;  // duration vocabulary cap, 4 bars

enum class EventKind : std::uint8_t { Bar, Position, Pitch, Duration, Velocity, Chord };

const char* event_kind_name(EventKind k);

struct EventToken {
  EventKind kind = EventKind::Bar;
  int value = 0;

  friend bool operator==(const EventToken&, const EventToken&) = default;
};

// Throws unless `value` is in the kind's vocabulary range.
void validate_token(const EventToken& t);

enum class ChordQuality : std::uint8_t { Major = 0, Minor = 1, Diminished = 2, Augmented = 3 };

struct ChordLabel {
  int root = 0;  // pitch class, 0..11
  ChordQuality quality = ChordQuality::Major;

  int index() const { return root * 4 + static_cast<int>(quality); }
  static ChordLabel from_index(int idx);

  friend bool operator==(const ChordLabel&, const ChordLabel&) = default;
};

// The (note, chord, section) unit; chord may be kNoChord.
struct Triplet {
  int note = 60;     // 0..127
  int chord = 0;     // 0..48
  int section = 0;   // 0..9

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

struct CompoundWord {
  int bar = 0;
  int position = 0;
  int pitch = 60;
  int duration = 1;
  int velocity = 64;
  int chord = kNoChord;

  friend bool operator==(const CompoundWord&, const CompoundWord&) = default;
};

// Compound-word stream. bar_count preserves trailing empty bars that carry
// no words of their own.
struct CompoundSequence {
  int bar_count = 0;
  int steps_per_bar = 16;
  std::vector<CompoundWord> words;

  friend bool operator==(const CompoundSequence&, const CompoundSequence&) = default;
};

// Template match over the 48 triads (12 roots x major/minor/dim/aug) on the
// bar's onset pitch-class histogram. Score = mass on chord tones minus half
// the mass elsewhere; nullopt when the bar is empty or the best score <= 0.
std::optional<ChordLabel> recognize_chord(const Bar& bar);

// recognize_chord for every bar, mapped to indices with kNoChord for nullopt.
std::vector<int> recognize_chords(const QuantizedScore& q);

// REMI-style stream: per bar a Bar marker, a Chord token only when the chord
// changes, then (Position, Pitch, Duration, Velocity) per note onset.
std::vector<EventToken> encode_remi(const QuantizedScore& q, const std::vector<int>& chords);

// Inverse of encode_remi on its image. If `chords_out` is given it receives
// the active chord per bar.
QuantizedScore decode_remi(const std::vector<EventToken>& tokens,
                           std::vector<int>* chords_out = nullptr,
                           int steps_per_bar = 16);

CompoundSequence encode_cp(const QuantizedScore& q, const std::vector<int>& chords);

// Inverse of encode_cp on the onset grid. Chords for bars without onsets are
// carried forward from the previous bar.
QuantizedScore decode_cp(const CompoundSequence& seq, std::vector<int>* chords_out = nullptr);

// One Triplet per Pitch token, carrying the active chord and the section
// containing the onset. Throws UncoveredPosition when a note's onset falls
// outside every annotation.
std::vector<Triplet> make_triplets(const std::vector<EventToken>& tokens,
                                   const std::vector<SectionAnnotation>& sections,
                                   int steps_per_bar = 16);
std::vector<Triplet> make_triplets(const CompoundSequence& seq,
                                   const std::vector<SectionAnnotation>& sections);

// Newline-delimited "KIND:VALUE" text form.
std::string tokens_to_text(const std::vector<EventToken>& tokens);
std::vector<EventToken> tokens_from_text(const std::string& text);

// Flat little-endian int32 pairs (kind, value).
std::vector<std::uint8_t> tokens_to_binary(const std::vector<EventToken>& tokens);
std::vector<EventToken> tokens_from_binary(const std::vector<std::uint8_t>& bytes);

}  // namespace musicdiff
