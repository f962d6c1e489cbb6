#include "musicdiff/notation.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <sstream>

namespace musicdiff {

void validate_sections(const std::vector<SectionAnnotation>& sections) {
  for (std::size_t i = 0; i < sections.size(); ++i) {
    const SectionAnnotation& s = sections[i];
    if (s.start >= s.end) throw Error(Errc::ConfigInvalid, "section start must precede end");
    if (s.label < 0 || s.label >= kSectionClasses) {
      throw Error(Errc::ConfigInvalid, "section label out of range");
    }
    if (i > 0 && sections[i - 1].end > s.start) {
      throw Error(Errc::ConfigInvalid, "sections must be sorted and disjoint");
    }
  }
}

int section_at(const std::vector<SectionAnnotation>& sections, int pos) {
  for (std::size_t i = 0; i < sections.size(); ++i) {
    if (pos >= sections[i].start && pos < sections[i].end) return static_cast<int>(i);
  }
  return -1;
}

const char* event_kind_name(EventKind k) {
  switch (k) {
    case EventKind::Bar: return "Bar";
    case EventKind::Position: return "Position";
    case EventKind::Pitch: return "Pitch";
    case EventKind::Duration: return "Duration";
    case EventKind::Velocity: return "Velocity";
    case EventKind::Chord: return "Chord";
  }
  return "?";
}

void validate_token(const EventToken& t) {
  const int v = t.value;
  bool ok = false;
  switch (t.kind) {
    case EventKind::Bar: ok = v == 0; break;
    case EventKind::Position: ok = v >= 0 && v <= 15; break;
    case EventKind::Pitch: ok = v >= 0 && v <= 127; break;
    case EventKind::Duration: ok = v >= 1 && v <= kMaxDurationSteps; break;
    case EventKind::Velocity: ok = v >= 1 && v <= 127; break;
    case EventKind::Chord: ok = v >= 0 && v <= kNoChord; break;
  }
  if (!ok) {
    throw Error(Errc::ConfigInvalid, std::string(event_kind_name(t.kind)) +
                                         " token value " + std::to_string(v) + " out of range");
  }
}

ChordLabel ChordLabel::from_index(int idx) {
  if (idx < 0 || idx > 47) throw Error(Errc::ConfigInvalid, "chord index out of range");
  return ChordLabel{idx / 4, static_cast<ChordQuality>(idx % 4)};
}

namespace {

constexpr std::array<std::array<int, 3>, 4> kTriadIntervals = {{
    {0, 4, 7},  // major
    {0, 3, 7},  // minor
    {0, 3, 6},  // diminished
    {0, 4, 8},  // augmented
}};

}  // namespace

std::optional<ChordLabel> recognize_chord(const Bar& bar) {
  std::array<double, 12> hist{};
  double total = 0.0;
  for (int t = 0; t < bar.steps; ++t) {
    for (int p = 0; p < 128; ++p) {
      if (bar.cell(t, p)) {
        hist[static_cast<std::size_t>(p % 12)] += 1.0;
        total += 1.0;
      }
    }
  }
  if (total == 0.0) return std::nullopt;

  double best = 0.0;
  int best_index = -1;
  for (int root = 0; root < 12; ++root) {
    for (int quality = 0; quality < 4; ++quality) {
      bool tone[12] = {};
      for (int iv : kTriadIntervals[static_cast<std::size_t>(quality)]) tone[(root + iv) % 12] = true;
      double score = 0.0;
      for (int pc = 0; pc < 12; ++pc) score += tone[pc] ? hist[static_cast<std::size_t>(pc)] : -0.5 * hist[static_cast<std::size_t>(pc)];
      // Strict > keeps the first of tied templates: lower root, then
      // major < minor < dim < aug.
      if (best_index < 0 || score > best) {
        best = score;
        best_index = root * 4 + quality;
      }
    }
  }
  if (best <= 0.0) return std::nullopt;
  return ChordLabel::from_index(best_index);
}

std::vector<int> recognize_chords(const QuantizedScore& q) {
  std::vector<int> chords;
  chords.reserve(q.bars.size());
  for (const Bar& b : q.bars) {
    const auto c = recognize_chord(b);
    chords.push_back(c ? c->index() : kNoChord);
  }
  return chords;
}

namespace {

void check_tokenizable(const QuantizedScore& q, const std::vector<int>& chords) {
  if (q.steps_per_bar > 16) {
    throw Error(Errc::UnsupportedTimeSignature,
                "token positions cover at most 16 steps per bar");
  }
  if (static_cast<int>(chords.size()) != q.bar_count) {
    throw Error(Errc::ChordListMismatch,
                "got " + std::to_string(chords.size()) + " chords for " +
                    std::to_string(q.bar_count) + " bars");
  }
  for (int c : chords) {
    if (c < 0 || c > kNoChord) throw Error(Errc::ChordListMismatch, "chord index out of range");
  }
}

}  // namespace

std::vector<EventToken> encode_remi(const QuantizedScore& q, const std::vector<int>& chords) {
  check_tokenizable(q, chords);
  std::vector<EventToken> out;
  std::size_t note_idx = 0;
  int prev_chord = -1;
  for (int bar = 0; bar < q.bar_count; ++bar) {
    out.push_back({EventKind::Bar, 0});
    if (chords[static_cast<std::size_t>(bar)] != prev_chord) {
      out.push_back({EventKind::Chord, chords[static_cast<std::size_t>(bar)]});
      prev_chord = chords[static_cast<std::size_t>(bar)];
    }
    const int bar_start = bar * q.steps_per_bar;
    const int bar_end = bar_start + q.steps_per_bar;
    while (note_idx < q.notes.size() && q.notes[note_idx].onset < bar_end) {
      const GridNote& n = q.notes[note_idx++];
      out.push_back({EventKind::Position, n.onset - bar_start});
      out.push_back({EventKind::Pitch, n.pitch});
      out.push_back({EventKind::Duration, std::min(n.duration, kMaxDurationSteps)});
      out.push_back({EventKind::Velocity, n.velocity});
    }
  }
  for (const EventToken& t : out) validate_token(t);
  return out;
}

QuantizedScore decode_remi(const std::vector<EventToken>& tokens, std::vector<int>* chords_out,
                           int steps_per_bar) {
  QuantizedScore q;
  q.steps_per_bar = steps_per_bar;
  std::vector<int> chords;

  int bar = -1;
  int chord = kNoChord;
  int position = -1;
  // Within a note group: 0 = expect Position/Bar/Chord, 1 = expect Pitch,
  // 2 = expect Duration, 3 = expect Velocity.
  int phase = 0;
  GridNote pending;

  for (const EventToken& t : tokens) {
    validate_token(t);
    if (bar < 0 && t.kind != EventKind::Bar) {
      throw Error(Errc::IllegalTokenOrder, "stream must begin with a Bar token");
    }
    if (phase != 0 && t.kind != EventKind::Pitch && t.kind != EventKind::Duration &&
        t.kind != EventKind::Velocity) {
      throw Error(Errc::IllegalTokenOrder, "incomplete note group");
    }
    switch (t.kind) {
      case EventKind::Bar:
        if (bar >= 0) chords.push_back(chord);
        ++bar;
        break;
      case EventKind::Chord:
        chord = t.value;
        break;
      case EventKind::Position:
        if (t.value >= steps_per_bar) {
          throw Error(Errc::IllegalTokenOrder, "position beyond the bar");
        }
        position = t.value;
        phase = 1;
        break;
      case EventKind::Pitch:
        if (phase != 1) throw Error(Errc::IllegalTokenOrder, "Pitch before Position");
        pending.pitch = t.value;
        phase = 2;
        break;
      case EventKind::Duration:
        if (phase != 2) throw Error(Errc::IllegalTokenOrder, "Duration before Pitch");
        pending.duration = t.value;
        phase = 3;
        break;
      case EventKind::Velocity:
        if (phase != 3) throw Error(Errc::IllegalTokenOrder, "Velocity before Duration");
        pending.velocity = t.value;
        pending.onset = bar * steps_per_bar + position;
        q.notes.push_back(pending);
        phase = 0;
        break;
    }
  }
  if (phase != 0) throw Error(Errc::IllegalTokenOrder, "stream ends mid note group");
  if (bar >= 0) chords.push_back(chord);

  std::sort(q.notes.begin(), q.notes.end(), [](const GridNote& a, const GridNote& b) {
    return std::tie(a.onset, a.pitch) < std::tie(b.onset, b.pitch);
  });
  q.rebuild_bars(bar + 1);
  while (static_cast<int>(chords.size()) < q.bar_count) chords.push_back(chord);
  if (chords_out) *chords_out = std::move(chords);
  return q;
}

CompoundSequence encode_cp(const QuantizedScore& q, const std::vector<int>& chords) {
  check_tokenizable(q, chords);
  CompoundSequence seq;
  seq.bar_count = q.bar_count;
  seq.steps_per_bar = q.steps_per_bar;
  for (const GridNote& n : q.notes) {
    CompoundWord w;
    w.bar = n.onset / q.steps_per_bar;
    w.position = n.onset % q.steps_per_bar;
    w.pitch = n.pitch;
    w.duration = std::min(n.duration, kMaxDurationSteps);
    w.velocity = n.velocity;
    w.chord = chords[static_cast<std::size_t>(w.bar)];
    seq.words.push_back(w);
  }
  return seq;
}

QuantizedScore decode_cp(const CompoundSequence& seq, std::vector<int>* chords_out) {
  QuantizedScore q;
  q.steps_per_bar = seq.steps_per_bar;
  std::vector<int> chords(static_cast<std::size_t>(seq.bar_count), -1);
  int prev_bar = -1;
  for (const CompoundWord& w : seq.words) {
    if (w.bar < prev_bar) throw Error(Errc::IllegalTokenOrder, "words must be bar-ordered");
    prev_bar = w.bar;
    if (w.bar >= seq.bar_count || w.position < 0 || w.position >= seq.steps_per_bar) {
      throw Error(Errc::IllegalTokenOrder, "word outside the declared bars");
    }
    q.notes.push_back({w.pitch, w.bar * seq.steps_per_bar + w.position, w.duration, w.velocity});
    if (static_cast<std::size_t>(w.bar) < chords.size()) chords[static_cast<std::size_t>(w.bar)] = w.chord;
  }
  std::sort(q.notes.begin(), q.notes.end(), [](const GridNote& a, const GridNote& b) {
    return std::tie(a.onset, a.pitch) < std::tie(b.onset, b.pitch);
  });
  q.rebuild_bars(seq.bar_count);
  int carry = kNoChord;
  for (int b = 0; b < q.bar_count; ++b) {
    if (static_cast<std::size_t>(b) < chords.size() && chords[static_cast<std::size_t>(b)] >= 0) {
      carry = chords[static_cast<std::size_t>(b)];
    } else if (static_cast<std::size_t>(b) < chords.size()) {
      chords[static_cast<std::size_t>(b)] = carry;
    }
    carry = chords[static_cast<std::size_t>(b)];
  }
  if (chords_out) *chords_out = std::move(chords);
  return q;
}

std::vector<Triplet> make_triplets(const std::vector<EventToken>& tokens,
                                   const std::vector<SectionAnnotation>& sections,
                                   int steps_per_bar) {
  validate_sections(sections);
  std::vector<Triplet> out;
  int bar = -1;
  int chord = kNoChord;
  int position = 0;
  for (const EventToken& t : tokens) {
    switch (t.kind) {
      case EventKind::Bar: ++bar; break;
      case EventKind::Chord: chord = t.value; break;
      case EventKind::Position: position = t.value; break;
      case EventKind::Pitch: {
        const int pos = bar * steps_per_bar + position;
        const int sec = section_at(sections, pos);
        if (sec < 0) {
          throw Error(Errc::UncoveredPosition,
                      "note at step " + std::to_string(pos) + " not covered by any section");
        }
        out.push_back({t.value, chord, sections[static_cast<std::size_t>(sec)].label});
        break;
      }
      default: break;
    }
  }
  return out;
}

std::vector<Triplet> make_triplets(const CompoundSequence& seq,
                                   const std::vector<SectionAnnotation>& sections) {
  validate_sections(sections);
  std::vector<Triplet> out;
  for (const CompoundWord& w : seq.words) {
    const int pos = w.bar * seq.steps_per_bar + w.position;
    const int sec = section_at(sections, pos);
    if (sec < 0) {
      throw Error(Errc::UncoveredPosition,
                  "note at step " + std::to_string(pos) + " not covered by any section");
    }
    out.push_back({w.pitch, w.chord, sections[static_cast<std::size_t>(sec)].label});
  }
  return out;
}

std::string tokens_to_text(const std::vector<EventToken>& tokens) {
  std::ostringstream os;
  for (const EventToken& t : tokens) os << event_kind_name(t.kind) << ':' << t.value << '\n';
  return os.str();
}

std::vector<EventToken> tokens_from_text(const std::string& text) {
  std::vector<EventToken> out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const std::size_t colon = line.find(':');
    if (colon == std::string::npos) throw Error(Errc::ConfigInvalid, "expected KIND:VALUE, got " + line);
    const std::string kind = line.substr(0, colon);
    const int value = std::stoi(line.substr(colon + 1));
    EventToken t{EventKind::Bar, value};
    if (kind == "Bar") t.kind = EventKind::Bar;
    else if (kind == "Position") t.kind = EventKind::Position;
    else if (kind == "Pitch") t.kind = EventKind::Pitch;
    else if (kind == "Duration") t.kind = EventKind::Duration;
    else if (kind == "Velocity") t.kind = EventKind::Velocity;
    else if (kind == "Chord") t.kind = EventKind::Chord;
    else throw Error(Errc::ConfigInvalid, "unknown token kind " + kind);
    validate_token(t);
    out.push_back(t);
  }
  return out;
}

std::vector<std::uint8_t> tokens_to_binary(const std::vector<EventToken>& tokens) {
  std::vector<std::uint8_t> out;
  out.reserve(tokens.size() * 8);
  auto push_i32 = [&out](std::int32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  };
  for (const EventToken& t : tokens) {
    push_i32(static_cast<std::int32_t>(t.kind));
    push_i32(t.value);
  }
  return out;
}

std::vector<EventToken> tokens_from_binary(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() % 8 != 0) throw Error(Errc::ConfigInvalid, "token binary length must be a multiple of 8");
  std::vector<EventToken> out;
  auto read_i32 = [&bytes](std::size_t at) {
    std::int32_t v = 0;
    for (int i = 3; i >= 0; --i) v = v << 8 | bytes[at + static_cast<std::size_t>(i)];
    return v;
  };
  for (std::size_t i = 0; i < bytes.size(); i += 8) {
    const int kind = read_i32(i);
    if (kind < 0 || kind > 5) throw Error(Errc::ConfigInvalid, "unknown token kind id");
    EventToken t{static_cast<EventKind>(kind), read_i32(i + 4)};
    validate_token(t);
    out.push_back(t);
  }
  return out;
}

}  // namespace musicdiff
