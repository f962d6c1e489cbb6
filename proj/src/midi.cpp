#include "musicdiff/midi.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <tuple>

namespace musicdiff {

namespace {

struct ByteReader {
  const std::vector<std::uint8_t>& data;
  std::size_t pos = 0;

  bool eof() const { return pos >= data.size(); }
  std::size_t remaining() const { return data.size() - pos; }

  std::uint8_t u8() {
    if (eof()) throw Error(Errc::MalformedHeader, "unexpected end of file");
    return data[pos++];
  }
  std::uint16_t u16() { return static_cast<std::uint16_t>(u8() << 8 | u8()); }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = v << 8 | u8();
    return v;
  }
  // Variable-length quantity, at most 4 bytes per the SMF spec.
  std::uint32_t vlq() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      const std::uint8_t b = u8();
      v = v << 7 | (b & 0x7f);
      if (!(b & 0x80)) return v;
    }
    throw Error(Errc::MalformedHeader, "variable-length quantity too long");
  }
  void skip(std::size_t n) {
    if (remaining() < n) throw Error(Errc::MalformedHeader, "truncated chunk");
    pos += n;
  }
};

struct ByteWriter {
  std::vector<std::uint8_t> out;

  void u8(std::uint8_t v) { out.push_back(v); }
  void u16(std::uint16_t v) {
    u8(static_cast<std::uint8_t>(v >> 8));
    u8(static_cast<std::uint8_t>(v));
  }
  void u32(std::uint32_t v) {
    for (int i = 3; i >= 0; --i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void vlq(std::uint32_t v) {
    std::uint8_t buf[4];
    int n = 0;
    buf[n++] = v & 0x7f;
    while ((v >>= 7) != 0) buf[n++] = static_cast<std::uint8_t>((v & 0x7f) | 0x80);
    while (n > 0) u8(buf[--n]);
  }
  void tag(const char* s) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(s[i]));
  }
};

// Merges overlapping same-pitch notes (half-open tick intervals) into the
// union span; the earlier note's velocity and track win.
void merge_same_pitch_overlaps(std::vector<MidiNote>& notes) {
  std::stable_sort(notes.begin(), notes.end(), [](const MidiNote& a, const MidiNote& b) {
    return std::tie(a.track, a.pitch, a.onset) < std::tie(b.track, b.pitch, b.onset);
  });
  std::vector<MidiNote> merged;
  for (const MidiNote& n : notes) {
    if (!merged.empty()) {
      MidiNote& m = merged.back();
      if (m.track == n.track && m.pitch == n.pitch && n.onset < m.onset + m.duration) {
        m.duration = std::max(m.duration, n.onset + n.duration - m.onset);
        continue;
      }
    }
    merged.push_back(n);
  }
  notes = std::move(merged);
}

}  // namespace

void Score::sort_notes() {
  std::stable_sort(notes.begin(), notes.end(), [](const MidiNote& a, const MidiNote& b) {
    return std::tie(a.onset, a.pitch, a.track) < std::tie(b.onset, b.pitch, b.track);
  });
}

Score parse_midi(const std::vector<std::uint8_t>& bytes, std::vector<std::string>* warnings) {
  ByteReader r{bytes};
  if (r.remaining() < 14) throw Error(Errc::MalformedHeader, "file shorter than MThd chunk");
  if (r.u32() != 0x4d546864u) throw Error(Errc::MalformedHeader, "missing MThd tag");
  const std::uint32_t hlen = r.u32();
  if (hlen < 6) throw Error(Errc::MalformedHeader, "header chunk too short");
  const std::uint16_t format = r.u16();
  const std::uint16_t ntrks = r.u16();
  const std::uint16_t division = r.u16();
  r.skip(hlen - 6);

  if (format > 1) throw Error(Errc::UnsupportedFormat, "SMF format 2 is not supported");
  if (division & 0x8000) throw Error(Errc::UnsupportedFormat, "SMPTE division is not supported");
  if (division == 0) throw Error(Errc::MalformedHeader, "zero ticks per quarter");

  Score score;
  score.ticks_per_quarter = division;

  bool saw_time_signature = false;
  int track_index = 0;

  while (!r.eof() && track_index < ntrks) {
    if (r.remaining() < 8) throw Error(Errc::MalformedHeader, "truncated track header");
    const std::uint32_t tag = r.u32();
    const std::uint32_t len = r.u32();
    if (tag != 0x4d54726bu) {  // unknown chunk types are skipped per the SMF spec
      r.skip(len);
      continue;
    }
    const std::size_t track_end = r.pos + len;
    if (track_end > bytes.size()) throw Error(Errc::MalformedHeader, "track chunk overruns file");

    long tick = 0;
    std::uint8_t running_status = 0;
    // Active note-ons: (channel, pitch) -> (onset tick, velocity).
    std::map<std::pair<int, int>, std::pair<long, int>> active;

    while (r.pos < track_end) {
      tick += r.vlq();
      std::uint8_t status = r.u8();
      if (status < 0x80) {
        if (running_status == 0) throw Error(Errc::MalformedHeader, "data byte without status");
        --r.pos;
        status = running_status;
      }

      if (status == 0xff) {  // meta event
        const std::uint8_t type = r.u8();
        const std::uint32_t mlen = r.vlq();
        if (type == 0x58 && mlen >= 2) {
          const int num = r.u8();
          const int den_pow = r.u8();
          r.skip(mlen - 2);
          const int den = 1 << den_pow;
          if (!saw_time_signature && num > 0 &&
              (den == 1 || den == 2 || den == 4 || den == 8 || den == 16)) {
            score.time_signature = {num, den};
            saw_time_signature = true;
          }
        } else {
          r.skip(mlen);  // tempo (0x51) and all other metas are read and discarded
        }
        if (type == 0x2f) break;  // end of track
        continue;
      }
      if (status == 0xf0 || status == 0xf7) {  // sysex: skip payload
        r.skip(r.vlq());
        continue;
      }

      running_status = status;
      const int kind = status >> 4;
      const int channel = status & 0x0f;
      switch (kind) {
        case 0x9: {  // note on (velocity 0 acts as note off)
          const int pitch = r.u8() & 0x7f;
          const int vel = r.u8() & 0x7f;
          const auto key = std::make_pair(channel, pitch);
          if (vel == 0) {
            auto it = active.find(key);
            if (it != active.end()) {
              score.notes.push_back({pitch, it->second.first,
                                     std::max(1L, tick - it->second.first),
                                     it->second.second, track_index});
              active.erase(it);
            }
          } else {
            auto it = active.find(key);
            if (it != active.end()) {
              // Re-onset while sounding: close the running note first.
              score.notes.push_back({pitch, it->second.first,
                                     std::max(1L, tick - it->second.first),
                                     it->second.second, track_index});
            }
            active[key] = {tick, vel};
          }
          break;
        }
        case 0x8: {  // note off
          const int pitch = r.u8() & 0x7f;
          r.u8();  // release velocity unused
          const auto key = std::make_pair(channel, pitch);
          auto it = active.find(key);
          if (it != active.end()) {
            score.notes.push_back({pitch, it->second.first,
                                   std::max(1L, tick - it->second.first),
                                   it->second.second, track_index});
            active.erase(it);
          }
          break;
        }
        case 0xa:  // poly aftertouch
        case 0xb:  // controller
        case 0xe:  // pitch bend
          r.skip(2);
          break;
        case 0xc:  // program change
        case 0xd:  // channel pressure
          r.skip(1);
          break;
        default:
          throw Error(Errc::MalformedHeader, "unexpected status byte");
      }
    }

    for (const auto& [key, on] : active) {
      if (warnings) {
        warnings->push_back("dangling note-on pitch " + std::to_string(key.second) +
                            " in track " + std::to_string(track_index) +
                            "; truncated at track end");
      }
      score.notes.push_back({key.second, on.first, std::max(1L, tick - on.first),
                             on.second, track_index});
    }
    r.pos = track_end;
    ++track_index;
  }

  merge_same_pitch_overlaps(score.notes);
  score.sort_notes();
  return score;
}

std::vector<std::uint8_t> write_midi(const Score& score) {
  int max_track = 0;
  for (const MidiNote& n : score.notes) max_track = std::max(max_track, n.track);
  const int ntrks = max_track + 1;

  ByteWriter w;
  w.tag("MThd");
  w.u32(6);
  w.u16(1);  // format 1
  w.u16(static_cast<std::uint16_t>(ntrks));
  w.u16(static_cast<std::uint16_t>(score.ticks_per_quarter));

  for (int t = 0; t < ntrks; ++t) {
    // Event list: (tick, order, pitch, velocity). Note-offs sort before
    // note-ons at the same tick so abutting notes round-trip exactly.
    struct Ev {
      long tick;
      int order;  // 0 = note off, 1 = note on
      int pitch;
      int velocity;
    };
    std::vector<Ev> events;
    for (const MidiNote& n : score.notes) {
      if (n.track != t) continue;
      events.push_back({n.onset, 1, n.pitch, n.velocity});
      events.push_back({n.onset + n.duration, 0, n.pitch, 64});
    }
    std::sort(events.begin(), events.end(), [](const Ev& a, const Ev& b) {
      return std::tie(a.tick, a.order, a.pitch) < std::tie(b.tick, b.order, b.pitch);
    });

    ByteWriter body;
    if (t == 0) {
      body.vlq(0);  // time signature
      body.u8(0xff); body.u8(0x58); body.u8(4);
      body.u8(static_cast<std::uint8_t>(score.time_signature.numerator));
      int den_pow = 0;
      while ((1 << den_pow) < score.time_signature.denominator) ++den_pow;
      body.u8(static_cast<std::uint8_t>(den_pow));
      body.u8(24); body.u8(8);
      body.vlq(0);  // tempo 120 bpm
      body.u8(0xff); body.u8(0x51); body.u8(3);
      body.u8(0x07); body.u8(0xa1); body.u8(0x20);
    }
    long tick = 0;
    for (const Ev& e : events) {
      body.vlq(static_cast<std::uint32_t>(e.tick - tick));
      tick = e.tick;
      body.u8(e.order ? 0x90 : 0x80);
      body.u8(static_cast<std::uint8_t>(e.pitch));
      body.u8(static_cast<std::uint8_t>(e.velocity));
    }
    body.vlq(0);  // end of track
    body.u8(0xff); body.u8(0x2f); body.u8(0);

    w.tag("MTrk");
    w.u32(static_cast<std::uint32_t>(body.out.size()));
    w.out.insert(w.out.end(), body.out.begin(), body.out.end());
  }
  return w.out;
}

namespace {

// Nearest integer to a/b with ties rounding down (a, b >= 0).
long round_half_down(long a, long b) {
  const long q = a / b;
  const long r = a % b;
  return q + (2 * r > b ? 1 : 0);
}

}  // namespace

void QuantizedScore::rebuild_bars(int min_bars) {
  int needed = min_bars;
  for (const GridNote& n : notes) {
    const int end = n.onset + n.duration;
    needed = std::max(needed, (end + steps_per_bar - 1) / steps_per_bar);
  }
  bar_count = needed;
  bars.assign(static_cast<std::size_t>(bar_count), Bar{});
  for (int b = 0; b < bar_count; ++b) bars[static_cast<std::size_t>(b)] = Bar(b, steps_per_bar);
  for (const GridNote& n : notes) {
    bars[static_cast<std::size_t>(n.onset / steps_per_bar)].set_cell(n.onset % steps_per_bar, n.pitch);
    for (int s = n.onset + 1; s < n.onset + n.duration; ++s) {
      bars[static_cast<std::size_t>(s / steps_per_bar)].set_sus(s % steps_per_bar, n.pitch);
    }
  }
}

QuantizedScore quantize(const Score& score) {
  const int den = score.time_signature.denominator;
  if (den != 1 && den != 2 && den != 4 && den != 8 && den != 16) {
    throw Error(Errc::UnsupportedTimeSignature,
                "denominator must be one of 1, 2, 4, 8, 16");
  }
  if (score.ticks_per_quarter <= 0) throw Error(Errc::MalformedHeader, "ticks_per_quarter must be positive");

  QuantizedScore q;
  q.steps_per_bar = score.time_signature.numerator * (16 / den);

  // Each semiquaver is tpq/4 ticks; work in units of 4*onset / tpq to stay
  // in integer arithmetic.
  const long tpq = score.ticks_per_quarter;
  std::vector<GridNote> raw;
  raw.reserve(score.notes.size());
  for (const MidiNote& n : score.notes) {
    GridNote g;
    g.pitch = n.pitch;
    g.onset = static_cast<int>(round_half_down(4 * n.onset, tpq));
    g.duration = std::max(1, static_cast<int>(round_half_down(4 * n.duration, tpq)));
    g.velocity = n.velocity;
    raw.push_back(g);
  }

  // The piano roll has no track identity, so same-pitch overlaps are merged
  // across tracks; the earliest onset wins the velocity.
  std::stable_sort(raw.begin(), raw.end(), [](const GridNote& a, const GridNote& b) {
    return std::tie(a.pitch, a.onset) < std::tie(b.pitch, b.onset);
  });
  for (const GridNote& g : raw) {
    if (!q.notes.empty()) {
      GridNote& m = q.notes.back();
      if (m.pitch == g.pitch && g.onset < m.onset + m.duration) {
        m.duration = std::max(m.duration, g.onset + g.duration - m.onset);
        continue;
      }
    }
    q.notes.push_back(g);
  }
  std::sort(q.notes.begin(), q.notes.end(), [](const GridNote& a, const GridNote& b) {
    return std::tie(a.onset, a.pitch) < std::tie(b.onset, b.pitch);
  });

  q.rebuild_bars();
  return q;
}

Score dequantize(const QuantizedScore& q, int ticks_per_quarter) {
  if (ticks_per_quarter <= 0 || ticks_per_quarter % 4 != 0) {
    throw Error(Errc::ConfigInvalid, "ticks_per_quarter must be a positive multiple of 4");
  }
  const long step = ticks_per_quarter / 4;
  Score s;
  s.ticks_per_quarter = ticks_per_quarter;
  s.time_signature = {q.steps_per_bar / 4, 4};
  if (q.steps_per_bar % 4 != 0) s.time_signature = {q.steps_per_bar, 16};
  for (const GridNote& n : q.notes) {
    s.notes.push_back({n.pitch, n.onset * step, n.duration * step, n.velocity, 0});
  }
  s.sort_notes();
  return s;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::MissingInput, "cannot open " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::MissingInput, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

}  // namespace musicdiff
