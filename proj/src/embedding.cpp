#include "musicdiff/embedding.hpp"

#include <algorithm>
#include <cmath>

namespace musicdiff {

namespace {

ad::Mat gaussian(int rows, int cols, double scale, Rng& rng) {
  ad::Mat m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = scale * rng.normal();
  return m;
}

}  // namespace

PitchEmbeddingParams PitchEmbeddingParams::init(int dim, Rng& rng) {
  PitchEmbeddingParams p;
  p.pitch_class_table = gaussian(dim, 12, 1.0, rng);
  p.octave_direction = gaussian(dim, 1, 1.0, rng);
  return p;
}

ad::Vec embed_note(int pitch, const PitchEmbeddingParams& params) {
  if (pitch < 0 || pitch > 127) {
    throw Error(Errc::PitchOutOfRange, "pitch " + std::to_string(pitch));
  }
  return params.pitch_class_table.col(pitch % 12) +
         static_cast<double>(pitch / 12) * params.octave_direction.col(0);
}

int decode_note(const ad::Vec& z, const PitchEmbeddingParams& params) {
  int best = 0;
  double best_d = (z - embed_note(0, params)).squaredNorm();
  for (int p = 1; p < 128; ++p) {
    const double d = (z - embed_note(p, params)).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = p;
    }
  }
  return best;
}

ad::Vec TripletLatent::concat() const {
  ad::Vec out(zn.size() + zc.size() + zs.size());
  out << zn, zc, zs;
  return out;
}

SemanticEncoders SemanticEncoders::init(int dim, Rng& rng) {
  SemanticEncoders e;
  const double s = 1.0 / std::sqrt(static_cast<double>(dim));
  e.pitch = PitchEmbeddingParams::init(dim, rng);
  e.pitch.pitch_class_table *= s;
  e.pitch.octave_direction *= s;
  e.chord_table = gaussian(dim, 49, s, rng);
  e.section_table = gaussian(dim, 10, s, rng);
  e.w_note = gaussian(dim, dim, s, rng);
  e.b_note = ad::Mat::Zero(dim, 1);
  e.w_chord = gaussian(dim, 2 * dim, s, rng);
  e.b_chord = ad::Mat::Zero(dim, 1);
  e.w_section = gaussian(dim, 2 * dim, s, rng);
  e.b_section = ad::Mat::Zero(dim, 1);
  e.proj_cn_ctx = gaussian(dim, dim, s, rng);
  e.proj_cn_tgt = gaussian(dim, dim, s, rng);
  e.proj_sc_ctx = gaussian(dim, dim, s, rng);
  e.proj_sc_tgt = gaussian(dim, dim, s, rng);
  e.log_tau_cn = ad::Mat::Zero(1, 1);
  e.log_tau_sc = ad::Mat::Zero(1, 1);
  return e;
}

ParamList SemanticEncoders::named_params() {
  return {
      {"pitch_class_table", &pitch.pitch_class_table},
      {"octave_direction", &pitch.octave_direction},
      {"chord_table", &chord_table},
      {"section_table", &section_table},
      {"w_note", &w_note},
      {"b_note", &b_note},
      {"w_chord", &w_chord},
      {"b_chord", &b_chord},
      {"w_section", &w_section},
      {"b_section", &b_section},
      {"proj_cn_ctx", &proj_cn_ctx},
      {"proj_cn_tgt", &proj_cn_tgt},
      {"proj_sc_ctx", &proj_sc_ctx},
      {"proj_sc_tgt", &proj_sc_tgt},
      {"log_tau_cn", &log_tau_cn},
      {"log_tau_sc", &log_tau_sc},
  };
}

namespace {

void check_chord_index(int chord) {
  if (chord < 0 || chord > kNoChord) throw Error(Errc::ConfigInvalid, "chord index out of range");
}
void check_section_index(int s) {
  if (s < 0 || s >= kSectionClasses) throw Error(Errc::ConfigInvalid, "section index out of range");
}

}  // namespace

ad::Vec SemanticEncoders::encode_note(int pitch_index) const {
  return (w_note * embed_note(pitch_index, pitch) + b_note.col(0)).array().tanh().matrix();
}

ad::Vec SemanticEncoders::encode_chord(int note_pitch, int chord_index) const {
  return encode_chord_pooled({note_pitch}, chord_index);
}

ad::Vec SemanticEncoders::encode_section(int chord_index, int section_index) const {
  return encode_section_pooled({chord_index}, section_index);
}

ad::Vec SemanticEncoders::encode_chord_pooled(const std::vector<int>& context_pitches,
                                              int chord_index) const {
  check_chord_index(chord_index);
  const int d = dim();
  ad::Vec ctx = ad::Vec::Zero(d);
  if (!chord_ignores_note && !context_pitches.empty()) {
    for (int p : context_pitches) ctx += embed_note(p, pitch);
    ctx /= static_cast<double>(context_pitches.size());
  }
  ad::Vec joint(2 * d);
  joint << ctx, chord_table.col(chord_index);
  return (w_chord * joint + b_chord.col(0)).array().tanh().matrix();
}

ad::Vec SemanticEncoders::encode_section_pooled(const std::vector<int>& context_chords,
                                                int section_index) const {
  check_section_index(section_index);
  const int d = dim();
  ad::Vec ctx = ad::Vec::Zero(d);
  if (!section_ignores_chord && !context_chords.empty()) {
    for (int c : context_chords) {
      check_chord_index(c);
      ctx += chord_table.col(c);
    }
    ctx /= static_cast<double>(context_chords.size());
  }
  ad::Vec joint(2 * d);
  joint << ctx, section_table.col(section_index);
  return (w_section * joint + b_section.col(0)).array().tanh().matrix();
}

TripletLatent SemanticEncoders::encode_triplet(const Triplet& t) const {
  TripletLatent z;
  z.zn = encode_note(t.note);
  z.zc = encode_chord(t.note, t.chord);
  z.zs = encode_section(t.chord, t.section);
  return z;
}

ad::Var jsp_symmetric_loss(ad::Tape& tape, ad::Var context_features, ad::Var target_features,
                           ad::Var log_tau) {
  const Eigen::Index batch = tape.val(context_features).cols();
  if (batch < 2) throw Error(Errc::InsufficientCorpus, "contrastive batch needs >= 2 pairs");
  const ad::Var u = tape.l2_normalize_cols(context_features);
  const ad::Var w = tape.l2_normalize_cols(target_features);
  const ad::Var sims = tape.matmul(tape.transpose(u), w);  // B x B, row = context
  const ad::Var scaled = tape.scale_by_scalar(sims, tape.exp(log_tau));
  std::vector<int> diag(static_cast<std::size_t>(batch));
  for (Eigen::Index i = 0; i < batch; ++i) diag[static_cast<std::size_t>(i)] = static_cast<int>(i);
  const ad::Var by_cols = tape.cross_entropy_cols(scaled, diag);
  const ad::Var by_rows = tape.cross_entropy_cols(tape.transpose(scaled), diag);
  return tape.scale(tape.add(by_cols, by_rows), 0.5);
}

namespace {

struct JspPair {
  std::vector<int> note_context;
  int chord = 0;
  std::vector<int> chord_context;
  int section = 0;
};

JspPair sample_pair(const std::vector<std::vector<Triplet>>& corpus, const JspConfig& cfg,
                    Rng& rng) {
  const auto& seq = corpus[rng.uniform_int(corpus.size())];
  const int i = static_cast<int>(rng.uniform_int(seq.size()));
  JspPair pair;
  pair.chord = seq[static_cast<std::size_t>(i)].chord;
  pair.section = seq[static_cast<std::size_t>(i)].section;
  const int lo = std::max(0, i - cfg.context_radius);
  const int hi = std::min<int>(static_cast<int>(seq.size()) - 1, i + cfg.context_radius);
  for (int j = lo; j <= hi; ++j) {
    if (static_cast<int>(pair.note_context.size()) < cfg.max_note_context) {
      pair.note_context.push_back(seq[static_cast<std::size_t>(j)].note);
    }
    if (static_cast<int>(pair.chord_context.size()) < cfg.max_chord_context) {
      pair.chord_context.push_back(seq[static_cast<std::size_t>(j)].chord);
    }
  }
  return pair;
}

}  // namespace

JspStats jsp_pretrain(SemanticEncoders& enc, const std::vector<std::vector<Triplet>>& corpus,
                      const JspConfig& config, Rng& rng) {
  std::size_t total = 0;
  for (const auto& seq : corpus) total += seq.size();
  if (total < 2) throw Error(Errc::InsufficientCorpus, "need at least two triplets to form a batch");
  const int batch = std::max(2, std::min<int>(config.batch, static_cast<int>(total)));

  const int d = enc.dim();
  Adam opt(config.lr);
  JspStats stats;

  for (int step = 0; step < config.steps; ++step) {
    std::vector<JspPair> pairs;
    pairs.reserve(static_cast<std::size_t>(batch));
    for (int b = 0; b < batch; ++b) pairs.push_back(sample_pair(corpus, config, rng));

    ad::Tape tape;
    ParamList params = enc.named_params();
    const std::vector<ad::Var> pvars = push_params(tape, params);
    const ad::Var table = pvars[0], octave = pvars[1], chords = pvars[2], sections = pvars[3];
    const ad::Var p_cn_ctx = pvars[10], p_cn_tgt = pvars[11];
    const ad::Var p_sc_ctx = pvars[12], p_sc_tgt = pvars[13];
    const ad::Var tau_cn = pvars[14], tau_sc = pvars[15];

    // Mean-pooled note context per pair, expressed through the embedding
    // leaves so the tables receive gradients.
    std::vector<ad::Var> note_ctx_cols, chord_tgt_cols, chord_ctx_cols, section_tgt_cols;
    for (const JspPair& pair : pairs) {
      std::vector<int> pcs, octs;
      for (int p : pair.note_context) {
        pcs.push_back(p % 12);
        octs.push_back(p / 12);
      }
      ad::Var pooled = tape.mean_cols(tape.gather_cols(table, pcs));
      double mean_oct = 0;
      for (int o : octs) mean_oct += o;
      mean_oct /= static_cast<double>(octs.size());
      pooled = tape.add(pooled, tape.scale(octave, mean_oct));
      note_ctx_cols.push_back(pooled);
      chord_tgt_cols.push_back(tape.gather_cols(chords, {pair.chord}));
      chord_ctx_cols.push_back(tape.mean_cols(tape.gather_cols(chords, pair.chord_context)));
      section_tgt_cols.push_back(tape.gather_cols(sections, {pair.section}));
    }
    const ad::Var cn_ctx = tape.matmul(p_cn_ctx, tape.hcat(note_ctx_cols));
    const ad::Var cn_tgt = tape.matmul(p_cn_tgt, tape.hcat(chord_tgt_cols));
    const ad::Var sc_ctx = tape.matmul(p_sc_ctx, tape.hcat(chord_ctx_cols));
    const ad::Var sc_tgt = tape.matmul(p_sc_tgt, tape.hcat(section_tgt_cols));

    const ad::Var loss = tape.add(jsp_symmetric_loss(tape, cn_ctx, cn_tgt, tau_cn),
                                  jsp_symmetric_loss(tape, sc_ctx, sc_tgt, tau_sc));
    stats.losses.push_back(tape.scalar(loss));
    tape.backward(loss);
    opt.step(params, collect_grads(tape, pvars));
  }
  (void)d;
  return stats;
}

}  // namespace musicdiff
