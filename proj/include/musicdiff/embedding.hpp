#pragma once

#include <vector>

#include "musicdiff/autodiff.hpp"
#include "musicdiff/notation.hpp"
#include "musicdiff/rng.hpp"
#include "musicdiff/training.hpp"

namespace musicdiff {

// Pitch embedding built so that octave structure is architectural rather than
// learned: embed(p) = pitch_class_table[p mod 12] + floor(p / 12) * octave.
// Shifting a pitch by an octave therefore always moves it by the same vector,
// and equal intervals map to equal embedding differences in the same octave
// register, for any parameter values.
struct PitchEmbeddingParams {
  ad::Mat pitch_class_table;  // D x 12
  ad::Mat octave_direction;   // D x 1

  int dim() const { return static_cast<int>(pitch_class_table.rows()); }
  static PitchEmbeddingParams init(int dim, Rng& rng);
};

ad::Vec embed_note(int pitch, const PitchEmbeddingParams& params);

// Nearest-neighbour fallback decoder over the 128-point embedding lattice;
// ties resolve to the lower pitch. Total on any input vector.
int decode_note(const ad::Vec& z, const PitchEmbeddingParams& params);

struct TripletLatent {
  ad::Vec zn, zc, zs;

  ad::Vec concat() const;
};

// The three semantic encoders sharing one embedding space of width D.
// Contrastive towers are purely linear; the z-encoders are affine + tanh.
struct SemanticEncoders {
  PitchEmbeddingParams pitch;
  ad::Mat chord_table;    // D x 49 (48 chords + no-chord)
  ad::Mat section_table;  // D x 10

  ad::Mat w_note, b_note;        // D x D, D x 1
  ad::Mat w_chord, b_chord;      // D x 2D, D x 1
  ad::Mat w_section, b_section;  // D x 2D, D x 1

  ad::Mat proj_cn_ctx, proj_cn_tgt;  // note-context / chord towers, D x D
  ad::Mat proj_sc_ctx, proj_sc_tgt;  // chord-context / section towers, D x D
  ad::Mat log_tau_cn, log_tau_sc;    // 1 x 1 learned inverse-temperature logs

  // Ablation switches: zero the context half of the joint encoder inputs.
  bool chord_ignores_note = false;
  bool section_ignores_chord = false;

  int dim() const { return pitch.dim(); }
  static SemanticEncoders init(int dim, Rng& rng);
  ParamList named_params();

  ad::Vec encode_note(int pitch_index) const;
  ad::Vec encode_chord(int note_pitch, int chord_index) const;
  ad::Vec encode_section(int chord_index, int section_index) const;

  // Pooled variants used when encoding whole pieces: the context input is the
  // mean embedding over co-occurring material (empty context pools to zero).
  ad::Vec encode_chord_pooled(const std::vector<int>& context_pitches, int chord_index) const;
  ad::Vec encode_section_pooled(const std::vector<int>& context_chords, int section_index) const;

  TripletLatent encode_triplet(const Triplet& t) const;
};

// Symmetric contrastive loss over one batch of positive pairs: both towers
// are L2-normalized, similarities scaled by exp(log_tau), and the loss is the
// mean of row-wise and column-wise cross entropy against the diagonal.
ad::Var jsp_symmetric_loss(ad::Tape& tape, ad::Var context_features, ad::Var target_features,
                           ad::Var log_tau);

struct JspConfig {
  int steps = 200;
  int batch = 32;
  double lr = 4e-4;
  int context_radius = 8;
  int max_note_context = 2048;
  int max_chord_context = 256;
  int max_section_context = 32;
};

struct JspStats {
  std::vector<double> losses;  // per step: cn + sc
};

// Joint semantic pre-training over triplet sequences: trains the JSP-CN
// (note-context, chord) and JSP-SC (chord-context, section) heads with Adam,
// updating the shared tables in place.
JspStats jsp_pretrain(SemanticEncoders& enc, const std::vector<std::vector<Triplet>>& corpus,
                      const JspConfig& config, Rng& rng);

}  // namespace musicdiff
