#pragma once

#include <utility>
#include <vector>

#include "musicdiff/autodiff.hpp"
#include "musicdiff/notation.hpp"
#include "musicdiff/rng.hpp"
#include "musicdiff/sections.hpp"
#include "musicdiff/training.hpp"

namespace musicdiff {

// Structural dissimilarity of two pitch sequences:
//   1 - (2 mu_a mu_b + d1)(2 cov_ab + d2) / ((mu_a^2 + mu_b^2 + d1)(var_a + var_b + d2))
// with d1 = 0.01^2, d2 = 0.03^2. Sequences are truncated to their common
// length. Throws EmptyScope when either sequence is empty.
double ssim_loss(const std::vector<double>& cand, const std::vector<double>& other);

struct CandidateWindow {
  double center = 0.0;     // semiquaver grid position of the anchor centre
  int size_bars = 1;       // whole bars
  ad::Vec class_probs;     // 10, sums to 1
  double refine_center = 0.0;  // regression offsets in bar units
  double refine_size = 0.0;

  double refined_center() const { return center + 16.0 * refine_center; }
  double refined_size() const { return 16.0 * size_bars + 16.0 * refine_size; }
  double start() const { return refined_center() - 0.5 * refined_size(); }
  double end() const { return refined_center() + 0.5 * refined_size(); }
  double confidence() const { return class_probs.size() ? class_probs.maxCoeff() : 0.0; }
  int label() const;
};

enum class PadStrategy { L2R, Global };

struct FragLossTerms {
  double cls = 0.0;   // per-window means
  double reg = 0.0;
  double ssim = 0.0;
  double total = 0.0;
};

struct FragEvalReport {
  double iou = 0.0;
  double uar = 0.0;
  double rmse = 0.0;
  double r2 = 0.0;
};

struct FragExample {
  QuantizedScore score;
  std::vector<SectionAnnotation> sections;
};

constexpr int kWindowFeatureDim = 35;

// 35-dim window descriptor: normalized onset pitch-class histogram (12),
// onset density over 16 equal window slices (16), mean and std pitch scaled
// by 1/127 (2), chord changes per bar (1), pitch-class contrast across the
// left and right window edges (2), and first/last-bar novelty against the
// whole window (2). The edge and novelty terms let the model tell complete
// sections from fragments and locate the misaligned side, which pure
// in-window statistics cannot.
ad::Vec window_features(const QuantizedScore& q, const std::vector<int>& chords, int start_bar,
                        int bars);

// Class-probability source for candidate search; lets tests drive the search
// with handcrafted oracles.
using WindowScorer = std::function<ad::Vec(int start_bar, int bars)>;

// Places exactly `m` non-overlapping whole-bar windows maximizing total
// best-class confidence. L2R fills greedily left to right; Global is an exact
// dynamic program. Ties prefer larger windows, then smaller centres.
std::vector<CandidateWindow> propose_windows(int piece_bars, int m, PadStrategy strategy,
                                             int max_window_bars, const WindowScorer& scorer);

// Supervised training anchor. Section anchors train the classifier and the
// regression head; RegOnly (jittered) anchors train only the regression
// head; Background windows (fragments of or spans across sections) are
// pushed toward uniform class probabilities.
struct FragAnchor {
  enum class Role { Section, RegOnly, Background };
  int start_bar = 0;
  int bars = 1;
  Role role = Role::Section;
};

struct FragConfig {
  int hidden = 32;
  int windows = 4;             // M used by fragment()
  PadStrategy strategy = PadStrategy::Global;
  int max_window_bars = 16;
  int train_steps = 400;
  bool use_adam = true;        // full-batch; false = plain gradient descent
  double lr = 0.02;
  int jitter_bars = 1;
  std::uint64_t seed = 1;
};

// FSL-V2: a two-layer classifier over window features plus a (center, size)
// regression head, with bar-aligned candidate search.
class FragmentationModel {
public:
  explicit FragmentationModel(const FragConfig& cfg = {});

  const FragConfig& config() const { return cfg_; }
  FragConfig& config() { return cfg_; }
  ParamList named_params();

  // Softmax class probabilities for one feature vector.
  ad::Vec classify(const ad::Vec& features) const;
  // Refinement offsets (center, size) in bar units.
  std::pair<double, double> regress(const ad::Vec& features) const;

  // Candidate search driven by this model's classifier, with regression
  // refinements attached to each returned window.
  std::vector<CandidateWindow> propose(const QuantizedScore& q, const std::vector<int>& chords,
                                       int m, PadStrategy strategy) const;

  // Full inference: propose, refine, clip, and resolve gaps/overlaps into a
  // disjoint annotation cover of the piece.
  std::vector<SectionAnnotation> fragment(const QuantizedScore& q) const;

  struct TrainStats {
    std::vector<double> losses;
  };
  // Supervised training against annotated pieces (full-batch GD so the loss
  // trace is smooth). Anchors are ground-truth windows, jittered copies for
  // the regression head, and background sub-/spanning windows.
  TrainStats train(const std::vector<FragExample>& corpus, Rng& rng);

  // Tape version of the training loss on fixed anchors; exposed so gradients
  // can be checked against finite differences.
  ad::Var loss_on_tape(ad::Tape& tape, const std::vector<ad::Var>& param_vars,
                       const FragExample& example, const std::vector<FragAnchor>& anchors) const;

private:
  FragConfig cfg_;
  ad::Mat w1_, b1_, w2_, b2_;  // classifier: features -> hidden -> 10
  ad::Mat wr_, br_;            // regression head: hidden -> 2 (reuses layer 1)
};

// Candidate search over an event stream (decoded internally to the grid).
std::vector<CandidateWindow> propose_candidates(const std::vector<EventToken>& events, int m,
                                                PadStrategy strategy,
                                                const FragmentationModel& model);

// Hybrid classification + regression + structural-similarity loss of
// predicted windows against ground truth, matched one-to-one by descending
// IoU. Unmatched predictions contribute a background confidence penalty and
// skip the regression and SSIM terms.
FragLossTerms hybrid_loss(const std::vector<CandidateWindow>& preds,
                          const std::vector<SectionAnnotation>& gt, const QuantizedScore& piece);

// IoU / UAR / boundary RMSE (semiquavers) / boundary R^2 over a piece set.
FragEvalReport eval_fragmentation(const std::vector<std::vector<SectionAnnotation>>& preds,
                                  const std::vector<std::vector<SectionAnnotation>>& gt);

std::string sections_to_json(const std::vector<SectionAnnotation>& sections);
std::vector<SectionAnnotation> sections_from_json(const std::string& text);

}  // namespace musicdiff
