#include "musicdiff/fragmentation.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include <json.hpp>

namespace musicdiff {

double ssim_loss(const std::vector<double>& cand, const std::vector<double>& other) {
  const std::size_t n = std::min(cand.size(), other.size());
  if (n == 0) throw Error(Errc::EmptyScope, "ssim_loss needs non-empty sequences");
  constexpr double d1 = 0.01 * 0.01;
  constexpr double d2 = 0.03 * 0.03;
  double mu_a = 0, mu_b = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mu_a += cand[i];
    mu_b += other[i];
  }
  mu_a /= static_cast<double>(n);
  mu_b /= static_cast<double>(n);
  double var_a = 0, var_b = 0, cov = 0;
  for (std::size_t i = 0; i < n; ++i) {
    var_a += (cand[i] - mu_a) * (cand[i] - mu_a);
    var_b += (other[i] - mu_b) * (other[i] - mu_b);
    cov += (cand[i] - mu_a) * (other[i] - mu_b);
  }
  var_a /= static_cast<double>(n);
  var_b /= static_cast<double>(n);
  cov /= static_cast<double>(n);
  const double num = (2.0 * mu_a * mu_b + d1) * (2.0 * cov + d2);
  const double den = (mu_a * mu_a + mu_b * mu_b + d1) * (var_a + var_b + d2);
  return 1.0 - num / den;
}

int CandidateWindow::label() const {
  int best = 0;
  for (int c = 1; c < class_probs.size(); ++c)
    if (class_probs(c) > class_probs(best)) best = c;
  return best;
}

ad::Vec window_features(const QuantizedScore& q, const std::vector<int>& chords, int start_bar,
                        int bars) {
  if (bars < 1 || start_bar < 0 || start_bar + bars > q.bar_count) {
    throw Error(Errc::ConfigInvalid, "window outside the piece");
  }
  const int steps = q.steps_per_bar;
  const int w_start = start_bar * steps;
  const int w_end = (start_bar + bars) * steps;

  ad::Vec f = ad::Vec::Zero(kWindowFeatureDim);
  double count = 0, pitch_sum = 0, pitch_sq = 0;
  for (const GridNote& n : q.notes) {
    if (n.onset < w_start || n.onset >= w_end) continue;
    f(n.pitch % 12) += 1.0;
    const int slice = std::min<int>(15, (n.onset - w_start) * 16 / (w_end - w_start));
    f(12 + slice) += 1.0;
    pitch_sum += n.pitch;
    pitch_sq += static_cast<double>(n.pitch) * n.pitch;
    count += 1.0;
  }
  if (count > 0) {
    f.head(12) /= count;
    const double mean = pitch_sum / count;
    f(28) = mean / 127.0;
    f(29) = std::sqrt(std::max(0.0, pitch_sq / count - mean * mean)) / 127.0;
  }
  // Onset density per slice: onsets divided by steps covered by the slice.
  const double steps_per_slice = static_cast<double>(w_end - w_start) / 16.0;
  f.segment(12, 16) /= steps_per_slice;

  int changes = 0;
  for (int b = start_bar + 1; b < start_bar + bars && b < static_cast<int>(chords.size()); ++b) {
    changes += chords[static_cast<std::size_t>(b)] != chords[static_cast<std::size_t>(b - 1)];
  }
  f(30) = static_cast<double>(changes) / static_cast<double>(bars);

  // Total-variation distance between normalized per-bar pitch-class
  // histograms on each side of a window edge; piece boundaries count as
  // maximal contrast.
  auto bar_hist = [&](int bar) {
    ad::Vec h = ad::Vec::Zero(12);
    for (const GridNote& n : q.notes) {
      if (n.onset >= bar * steps && n.onset < (bar + 1) * steps) h(n.pitch % 12) += 1.0;
    }
    const double total = h.sum();
    if (total > 0) h /= total;
    return h;
  };
  auto contrast = [&](int inside_bar, int outside_bar) {
    if (outside_bar < 0 || outside_bar >= q.bar_count) return 1.0;
    const ad::Vec hi = bar_hist(inside_bar);
    const ad::Vec ho = bar_hist(outside_bar);
    if (hi.sum() == 0.0 && ho.sum() == 0.0) return 0.0;
    if (hi.sum() == 0.0 || ho.sum() == 0.0) return 1.0;
    return 0.5 * (hi - ho).cwiseAbs().sum();
  };
  f(31) = contrast(start_bar, start_bar - 1);
  f(32) = contrast(start_bar + bars - 1, start_bar + bars);

  ad::Vec window_hist = f.head(12);
  auto novelty = [&](int bar) {
    const ad::Vec h = bar_hist(bar);
    if (h.sum() == 0.0 && window_hist.sum() == 0.0) return 0.0;
    if (h.sum() == 0.0 || window_hist.sum() == 0.0) return 1.0;
    return 0.5 * (h - window_hist).cwiseAbs().sum();
  };
  f(33) = novelty(start_bar);
  f(34) = novelty(start_bar + bars - 1);
  return f;
}

namespace {

ad::Mat gaussian(int rows, int cols, double scale, Rng& rng) {
  ad::Mat m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = scale * rng.normal();
  return m;
}

ad::Vec softmax(const ad::Vec& x) {
  const double m = x.maxCoeff();
  ad::Vec e = (x.array() - m).exp().matrix();
  return e / e.sum();
}

}  // namespace

FragmentationModel::FragmentationModel(const FragConfig& cfg) : cfg_(cfg) {
  Rng rng(cfg.seed);
  const double s1 = 1.0 / std::sqrt(static_cast<double>(kWindowFeatureDim));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(cfg.hidden));
  w1_ = gaussian(cfg.hidden, kWindowFeatureDim, s1, rng);
  b1_ = ad::Mat::Zero(cfg.hidden, 1);
  w2_ = gaussian(kSectionClasses, cfg.hidden, s2, rng);
  b2_ = ad::Mat::Zero(kSectionClasses, 1);
  wr_ = gaussian(2, kWindowFeatureDim, 0.1 * s1, rng);
  br_ = ad::Mat::Zero(2, 1);
}

ParamList FragmentationModel::named_params() {
  return {{"w1", &w1_}, {"b1", &b1_}, {"w2", &w2_}, {"b2", &b2_}, {"wr", &wr_}, {"br", &br_}};
}

ad::Vec FragmentationModel::classify(const ad::Vec& features) const {
  const ad::Vec h = (w1_ * features + b1_.col(0)).array().tanh().matrix();
  return softmax(w2_ * h + b2_.col(0));
}

std::pair<double, double> FragmentationModel::regress(const ad::Vec& features) const {
  const ad::Vec o = wr_ * features + br_.col(0);
  return {o(0), o(1)};
}

std::vector<CandidateWindow> propose_windows(int piece_bars, int m, PadStrategy strategy,
                                             int max_window_bars, const WindowScorer& scorer) {
  const int bars = piece_bars;
  if (m < 1 || bars < 1 || m > bars) {
    throw Error(Errc::InfeasibleM,
                "cannot place " + std::to_string(m) + " windows in " + std::to_string(bars) + " bars");
  }
  const int max_size = std::min(bars, max_window_bars);

  // probs[start][size-1]; conf = best-class probability.
  std::vector<std::vector<ad::Vec>> probs(static_cast<std::size_t>(bars));
  std::vector<std::vector<double>> conf(static_cast<std::size_t>(bars));
  for (int a = 0; a < bars; ++a) {
    for (int s = 1; s <= max_size && a + s <= bars; ++s) {
      probs[static_cast<std::size_t>(a)].push_back(scorer(a, s));
      conf[static_cast<std::size_t>(a)].push_back(probs[static_cast<std::size_t>(a)].back().maxCoeff());
    }
  }

  auto make_window = [&](int a, int s) {
    CandidateWindow w;
    w.center = (a + 0.5 * s) * 16.0;
    w.size_bars = s;
    w.class_probs = probs[static_cast<std::size_t>(a)][static_cast<std::size_t>(s - 1)];
    return w;
  };

  std::vector<std::pair<int, int>> chosen;  // (start, size)

  if (strategy == PadStrategy::L2R) {
    int cursor = 0;
    for (int placed = 0; placed < m; ++placed) {
      const int remaining = m - placed - 1;
      // Best (confidence, larger size, smaller centre) with room left for
      // one bar per remaining window.
      std::tuple<double, int, double> best{-1.0, 0, 0.0};
      int best_a = -1, best_s = 0;
      for (int a = cursor; a < bars - remaining; ++a) {
        for (int s = 1; s <= max_size && a + s <= bars - remaining; ++s) {
          const double c = conf[static_cast<std::size_t>(a)][static_cast<std::size_t>(s - 1)];
          const std::tuple<double, int, double> key{c, s, -(a + 0.5 * s)};
          if (best_a < 0 || key > best) {
            best = key;
            best_a = a;
            best_s = s;
          }
        }
      }
      chosen.emplace_back(best_a, best_s);
      cursor = best_a + best_s;
    }
  } else {
    // Exact DP over (bars used, windows placed); lexicographic value
    // (total confidence, covered bars, -sum of centres).
    struct Cell {
      double score = -1e300;
      int covered = 0;
      double neg_centers = 0;
      int from_size = 0;  // 0 = bar left uncovered
      bool reachable = false;
    };
    std::vector<std::vector<Cell>> dp(static_cast<std::size_t>(bars + 1),
                                      std::vector<Cell>(static_cast<std::size_t>(m + 1)));
    dp[0][0] = {0.0, 0, 0.0, 0, true};
    for (int b = 1; b <= bars; ++b) {
      for (int k = 0; k <= m; ++k) {
        Cell best = dp[static_cast<std::size_t>(b - 1)][static_cast<std::size_t>(k)];
        best.from_size = 0;
        for (int s = 1; k >= 1 && s <= max_size && s <= b; ++s) {
          const Cell& prev = dp[static_cast<std::size_t>(b - s)][static_cast<std::size_t>(k - 1)];
          if (!prev.reachable) continue;
          Cell cand;
          cand.reachable = true;
          cand.score = prev.score + conf[static_cast<std::size_t>(b - s)][static_cast<std::size_t>(s - 1)];
          cand.covered = prev.covered + s;
          cand.neg_centers = prev.neg_centers - ((b - s) + 0.5 * s);
          cand.from_size = s;
          const auto key = std::tie(cand.score, cand.covered, cand.neg_centers);
          const auto cur = std::tie(best.score, best.covered, best.neg_centers);
          if (!best.reachable || key > cur) best = cand;
        }
        dp[static_cast<std::size_t>(b)][static_cast<std::size_t>(k)] = best;
      }
    }
    int b = bars, k = m;
    while (b > 0) {
      const Cell& c = dp[static_cast<std::size_t>(b)][static_cast<std::size_t>(k)];
      if (!c.reachable) throw Error(Errc::InfeasibleM, "no feasible placement");
      if (c.from_size == 0) {
        --b;
      } else {
        chosen.emplace_back(b - c.from_size, c.from_size);
        b -= c.from_size;
        --k;
      }
    }
    std::reverse(chosen.begin(), chosen.end());
  }

  std::vector<CandidateWindow> out;
  out.reserve(chosen.size());
  for (const auto& [a, s] : chosen) out.push_back(make_window(a, s));
  return out;
}

std::vector<CandidateWindow> FragmentationModel::propose(const QuantizedScore& q,
                                                         const std::vector<int>& chords, int m,
                                                         PadStrategy strategy) const {
  std::vector<CandidateWindow> windows = propose_windows(
      q.bar_count, m, strategy, cfg_.max_window_bars,
      [&](int a, int s) { return classify(window_features(q, chords, a, s)); });
  for (CandidateWindow& w : windows) {
    const int a = static_cast<int>(std::lround(w.center / 16.0 - 0.5 * w.size_bars));
    const auto [dc, ds] = regress(window_features(q, chords, a, w.size_bars));
    w.refine_center = dc;
    w.refine_size = ds;
  }
  return windows;
}

std::vector<CandidateWindow> propose_candidates(const std::vector<EventToken>& events, int m,
                                                PadStrategy strategy,
                                                const FragmentationModel& model) {
  if (events.empty()) throw Error(Errc::EmptyInput, "empty event stream");
  std::vector<int> chords;
  const QuantizedScore q = decode_remi(events, &chords);
  return model.propose(q, chords, m, strategy);
}

std::vector<SectionAnnotation> FragmentationModel::fragment(const QuantizedScore& q) const {
  const std::vector<int> chords = recognize_chords(q);
  const int m = std::max(1, std::min(cfg_.windows, q.bar_count));
  std::vector<CandidateWindow> windows = propose(q, chords, m, cfg_.strategy);
  std::sort(windows.begin(), windows.end(),
            [](const CandidateWindow& a, const CandidateWindow& b) { return a.center < b.center; });

  const double piece_len = static_cast<double>(q.total_steps());
  std::vector<double> starts(windows.size()), ends(windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    starts[i] = std::clamp(windows[i].start(), 0.0, piece_len);
    ends[i] = std::clamp(windows[i].end(), 0.0, piece_len);
  }
  starts.front() = 0.0;
  ends.back() = piece_len;

  // Resolve each adjacent boundary: overlaps snap to the confidence-weighted
  // average of the two proposals; gaps go wholly to the more confident side.
  for (std::size_t i = 0; i + 1 < windows.size(); ++i) {
    const double ca = windows[i].confidence();
    const double cb = windows[i + 1].confidence();
    double boundary;
    if (ends[i] > starts[i + 1]) {
      boundary = (ca * ends[i] + cb * starts[i + 1]) / std::max(ca + cb, 1e-12);
    } else if (ends[i] < starts[i + 1]) {
      boundary = ca >= cb ? starts[i + 1] : ends[i];
    } else {
      boundary = ends[i];
    }
    boundary = std::clamp(boundary, starts[i] + 1.0, std::max(starts[i] + 1.0, ends[i + 1] - 1.0));
    ends[i] = boundary;
    starts[i + 1] = boundary;
  }

  std::vector<SectionAnnotation> out;
  int prev_end = 0;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    SectionAnnotation a;
    a.start = prev_end;
    a.end = i + 1 == windows.size() ? static_cast<int>(piece_len)
                                    : std::max(prev_end + 1, static_cast<int>(std::lround(ends[i])));
    a.end = std::min(a.end, static_cast<int>(piece_len) - static_cast<int>(windows.size() - i - 1));
    a.label = windows[i].label();
    prev_end = a.end;
    out.push_back(a);
  }
  validate_sections(out);
  return out;
}

namespace {

double interval_iou(double a0, double a1, double b0, double b1) {
  const double inter = std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
  const double uni = std::max(a1, b1) - std::min(a0, b0);
  return uni <= 0 ? 0.0 : inter / uni;
}

std::vector<double> pitch_scope(const QuantizedScore& q, double start, double end) {
  std::vector<double> pitches;
  const int s = static_cast<int>(std::lround(start));
  const int e = static_cast<int>(std::lround(end));
  for (const GridNote& n : q.notes) {
    if (n.onset >= s && n.onset < e) pitches.push_back(static_cast<double>(n.pitch));
  }
  return pitches;
}

// Greedy one-to-one matching by descending IoU; returns gt index per pred
// (-1 = background).
std::vector<int> match_by_iou(const std::vector<CandidateWindow>& preds,
                              const std::vector<SectionAnnotation>& gt) {
  struct Pair {
    double iou;
    std::size_t p, g;
  };
  std::vector<Pair> pairs;
  for (std::size_t p = 0; p < preds.size(); ++p) {
    for (std::size_t g = 0; g < gt.size(); ++g) {
      const double iou = interval_iou(preds[p].start(), preds[p].end(),
                                      static_cast<double>(gt[g].start), static_cast<double>(gt[g].end));
      if (iou > 0) pairs.push_back({iou, p, g});
    }
  }
  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    return std::tie(b.iou, a.p, a.g) < std::tie(a.iou, b.p, b.g);
  });
  std::vector<int> assignment(preds.size(), -1);
  std::vector<bool> taken(gt.size(), false);
  for (const Pair& pr : pairs) {
    if (assignment[pr.p] >= 0 || taken[pr.g]) continue;
    assignment[pr.p] = static_cast<int>(pr.g);
    taken[pr.g] = true;
  }
  return assignment;
}

}  // namespace

FragLossTerms hybrid_loss(const std::vector<CandidateWindow>& preds,
                          const std::vector<SectionAnnotation>& gt, const QuantizedScore& piece) {
  if (preds.empty() || gt.empty()) throw Error(Errc::EmptyInput, "hybrid_loss needs windows and truth");
  const std::vector<int> assignment = match_by_iou(preds, gt);

  FragLossTerms terms;
  for (std::size_t p = 0; p < preds.size(); ++p) {
    const CandidateWindow& w = preds[p];
    if (assignment[p] < 0) {
      // Background: penalize any confident class, skip regression and SSIM.
      terms.cls += -std::log(std::max(1.0 - w.confidence(), 1e-12));
      continue;
    }
    const SectionAnnotation& s = gt[static_cast<std::size_t>(assignment[p])];
    terms.cls += -std::log(std::max(w.class_probs(s.label), 1e-12));

    const double gt_center = 0.5 * (s.start + s.end);
    const double gt_size = static_cast<double>(s.end - s.start);
    auto huber = [](double d) { return std::abs(d) < 1.0 ? 0.5 * d * d : std::abs(d) - 0.5; };
    terms.reg += huber((w.refined_center() - gt_center) / 16.0) +
                 huber((w.refined_size() - gt_size) / 16.0);

    const std::vector<double> cand = pitch_scope(piece, w.start(), w.end());
    const std::vector<double> truth =
        pitch_scope(piece, static_cast<double>(s.start), static_cast<double>(s.end));
    if (!cand.empty() && !truth.empty()) terms.ssim += ssim_loss(cand, truth);
  }
  const double m = static_cast<double>(preds.size());
  terms.cls /= m;
  terms.reg /= m;
  terms.ssim /= m;
  terms.total = terms.cls + terms.reg + terms.ssim;
  return terms;
}

ad::Var FragmentationModel::loss_on_tape(ad::Tape& tape, const std::vector<ad::Var>& param_vars,
                                         const FragExample& example,
                                         const std::vector<FragAnchor>& anchors) const {
  const ad::Var w1 = param_vars[0], b1 = param_vars[1], w2 = param_vars[2], b2 = param_vars[3];
  const ad::Var wr = param_vars[4], br = param_vars[5];
  const std::vector<int> chords = recognize_chords(example.score);

  std::vector<ad::Var> cls_cols, reg_cols, bg_cols;
  std::vector<int> labels;
  std::vector<ad::Mat> reg_targets;
  double ssim_const = 0.0;
  int ssim_n = 0;

  for (const FragAnchor& anchor : anchors) {
    const ad::Vec f = window_features(example.score, chords, anchor.start_bar, anchor.bars);
    if (anchor.role == FragAnchor::Role::Background) {
      bg_cols.push_back(tape.leaf(ad::Mat(f)));
      continue;
    }

    // Anchor extents; the best-overlap section supplies the targets.
    const double w_start = anchor.start_bar * 16.0;
    const double w_end = (anchor.start_bar + anchor.bars) * 16.0;
    int best_g = 0;
    double best_iou = -1.0;
    for (std::size_t g = 0; g < example.sections.size(); ++g) {
      const double iou = interval_iou(w_start, w_end, example.sections[g].start, example.sections[g].end);
      if (iou > best_iou) {
        best_iou = iou;
        best_g = static_cast<int>(g);
      }
    }
    const SectionAnnotation& sec = example.sections[static_cast<std::size_t>(best_g)];

    reg_cols.push_back(tape.leaf(ad::Mat(f)));
    ad::Mat target(2, 1);
    target(0, 0) = (0.5 * (sec.start + sec.end) - 0.5 * (w_start + w_end)) / 16.0;
    target(1, 0) = ((sec.end - sec.start) - (w_end - w_start)) / 16.0;
    reg_targets.push_back(target);

    if (anchor.role == FragAnchor::Role::Section) {
      cls_cols.push_back(reg_cols.back());
      labels.push_back(sec.label);
      const auto cand = pitch_scope(example.score, w_start, w_end);
      const auto truth = pitch_scope(example.score, sec.start, sec.end);
      if (!cand.empty() && !truth.empty()) {
        ssim_const += ssim_loss(cand, truth);
        ++ssim_n;
      }
    }
  }
  if (cls_cols.empty()) throw Error(Errc::EmptyInput, "no section anchors");

  auto hidden_of = [&](const ad::Var& feats) {
    return tape.tanh(tape.add_colvec(tape.matmul(w1, feats), b1));
  };

  const ad::Var cls_hidden = hidden_of(tape.hcat(cls_cols));
  const ad::Var logits = tape.add_colvec(tape.matmul(w2, cls_hidden), b2);
  ad::Var loss = tape.cross_entropy_cols(logits, labels);

  const ad::Var offsets = tape.add_colvec(tape.matmul(wr, tape.hcat(reg_cols)), br);
  ad::Mat targets(2, static_cast<Eigen::Index>(reg_targets.size()));
  for (std::size_t i = 0; i < reg_targets.size(); ++i) targets.col(static_cast<Eigen::Index>(i)) = reg_targets[i];
  loss = tape.add(loss, tape.smooth_l1(offsets, tape.leaf(targets)));

  if (!bg_cols.empty()) {
    // Cross entropy against the uniform distribution drives background
    // windows toward confidence 1/10: mean over columns of lse - mean(logits).
    const ad::Var bg_logits = tape.add_colvec(tape.matmul(w2, hidden_of(tape.hcat(bg_cols))), b2);
    const ad::Var lse = tape.log_sum_exp_cols(bg_logits);
    const ad::Var col_means = tape.mean_cols(tape.transpose(bg_logits));
    loss = tape.add(loss, tape.mean(tape.sub(tape.transpose(lse), col_means)));
  }

  const double ssim_mean = ssim_n ? ssim_const / ssim_n : 0.0;
  return tape.add(loss, tape.leaf(ssim_mean));
}

FragmentationModel::TrainStats FragmentationModel::train(const std::vector<FragExample>& corpus,
                                                         Rng& rng) {
  if (corpus.empty()) throw Error(Errc::EmptyInput, "empty training corpus");
  TrainStats stats;
  ParamList params = named_params();

  // Fixed anchor sets: ground-truth windows, jittered copies for the
  // regression head, and background windows (section fragments and spans
  // across boundaries) so confidence peaks only on complete sections.
  std::vector<std::vector<FragAnchor>> anchor_sets;
  for (const FragExample& ex : corpus) {
    std::vector<FragAnchor> anchors;
    for (std::size_t si = 0; si < ex.sections.size(); ++si) {
      const SectionAnnotation& s = ex.sections[si];
      const int a = s.start / 16;
      const int size = std::max(1, (s.end - s.start) / 16);
      anchors.push_back({a, size, FragAnchor::Role::Section});
      for (int j = 0; j < cfg_.jitter_bars; ++j) {
        const int da = static_cast<int>(rng.uniform_int(3)) - 1;
        const int ds = static_cast<int>(rng.uniform_int(3)) - 1;
        const int na = std::clamp(a + da, 0, std::max(0, ex.score.bar_count - 1));
        const int ns = std::clamp(size + ds, 1, std::max(1, ex.score.bar_count - na));
        anchors.push_back({na, ns, FragAnchor::Role::RegOnly});
      }
      if (size >= 2) {
        // Strict fragments of the section.
        anchors.push_back({a, size / 2, FragAnchor::Role::Background});
        anchors.push_back({a + size / 2, size - size / 2, FragAnchor::Role::Background});
        anchors.push_back({a, 1, FragAnchor::Role::Background});
        anchors.push_back({a + size - 1, 1, FragAnchor::Role::Background});
        if (size >= 3) anchors.push_back({a + 1, size - 2, FragAnchor::Role::Background});
      }
      if (si + 1 < ex.sections.size()) {
        // Windows straddling the boundary.
        const int boundary_bar = ex.sections[si + 1].start / 16;
        anchors.push_back({std::max(0, boundary_bar - 1), 2, FragAnchor::Role::Background});
        if (boundary_bar >= 2 && boundary_bar + 2 <= ex.score.bar_count) {
          anchors.push_back({boundary_bar - 2, 4, FragAnchor::Role::Background});
        }
      }
    }
    anchor_sets.push_back(anchors);
  }

  Adam adam(cfg_.lr);
  for (int step = 0; step < cfg_.train_steps; ++step) {
    ad::Tape tape;
    const std::vector<ad::Var> pvars = push_params(tape, params);
    std::vector<ad::Var> piece_losses;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      piece_losses.push_back(loss_on_tape(tape, pvars, corpus[i], anchor_sets[i]));
    }
    ad::Var loss = piece_losses[0];
    for (std::size_t i = 1; i < piece_losses.size(); ++i) loss = tape.add(loss, piece_losses[i]);
    loss = tape.scale(loss, 1.0 / static_cast<double>(piece_losses.size()));
    stats.losses.push_back(tape.scalar(loss));
    tape.backward(loss);
    const auto grads = collect_grads(tape, pvars);
    if (cfg_.use_adam) {
      adam.step(params, grads);
    } else {
      sgd_step(params, grads, cfg_.lr);
    }
  }
  return stats;
}

FragEvalReport eval_fragmentation(const std::vector<std::vector<SectionAnnotation>>& preds,
                                  const std::vector<std::vector<SectionAnnotation>>& gt) {
  if (preds.empty() || gt.empty() || preds.size() != gt.size()) {
    throw Error(Errc::EmptyInput, "eval needs matching non-empty piece sets");
  }

  double iou_sum = 0;
  int iou_n = 0;
  std::vector<int> class_total(kSectionClasses, 0), class_hit(kSectionClasses, 0);
  std::vector<std::pair<double, double>> boundaries;  // (true, predicted)

  for (std::size_t piece = 0; piece < gt.size(); ++piece) {
    for (const SectionAnnotation& g : gt[piece]) {
      double best_iou = 0;
      const SectionAnnotation* best = nullptr;
      for (const SectionAnnotation& p : preds[piece]) {
        const double iou = interval_iou(g.start, g.end, p.start, p.end);
        if (iou > best_iou) {
          best_iou = iou;
          best = &p;
        }
      }
      iou_sum += best_iou;
      ++iou_n;
      ++class_total[static_cast<std::size_t>(g.label)];
      if (best && best->label == g.label) ++class_hit[static_cast<std::size_t>(g.label)];
      if (best) {
        boundaries.emplace_back(static_cast<double>(g.start), static_cast<double>(best->start));
        boundaries.emplace_back(static_cast<double>(g.end), static_cast<double>(best->end));
      }
    }
  }
  if (iou_n == 0) throw Error(Errc::EmptyInput, "no ground-truth sections");

  FragEvalReport r;
  r.iou = iou_sum / iou_n;

  double recall_sum = 0;
  int classes_present = 0;
  for (int c = 0; c < kSectionClasses; ++c) {
    if (class_total[static_cast<std::size_t>(c)] == 0) continue;
    recall_sum += static_cast<double>(class_hit[static_cast<std::size_t>(c)]) /
                  class_total[static_cast<std::size_t>(c)];
    ++classes_present;
  }
  r.uar = classes_present ? recall_sum / classes_present : 0.0;

  if (!boundaries.empty()) {
    double se = 0, mean_true = 0;
    for (const auto& [t, p] : boundaries) {
      se += (p - t) * (p - t);
      mean_true += t;
    }
    r.rmse = std::sqrt(se / static_cast<double>(boundaries.size()));
    mean_true /= static_cast<double>(boundaries.size());
    double ss_tot = 0;
    for (const auto& [t, p] : boundaries) ss_tot += (t - mean_true) * (t - mean_true);
    r.r2 = ss_tot > 0 ? 1.0 - se / ss_tot : (se == 0 ? 1.0 : 0.0);
  }
  return r;
}

std::string sections_to_json(const std::vector<SectionAnnotation>& sections) {
  nlohmann::json arr = nlohmann::json::array();
  for (const SectionAnnotation& s : sections) {
    arr.push_back({{"start", s.start}, {"end", s.end}, {"label", s.label}});
  }
  return arr.dump(2) + "\n";
}

std::vector<SectionAnnotation> sections_from_json(const std::string& text) {
  const nlohmann::json arr = nlohmann::json::parse(text);
  std::vector<SectionAnnotation> out;
  for (const auto& item : arr) {
    out.push_back({item.at("start").get<int>(), item.at("end").get<int>(), item.at("label").get<int>()});
  }
  validate_sections(out);
  return out;
}

}  // namespace musicdiff
