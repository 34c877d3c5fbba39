#pragma once

// Independent reference computations used only by tests. None of these call
// into the library's loss or ranking code.

#include <algorithm>
#include <boost/multiprecision/cpp_bin_float.hpp>
#include <cmath>
#include <cstddef>
#include <vector>

#include "afd/rng.hpp"

namespace afd::oracle {

using HighPrec = boost::multiprecision::cpp_bin_float_50;
using Vec = std::vector<double>;

/// Plain data for one batch: audio[i], pos[i][m], neg[i][m][n].
struct RawBatch {
  std::vector<Vec> audio;
  std::vector<std::vector<Vec>> pos;
  std::vector<std::vector<std::vector<Vec>>> neg;
  double tau = 1.0;
};

inline Vec unit_random(Rng& rng, std::size_t d) {
  Vec v(d);
  double ss = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    ss += x * x;
  }
  for (auto& x : v) x /= std::sqrt(ss);
  return v;
}

inline RawBatch random_batch(std::uint64_t seed, std::size_t B, std::size_t M, std::size_t N, std::size_t d, double tau) {
  Rng rng(seed);
  RawBatch b;
  b.tau = tau;
  for (std::size_t i = 0; i < B; ++i) b.audio.push_back(unit_random(rng, d));
  b.pos.resize(B);
  b.neg.resize(B);
  for (std::size_t i = 0; i < B; ++i) {
    for (std::size_t m = 0; m < M; ++m) b.pos[i].push_back(unit_random(rng, d));
    b.neg[i].resize(M);
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t n = 0; n < N; ++n) b.neg[i][m].push_back(unit_random(rng, d));
  }
  return b;
}

inline HighPrec hp_similarity(const Vec& u, const Vec& v, double tau) {
  HighPrec dot = 0;
  for (std::size_t k = 0; k < u.size(); ++k) dot += HighPrec(u[k]) * HighPrec(v[k]);
  return boost::multiprecision::exp(dot / HighPrec(tau));
}

/// Enumerates every (j, i, m) and (i, m, n) similarity term in 50-digit
/// arithmetic and evaluates the multi-positive contrastive loss.
inline double brute_force_loss(const RawBatch& b) {
  const std::size_t B = b.audio.size();
  HighPrec total = 0;
  for (std::size_t i = 0; i < B; ++i) {
    HighPrec s_ii = 0, s_all = 0, s_neg = 0;
    for (std::size_t j = 0; j < B; ++j) {
      HighPrec s_ji = 0;
      for (const auto& p : b.pos[j]) s_ji += hp_similarity(p, b.audio[i], b.tau);
      s_all += s_ji;
      if (j == i) s_ii = s_ji;
    }
    for (const auto& row : b.neg[i])
      for (const auto& n : row) s_neg += hp_similarity(n, b.audio[i], b.tau);
    total += boost::multiprecision::log(s_ii / (s_neg + s_all));
  }
  return static_cast<double>(-total / HighPrec(B));
}

inline double brute_positive_mass(const RawBatch& b, std::size_t j, std::size_t i) {
  double s = 0.0;
  for (const auto& p : b.pos[j]) {
    double dot = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) dot += p[k] * b.audio[i][k];
    s += std::exp(dot / b.tau);
  }
  return s;
}

inline double brute_negative_mass(const RawBatch& b, std::size_t i) {
  double s = 0.0;
  for (const auto& row : b.neg[i])
    for (const auto& n : row) {
      double dot = 0.0;
      for (std::size_t k = 0; k < n.size(); ++k) dot += n[k] * b.audio[i][k];
      s += std::exp(dot / b.tau);
    }
  return s;
}

/// Standard one-positive InfoNCE (audio anchors, in-batch texts as
/// candidates), written directly from its textbook definition.
inline double info_nce(const std::vector<Vec>& audio, const std::vector<Vec>& text, double tau) {
  const std::size_t B = audio.size();
  double total = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    std::vector<double> logits(B);
    for (std::size_t j = 0; j < B; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < audio[i].size(); ++k) dot += text[j][k] * audio[i][k];
      logits[j] = dot / tau;
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - mx);
    total += -(logits[i] - mx - std::log(z));
  }
  return total / static_cast<double>(B);
}

/// Rank of the best-ranked relevant gallery item for each query, by sorting
/// the full score list (descending score, ascending index on ties).
inline std::vector<std::size_t> brute_first_hit_ranks(const std::vector<Vec>& queries, const std::vector<Vec>& gallery,
                                                      const std::vector<std::vector<std::size_t>>& relevant) {
  std::vector<std::size_t> ranks;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t g = 0; g < gallery.size(); ++g) {
      double dot = 0.0;
      for (std::size_t k = 0; k < gallery[g].size(); ++k) dot += queries[q][k] * gallery[g][k];
      scored.emplace_back(-dot, g);
    }
    std::sort(scored.begin(), scored.end());
    std::size_t best = gallery.size();
    for (std::size_t r = 0; r < scored.size(); ++r) {
      if (std::find(relevant[q].begin(), relevant[q].end(), scored[r].second) != relevant[q].end()) {
        best = r;
        break;
      }
    }
    ranks.push_back(best);
  }
  return ranks;
}

}  // namespace afd::oracle
