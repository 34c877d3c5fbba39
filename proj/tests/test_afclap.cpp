#include <cmath>
#include <numeric>

#include "afd/afclap.hpp"
#include "afd/gradcheck.hpp"
#include "afd/ops.hpp"
#include "doctest.h"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace afd;
using afclap::ContrastiveBatch;

namespace {

Tensor stack(const std::vector<oracle::Vec>& rows, bool requires_grad = false) {
  std::vector<double> v;
  for (const auto& r : rows) v.insert(v.end(), r.begin(), r.end());
  return Tensor::from({rows.size(), rows.front().size()}, std::move(v), requires_grad);
}

ContrastiveBatch to_batch(const oracle::RawBatch& raw) {
  ContrastiveBatch b;
  std::vector<oracle::Vec> pos, neg;
  for (const auto& p : raw.pos) pos.insert(pos.end(), p.begin(), p.end());
  for (const auto& per_item : raw.neg)
    for (const auto& per_pos : per_item) neg.insert(neg.end(), per_pos.begin(), per_pos.end());
  b.audio = stack(raw.audio);
  b.positives = stack(pos);
  if (!neg.empty()) b.negatives = stack(neg);
  b.batch = raw.audio.size();
  b.positives_per_item = raw.pos.front().size();
  b.negatives_per_positive = raw.neg.front().front().size();
  b.tau = raw.tau;
  return b;
}

}  // namespace

TEST_CASE("similarity examples") {
  std::vector<double> u{0.6, 0.8};
  CHECK(afclap::similarity(u, u, 1.0) == doctest::Approx(std::exp(1.0)).epsilon(1e-14));
  std::vector<double> a{1, 0}, b{0, 1};
  CHECK(afclap::similarity(a, b, 0.5) == 1.0);
  std::vector<double> v{0.8, 0.6};
  const double expected = static_cast<double>(oracle::hp_similarity(u, v, 0.07));
  CHECK(afclap::similarity(u, v, 0.07) == doctest::Approx(expected).epsilon(1e-13));
  CHECK_THROWS_AS(afclap::similarity(u, v, 0.0), Error);
  CHECK_THROWS_AS(afclap::similarity(u, v, -1.0), Error);
}

TEST_CASE("positive_mass") {
  SUBCASE("M=1 equals the single similarity") {
    auto raw = oracle::random_batch(4, 2, 1, 0, 4, 0.5);
    auto b = to_batch(raw);
    CHECK(afclap::positive_mass(b, 1, 0) == doctest::Approx(afclap::similarity(raw.pos[1][0], raw.audio[0], 0.5)).epsilon(1e-15));
  }
  SUBCASE("two equal positives double the mass") {
    auto raw = oracle::random_batch(5, 2, 2, 0, 4, 0.5);
    raw.pos[0][1] = raw.pos[0][0];
    auto b = to_batch(raw);
    CHECK(afclap::positive_mass(b, 0, 1) == doctest::Approx(2.0 * afclap::similarity(raw.pos[0][0], raw.audio[1], 0.5)).epsilon(1e-15));
  }
  SUBCASE("seed-11 batch matches the double loop") {
    auto raw = oracle::random_batch(11, 2, 2, 2, 4, afclap::kDefaultTau);
    auto b = to_batch(raw);
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t i = 0; i < 2; ++i) {
        const double ref = oracle::brute_positive_mass(raw, j, i);
        CHECK(std::abs(afclap::positive_mass(b, j, i) - ref) <= 1e-12 * ref);
      }
    CHECK_THROWS_AS(afclap::positive_mass(b, 2, 0), Error);
    CHECK_THROWS_AS(afclap::positive_mass(b, 0, 5), Error);
  }
}

TEST_CASE("negative_mass") {
  auto none = to_batch(oracle::random_batch(3, 2, 2, 0, 4, 0.1));
  CHECK(afclap::negative_mass(none, 0) == 0.0);
  auto raw1 = oracle::random_batch(6, 1, 1, 1, 4, 0.3);
  CHECK(afclap::negative_mass(to_batch(raw1), 0) ==
        doctest::Approx(afclap::similarity(raw1.neg[0][0][0], raw1.audio[0], 0.3)).epsilon(1e-15));
  auto raw = oracle::random_batch(11, 2, 2, 2, 4, 1.0);
  auto b = to_batch(raw);
  for (std::size_t i = 0; i < 2; ++i) CHECK(std::abs(afclap::negative_mass(b, i) - oracle::brute_negative_mass(raw, i)) <= 1e-12);
  CHECK_THROWS_AS(afclap::negative_mass(b, 2), Error);
}

TEST_CASE("contrastive_loss fixed cases") {
  SUBCASE("single item, single positive, no negatives is exactly zero") {
    auto b = to_batch(oracle::random_batch(1, 1, 1, 0, 4, 0.07));
    CHECK(afclap::contrastive_loss(b).item() == 0.0);
  }
  SUBCASE("two identical pairs split evenly") {
    auto raw = oracle::random_batch(2, 2, 1, 0, 4, 0.07);
    raw.audio[1] = raw.audio[0];
    raw.pos[0][0] = raw.audio[0];
    raw.pos[1][0] = raw.audio[0];
    CHECK(afclap::contrastive_loss(to_batch(raw)).item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  }
  SUBCASE("seed-13 batch matches the high-precision enumeration") {
    auto raw = oracle::random_batch(13, 2, 2, 3, 4, 1.0);
    const double ref = oracle::brute_force_loss(raw);
    CHECK(std::abs(afclap::contrastive_loss(to_batch(raw)).item() - ref) <= 1e-10);
  }
  SUBCASE("small tau stays finite where plain exp would overflow") {
    auto raw = oracle::random_batch(14, 3, 2, 2, 8, 1e-3);
    raw.audio[0] = raw.pos[0][0];
    const double loss = afclap::contrastive_loss(to_batch(raw)).item();
    CHECK(std::isfinite(loss));
    CHECK(std::abs(loss - oracle::brute_force_loss(raw)) <= 1e-9 * std::max(1.0, loss));
  }
}

TEST_CASE("contrastive_loss errors") {
  auto b = to_batch(oracle::random_batch(2, 2, 2, 1, 4, 0.07));
  auto bad = b;
  bad.tau = 0.0;
  CHECK_THROWS_AS(afclap::contrastive_loss(bad), Error);
  bad = b;
  bad.positives_per_item = 3;
  CHECK_THROWS_AS(afclap::contrastive_loss(bad), ShapeError);
  bad = b;
  bad.tau = 1e-320;  // 1/tau overflows
  try {
    (void)afclap::contrastive_loss(bad);
    FAIL("expected a non-finite error");
  } catch (const NonFiniteError& e) {
    CHECK(std::string(e.what()).find("index 0") != std::string::npos);
  }
}

TEST_CASE("loss properties over random batches") {
  Rng seeds(1234);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t B = 1 + seeds.below(5), M = 1 + seeds.below(3), N = seeds.below(4), d = 2 + seeds.below(7);
    const double tau = 0.05 + seeds.uniform();
    auto raw = oracle::random_batch(seeds.next(), B, M, N, d, tau);
    const double loss = afclap::contrastive_loss(to_batch(raw)).item();
    CHECK(loss >= 0.0);

    // Simultaneous permutation of item indices leaves the loss unchanged.
    std::vector<std::size_t> perm(B);
    std::iota(perm.begin(), perm.end(), 0);
    seeds.shuffle(std::span(perm));
    auto permuted = raw;
    for (std::size_t i = 0; i < B; ++i) {
      permuted.audio[i] = raw.audio[perm[i]];
      permuted.pos[i] = raw.pos[perm[i]];
      permuted.neg[i] = raw.neg[perm[i]];
    }
    CHECK(std::abs(afclap::contrastive_loss(to_batch(permuted)).item() - loss) <= 1e-12);

    // One more negative per positive can only increase the loss.
    auto more = raw;
    for (auto& per_item : more.neg)
      for (auto& per_pos : per_item) per_pos.push_back(oracle::unit_random(seeds, d));
    CHECK(afclap::contrastive_loss(to_batch(more)).item() > loss);
  }
}

TEST_CASE("M=1, N=0 reduces to InfoNCE") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto raw = oracle::random_batch(seed, 4, 1, 0, 6, 0.07);
    std::vector<oracle::Vec> text;
    for (auto& p : raw.pos) text.push_back(p[0]);
    CHECK(std::abs(afclap::contrastive_loss(to_batch(raw)).item() - oracle::info_nce(raw.audio, text, 0.07)) <= 1e-12);
  }
}

TEST_CASE("contrastive_loss gradients match finite differences") {
  Rng rng(17);
  const std::size_t B = 2, M = 2, N = 3, d = 5;
  auto audio = test::random_tensor(rng, {B, d});
  auto pos = test::random_tensor(rng, {B * M, d});
  auto neg = test::random_tensor(rng, {B * M * N, d});
  auto log_inv_tau = Tensor::scalar(std::log(1.0 / 0.2), true);
  auto results = check_gradients(
      [&] { return afclap::contrastive_loss(afclap::make_batch(audio, pos, neg, M, N, 0.2), log_inv_tau); },
      {{"audio", audio}, {"positives", pos}, {"negatives", neg}, {"log_inv_tau", log_inv_tau}});
  for (const auto& r : results) {
    INFO(r.name << " rel err " << r.rel_error);
    CHECK(r.passed);
  }
  auto fd = finite_diff_grad(
      [&](const Tensor& a) { return afclap::contrastive_loss(afclap::make_batch(a, pos, neg, M, N, 0.2)).item(); }, audio);
  audio.zero_grad();
  backward(afclap::contrastive_loss(afclap::make_batch(audio, pos, neg, M, N, 0.2)));
  CHECK(relative_error(audio.grad(), fd.values()) < 1e-4);
}
