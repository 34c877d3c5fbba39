#include <cmath>
#include <complex>

#include "afd/encoders.hpp"
#include "afd/gradcheck.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace afd;
using namespace afd::encoders;

namespace {

EncoderConfig small_config() {
  EncoderConfig c;
  c.feature_dim = 6;
  c.model_dim = 16;
  c.tokens_per_window = 8;
  c.frame_rate = 4.0;  // 40 frames per 10 s window
  c.head_dim = 8;
  c.encoder_layers = 1;
  c.encoder_heads = 2;
  c.encoder_inner = 24;
  c.transform_layers = 3;
  c.transform_heads = 8;
  c.transform_inner = 24;
  return c;
}

void zero(Tensor t) {
  for (auto& v : t.mutable_values()) v = 0.0;
}

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("window counts") {
  CHECK(window_count(47.0, 10.0, kLongAudioWindows) == 5);
  CHECK(window_count(600.0, 10.0, kLongAudioWindows) == 30);
  CHECK(window_count(30.0, 10.0, kStage1Windows) == 3);
  CHECK(window_count(95.0, 10.0, kStage2Windows) == 9);
  CHECK(window_count(0.5, 10.0, kStage1Windows) == 1);
  CHECK(window_count(30.000000001, 10.0, 30) == 3);
  CHECK_THROWS_AS(window_count(0.0, 10.0, 3), Error);
  CHECK_THROWS_AS(window_count(5.0, 10.0, 0), Error);
}

TEST_CASE("segment_windows pads the last window and respects the cap") {
  EncoderConfig c = small_config();
  c.frame_rate = 100.0;
  auto clip = synthesize_clip("a", 1, 7, 47.0, c);
  CHECK(clip.frame_count() == 4700);
  auto seg = segment_windows(clip, c, kLongAudioWindows);
  REQUIRE(seg.count() == 5);
  CHECK(seg.window_frames == 1000);
  CHECK(seg.last_pad_fraction() == doctest::Approx(0.3));
  const auto last = seg.windows.back().values();
  // Frame 700 of the last window is the first padded one.
  for (std::size_t j = 0; j < c.feature_dim; ++j) {
    CHECK(last[699 * c.feature_dim + j] == clip.frames.at(4699, j));
    CHECK(last[700 * c.feature_dim + j] == 0.0);
    CHECK(last[999 * c.feature_dim + j] == 0.0);
  }
  auto capped = segment_windows(synthesize_clip("b", 1, 7, 600.0, c), c, kLongAudioWindows);
  CHECK(capped.count() == 30);
  CHECK(capped.last_pad_fraction() == 0.0);
  auto exact = segment_windows(synthesize_clip("c", 1, 7, 30.0, c), c, kStage1Windows);
  CHECK(exact.count() == 3);
  CHECK(exact.last_pad_fraction() == 0.0);
  auto trimmed = segment_windows(synthesize_clip("d", 1, 7, 47.0, c), c, kStage1Windows);
  CHECK(trimmed.count() == 3);
  CHECK(trimmed.last_pad_fraction() == 0.0);

  AudioClip bad = clip;
  bad.duration_s = 20.0;
  CHECK_THROWS_AS(segment_windows(bad, c, 3), Error);
  EncoderConfig wide = c;
  wide.feature_dim = 7;
  CHECK_THROWS_AS(segment_windows(clip, wide, 3), ShapeError);
}

TEST_CASE("synthetic clips cluster by concept") {
  auto c = small_config();
  auto mean_row = [&](const AudioClip& clip) {
    std::vector<double> m(c.feature_dim, 0.0);
    for (std::size_t f = 0; f < clip.frame_count(); ++f)
      for (std::size_t j = 0; j < c.feature_dim; ++j) m[j] += clip.frames.at(f, j) / static_cast<double>(clip.frame_count());
    return m;
  };
  auto dist = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
  };
  const auto a1 = mean_row(synthesize_clip("x", 3, 100, 30.0, c));
  const auto a2 = mean_row(synthesize_clip("y", 3, 200, 30.0, c));
  const auto b1 = mean_row(synthesize_clip("z", 4, 100, 30.0, c));
  CHECK(dist(a1, a2) < dist(a1, b1));
  auto again = synthesize_clip("x", 3, 100, 30.0, c);
  CHECK(test::max_abs_diff(again.frames.values(), synthesize_clip("x", 3, 100, 30.0, c).frames.values()) == 0.0);
}

TEST_CASE("rope matches complex rotation") {
  Rng rng(21);
  const std::size_t rows = 5, d = 8;
  auto x = test::random_tensor(rng, {rows, d}, false);
  std::vector<std::size_t> pos{0, 3, 17, 250, 1919};
  auto y = apply_rope(x, pos, 4096.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t k = 0; k < d / 2; ++k) {
      const double theta = static_cast<double>(pos[r]) / std::pow(4096.0, static_cast<double>(2 * k) / d);
      const std::complex<double> z(x.at(r, 2 * k), x.at(r, 2 * k + 1));
      const auto w = z * std::polar(1.0, theta);
      CHECK(y.at(r, 2 * k) == doctest::Approx(w.real()).epsilon(1e-12));
      CHECK(y.at(r, 2 * k + 1) == doctest::Approx(w.imag()).epsilon(1e-12));
    }
}

TEST_CASE("rope properties") {
  Rng rng(22);
  auto x = test::random_tensor(rng, {4, 16}, false);
  auto y = apply_rope(x);
  for (std::size_t j = 0; j < 16; ++j) CHECK(y.at(0, j) == x.at(0, j));
  for (std::size_t r = 0; r < 4; ++r) {
    auto xr = x.values().subspan(r * 16, 16), yr = y.values().subspan(r * 16, 16);
    CHECK(norm(yr) == doctest::Approx(norm(xr)).epsilon(1e-12));
  }
  // q.k after rotation depends only on the position offset.
  auto q = test::random_tensor(rng, {1, 16}, false), k = test::random_tensor(rng, {1, 16}, false);
  auto dot_at = [&](std::size_t pq, std::size_t pk) {
    std::vector<std::size_t> a{pq}, b{pk};
    auto rq = apply_rope(q, a), rk = apply_rope(k, b);
    double s = 0.0;
    for (std::size_t j = 0; j < 16; ++j) s += rq.at(j) * rk.at(j);
    return s;
  };
  CHECK(dot_at(10, 3) == doctest::Approx(dot_at(107, 100)).epsilon(1e-10));
  CHECK(dot_at(0, 0) == doctest::Approx(dot_at(500, 500)).epsilon(1e-10));

  CHECK_THROWS_AS(apply_rope(test::random_tensor(rng, {2, 5}, false)), ShapeError);
  std::vector<std::size_t> short_pos{0};
  CHECK_THROWS_AS(apply_rope(x, short_pos), ShapeError);

  auto xg = test::random_tensor(rng, {3, 6});
  auto w = test::random_tensor(rng, {3, 6}, false);
  std::vector<std::size_t> p{2, 40, 900};
  for (const auto& r : check_gradients([&] { return ops::sum(ops::mul(apply_rope(xg, p), w)); }, {{"x", xg}}))
    CHECK(r.passed);
}

TEST_CASE("audio encoder output shapes and modes") {
  auto c = small_config();
  nn::ParamStore store(3);
  AudioEncoder enc(store, c);
  auto seg = segment_windows(synthesize_clip("a", 2, 5, 25.0, c), c, kStage1Windows);
  auto dense = enc.encode_window(seg.windows[0], ExtractionMode::dense);
  CHECK(dense.shape() == Shape{c.tokens_per_window, c.model_dim});
  auto head = enc.encode_window(seg.windows[0], parse_extraction_mode("head"));
  CHECK(head.shape() == Shape{1, c.head_dim});
  CHECK_THROWS_AS(parse_extraction_mode("pooled"), Error);
  CHECK_THROWS_AS(enc.encode_window(Tensor::zeros({40, 5}), ExtractionMode::dense), ShapeError);

  auto tokens = enc.dense_tokens(seg);
  CHECK(tokens.window_count == 3);
  CHECK(tokens.tokens.shape() == Shape{24, c.model_dim});
  CHECK(tokens.positions.back() == 23);
  // 25 s in three 10 s windows: the back half of the last window is padding.
  std::size_t padded = 0;
  for (bool b : tokens.pad_mask) padded += b ? 1 : 0;
  CHECK(padded == 4);
  CHECK(tokens.pad_mask[20]);
  CHECK_FALSE(tokens.pad_mask[19]);

  auto emb = enc.clap_embedding(seg);
  CHECK(emb.shape() == Shape{1, c.head_dim});
  CHECK(norm(emb.values()) == doctest::Approx(1.0).epsilon(1e-12));

  // Zeroed final projection yields a zero head.
  zero(enc.head_output().weight);
  auto z = enc.encode_window(seg.windows[0], ExtractionMode::head);
  for (double v : z.values()) CHECK(v == 0.0);
}

TEST_CASE("all-zero window through patch embedding gives zero tokens") {
  auto c = small_config();
  c.encoder_layers = 0;
  nn::ParamStore store(4);
  AudioEncoder enc(store, c);
  auto dense = enc.encode_window(Tensor::zeros({40, c.feature_dim}), ExtractionMode::dense);
  for (double v : dense.values()) CHECK(v == 0.0);
}

TEST_CASE("representation transform") {
  auto c = small_config();
  nn::ParamStore store(5);
  AudioEncoder enc(store, c);
  auto seg = segment_windows(synthesize_clip("a", 2, 5, 30.0, c), c, kStage1Windows);
  auto tokens = enc.dense_tokens(seg);

  SUBCASE("zeroed residual branches give the identity, or plain RoPE when enabled") {
    nn::ParamStore ts(6);
    EncoderConfig no_rope = c;
    no_rope.use_rope = false;
    RepresentationTransform t(ts, no_rope);
    CHECK(t.layer_count() == 3);
    for (const auto& l : t.layers()) {
      zero(l.o.weight);
      zero(l.ff.down.weight);
    }
    CHECK(test::max_abs_diff(t(tokens).values(), tokens.tokens.values()) == 0.0);

    nn::ParamStore ts2(6);
    RepresentationTransform with_rope(ts2, c);
    for (const auto& l : with_rope.layers()) {
      zero(l.o.weight);
      zero(l.ff.down.weight);
    }
    CHECK(test::max_abs_diff(with_rope(tokens).values(), apply_rope(tokens.tokens, tokens.positions).values()) == 0.0);
  }

  SUBCASE("attention scores scale with the squared grid length") {
    nn::ParamStore ts(7);
    RepresentationTransform t(ts, c);
    ops::AttentionCounter counter;
    auto out = t(tokens, &counter);
    CHECK(out.shape() == tokens.tokens.shape());
    CHECK(counter.self_calls == 3);
    CHECK(counter.self_scores == 3 * 24 * 24);
  }

  SUBCASE("per-layer rope differs from one-shot rope but keeps shapes") {
    nn::ParamStore a(8), b(8);
    EncoderConfig per = c;
    per.rope_per_layer = true;
    RepresentationTransform once(a, c), each(b, per);
    auto y1 = once(tokens), y2 = each(tokens);
    CHECK(y1.shape() == y2.shape());
    CHECK(test::max_abs_diff(y1.values(), y2.values()) > 1e-6);
  }

  SUBCASE("gradients reach the encoder and transform parameters") {
    auto tiny = c;
    tiny.tokens_per_window = 4;
    tiny.model_dim = 8;
    tiny.transform_layers = 1;
    tiny.transform_heads = 2;
    tiny.transform_inner = 8;
    tiny.encoder_inner = 8;
    tiny.head_dim = 4;
    nn::ParamStore ps(9);
    AudioEncoder e(ps, tiny);
    RepresentationTransform t(ps, tiny);
    auto s = segment_windows(synthesize_clip("g", 1, 1, 15.0, tiny), tiny, 2);
    Rng rng(10);
    auto w = test::random_tensor(rng, {8, 8}, false);
    std::vector<std::pair<std::string, Tensor>> named;
    for (const auto& p : ps.params())
      if (p.name == "clap.audio.patch.weight" || p.name == "transform.layer0.q.weight" ||
          p.name == "transform.layer0.ff.up.weight")
        named.emplace_back(p.name, p.value);
    REQUIRE(named.size() == 3);
    auto results = check_gradients([&] { return ops::sum(ops::mul(t(e.dense_tokens(s)), w)); }, named);
    for (const auto& r : results) {
      INFO(r.name << " " << r.rel_error);
      CHECK(r.passed);
    }
  }
}

TEST_CASE("text encoder") {
  auto c = small_config();
  nn::ParamStore store(11);
  TextEncoder text(store, c);
  auto a = text.encode("a dog barks");
  CHECK(a.shape() == Shape{1, c.head_dim});
  CHECK(norm(a.values()) == doctest::Approx(1.0).epsilon(1e-12));
  auto b = text.encode("rain on a tin roof");
  CHECK(test::max_abs_diff(a.values(), b.values()) > 1e-3);
  CHECK_THROWS_AS(text.encode(""), Error);
  std::vector<std::size_t> bad{300};
  CHECK_THROWS_AS(text.encode_tokens(bad), Error);

  nn::ParamStore again(11);
  TextEncoder text2(again, c);
  CHECK(test::max_abs_diff(text2.encode("a dog barks").values(), a.values()) == 0.0);
}

TEST_CASE("parameter init does not depend on construction order") {
  auto c = small_config();
  nn::ParamStore s1(12), s2(12);
  TextEncoder t1(s1, c);
  AudioEncoder a1(s1, c);
  AudioEncoder a2(s2, c);
  TextEncoder t2(s2, c);
  const auto& p1 = s1.at("clap.audio.layer0.q.weight");
  const auto& p2 = s2.at("clap.audio.layer0.q.weight");
  CHECK(test::max_abs_diff(p1.value.values(), p2.value.values()) == 0.0);
  CHECK(p1.component == nn::Component::clap_encoder);
  CHECK_THROWS_AS(s1.at("nope"), Error);
  CHECK_THROWS_AS(AudioEncoder(s1, c), Error);  // duplicate names
}
