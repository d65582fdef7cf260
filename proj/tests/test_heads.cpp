#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "matr/heads.hpp"
#include "matr/model.hpp"

using namespace matr;

TEST(DecodeEnd, Substitution) {
  EXPECT_DOUBLE_EQ(decode_end(100, 0.0, 64), 100.0);
  EXPECT_DOUBLE_EQ(decode_end(100, 0.25, 64), 116.0);
  EXPECT_DOUBLE_EQ(encode_end_target(100, 116, 64), 0.25);
}

TEST(DecodeStart, Substitution) {
  EXPECT_DOUBLE_EQ(decode_start(100, 2, 0.5, 10), 75.0);
  EXPECT_DOUBLE_EQ(decode_start(100, 0, 0.0, 10), 100.0);
}

TEST(EncodeStart, InverseCases) {
  auto a = encode_start_target(100, 75, 10, 7, 4.0);
  EXPECT_EQ(a.region, 2u);
  EXPECT_DOUBLE_EQ(a.offset, 0.5);
  auto b = encode_start_target(100, 100, 10, 7, 4.0);
  EXPECT_EQ(b.region, 0u);
  EXPECT_DOUBLE_EQ(b.offset, 0.0);
  auto c = encode_start_target(10000, 0, 10, 7, 4.0);
  EXPECT_EQ(c.region, 8u);
  EXPECT_DOUBLE_EQ(c.offset, 4.0);
  auto d = encode_start_target(100, 105, 10, 7, 4.0);
  EXPECT_EQ(d.region, 0u);
  EXPECT_DOUBLE_EQ(decode_start(100, d.region, d.offset, 10), 105.0);
}

TEST(EncodeStart, EveryPastStartHasOneRegion) {
  for (int s = -200; s <= 100; ++s) {
    auto r = encode_start_target(100, s, 10, 7, 100.0);
    EXPECT_LE(r.region, 8u);
    EXPECT_NEAR(decode_start(100, r.region, r.offset, 10), s, 1e-9);
  }
}

TEST(Argmax, TiesPickLowestIndex) {
  const std::vector<double> flat(9, 0.3);
  EXPECT_EQ(argmax(std::span<const double>(flat)), 0u);
  const std::vector<double> v{0.1, 0.5, 0.5};
  EXPECT_EQ(argmax(std::span<const double>(v)), 1u);
}

namespace {

HeadValues make_heads(std::size_t n, std::size_t regions, std::size_t classes) {
  HeadValues h;
  h.end_offsets = Tensor<double>(n, 1);
  h.region_logits = Tensor<double>(n, regions);
  h.start_offsets = Tensor<double>(n, regions);
  h.class_probs = Tensor<double>(n, classes + 1, 1.0 / static_cast<double>(classes + 1));
  return h;
}

}  // namespace

TEST(AssembleProposals, ComposesBoundariesAndFiltersInvalid) {
  HeadValues h = make_heads(3, 4, 2);
  // Query 0: region 2, offset 0.5, end offset 1.6 -> (75, 116), class 1.
  h.region_logits(0, 2) = 5.0;
  h.start_offsets(0, 2) = 0.5;
  h.end_offsets(0, 0) = 1.6;
  h.class_probs(0, 0) = 0.1;
  h.class_probs(0, 1) = 0.8;
  h.class_probs(0, 2) = 0.1;
  // Query 1: background argmax.
  h.class_probs(1, 0) = 0.1;
  h.class_probs(1, 1) = 0.1;
  h.class_probs(1, 2) = 0.8;
  // Query 2: start after end.
  h.start_offsets(2, 0) = -1.0;
  h.end_offsets(2, 0) = 0.5;
  h.class_probs(2, 0) = 0.9;
  h.class_probs(2, 1) = 0.05;
  h.class_probs(2, 2) = 0.05;

  const auto all = decode_queries(100, h, 10);
  ASSERT_EQ(all.size(), 3u);
  const auto props = assemble_proposals(100, h, 10);
  ASSERT_EQ(props.size(), 1u);
  EXPECT_DOUBLE_EQ(props[0].start, 75.0);
  EXPECT_NEAR(props[0].end, 116.0, 1e-12);
  EXPECT_EQ(props[0].label, 1u);
  EXPECT_DOUBLE_EQ(props[0].score, 0.8);
  EXPECT_EQ(props[0].generated_at, 100);
  EXPECT_EQ(props[0].query, 0u);
}

TEST(Heads, ShapesAndClassProbabilities) {
  ModelConfig cfg;
  cfg.raw_dim = 5;
  cfg.model_dim = 8;
  cfg.segment_len = 4;
  cfg.memory_len = 7;
  cfg.num_queries = 10;
  cfg.num_classes = 20;
  cfg.encoder_layers = 1;
  cfg.decoder_layers = 1;
  cfg.encoder_heads = 2;
  cfg.decoder_heads = 2;
  MatrModel<double> model(cfg);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> d;
  Tensor<double> window(4, 5);
  for (auto& v : window.data()) v = d(rng);
  Graph<double> g(false);
  auto out = model.forward(g, window, {}, 3);
  EXPECT_EQ(out.region_logits.cols(), 9u);
  EXPECT_EQ(out.start_offsets.cols(), 9u);
  EXPECT_EQ(out.class_logits.cols(), 21u);
  EXPECT_EQ(out.end_offsets.rows(), 10u);
  const auto h = out.head_values();
  for (std::size_t r = 0; r < h.class_probs.rows(); ++r) {
    double total = 0;
    for (double p : h.class_probs.row_span(r)) total += p;
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Heads, ZeroLogitsGiveUniformProbabilities) {
  ModelOutputs<double> out;
  Graph<double> g(false);
  out.end_offsets = g.constant(Tensor<double>(2, 1));
  out.region_logits = g.constant(Tensor<double>(2, 3));
  out.start_offsets = g.constant(Tensor<double>(2, 3));
  out.class_logits = g.constant(Tensor<double>(2, 5));
  const auto h = out.head_values();
  for (double p : h.class_probs.data()) EXPECT_DOUBLE_EQ(p, 0.2);
}
