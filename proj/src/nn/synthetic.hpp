#pragma once

#include <cstdint>
#include <vector>

#include "nn/model.hpp"

namespace ply::nn {

// Hand-constructed toy model realizing a known causal story:
//  - the embedding writes a "signal" channel at the carrier square iff a
//    player pawn sits there, plus per-square tiebreak channels and a large
//    ballast pair that keeps the LayerNorms stable;
//  - one attention head (smolgen-driven, input-independent pattern) copies
//    the carrier's signal to the readout square's "decision" channel, while
//    all other heads attend to an always-empty sink square and carry no
//    value weights;
//  - the policy head scores targets by decision value with tiebreaks, so the
//    top move targets the readout square iff the carrier pawn is present;
//  - a second head's pattern is the knight-move mask, for detector tests.
struct PlantDescriptor {
  chess::Square carrier{17};  // b3, holds the signal pawn
  chess::Square readout{31};  // h4, decision square
  chess::Square sink{16};     // a3, always-empty attention sink
  int layer = 0;              // 0-based layer of the copying head
  int head = 1;
  int knight_layer = 1;  // 0-based location of the knight-pattern head
  int knight_head = 2;
  std::string clean_fen = "k7/8/8/8/8/1P6/8/K6R w - - 0 1";

  // Filled in by the builder after it verifies the plant end to end.
  std::string corrupted_fen;
  chess::Move best_move;      // top move with the signal present (targets readout)
  chess::Move fallback_move;  // top move with the signal removed
};

// Spec the plant is designed for: 2 layers, d=16, 4 heads of width 4.
ModelSpec toy_spec();

// Builds the archive, loads it, and verifies the plant by running both
// boards; throws if the spec cannot realize the plant. Seeds whose tiebreak
// draws collide with the fallback move are redrawn deterministically, so any
// seed yields a verified model (same seed, same model).
Model build_synthetic_model(const ModelSpec& spec, PlantDescriptor& plant, uint64_t seed);

// Same tensor shapes, fresh Gaussian entries (mean 0, std 0.02).
Model random_init_like(const Model& model, uint64_t seed);

// Synthetic residual matrices with a planted bilinear-readable future move:
// the t1 square carries a code that reappears at t3, and t3 carries a second
// code that reappears at s3. Probes trained on these must recover the moves.
struct PlantedResidualSample {
  Tensor residuals;  // [64, d]
  int t1, t3, s3;
};

std::vector<PlantedResidualSample> make_planted_residuals(int count, int d, uint64_t seed);

}  // namespace ply::nn
