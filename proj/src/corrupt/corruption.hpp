#pragma once

#include <optional>
#include <string>
#include <vector>

#include "chess/board.hpp"
#include "nn/model.hpp"

namespace ply::corrupt {

struct Mutation {
  enum class Kind : uint8_t { AddPawn, RemovePawn, MovePiece };
  Kind kind = Kind::AddPawn;
  chess::Color color = chess::Color::White;  // AddPawn only
  chess::Square a{0};                        // pawn square, or piece origin
  chess::Square b{0};                        // MovePiece destination

  std::string describe() const;
  std::vector<chess::Square> touched() const;
  static Mutation from_description(const std::string& text);

  bool operator==(const Mutation&) const = default;
};

struct CorruptionCandidate {
  chess::Board board;
  Mutation mutation;
  // Filter diagnostics (filled by filter_candidates / select_corruption).
  double strong_best_prob = 0.0;   // strong model, previously-best move, corrupted board
  double weak_logodds_drop = 0.0;  // weak model, log-odds drop of that move
  double value_gain = 0.0;         // strong model, (win-loss) increase
  double jsd = 0.0;                // weak model move-distribution divergence

  bool operator==(const CorruptionCandidate&) const = default;
};

// All single-mutation variants of the clean board that are legal positions:
// add a pawn of either color (ranks 2-7, empty squares), remove a pawn,
// or move a non-pawn piece to an empty square. Deterministic order.
std::vector<CorruptionCandidate> generate_candidates(const chess::Board& clean);

// Jensen-Shannon divergence in nats over the union of supports.
double jensen_shannon(const nn::MoveDist& p, const nn::MoveDist& q);

struct FilterThresholds {
  double strong_prob = 0.10;  // (a) strong prob of the old best move must fall below
  double weak_drop = 0.20;    // (b) weak log-odds drop must not exceed
  double value_gain = 0.10;   // (c) strong win-loss must not increase by more
  bool use_a = true, use_b = true, use_c = true;
};

// Keeps candidates passing all enabled filters; fills diagnostics on every
// candidate it evaluates.
std::vector<CorruptionCandidate> filter_candidates(const nn::Model& strong,
                                                   const nn::Model& weak,
                                                   const chess::Board& clean,
                                                   const chess::Move& best,
                                                   std::vector<CorruptionCandidate> candidates,
                                                   const FilterThresholds& thresholds);

// Survivor minimizing the weak model's JSD against the clean board; ties
// resolve to the earliest candidate in generation order. Empty input yields
// nullopt (puzzle excluded from patching experiments).
std::optional<CorruptionCandidate> select_corruption(const nn::Model& weak,
                                                     const chess::Board& clean,
                                                     std::vector<CorruptionCandidate> survivors);

}  // namespace ply::corrupt
