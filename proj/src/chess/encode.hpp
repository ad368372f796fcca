#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "chess/board.hpp"

namespace ply::chess {

// One input channel of the model. Piece channels are indexed by kind;
// auxiliary channels are constant across all 64 squares.
enum class ChannelKind : uint8_t {
  PlayerPiece,    // param = piece kind
  OpponentPiece,  // param = piece kind
  CastleUsKing,
  CastleUsQueen,
  CastleThemKing,
  CastleThemQueen,
  Rule50,  // halfmove clock / 100
  Ones,
  Zeros,
};

struct ChannelSpec {
  ChannelKind kind;
  uint8_t param = 0;  // piece kind for Player/OpponentPiece

  bool operator==(const ChannelSpec&) const = default;
};

enum class HistoryFill : uint8_t { Zeros, RepeatCurrent };

// Data-driven description of the model's input planes: the channel order of
// the current-state block, how many additional history copies of the piece
// block follow, and how those are filled when no history is supplied.
struct LayoutDescriptor {
  std::vector<ChannelSpec> channels;
  int history_slots = 0;  // extra copies of the 12 piece channels
  HistoryFill history_fill = HistoryFill::Zeros;

  int n_channels() const { return static_cast<int>(channels.size()) + history_slots * 12; }

  std::string to_json() const;
  static LayoutDescriptor from_json(const std::string& text);

  bool operator==(const LayoutDescriptor&) const = default;
};

// 12 piece channels (player then opponent, pawn..king), castling, rule-50,
// and a constant-one channel; no history.
LayoutDescriptor canonical_layout();

// Channel-major plane values plus the per-square positional reachability
// vectors consumed by the embedding.
struct InputPlanes {
  int n_channels = 0;
  std::vector<float> values;                 // [channel * 64 + square]
  std::array<uint64_t, 64> positional{};     // positional[sq] bit r: sq reaches r

  float at(int channel, int square) const { return values[channel * 64 + square]; }
};

// Encodes a player-relative board; errors if the board is absolute-frame
// with black to move (callers must orient first).
InputPlanes encode_input(const Board& board, const LayoutDescriptor& layout);

}  // namespace ply::chess
