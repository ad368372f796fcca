#include "chess/encode.hpp"

#include <bit>

#include <json.hpp>

#include "common/error.hpp"

namespace ply::chess {

namespace {

using nlohmann::json;

const char* kind_name(ChannelKind k) {
  switch (k) {
    case ChannelKind::PlayerPiece: return "player_piece";
    case ChannelKind::OpponentPiece: return "opponent_piece";
    case ChannelKind::CastleUsKing: return "castle_us_king";
    case ChannelKind::CastleUsQueen: return "castle_us_queen";
    case ChannelKind::CastleThemKing: return "castle_them_king";
    case ChannelKind::CastleThemQueen: return "castle_them_queen";
    case ChannelKind::Rule50: return "rule50";
    case ChannelKind::Ones: return "ones";
    case ChannelKind::Zeros: return "zeros";
  }
  return "?";
}

ChannelKind kind_from_name(const std::string& s) {
  for (int i = 0; i <= static_cast<int>(ChannelKind::Zeros); ++i) {
    const auto k = static_cast<ChannelKind>(i);
    if (s == kind_name(k)) return k;
  }
  fail(ErrorKind::Config, "unknown channel kind '" + s + "'");
}

}  // namespace

std::string LayoutDescriptor::to_json() const {
  json j;
  j["channels"] = json::array();
  for (const auto& c : channels) {
    json e;
    e["kind"] = kind_name(c.kind);
    if (c.kind == ChannelKind::PlayerPiece || c.kind == ChannelKind::OpponentPiece)
      e["piece"] = std::string(1, piece_char(static_cast<PieceKind>(c.param)));
    j["channels"].push_back(e);
  }
  j["history_slots"] = history_slots;
  j["history_fill"] = history_fill == HistoryFill::Zeros ? "zeros" : "repeat_current";
  return j.dump();
}

LayoutDescriptor LayoutDescriptor::from_json(const std::string& text) {
  const json j = json::parse(text);
  LayoutDescriptor d;
  for (const auto& e : j.at("channels")) {
    ChannelSpec c{kind_from_name(e.at("kind").get<std::string>()), 0};
    if (c.kind == ChannelKind::PlayerPiece || c.kind == ChannelKind::OpponentPiece) {
      const auto s = e.at("piece").get<std::string>();
      const auto k = s.size() == 1 ? piece_from_char(s[0]) : std::nullopt;
      if (!k) fail(ErrorKind::Config, "bad piece letter '" + s + "' in layout");
      c.param = static_cast<uint8_t>(*k);
    }
    d.channels.push_back(c);
  }
  d.history_slots = j.value("history_slots", 0);
  const auto fill = j.value("history_fill", std::string("zeros"));
  if (fill == "zeros")
    d.history_fill = HistoryFill::Zeros;
  else if (fill == "repeat_current")
    d.history_fill = HistoryFill::RepeatCurrent;
  else
    fail(ErrorKind::Config, "unknown history_fill '" + fill + "'");
  return d;
}

LayoutDescriptor canonical_layout() {
  LayoutDescriptor d;
  for (int k = 0; k < 6; ++k)
    d.channels.push_back({ChannelKind::PlayerPiece, static_cast<uint8_t>(k)});
  for (int k = 0; k < 6; ++k)
    d.channels.push_back({ChannelKind::OpponentPiece, static_cast<uint8_t>(k)});
  d.channels.push_back({ChannelKind::CastleUsKing});
  d.channels.push_back({ChannelKind::CastleUsQueen});
  d.channels.push_back({ChannelKind::CastleThemKing});
  d.channels.push_back({ChannelKind::CastleThemQueen});
  d.channels.push_back({ChannelKind::Rule50});
  d.channels.push_back({ChannelKind::Ones});
  return d;
}

InputPlanes encode_input(const Board& board, const LayoutDescriptor& layout) {
  if (board.orientation() != Orientation::PlayerRelative)
    fail(ErrorKind::Config, "encode_input requires a player-relative board");

  InputPlanes planes;
  planes.n_channels = layout.n_channels();
  planes.values.assign(static_cast<size_t>(planes.n_channels) * 64, 0.0f);

  // In the player frame, "us" is stored as White and castling bits kWK/kWQ
  // belong to the player.
  const auto fill_pieces = [&](int channel, Color c, PieceKind k) {
    uint64_t bb = board.pieces(c, k);
    while (bb) {
      planes.values[channel * 64 + std::countr_zero(bb)] = 1.0f;
      bb &= bb - 1;
    }
  };
  const auto fill_const = [&](int channel, float v) {
    for (int sq = 0; sq < 64; ++sq) planes.values[channel * 64 + sq] = v;
  };

  int ch = 0;
  for (const auto& c : layout.channels) {
    switch (c.kind) {
      case ChannelKind::PlayerPiece:
        fill_pieces(ch, Color::White, static_cast<PieceKind>(c.param));
        break;
      case ChannelKind::OpponentPiece:
        fill_pieces(ch, Color::Black, static_cast<PieceKind>(c.param));
        break;
      case ChannelKind::CastleUsKing: fill_const(ch, (board.castling() & kWK) ? 1.0f : 0.0f); break;
      case ChannelKind::CastleUsQueen: fill_const(ch, (board.castling() & kWQ) ? 1.0f : 0.0f); break;
      case ChannelKind::CastleThemKing: fill_const(ch, (board.castling() & kBK) ? 1.0f : 0.0f); break;
      case ChannelKind::CastleThemQueen: fill_const(ch, (board.castling() & kBQ) ? 1.0f : 0.0f); break;
      case ChannelKind::Rule50: fill_const(ch, static_cast<float>(board.halfmove_clock()) / 100.0f); break;
      case ChannelKind::Ones: fill_const(ch, 1.0f); break;
      case ChannelKind::Zeros: break;
    }
    ++ch;
  }

  // History slots: repeats of the 12-piece block or zeros; a single state is
  // all this encoder ever sees, so "repeat" duplicates the current pieces.
  for (int slot = 0; slot < layout.history_slots; ++slot) {
    if (layout.history_fill == HistoryFill::Zeros) {
      ch += 12;
      continue;
    }
    for (int k = 0; k < 6; ++k) fill_pieces(ch++, Color::White, static_cast<PieceKind>(k));
    for (int k = 0; k < 6; ++k) fill_pieces(ch++, Color::Black, static_cast<PieceKind>(k));
  }

  for (int sq = 0; sq < 64; ++sq)
    planes.positional[sq] = positional_vector(Square(sq));
  return planes;
}

}  // namespace ply::chess
