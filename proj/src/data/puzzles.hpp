#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "chess/board.hpp"
#include "corrupt/corruption.hpp"
#include "patch/patching.hpp"

namespace ply::data {

enum class Subsplit : uint8_t { SameTarget, DifferentTarget };

std::string subsplit_name(Subsplit s);
Subsplit subsplit_from_name(const std::string& name);

// Source/target squares of one principal-variation move, recorded both in the
// player frame of the state where the move is played and in the absolute
// frame (dual bookkeeping; the two must stay consistent).
struct MoveSquares {
  chess::Square s_player{0}, t_player{0};
  chess::Square s_abs{0}, t_abs{0};

  bool operator==(const MoveSquares&) const = default;
};

struct PuzzleRecord {
  std::string id;
  std::string fen;              // state where PV move 1 is played
  std::vector<chess::Move> pv;  // absolute frame, legal in sequence, >= 3 moves
  std::vector<MoveSquares> squares;  // one entry per PV move
  int rating = 0;               // carried through, unused by filters
  Subsplit subsplit = Subsplit::DifferentTarget;
  std::optional<corrupt::CorruptionCandidate> corruption;

  bool operator==(const PuzzleRecord&) const = default;
};

// Builds a record from raw fields, deriving squares and the subsplit tag.
// Throws Parse on bad FEN / short PV and Illegal on a PV that does not play
// out legally from the FEN.
PuzzleRecord make_record(std::string id, const std::string& fen, std::vector<chess::Move> pv,
                         int rating);

struct IngestOptions {
  // The Lichess dump lists the move *leading into* the puzzle first; with
  // this set, that move is applied to the FEN and dropped from the PV.
  bool apply_setup_move = false;
  size_t min_pv = 3;
};

struct IngestStats {
  uint64_t rows = 0;  // data rows seen (header excluded)
  uint64_t kept = 0;
  std::map<std::string, uint64_t> skipped;  // reason -> count

  uint64_t skipped_total() const;
};

// Streams a Lichess puzzle CSV (columns located by header name: PuzzleId,
// FEN, Moves, Rating). Malformed rows are skipped and counted by reason;
// rows == kept + skipped. Throws Io on unreadable file, Parse on a header
// missing a required column.
std::vector<PuzzleRecord> ingest_lichess_csv(const std::string& path, const IngestOptions& opt,
                                             IngestStats* stats = nullptr);

struct PuzzleFilterConfig {
  double weak_max = 0.10;      // weak model must stay below this on player moves
  double strong_min = 0.50;    // strong model must reach this on player moves
  double opponent_min = 0.50;  // weak model must reach this on the reply (move 2)
};

struct FilterDecision {
  bool keep = true;
  std::string reason;  // first failed condition; empty when kept
  int move_index = 0;  // 1-based PV index of the failure; 0 when kept
};

// Walks the PV state by state. Player moves (indices 1,3,5,...) must be
// non-obvious to the weak model and found by the strong model; the reply
// (index 2) must be forced for the weak model.
FilterDecision filter_puzzle(const nn::Model& strong, const nn::Model& weak,
                             const PuzzleRecord& rec, const PuzzleFilterConfig& cfg = {});

// same_target iff the first two PV moves land on the same absolute square.
Subsplit subsplit_of(const PuzzleRecord& rec);

// Versioned JSONL, one record per line, stable order by id. Load re-derives
// squares/subsplit and re-validates PV legality; throws Parse on a version
// tag mismatch or an invalid record.
void save_dataset(const std::string& path, std::vector<PuzzleRecord> records);
std::vector<PuzzleRecord> load_dataset(const std::string& path);

struct SplitIds {
  std::vector<std::string> train, eval;
};

// Seeded-shuffle split of the record ids (sorted first, so the split is a
// function of the id set and the seed alone).
SplitIds train_eval_split(const std::vector<PuzzleRecord>& records, double train_frac,
                          uint64_t seed);

// Assembles the intervention context for a puzzle with a stored corruption.
patch::PatchContext make_patch_context(const PuzzleRecord& rec);

}  // namespace ply::data
