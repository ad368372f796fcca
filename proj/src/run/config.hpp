#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "corrupt/corruption.hpp"
#include "data/puzzles.hpp"

namespace ply::run {

// One flat bag of knobs shared by every command. Commands read the fields
// they need; from_json rejects unknown keys so typos surface immediately.
struct RunConfig {
  std::string weights;       // strong model archive
  std::string weak_weights;  // weak model archive
  std::string dataset;       // puzzle CSV (filter-puzzles) or JSONL (the rest)
  std::string out;           // output directory, owned by one run
  std::string probes;        // train-probes output dir, input to eval-probes
  std::string results;       // prior run output dir, input to subsplit-report
  std::string tags;          // head-tag CSV; empty = detect in-run

  uint64_t seed = 0;
  int jobs = 1;
  int limit = 0;  // 0 = all puzzles; else the first N by sorted id

  // puzzle pipeline
  bool apply_setup_move = false;
  int min_pv = 3;
  data::PuzzleFilterConfig filter;

  // corruption search
  corrupt::FilterThresholds corruption;

  // attention-entry experiments; layer/head use the paper's 1-based labels
  int layer = 12;
  int head = 12;
  bool transpose_qk = false;
  bool presoftmax = false;

  // piece-head detection
  double head_threshold = 0.5;
  int board_sample = 64;

  // probes
  int probe_rank = 32;
  double probe_lr = 1e-2;
  int probe_batch = 64;
  int probe_epochs = 5;
  int probe_seeds = 5;
  double train_frac = 0.7;
  std::vector<int> streams;  // residual streams to probe; empty = all
  bool save_store = false;   // persist cached activations next to the probes

  std::string to_json() const;
  static RunConfig from_json(const std::string& text);
};

}  // namespace ply::run
