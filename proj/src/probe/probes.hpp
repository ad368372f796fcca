#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "data/puzzles.hpp"
#include "nn/model.hpp"

namespace ply::probe {

enum class Stage : uint8_t { Target, Source };

std::string stage_name(Stage s);
Stage stage_from_name(const std::string& name);

// Bilinear square readout: logit_y = res_y^T U^T V res_anchor + c. The bias
// is kept for completeness; softmax cross-entropy is shift-invariant, so its
// gradient is identically zero and training leaves it at the initial 0.
struct ProbeParams {
  int rank = 0;
  int d = 0;       // residual width
  int stream = 0;  // residual stream the probe reads
  Stage stage = Stage::Target;
  std::vector<double> U, V;  // row-major [rank][d]
  double c = 0.0;
};

void save_probe(const std::string& path, const ProbeParams& params);
ProbeParams load_probe(const std::string& path);

struct StoreEntry {
  std::string puzzle_id;
  std::vector<nn::Tensor> residuals;  // one [64,d] matrix per cached stream
  int t1 = -1;  // player-frame square indices; t1 from the model's own policy
  int t3 = -1;  // labels from the puzzle PV
  int s3 = -1;
};

// Post-LayerNorm residuals cached per (puzzle, stream), tagged with the
// model hash they came from.
struct ActivationStore {
  std::string model_hash;
  int d = 0;
  std::vector<int> streams;
  std::vector<StoreEntry> entries;  // sorted by puzzle id

  size_t stream_index(int stream) const;  // throws Config when not cached
  const StoreEntry& entry(const std::string& puzzle_id) const;

  void save(const std::string& path) const;
  // expect_model_hash, when non-empty, must match the stored tag.
  static ActivationStore load(const std::string& path,
                              const std::string& expect_model_hash = "");
};

ActivationStore cache_activations(const nn::Model& model,
                                  const std::vector<data::PuzzleRecord>& records,
                                  std::vector<int> streams);

// 64 logits for one entry's residual matrix at the given anchor square.
std::array<double, 64> probe_logits(const ProbeParams& params, const nn::Tensor& residuals,
                                    int anchor);

// Loss and gradients of one example's softmax cross-entropy (used by the
// optimizer and by finite-difference checks).
struct ProbeGrad {
  double loss = 0.0;
  std::vector<double> dU, dV;  // same layout as ProbeParams::U/V
  double dc = 0.0;             // identically zero up to roundoff
};

ProbeGrad probe_loss_grad(const ProbeParams& params, const nn::Tensor& residuals, int anchor,
                          int label);

struct TrainHyper {
  int rank = 32;
  double lr = 1e-2;
  int batch_size = 64;
  int epochs = 5;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

struct TrainResult {
  ProbeParams params;
  std::vector<double> epoch_loss;  // mean loss over the full batches of each epoch
};

// Adam-trained probe on the store entries named by train_ids. Target stage:
// anchor t1, label t3. Source stage: anchor t3 (ground truth), label s3.
// Deterministic per seed; incomplete final batches are dropped. Throws
// Numeric with diagnostics if the loss goes non-finite.
TrainResult train_probe(const ActivationStore& store, const std::vector<std::string>& train_ids,
                        int stream, Stage stage, const TrainHyper& hyper, uint64_t seed);

// t3-hat from the target probe anchored at t1, then s3-hat from the source
// probe anchored at t3-hat. Ties break toward the smaller square index.
std::pair<int, int> predict_third_move(const ProbeParams& target, const ProbeParams& source,
                                       const nn::Tensor& residuals, int t1);

struct EvalResult {
  double target_acc = 0.0;    // t3-hat == t3, anchored at t1
  double source_acc = 0.0;    // s3-hat == s3, anchored at ground-truth t3
  double pipeline_acc = 0.0;  // both squares right with the chained prediction
  int n = 0;
};

// Evaluates on eval_ids; train_ids are only used to enforce disjointness.
EvalResult evaluate_probes(const ProbeParams& target, const ProbeParams& source,
                           const ActivationStore& store,
                           const std::vector<std::string>& train_ids,
                           const std::vector<std::string>& eval_ids);

struct MultiSeedSummary {
  std::vector<double> accs;
  double mean = 0.0;
  double sigma_train = 0.0;  // SEM over the seeded training runs
  double sigma_acc = 0.0;    // Bernoulli sqrt(a(1-a)/n)
  double sigma_total = 0.0;  // quadrature sum
};

MultiSeedSummary summarize_seed_accs(const std::vector<double>& accs, int n_eval);

}  // namespace ply::probe
