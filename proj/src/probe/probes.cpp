#include "probe/probes.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <json.hpp>

#include "common/error.hpp"
#include "common/rng.hpp"
#include "stats/stats.hpp"

namespace ply::probe {

namespace {

using nlohmann::json;
using nn::Tensor;

int argmax64(const std::array<double, 64>& v) {
  int best = 0;
  for (int i = 1; i < 64; ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

Tensor to_f32(const std::vector<double>& v, int rows, int cols) {
  Tensor t({rows, cols});
  for (size_t i = 0; i < v.size(); ++i) t.data[i] = static_cast<float>(v[i]);
  return t;
}

std::vector<double> to_f64(const Tensor& t) {
  return {t.data.begin(), t.data.end()};
}

// Examples reference store tensors; anchor/label depend on the stage.
struct Example {
  const Tensor* residuals;
  int anchor;
  int label;
};

std::vector<Example> collect_examples(const ActivationStore& store,
                                      const std::vector<std::string>& ids, int stream,
                                      Stage stage) {
  const size_t si = store.stream_index(stream);
  const std::set<std::string> want(ids.begin(), ids.end());
  std::vector<Example> out;
  for (const StoreEntry& e : store.entries) {
    if (!want.count(e.puzzle_id)) continue;
    if (stage == Stage::Target)
      out.push_back({&e.residuals[si], e.t1, e.t3});
    else
      out.push_back({&e.residuals[si], e.t3, e.s3});
  }
  if (out.size() != want.size())
    fail(ErrorKind::Config, "activation store is missing " +
                                std::to_string(want.size() - out.size()) +
                                " of the requested puzzle ids");
  return out;
}

}  // namespace

std::string stage_name(Stage s) { return s == Stage::Target ? "target" : "source"; }

Stage stage_from_name(const std::string& name) {
  if (name == "target") return Stage::Target;
  if (name == "source") return Stage::Source;
  fail(ErrorKind::Parse, "unknown probe stage '" + name + "'");
}

void save_probe(const std::string& path, const ProbeParams& p) {
  nn::Archive ar;
  ar.put("probe.u", to_f32(p.U, p.rank, p.d));
  ar.put("probe.v", to_f32(p.V, p.rank, p.d));
  json meta = {{"kind", "probe"},     {"stage", stage_name(p.stage)}, {"stream", p.stream},
               {"rank", p.rank},      {"d", p.d},                     {"c", p.c}};
  ar.metadata() = meta.dump();
  ar.save(path);
}

ProbeParams load_probe(const std::string& path) {
  const nn::Archive ar = nn::Archive::load(path);
  json meta;
  try {
    meta = json::parse(ar.metadata());
  } catch (const json::exception& e) {
    fail(ErrorKind::Parse, std::string("probe archive metadata is not valid JSON: ") + e.what());
  }
  if (meta.value("kind", "") != "probe")
    fail(ErrorKind::Parse, "archive '" + path + "' does not hold a probe");
  ProbeParams p;
  p.rank = meta.at("rank").get<int>();
  p.d = meta.at("d").get<int>();
  p.stream = meta.at("stream").get<int>();
  p.stage = stage_from_name(meta.at("stage").get<std::string>());
  p.c = meta.at("c").get<double>();
  const Tensor& u = ar.get("probe.u");
  const Tensor& v = ar.get("probe.v");
  u.expect_shape({p.rank, p.d}, "probe.u");
  v.expect_shape({p.rank, p.d}, "probe.v");
  p.U = to_f64(u);
  p.V = to_f64(v);
  return p;
}

size_t ActivationStore::stream_index(int stream) const {
  const auto it = std::find(streams.begin(), streams.end(), stream);
  if (it == streams.end())
    fail(ErrorKind::Config,
         "residual stream " + std::to_string(stream) + " is not cached in this store");
  return static_cast<size_t>(it - streams.begin());
}

const StoreEntry& ActivationStore::entry(const std::string& puzzle_id) const {
  const auto it = std::lower_bound(
      entries.begin(), entries.end(), puzzle_id,
      [](const StoreEntry& e, const std::string& id) { return e.puzzle_id < id; });
  if (it == entries.end() || it->puzzle_id != puzzle_id)
    fail(ErrorKind::Config, "activation store has no entry for puzzle '" + puzzle_id + "'");
  return *it;
}

void ActivationStore::save(const std::string& path) const {
  nn::Archive ar;
  json ids = json::array();
  for (const StoreEntry& e : entries) {
    ids.push_back({{"id", e.puzzle_id}, {"t1", e.t1}, {"t3", e.t3}, {"s3", e.s3}});
    for (size_t si = 0; si < streams.size(); ++si)
      ar.put("res." + e.puzzle_id + ".s" + std::to_string(streams[si]), e.residuals[si]);
  }
  json meta = {{"kind", "activations"},
               {"model_hash", model_hash},
               {"d", d},
               {"streams", streams},
               {"entries", ids}};
  ar.metadata() = meta.dump();
  ar.save(path);
}

ActivationStore ActivationStore::load(const std::string& path,
                                      const std::string& expect_model_hash) {
  nn::Archive ar = nn::Archive::load(path);
  json meta;
  try {
    meta = json::parse(ar.metadata());
  } catch (const json::exception& e) {
    fail(ErrorKind::Parse, std::string("store metadata is not valid JSON: ") + e.what());
  }
  if (meta.value("kind", "") != "activations")
    fail(ErrorKind::Parse, "archive '" + path + "' does not hold cached activations");

  ActivationStore store;
  store.model_hash = meta.at("model_hash").get<std::string>();
  if (!expect_model_hash.empty() && store.model_hash != expect_model_hash)
    fail(ErrorKind::Config, "activation store was cached for model " + store.model_hash +
                                ", expected " + expect_model_hash);
  store.d = meta.at("d").get<int>();
  store.streams = meta.at("streams").get<std::vector<int>>();
  for (const auto& row : meta.at("entries")) {
    StoreEntry e;
    e.puzzle_id = row.at("id").get<std::string>();
    e.t1 = row.at("t1").get<int>();
    e.t3 = row.at("t3").get<int>();
    e.s3 = row.at("s3").get<int>();
    for (const int s : store.streams) {
      const Tensor& t = ar.get("res." + e.puzzle_id + ".s" + std::to_string(s));
      t.expect_shape({64, store.d}, "cached residuals");
      e.residuals.push_back(t);
    }
    store.entries.push_back(std::move(e));
  }
  return store;
}

ActivationStore cache_activations(const nn::Model& model,
                                  const std::vector<data::PuzzleRecord>& records,
                                  std::vector<int> streams) {
  std::sort(streams.begin(), streams.end());
  for (const int s : streams)
    if (s < 0 || s > model.spec().n_layers)
      fail(ErrorKind::Config, "residual stream " + std::to_string(s) + " out of range");

  ActivationStore store;
  store.model_hash = model.hash();
  store.d = model.spec().d_resid;
  store.streams = streams;

  std::vector<const data::PuzzleRecord*> order;
  for (const auto& r : records) order.push_back(&r);
  std::sort(order.begin(), order.end(),
            [](const data::PuzzleRecord* a, const data::PuzzleRecord* b) { return a->id < b->id; });

  nn::HookSet hooks;
  for (const int s : streams) hooks.reads.push_back(nn::ActivationSite::residual(s, 0));

  for (const data::PuzzleRecord* rec : order) {
    const chess::Board pf = chess::Board::from_fen(rec->fen).orient_to_player();
    const auto planes = chess::encode_input(pf, model.spec().layout);
    const auto fwd = model.forward(planes, hooks, nn::TraceLevel::Policy);
    const auto dist = nn::policy_distribution(fwd.policy, pf);

    StoreEntry e;
    e.puzzle_id = rec->id;
    e.t1 = dist.argmax().to.index();  // player frame: the model's own move target
    e.t3 = rec->squares[2].t_player.index();
    e.s3 = rec->squares[2].s_player.index();
    for (const int s : streams) e.residuals.push_back(fwd.trace.residual[static_cast<size_t>(s)]);
    store.entries.push_back(std::move(e));
  }
  return store;
}

std::array<double, 64> probe_logits(const ProbeParams& p, const Tensor& residuals, int anchor) {
  residuals.expect_shape({64, p.d}, "probe residuals");
  if (anchor < 0 || anchor >= 64) fail(ErrorKind::Config, "probe anchor square out of range");

  // z = V r_anchor
  std::vector<double> z(static_cast<size_t>(p.rank), 0.0);
  const float* ra = residuals.row(anchor);
  for (int k = 0; k < p.rank; ++k) {
    double acc = 0.0;
    const double* vrow = &p.V[static_cast<size_t>(k) * p.d];
    for (int j = 0; j < p.d; ++j) acc += vrow[j] * ra[j];
    z[static_cast<size_t>(k)] = acc;
  }
  std::array<double, 64> logits{};
  for (int y = 0; y < 64; ++y) {
    const float* ry = residuals.row(y);
    double acc = p.c;
    for (int k = 0; k < p.rank; ++k) {
      double uy = 0.0;
      const double* urow = &p.U[static_cast<size_t>(k) * p.d];
      for (int j = 0; j < p.d; ++j) uy += urow[j] * ry[j];
      acc += uy * z[static_cast<size_t>(k)];
    }
    logits[static_cast<size_t>(y)] = acc;
  }
  return logits;
}

ProbeGrad probe_loss_grad(const ProbeParams& p, const Tensor& residuals, int anchor, int label) {
  if (label < 0 || label >= 64) fail(ErrorKind::Config, "probe label square out of range");
  const auto logits = probe_logits(p, residuals, anchor);

  double mx = logits[0];
  for (const double v : logits) mx = std::max(mx, v);
  double lse = 0.0;
  for (const double v : logits) lse += std::exp(v - mx);
  lse = mx + std::log(lse);

  std::array<double, 64> g{};  // softmax - onehot
  for (int y = 0; y < 64; ++y) g[static_cast<size_t>(y)] = std::exp(logits[static_cast<size_t>(y)] - lse);
  g[static_cast<size_t>(label)] -= 1.0;

  ProbeGrad out;
  out.loss = lse - logits[static_cast<size_t>(label)];
  out.dU.assign(p.U.size(), 0.0);
  out.dV.assign(p.V.size(), 0.0);
  for (const double gy : g) out.dc += gy;

  // u = R^T g; z = V r_a; a_k = (U R^T g)_k
  std::vector<double> u(static_cast<size_t>(p.d), 0.0);
  for (int y = 0; y < 64; ++y) {
    const float* ry = residuals.row(y);
    const double gy = g[static_cast<size_t>(y)];
    if (gy == 0.0) continue;
    for (int j = 0; j < p.d; ++j) u[static_cast<size_t>(j)] += gy * ry[j];
  }
  const float* ra = residuals.row(anchor);
  for (int k = 0; k < p.rank; ++k) {
    const double* vrow = &p.V[static_cast<size_t>(k) * p.d];
    const double* urow = &p.U[static_cast<size_t>(k) * p.d];
    double zk = 0.0, ak = 0.0;
    for (int j = 0; j < p.d; ++j) zk += vrow[j] * ra[j];
    for (int j = 0; j < p.d; ++j) ak += urow[j] * u[static_cast<size_t>(j)];
    double* durow = &out.dU[static_cast<size_t>(k) * p.d];
    double* dvrow = &out.dV[static_cast<size_t>(k) * p.d];
    // dU = z u^T, dV = (U u) r_a^T
    for (int j = 0; j < p.d; ++j) durow[j] = zk * u[static_cast<size_t>(j)];
    for (int j = 0; j < p.d; ++j) dvrow[j] = ak * ra[j];
  }
  return out;
}

TrainResult train_probe(const ActivationStore& store, const std::vector<std::string>& train_ids,
                        int stream, Stage stage, const TrainHyper& hyper, uint64_t seed) {
  const auto examples = collect_examples(store, train_ids, stream, stage);
  if (examples.empty()) fail(ErrorKind::Config, "probe training needs a non-empty train split");
  if (hyper.rank <= 0 || hyper.batch_size <= 0 || hyper.epochs <= 0)
    fail(ErrorKind::Config, "probe hyperparameters must be positive");

  const int d = store.d;
  ProbeParams p;
  p.rank = hyper.rank;
  p.d = d;
  p.stream = stream;
  p.stage = stage;
  p.c = 0.0;

  Rng rng(seed);
  const double init_std = 1.0 / std::sqrt(static_cast<double>(d));
  const size_t n_param = static_cast<size_t>(hyper.rank) * static_cast<size_t>(d);
  p.U.resize(n_param);
  p.V.resize(n_param);
  for (auto& w : p.U) w = rng.gaussian() * init_std;
  for (auto& w : p.V) w = rng.gaussian() * init_std;

  // Adam state for U and V. The bias c is untrained: softmax cross-entropy
  // is shift-invariant, so its true gradient is identically zero.
  std::vector<double> mU(n_param, 0.0), vU(n_param, 0.0), mV(n_param, 0.0), vV(n_param, 0.0);
  int64_t t = 0;
  const auto adam_step = [&](std::vector<double>& theta, std::vector<double>& m,
                             std::vector<double>& v, const std::vector<double>& grad) {
    const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(t));
    for (size_t i = 0; i < theta.size(); ++i) {
      m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * grad[i];
      v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * grad[i] * grad[i];
      theta[i] -= hyper.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + hyper.eps);
    }
  };

  std::vector<size_t> idx(examples.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;

  TrainResult result;
  std::vector<double> gU(n_param), gV(n_param);
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    for (size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[static_cast<size_t>(rng.uniform_int(static_cast<int>(i)))]);

    const size_t batches = idx.size() / static_cast<size_t>(hyper.batch_size);
    double epoch_loss = 0.0;
    for (size_t b = 0; b < batches; ++b) {
      std::fill(gU.begin(), gU.end(), 0.0);
      std::fill(gV.begin(), gV.end(), 0.0);
      double batch_loss = 0.0;
      const double inv = 1.0 / static_cast<double>(hyper.batch_size);
      for (int e = 0; e < hyper.batch_size; ++e) {
        const Example& ex = examples[idx[b * static_cast<size_t>(hyper.batch_size) +
                                          static_cast<size_t>(e)]];
        const ProbeGrad g = probe_loss_grad(p, *ex.residuals, ex.anchor, ex.label);
        batch_loss += g.loss * inv;
        for (size_t i = 0; i < n_param; ++i) gU[i] += g.dU[i] * inv;
        for (size_t i = 0; i < n_param; ++i) gV[i] += g.dV[i] * inv;
      }
      if (!std::isfinite(batch_loss))
        fail(ErrorKind::Numeric, "probe training diverged: non-finite loss at epoch " +
                                     std::to_string(epoch + 1) + ", batch " +
                                     std::to_string(b + 1));
      ++t;
      adam_step(p.U, mU, vU, gU);
      adam_step(p.V, mV, vV, gV);
      epoch_loss += batch_loss;
    }
    result.epoch_loss.push_back(batches ? epoch_loss / static_cast<double>(batches) : 0.0);
  }
  result.params = std::move(p);
  return result;
}

std::pair<int, int> predict_third_move(const ProbeParams& target, const ProbeParams& source,
                                       const Tensor& residuals, int t1) {
  const int t3_hat = argmax64(probe_logits(target, residuals, t1));
  const int s3_hat = argmax64(probe_logits(source, residuals, t3_hat));
  return {t3_hat, s3_hat};
}

EvalResult evaluate_probes(const ProbeParams& target, const ProbeParams& source,
                           const ActivationStore& store,
                           const std::vector<std::string>& train_ids,
                           const std::vector<std::string>& eval_ids) {
  if (eval_ids.empty()) fail(ErrorKind::Config, "probe evaluation needs a non-empty eval split");
  const std::set<std::string> train(train_ids.begin(), train_ids.end());
  for (const auto& id : eval_ids)
    if (train.count(id))
      fail(ErrorKind::Config, "train/eval splits overlap (puzzle '" + id + "')");
  if (target.stream != source.stream)
    fail(ErrorKind::Config, "probe stages were trained on different residual streams");

  const size_t si = store.stream_index(target.stream);
  EvalResult r;
  for (const auto& id : eval_ids) {
    const StoreEntry& e = store.entry(id);
    const Tensor& res = e.residuals[si];
    const int t3_hat = argmax64(probe_logits(target, res, e.t1));
    const int s3_from_truth = argmax64(probe_logits(source, res, e.t3));
    const auto [t3_chain, s3_chain] = predict_third_move(target, source, res, e.t1);
    r.target_acc += t3_hat == e.t3 ? 1.0 : 0.0;
    r.source_acc += s3_from_truth == e.s3 ? 1.0 : 0.0;
    r.pipeline_acc += (t3_chain == e.t3 && s3_chain == e.s3) ? 1.0 : 0.0;
    ++r.n;
  }
  r.target_acc /= r.n;
  r.source_acc /= r.n;
  r.pipeline_acc /= r.n;
  return r;
}

MultiSeedSummary summarize_seed_accs(const std::vector<double>& accs, int n_eval) {
  if (accs.size() < 2) fail(ErrorKind::Config, "seed summary needs at least 2 runs");
  if (n_eval <= 0) fail(ErrorKind::Config, "seed summary needs a positive eval count");
  MultiSeedSummary s;
  s.accs = accs;
  const auto [mean, sem] = stats::mean_sem(accs);
  s.mean = mean;
  s.sigma_train = sem;  // standard error of the mean over the training runs
  s.sigma_acc = std::sqrt(std::max(0.0, mean * (1.0 - mean)) / static_cast<double>(n_eval));
  s.sigma_total = stats::propagate({s.sigma_train, s.sigma_acc});
  return s;
}

}  // namespace ply::probe
