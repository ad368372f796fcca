#include "run/config.hpp"

#include <json.hpp>

#include "common/error.hpp"

namespace ply::run {

using nlohmann::json;

std::string RunConfig::to_json() const {
  json j = {
      {"weights", weights},
      {"weak_weights", weak_weights},
      {"dataset", dataset},
      {"out", out},
      {"probes", probes},
      {"results", results},
      {"tags", tags},
      {"seed", seed},
      {"jobs", jobs},
      {"limit", limit},
      {"apply_setup_move", apply_setup_move},
      {"min_pv", min_pv},
      {"weak_threshold", filter.weak_max},
      {"strong_threshold", filter.strong_min},
      {"opponent_threshold", filter.opponent_min},
      {"corrupt_strong_prob", corruption.strong_prob},
      {"corrupt_weak_drop", corruption.weak_drop},
      {"corrupt_value_gain", corruption.value_gain},
      {"corrupt_use_strong", corruption.use_a},
      {"corrupt_use_weak", corruption.use_b},
      {"corrupt_use_value", corruption.use_c},
      {"layer", layer},
      {"head", head},
      {"transpose_qk", transpose_qk},
      {"presoftmax", presoftmax},
      {"head_threshold", head_threshold},
      {"board_sample", board_sample},
      {"probe_rank", probe_rank},
      {"probe_lr", probe_lr},
      {"probe_batch", probe_batch},
      {"probe_epochs", probe_epochs},
      {"probe_seeds", probe_seeds},
      {"train_frac", train_frac},
      {"streams", streams},
      {"save_store", save_store},
  };
  return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) fail(ErrorKind::Config, "config must be a JSON object");

  RunConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "weights") c.weights = value.get<std::string>();
      else if (key == "weak_weights") c.weak_weights = value.get<std::string>();
      else if (key == "dataset") c.dataset = value.get<std::string>();
      else if (key == "out") c.out = value.get<std::string>();
      else if (key == "probes") c.probes = value.get<std::string>();
      else if (key == "results") c.results = value.get<std::string>();
      else if (key == "tags") c.tags = value.get<std::string>();
      else if (key == "seed") c.seed = value.get<uint64_t>();
      else if (key == "jobs") c.jobs = value.get<int>();
      else if (key == "limit") c.limit = value.get<int>();
      else if (key == "apply_setup_move") c.apply_setup_move = value.get<bool>();
      else if (key == "min_pv") c.min_pv = value.get<int>();
      else if (key == "weak_threshold") c.filter.weak_max = value.get<double>();
      else if (key == "strong_threshold") c.filter.strong_min = value.get<double>();
      else if (key == "opponent_threshold") c.filter.opponent_min = value.get<double>();
      else if (key == "corrupt_strong_prob") c.corruption.strong_prob = value.get<double>();
      else if (key == "corrupt_weak_drop") c.corruption.weak_drop = value.get<double>();
      else if (key == "corrupt_value_gain") c.corruption.value_gain = value.get<double>();
      else if (key == "corrupt_use_strong") c.corruption.use_a = value.get<bool>();
      else if (key == "corrupt_use_weak") c.corruption.use_b = value.get<bool>();
      else if (key == "corrupt_use_value") c.corruption.use_c = value.get<bool>();
      else if (key == "layer") c.layer = value.get<int>();
      else if (key == "head") c.head = value.get<int>();
      else if (key == "transpose_qk") c.transpose_qk = value.get<bool>();
      else if (key == "presoftmax") c.presoftmax = value.get<bool>();
      else if (key == "head_threshold") c.head_threshold = value.get<double>();
      else if (key == "board_sample") c.board_sample = value.get<int>();
      else if (key == "probe_rank") c.probe_rank = value.get<int>();
      else if (key == "probe_lr") c.probe_lr = value.get<double>();
      else if (key == "probe_batch") c.probe_batch = value.get<int>();
      else if (key == "probe_epochs") c.probe_epochs = value.get<int>();
      else if (key == "probe_seeds") c.probe_seeds = value.get<int>();
      else if (key == "train_frac") c.train_frac = value.get<double>();
      else if (key == "streams") c.streams = value.get<std::vector<int>>();
      else if (key == "save_store") c.save_store = value.get<bool>();
      else fail(ErrorKind::Config, "unknown config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::Config, std::string("config field has the wrong type: ") + e.what());
  }
  return c;
}

}  // namespace ply::run
