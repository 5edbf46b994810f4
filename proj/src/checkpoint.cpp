#include "ugp/checkpoint.hpp"

#include "ugp/errors.hpp"

#include <fstream>
#include <regex>

namespace ugp {

namespace fs = std::filesystem;
using nlohmann::json;

RunConfig Checkpoint::run_config() const {
  RunConfig c;
  from_json(config, c);
  return c;
}

NamedTensors Checkpoint::with_prefix(const std::string& prefix) const {
  NamedTensors out;
  for (const auto& [name, t] : weights) {
    if (name.rfind(prefix, 0) == 0) out.emplace_back(name, t);
  }
  return out;
}

fs::path checkpoint_path(const fs::path& dir, Stage stage, int step) {
  return dir / ("stage-" + to_string(stage) + "-step-" + std::to_string(step));
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  std::error_code ec;
  fs::create_directories(path, ec);
  if (ec) throw IOError("cannot create " + path.string() + ": " + ec.message());
  write_tensors(path / "weights.bin", ckpt.weights);
  NamedTensors rng;
  if (ckpt.rng_state.defined()) rng.emplace_back("rng_state", ckpt.rng_state);
  write_tensors(path / "rng.bin", rng);
  json meta = {{"stage", to_string(ckpt.stage)},
               {"step", ckpt.step},
               {"version", kVersion},
               {"schema_version", kConfigSchemaVersion},
               {"config", ckpt.config}};
  std::ofstream out(path / "meta.json");
  if (!out) throw IOError("cannot write " + (path / "meta.json").string());
  out << meta.dump(2) << "\n";
}

Checkpoint load_checkpoint(const fs::path& path) {
  if (!fs::is_directory(path)) throw NotFound("checkpoint " + path.string());
  for (const char* f : {"weights.bin", "meta.json"}) {
    if (!fs::exists(path / f)) throw NotFound((path / f).string());
  }
  Checkpoint c;
  try {
    json meta;
    std::ifstream(path / "meta.json") >> meta;
    c.stage = stage_from_string(meta.at("stage").get<std::string>());
    c.step = meta.at("step").get<int>();
    c.config = meta.at("config");
  } catch (const json::exception& e) {
    throw FormatError((path / "meta.json").string() + ": " + e.what());
  }
  c.weights = read_tensors(path / "weights.bin");
  if (fs::exists(path / "rng.bin")) {
    auto rng = read_tensors(path / "rng.bin");
    if (!rng.empty()) c.rng_state = rng.front().second;
  }
  return c;
}

std::optional<fs::path> latest_checkpoint(const fs::path& dir, Stage stage) {
  if (!fs::is_directory(dir)) return std::nullopt;
  const std::regex pattern("stage-" + to_string(stage) + "-step-([0-9]+)");
  std::optional<fs::path> best;
  long best_step = -1;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const auto name = entry.path().filename().string();
    if (!entry.is_directory() || !std::regex_match(name, m, pattern)) continue;
    const long step = std::stol(m[1].str());
    if (step > best_step) {
      best_step = step;
      best = entry.path();
    }
  }
  return best;
}

}  // namespace ugp
