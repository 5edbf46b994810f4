#include "ugp/config.hpp"

#include "ugp/errors.hpp"

#include <fstream>

namespace ugp {

using nlohmann::json;

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::restoration: return "restoration";
    case Stage::synthesis_pretrain: return "synthesis-pretrain";
    case Stage::synthesis: return "synthesis";
    case Stage::fusion: return "fusion";
  }
  return "unknown";
}

Stage stage_from_string(const std::string& name) {
  if (name == "restoration") return Stage::restoration;
  if (name == "synthesis-pretrain") return Stage::synthesis_pretrain;
  if (name == "synthesis") return Stage::synthesis;
  if (name == "fusion") return Stage::fusion;
  throw InvalidArgument("unknown stage '" + name + "'");
}

losses::PerceptualExtractor PerceptualConfig::build() const {
  if (!weights.empty()) return losses::PerceptualExtractor::load(weights);
  return losses::PerceptualExtractor::random(seed, channels);
}

void RunConfig::apply_preset(const std::string& name) {
  if (name == "a") {
    use_adapter = false;
    fusion.image_domain = false;
  } else if (name == "b") {
    use_adapter = true;
    fusion.image_domain = true;
  } else if (name == "c") {
    use_adapter = true;
    fusion.image_domain = false;
  } else {
    throw InvalidArgument("unknown ablation preset '" + name + "'");
  }
  preset = name;
}

void RunConfig::validate() const {
  if (train.steps < 1) throw InvalidArgument("train.steps must be >= 1");
  if (train.batch < 1) throw InvalidArgument("train.batch must be >= 1");
  if (!(train.lr > 0.0 && train.lr_g > 0.0 && train.lr_d > 0.0)) throw InvalidArgument("learning rates must be > 0");
  if (train.save_every < 0) throw InvalidArgument("train.save_every must be >= 0");
  synthesis.validate();
  weights.validate();
  if (backbone.feature_channels < 1) throw InvalidArgument("feature_channels must be positive");
  if (contextual.window_radius < 0 || !(contextual.bandwidth > 0.0)) throw InvalidArgument("bad contextual params");
  if (contextual.stage < 0 || static_cast<size_t>(contextual.stage) >= perceptual.channels.size()) {
    if (perceptual.weights.empty()) throw InvalidArgument("contextual.stage outside the extractor");
  }
}

void to_json(json& j, const TrainConfig& c) {
  j = {{"stage", to_string(c.stage)},
       {"steps", c.steps},
       {"batch", c.batch},
       {"lr", c.lr},
       {"lr_g", c.lr_g},
       {"lr_d", c.lr_d},
       {"betas", {c.beta1, c.beta2}},
       {"adv_betas", {c.adv_beta1, c.adv_beta2}},
       {"seed", c.seed},
       {"save_every", c.save_every},
       {"train_manifest", c.train_manifest},
       {"test_manifest", c.test_manifest},
       {"checkpoint_dir", c.checkpoint_dir},
       {"train_direct", c.train_direct},
       {"threads", c.threads}};
}

void from_json(const json& j, TrainConfig& c) {
  if (j.contains("stage")) c.stage = stage_from_string(j.at("stage").get<std::string>());
  c.steps = j.value("steps", c.steps);
  c.batch = j.value("batch", c.batch);
  c.lr = j.value("lr", c.lr);
  c.lr_g = j.value("lr_g", c.lr_g);
  c.lr_d = j.value("lr_d", c.lr_d);
  if (j.contains("betas")) {
    c.beta1 = j.at("betas").at(0).get<double>();
    c.beta2 = j.at("betas").at(1).get<double>();
  }
  if (j.contains("adv_betas")) {
    c.adv_beta1 = j.at("adv_betas").at(0).get<double>();
    c.adv_beta2 = j.at("adv_betas").at(1).get<double>();
  }
  c.seed = j.value("seed", c.seed);
  c.save_every = j.value("save_every", c.save_every);
  c.train_manifest = j.value("train_manifest", c.train_manifest);
  c.test_manifest = j.value("test_manifest", c.test_manifest);
  c.checkpoint_dir = j.value("checkpoint_dir", c.checkpoint_dir);
  c.train_direct = j.value("train_direct", c.train_direct);
  c.threads = j.value("threads", c.threads);
}

void to_json(json& j, const RunConfig& c) {
  j = {{"schema_version", kConfigSchemaVersion},
       {"preset", c.preset},
       {"train", c.train},
       {"restoration", {{"backbone", c.backbone}, {"use_adapter", c.use_adapter}}},
       {"synthesis", c.synthesis},
       {"fusion", c.fusion},
       {"losses",
        {{"lambda_per", c.weights.lambda_per},
         {"lambda_adv", c.weights.lambda_adv},
         {"lambda_cf", c.weights.lambda_cf},
         {"contextual", c.contextual},
         {"perceptual", {{"seed", c.perceptual.seed}, {"channels", c.perceptual.channels}, {"weights", c.perceptual.weights}}}}},
       {"degradation", c.degradation}};
}

void from_json(const json& j, RunConfig& c) {
  // Preset first so explicit switches in the same document win.
  if (j.contains("preset")) c.apply_preset(j.at("preset").get<std::string>());
  if (j.contains("train")) from_json(j.at("train"), c.train);
  if (j.contains("restoration")) {
    const auto& r = j.at("restoration");
    if (r.contains("backbone")) {
      if (r.at("backbone").is_string()) {
        c.backbone.id = r.at("backbone").get<std::string>();
      } else {
        restoration::from_json(r.at("backbone"), c.backbone);
      }
    }
    c.use_adapter = r.value("use_adapter", c.use_adapter);
  }
  if (j.contains("synthesis")) synthesis::from_json(j.at("synthesis"), c.synthesis);
  if (j.contains("fusion")) fusion::from_json(j.at("fusion"), c.fusion);
  if (j.contains("losses")) {
    const auto& l = j.at("losses");
    losses::from_json(l, c.weights);
    if (l.contains("contextual")) losses::from_json(l.at("contextual"), c.contextual);
    if (l.contains("perceptual")) {
      const auto& p = l.at("perceptual");
      c.perceptual.seed = p.value("seed", c.perceptual.seed);
      c.perceptual.channels = p.value("channels", c.perceptual.channels);
      c.perceptual.weights = p.value("weights", c.perceptual.weights);
    }
  }
  if (j.contains("degradation")) degrade::from_json(j.at("degradation"), c.degradation);
}

RunConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw NotFound(path.string());
  try {
    json j;
    std::ifstream(path) >> j;
    RunConfig c;
    from_json(j, c);
    return c;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

RunConfig desk_smoke_config() {
  RunConfig c;
  c.backbone.id = "tiny-residual";
  c.backbone.feature_channels = 32;
  c.backbone.depth = 4;
  c.synthesis.channels = {64, 32, 16};
  c.synthesis.style_dim = 64;
  c.perceptual.channels = {16, 32, 32, 32};
  c.train.steps = 500;
  c.train.batch = 8;
  return c;
}

}  // namespace ugp
