#include "ugp/trainer.hpp"

#include "ugp/errors.hpp"
#include "ugp/hash.hpp"
#include "ugp/losses.hpp"
#include "ugp/nn.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace ugp::trainer {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int64_t kEvalChunk = 16;

uint64_t stage_seed(const RunConfig& cfg, Stage stage) { return hash_combine(cfg.train.seed, to_string(stage)); }

void seed_everything(const RunConfig& cfg, Stage stage) {
  if (cfg.train.threads > 0) torch::set_num_threads(cfg.train.threads);
  torch::manual_seed(static_cast<uint64_t>(json_safe_seed(stage_seed(cfg, stage))));
}

at::Generator stage_generator(const RunConfig& cfg, Stage stage) {
  return at::make_generator<at::CPUGeneratorImpl>(splitmix64(stage_seed(cfg, stage)));
}

void require(const Checkpoint* ckpt, Stage stage, const std::string& consumer) {
  if (ckpt == nullptr) {
    throw PrerequisiteError(consumer + " needs a " + to_string(stage) + " checkpoint");
  }
  if (ckpt->stage != stage) {
    throw PrerequisiteError(consumer + " got a " + to_string(ckpt->stage) + " checkpoint where " +
                            to_string(stage) + " was expected");
  }
}

void append(NamedTensors& dst, NamedTensors src) {
  for (auto& e : src) dst.push_back(std::move(e));
}

// Per-run files: the resolved config and one metrics line per step. Lines left
// by an earlier run of the same stage are dropped so reruns do not pile up.
class RunLog {
 public:
  RunLog(const RunConfig& cfg, Stage stage) : stage_(to_string(stage)) {
    if (cfg.train.checkpoint_dir.empty()) return;
    dir_ = cfg.train.checkpoint_dir;
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw IOError("cannot create " + dir_.string() + ": " + ec.message());
    {
      std::ofstream out(dir_ / "config.resolved.json");
      if (!out) throw IOError("cannot write config.resolved.json in " + dir_.string());
      out << json(cfg).dump(2) << "\n";
    }
    const auto metrics = dir_ / "metrics.jsonl";
    std::vector<std::string> kept;
    if (fs::exists(metrics)) {
      std::ifstream in(metrics);
      for (std::string line; std::getline(in, line);) {
        if (line.empty()) continue;
        auto j = json::parse(line, nullptr, false);
        if (!j.is_discarded() && j.value("stage", "") == stage_) continue;
        kept.push_back(line);
      }
    }
    out_.open(metrics, std::ios::trunc);
    if (!out_) throw IOError("cannot write " + metrics.string());
    for (const auto& line : kept) out_ << line << "\n";
  }

  bool enabled() const { return !dir_.empty(); }
  const fs::path& dir() const { return dir_; }

  void step(int k, const std::vector<std::pair<std::string, double>>& values) {
    if (!enabled()) return;
    json j = {{"stage", stage_}, {"step", k}};
    for (const auto& [name, v] : values) j[name] = v;
    out_ << j.dump() << "\n";
    out_.flush();
  }

 private:
  std::string stage_;
  fs::path dir_;
  std::ofstream out_;
};

StageResult finish(StageResult r, Stage stage, int step, NamedTensors weights, const RunConfig& cfg,
                   const at::Generator& gen, const RunLog& log) {
  r.checkpoint.stage = stage;
  r.checkpoint.step = step;
  r.checkpoint.weights = std::move(weights);
  r.checkpoint.config = json(cfg);
  r.checkpoint.rng_state = gen.get_state();
  if (log.enabled()) {
    r.path = checkpoint_path(log.dir(), stage, step);
    save_checkpoint(r.checkpoint, r.path);
  }
  return r;
}

void maybe_snapshot(const RunConfig& cfg, const RunLog& log, Stage stage, int step, const at::Generator& gen,
                    const std::function<NamedTensors()>& weights) {
  const int every = cfg.train.save_every;
  if (!log.enabled() || every <= 0 || step % every != 0 || step == cfg.train.steps) return;
  Checkpoint c{stage, step, weights(), json(cfg), gen.get_state()};
  save_checkpoint(c, checkpoint_path(log.dir(), stage, step));
}

const TrainData& resolve_data(const RunConfig& cfg, const StageInputs& in, std::optional<TrainData>& owned) {
  if (in.data != nullptr) return *in.data;
  if (cfg.train.train_manifest.empty()) throw NotFound("train.train_manifest is not set");
  owned = load_train_data(cfg.train.train_manifest, cfg.resolution());
  return *owned;
}

void report(const StageInputs& in, RunLog& log, int step, const std::vector<std::pair<std::string, double>>& values) {
  log.step(step, values);
  if (in.on_step) in.on_step(step, values);
}

restoration::RestorationModule rebuild_restoration(const Checkpoint& ckpt) {
  const auto c = ckpt.run_config();
  restoration::RestorationModule m(c.backbone, c.use_adapter);
  load_module_state(*m, ckpt.weights, "restoration.");
  m->eval();
  nn::freeze(*m);
  return m;
}

synthesis::SynthesisModule rebuild_synthesis(const Checkpoint& ckpt) {
  const auto c = ckpt.run_config();
  synthesis::SynthesisModule m(c.synthesis);
  load_module_state(*m->encoder, ckpt.weights, "encoder.");
  load_module_state(*m->generator, ckpt.weights, "generator.");
  m->eval();
  nn::freeze(*m);
  return m;
}

// Runs `fn` over consecutive chunks of the first dimension without autograd.
template <typename Fn>
void chunked(int64_t n, Fn&& fn) {
  torch::NoGradGuard guard;
  for (int64_t start = 0; start < n; start += kEvalChunk) fn(start, std::min(n, start + kEvalChunk));
}

torch::Tensor restore_all(restoration::RestorationModuleImpl& rest, const torch::Tensor& degraded) {
  std::vector<torch::Tensor> parts;
  chunked(degraded.size(0), [&](int64_t a, int64_t b) {
    parts.push_back(rest.forward(degraded.slice(0, a, b)).x_reg.clamp(0.0, 1.0));
  });
  return torch::cat(parts);
}

double mean_of(const std::vector<double>& v, size_t from, size_t to) {
  if (from >= to) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(v.begin() + from, v.begin() + to, 0.0) / static_cast<double>(to - from);
}

}  // namespace

// ---------------------------------------------------------------------------
// Data

Image prepare_input(const Image& degraded, int resolution) {
  if (degraded.height() == resolution && degraded.width() == resolution) return degraded;
  if (degraded.height() != degraded.width() || resolution % degraded.height() != 0) {
    throw ShapeError("cannot bring a " + std::to_string(degraded.height()) + "×" + std::to_string(degraded.width()) +
                     " input to " + std::to_string(resolution) + "×" + std::to_string(resolution));
  }
  return degrade::upsample_bicubic(degraded, static_cast<int>(resolution / degraded.height()));
}

TrainData to_train_data(const std::vector<data::Pair>& pairs, int resolution) {
  if (pairs.empty()) throw EmptyDataset("no training pairs");
  std::vector<Image> clean, degraded;
  clean.reserve(pairs.size());
  degraded.reserve(pairs.size());
  for (const auto& p : pairs) {
    Image c = p.clean;
    if (c.height() != resolution || c.width() != resolution) {
      if (c.height() != c.width() || c.height() % resolution != 0) {
        throw ShapeError("clean image is not a multiple of the model resolution");
      }
      c = degrade::downsample_bicubic(c, static_cast<int>(c.height() / resolution));
    }
    clean.push_back(c);
    degraded.push_back(prepare_input(p.degraded, resolution));
  }
  return {stack_images(clean), stack_images(degraded)};
}

TrainData load_train_data(const fs::path& manifest, int resolution) {
  return to_train_data(data::load_pairs(data::read_manifest(manifest)), resolution);
}

BatchSampler::BatchSampler(int64_t n, int batch, uint64_t seed) : n_(n), batch_(batch), state_(seed) {
  if (n < 1 || batch < 1) throw InvalidArgument("sampler needs n >= 1 and batch >= 1");
  order_.resize(static_cast<size_t>(n));
  reshuffle();
}

void BatchSampler::reshuffle() {
  std::iota(order_.begin(), order_.end(), int64_t{0});
  for (size_t i = order_.size(); i > 1; --i) {
    state_ = splitmix64(state_);
    std::swap(order_[i - 1], order_[state_ % i]);
  }
  cursor_ = 0;
}

torch::Tensor BatchSampler::next() {
  std::vector<int64_t> idx;
  idx.reserve(static_cast<size_t>(batch_));
  while (static_cast<int>(idx.size()) < batch_) {
    if (cursor_ == order_.size()) reshuffle();
    idx.push_back(order_[cursor_++]);
  }
  return torch::tensor(idx, torch::kInt64);
}

double StageResult::head_mean(size_t window) const { return mean_of(tracked, 0, std::min(window, tracked.size())); }

double StageResult::tail_mean(size_t window) const {
  const size_t n = tracked.size();
  return mean_of(tracked, n - std::min(window, n), n);
}

// ---------------------------------------------------------------------------
// Stages

StageResult train_restoration(const RunConfig& cfg, const Checkpoint* init, StageInputs in) {
  cfg.validate();
  seed_everything(cfg, Stage::restoration);
  restoration::RestorationModule rest(cfg.backbone, cfg.use_adapter);

  if (rest->adapter().kind == restoration::AdapterKind::direct && !cfg.train.train_direct) {
    if (init == nullptr) {
      throw PrerequisiteError("direct backbone '" + cfg.backbone.id +
                              "' needs pretrained weights or train.train_direct=true");
    }
    StageResult r;
    r.checkpoint = *init;
    return r;
  }
  if (init != nullptr) {
    require(init, Stage::restoration, "restoration init");
    // A full restoration checkpoint restores everything; a backbone-only one
    // leaves R_se and R_mg at their fresh initialization.
    if (init->with_prefix("restoration.structure_encoder.").empty() && rest->uses_adapter()) {
      load_module_state(*rest->backbone, init->weights, "restoration.backbone.");
    } else {
      load_module_state(*rest, init->weights, "restoration.");
    }
  }

  std::optional<TrainData> owned;
  const TrainData& data = resolve_data(cfg, in, owned);
  RunLog log(cfg, Stage::restoration);
  auto gen = stage_generator(cfg, Stage::restoration);
  BatchSampler sampler(data.size(), cfg.train.batch, stage_seed(cfg, Stage::restoration));
  torch::optim::Adam opt(rest->parameters(),
                         torch::optim::AdamOptions(cfg.train.lr).betas({cfg.train.beta1, cfg.train.beta2}));
  rest->train();

  StageResult result;
  auto weights = [&] { return module_state(*rest, "restoration."); };
  for (int step = 1; step <= cfg.train.steps; ++step) {
    auto idx = sampler.next();
    auto out = rest->forward(data.degraded.index_select(0, idx));
    auto loss = losses::l1(out.x_reg, data.clean.index_select(0, idx));
    opt.zero_grad();
    loss.backward();
    opt.step();
    const double v = loss.item<double>();
    result.tracked.push_back(v);
    report(in, log, step, {{"l1", v}});
    maybe_snapshot(cfg, log, Stage::restoration, step, gen, weights);
  }
  return finish(std::move(result), Stage::restoration, cfg.train.steps, weights(), cfg, gen, log);
}

StageResult train_synthesis_pretrain(const RunConfig& cfg, StageInputs in) {
  cfg.validate();
  seed_everything(cfg, Stage::synthesis_pretrain);
  synthesis::Generator g(cfg.synthesis);
  synthesis::Discriminator d(cfg.synthesis);

  std::optional<TrainData> owned;
  const TrainData& data = resolve_data(cfg, in, owned);
  RunLog log(cfg, Stage::synthesis_pretrain);
  auto gen = stage_generator(cfg, Stage::synthesis_pretrain);
  BatchSampler sampler(data.size(), cfg.train.batch, stage_seed(cfg, Stage::synthesis_pretrain));
  const auto adv = torch::optim::AdamOptions(cfg.train.lr_g).betas({cfg.train.adv_beta1, cfg.train.adv_beta2});
  torch::optim::Adam opt_g(g->parameters(), adv);
  torch::optim::Adam opt_d(d->parameters(), torch::optim::AdamOptions(cfg.train.lr_d).betas(
                                                {cfg.train.adv_beta1, cfg.train.adv_beta2}));
  g->train();
  d->train();
  const int64_t dim = cfg.synthesis.style_dim;

  StageResult result;
  auto weights = [&] {
    auto w = module_state(*g, "generator.");
    append(w, module_state(*d, "discriminator."));
    return w;
  };
  for (int step = 1; step <= cfg.train.steps; ++step) {
    auto real = data.clean.index_select(0, sampler.next());
    const int64_t n = real.size(0);

    torch::Tensor fake;
    {
      torch::NoGradGuard guard;
      fake = synthesis::to_unit_range(g->sample(torch::randn({n, dim}, gen)).rgb);
    }
    auto d_loss = losses::adv_discriminator(d->forward(real), d->forward(fake));
    opt_d.zero_grad();
    d_loss.backward();
    opt_d.step();
    result.schedule += 'D';

    auto g_loss = losses::adv_generator(d->forward(synthesis::to_unit_range(g->sample(torch::randn({n, dim}, gen)).rgb)));
    opt_g.zero_grad();
    g_loss.backward();
    opt_g.step();
    result.schedule += 'G';

    const double gv = g_loss.item<double>();
    result.tracked.push_back(gv);
    report(in, log, step, {{"adv_g", gv}, {"adv_d", d_loss.item<double>()}});
    maybe_snapshot(cfg, log, Stage::synthesis_pretrain, step, gen, weights);
  }
  return finish(std::move(result), Stage::synthesis_pretrain, cfg.train.steps, weights(), cfg, gen, log);
}

StageResult train_synthesis(const RunConfig& cfg, const Checkpoint* restoration_ckpt, const Checkpoint* pretrain,
                            StageInputs in) {
  cfg.validate();
  require(restoration_ckpt, Stage::restoration, "synthesis stage");
  require(pretrain, Stage::synthesis_pretrain, "synthesis stage");

  std::optional<TrainData> owned;
  const TrainData& data = resolve_data(cfg, in, owned);
  auto rest = rebuild_restoration(*restoration_ckpt);
  const auto x_reg = restore_all(*rest, data.degraded);

  seed_everything(cfg, Stage::synthesis);
  synthesis::SynthesisModule syn(cfg.synthesis);
  synthesis::Discriminator d(cfg.synthesis);
  load_module_state(*syn->generator, pretrain->weights, "generator.");
  load_module_state(*d, pretrain->weights, "discriminator.");

  RunLog log(cfg, Stage::synthesis);
  auto gen = stage_generator(cfg, Stage::synthesis);
  BatchSampler sampler(data.size(), cfg.train.batch, stage_seed(cfg, Stage::synthesis));
  torch::optim::Adam opt_eg(syn->parameters(), torch::optim::AdamOptions(cfg.train.lr_g).betas(
                                                   {cfg.train.adv_beta1, cfg.train.adv_beta2}));
  torch::optim::Adam opt_d(d->parameters(), torch::optim::AdamOptions(cfg.train.lr_d).betas(
                                                {cfg.train.adv_beta1, cfg.train.adv_beta2}));
  const auto ext = cfg.perceptual.build();
  syn->train();
  d->train();

  StageResult result;
  auto weights = [&] {
    auto w = module_state(*syn->encoder, "encoder.");
    append(w, module_state(*syn->generator, "generator."));
    append(w, module_state(*d, "discriminator."));
    return w;
  };
  for (int step = 1; step <= cfg.train.steps; ++step) {
    auto idx = sampler.next();
    auto xr = x_reg.index_select(0, idx);
    auto gt = data.clean.index_select(0, idx);

    torch::Tensor fake;
    {
      torch::NoGradGuard guard;
      fake = syn->forward(xr).rgb;
    }
    auto d_loss = losses::adv_discriminator(d->forward(gt), d->forward(fake));
    opt_d.zero_grad();
    d_loss.backward();
    opt_d.step();
    result.schedule += 'D';

    auto x_syn = syn->forward(xr).rgb;
    auto parts = losses::loss_syn(x_syn, gt, d->forward(x_syn), cfg.weights, ext);
    opt_eg.zero_grad();
    parts.total.backward();
    opt_eg.step();
    result.schedule += 'G';

    const double l1 = parts.l1.item<double>();
    result.tracked.push_back(l1);
    report(in, log, step,
           {{"total", parts.total.item<double>()},
            {"l1", l1},
            {"perceptual", parts.perceptual.item<double>()},
            {"adv_g", parts.adversarial.item<double>()},
            {"adv_d", d_loss.item<double>()}});
    maybe_snapshot(cfg, log, Stage::synthesis, step, gen, weights);
  }
  return finish(std::move(result), Stage::synthesis, cfg.train.steps, weights(), cfg, gen, log);
}

StageResult train_fusion(const RunConfig& cfg, const Checkpoint* restoration_ckpt, const Checkpoint* synthesis_ckpt,
                         StageInputs in) {
  cfg.validate();
  require(restoration_ckpt, Stage::restoration, "fusion stage");
  require(synthesis_ckpt, Stage::synthesis, "fusion stage");

  std::optional<TrainData> owned;
  const TrainData& data = resolve_data(cfg, in, owned);
  auto rest = rebuild_restoration(*restoration_ckpt);
  auto syn = rebuild_synthesis(*synthesis_ckpt);
  const auto ext = cfg.perceptual.build();
  const auto stage = static_cast<size_t>(cfg.contextual.stage);

  // Upstream modules are frozen, so their outputs are computed once.
  std::vector<torch::Tensor> xr_parts, fr_parts, xs_parts, fs_parts, cx_parts;
  chunked(data.size(), [&](int64_t a, int64_t b) {
    auto r = rest->forward(data.degraded.slice(0, a, b));
    auto xr = r.x_reg.clamp(0.0, 1.0);
    auto s = syn->forward(xr);
    auto xs = s.rgb.clamp(0.0, 1.0);
    xr_parts.push_back(xr);
    fr_parts.push_back(r.f_reg);
    xs_parts.push_back(xs);
    fs_parts.push_back(s.f_syn);
    cx_parts.push_back(ext.stage_features(xs, stage));
  });
  const auto x_reg = torch::cat(xr_parts), f_reg = torch::cat(fr_parts);
  const auto x_syn = torch::cat(xs_parts), f_syn = torch::cat(fs_parts), cx_syn = torch::cat(cx_parts);

  seed_everything(cfg, Stage::fusion);
  const int reg_ch = static_cast<int>(f_reg.size(1));
  const int syn_ch = static_cast<int>(f_syn.size(1));
  std::shared_ptr<torch::nn::Module> net;
  fusion::FusionNetwork feature_net{nullptr};
  fusion::ImageFusion image_net{nullptr};
  if (cfg.fusion.image_domain) {
    image_net = fusion::ImageFusion(reg_ch, cfg.fusion.blocks);
    net = image_net.ptr();
  } else {
    feature_net = fusion::FusionNetwork(syn_ch, reg_ch, cfg.fusion.blocks);
    net = feature_net.ptr();
  }

  RunLog log(cfg, Stage::fusion);
  auto gen = stage_generator(cfg, Stage::fusion);
  BatchSampler sampler(data.size(), cfg.train.batch, stage_seed(cfg, Stage::fusion));
  torch::optim::Adam opt(net->parameters(),
                         torch::optim::AdamOptions(cfg.train.lr).betas({cfg.train.beta1, cfg.train.beta2}));
  net->train();

  StageResult result;
  auto weights = [&] { return module_state(*net, "fusion."); };
  for (int step = 1; step <= cfg.train.steps; ++step) {
    auto idx = sampler.next();
    auto x_hat = cfg.fusion.image_domain
                     ? image_net->forward(x_reg.index_select(0, idx), x_syn.index_select(0, idx))
                     : feature_net->forward(f_reg.index_select(0, idx), f_syn.index_select(0, idx));
    auto gt = data.clean.index_select(0, idx);
    auto parts = losses::loss_fusion(x_hat, gt, ext.stage_features(x_hat, stage), cx_syn.index_select(0, idx),
                                     cfg.weights, ext, cfg.contextual);
    opt.zero_grad();
    parts.total.backward();
    opt.step();
    const double total = parts.total.item<double>();
    result.tracked.push_back(total);
    report(in, log, step,
           {{"total", total},
            {"l1", parts.l1.item<double>()},
            {"perceptual", parts.perceptual.item<double>()},
            {"contextual", parts.contextual.item<double>()}});
    maybe_snapshot(cfg, log, Stage::fusion, step, gen, weights);
  }
  return finish(std::move(result), Stage::fusion, cfg.train.steps, weights(), cfg, gen, log);
}

// ---------------------------------------------------------------------------
// Inference

Pipeline Pipeline::load(const Checkpoint& restoration_ckpt, const Checkpoint& synthesis_ckpt,
                        const Checkpoint& fusion_ckpt) {
  require(&restoration_ckpt, Stage::restoration, "pipeline");
  require(&synthesis_ckpt, Stage::synthesis, "pipeline");
  require(&fusion_ckpt, Stage::fusion, "pipeline");
  Pipeline p;
  p.config_ = fusion_ckpt.run_config();
  p.restoration_ = rebuild_restoration(restoration_ckpt);
  p.synthesis_ = rebuild_synthesis(synthesis_ckpt);
  const auto rc = restoration_ckpt.run_config();
  const auto sc = synthesis_ckpt.run_config();
  p.config_.backbone = rc.backbone;
  p.config_.use_adapter = rc.use_adapter;
  p.config_.synthesis = sc.synthesis;
  const int reg_ch = rc.backbone.feature_channels;
  const int syn_ch = sc.synthesis.feature_channels();
  std::shared_ptr<torch::nn::Module> net;
  if (p.config_.fusion.image_domain) {
    p.image_fusion_ = fusion::ImageFusion(reg_ch, p.config_.fusion.blocks);
    net = p.image_fusion_.ptr();
  } else {
    p.fusion_ = fusion::FusionNetwork(syn_ch, reg_ch, p.config_.fusion.blocks);
    net = p.fusion_.ptr();
  }
  load_module_state(*net, fusion_ckpt.weights, "fusion.");
  net->eval();
  nn::freeze(*net);
  return p;
}

Pipeline Pipeline::load_dir(const fs::path& dir) {
  auto find = [&](Stage s) {
    auto p = latest_checkpoint(dir, s);
    if (!p) throw PrerequisiteError("no " + to_string(s) + " checkpoint in " + dir.string());
    return load_checkpoint(*p);
  };
  return load(find(Stage::restoration), find(Stage::synthesis), find(Stage::fusion));
}

std::vector<InferOutput> Pipeline::infer_batch(const std::vector<Image>& xs) {
  const int r = resolution();
  for (const auto& x : xs) {
    if (x.channels() != 3 || x.height() != r || x.width() != r) {
      throw ShapeError("pipeline expects 3×" + std::to_string(r) + "×" + std::to_string(r) + " input");
    }
  }
  std::vector<InferOutput> out;
  if (xs.empty()) return out;
  const auto batch = stack_images(xs);
  chunked(batch.size(0), [&](int64_t a, int64_t b) {
    auto rr = restoration_->forward(batch.slice(0, a, b));
    auto xr = rr.x_reg.clamp(0.0, 1.0);
    auto s = synthesis_->forward(xr);
    auto xs_ = s.rgb.clamp(0.0, 1.0);
    auto xh = config_.fusion.image_domain ? image_fusion_->forward(xr, xs_) : fusion_->forward(rr.f_reg, s.f_syn);
    auto regs = unstack_images(xr), syns = unstack_images(xs_), hats = unstack_images(xh);
    for (size_t i = 0; i < regs.size(); ++i) out.push_back({regs[i], syns[i], hats[i]});
  });
  return out;
}

InferOutput Pipeline::infer(const Image& x) { return infer_batch({x}).front(); }

PipelineReport evaluate_pipeline(Pipeline& pipeline, const TrainData& test, const losses::PerceptualExtractor& ext) {
  auto inputs = unstack_images(test.degraded);
  auto gt = unstack_images(test.clean);
  auto outs = pipeline.infer_batch(inputs);
  std::vector<Image> reg, syn, hat;
  for (const auto& o : outs) {
    reg.push_back(o.x_reg);
    syn.push_back(o.x_syn);
    hat.push_back(o.x_hat);
  }
  return {metrics::evaluate(inputs, gt, ext), metrics::evaluate(reg, gt, ext), metrics::evaluate(syn, gt, ext),
          metrics::evaluate(hat, gt, ext)};
}

FullRun train_all(const RunConfig& cfg, const TrainData& train, StepCallback on_step) {
  StageInputs in{&train, on_step};
  FullRun run;
  run.restoration = train_restoration(cfg, nullptr, in);
  run.pretrain = train_synthesis_pretrain(cfg, in);
  run.synthesis = train_synthesis(cfg, &run.restoration.checkpoint, &run.pretrain.checkpoint, in);
  run.fusion = train_fusion(cfg, &run.restoration.checkpoint, &run.synthesis.checkpoint, in);
  return run;
}

// ---------------------------------------------------------------------------
// Ablation and figures

std::vector<AblationRow> run_ablation(const RunConfig& base, const TrainData& train, const TrainData& test,
                                      const fs::path& out_dir) {
  StageInputs in{&train, {}};
  auto variant = [&](const std::string& preset, const std::string& sub) {
    RunConfig c = base;
    c.apply_preset(preset);
    c.train.checkpoint_dir = (out_dir / sub).string();
    return c;
  };

  // The unconditional prior does not depend on any preset switch.
  const auto pretrain = train_synthesis_pretrain(variant("c", "shared"), in);
  const auto ext = base.perceptual.build();

  struct Upstream {
    StageResult restoration, synthesis;
  };
  auto upstream = [&](const RunConfig& c) {
    Upstream u;
    u.restoration = train_restoration(c, nullptr, in);
    u.synthesis = train_synthesis(c, &u.restoration.checkpoint, &pretrain.checkpoint, in);
    return u;
  };

  std::vector<AblationRow> rows;
  auto score = [&](const std::string& preset, const std::string& label, const Upstream& u, const RunConfig& c) {
    auto f = train_fusion(c, &u.restoration.checkpoint, &u.synthesis.checkpoint, in);
    auto p = Pipeline::load(u.restoration.checkpoint, u.synthesis.checkpoint, f.checkpoint);
    rows.push_back({preset, label, evaluate_pipeline(p, test, ext).x_hat});
  };

  const auto cfg_a = variant("a", "a");
  const auto cfg_b = variant("b", "b");
  const auto cfg_c = variant("c", "c");
  const auto up_a = upstream(cfg_a);
  score("a", "w/o R_se and R_mg", up_a, cfg_a);
  // (b) and (c) differ only in the fusion input, so they share upstream stages.
  const auto up_c = upstream(cfg_c);
  score("b", "image-domain fusion of x_reg and x_syn", up_c, cfg_b);
  score("c", "UGPNet", up_c, cfg_c);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  json j = json::array();
  for (const auto& r : rows) {
    auto m = metrics::to_json(r.report);
    j.push_back({{"preset", r.preset}, {"label", r.label}, {"metrics", m}});
  }
  std::ofstream(out_dir / "ablation.json") << j.dump(2) << "\n";
  std::ofstream(out_dir / "ablation.md") << ablation_table(rows);
  return rows;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "| preset | configuration | PSNR | SSIM | FID-proxy |\n";
  os << "|---|---|---|---|---|\n";
  os << std::fixed;
  for (const auto& r : rows) {
    os << "| (" << r.preset << ") | " << r.label << " | " << std::setprecision(2) << r.report.psnr << " | "
       << std::setprecision(4) << r.report.ssim << " | " << std::setprecision(4) << r.report.fid_proxy << " |\n";
  }
  return os.str();
}

Image make_grid(const std::vector<std::array<Image, 5>>& rows) {
  if (rows.empty()) throw InvalidArgument("grid needs at least one row");
  const auto& ref = rows.front().front();
  std::vector<torch::Tensor> lines;
  for (const auto& row : rows) {
    std::vector<torch::Tensor> cells;
    for (const auto& img : row) {
      if (!img.same_shape(ref)) throw ShapeError("grid cells must share one shape");
      cells.push_back(img.tensor().to(torch::kFloat32));
    }
    lines.push_back(torch::cat(cells, 2));
  }
  return Image(torch::cat(lines, 1));
}

}  // namespace ugp::trainer
