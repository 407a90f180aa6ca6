// Copyright (c) 2026, The MaskApprox Authors
// SPDX-License-Identifier: Apache-2.0

#include "maskapprox/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "maskapprox/checkpoint.hpp"
#include "maskapprox/error.hpp"
#include "maskapprox/fgcf.hpp"
#include "maskapprox/ops.hpp"
#include "maskapprox/optim.hpp"

namespace maskapprox {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- RunConfig

nlohmann::json RunConfig::to_json() const {
  return {{"seed", seed},
          {"dataset_dir", dataset_dir},
          {"out_dir", out_dir},
          {"samples", samples},
          {"image_size", image_size},
          {"density", density},
          {"timesteps", timesteps},
          {"beta_start", beta_start},
          {"beta_end", beta_end},
          {"sampler", sampler},
          {"base_width", base_width},
          {"unet_width", unet_width},
          {"time_dim", time_dim},
          {"d_embed", d_embed},
          {"heads", heads},
          {"layers", layers},
          {"fgcf", fgcf},
          {"fuse_mode", fuse_mode},
          {"fgcf_alpha", fgcf_alpha},
          {"dtype", dtype},
          {"lr", lr},
          {"beta1", beta1},
          {"beta2", beta2},
          {"weight_decay", weight_decay},
          {"clip_norm", clip_norm},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"caption_weight", caption_weight},
          {"max_caption_len", max_caption_len},
          {"eval_split", eval_split}};
}

namespace {

template <typename T>
void read_field(const nlohmann::json& j, const std::string& key, T& dst) {
  try {
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
      if (!j.is_number_integer() || j.get<std::int64_t>() < 0) throw ConfigError("");
    } else if constexpr (std::is_same_v<T, double>) {
      if (!j.is_number()) throw ConfigError("");
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!j.is_boolean()) throw ConfigError("");
    } else {
      if (!j.is_string()) throw ConfigError("");
    }
    dst = j.get<T>();
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type: " + j.dump());
  }
}

}  // namespace

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c;
  for (const auto& [key, value] : j.items()) {
#define MASKAPPROX_FIELD(name)  \
  if (key == #name) {           \
    read_field(value, key, c.name); \
    continue;                   \
  }
    MASKAPPROX_FIELD(seed)
    MASKAPPROX_FIELD(dataset_dir)
    MASKAPPROX_FIELD(out_dir)
    MASKAPPROX_FIELD(samples)
    MASKAPPROX_FIELD(image_size)
    MASKAPPROX_FIELD(density)
    MASKAPPROX_FIELD(timesteps)
    MASKAPPROX_FIELD(beta_start)
    MASKAPPROX_FIELD(beta_end)
    MASKAPPROX_FIELD(sampler)
    MASKAPPROX_FIELD(base_width)
    MASKAPPROX_FIELD(unet_width)
    MASKAPPROX_FIELD(time_dim)
    MASKAPPROX_FIELD(d_embed)
    MASKAPPROX_FIELD(heads)
    MASKAPPROX_FIELD(layers)
    MASKAPPROX_FIELD(fgcf)
    MASKAPPROX_FIELD(fuse_mode)
    MASKAPPROX_FIELD(fgcf_alpha)
    MASKAPPROX_FIELD(dtype)
    MASKAPPROX_FIELD(lr)
    MASKAPPROX_FIELD(beta1)
    MASKAPPROX_FIELD(beta2)
    MASKAPPROX_FIELD(weight_decay)
    MASKAPPROX_FIELD(clip_norm)
    MASKAPPROX_FIELD(epochs)
    MASKAPPROX_FIELD(batch_size)
    MASKAPPROX_FIELD(caption_weight)
    MASKAPPROX_FIELD(max_caption_len)
    MASKAPPROX_FIELD(eval_split)
#undef MASKAPPROX_FIELD
    throw ConfigError("unknown config key '" + key + "'");
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

void RunConfig::save(const fs::path& path) const {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

void RunConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (samples == 0) fail("samples must be positive");
  if (image_size == 0 || image_size % 16 != 0) fail("image_size must be a positive multiple of 16");
  if (!(density >= 0.0) || !std::isfinite(density)) fail("density must be non-negative");
  if (timesteps == 0) fail("timesteps must be positive");
  if (base_width == 0 || unet_width == 0 || time_dim == 0) fail("model widths must be positive");
  if (d_embed == 0 || heads == 0 || d_embed % heads != 0) fail("d_embed must be a multiple of heads");
  if (layers == 0) fail("layers must be positive");
  if (!(lr > 0.0)) fail("lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    fail("Adam betas must lie in [0, 1)");
  if (weight_decay < 0.0 || clip_norm < 0.0) fail("weight_decay and clip_norm must be >= 0");
  if (epochs == 0 || batch_size == 0) fail("epochs and batch_size must be positive");
  if (caption_weight < 0.0) fail("caption_weight must be >= 0");
  if (max_caption_len == 0) fail("max_caption_len must be positive");
  if (eval_split != "train" && eval_split != "val" && eval_split != "test")
    fail("eval_split must be train, val or test");
  build_schedule("linear", timesteps, beta_start, beta_end);
  sampler_form_from_name(sampler);
  fuse_mode_from_name(fuse_mode);
  if (dtype != "f32" && dtype != "f64") fail("dtype must be f32 or f64");
  if (fgcf_alpha <= 0.0) fail("fgcf_alpha must be positive");
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.image_size = image_size;
  m.base_width = base_width;
  m.unet_width = unet_width;
  m.time_dim = time_dim;
  m.timesteps = timesteps;
  m.fgcf_enabled = fgcf;
  m.fuse_mode = fuse_mode_from_name(fuse_mode);
  m.fgcf_alpha = fgcf_alpha;
  m.dtype = dtype_from_name(dtype);
  return m;
}

NoiseSchedule RunConfig::schedule() const {
  return build_schedule("linear", timesteps, beta_start, beta_end);
}

DatasetConfig RunConfig::dataset_config() const {
  return {seed, samples, image_size, image_size, density};
}

// ---------------------------------------------------------------- CaptionModel

CaptionModel::CaptionModel(const RunConfig& config, Vocabulary vocab)
    : config_(config), vocab_(std::move(vocab)), schedule_(config.schedule()) {
  config_.validate();
  net_ = std::make_unique<MaskApproxNet>(config_.model_config(), derive_seed(config_.seed, 11));
  DecoderConfig dc;
  dc.vocab_size = vocab_.size();
  dc.feature_dim = feature_dim(config_);
  dc.d_embed = config_.d_embed;
  dc.heads = config_.heads;
  dc.layers = config_.layers;
  dc.dtype = dtype_from_name(config_.dtype);
  Rng rng(derive_seed(config_.seed, 12));
  decoder_ = std::make_unique<TextDecoder>(net_->params(), "captioner", dc, rng);
}

Tensor CaptionModel::prepare(const Tensor& image) const {
  const DType dt = dtype_from_name(config_.dtype);
  if (image.dtype() == dt) return image.detach();
  return Tensor::from(image.shape(), {image.data().begin(), image.data().end()}, dt);
}

Tensor CaptionModel::cd_features(const Conditioning& cond, const Tensor& ipre, const Tensor& ipost,
                                 const Tensor& cd_map) const {
  const std::size_t h = ipre.dim(1) / 16, w = ipre.dim(2) / 16;
  Tensor grid = concat({cond.encoding.xbar, avg_pool2d(ipre, 16), avg_pool2d(ipost, 16),
                        avg_pool2d(cd_map, 16)},
                       0);
  const std::size_t d = grid.dim(0);
  return transpose(reshape(grid, {d, h * w}));
}

Tensor CaptionModel::sample_map(const Conditioning& cond, Rng& rng) const {
  const MaskApproxNet& net = *net_;
  EpsPredictor eps = [&](const Tensor& xt, const Tensor&, const Tensor&, std::size_t t) {
    return net.predict_epsilon(xt, cond, t);
  };
  const Tensor shape_ref = cond.diff_image;
  return sample_cd_map(eps, shape_ref, shape_ref, schedule_, rng,
                       sampler_form_from_name(config_.sampler));
}

CaptionModel::Caption CaptionModel::describe(const Tensor& ipre_raw, const Tensor& ipost_raw,
                                             Rng& rng) const {
  NoGradGuard no_grad;
  const Tensor ipre = prepare(ipre_raw), ipost = prepare(ipost_raw);
  const Conditioning cond = net_->encode(ipre, ipost);
  Caption out;
  out.cd_map = sample_map(cond, rng);
  const Tensor map = prepare(out.cd_map);
  const GenerateResult g = decoder_->generate(cd_features(cond, ipre, ipost, map),
                                              config_.max_caption_len);
  out.text.clear();
  for (const auto& w : vocab_.decode(g.tokens)) out.text += (out.text.empty() ? "" : " ") + w;
  out.truncated = g.truncated;
  return out;
}

void CaptionModel::save(const fs::path& path, const nlohmann::json& extra) const {
  nlohmann::json meta = {{"run_config", config_.to_json()}, {"vocab", vocab_.to_json()}};
  if (!extra.is_null())
    for (const auto& [k, v] : extra.items()) meta[k] = v;
  save_checkpoint(path, net_->params().items(), meta);
}

CaptionModel CaptionModel::load(const fs::path& path) {
  const Checkpoint ck = load_checkpoint(path);
  if (!ck.hyperparams.contains("run_config") || !ck.hyperparams.contains("vocab"))
    throw DataError(path.string() + ": checkpoint lacks run_config or vocab");
  CaptionModel m(RunConfig::from_json(ck.hyperparams["run_config"]),
                 Vocabulary::from_json(ck.hyperparams["vocab"]));
  load_into(m.params(), ck);
  return m;
}

Vocabulary vocabulary_for(const std::vector<BiTemporalSample>& train) {
  std::vector<std::vector<std::string>> sentences;
  for (const auto& s : train)
    for (const auto& c : s.captions) sentences.push_back(tokenize(c));
  return Vocabulary::build(sentences);
}

// ---------------------------------------------------------------- training

nlohmann::json EpochLog::to_json() const {
  return {{"epoch", epoch},
          {"diffusion_loss", diffusion_loss},
          {"caption_loss", caption_loss},
          {"total_loss", total_loss},
          {"wall_time_s", wall_time_s}};
}

void check_finite_loss(double diffusion, double caption, std::size_t epoch, std::size_t batch,
                       const std::string& sample_id, double last_diffusion, double last_caption) {
  if (std::isfinite(diffusion) && std::isfinite(caption)) return;
  std::ostringstream os;
  os << "non-finite loss at epoch " << epoch << ", batch " << batch << " (sample " << sample_id
     << "): diffusion=" << diffusion << " caption=" << caption
     << "; last finite losses: diffusion=" << last_diffusion << " caption=" << last_caption;
  throw NumericError(os.str());
}

namespace {

Tensor mask_to_signal(const Tensor& mask, DType dt) {
  std::vector<double> v(mask.data().begin(), mask.data().end());
  for (double& x : v) x = 2.0 * x - 1.0;
  return Tensor::from(mask.shape(), std::move(v), dt);
}

std::string epoch_name(std::size_t e) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%03zu.ckpt", e);
  return buf;
}

}  // namespace

TrainResult train_model(const RunConfig& config, const fs::path& dataset_dir, const fs::path& out_dir,
                        const ProgressFn& progress) {
  config.validate();
  if (!fs::is_directory(dataset_dir))
    throw InputError("dataset directory not found: " + dataset_dir.string());
  const std::vector<BiTemporalSample> train = read_split(dataset_dir, "train");
  if (train.empty()) throw DataError(dataset_dir.string() + ": empty train split");
  if (train[0].ipre.dim(1) != config.image_size || train[0].ipre.dim(2) != config.image_size)
    throw ConfigError("dataset images are " + std::to_string(train[0].ipre.dim(1)) + " px, config image_size is " +
                      std::to_string(config.image_size));

  fs::create_directories(out_dir / "checkpoints");
  config.save(out_dir / "config.json");
  CaptionModel model(config, vocabulary_for(train));
  model.vocab().save(out_dir / "vocab.json");

  const DType dt = dtype_from_name(config.dtype);
  AdamOptions ao;
  ao.lr = config.lr;
  ao.beta1 = config.beta1;
  ao.beta2 = config.beta2;
  ao.weight_decay = config.weight_decay;
  ao.clip_norm = config.clip_norm;
  Adam opt(model.params(), ao);

  // Inputs converted once; the encoder sees them in model dtype.
  std::vector<Tensor> pre, post, x0;
  std::vector<std::vector<std::vector<std::size_t>>> gold;
  for (const auto& s : train) {
    pre.push_back(model.prepare(s.ipre));
    post.push_back(model.prepare(s.ipost));
    x0.push_back(mask_to_signal(s.mask, dt));
    std::vector<std::vector<std::size_t>> ids;
    for (const auto& c : s.captions) ids.push_back(model.vocab().encode(tokenize(c)));
    gold.push_back(std::move(ids));
  }

  std::ofstream log(out_dir / "train_log.jsonl", std::ios::binary);
  Rng rng(derive_seed(config.seed, 13));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const NoiseSchedule& sched = model.schedule();
  TrainResult result;
  double last_diff = 0.0, last_cap = 0.0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
    double sum_diff = 0.0, sum_cap = 0.0;
    std::size_t batch = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const double inv = 1.0 / static_cast<double>(end - start);
      opt.zero_grad();
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        const std::size_t t = 1 + rng() % config.timesteps;
        const Tensor eps = Tensor::randn(x0[i].shape(), rng, 1.0, dt);
        const auto& ids = gold[i][rng() % gold[i].size()];

        const Conditioning cond = model.net().encode(pre[i], post[i]);
        const Tensor xt = q_sample(x0[i], t, eps, sched);
        const Tensor l_diff = diffusion_loss(model.net().predict_epsilon(xt, cond, t), eps);
        const Tensor feats = model.cd_features(cond, pre[i], post[i], x0[i]);
        const Tensor l_cap = caption_loss_from_logits(model.decoder().logits(ids, feats), ids);

        check_finite_loss(l_diff.item(), l_cap.item(), epoch, batch, train[i].id, last_diff,
                          last_cap);
        last_diff = l_diff.item();
        last_cap = l_cap.item();
        sum_diff += last_diff;
        sum_cap += last_cap;
        scale(add(l_diff, scale(l_cap, config.caption_weight)), inv).backward();
      }
      opt.step();
    }

    EpochLog e;
    e.epoch = epoch;
    e.diffusion_loss = sum_diff / train.size();
    e.caption_loss = sum_cap / train.size();
    e.total_loss = e.diffusion_loss + config.caption_weight * e.caption_loss;
    e.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log << e.to_json().dump() << '\n' << std::flush;
    result.epochs.push_back(e);
    model.save(out_dir / "checkpoints" / epoch_name(epoch), {{"epoch", epoch}});
    if (progress) progress(e);
  }
  result.checkpoint = out_dir / "model.ckpt";
  fs::copy_file(out_dir / "checkpoints" / epoch_name(config.epochs), result.checkpoint,
                fs::copy_options::overwrite_existing);
  return result;
}

// ---------------------------------------------------------------- captioning

namespace {

void write_png_signal(const fs::path& path, const Tensor& map) {
  std::vector<double> v(map.data().begin(), map.data().end());
  for (double& x : v) x = std::round((std::clamp(x, -1.0, 1.0) + 1.0) * 127.5) / 255.0;
  std::vector<double> rgb;
  rgb.reserve(3 * v.size());
  for (int c = 0; c < 3; ++c) rgb.insert(rgb.end(), v.begin(), v.end());
  write_png_rgb(path, Tensor::from({3, map.dim(1), map.dim(2)}, std::move(rgb)));
}

}  // namespace

std::vector<CaptionRecord> caption_split(const fs::path& checkpoint, const fs::path& dataset_dir,
                                         const std::string& split, const fs::path& out_dir,
                                         std::uint64_t seed, const fs::path& vocab_path) {
  CaptionModel model = CaptionModel::load(checkpoint);
  if (!vocab_path.empty()) {
    const Vocabulary v = Vocabulary::load(vocab_path);
    if (v.to_json() != model.vocab().to_json())
      throw VocabError("vocabulary " + vocab_path.string() + " (" + std::to_string(v.size()) +
                       " tokens) does not match checkpoint vocabulary (" +
                       std::to_string(model.vocab().size()) + " tokens)");
  }
  const auto samples = read_split(dataset_dir, split);
  if (samples.empty()) throw DataError("split '" + split + "' is empty in " + dataset_dir.string());

  fs::create_directories(out_dir / "cd_maps");
  std::vector<CaptionRecord> records;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    Rng rng(derive_seed(seed, 1000 + i));
    const auto cap = model.describe(samples[i].ipre, samples[i].ipost, rng);
    write_png_signal(out_dir / "cd_maps" / (samples[i].id + ".png"), cap.cd_map);
    records.push_back({samples[i].id, cap.text, samples[i].captions});
  }
  write_caption_jsonl(out_dir / "captions.jsonl", records);
  return records;
}

std::vector<CaptionRecord> shuffle_references(const std::vector<CaptionRecord>& records,
                                              std::uint64_t seed) {
  std::vector<std::size_t> perm(records.size());
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(derive_seed(seed, 17));
  // Sattolo's algorithm yields a single cycle, hence no fixed points.
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng() % (i - 1)]);
  std::vector<CaptionRecord> out = records;
  for (std::size_t i = 0; i < records.size(); ++i) out[i].references = records[perm[i]].references;
  return out;
}

// ---------------------------------------------------------------- evaluation

nlohmann::json EvaluationResult::to_json() const {
  return {{"report", report.to_json()}, {"shuffled_references", shuffled.to_json()}};
}

std::string EvaluationResult::table() const {
  return format_metric_table({{"model", report}, {"shuffled-refs", shuffled}});
}

EvaluationResult evaluate_captions(const fs::path& cands, const fs::path& refs,
                                   const fs::path& out_dir, std::uint64_t seed) {
  const auto c = read_caption_jsonl(cands);
  std::vector<CaptionRecord> joined;
  if (refs.empty()) {
    joined = c;
  } else {
    const auto r = read_caption_jsonl(refs);
    join_by_id(c, r);  // validates ids
    std::map<std::string, const CaptionRecord*> by_id;
    for (const auto& x : r) by_id[x.id] = &x;
    for (const auto& x : c) joined.push_back({x.id, x.candidate, by_id.at(x.id)->references});
  }
  EvaluationResult res;
  res.report = score_corpus(to_corpus(joined));
  res.shuffled = score_corpus(to_corpus(shuffle_references(joined, seed)));
  fs::create_directories(out_dir);
  std::ofstream(out_dir / "metrics.json") << res.to_json().dump(2) << '\n';
  std::ofstream(out_dir / "metrics.txt") << res.table();
  return res;
}

// ---------------------------------------------------------------- ablation

nlohmann::json AblationResult::to_json() const {
  return {{"rows",
           {{{"configuration", "with"}, {"metrics", with_fgcf.to_json()}},
            {{"configuration", "without"}, {"metrics", without_fgcf.to_json()}}}},
          {"bleu4_delta_with_minus_without", with_fgcf.bleu[3] - without_fgcf.bleu[3]}};
}

std::string AblationResult::table() const {
  return format_metric_table({{"with", with_fgcf}, {"without", without_fgcf}});
}

AblationResult ablate_fgcf(const RunConfig& config, const fs::path& dataset_dir,
                           const fs::path& out_dir, const ProgressFn& progress) {
  AblationResult res;
  for (bool on : {true, false}) {
    RunConfig c = config;
    c.fgcf = on;
    const fs::path run = out_dir / (on ? "with" : "without");
    const TrainResult tr = train_model(c, dataset_dir, run, progress);
    caption_split(tr.checkpoint, dataset_dir, c.eval_split, run, c.seed);
    const EvaluationResult ev = evaluate_captions(run / "captions.jsonl", {}, run, c.seed);
    (on ? res.with_fgcf : res.without_fgcf) = ev.report;
  }
  std::ofstream(out_dir / "ablation.json") << res.to_json().dump(2) << '\n';
  std::ofstream(out_dir / "ablation.txt") << res.table();
  return res;
}

// ---------------------------------------------------------------- filter demo

nlohmann::json FilterDemoReport::to_json() const {
  return {{"input_mse", input_mse},
          {"identity_mse", identity_mse},
          {"oracle_mse", oracle_mse},
          {"reduction_factor", oracle_mse > 0.0 ? input_mse / oracle_mse : INFINITY},
          {"parseval_rel_error", parseval_rel_error},
          {"parseval", parseval_ok ? "pass" : "fail"}};
}

FilterDemoReport filter_demo(std::uint64_t seed, const fs::path& out_dir) {
  constexpr std::size_t C = 3, H = 32, W = 32;
  Rng rng(derive_seed(seed, 19));
  auto unit = [&] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  const double two_pi = 2.0 * std::acos(-1.0);

  // Clean: frequencies (k, l) with |k|, l <= 2. Noise: tones at known high bins.
  const std::vector<std::pair<int, int>> noise_bins = {{13, 11}, {16, 15}, {10, 14}, {15, 9}};
  std::vector<double> clean(C * H * W, 0.0), noisy;
  for (std::size_t c = 0; c < C; ++c)
    for (int k = 0; k <= 2; ++k)
      for (int l = 0; l <= 2; ++l) {
        const double amp = 0.5 * unit(), ph = two_pi * unit();
        for (std::size_t r = 0; r < H; ++r)
          for (std::size_t q = 0; q < W; ++q)
            clean[(c * H + r) * W + q] +=
                amp * std::cos(two_pi * (double(k) * r / H + double(l) * q / W) + ph);
      }
  noisy = clean;
  for (std::size_t c = 0; c < C; ++c)
    for (const auto& [k, l] : noise_bins) {
      const double amp = 0.4 + 0.2 * unit(), ph = two_pi * unit();
      for (std::size_t r = 0; r < H; ++r)
        for (std::size_t q = 0; q < W; ++q)
          noisy[(c * H + r) * W + q] +=
              amp * std::cos(two_pi * (double(k) * r / H + double(l) * q / W) + ph);
    }

  const Tensor xc = Tensor::from({C, H, W}, clean), xn = Tensor::from({C, H, W}, noisy);
  const std::size_t half = W / 2 + 1;
  auto mse_to_clean = [&](const Tensor& y) {
    double acc = 0.0;
    for (std::size_t i = 0; i < clean.size(); ++i) acc += std::pow(y.data()[i] - clean[i], 2);
    return acc / clean.size();
  };

  FilterDemoReport rep;
  rep.input_mse = mse_to_clean(xn);

  const double alpha = 1.0;
  Tensor identity = Tensor::zeros({C, H, half});
  rep.identity_mse = mse_to_clean(spectral_filter(xn, spectral_weights(identity, alpha)));

  // Oracle: weight exp(-alpha F^2) = exp(-60) at each noise bin and its mirror.
  std::vector<double> f(C * H * half, 0.0);
  const double big = std::sqrt(60.0 / alpha);
  for (std::size_t c = 0; c < C; ++c)
    for (const auto& [k, l] : noise_bins) {
      f[(c * H + k) * half + l] = big;
      if (l == 0 || 2 * static_cast<std::size_t>(l) == W)
        f[(c * H + (H - k) % H) * half + l] = big;
    }
  const Tensor oracle = Tensor::from({C, H, half}, f);
  const Tensor filtered = spectral_filter(xn, spectral_weights(oracle, alpha));
  rep.oracle_mse = mse_to_clean(filtered);

  // Parseval on the half spectrum of the noisy input.
  const Spectrum spec = dft_channels(xn);
  double e_time = 0.0, e_freq = 0.0;
  for (double v : noisy) e_time += v * v;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t k = 0; k < H; ++k)
      for (std::size_t l = 0; l < half; ++l) {
        const double w = (l == 0 || 2 * l == W) ? 1.0 : 2.0;
        e_freq += w * std::norm(spec.at(c, k, l));
      }
  e_freq /= static_cast<double>(H * W);
  rep.parseval_rel_error = std::fabs(e_time - e_freq) / e_time;
  rep.parseval_ok = rep.parseval_rel_error < 1e-9;

  fs::create_directories(out_dir);
  std::ofstream(out_dir / "filter_demo.json") << rep.to_json().dump(2) << '\n';

  auto magnitudes = [&](const Tensor& x) {
    const Spectrum s = dft_channels(x);
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t k = 0; k < H; ++k) {
      nlohmann::json row = nlohmann::json::array();
      for (std::size_t l = 0; l < half; ++l) row.push_back(std::abs(s.at(0, k, l)));
      rows.push_back(row);
    }
    return rows;
  };
  nlohmann::json spectra = {{"channel", 0},
                            {"noise_bins", noise_bins},
                            {"clean", magnitudes(xc)},
                            {"noisy", magnitudes(xn)},
                            {"filtered", magnitudes(filtered)}};
  std::ofstream(out_dir / "spectra.json") << spectra.dump() << '\n';
  return rep;
}

}  // namespace maskapprox
