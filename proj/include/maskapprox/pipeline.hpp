// Copyright (c) 2026, The MaskApprox Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "maskapprox/diffusion.hpp"
#include "maskapprox/mask_approx.hpp"
#include "maskapprox/metrics.hpp"
#include "maskapprox/synth_data.hpp"
#include "maskapprox/text_decoder.hpp"

namespace maskapprox {

/// Everything a run needs. Serialized flat; unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 7;
  std::string dataset_dir = "data";
  std::string out_dir = "run";

  // Data generation.
  std::size_t samples = 200;
  std::size_t image_size = 64;
  double density = 0.5;

  // Diffusion.
  std::size_t timesteps = 50;
  double beta_start = 1e-4;
  double beta_end = 0.2;
  std::string sampler = "standard";

  // Model.
  std::size_t base_width = 8;
  std::size_t unet_width = 8;
  std::size_t time_dim = 16;
  std::size_t d_embed = 32;
  std::size_t heads = 2;
  std::size_t layers = 2;
  bool fgcf = true;
  std::string fuse_mode = "sum_collapse";
  double fgcf_alpha = 1.0;
  std::string dtype = "f32";

  // Optimization.
  double lr = 5e-5;
  double beta1 = 0.99;
  double beta2 = 0.999;
  double weight_decay = 5e-4;
  double clip_norm = 1.0;
  std::size_t epochs = 20;
  std::size_t batch_size = 8;
  double caption_weight = 1.0;  // lambda in diffusion + lambda * caption

  // Inference.
  std::size_t max_caption_len = 40;
  std::string eval_split = "test";

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  /// Throws ConfigError on inconsistent values.
  void validate() const;

  ModelConfig model_config() const;
  NoiseSchedule schedule() const;
  DatasetConfig dataset_config() const;
};

/// Diffusion network, caption decoder and vocabulary sharing one parameter set.
class CaptionModel {
 public:
  CaptionModel(const RunConfig& config, Vocabulary vocab);

  const RunConfig& config() const { return config_; }
  const Vocabulary& vocab() const { return vocab_; }
  MaskApproxNet& net() { return *net_; }
  const MaskApproxNet& net() const { return *net_; }
  const TextDecoder& decoder() const { return *decoder_; }
  ParameterSet& params() { return net_->params(); }
  const NoiseSchedule& schedule() const { return schedule_; }

  /// Image pair in model dtype.
  Tensor prepare(const Tensor& image) const;

  /// One token per H/16 x W/16 cell: [xbar | pooled pre | pooled post | pooled cd map].
  Tensor cd_features(const Conditioning& cond, const Tensor& ipre, const Tensor& ipost,
                     const Tensor& cd_map) const;
  static std::size_t feature_dim(const RunConfig& config) { return 2 * config.base_width + 7; }

  Tensor sample_map(const Conditioning& cond, Rng& rng) const;

  struct Caption {
    std::string text;
    Tensor cd_map;  // 1 x H x W in [-1, 1]
    bool truncated = false;
  };
  Caption describe(const Tensor& ipre, const Tensor& ipost, Rng& rng) const;

  void save(const std::filesystem::path& path, const nlohmann::json& extra = {}) const;
  /// Rebuilds the model from an archived checkpoint.
  static CaptionModel load(const std::filesystem::path& path);

 private:
  RunConfig config_;
  Vocabulary vocab_;
  NoiseSchedule schedule_;
  std::unique_ptr<MaskApproxNet> net_;
  std::unique_ptr<TextDecoder> decoder_;
};

/// Training-split captions become the vocabulary.
Vocabulary vocabulary_for(const std::vector<BiTemporalSample>& train);

struct EpochLog {
  std::size_t epoch = 0;
  double diffusion_loss = 0.0;
  double caption_loss = 0.0;
  double total_loss = 0.0;
  double wall_time_s = 0.0;
  nlohmann::json to_json() const;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  std::filesystem::path checkpoint;  // final weights
};

using ProgressFn = std::function<void(const EpochLog&)>;

/// Writes config.json, vocab.json, train_log.jsonl, checkpoints/epoch_NNN.ckpt and model.ckpt.
TrainResult train_model(const RunConfig& config, const std::filesystem::path& dataset_dir,
                        const std::filesystem::path& out_dir, const ProgressFn& progress = {});

/// Writes captions.jsonl (metrics input) and cd_maps/{id}.png. Map values v in
/// [-1, 1] are stored as round((v + 1) * 127.5).
std::vector<CaptionRecord> caption_split(const std::filesystem::path& checkpoint,
                                         const std::filesystem::path& dataset_dir,
                                         const std::string& split,
                                         const std::filesystem::path& out_dir, std::uint64_t seed,
                                         const std::filesystem::path& vocab_path = {});

/// References reassigned by a seeded cyclic permutation, so no pair keeps its own.
std::vector<CaptionRecord> shuffle_references(const std::vector<CaptionRecord>& records,
                                              std::uint64_t seed);

struct EvaluationResult {
  MetricReport report;
  MetricReport shuffled;  // same candidates, shuffled references
  nlohmann::json to_json() const;
  std::string table() const;
};

/// Writes metrics.json and metrics.txt.
EvaluationResult evaluate_captions(const std::filesystem::path& cands,
                                   const std::filesystem::path& refs,
                                   const std::filesystem::path& out_dir, std::uint64_t seed);

struct AblationResult {
  MetricReport with_fgcf, without_fgcf;
  nlohmann::json to_json() const;
  std::string table() const;
};

/// Twin runs differing only in the FGCF switch. Writes with/, without/, ablation.json, ablation.txt.
AblationResult ablate_fgcf(const RunConfig& config, const std::filesystem::path& dataset_dir,
                           const std::filesystem::path& out_dir, const ProgressFn& progress = {});

struct FilterDemoReport {
  double input_mse = 0.0;     // noisy vs clean
  double identity_mse = 0.0;  // F = 0
  double oracle_mse = 0.0;    // noise bins suppressed
  double parseval_rel_error = 0.0;
  bool parseval_ok = false;
  nlohmann::json to_json() const;
};

/// Low-frequency signal plus high-frequency tones. Writes filter_demo.json and spectra.json.
FilterDemoReport filter_demo(std::uint64_t seed, const std::filesystem::path& out_dir);

/// Loss values checked after each sample; throws NumericError on NaN or inf.
void check_finite_loss(double diffusion, double caption, std::size_t epoch, std::size_t batch,
                       const std::string& sample_id, double last_diffusion, double last_caption);

}  // namespace maskapprox
