// Copyright (c) 2026, The MaskApprox Authors
// SPDX-License-Identifier: Apache-2.0

// Exit codes: 0 success, 2 input/config/data/vocabulary errors, 3 runtime aborts.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "maskapprox/error.hpp"
#include "maskapprox/pipeline.hpp"

namespace fs = std::filesystem;
using namespace maskapprox;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitRuntime = 3;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON run configuration");
  cmd->add_option("--seed", f.seed, "Overrides the configured seed");
  cmd->add_option("--out", f.out, "Output directory");
  cmd->add_flag("--force", f.force, "Replace a non-empty output directory");
}

RunConfig resolve(const CommonFlags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : RunConfig::load(f.config);
  if (f.seed) c.seed = *f.seed;
  if (!f.out.empty()) c.out_dir = f.out;
  c.validate();
  return c;
}

void prepare_out(const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) throw InputError(dir.string() + " is not empty (use --force to replace it)");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

void print_epoch(const EpochLog& e) {
  std::printf("epoch %3zu  diffusion %.5f  caption %.5f  total %.5f  (%.1fs)\n", e.epoch,
              e.diffusion_loss, e.caption_loss, e.total_loss, e.wall_time_s);
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bi-temporal change captioning with diffusion-approximated change masks"};
  app.require_subcommand(1);

  CommonFlags gen_f, train_f, cap_f, eval_f, abl_f, demo_f;
  std::string train_data, cap_ckpt, cap_data, cap_split = "test", cap_vocab, eval_cands, eval_refs,
              abl_data;
  std::optional<std::size_t> gen_samples;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic bi-temporal dataset");
  add_common(gen, gen_f);
  gen->add_option("--samples", gen_samples, "Number of samples (overrides config)");

  auto* train = app.add_subcommand("train", "Train the joint diffusion and caption model");
  add_common(train, train_f);
  train->add_option("--data", train_data, "Dataset directory (overrides config)");

  auto* cap = app.add_subcommand("caption", "Sample change maps and caption a dataset split");
  add_common(cap, cap_f);
  cap->add_option("--checkpoint", cap_ckpt, "Model checkpoint")->required();
  cap->add_option("--data", cap_data, "Dataset directory")->required();
  cap->add_option("--split", cap_split, "train, val or test");
  cap->add_option("--vocab", cap_vocab, "Vocabulary that must match the checkpoint");

  auto* eval = app.add_subcommand("evaluate", "Score candidate captions");
  add_common(eval, eval_f);
  eval->add_option("--cands", eval_cands, "Candidates JSONL")->required();
  eval->add_option("--refs", eval_refs, "References JSONL (defaults to the candidates file)");

  auto* abl = app.add_subcommand("ablate-fgcf", "Twin runs with and without the frequency filter");
  add_common(abl, abl_f);
  abl->add_option("--data", abl_data, "Dataset directory (overrides config)");

  auto* demo = app.add_subcommand("filter-demo", "Spectral filter denoising demonstration");
  add_common(demo, demo_f);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      RunConfig c = resolve(gen_f);
      if (gen_samples) c.samples = *gen_samples;
      if (gen_f.out.empty()) c.out_dir = c.dataset_dir;
      c.validate();
      prepare_out(c.out_dir, gen_f.force);
      const auto samples = generate_dataset(c.dataset_config());
      fs::remove(c.out_dir);
      write_dataset(samples, c.out_dir);
      c.dataset_dir = c.out_dir;
      c.save(fs::path(c.out_dir) / "config.json");
      const auto sz = split_sizes(samples.size());
      std::printf("wrote %zu samples to %s (train %zu / val %zu / test %zu)\n", samples.size(),
                  c.out_dir.c_str(), sz[0], sz[1], sz[2]);
    } else if (*train) {
      RunConfig c = resolve(train_f);
      if (!train_data.empty()) c.dataset_dir = train_data;
      if (train_f.force && fs::exists(c.out_dir)) fs::remove_all(c.out_dir);
      const auto r = train_model(c, c.dataset_dir, c.out_dir, print_epoch);
      std::printf("checkpoint: %s\n", r.checkpoint.c_str());
    } else if (*cap) {
      const fs::path out = cap_f.out.empty() ? fs::path("captions") : fs::path(cap_f.out);
      const std::uint64_t seed = cap_f.seed.value_or(7);
      const auto recs = caption_split(cap_ckpt, cap_data, cap_split, out, seed, cap_vocab);
      std::printf("captioned %zu samples -> %s\n", recs.size(),
                  (out / "captions.jsonl").c_str());
    } else if (*eval) {
      const fs::path out = eval_f.out.empty() ? fs::path("eval") : fs::path(eval_f.out);
      const auto res = evaluate_captions(eval_cands, eval_refs, out, eval_f.seed.value_or(7));
      std::cout << res.table();
    } else if (*abl) {
      RunConfig c = resolve(abl_f);
      if (!abl_data.empty()) c.dataset_dir = abl_data;
      prepare_out(c.out_dir, abl_f.force);
      c.save(fs::path(c.out_dir) / "config.json");
      const auto res = ablate_fgcf(c, c.dataset_dir, c.out_dir, print_epoch);
      std::cout << res.table();
    } else if (*demo) {
      RunConfig c = resolve(demo_f);
      if (demo_f.out.empty()) c.out_dir = "filter_demo";
      fs::create_directories(c.out_dir);
      c.save(fs::path(c.out_dir) / "config.json");
      const auto r = filter_demo(c.seed, c.out_dir);
      std::cout << r.to_json().dump(2) << '\n';
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitInput;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitInput;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitInput;
  } catch (const VocabError& e) {
    std::cerr << "vocabulary error: " << e.what() << '\n';
    return kExitInput;
  } catch (const ContractError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kExitInput;
  } catch (const NumericError& e) {
    std::cerr << "numeric abort: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
