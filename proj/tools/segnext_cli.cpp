// segnext: build, analyze, train, evaluate and benchmark models from a config file.

#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>

#include "segnext/analysis.hpp"
#include "segnext/io.hpp"
#include "segnext/train.hpp"

using namespace segnext;

namespace {

struct InputSize {
  int64_t h = 0, w = 0;
};

InputSize parse_size(const std::string& s) {
  const auto x = s.find_first_of("xX");
  try {
    size_t used = 0;
    if (x == std::string::npos) {
      const int64_t v = std::stoll(s, &used);
      if (used == s.size() && v > 0) return {v, v};
    } else {
      size_t uw = 0;
      const int64_t h = std::stoll(s.substr(0, x), &used);
      const int64_t w = std::stoll(s.substr(x + 1), &uw);
      if (used == x && uw == s.size() - x - 1 && h > 0 && w > 0) return {h, w};
    }
  } catch (const std::exception&) {
  }
  throw Error("bad input size '" + s + "' (expected HxW)");
}

void print_miou(const MiouResult& r) {
  for (size_t c = 0; c < r.iou.size(); ++c) std::printf("class %zu\tiou %.4f\n", c, r.iou[c]);
  std::printf("mIoU\t%.4f\n", r.mean);
}

LoadedCheckpoint load_for(const RunConfig& cfg, const std::string& path) {
  auto ck = load_checkpoint(path);
  if (ck.config.model != cfg.model)
    throw Error("checkpoint '" + path + "' was trained with a different model config");
  return ck;
}

int cmd_build(const RunConfig& cfg) {
  const auto arch = Architecture::build(cfg.model);
  const auto& m = cfg.model;
  std::printf("decoder\t%s%s\nattention\t%s\nclasses\t%lld\n", std::string(to_string(m.decoder)).c_str(),
              m.stage1_in_decoder ? " +stage1" : "", std::string(to_string(m.attention)).c_str(),
              static_cast<long long>(m.num_classes));
  for (size_t i = 0; i < 4; ++i)
    std::printf("stage %zu\tchannels %lld\tdepth %lld\texpansion %lld\n", i + 1,
                static_cast<long long>(m.stages[i].channels), static_cast<long long>(m.stages[i].depth),
                static_cast<long long>(m.stages[i].expansion));
  std::printf("params\t%lld\n", static_cast<long long>(count_params(arch->registry)));
  std::printf("flops@%lldx%lld\t%lld\n", static_cast<long long>(cfg.data.size), static_cast<long long>(cfg.data.size),
              static_cast<long long>(count_flops(*arch, cfg.data.size, cfg.data.size)));
  return 0;
}

int cmd_analyze(const RunConfig& cfg, const std::string& size, bool lines) {
  const InputSize s = size.empty() ? InputSize{512, 512} : parse_size(size);
  const auto report = cost_report(*Architecture::build(cfg.model), s.h, s.w);
  if (lines)
    write_cost_lines(std::cout, report);
  else
    write_cost_table(std::cout, report);
  return 0;
}

TrainResult run_training(const RunConfig& cfg) {
  if (!cfg.out_dir.empty()) std::filesystem::create_directories(cfg.out_dir);
  return train(cfg, make_train_set(cfg), make_val_set(cfg), &std::cout);
}

int cmd_eval(RunConfig cfg, const std::string& checkpoint, bool ms_flip, const std::vector<double>& scales) {
  const auto ck = load_for(cfg, checkpoint);
  if (ms_flip) {
    cfg.eval.flip = true;
    cfg.eval.scales = {0.5, 0.75, 1.0, 1.25, 1.5, 1.75};
  }
  if (!scales.empty()) cfg.eval.scales = scales;
  print_miou(evaluate(ck.model, make_val_set(cfg), cfg.eval));
  return 0;
}

int cmd_infer(const RunConfig& cfg, const std::string& checkpoint, const std::string& image, const std::string& out) {
  const auto ck = load_for(cfg, checkpoint);
  const Tensor x = read_ppm(image);
  write_pgm(out, argmax_labels(ms_flip_inference(ck.model, x, cfg.eval.scales, cfg.eval.flip)));
  return 0;
}

int cmd_bench(const RunConfig& cfg, const std::string& size, int reps, int warmup) {
  const InputSize s = parse_size(size);
  const auto model = SegModel<float>::build(cfg.model, cfg.seed);
  const auto r = bench_latency(model, s.h, s.w, warmup, reps);
  std::printf("input\t%lldx%lld\nreps\t%d\nthreads\t%d\nmedian_ms\t%.3f\np90_ms\t%.3f\nflags\t%s\n",
              static_cast<long long>(s.h), static_cast<long long>(s.w), r.reps, r.threads, r.median_ms, r.p90_ms,
              r.build_flags.c_str());
  return 0;
}

int cmd_ablate(RunConfig cfg, const std::string& decoder, bool stage1, bool no_msca) {
  cfg.model.decoder = decoder_variant_from_string(decoder);
  cfg.model.stage1_in_decoder = stage1;
  if (no_msca) cfg.model.attention = AttentionKind::large_kernel;
  if (!cfg.out_dir.empty())
    cfg.out_dir += "/ablate-" + decoder + (stage1 ? "-s1" : "") + (no_msca ? "-lka" : "");
  const auto r = run_training(cfg);
  const auto res = evaluate(r.model, make_val_set(cfg), cfg.eval);
  std::printf("variant\t%s%s%s\nparams\t%lld\nflops@%lld\t%lld\n", decoder.c_str(), stage1 ? " +stage1" : "",
              no_msca ? " large-kernel" : "", static_cast<long long>(count_params(r.model)),
              static_cast<long long>(cfg.data.size),
              static_cast<long long>(count_flops(r.model, cfg.data.size, cfg.data.size)));
  print_miou(res);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SegNeXt segmentation toolkit"};
  app.require_subcommand(1);
  std::string config_path, checkpoint, image, out, size, decoder = "c";
  std::vector<double> scales;
  bool ms_flip = false, lines = false, stage1 = false, no_msca = false;
  int reps = 20, warmup = 2;

  auto with_config = [&](CLI::App* sub) {
    sub->add_option("config", config_path, "Run config file")->required()->check(CLI::ExistingFile);
    return sub;
  };
  auto* build = with_config(app.add_subcommand("build", "Construct the model and print a summary"));
  auto* analyze = with_config(app.add_subcommand("analyze", "Per-layer parameter and FLOP report"));
  analyze->add_option("--input-size", size, "HxW (default 512x512)");
  analyze->add_flag("--lines", lines, "Tab-separated lines instead of a table");
  auto* train_cmd = with_config(app.add_subcommand("train", "Train on the synthetic dataset"));
  auto* eval = with_config(app.add_subcommand("eval", "Validation mIoU of a checkpoint"));
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_flag("--ms-flip", ms_flip, "Multi-scale plus flip test");
  eval->add_option("--scales", scales, "Inference scales")->delimiter(',');
  auto* infer = with_config(app.add_subcommand("infer", "Label one PPM image"));
  infer->add_option("--checkpoint", checkpoint)->required();
  infer->add_option("--image", image)->required()->check(CLI::ExistingFile);
  infer->add_option("--out", out, "Output PGM")->required();
  auto* bench = with_config(app.add_subcommand("bench", "Forward latency"));
  bench->add_option("--input-size", size)->required();
  bench->add_option("--reps", reps)->check(CLI::PositiveNumber);
  bench->add_option("--warmup", warmup)->check(CLI::NonNegativeNumber);
  auto* ablate = with_config(app.add_subcommand("ablate", "Train and score one decoder/attention variant"));
  ablate->add_option("--decoder", decoder)->check(CLI::IsMember({"a", "b", "c"}));
  ablate->add_flag("--with-stage1", stage1);
  ablate->add_flag("--no-msca", no_msca, "Single large-kernel attention branch");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }

  try {
    const RunConfig cfg = load_config(config_path);
    if (build->parsed()) return cmd_build(cfg);
    if (analyze->parsed()) return cmd_analyze(cfg, size, lines);
    if (train_cmd->parsed()) {
      run_training(cfg);
      return 0;
    }
    if (eval->parsed()) return cmd_eval(cfg, checkpoint, ms_flip, scales);
    if (infer->parsed()) return cmd_infer(cfg, checkpoint, image, out);
    if (bench->parsed()) return cmd_bench(cfg, size, reps, warmup);
    if (ablate->parsed()) return cmd_ablate(cfg, decoder, stage1, no_msca);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
