// Command-line front end. Talks to the library exclusively through the C
// API: flags are folded into a JSON config (optionally seeded from a
// --config file) and handed to the matching uvf_run_* entry point.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "unetformer/unetformer.h"

using nlohmann::json;

namespace {

struct TaskCmd {
  CLI::App* app = nullptr;
  int (*fn)(const char*, char**) = nullptr;
  std::string config_path;
  json overrides = json::object();
};

// Resolves "a.b" into cfg["a"]["b"].
void set_path(json& cfg, const std::string& dotted, json value) {
  json* cur = &cfg;
  size_t start = 0;
  for (;;) {
    size_t dot = dotted.find('.', start);
    if (dot == std::string::npos) {
      (*cur)[dotted.substr(start)] = std::move(value);
      return;
    }
    cur = &(*cur)[dotted.substr(start, dot - start)];
    start = dot + 1;
  }
}

int run(TaskCmd& cmd) {
  json cfg = json::object();
  if (!cmd.config_path.empty()) {
    std::ifstream f(cmd.config_path);
    if (!f) {
      std::cerr << "error: cannot open config file " << cmd.config_path << "\n";
      return 1;
    }
    try {
      cfg = json::parse(f);
    } catch (const json::exception& e) {
      std::cerr << "error: config file: " << e.what() << "\n";
      return 2;
    }
  }
  cfg.update(cmd.overrides, true);
  char* report = nullptr;
  int rc = cmd.fn(cfg.dump().c_str(), &report);
  if (rc != UVF_OK) {
    std::cerr << "error: " << uvf_last_error() << "\n";
    return rc == UVF_BAD_ARG ? 2 : 1;
  }
  if (report) {
    std::cout << report << "\n";
    uvf_string_free(report);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Volumetric swin segmentation: training, masked-volume "
               "pre-training and inference"};
  app.require_subcommand(1);
  std::vector<std::unique_ptr<TaskCmd>> cmds;

  auto make = [&](const char* name, const char* desc, int (*fn)(const char*, char**)) {
    auto cmd = std::make_unique<TaskCmd>();
    cmd->app = app.add_subcommand(name, desc);
    cmd->fn = fn;
    cmd->app->add_option("--config", cmd->config_path,
                         "JSON config file; explicit flags override its keys");
    cmds.push_back(std::move(cmd));
    return cmds.back().get();
  };
  auto opt_f = [](TaskCmd* c, const char* flag, const char* key, const char* desc) {
    c->app->add_option_function<double>(
        flag, [c, key](double v) { set_path(c->overrides, key, v); }, desc);
  };
  auto opt_i = [](TaskCmd* c, const char* flag, const char* key, const char* desc) {
    c->app->add_option_function<int64_t>(
        flag, [c, key](int64_t v) { set_path(c->overrides, key, v); }, desc);
  };
  auto opt_s = [](TaskCmd* c, const char* flag, const char* key, const char* desc) {
    c->app->add_option_function<std::string>(
        flag, [c, key](const std::string& v) { set_path(c->overrides, key, v); }, desc);
  };
  auto opt_b = [](TaskCmd* c, const char* flag, const char* key, const char* desc) {
    c->app->add_flag_function(
        flag, [c, key](int64_t n) { set_path(c->overrides, key, n > 0); }, desc);
  };

  {
    auto* c = make("gradcheck", "Run the finite-difference gradient suite", uvf_run_gradcheck);
    c->app->add_flag_function(
        "--ops-only", [c](int64_t) { c->overrides["models"] = false; },
        "check ops only, skip the slow end-to-end model checks");
    opt_i(c, "--coords", "coords_per_leaf", "sampled coordinates per model parameter");
  }
  {
    auto* c = make("shapes", "Print the skip/logit shape table", uvf_run_shapes);
    opt_i(c, "--input", "input", "cubic input extent (divisible by 32)");
    opt_i(c, "--num-classes", "decoder.num_classes", "output classes K");
    opt_s(c, "--variant", "decoder.variant", "decoder variant: cnn|transformer");
    opt_s(c, "--encoder-preset", "encoder.preset", "encoder preset: default|tiny");
  }
  {
    auto* c = make("params", "Parameter-count diagnostic for both variants", uvf_run_params);
    opt_i(c, "--num-classes", "num_classes", "output classes K");
  }
  {
    auto* c = make("pretrain", "Masked-volume pre-training on a synthetic volume",
                   uvf_run_pretrain);
    opt_f(c, "--mask-ratio", "mask_ratio", "fraction of cubes masked");
    opt_i(c, "--patch-size", "patch_size", "cube edge in voxels");
    opt_i(c, "--seed", "seed", "rng seed");
    opt_i(c, "--steps", "steps", "optimization steps");
    opt_i(c, "--vol", "vol", "cubic volume extent");
    opt_f(c, "--lr", "lr", "learning rate");
    opt_s(c, "--encoder-preset", "encoder.preset", "encoder preset: default|tiny");
    opt_s(c, "--checkpoint-out", "checkpoint_out", "write final checkpoint here");
    opt_s(c, "--log-out", "log_out", "JSON-lines training log path");
  }
  {
    auto* c = make("sweep", "Masking ratio x patch size ablation grid", uvf_run_sweep);
    c->app->add_option_function<std::vector<double>>(
        "--ratios", [c](const std::vector<double>& v) { c->overrides["ratios"] = v; },
        "masking ratios to sweep");
    c->app->add_option_function<std::vector<int64_t>>(
        "--patches", [c](const std::vector<int64_t>& v) { c->overrides["patches"] = v; },
        "patch sizes to sweep");
    opt_i(c, "--steps", "steps", "pre-training steps per cell");
    opt_i(c, "--vol", "vol", "cubic volume extent");
    opt_i(c, "--seed", "seed", "rng seed");
    opt_s(c, "--csv-out", "csv_out", "CSV report path");
    opt_s(c, "--json-out", "json_out", "JSON report path");
  }
  {
    auto* c = make("train", "Train a segmentation model on synthetic data", uvf_run_train);
    opt_s(c, "--variant", "decoder.variant", "decoder variant: cnn|transformer");
    opt_i(c, "--num-classes", "decoder.num_classes", "output classes K");
    opt_i(c, "--epochs", "epochs", "epochs (steps = epochs x samples)");
    opt_f(c, "--lr", "lr", "peak learning rate");
    opt_i(c, "--warmup", "warmup_steps", "linear warmup steps");
    opt_i(c, "--seed", "seed", "rng seed");
    opt_i(c, "--vol", "vol", "cubic volume extent");
    opt_i(c, "--samples", "samples", "training samples");
    opt_i(c, "--val-samples", "val_samples", "held-out validation samples");
    opt_b(c, "--augment", "augment", "enable flip/rotation/intensity augmentation");
    opt_s(c, "--encoder-preset", "encoder.preset", "encoder preset: default|tiny");
    opt_s(c, "--from-checkpoint", "from_checkpoint", "fine-tune from this checkpoint");
    opt_s(c, "--checkpoint-out", "checkpoint_out", "write best-validation checkpoint here");
    opt_s(c, "--log-out", "log_out", "JSON-lines training log path");
  }
  {
    auto* c = make("infer", "Sliding-window inference over a VVOL volume", uvf_run_infer);
    opt_s(c, "--checkpoint", "checkpoint", "segmentation checkpoint");
    opt_s(c, "--input", "input", "input intensity volume (VVOL)");
    opt_i(c, "--roi", "roi", "cubic window extent (divisible by 32)");
    opt_f(c, "--overlap", "overlap", "window overlap fraction in [0,1)");
    opt_s(c, "--blend", "blend", "blend mode: constant|gaussian");
    opt_s(c, "--probs-out", "probs_out", "probability volume output (VVOL f32)");
    opt_s(c, "--labels-out", "labels_out", "argmax label volume output (VVOL u16)");
  }
  {
    auto* c = make("eval", "Dice / Hausdorff report for two label volumes", uvf_run_eval);
    opt_s(c, "--pred", "pred", "predicted labels (VVOL u16)");
    opt_s(c, "--gt", "gt", "ground-truth labels (VVOL u16)");
    opt_i(c, "--num-classes", "num_classes", "classes K (0 = derive from data)");
    opt_s(c, "--report-out", "report_out", "JSON report path");
  }
  {
    auto* c = make("mask-demo", "Emit original/masked/reconstruction slice images",
                   uvf_run_mask_demo);
    opt_i(c, "--vol", "vol", "cubic volume extent");
    opt_i(c, "--seed", "seed", "rng seed");
    opt_f(c, "--mask-ratio", "mask_ratio", "fraction of cubes masked");
    opt_i(c, "--patch-size", "patch_size", "cube edge in voxels");
    opt_i(c, "--axis", "axis", "slice axis 0|1|2");
    opt_i(c, "--index", "index", "slice index (default: middle)");
    opt_i(c, "--steps", "steps", "pre-training steps before reconstruction");
    opt_s(c, "--out-prefix", "out_prefix", "output image path prefix");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  for (auto& cmd : cmds)
    if (cmd->app->parsed()) return run(*cmd);
  return 2;
}
