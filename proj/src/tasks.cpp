#include "tasks.hpp"

#include <fstream>
#include <sstream>

#include "core/gradsuite.hpp"
#include "core/io.hpp"
#include "core/runtime.hpp"

namespace uvf {

namespace {

void reject_unknown(const json& cfg, std::initializer_list<const char*> allowed) {
  for (const auto& [key, _] : cfg.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) ok = true;
    if (!ok) throw ConfigError("unknown config key: " + key);
  }
}

EncoderConfig encoder_from_json(const json& j) {
  EncoderConfig c;
  if (j.value("preset", "default") == std::string("tiny")) c = EncoderConfig::tiny();
  if (j.contains("embed_dim")) c.embed_dim = j["embed_dim"].get<int64_t>();
  if (j.contains("depths")) c.depths = j["depths"].get<std::vector<int>>();
  if (j.contains("num_heads")) c.num_heads = j["num_heads"].get<std::vector<int>>();
  if (j.contains("window")) c.window = j["window"].get<int>();
  if (j.contains("mlp_ratio")) c.mlp_ratio = j["mlp_ratio"].get<double>();
  if (j.contains("qkv_bias")) c.qkv_bias = j["qkv_bias"].get<bool>();
  c.validate();
  return c;
}

json encoder_to_json(const EncoderConfig& c) {
  return {{"embed_dim", c.embed_dim}, {"depths", c.depths},   {"num_heads", c.num_heads},
          {"window", c.window},       {"mlp_ratio", c.mlp_ratio}, {"qkv_bias", c.qkv_bias}};
}

DecoderConfig decoder_from_json(const json& j) {
  DecoderConfig c;
  std::string variant = j.value("variant", "cnn");
  if (variant == "cnn")
    c.variant = DecoderVariant::cnn;
  else if (variant == "transformer")
    c.variant = DecoderVariant::transformer;
  else
    throw ConfigError("variant must be cnn or transformer, got " + variant);
  c.num_classes = j.value("num_classes", int64_t(2));
  c.deep_supervision = j.value("deep_supervision", true);
  c.residual_mlp = j.value("residual_mlp", false);
  c.validate();
  return c;
}

json decoder_to_json(const DecoderConfig& c) {
  return {{"variant", c.variant == DecoderVariant::cnn ? "cnn" : "transformer"},
          {"num_classes", c.num_classes},
          {"deep_supervision", c.deep_supervision},
          {"residual_mlp", c.residual_mlp}};
}

std::array<int64_t, 3> shape3(const json& j, const char* key, std::array<int64_t, 3> dflt) {
  if (!j.contains(key)) return dflt;
  if (j[key].is_number()) {
    int64_t n = j[key].get<int64_t>();
    return {n, n, n};
  }
  auto v = j[key].get<std::vector<int64_t>>();
  if (v.size() != 3) throw ConfigError(std::string(key) + " must be a scalar or 3 extents");
  return {v[0], v[1], v[2]};
}

void write_text(const std::string& path, const std::string& text) {
  atomic_write(path, text);
}

json sweep_cells_json(const std::vector<SweepCell>& cells) {
  json rows = json::array();
  for (const auto& c : cells) {
    json row{{"ratio", c.ratio}, {"patch", c.patch}, {"reference", c.reference},
             {"skipped", c.skipped}};
    if (c.skipped)
      row["note"] = c.note;
    else
      row["final_loss"] = c.final_loss;
    if (c.has_dice) row["dice"] = c.dice;
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

json task_gradcheck(const json& cfg) {
  reject_unknown(cfg, {"models", "coords_per_leaf"});
  bool models = cfg.value("models", true);
  int64_t coords = cfg.value("coords_per_leaf", int64_t(2));
  auto reports = run_gradient_suite(models, coords);
  json rows = json::array();
  bool pass = true;
  for (const auto& r : reports) {
    pass = pass && r.max_rel_error < r.tolerance;
    rows.push_back({{"op", r.op_name},
                    {"max_rel_error", r.max_rel_error},
                    {"tolerance", r.tolerance},
                    {"coords_checked", r.coords_checked}});
  }
  return {{"pass", pass}, {"reports", rows}};
}

json task_shapes(const json& cfg) {
  reject_unknown(cfg, {"input", "encoder", "decoder"});
  std::array<int64_t, 3> in = shape3(cfg, "input", {96, 96, 96});
  EncoderConfig enc = encoder_from_json(cfg.value("encoder", json::object()));
  DecoderConfig dec = decoder_from_json(cfg.value("decoder", json::object()));
  for (int64_t e : in)
    if (e % 32 != 0) throw ShapeError("input extents must be divisible by 32");
  json skips = json::array();
  for (int i = 0; i <= 5; ++i) {
    int64_t ch = i == 0   ? enc.stem_width()
                 : i == 1 ? enc.embed_dim
                          : enc.embed_dim << (i - 1);
    skips.push_back({{"skip", i},
                     {"channels", ch},
                     {"extent", {in[0] >> i, in[1] >> i, in[2] >> i}}});
  }
  return {{"input", {in[0], in[1], in[2]}},
          {"skips", skips},
          {"logits", {1, dec.num_classes, in[0], in[1], in[2]}}};
}

json task_params(const json& cfg) {
  reject_unknown(cfg, {"num_classes", "encoder"});
  int64_t K = cfg.value("num_classes", int64_t(14));
  EncoderConfig enc = encoder_from_json(cfg.value("encoder", json::object()));
  json out;
  const double ref_cnn = 58.96e6, ref_tr = 24.44e6;
  for (auto variant : {DecoderVariant::cnn, DecoderVariant::transformer}) {
    DecoderConfig dec;
    dec.variant = variant;
    dec.num_classes = K;
    SegModel model(enc, dec, 1);
    double count = double(model.count_parameters());
    double ref = variant == DecoderVariant::cnn ? ref_cnn : ref_tr;
    const char* key = variant == DecoderVariant::cnn ? "unetformer" : "unetformer_plus";
    out[key] = {{"parameters", int64_t(count)},
                {"reference", int64_t(ref)},
                {"ratio", count / ref},
                {"within_20pct", count > 0.8 * ref && count < 1.2 * ref},
                {"encoder", model.params().count_with_prefix("encoder")},
                {"decoder", model.params().count_with_prefix("decoder")}};
  }
  out["note"] = "diagnostic only: head counts and MLP ratio are free choices";
  return out;
}

json task_pretrain(const json& cfg) {
  reject_unknown(cfg, {"mask_ratio", "patch_size", "seed", "steps", "vol", "lr", "encoder",
                       "checkpoint_out", "log_out"});
  double ratio = cfg.value("mask_ratio", 0.4);
  int64_t patch = cfg.value("patch_size", int64_t(16));
  uint64_t seed = cfg.value("seed", uint64_t(1));
  int64_t steps = cfg.value("steps", int64_t(50));
  double lr = cfg.value("lr", 1e-3);
  std::array<int64_t, 3> vol_shape = shape3(cfg, "vol", {64, 64, 64});
  EncoderConfig enc = encoder_from_json(cfg.value("encoder", json{{"preset", "tiny"}}));

  Tensor volume = synth_intensity_volume(vol_shape, seed);
  MaskSpec mask = generate_mask(vol_shape, patch, ratio, seed);
  if (mask.masked_cubes.empty()) throw DomainError("mask is empty; raise mask_ratio");
  PretrainModel model(enc, seed);
  AdamWConfig oc;
  oc.lr = lr;
  AdamW opt(model.params(), oc);

  std::ostringstream log;
  double first = 0.0, last = 0.0;
  for (int64_t s = 0; s < steps; ++s) {
    last = pretrain_step(model, opt, volume, mask);
    if (s == 0) first = last;
    log << json{{"step", s}, {"lr", opt.lr()}, {"loss", last}}.dump() << "\n";
  }
  if (cfg.contains("log_out")) write_text(cfg["log_out"], log.str());
  if (cfg.contains("checkpoint_out"))
    save_checkpoint(cfg["checkpoint_out"], model.params(),
                    {{"kind", "pretrain"}, {"encoder", encoder_to_json(enc)},
                     {"mask_ratio", ratio}, {"patch_size", patch}},
                    steps);
  return {{"steps", steps},        {"masked_cubes", int64_t(mask.masked_cubes.size())},
          {"total_cubes", mask.total_cubes()}, {"first_loss", first},
          {"final_loss", last}};
}

json task_sweep(const json& cfg) {
  reject_unknown(cfg, {"ratios", "patches", "steps", "seed", "vol", "lr", "encoder",
                       "csv_out", "json_out"});
  std::vector<double> ratios = cfg.value("ratios", std::vector<double>{0.2, 0.4, 0.6});
  std::vector<int64_t> patches = cfg.value("patches", std::vector<int64_t>{8, 16, 32});
  SweepConfig sc;
  sc.vol_shape = shape3(cfg, "vol", {96, 96, 96});
  sc.steps = cfg.value("steps", 30);
  sc.seed = cfg.value("seed", uint64_t(7));
  sc.lr = cfg.value("lr", 1e-3);
  sc.encoder = encoder_from_json(cfg.value("encoder", json{{"preset", "tiny"}}));
  auto cells = ablation_sweep(ratios, patches, sc);
  json rows = sweep_cells_json(cells);
  if (cfg.contains("csv_out")) write_text(cfg["csv_out"], sweep_csv(cells));
  if (cfg.contains("json_out")) write_text(cfg["json_out"], json{{"cells", rows}}.dump(2) + "\n");
  return {{"cells", rows}};
}

json task_train(const json& cfg) {
  reject_unknown(cfg, {"encoder", "decoder", "epochs", "lr", "warmup_steps", "seed", "vol",
                       "samples", "val_samples", "augment", "val_every", "from_checkpoint",
                       "checkpoint_out", "log_out"});
  EncoderConfig enc = encoder_from_json(cfg.value("encoder", json{{"preset", "tiny"}}));
  DecoderConfig dec = decoder_from_json(cfg.value("decoder", json{{"num_classes", 3}}));
  TrainConfig tc;
  tc.lr = cfg.value("lr", 5e-2);
  tc.epochs = cfg.value("epochs", int64_t(50));
  tc.warmup_steps = cfg.value("warmup_steps", int64_t(10));
  tc.seed = cfg.value("seed", uint64_t(1));
  tc.val_every = cfg.value("val_every", int64_t(25));
  if (cfg.contains("augment")) {
    bool on = cfg["augment"].get<bool>();
    tc.augment = {on, on, on, on};
  } else {
    tc.augment = {false, false, false, false};
  }
  std::array<int64_t, 3> vol_shape = shape3(cfg, "vol", {32, 32, 32});
  int64_t n_train = cfg.value("samples", int64_t(1));
  int64_t n_val = cfg.value("val_samples", int64_t(0));
  auto train_set = synth_dataset(n_train + n_val, vol_shape, dec.num_classes, tc.seed);
  std::vector<SegSample> val_set(train_set.begin() + n_train, train_set.end());
  train_set.resize(size_t(n_train));

  SegModel model(enc, dec, tc.seed);
  json report;
  if (cfg.contains("from_checkpoint")) {
    Checkpoint c = load_checkpoint(cfg["from_checkpoint"]);
    TransferReport rep = apply_checkpoint(model.params(), c, false);
    if (!rep.shape_mismatch.empty())
      throw ConfigError("checkpoint shape mismatch at " + rep.shape_mismatch.front());
    report["transfer"] = {{"matched", rep.matched.size()},
                          {"missing", rep.missing.size()},
                          {"unused", rep.unused.size()}};
  }

  std::ostringstream log;
  FitResult r = fit(model, train_set, val_set, tc, [&](const StepRecord& rec) {
    json row{{"step", rec.step}, {"lr", rec.lr}, {"loss", rec.loss}};
    if (rec.val_dice) row["val_dice"] = *rec.val_dice;
    log << row.dump() << "\n";
  });
  if (cfg.contains("log_out")) write_text(cfg["log_out"], log.str());
  if (cfg.contains("checkpoint_out")) {
    load_param_snapshot(model.params(), r.best_params);
    save_checkpoint(cfg["checkpoint_out"], model.params(),
                    {{"kind", "seg"}, {"encoder", encoder_to_json(enc)},
                     {"decoder", decoder_to_json(dec)}},
                    r.best_step);
  }
  report["steps"] = int64_t(r.log.size());
  report["first_loss"] = r.log.front().loss;
  report["final_loss"] = r.log.back().loss;
  report["best_val_dice"] = r.best_val_dice;
  report["best_step"] = r.best_step;
  return report;
}

json task_infer(const json& cfg) {
  reject_unknown(cfg, {"checkpoint", "input", "roi", "overlap", "blend", "probs_out",
                       "labels_out"});
  if (!cfg.contains("checkpoint")) throw ConfigError("infer requires a checkpoint");
  if (!cfg.contains("input")) throw ConfigError("infer requires an input volume");
  Checkpoint c = load_checkpoint(cfg["checkpoint"]);
  if (c.config.value("kind", "") != "seg")
    throw ConfigError("checkpoint is not a segmentation model");
  EncoderConfig enc = encoder_from_json(c.config.at("encoder"));
  DecoderConfig dec = decoder_from_json(c.config.at("decoder"));
  SegModel model(enc, dec, 0);
  apply_checkpoint(model.params(), c, true);

  Vvol in = read_vvol(cfg["input"]);
  if (in.dtype == VvolDtype::u16 || in.channels != 1)
    throw ConfigError("infer expects a single-channel intensity volume");
  SlidingWindowConfig sw;
  sw.roi = shape3(cfg, "roi", {32, 32, 32});
  sw.overlap = cfg.value("overlap", 0.7);
  std::string blend = cfg.value("blend", "constant");
  if (blend == "constant")
    sw.blend.kind = SlidingWindowBlend::constant;
  else if (blend == "gaussian")
    sw.blend.kind = SlidingWindowBlend::gaussian;
  else
    throw ConfigError("blend must be constant or gaussian");

  Tensor volume = in.values.reshaped({1, 1, in.dims[0], in.dims[1], in.dims[2]});
  Tensor probs = sliding_window_infer(model, volume, sw);
  if (cfg.contains("probs_out"))
    write_vvol(cfg["probs_out"], vvol_from_volume(probs, in.spacing, VvolDtype::f32));
  LabelVolume labels = labels_from_scores(probs, in.spacing);
  if (cfg.contains("labels_out")) write_vvol(cfg["labels_out"], vvol_from_labels(labels));
  json hist = json::object();
  std::vector<int64_t> counts(size_t(dec.num_classes), 0);
  for (auto v : labels.data) ++counts[v];
  for (int64_t k = 0; k < dec.num_classes; ++k)
    hist[std::to_string(k)] = counts[size_t(k)];
  return {{"dims", {in.dims[0], in.dims[1], in.dims[2]}},
          {"num_classes", dec.num_classes},
          {"label_histogram", hist}};
}

json task_eval(const json& cfg) {
  reject_unknown(cfg, {"pred", "gt", "num_classes", "report_out"});
  if (!cfg.contains("pred") || !cfg.contains("gt"))
    throw ConfigError("eval requires pred and gt label volumes");
  LabelVolume pred = labels_from_vvol(read_vvol(cfg["pred"]));
  LabelVolume gt = labels_from_vvol(read_vvol(cfg["gt"]));
  int64_t K = cfg.value("num_classes", int64_t(0));
  if (K == 0) {
    uint16_t mx = 0;
    for (auto v : pred.data) mx = std::max(mx, v);
    for (auto v : gt.data) mx = std::max(mx, v);
    K = mx + 1;
  }
  EvalResult r = evaluate_labels(pred, gt, int(K));
  json classes = json::array();
  for (size_t i = 0; i < r.per_class.size(); ++i) {
    const ClassEval& e = r.per_class[i];
    json row{{"class", i + 1}, {"dice", e.dice}, {"hd_valid", e.hd_valid}};
    if (e.hd_valid) {
      row["hd100"] = e.hausdorff;
      row["hd95"] = e.hd95;
    }
    classes.push_back(std::move(row));
  }
  json report{{"mean_dice", r.mean_dice}, {"classes", classes}};
  if (cfg.contains("report_out")) write_text(cfg["report_out"], report.dump(2) + "\n");
  return report;
}

json task_mask_demo(const json& cfg) {
  reject_unknown(cfg, {"vol", "seed", "mask_ratio", "patch_size", "axis", "index", "steps",
                       "lr", "encoder", "out_prefix"});
  std::array<int64_t, 3> vol_shape = shape3(cfg, "vol", {64, 64, 64});
  uint64_t seed = cfg.value("seed", uint64_t(1));
  double ratio = cfg.value("mask_ratio", 0.4);
  int64_t patch = cfg.value("patch_size", int64_t(16));
  int axis = cfg.value("axis", 0);
  int64_t steps = cfg.value("steps", int64_t(40));
  int64_t index = cfg.value("index", vol_shape[size_t(axis)] / 2);
  std::string prefix = cfg.value("out_prefix", "mask_demo");
  EncoderConfig enc = encoder_from_json(cfg.value("encoder", json{{"preset", "tiny"}}));

  Tensor volume = synth_intensity_volume(vol_shape, seed);
  MaskSpec mask = generate_mask(vol_shape, patch, ratio, seed);
  if (mask.masked_cubes.empty()) throw DomainError("mask is empty; raise mask_ratio");
  Tensor masked = apply_mask(volume, mask);

  PretrainModel model(enc, seed);
  AdamWConfig oc;
  oc.lr = cfg.value("lr", 1e-3);
  AdamW opt(model.params(), oc);
  double loss = 0.0;
  for (int64_t s = 0; s < steps; ++s) loss = pretrain_step(model, opt, volume, mask);
  NoGradGuard ng;
  Tensor recon = model.recon_forward(make_const(masked))->value;

  std::string p_orig = prefix + "_original.pgm";
  std::string p_mask = prefix + "_masked.pgm";
  std::string p_recon = prefix + "_recon.pgm";
  dump_slice_gray(volume, axis, index, p_orig);
  dump_slice_gray(masked, axis, index, p_mask);
  dump_slice_gray(recon, axis, index, p_recon);
  return {{"original", p_orig}, {"masked", p_mask}, {"reconstruction", p_recon},
          {"final_loss", loss}};
}

}  // namespace uvf
