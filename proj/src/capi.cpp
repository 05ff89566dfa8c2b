#include "unetformer/unetformer.h"

#include <cmath>
#include <cstring>
#include <string>

#include "core/io.hpp"
#include "core/runtime.hpp"
#include "tasks.hpp"

namespace {

thread_local std::string g_last_error;

int fail(int code, const std::string& msg) {
  g_last_error = msg;
  return code;
}

int run_task(uvf::json (*task)(const uvf::json&), const char* config_json,
             char** report_json) {
  try {
    uvf::json cfg = uvf::json::object();
    if (config_json && *config_json) cfg = uvf::json::parse(config_json);
    if (!cfg.is_object()) return fail(UVF_BAD_ARG, "config must be a JSON object");
    uvf::json report = task(cfg);
    if (report_json) {
      std::string s = report.dump(2);
      *report_json = static_cast<char*>(std::malloc(s.size() + 1));
      std::memcpy(*report_json, s.c_str(), s.size() + 1);
    }
    return UVF_OK;
  } catch (const uvf::json::exception& e) {
    return fail(UVF_BAD_ARG, std::string("config JSON: ") + e.what());
  } catch (const uvf::ConfigError& e) {
    return fail(UVF_BAD_ARG, e.what());
  } catch (const std::exception& e) {
    return fail(UVF_ERROR, e.what());
  }
}

}  // namespace

struct uvf_model {
  uvf::EncoderConfig enc;
  uvf::DecoderConfig dec;
  std::unique_ptr<uvf::SegModel> model;
};

extern "C" {

const char* uvf_version(void) { return "1.0.0"; }

const char* uvf_last_error(void) { return g_last_error.c_str(); }

void uvf_string_free(char* s) { std::free(s); }

int uvf_run_gradcheck(const char* c, char** r) { return run_task(uvf::task_gradcheck, c, r); }
int uvf_run_shapes(const char* c, char** r) { return run_task(uvf::task_shapes, c, r); }
int uvf_run_params(const char* c, char** r) { return run_task(uvf::task_params, c, r); }
int uvf_run_pretrain(const char* c, char** r) { return run_task(uvf::task_pretrain, c, r); }
int uvf_run_sweep(const char* c, char** r) { return run_task(uvf::task_sweep, c, r); }
int uvf_run_train(const char* c, char** r) { return run_task(uvf::task_train, c, r); }
int uvf_run_infer(const char* c, char** r) { return run_task(uvf::task_infer, c, r); }
int uvf_run_eval(const char* c, char** r) { return run_task(uvf::task_eval, c, r); }
int uvf_run_mask_demo(const char* c, char** r) { return run_task(uvf::task_mask_demo, c, r); }

uvf_model* uvf_model_create(const char* config_json) {
  try {
    if (!config_json) {
      fail(UVF_BAD_ARG, "config_json is null");
      return nullptr;
    }
    uvf::json cfg = uvf::json::object();
    if (*config_json) cfg = uvf::json::parse(config_json);
    auto m = std::make_unique<uvf_model>();
    uvf::json enc_j = cfg.value("encoder", uvf::json::object());
    uvf::EncoderConfig enc;
    if (enc_j.value("preset", "default") == std::string("tiny"))
      enc = uvf::EncoderConfig::tiny();
    if (enc_j.contains("embed_dim")) enc.embed_dim = enc_j["embed_dim"].get<int64_t>();
    if (enc_j.contains("depths")) enc.depths = enc_j["depths"].get<std::vector<int>>();
    if (enc_j.contains("num_heads"))
      enc.num_heads = enc_j["num_heads"].get<std::vector<int>>();
    if (enc_j.contains("window")) enc.window = enc_j["window"].get<int>();
    enc.validate();
    uvf::json dec_j = cfg.value("decoder", uvf::json::object());
    uvf::DecoderConfig dec;
    std::string variant = dec_j.value("variant", "cnn");
    if (variant == "transformer")
      dec.variant = uvf::DecoderVariant::transformer;
    else if (variant != "cnn")
      throw uvf::ConfigError("variant must be cnn or transformer");
    dec.num_classes = dec_j.value("num_classes", int64_t(2));
    dec.deep_supervision = dec_j.value("deep_supervision", true);
    dec.validate();
    m->enc = enc;
    m->dec = dec;
    m->model = std::make_unique<uvf::SegModel>(enc, dec, cfg.value("seed", uint64_t(0)));
    return m.release();
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return nullptr;
  }
}

void uvf_model_free(uvf_model* m) { delete m; }

int uvf_model_parameter_count(const uvf_model* m, int64_t* out) {
  if (!m || !out) return fail(UVF_BAD_ARG, "null argument");
  *out = m->model->count_parameters();
  return UVF_OK;
}

int uvf_model_num_classes(const uvf_model* m, int64_t* out) {
  if (!m || !out) return fail(UVF_BAD_ARG, "null argument");
  *out = m->dec.num_classes;
  return UVF_OK;
}

int uvf_model_load_checkpoint(uvf_model* m, const char* path, int strict) {
  if (!m || !path) return fail(UVF_BAD_ARG, "null argument");
  try {
    uvf::Checkpoint c = uvf::load_checkpoint(path);
    uvf::apply_checkpoint(m->model->params(), c, strict != 0);
    return UVF_OK;
  } catch (const uvf::ConfigError& e) {
    return fail(UVF_BAD_ARG, e.what());
  } catch (const std::exception& e) {
    return fail(UVF_ERROR, e.what());
  }
}

int uvf_model_predict(const uvf_model* m, const double* volume, const int64_t dims[3],
                      double* probs_out) {
  if (!m || !volume || !dims || !probs_out) return fail(UVF_BAD_ARG, "null argument");
  try {
    uvf::Tensor vol({1, 1, dims[0], dims[1], dims[2]});
    std::memcpy(vol.data(), volume, size_t(vol.numel()) * sizeof(double));
    uvf::NoGradGuard ng;
    uvf::Tensor logits = m->model->forward(uvf::make_const(std::move(vol)))
                             .logits_full->value;
    int64_t K = m->dec.num_classes;
    int64_t N = dims[0] * dims[1] * dims[2];
    for (int64_t v = 0; v < N; ++v) {
      double mx = logits[v];
      for (int64_t k = 1; k < K; ++k) mx = std::max(mx, logits[k * N + v]);
      double z = 0.0;
      for (int64_t k = 0; k < K; ++k) z += std::exp(logits[k * N + v] - mx);
      for (int64_t k = 0; k < K; ++k)
        probs_out[k * N + v] = std::exp(logits[k * N + v] - mx) / z;
    }
    return UVF_OK;
  } catch (const std::exception& e) {
    return fail(UVF_ERROR, e.what());
  }
}

}  // extern "C"
