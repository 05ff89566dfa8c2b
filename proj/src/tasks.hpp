#pragma once

#include "json.hpp"

namespace uvf {

using json = nlohmann::json;

// JSON-configured entry points, one per CLI subcommand. Each validates its
// config, performs any file side effects named in it and returns a report.
// Unknown keys are rejected so typos surface instead of silently applying
// defaults.

json task_gradcheck(const json& cfg);
json task_shapes(const json& cfg);
json task_params(const json& cfg);
json task_pretrain(const json& cfg);
json task_sweep(const json& cfg);
json task_train(const json& cfg);
json task_infer(const json& cfg);
json task_eval(const json& cfg);
json task_mask_demo(const json& cfg);

}  // namespace uvf
