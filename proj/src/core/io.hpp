#pragma once

#include <map>
#include <string>

#include "json.hpp"
#include "metrics.hpp"
#include "params.hpp"

namespace uvf {

enum class VvolDtype : uint8_t { f32 = 0, f64 = 1, u16 = 2 };

// Minimal binary volume container: "VVOL1" magic, dtype tag, dims, channels,
// spacing, then a little-endian payload. u16 carries integer labels
// (channels must be 1); f32/f64 carry [channels,H,W,D] values.
struct Vvol {
  std::array<int64_t, 3> dims{};
  int64_t channels = 1;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  VvolDtype dtype = VvolDtype::f64;
  Tensor values;                 // f32/f64 payloads
  std::vector<uint16_t> labels;  // u16 payloads
};

Vvol read_vvol(const std::string& path);
void write_vvol(const std::string& path, const Vvol& v);

Vvol vvol_from_volume(const Tensor& volume, const std::array<double, 3>& spacing,
                      VvolDtype dtype = VvolDtype::f64);  // [1,C,H,W,D] or [C,H,W,D]
Vvol vvol_from_labels(const LabelVolume& labels);
LabelVolume labels_from_vvol(const Vvol& v);

// Checkpoint file: "UVCK1" magic, manifest length, JSON manifest (version,
// step, config snapshot, parameter names + shapes), then raw little-endian
// f64 tensors in manifest order.
struct Checkpoint {
  int version = 1;
  int64_t step = 0;
  nlohmann::json config;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

void save_checkpoint(const std::string& path, const ParamRegistry& reg,
                     const nlohmann::json& config, int64_t step);
Checkpoint load_checkpoint(const std::string& path);

struct TransferReport {
  std::vector<std::string> matched;
  std::vector<std::string> missing;         // in registry, absent from checkpoint
  std::vector<std::string> unused;          // in checkpoint, absent from registry
  std::vector<std::string> shape_mismatch;  // names present on both sides, shapes differ

  bool clean() const { return missing.empty() && unused.empty() && shape_mismatch.empty(); }
  nlohmann::json to_json() const;
};

// Copies checkpoint tensors into same-named registry parameters. strict
// rejects any missing name or shape mismatch; otherwise unmatched names are
// just reported (the fine-tuning path: encoder transfers, decoder stays
// fresh).
TransferReport apply_checkpoint(ParamRegistry& reg, const Checkpoint& ckpt, bool strict);

// Binary PGM (min-max windowed gray) slice of a [1,1,H,W,D] / [H,W,D]
// volume, or binary PPM with a fixed label palette. axis in {0,1,2}.
void dump_slice_gray(const Tensor& volume, int axis, int64_t index, const std::string& path);
void dump_slice_labels(const LabelVolume& labels, int axis, int64_t index,
                       const std::string& path);

// Write-to-temp-then-rename.
void atomic_write(const std::string& path, const std::string& bytes);

}  // namespace uvf
