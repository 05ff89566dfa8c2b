#include "io.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace uvf {

namespace {

constexpr char kVvolMagic[5] = {'V', 'V', 'O', 'L', '1'};
constexpr char kCkptMagic[5] = {'U', 'V', 'C', 'K', '1'};

void put_u64(std::string& out, uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}
void put_i64(std::string& out, int64_t v) { put_u64(out, uint64_t(v)); }
void put_f64(std::string& out, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}
void put_f32(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  for (int i = 0; i < 4; ++i) out.push_back(char((bits >> (8 * i)) & 0xff));
}
void put_u16(std::string& out, uint16_t v) {
  out.push_back(char(v & 0xff));
  out.push_back(char(v >> 8));
}

// Cursor over a byte buffer; every failure names the offset.
struct Reader {
  const std::string& buf;
  size_t pos = 0;
  std::string what;

  void need(size_t n, const char* item) {
    if (pos + n > buf.size())
      throw ParseError(what + ": truncated reading " + item + " at byte offset " +
                       std::to_string(pos) + " (need " + std::to_string(n) + ", have " +
                       std::to_string(buf.size() - pos) + ")");
  }
  uint64_t u64(const char* item) {
    need(8, item);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(uint8_t(buf[pos + size_t(i)])) << (8 * i);
    pos += 8;
    return v;
  }
  int64_t i64(const char* item) { return int64_t(u64(item)); }
  double f64(const char* item) {
    uint64_t bits = u64(item);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  float f32(const char* item) {
    need(4, item);
    uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= uint32_t(uint8_t(buf[pos + size_t(i)])) << (8 * i);
    pos += 4;
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  uint16_t u16(const char* item) {
    need(2, item);
    uint16_t v = uint16_t(uint8_t(buf[pos])) | uint16_t(uint16_t(uint8_t(buf[pos + 1])) << 8);
    pos += 2;
    return v;
  }
  uint8_t u8(const char* item) {
    need(1, item);
    return uint8_t(buf[pos++]);
  }
  void magic(const char m[5]) {
    need(5, "magic");
    if (std::memcmp(buf.data() + pos, m, 5) != 0)
      throw ParseError(what + ": bad magic at byte offset " + std::to_string(pos));
    pos += 5;
  }
  std::string bytes(size_t n, const char* item) {
    need(n, item);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open " + path);
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

size_t dtype_size(VvolDtype d) {
  switch (d) {
    case VvolDtype::f32: return 4;
    case VvolDtype::f64: return 8;
    case VvolDtype::u16: return 2;
  }
  throw ParseError("unknown dtype tag");
}

void put_tensor(std::string& out, const Tensor& t) {
  for (int64_t i = 0; i < t.numel(); ++i) put_f64(out, t[i]);
}

}  // namespace

void atomic_write(const std::string& path, const std::string& bytes) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw ParseError("cannot open " + tmp + " for writing");
    f.write(bytes.data(), std::streamsize(bytes.size()));
    if (!f) throw ParseError("short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw ParseError("rename " + tmp + " -> " + path + " failed");
}

void write_vvol(const std::string& path, const Vvol& v) {
  int64_t voxels = v.dims[0] * v.dims[1] * v.dims[2];
  int64_t n = voxels * v.channels;
  if (v.dtype == VvolDtype::u16) {
    if (v.channels != 1) throw ConfigError("u16 vvol must have 1 channel");
    if (int64_t(v.labels.size()) != n)
      throw ShapeError("vvol label payload length does not match dims");
  } else if (v.values.numel() != n) {
    throw ShapeError("vvol value payload length does not match dims x channels");
  }
  std::string out;
  out.append(kVvolMagic, 5);
  out.push_back(char(uint8_t(v.dtype)));
  for (int a = 0; a < 3; ++a) put_i64(out, v.dims[a]);
  put_i64(out, v.channels);
  for (int a = 0; a < 3; ++a) put_f64(out, v.spacing[a]);
  switch (v.dtype) {
    case VvolDtype::f32:
      for (int64_t i = 0; i < n; ++i) put_f32(out, float(v.values[i]));
      break;
    case VvolDtype::f64:
      for (int64_t i = 0; i < n; ++i) put_f64(out, v.values[i]);
      break;
    case VvolDtype::u16:
      for (int64_t i = 0; i < n; ++i) put_u16(out, v.labels[size_t(i)]);
      break;
  }
  atomic_write(path, out);
}

Vvol read_vvol(const std::string& path) {
  std::string buf = slurp(path);
  Reader r{buf, 0, path};
  r.magic(kVvolMagic);
  Vvol v;
  uint8_t tag = r.u8("dtype");
  if (tag > 2) throw ParseError(path + ": unknown dtype tag " + std::to_string(tag) +
                                " at byte offset " + std::to_string(r.pos - 1));
  v.dtype = VvolDtype(tag);
  for (int a = 0; a < 3; ++a) v.dims[a] = r.i64("dims");
  v.channels = r.i64("channels");
  for (int a = 0; a < 3; ++a) v.spacing[a] = r.f64("spacing");
  for (int a = 0; a < 3; ++a)
    if (v.dims[a] < 1) throw ParseError(path + ": non-positive extent");
  if (v.channels < 1) throw ParseError(path + ": non-positive channel count");
  int64_t n = v.dims[0] * v.dims[1] * v.dims[2] * v.channels;
  size_t expect = size_t(n) * dtype_size(v.dtype);
  if (buf.size() - r.pos != expect)
    throw ParseError(path + ": payload is " + std::to_string(buf.size() - r.pos) +
                     " bytes at offset " + std::to_string(r.pos) + ", expected " +
                     std::to_string(expect));
  switch (v.dtype) {
    case VvolDtype::f32:
      v.values = Tensor({v.channels, v.dims[0], v.dims[1], v.dims[2]});
      for (int64_t i = 0; i < n; ++i) v.values[i] = double(r.f32("payload"));
      break;
    case VvolDtype::f64:
      v.values = Tensor({v.channels, v.dims[0], v.dims[1], v.dims[2]});
      for (int64_t i = 0; i < n; ++i) v.values[i] = r.f64("payload");
      break;
    case VvolDtype::u16:
      v.labels.resize(size_t(n));
      for (int64_t i = 0; i < n; ++i) v.labels[size_t(i)] = r.u16("payload");
      break;
  }
  return v;
}

Vvol vvol_from_volume(const Tensor& volume, const std::array<double, 3>& spacing,
                      VvolDtype dtype) {
  if (dtype == VvolDtype::u16) throw ConfigError("use vvol_from_labels for u16");
  Shape s = volume.shape();
  if (s.size() == 5 && s[0] == 1) s.erase(s.begin());
  if (s.size() != 4) throw ShapeError("vvol_from_volume: expected [C,H,W,D]");
  Vvol v;
  v.dtype = dtype;
  v.channels = s[0];
  v.dims = {s[1], s[2], s[3]};
  v.spacing = spacing;
  v.values = volume.reshaped(s);
  return v;
}

Vvol vvol_from_labels(const LabelVolume& labels) {
  Vvol v;
  v.dtype = VvolDtype::u16;
  v.dims = labels.dims;
  v.spacing = labels.spacing;
  v.labels = labels.data;
  return v;
}

LabelVolume labels_from_vvol(const Vvol& v) {
  if (v.dtype != VvolDtype::u16) throw ConfigError("labels_from_vvol: dtype is not u16");
  LabelVolume out;
  out.dims = v.dims;
  out.spacing = v.spacing;
  out.data = v.labels;
  return out;
}

void save_checkpoint(const std::string& path, const ParamRegistry& reg,
                     const nlohmann::json& config, int64_t step) {
  nlohmann::json manifest;
  manifest["version"] = 1;
  manifest["step"] = step;
  manifest["config"] = config;
  nlohmann::json params = nlohmann::json::array();
  for (const auto& [name, v] : reg.items())
    params.push_back({{"name", name}, {"shape", v->value.shape()}});
  manifest["params"] = params;
  std::string mbytes = manifest.dump();

  std::string out;
  out.append(kCkptMagic, 5);
  put_u64(out, mbytes.size());
  out += mbytes;
  for (const auto& [name, v] : reg.items()) put_tensor(out, v->value);
  atomic_write(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::string buf = slurp(path);
  Reader r{buf, 0, path};
  r.magic(kCkptMagic);
  uint64_t mlen = r.u64("manifest length");
  std::string mbytes = r.bytes(size_t(mlen), "manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mbytes);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": manifest JSON: " + e.what());
  }
  Checkpoint c;
  c.version = manifest.at("version").get<int>();
  if (c.version != 1)
    throw ParseError(path + ": unsupported checkpoint version " + std::to_string(c.version));
  c.step = manifest.at("step").get<int64_t>();
  c.config = manifest.value("config", nlohmann::json::object());
  for (const auto& p : manifest.at("params")) {
    std::string name = p.at("name").get<std::string>();
    Shape shape = p.at("shape").get<Shape>();
    Tensor t(shape);
    for (int64_t i = 0; i < t.numel(); ++i)
      t[i] = r.f64(("tensor " + name).c_str());
    c.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (r.pos != buf.size())
    throw ParseError(path + ": " + std::to_string(buf.size() - r.pos) +
                     " trailing bytes after tensors");
  return c;
}

nlohmann::json TransferReport::to_json() const {
  return {{"matched", matched},
          {"missing", missing},
          {"unused", unused},
          {"shape_mismatch", shape_mismatch}};
}

TransferReport apply_checkpoint(ParamRegistry& reg, const Checkpoint& ckpt, bool strict) {
  TransferReport rep;
  for (const auto& [name, v] : reg.items()) {
    const Tensor* t = ckpt.find(name);
    if (!t) {
      rep.missing.push_back(name);
      continue;
    }
    if (!v->value.same_shape(*t)) {
      rep.shape_mismatch.push_back(name);
      continue;
    }
    rep.matched.push_back(name);
  }
  for (const auto& [name, t] : ckpt.tensors)
    if (!reg.find(name)) rep.unused.push_back(name);
  if (strict && !rep.clean()) {
    std::string head = !rep.shape_mismatch.empty() ? rep.shape_mismatch.front()
                       : !rep.missing.empty()      ? rep.missing.front()
                                                   : rep.unused.front();
    throw ConfigError("strict checkpoint load: first unmatched parameter: " + head);
  }
  for (const auto& name : rep.matched) reg.find(name)->value = *ckpt.find(name);
  return rep;
}

namespace {

// Extracts slice (a 2D plane) from [H,W,D] data via a value accessor.
template <typename GetF>
void slice_plane(const std::array<int64_t, 3>& dims, int axis, int64_t index, GetF get,
                 int64_t& rows, int64_t& cols, std::vector<double>& out) {
  if (axis < 0 || axis > 2) throw ConfigError("slice axis must be 0, 1 or 2");
  if (index < 0 || index >= dims[size_t(axis)])
    throw DomainError("slice index " + std::to_string(index) + " out of range for extent " +
                      std::to_string(dims[size_t(axis)]));
  int u = axis == 0 ? 1 : 0;
  int v = axis == 2 ? 1 : 2;
  rows = dims[size_t(u)];
  cols = dims[size_t(v)];
  out.resize(size_t(rows * cols));
  std::array<int64_t, 3> c{};
  c[size_t(axis)] = index;
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j) {
      c[size_t(u)] = i;
      c[size_t(v)] = j;
      out[size_t(i * cols + j)] = get(c[0], c[1], c[2]);
    }
}

}  // namespace

void dump_slice_gray(const Tensor& volume, int axis, int64_t index, const std::string& path) {
  Shape s = volume.shape();
  while (s.size() > 3 && s.front() == 1) s.erase(s.begin());
  if (s.size() != 3) throw ShapeError("dump_slice_gray: expected a single-channel volume");
  std::array<int64_t, 3> dims{s[0], s[1], s[2]};
  int64_t rows, cols;
  std::vector<double> plane;
  slice_plane(dims, axis, index,
              [&](int64_t x, int64_t y, int64_t z) {
                return volume[(x * dims[1] + y) * dims[2] + z];
              },
              rows, cols, plane);
  double lo = plane[0], hi = plane[0];
  for (double v : plane) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  double span = hi > lo ? hi - lo : 1.0;
  std::string out = "P5\n" + std::to_string(cols) + " " + std::to_string(rows) + "\n255\n";
  for (double v : plane) out.push_back(char(uint8_t(255.0 * (v - lo) / span + 0.5)));
  atomic_write(path, out);
}

void dump_slice_labels(const LabelVolume& labels, int axis, int64_t index,
                       const std::string& path) {
  static constexpr uint8_t palette[][3] = {
      {0, 0, 0},      {220, 60, 60},  {60, 180, 75},  {65, 105, 225}, {240, 180, 40},
      {150, 80, 200}, {70, 200, 200}, {230, 120, 30}, {160, 160, 160}};
  constexpr size_t kPaletteSize = sizeof(palette) / sizeof(palette[0]);
  int64_t rows, cols;
  std::vector<double> plane;
  slice_plane(labels.dims, axis, index,
              [&](int64_t x, int64_t y, int64_t z) { return double(labels.at(x, y, z)); },
              rows, cols, plane);
  std::string out = "P6\n" + std::to_string(cols) + " " + std::to_string(rows) + "\n255\n";
  for (double v : plane) {
    size_t c = size_t(v) % kPaletteSize;
    out.push_back(char(palette[c][0]));
    out.push_back(char(palette[c][1]));
    out.push_back(char(palette[c][2]));
  }
  atomic_write(path, out);
}

}  // namespace uvf
