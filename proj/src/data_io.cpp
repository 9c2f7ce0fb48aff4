#include "csunet/data_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

namespace csunet {

const char* describe(FormatErrorKind k) {
  switch (k) {
    case FormatErrorKind::io: return "io error";
    case FormatErrorKind::bad_magic: return "bad magic";
    case FormatErrorKind::truncated: return "truncated";
    case FormatErrorKind::unknown_version: return "unknown version";
    case FormatErrorKind::unknown_dtype: return "unknown dtype";
    case FormatErrorKind::config_mismatch: return "config mismatch";
    case FormatErrorKind::shape_mismatch: return "shape mismatch";
    case FormatErrorKind::missing_file: return "missing file";
    case FormatErrorKind::duplicate_id: return "duplicate id";
    case FormatErrorKind::schema: return "schema error";
  }
  return "format error";
}

namespace {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.append(c, n);
  }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void str(const std::string& s) { bytes(s.data(), s.size()); }
  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string data, std::string origin) : buf_(std::move(data)), origin_(std::move(origin)) {}

  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) {
      throw FormatError(FormatErrorKind::truncated, origin_ + " ends after " + std::to_string(buf_.size()) +
                                                        " bytes, needed " + std::to_string(pos_ + n));
    }
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    auto s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return buf_.size() - pos_; }
  const std::string& origin() const { return origin_; }

 private:
  std::string buf_;
  std::string origin_;
  std::size_t pos_ = 0;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrorKind::missing_file, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, const std::string& data) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(FormatErrorKind::io, "cannot write " + tmp.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw FormatError(FormatErrorKind::io, "short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

VolumeHeader parse_volume_header(Reader& r) {
  const auto magic = r.str(4);
  if (magic != "CSUV") throw FormatError(FormatErrorKind::bad_magic, r.origin() + " is not a CSUV volume");
  const auto version = r.u32();
  if (version != kVolumeVersion) {
    throw FormatError(FormatErrorKind::unknown_version, r.origin() + " has version " + std::to_string(version));
  }
  const auto code = r.u8();
  if (code > 1) throw FormatError(FormatErrorKind::unknown_dtype, r.origin() + " has dtype code " + std::to_string(code));
  VolumeHeader h;
  h.dtype = static_cast<VolumeDType>(code);
  for (int i = 0; i < 4; ++i) {
    const auto e = r.u32();
    if (e == 0) throw FormatError(FormatErrorKind::schema, r.origin() + " has a zero extent");
    h.shape.push_back(e);
  }
  return h;
}

std::size_t payload_bytes(const VolumeHeader& h) {
  return static_cast<std::size_t>(numel(h.shape)) * (h.dtype == VolumeDType::float32 ? 4 : 1);
}

}  // namespace

void write_text_file(const fs::path& path, const std::string& text) { write_file_atomic(path, text); }

void write_volume(const fs::path& path, const Tensor<float>& volume, VolumeDType dtype) {
  if (volume.dim() != 4) throw ShapeError("write_volume expects a (C,D,H,W) tensor, got " + to_string(volume.shape()));
  Writer w;
  w.str("CSUV");
  w.u32(kVolumeVersion);
  w.u8(static_cast<std::uint8_t>(dtype));
  for (auto e : volume.shape()) w.u32(static_cast<std::uint32_t>(e));
  for (auto v : volume.span()) {
    if (dtype == VolumeDType::float32) {
      w.f32(v);
    } else {
      if (v < 0 || v > 255 || v != std::floor(v)) {
        throw std::invalid_argument("write_volume: value " + std::to_string(v) + " is not representable as u8");
      }
      w.u8(static_cast<std::uint8_t>(v));
    }
  }
  write_file_atomic(path, w.data());
}

VolumeHeader read_volume_header(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrorKind::missing_file, "cannot open " + path.string());
  std::string head(kVolumeHeaderBytes, '\0');
  in.read(head.data(), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(in.gcount()));
  Reader r(head, path.string());
  auto h = parse_volume_header(r);
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  if (size < kVolumeHeaderBytes + payload_bytes(h)) {
    throw FormatError(FormatErrorKind::truncated, path.string() + " payload is shorter than its header declares");
  }
  return h;
}

Tensor<float> read_volume(const fs::path& path) {
  Reader r(read_file(path), path.string());
  const auto h = parse_volume_header(r);
  r.need(payload_bytes(h));
  std::vector<float> data(static_cast<std::size_t>(numel(h.shape)));
  for (auto& v : data) v = h.dtype == VolumeDType::float32 ? r.f32() : static_cast<float>(r.u8());
  return Tensor<float>(h.shape, std::move(data));
}

Phantom generate_phantom(const PhantomSpec& spec) {
  const auto e = spec.extent;
  if (e < 1) throw std::invalid_argument("phantom extent must be positive");
  if (spec.radius <= 0) throw std::invalid_argument("phantom radius must be positive");
  if (spec.noise_sigma < 0) throw std::invalid_argument("noise_sigma must be non-negative");
  Rng rng(spec.seed);
  Phantom ph;
  const double hi = static_cast<double>(e - 1) - spec.radius;
  if (spec.center) {
    ph.center = *spec.center;
  } else {
    if (hi < spec.radius) throw std::invalid_argument("phantom sphere does not fit inside the volume");
    std::uniform_real_distribution<double> pick(spec.radius, hi);
    for (auto& c : ph.center) c = pick(rng);
  }
  for (auto c : ph.center) {
    if (c - spec.radius < 0 || c + spec.radius > static_cast<double>(e - 1)) {
      throw std::invalid_argument("phantom sphere out of bounds");
    }
  }

  ph.image = Tensor<float>(Shape{1, e, e, e});
  ph.mask = Tensor<float>(Shape{1, e, e, e});
  std::normal_distribution<double> noise(0.0, spec.noise_sigma);
  const double inner = spec.radius - 0.5, outer = spec.radius + 0.5;
  std::int64_t idx = 0;
  for (std::int64_t d = 0; d < e; ++d)
    for (std::int64_t h = 0; h < e; ++h)
      for (std::int64_t w = 0; w < e; ++w, ++idx) {
        const double dd = d - ph.center[0], dh = h - ph.center[1], dw = w - ph.center[2];
        const double dist = std::sqrt(dd * dd + dh * dh + dw * dw);
        double profile = 0;
        if (dist <= inner) {
          profile = 1;
        } else if (dist < outer) {
          profile = 0.5 * (1 + std::cos(std::numbers::pi * (dist - inner)));
        }
        const double n = spec.noise_sigma > 0 ? noise(rng) : 0.0;
        ph.image[idx] = static_cast<float>(n + spec.contrast * profile);
        ph.mask[idx] = dist <= spec.radius ? 1.0f : 0.0f;
      }
  return ph;
}

DatasetManifest scan_directory(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FormatError(FormatErrorKind::missing_file, dir.string() + " is not a directory");
  std::set<std::string> ids;
  const std::string isuf = kImageSuffix;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.size() > isuf.size() && name.compare(name.size() - isuf.size(), isuf.size(), isuf) == 0) {
      ids.insert(name.substr(0, name.size() - isuf.size()));
    }
  }
  DatasetManifest m;
  for (const auto& id : ids) {
    VolumeRecord r;
    r.id = id;
    r.image = id + kImageSuffix;
    r.mask = id + kMaskSuffix;
    if (!fs::exists(dir / r.mask)) throw FormatError(FormatErrorKind::missing_file, "sample " + id + " has no mask");
    m.samples.push_back(std::move(r));
  }
  return m;
}

void write_manifest(const fs::path& path, const DatasetManifest& manifest) {
  nlohmann::json j;
  auto samples = nlohmann::json::array();
  for (const auto& r : manifest.samples) {
    nlohmann::json s{{"id", r.id}, {"image", r.image}, {"mask", r.mask}};
    s["fold"] = r.fold ? nlohmann::json(*r.fold) : nlohmann::json(nullptr);
    if (!r.meta.empty()) s["meta"] = r.meta;
    samples.push_back(std::move(s));
  }
  j["samples"] = samples;
  j["screening"] = manifest.screening;
  write_file_atomic(path, j.dump(2) + "\n");
}

DatasetManifest build_manifest(const fs::path& dir, const std::string& screening) {
  auto m = scan_directory(dir);
  m.screening = screening;
  write_manifest(dir / kManifestName, m);
  return m;
}

DatasetManifest load_manifest(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatErrorKind::schema, path.string() + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("samples") || !j["samples"].is_array()) {
    throw FormatError(FormatErrorKind::schema, path.string() + " lacks a samples array");
  }
  const auto dir = path.parent_path();
  DatasetManifest m;
  m.screening = j.value("screening", std::string());
  std::set<std::string> seen;
  for (const auto& s : j["samples"]) {
    VolumeRecord r;
    try {
      r.id = s.at("id").get<std::string>();
      r.image = s.at("image").get<std::string>();
      r.mask = s.at("mask").get<std::string>();
      if (s.contains("fold") && !s["fold"].is_null()) r.fold = s["fold"].get<int>();
      if (s.contains("meta")) r.meta = s["meta"];
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(FormatErrorKind::schema, path.string() + ": " + e.what());
    }
    if (!seen.insert(r.id).second) throw FormatError(FormatErrorKind::duplicate_id, "sample id " + r.id + " repeats");
    VolumeHeader hi, hm;
    try {
      hi = read_volume_header(dir / r.image);
      hm = read_volume_header(dir / r.mask);
    } catch (const FormatError& e) {
      throw FormatError(e.kind() == FormatErrorKind::missing_file ? FormatErrorKind::missing_file : e.kind(),
                        "sample " + r.id + ": " + e.what());
    }
    if (hi.shape != hm.shape) {
      throw FormatError(FormatErrorKind::shape_mismatch, "sample " + r.id + " image and mask extents differ");
    }
    r.extent = hi.shape[1];
    m.samples.push_back(std::move(r));
  }
  return m;
}

std::vector<Sample> load_samples(const fs::path& manifest_path) {
  const auto m = load_manifest(manifest_path);
  const auto dir = manifest_path.parent_path();
  std::vector<Sample> out;
  for (const auto& r : m.samples) {
    out.push_back({r.id, read_volume(dir / r.image), read_volume(dir / r.mask)});
  }
  return out;
}

template <typename T>
void save_checkpoint(const CSUNet3D<T>& net, const fs::path& path) {
  Writer w;
  w.str("CSUC");
  w.u32(kCheckpointVersion);
  const std::string cfg = nlohmann::json(net.config()).dump();
  w.u32(static_cast<std::uint32_t>(cfg.size()));
  w.str(cfg);
  const auto& reg = net.parameters();
  w.u32(static_cast<std::uint32_t>(reg.size()));
  for (const auto& p : reg) {
    w.u32(static_cast<std::uint32_t>(p.name.size()));
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.value.dim()));
    for (auto e : p.value.shape()) w.u32(static_cast<std::uint32_t>(e));
    for (auto v : p.value.span()) w.f32(static_cast<float>(v));
  }
  write_file_atomic(path, w.data());
}

template <typename T>
std::uint64_t checkpoint_size(const CSUNet3D<T>& net) {
  std::uint64_t n = 4 + 4 + 4 + nlohmann::json(net.config()).dump().size() + 4;
  for (const auto& p : net.parameters()) {
    n += 4 + p.name.size() + 4 + 4 * static_cast<std::uint64_t>(p.value.dim()) +
         4 * static_cast<std::uint64_t>(p.value.numel());
  }
  return n;
}

template <typename T>
CSUNet3D<T> load_checkpoint(const fs::path& path, const std::optional<NetworkConfig>& expected) {
  Reader r(read_file(path), path.string());
  if (r.str(4) != "CSUC") throw FormatError(FormatErrorKind::bad_magic, path.string() + " is not a CSUC checkpoint");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError(FormatErrorKind::unknown_version, path.string() + " has version " + std::to_string(version));
  }
  const auto len = r.u32();
  NetworkConfig cfg;
  try {
    cfg = nlohmann::json::parse(r.str(len)).get<NetworkConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(FormatErrorKind::schema, path.string() + ": config blob: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(FormatErrorKind::schema, path.string() + ": config blob: " + e.what());
  }
  if (expected && !(*expected == cfg)) {
    throw FormatError(FormatErrorKind::config_mismatch,
                      "checkpoint config " + nlohmann::json(cfg).dump() + " differs from requested " +
                          nlohmann::json(*expected).dump());
  }
  CSUNet3D<T> net(cfg);
  auto& reg = net.parameters();
  const auto count = r.u32();
  if (count != reg.size()) {
    throw FormatError(FormatErrorKind::shape_mismatch, "checkpoint has " + std::to_string(count) +
                                                           " records, network has " + std::to_string(reg.size()));
  }
  for (std::size_t i = 0; i < count; ++i) {
    const auto name = r.str(r.u32());
    if (!reg.contains(name)) throw FormatError(FormatErrorKind::shape_mismatch, "unknown parameter " + name);
    auto& p = reg.get(name);
    const auto ndim = r.u32();
    Shape s;
    for (std::uint32_t k = 0; k < ndim; ++k) s.push_back(r.u32());
    if (s != p.value.shape()) {
      throw FormatError(FormatErrorKind::shape_mismatch,
                        "parameter " + name + " stored as " + to_string(s) + ", expected " + to_string(p.value.shape()));
    }
    r.need(4 * static_cast<std::size_t>(p.value.numel()));
    for (auto& v : p.value.span()) v = static_cast<T>(r.f32());
  }
  if (r.remaining() != 0) throw FormatError(FormatErrorKind::schema, path.string() + " has trailing bytes");
  return net;
}

template void save_checkpoint(const CSUNet3D<float>&, const fs::path&);
template void save_checkpoint(const CSUNet3D<double>&, const fs::path&);
template std::uint64_t checkpoint_size(const CSUNet3D<float>&);
template std::uint64_t checkpoint_size(const CSUNet3D<double>&);
template CSUNet3D<float> load_checkpoint(const fs::path&, const std::optional<NetworkConfig>&);
template CSUNet3D<double> load_checkpoint(const fs::path&, const std::optional<NetworkConfig>&);

}  // namespace csunet
