#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "csunet/network.hpp"
#include "csunet/training.hpp"
#include "json.hpp"

namespace csunet {

namespace fs = std::filesystem;

enum class FormatErrorKind {
  io,
  bad_magic,
  truncated,
  unknown_version,
  unknown_dtype,
  config_mismatch,
  shape_mismatch,
  missing_file,
  duplicate_id,
  schema,
};

const char* describe(FormatErrorKind k);

/// Malformed or inconsistent file content; `kind` identifies the failure class.
class FormatError : public std::runtime_error {
 public:
  FormatError(FormatErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(describe(kind)) + ": " + what), kind_(kind) {}
  FormatErrorKind kind() const noexcept { return kind_; }

 private:
  FormatErrorKind kind_;
};

// ---------------------------------------------------------------------------
// CSUV volumes
//
//   "CSUV" | u32 version = 1 | u8 dtype | u32 C, D, H, W | payload
//
// All integers little-endian; payload row-major, f32 (dtype 0) or u8 (dtype 1).

enum class VolumeDType : std::uint8_t { float32 = 0, uint8 = 1 };

inline constexpr std::uint32_t kVolumeVersion = 1;
inline constexpr std::size_t kVolumeHeaderBytes = 4 + 4 + 1 + 4 * 4;

struct VolumeHeader {
  VolumeDType dtype = VolumeDType::float32;
  Shape shape;  // (C, D, H, W)
};

/// Writes via a temporary file and rename. uint8 volumes must hold integral
/// values in [0, 255].
void write_volume(const fs::path& path, const Tensor<float>& volume, VolumeDType dtype = VolumeDType::float32);
Tensor<float> read_volume(const fs::path& path);
VolumeHeader read_volume_header(const fs::path& path);

// ---------------------------------------------------------------------------
// Synthetic nodule phantoms

inline constexpr double kSolidContrast = 0.8;
inline constexpr double kGroundGlassContrast = 0.25;

struct PhantomSpec {
  std::int64_t extent = 32;
  double radius = 4.0;
  std::optional<std::array<double, 3>> center;  // voxel coordinates (d, h, w); random when unset
  double contrast = kSolidContrast;
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;
};

struct Phantom {
  Tensor<float> image;  // (1, E, E, E)
  Tensor<float> mask;   // (1, E, E, E), 1 where distance to center <= radius
  std::array<double, 3> center{};
};

/// Gaussian background noise plus `contrast` inside the sphere, blended over a
/// one-voxel cosine rim centred on the radius.
Phantom generate_phantom(const PhantomSpec& spec);

// ---------------------------------------------------------------------------
// Dataset manifests ("manifest.json")

struct VolumeRecord {
  std::string id;
  std::string image;  // path relative to the manifest directory
  std::string mask;
  std::optional<int> fold;
  nlohmann::json meta = nlohmann::json::object();
  std::int64_t extent = 0;  // filled by load_manifest

  friend bool operator==(const VolumeRecord& a, const VolumeRecord& b) {
    return a.id == b.id && a.image == b.image && a.mask == b.mask && a.fold == b.fold && a.meta == b.meta;
  }
};

struct DatasetManifest {
  std::vector<VolumeRecord> samples;
  std::string screening;
};

inline constexpr const char* kManifestName = "manifest.json";
inline constexpr const char* kImageSuffix = ".image.csuv";
inline constexpr const char* kMaskSuffix = ".mask.csuv";

/// Pair every "<id>.image.csuv" with "<id>.mask.csuv" in `dir` (sorted by id).
DatasetManifest scan_directory(const fs::path& dir);
void write_manifest(const fs::path& path, const DatasetManifest& manifest);
/// Scan `dir` and write dir/manifest.json.
DatasetManifest build_manifest(const fs::path& dir, const std::string& screening = "");
/// Parse and validate: unique ids, every referenced file present with a
/// valid header, image and mask extents equal.
DatasetManifest load_manifest(const fs::path& path);
std::vector<Sample> load_samples(const fs::path& manifest_path);

// ---------------------------------------------------------------------------
// CSUC checkpoints
//
//   "CSUC" | u32 version = 1 | u32 len | NetworkConfig JSON (len bytes)
//   | u32 record count | records in registry order
//   record: u32 name len | name | u32 ndim | u32 dims[ndim] | f32 payload

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const CSUNet3D<T>& net, const fs::path& path);

/// Rebuilds the network from the stored configuration. When `expected` is
/// given, a differing stored configuration is rejected.
template <typename T>
CSUNet3D<T> load_checkpoint(const fs::path& path, const std::optional<NetworkConfig>& expected = std::nullopt);

/// Byte size save_checkpoint produces for this network.
template <typename T>
std::uint64_t checkpoint_size(const CSUNet3D<T>& net);

/// Write `text` to `path` atomically.
void write_text_file(const fs::path& path, const std::string& text);

}  // namespace csunet
