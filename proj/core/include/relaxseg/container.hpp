#pragma once

// On-disk container for one sample ("UMRV"):
//
//   offset  size  field
//   0       4     magic "UMRV"
//   4       2     version (uint16, currently 1)
//   6       2     m_total (uint16)
//   8       2     n_regions (uint16)
//   10      4     H (uint32)
//   14      4     W (uint32)
//   18      4     T (uint32)
//   22      1     dtype code (0 = float32)
//   23      ...   M modality volumes, then N label channels, row-major
//                 [H][W][T], little-endian float32
//
// All header integers are little-endian. The file must be exactly
// header + (M + N) * H * W * T * 4 bytes.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "relaxseg/data.hpp"
#include "relaxseg/synth.hpp"

namespace relaxseg {

inline constexpr char kContainerMagic[4] = {'U', 'M', 'R', 'V'};
inline constexpr std::uint16_t kContainerVersion = 1;
inline constexpr std::size_t kContainerHeaderBytes = 23;

struct VolumeContainerHeader {
  std::uint16_t version = kContainerVersion;
  std::uint16_t m_total = 0;
  std::uint16_t n_regions = 0;
  std::uint32_t h = 0, w = 0, t = 0;
  std::uint8_t dtype = 0;

  std::uint64_t payload_bytes() const;
};

std::vector<std::uint8_t> encode_sample(const MultiModalSample& sample);
// `sample_id` is not stored in the container; callers pass it (usually the file stem).
MultiModalSample decode_sample(const std::vector<std::uint8_t>& bytes, const std::string& sample_id);

void write_sample(const MultiModalSample& sample, const std::filesystem::path& path);
MultiModalSample read_sample(const std::filesystem::path& path);

struct ManifestEntry {
  std::string id;
  std::string path;  // relative to the manifest's directory
  VolumeDims dims;
  bool operator==(const ManifestEntry&) const = default;
};

inline constexpr const char* kManifestName = "manifest.jsonl";

void write_manifest(const std::filesystem::path& dir, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir);

// In-memory collection of samples.
struct Dataset {
  std::vector<MultiModalSample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  int m_total() const { return samples.empty() ? 0 : samples.front().m_total(); }
  int n_regions() const { return samples.empty() ? 0 : samples.front().n_regions(); }
};

Dataset load_dataset(const std::filesystem::path& dir);
Dataset synthesize_dataset(const SynthConfig& config, int first_index = 0, int count = -1);

// Writes containers plus manifest; returns the manifest entries.
std::vector<ManifestEntry> write_dataset(const Dataset& data, const std::filesystem::path& dir);

}  // namespace relaxseg
