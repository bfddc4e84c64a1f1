#include "relaxseg/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

#include "relaxseg/errors.hpp"

namespace relaxseg {

namespace fs = std::filesystem;

namespace {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get(const std::vector<std::uint8_t>& in, std::size_t offset) {
  T v;
  std::memcpy(&v, in.data() + offset, sizeof(T));
  return v;
}

void put_tensor(std::vector<std::uint8_t>& out, const torch::Tensor& t) {
  auto c = t.to(torch::kFloat32).contiguous();
  const auto* p = reinterpret_cast<const std::uint8_t*>(c.data_ptr<float>());
  out.insert(out.end(), p, p + c.numel() * sizeof(float));
}

}  // namespace

std::uint64_t VolumeContainerHeader::payload_bytes() const {
  return static_cast<std::uint64_t>(m_total + n_regions) * h * w * t * sizeof(float);
}

std::vector<std::uint8_t> encode_sample(const MultiModalSample& sample) {
  sample.validate();
  const auto d = sample.dims();
  std::vector<std::uint8_t> out;
  out.reserve(kContainerHeaderBytes + static_cast<std::size_t>((sample.m_total() + sample.n_regions()) * d.voxels() * 4));
  out.insert(out.end(), kContainerMagic, kContainerMagic + 4);
  put<std::uint16_t>(out, kContainerVersion);
  put<std::uint16_t>(out, static_cast<std::uint16_t>(sample.m_total()));
  put<std::uint16_t>(out, static_cast<std::uint16_t>(sample.n_regions()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(d.h));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(d.w));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(d.t));
  put<std::uint8_t>(out, 0);
  put_tensor(out, sample.stacked());
  put_tensor(out, sample.label);
  return out;
}

MultiModalSample decode_sample(const std::vector<std::uint8_t>& bytes, const std::string& sample_id) {
  if (bytes.size() < kContainerHeaderBytes)
    throw FormatError("container truncated: expected at least " + std::to_string(kContainerHeaderBytes) +
                          " header bytes, got " + std::to_string(bytes.size()),
                      bytes.size());
  if (std::memcmp(bytes.data(), kContainerMagic, 4) != 0) throw FormatError("bad container magic", 0);

  VolumeContainerHeader hdr;
  hdr.version = get<std::uint16_t>(bytes, 4);
  hdr.m_total = get<std::uint16_t>(bytes, 6);
  hdr.n_regions = get<std::uint16_t>(bytes, 8);
  hdr.h = get<std::uint32_t>(bytes, 10);
  hdr.w = get<std::uint32_t>(bytes, 14);
  hdr.t = get<std::uint32_t>(bytes, 18);
  hdr.dtype = get<std::uint8_t>(bytes, 22);

  if (hdr.version != kContainerVersion)
    throw FormatError("unsupported container version " + std::to_string(hdr.version), 4);
  if (hdr.dtype != 0) throw UnsupportedDtype("unsupported dtype code " + std::to_string(hdr.dtype), 22);
  if (hdr.m_total == 0 || hdr.m_total > kMaxModalities) throw FormatError("invalid m_total in header", 6);
  if (hdr.n_regions == 0) throw FormatError("invalid n_regions in header", 8);

  const std::uint64_t expected = kContainerHeaderBytes + hdr.payload_bytes();
  if (bytes.size() != expected)
    throw FormatError("container size mismatch: expected " + std::to_string(expected) + " bytes, got " +
                          std::to_string(bytes.size()),
                      std::min<std::uint64_t>(bytes.size(), expected));

  const std::int64_t H = hdr.h, W = hdr.w, T = hdr.t;
  const std::size_t vol_bytes = static_cast<std::size_t>(H * W * T) * sizeof(float);
  std::size_t offset = kContainerHeaderBytes;
  auto read_block = [&](std::int64_t channels) {
    auto t = torch::empty({channels, H, W, T}, torch::kFloat32);
    std::memcpy(t.data_ptr<float>(), bytes.data() + offset, vol_bytes * static_cast<std::size_t>(channels));
    offset += vol_bytes * static_cast<std::size_t>(channels);
    return t;
  };

  MultiModalSample s;
  s.sample_id = sample_id;
  auto mods = read_block(hdr.m_total);
  for (int m = 0; m < hdr.m_total; ++m) s.modalities.push_back({mods[m].unsqueeze(0).clone(), m});
  s.label = read_block(hdr.n_regions);
  return s;
}

void write_sample(const MultiModalSample& sample, const fs::path& path) {
  const auto bytes = encode_sample(sample);
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

MultiModalSample read_sample(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open container '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_sample(bytes, path.stem().string());
}

void write_manifest(const fs::path& dir, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(dir / kManifestName, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest in '" + dir.string() + "'");
  for (const auto& e : entries) {
    nlohmann::ordered_json j;
    j["id"] = e.id;
    j["path"] = e.path;
    j["dims"] = {e.dims.h, e.dims.w, e.dims.t};
    out << j.dump() << '\n';
  }
}

std::vector<ManifestEntry> read_manifest(const fs::path& dir) {
  std::ifstream in(dir / kManifestName);
  if (!in) throw IoError("no manifest in '" + dir.string() + "'");
  std::vector<ManifestEntry> entries;
  std::string line;
  std::uint64_t offset = 0;
  while (std::getline(in, line)) {
    if (!line.empty()) {
      try {
        const auto j = nlohmann::json::parse(line);
        const auto& d = j.at("dims");
        entries.push_back({j.at("id").get<std::string>(), j.at("path").get<std::string>(),
                           {d.at(0).get<std::int64_t>(), d.at(1).get<std::int64_t>(), d.at(2).get<std::int64_t>()}});
      } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad manifest record: ") + e.what(), offset);
      }
    }
    offset += line.size() + 1;
  }
  return entries;
}

Dataset load_dataset(const fs::path& dir) {
  Dataset data;
  for (const auto& e : read_manifest(dir)) {
    auto s = read_sample(dir / e.path);
    if (s.dims() != e.dims) throw FormatError("manifest dims disagree with container '" + e.path + "'", 10);
    s.sample_id = e.id;
    data.samples.push_back(std::move(s));
  }
  return data;
}

Dataset synthesize_dataset(const SynthConfig& config, int first_index, int count) {
  if (count < 0) count = config.n_samples - first_index;
  Dataset data;
  data.samples.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) data.samples.push_back(generate_sample(config, first_index + i));
  return data;
}

std::vector<ManifestEntry> write_dataset(const Dataset& data, const fs::path& dir) {
  fs::create_directories(dir);
  std::vector<ManifestEntry> entries;
  for (const auto& s : data.samples) {
    const std::string rel = s.sample_id + ".umrv";
    write_sample(s, dir / rel);
    entries.push_back({s.sample_id, rel, s.dims()});
  }
  write_manifest(dir, entries);
  return entries;
}

}  // namespace relaxseg
