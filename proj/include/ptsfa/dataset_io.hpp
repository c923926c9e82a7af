#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "ptsfa/datagen.hpp"
#include "ptsfa/errors.hpp"

namespace ptsfa {

// A uniform-size labeled split.
struct Dataset {
  std::vector<PointCloudSample> samples;
  int num_classes = 0;
  int points_per_sample = 0;
};

// PCDS file layout (little-endian):
//   magic "PCDS", u32 version=1, u32 num_samples, u32 m, u32 num_classes,
//   then per sample: u16 label, m x 3 float32 coordinates.
namespace detail {

inline constexpr char kPcdsMagic[4] = {'P', 'C', 'D', 'S'};
inline constexpr std::uint32_t kPcdsVersion = 1;

template <class T>
void write_le(std::ostream& out, T value) {
  // The build targets little-endian hosts; byte order is the raw layout.
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T read_le(std::istream& in, std::uint64_t& offset, const char* what) {
  T value;
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in)
    throw FormatError(std::string("dataset: truncated reading ") + what +
                      " at byte offset " + std::to_string(offset));
  offset += sizeof(T);
  return value;
}

}  // namespace detail

inline void write_dataset(const Dataset& dataset, const std::string& path) {
  if (dataset.samples.empty())
    throw PreconditionError("write_dataset: empty sample list");
  const int m = dataset.points_per_sample;
  if (m < kMinPointsPerSample)
    throw PreconditionError("write_dataset: points per sample must be >= " +
                            std::to_string(kMinPointsPerSample));
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const PointCloudSample& s = dataset.samples[i];
    if (s.points.rows != m || s.points.cols != 3)
      throw PreconditionError("write_dataset: sample " + std::to_string(i) +
                              " is not " + std::to_string(m) + "x3");
    if (s.label < 0 || s.label >= dataset.num_classes)
      throw PreconditionError("write_dataset: sample " + std::to_string(i) +
                              " label out of range");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_dataset: cannot open " + path);
  out.write(detail::kPcdsMagic, 4);
  detail::write_le(out, detail::kPcdsVersion);
  detail::write_le(out, static_cast<std::uint32_t>(dataset.samples.size()));
  detail::write_le(out, static_cast<std::uint32_t>(m));
  detail::write_le(out, static_cast<std::uint32_t>(dataset.num_classes));
  for (const PointCloudSample& s : dataset.samples) {
    detail::write_le(out, static_cast<std::uint16_t>(s.label));
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < 3; ++j)
        detail::write_le(out, static_cast<float>(s.points(i, j)));
    }
  }
  if (!out) throw IoError("write_dataset: write failed for " + path);
}

inline Dataset read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_dataset: cannot open " + path);
  std::uint64_t offset = 0;

  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, detail::kPcdsMagic, 4) != 0)
    throw FormatError("dataset: bad magic at byte offset 0");
  offset = 4;

  const auto version = detail::read_le<std::uint32_t>(in, offset, "version");
  if (version != detail::kPcdsVersion)
    throw FormatError("dataset: unsupported version " + std::to_string(version) +
                      " at byte offset 4");
  const auto num_samples =
      detail::read_le<std::uint32_t>(in, offset, "num_samples");
  if (num_samples == 0)
    throw FormatError("dataset: zero samples at byte offset 8");
  const auto m = detail::read_le<std::uint32_t>(in, offset, "m");
  const auto num_classes =
      detail::read_le<std::uint32_t>(in, offset, "num_classes");
  if (m < static_cast<std::uint32_t>(kMinPointsPerSample) || m > (1u << 24))
    throw FormatError("dataset: implausible m " + std::to_string(m) +
                      " at byte offset 12");
  if (num_classes == 0 || num_classes > 65536)
    throw FormatError("dataset: implausible class count at byte offset 16");

  Dataset dataset;
  dataset.num_classes = static_cast<int>(num_classes);
  dataset.points_per_sample = static_cast<int>(m);
  dataset.samples.reserve(num_samples);
  for (std::uint32_t s = 0; s < num_samples; ++s) {
    const std::uint64_t label_offset = offset;
    const auto label = detail::read_le<std::uint16_t>(in, offset, "label");
    if (label >= num_classes)
      throw FormatError("dataset: label " + std::to_string(label) +
                        " >= num_classes at byte offset " +
                        std::to_string(label_offset));
    PointCloudSample sample;
    sample.label = static_cast<int>(label);
    sample.points = Matrix(static_cast<int>(m), 3);
    for (std::uint32_t i = 0; i < m; ++i) {
      for (int j = 0; j < 3; ++j) {
        const float v = detail::read_le<float>(in, offset, "coordinate");
        sample.points(static_cast<int>(i), j) = static_cast<double>(v);
      }
    }
    dataset.samples.push_back(std::move(sample));
  }
  return dataset;
}

}  // namespace ptsfa
