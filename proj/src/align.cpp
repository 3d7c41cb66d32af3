// Copyright 2026 The kbprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "kbprobe/align.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include "json_util.hpp"
#include "kbprobe/error.hpp"
#include "kbprobe/numerics.hpp"

namespace kbprobe {

namespace {

constexpr char kMapMagic[4] = {'X', 'K', 'B', 'A'};
constexpr std::uint16_t kMapVersion = 1;
constexpr std::size_t kMapHeaderBytes = 11;

void require_same_d(const MatrixD& a, const MatrixD& b, const char* what) {
  if (a.cols() != b.cols())
    fail(ErrorCode::InvalidArgument, std::string(what) + ": dimension mismatch (" +
                                         std::to_string(a.cols()) + " vs " + std::to_string(b.cols()) + ")");
}

void require_map_d(const AlignmentMap& map, const MatrixD& x, const char* what) {
  if (static_cast<std::size_t>(x.cols()) != map.d())
    fail(ErrorCode::InvalidArgument, std::string(what) + ": input has " + std::to_string(x.cols()) +
                                         " columns, map expects " + std::to_string(map.d()));
}

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".json");
}

}  // namespace

const char* to_string(AlignKind kind) {
  return kind == AlignKind::MeanShift ? "mean_shift" : "projection";
}

AlignKind parse_align_kind(const std::string& name) {
  if (name == "mean_shift") return AlignKind::MeanShift;
  if (name == "projection") return AlignKind::Projection;
  fail(ErrorCode::InvalidArgument, "unknown alignment kind '" + name + "'");
}

std::size_t AlignmentMap::d() const {
  return static_cast<std::size_t>(kind == AlignKind::MeanShift ? delta_mu.size() : w.rows());
}

void AlignmentMap::validate() const {
  if (kind == AlignKind::MeanShift) {
    if (delta_mu.size() == 0 || w.size() != 0)
      fail(ErrorCode::Validation, "mean_shift map must carry delta_mu only");
  } else {
    if (w.size() == 0 || delta_mu.size() != 0 || w.rows() != w.cols())
      fail(ErrorCode::Validation, "projection map must carry a square W only");
  }
}

AlignmentMap fit_mean_shift(const MatrixD& x_in, const MatrixD& x_ood) {
  if (x_in.rows() == 0 || x_ood.rows() == 0) fail(ErrorCode::InvalidArgument, "fit_mean_shift: empty input");
  require_same_d(x_in, x_ood, "fit_mean_shift");
  require_finite(x_in, "fit_mean_shift in-distribution input");
  require_finite(x_ood, "fit_mean_shift OOD input");
  AlignmentMap map;
  map.kind = AlignKind::MeanShift;
  map.delta_mu = (x_in.colwise().mean() - x_ood.colwise().mean()).transpose();
  map.fit_n = static_cast<std::size_t>(x_ood.rows());
  return map;
}

ProjectionFitter::ProjectionFitter(const MatrixD& x_ood, std::optional<double> rcond)
    : pinv_(pseudo_inverse(x_ood, rcond)), n_(x_ood.rows()) {
  if (x_ood.rows() == 0) fail(ErrorCode::InvalidArgument, "fit_projection: empty input");
}

AlignmentMap ProjectionFitter::fit(const MatrixD& x_in) const {
  if (x_in.rows() != n_)
    fail(ErrorCode::Validation, "fit_projection: inputs are not parallel (" + std::to_string(n_) +
                                    " OOD rows vs " + std::to_string(x_in.rows()) + " ID rows)");
  if (x_in.cols() != pinv_.rows())
    fail(ErrorCode::InvalidArgument, "fit_projection: dimension mismatch (" + std::to_string(pinv_.rows()) +
                                         " vs " + std::to_string(x_in.cols()) + ")");
  require_finite(x_in, "fit_projection in-distribution input");
  AlignmentMap map;
  map.kind = AlignKind::Projection;
  map.w = pinv_ * x_in;
  map.fit_n = static_cast<std::size_t>(n_);
  return map;
}

AlignmentMap fit_projection(const MatrixD& x_ood, const MatrixD& x_in, std::optional<double> rcond) {
  if (x_ood.rows() != x_in.rows())
    fail(ErrorCode::Validation, "fit_projection: inputs are not parallel (" + std::to_string(x_ood.rows()) +
                                    " OOD rows vs " + std::to_string(x_in.rows()) + " ID rows)");
  require_same_d(x_ood, x_in, "fit_projection");
  return ProjectionFitter(x_ood, rcond).fit(x_in);
}

MatrixD apply_mean_shift(const AlignmentMap& map, const MatrixD& x) {
  if (map.kind != AlignKind::MeanShift) fail(ErrorCode::InvalidArgument, "apply_mean_shift: map is a projection");
  require_map_d(map, x, "apply_mean_shift");
  return x.rowwise() + map.delta_mu.transpose();
}

MatrixD apply_projection(const AlignmentMap& map, const MatrixD& x) {
  if (map.kind != AlignKind::Projection) fail(ErrorCode::InvalidArgument, "apply_projection: map is a mean shift");
  require_map_d(map, x, "apply_projection");
  return x * map.w;
}

MatrixD apply_map(const AlignmentMap& map, const MatrixD& x) {
  return map.kind == AlignKind::MeanShift ? apply_mean_shift(map, x) : apply_projection(map, x);
}

AlignmentMap quantized(const AlignmentMap& map) {
  AlignmentMap out = map;
  out.delta_mu = map.delta_mu.cast<float>().cast<double>();
  out.w = map.w.cast<float>().cast<double>();
  return out;
}

void save_map(const AlignmentMap& map, const std::filesystem::path& path) {
  map.validate();
  const std::size_t d = map.d();
  if (d > UINT32_MAX) fail(ErrorCode::Validation, "map dimension exceeds u32");

  std::vector<unsigned char> bytes;
  auto put = [&bytes](std::uint64_t v, int width) {
    for (int i = 0; i < width; ++i) bytes.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xffu));
  };
  bytes.insert(bytes.end(), std::begin(kMapMagic), std::end(kMapMagic));
  put(kMapVersion, 2);
  put(static_cast<std::uint8_t>(map.kind), 1);
  put(d, 4);
  if (map.kind == AlignKind::MeanShift) {
    for (Eigen::Index i = 0; i < map.delta_mu.size(); ++i)
      put(std::bit_cast<std::uint32_t>(static_cast<float>(map.delta_mu(i))), 4);
  } else {
    for (Eigen::Index r = 0; r < map.w.rows(); ++r)
      for (Eigen::Index c = 0; c < map.w.cols(); ++c)
        put(std::bit_cast<std::uint32_t>(static_cast<float>(map.w(r, c))), 4);
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::Io, "write failed: " + path.string());

  detail::Json side;
  side["kind"] = to_string(map.kind);
  side["source_language"] = map.source_language;
  side["target_language"] = map.target_language;
  side["layer"] = map.layer;
  side["fit_n"] = map.fit_n;
  side["d"] = d;
  side["schema_version"] = detail::kSchemaVersion;
  detail::write_json_file(sidecar_path(path), side);
}

AlignmentMap load_map(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string name = path.string();
  if (bytes.size() < kMapHeaderBytes) fail(ErrorCode::Format, name + ": file too short for header");
  if (std::memcmp(bytes.data(), kMapMagic, 4) != 0) fail(ErrorCode::Format, name + ": bad magic");
  auto get = [&bytes](std::size_t offset, int width) {
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes[offset + i]) << (8 * i);
    return v;
  };
  const auto version = get(4, 2);
  if (version != kMapVersion) fail(ErrorCode::Format, name + ": unsupported version " + std::to_string(version));
  const auto kind_byte = get(6, 1);
  if (kind_byte > 1) fail(ErrorCode::Format, name + ": unknown map kind " + std::to_string(kind_byte));
  const std::uint64_t d = get(7, 4);
  if (d == 0) fail(ErrorCode::Format, name + ": zero dimension");
  const auto kind = static_cast<AlignKind>(kind_byte);
  const std::uint64_t count = kind == AlignKind::MeanShift ? d : d * d;
  if (bytes.size() != kMapHeaderBytes + 4 * count)
    fail(ErrorCode::Format, name + ": size mismatch: expected " + std::to_string(kMapHeaderBytes + 4 * count) +
                                " bytes, found " + std::to_string(bytes.size()));

  AlignmentMap map;
  map.kind = kind;
  auto value = [&](std::uint64_t i) {
    return static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(get(kMapHeaderBytes + 4 * i, 4))));
  };
  const auto dim = static_cast<Eigen::Index>(d);
  if (kind == AlignKind::MeanShift) {
    map.delta_mu.resize(dim);
    for (Eigen::Index i = 0; i < dim; ++i) map.delta_mu(i) = value(static_cast<std::uint64_t>(i));
  } else {
    map.w.resize(dim, dim);
    for (Eigen::Index r = 0; r < dim; ++r)
      for (Eigen::Index c = 0; c < dim; ++c) map.w(r, c) = value(static_cast<std::uint64_t>(r * dim + c));
  }

  const auto side_path = sidecar_path(path);
  if (std::filesystem::exists(side_path)) {
    const auto side = detail::read_json_file(side_path);
    detail::with_format_errors(side_path.string(), [&] {
      map.source_language = side.value("source_language", std::string{});
      map.target_language = side.value("target_language", std::string{});
      map.layer = side.value("layer", 0);
      map.fit_n = side.value("fit_n", std::size_t{0});
    });
  }
  return map;
}

}  // namespace kbprobe
