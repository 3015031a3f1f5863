#pragma once

// Per-dimension whitening and full-rank PCA-whitening of descriptor corpora.
//
// Plain:  out_d = (x_d - mean_d) * inv_std_d
// PCA:    out   = diag(inv_singular) * R * (x - mean), rows of R are the
//                 covariance eigenvectors sorted by descending eigenvalue.
//
// PWM1 file layout (little-endian): "PWM1", u32 version, u32 D, u32 flags
// (bit0 pca, bit1 l2-prenormalize), u64 fit_count, f64 epsilon, f64 mean[D],
// f64 inv_std[D], then when pca: f64 R[D*D] row-major, f64 inv_singular[D].

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "poolrank/binary_io.hpp"
#include "poolrank/error.hpp"
#include "poolrank/pooling.hpp"

namespace poolrank {

struct PcaTransform {
  std::vector<double> rotation;  // D x D, row-major, rows are principal axes
  std::vector<double> inv_singular;

  bool operator==(const PcaTransform&) const = default;
};

struct WhiteningOptions {
  bool use_pca = true;
  double epsilon = 1e-6;
  bool prenormalize = false;  // l2-normalize each descriptor before fit and apply
};

struct WhiteningModel {
  std::size_t dim = 0;
  std::vector<double> mean;
  std::vector<double> inv_std;
  std::optional<PcaTransform> pca;
  double epsilon = 1e-6;
  std::uint64_t fit_count = 0;
  bool prenormalize = false;

  bool operator==(const WhiteningModel&) const = default;

  /// Eigenvalues recovered from inv_singular (descending). Empty in plain mode.
  std::vector<double> eigenvalues() const {
    std::vector<double> out;
    if (!pca) return out;
    for (double s : pca->inv_singular) out.push_back(1.0 / (s * s) - epsilon);
    return out;
  }

  std::uint64_t fingerprint() const;
  std::string identity() const;
};

namespace detail {

inline std::vector<double> prepared(std::span<const float> x, bool prenormalize) {
  std::vector<double> v(x.begin(), x.end());
  if (prenormalize) {
    double n = 0.0;
    for (double a : v) n += a * a;
    n = std::sqrt(n);
    if (n > 0.0) {
      for (double& a : v) a /= n;
    }
  }
  return v;
}

}  // namespace detail

/// Fits the whitener on a reference corpus (every row is one corpus point).
inline WhiteningModel fit_whitener(std::span<const Descriptor> corpus, const WhiteningOptions& options = {}) {
  if (corpus.size() < 2)
    throw Error(ErrorCode::insufficient_data, "whitening needs at least 2 descriptors, got " +
                                                  std::to_string(corpus.size()));
  if (!(options.epsilon > 0.0) || !std::isfinite(options.epsilon))
    throw Error(ErrorCode::invalid_argument, "epsilon must be positive");
  const std::size_t dim = corpus.front().dim();
  if (dim == 0) throw Error(ErrorCode::invalid_shape, "empty descriptors");
  const std::size_t n = corpus.size();

  Eigen::MatrixXd x(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    if (corpus[i].dim() != dim)
      throw Error(ErrorCode::dimension_mismatch, corpus[i].image_id + " has dim " +
                                                     std::to_string(corpus[i].dim()) + ", expected " +
                                                     std::to_string(dim));
    auto row = detail::prepared(corpus[i].values, options.prenormalize);
    for (std::size_t d = 0; d < dim; ++d) x(i, d) = row[d];
  }

  WhiteningModel m;
  m.dim = dim;
  m.epsilon = options.epsilon;
  m.fit_count = n;
  m.prenormalize = options.prenormalize;
  Eigen::VectorXd mean = x.colwise().mean();
  x.rowwise() -= mean.transpose();
  m.mean.assign(mean.data(), mean.data() + dim);
  m.inv_std.resize(dim);
  for (std::size_t d = 0; d < dim; ++d) {
    double sigma = std::sqrt(x.col(d).squaredNorm() / static_cast<double>(n));
    m.inv_std[d] = 1.0 / std::max(sigma, options.epsilon);
  }

  if (options.use_pca) {
    Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n);
    if (!cov.allFinite()) throw Error(ErrorCode::numeric_failure, "non-finite covariance");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success)
      throw Error(ErrorCode::numeric_failure, "symmetric eigendecomposition did not converge");
    const auto& values = solver.eigenvalues();  // ascending
    const auto& vectors = solver.eigenvectors();
    PcaTransform pca;
    pca.rotation.resize(dim * dim);
    pca.inv_singular.resize(dim);
    for (std::size_t r = 0; r < dim; ++r) {
      auto col = static_cast<Eigen::Index>(dim - 1 - r);
      Eigen::VectorXd axis = vectors.col(col);
      Eigen::Index pivot = 0;
      for (Eigen::Index j = 1; j < axis.size(); ++j) {
        if (std::abs(axis(j)) > std::abs(axis(pivot))) pivot = j;
      }
      if (axis(pivot) < 0.0) axis = -axis;
      for (std::size_t c = 0; c < dim; ++c) pca.rotation[r * dim + c] = axis(static_cast<Eigen::Index>(c));
      double lambda = std::max(values(col), 0.0);
      pca.inv_singular[r] = 1.0 / std::sqrt(lambda + options.epsilon);
    }
    m.pca = std::move(pca);
  }
  for (double v : m.inv_std) {
    if (!std::isfinite(v)) throw Error(ErrorCode::numeric_failure, "non-finite inverse deviation");
  }
  return m;
}

/// Transforms one vector with the fitted model, in double precision.
inline std::vector<double> whiten_values(const WhiteningModel& model, std::span<const float> x) {
  if (x.size() != model.dim)
    throw Error(ErrorCode::dimension_mismatch,
                "descriptor dim " + std::to_string(x.size()) + " vs model dim " + std::to_string(model.dim));
  auto v = detail::prepared(x, model.prenormalize);
  const std::size_t dim = model.dim;
  for (std::size_t d = 0; d < dim; ++d) v[d] -= model.mean[d];
  if (!model.pca) {
    for (std::size_t d = 0; d < dim; ++d) v[d] *= model.inv_std[d];
    return v;
  }
  std::vector<double> out(dim);
  const auto& rot = model.pca->rotation;
  for (std::size_t r = 0; r < dim; ++r) {
    const double* row = rot.data() + r * dim;
    double acc = 0.0;
    for (std::size_t c = 0; c < dim; ++c) acc += row[c] * v[c];
    out[r] = acc * model.pca->inv_singular[r];
  }
  return out;
}

inline Descriptor apply_whitener(const WhiteningModel& model, const Descriptor& d) {
  auto v = whiten_values(model, d.values);
  Descriptor out;
  out.image_id = d.image_id;
  out.view = d.view;
  out.provenance = {d.provenance.strategy, model.identity()};
  out.values.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.values[i] = static_cast<float>(v[i]);
    if (!std::isfinite(out.values[i])) throw Error(ErrorCode::numeric_failure, "whitened " + d.image_id);
  }
  return out;
}

inline std::vector<Descriptor> apply_whitener(const WhiteningModel& model, std::span<const Descriptor> ds) {
  std::vector<Descriptor> out;
  out.reserve(ds.size());
  for (const auto& d : ds) out.push_back(apply_whitener(model, d));
  return out;
}

namespace pwm {

inline constexpr char kMagic[4] = {'P', 'W', 'M', '1'};
inline constexpr std::uint32_t kVersion = 1;
inline constexpr std::uint32_t kFlagPca = 1U << 0;
inline constexpr std::uint32_t kFlagPrenormalize = 1U << 1;

inline std::vector<std::uint8_t> encode(const WhiteningModel& m) {
  std::vector<std::uint8_t> out;
  io::put_bytes(out, std::string_view(kMagic, 4));
  io::put_le<std::uint32_t>(out, kVersion);
  io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(m.dim));
  std::uint32_t flags = (m.pca ? kFlagPca : 0U) | (m.prenormalize ? kFlagPrenormalize : 0U);
  io::put_le<std::uint32_t>(out, flags);
  io::put_le<std::uint64_t>(out, m.fit_count);
  io::put_le<double>(out, m.epsilon);
  for (double v : m.mean) io::put_le<double>(out, v);
  for (double v : m.inv_std) io::put_le<double>(out, v);
  if (m.pca) {
    for (double v : m.pca->rotation) io::put_le<double>(out, v);
    for (double v : m.pca->inv_singular) io::put_le<double>(out, v);
  }
  return out;
}

inline WhiteningModel decode(std::span<const std::uint8_t> data, const std::string& origin = {}) {
  if (data.size() < 4 || std::memcmp(data.data(), kMagic, 4) != 0) throw Error(ErrorCode::bad_magic, origin);
  io::Reader in(data);
  in.get_bytes(4);
  auto version = in.get_le<std::uint32_t>("version");
  if (version != kVersion) throw Error(ErrorCode::bad_version, origin + " has version " + std::to_string(version));
  WhiteningModel m;
  auto dim = in.get_le<std::uint32_t>("dim");
  auto flags = in.get_le<std::uint32_t>("flags");
  if ((flags & ~(kFlagPca | kFlagPrenormalize)) != 0) throw Error(ErrorCode::bad_version, origin + " unknown flags");
  m.fit_count = in.get_le<std::uint64_t>("fit_count");
  m.epsilon = in.get_le<double>("epsilon");
  m.prenormalize = (flags & kFlagPrenormalize) != 0;
  std::uint64_t doubles = 2ULL * dim + ((flags & kFlagPca) ? static_cast<std::uint64_t>(dim) * dim + dim : 0);
  if (dim == 0 || dim > (1U << 16)) throw Error(ErrorCode::dimension_overflow, origin);
  in.require(doubles * sizeof(double), "model payload");
  m.dim = dim;
  auto read_vec = [&](std::size_t count) {
    std::vector<double> v(count);
    for (auto& x : v) {
      x = in.get_le<double>();
      if (!std::isfinite(x)) throw Error(ErrorCode::non_finite, origin);
    }
    return v;
  };
  m.mean = read_vec(dim);
  m.inv_std = read_vec(dim);
  if (flags & kFlagPca) {
    PcaTransform pca;
    pca.rotation = read_vec(static_cast<std::size_t>(dim) * dim);
    pca.inv_singular = read_vec(dim);
    m.pca = std::move(pca);
  }
  return m;
}

}  // namespace pwm

inline std::uint64_t WhiteningModel::fingerprint() const { return io::fnv1a(pwm::encode(*this)); }

inline std::string WhiteningModel::identity() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fingerprint()));
  return std::string(pca ? "pca-whiten:" : "whiten:") + buf;
}

inline void save_model(const WhiteningModel& m, const std::filesystem::path& path) {
  io::write_file(path, pwm::encode(m));
}

inline WhiteningModel load_model(const std::filesystem::path& path) {
  return pwm::decode(io::read_file(path), path.string());
}

}  // namespace poolrank
