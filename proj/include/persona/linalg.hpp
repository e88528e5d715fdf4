#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "persona/error.hpp"

namespace persona {

enum class Reduction { final_token, mean_tokens };

/// How a projection is normalized: `single` divides the dot product by the
/// direction's norm once, `double_norm` divides by the squared norm.
enum class ProjectionMode { single, double_norm };

inline std::string_view to_string(Reduction r) {
  return r == Reduction::final_token ? "final_token" : "mean_tokens";
}

inline Reduction parse_reduction(std::string_view s) {
  if (s == "final_token") return Reduction::final_token;
  if (s == "mean_tokens") return Reduction::mean_tokens;
  throw Error(ErrorCode::invalid_argument, "unknown reduction '" + std::string(s) + "'");
}

inline std::string_view to_string(ProjectionMode m) {
  return m == ProjectionMode::single ? "single" : "double";
}

inline ProjectionMode parse_projection_mode(std::string_view s) {
  if (s == "single") return ProjectionMode::single;
  if (s == "double") return ProjectionMode::double_norm;
  throw Error(ErrorCode::invalid_argument, "unknown projection mode '" + std::string(s) + "'");
}

namespace detail {

inline void require_finite(std::span<const double> values, std::string_view what) {
  for (double v : values) {
    if (!std::isfinite(v)) throw Error(ErrorCode::non_finite, std::string(what) + " contains a non-finite value");
  }
}

}  // namespace detail

/// Hidden activations for one forward pass, row-major (layer, token, component).
class ActivationTensor {
 public:
  ActivationTensor(std::size_t num_layers, std::size_t num_tokens, std::size_t hidden_dim,
                   std::vector<double> values)
      : num_layers_(num_layers), num_tokens_(num_tokens), hidden_dim_(hidden_dim), values_(std::move(values)) {
    if (num_layers == 0 || num_tokens == 0 || hidden_dim == 0) {
      throw Error(ErrorCode::shape_mismatch, "activation tensor dimensions must be >= 1");
    }
    if (values_.size() != num_layers * num_tokens * hidden_dim) {
      throw Error(ErrorCode::shape_mismatch, "activation tensor value count does not match shape");
    }
    detail::require_finite(values_, "activation tensor");
  }

  std::size_t num_layers() const { return num_layers_; }
  std::size_t num_tokens() const { return num_tokens_; }
  std::size_t hidden_dim() const { return hidden_dim_; }
  std::span<const double> values() const { return values_; }

  std::span<const double> at(std::size_t layer, std::size_t token) const {
    return std::span<const double>(values_).subspan((layer * num_tokens_ + token) * hidden_dim_, hidden_dim_);
  }

 private:
  std::size_t num_layers_;
  std::size_t num_tokens_;
  std::size_t hidden_dim_;
  std::vector<double> values_;
};

/// One vector per layer, row-major (layer, component).
class LayerVectors {
 public:
  LayerVectors() = default;

  LayerVectors(std::size_t num_layers, std::size_t hidden_dim, std::vector<double> values, Reduction reduction)
      : num_layers_(num_layers), hidden_dim_(hidden_dim), values_(std::move(values)), reduction_(reduction) {
    if (num_layers == 0 || hidden_dim == 0) {
      throw Error(ErrorCode::shape_mismatch, "layer vectors dimensions must be >= 1");
    }
    if (values_.size() != num_layers * hidden_dim) {
      throw Error(ErrorCode::shape_mismatch, "layer vectors value count " + std::to_string(values_.size()) +
                                                 " does not match shape (" + std::to_string(num_layers) + ", " +
                                                 std::to_string(hidden_dim) + ")");
    }
    detail::require_finite(values_, "layer vectors");
  }

  std::size_t num_layers() const { return num_layers_; }
  std::size_t hidden_dim() const { return hidden_dim_; }
  Reduction reduction() const { return reduction_; }
  std::span<const double> values() const { return values_; }
  bool empty() const { return values_.empty(); }

  std::span<const double> layer(std::size_t l) const {
    if (l >= num_layers_) {
      throw Error(ErrorCode::invalid_argument,
                  "layer " + std::to_string(l) + " out of range (" + std::to_string(num_layers_) + " layers)");
    }
    return std::span<const double>(values_).subspan(l * hidden_dim_, hidden_dim_);
  }

  friend bool operator==(const LayerVectors&, const LayerVectors&) = default;

 private:
  std::size_t num_layers_ = 0;
  std::size_t hidden_dim_ = 0;
  std::vector<double> values_;
  Reduction reduction_ = Reduction::mean_tokens;
};

inline LayerVectors reduce_tokens(const ActivationTensor& t, Reduction mode) {
  const std::size_t L = t.num_layers(), T = t.num_tokens(), D = t.hidden_dim();
  std::vector<double> out(L * D, 0.0);
  for (std::size_t l = 0; l < L; ++l) {
    double* row = out.data() + l * D;
    if (mode == Reduction::final_token) {
      auto last = t.at(l, T - 1);
      std::copy(last.begin(), last.end(), row);
      continue;
    }
    for (std::size_t tok = 0; tok < T; ++tok) {
      auto v = t.at(l, tok);
      for (std::size_t c = 0; c < D; ++c) row[c] += v[c];
    }
    for (std::size_t c = 0; c < D; ++c) row[c] /= static_cast<double>(T);
  }
  return LayerVectors(L, D, std::move(out), mode);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::shape_mismatch, "dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

/// Component of `a` along direction `b`.
inline double project(std::span<const double> a, std::span<const double> b, ProjectionMode mode) {
  if (a.empty()) throw Error(ErrorCode::invalid_argument, "project: empty vectors");
  const double nb2 = dot(b, b);
  if (!(nb2 > 0.0)) throw Error(ErrorCode::degenerate_direction, "project: direction has zero norm");
  const double ab = dot(a, b);
  return mode == ProjectionMode::single ? ab / std::sqrt(nb2) : ab / nb2;
}

inline double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  const double nu = norm(u), nv = norm(v);
  if (!(nu > 0.0) || !(nv > 0.0)) throw Error(ErrorCode::degenerate_direction, "cosine: zero-norm input");
  return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

struct RegressionResult {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  std::size_t n = 0;
};

/// Ordinary least squares y = slope * x + intercept.
///
/// Flat data (SS_tot = 0) and constant xs both yield slope 0, intercept mean(y)
/// and R² = 0 instead of an error.
inline RegressionResult linear_fit(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw Error(ErrorCode::invalid_argument, "linear_fit: length mismatch");
  if (xs.size() < 2) throw Error(ErrorCode::invalid_argument, "linear_fit: need at least 2 points");
  detail::require_finite(xs, "linear_fit xs");
  detail::require_finite(ys, "linear_fit ys");
  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  RegressionResult r;
  r.n = xs.size();
  if (syy == 0.0 || sxx == 0.0) {
    r.intercept = my;
    return r;
  }
  r.slope = sxy / sxx;
  r.intercept = my - r.slope * mx;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double e = ys[i] - (r.slope * xs[i] + r.intercept);
    ss_res += e * e;
  }
  r.r_squared = std::clamp(1.0 - ss_res / syy, 0.0, 1.0);
  return r;
}

}  // namespace persona
