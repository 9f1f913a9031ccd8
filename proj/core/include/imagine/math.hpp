#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "imagine/errors.hpp"

namespace imagine {

template <typename T>
double dot(std::span<const T> a, std::span<const T> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

template <typename T>
double norm(std::span<const T> a) {
  return std::sqrt(dot(a, a));
}

/// Cosine similarity in [-1, 1]. Throws on dimension mismatch or a zero-norm
/// input.
template <typename T>
double cosine_similarity(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) {
    throw DataError("cosine_similarity: dimension mismatch (" + std::to_string(a.size()) + " vs " +
                    std::to_string(b.size()) + ")");
  }
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw NumericError("cosine_similarity: zero-norm vector");
  return dot(a, b) / (na * nb);
}

inline double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  return cosine_similarity(std::span<const double>(a), std::span<const double>(b));
}

inline double cosine_similarity(const std::vector<float>& a, const std::vector<float>& b) {
  return cosine_similarity(std::span<const float>(a), std::span<const float>(b));
}

/// Numerically stable softmax (max subtraction). Input must be finite.
inline std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw DataError("softmax: empty input");
  double mx = logits[0];
  for (double v : logits) {
    if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
    if (v > mx) mx = v;
  }
  std::vector<double> out(logits.size());
  double z = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    z += out[i];
  }
  for (auto& v : out) v /= z;
  return out;
}

inline std::vector<double> softmax(const std::vector<double>& logits) {
  return softmax(std::span<const double>(logits));
}

inline double log_sum_exp(std::span<const double> v) {
  double mx = v[0];
  for (double x : v)
    if (x > mx) mx = x;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

/// Argmax with ties resolved to the lowest index (engine-wide tie rule).
inline int argmax_lowest(std::span<const double> v) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

inline int argmax_lowest(const std::vector<double>& v) {
  return argmax_lowest(std::span<const double>(v));
}

}  // namespace imagine
