#pragma once

// Test-only helpers: random fixtures and brute-force oracles. Nothing here
// calls into the code paths it is used to check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <Eigen/Dense>

#include "clir/embedding_store.hpp"

namespace clir::testing {

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void spit(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  out << content;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("clir_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::vector<double> random_unit(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(dim);
  double n = 0.0;
  for (auto& x : v) {
    x = g(rng);
    n += x * x;
  }
  n = std::sqrt(n);
  for (auto& x : v) x /= n;
  return v;
}

/// Random orthogonal matrix from the QR decomposition of a Gaussian matrix.
inline Eigen::MatrixXd random_orthogonal(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> g(0.0, 1.0);
  const auto d = static_cast<Eigen::Index>(dim);
  Eigen::MatrixXd a(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) a(i, j) = g(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ();
  // Fix column signs so the distribution is Haar and the result deterministic.
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < d; ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  return q;
}

inline std::string term_name(const std::string& prefix, std::size_t i) {
  std::ostringstream s;
  s << prefix << i;
  return s.str();
}

/// Plain-loop cosine used as an oracle.
inline double oracle_cosine(const std::vector<double>& u, const std::vector<double>& v) {
  long double dot = 0, nu = 0, nv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += static_cast<long double>(u[i]) * v[i];
    nu += static_cast<long double>(u[i]) * u[i];
    nv += static_cast<long double>(v[i]) * v[i];
  }
  return static_cast<double>(dot / (std::sqrt(nu) * std::sqrt(nv)));
}

/// AP by enumerating every cutoff: precision@i summed where rank i is relevant.
inline double oracle_average_precision(const std::vector<std::string>& ranked, const std::set<std::string>& relevant) {
  double total = 0.0;
  for (std::size_t i = 1; i <= ranked.size(); ++i) {
    if (!relevant.count(ranked[i - 1])) continue;
    std::size_t rel_in_top = 0;
    for (std::size_t j = 0; j < i; ++j) rel_in_top += relevant.count(ranked[j]);
    total += static_cast<double>(rel_in_top) / static_cast<double>(i);
  }
  return total / static_cast<double>(relevant.size());
}

/// Query likelihood as a linear-domain product of smoothed probabilities,
/// counted directly from token lists; tokens absent from the collection are
/// dropped. Returns the product (not its log).
inline double oracle_query_likelihood(const std::map<std::string, std::vector<std::string>>& docs,
                                      const std::string& doc, const std::vector<std::string>& query, double mu) {
  std::size_t total = 0;
  std::map<std::string, std::size_t> cf;
  for (const auto& [_, toks] : docs) {
    total += toks.size();
    for (const auto& t : toks) ++cf[t];
  }
  const auto& d = docs.at(doc);
  const double nd = static_cast<double>(d.size());
  const double lambda = nd / (nd + mu);
  double product = 1.0;
  for (const auto& q : query) {
    if (!cf.count(q)) continue;
    const double tf = static_cast<double>(std::count(d.begin(), d.end(), q));
    product *= lambda * (tf / nd) + (1.0 - lambda) * static_cast<double>(cf[q]) / static_cast<double>(total);
  }
  return product;
}

}  // namespace clir::testing
