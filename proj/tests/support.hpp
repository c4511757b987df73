#ifndef STRDAN_TESTS_SUPPORT_HPP_
#define STRDAN_TESTS_SUPPORT_HPP_

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "oracles/oracles.hpp"
#include "strdan/random.hpp"
#include "strdan/tensor.hpp"

namespace test {

inline oracle::Matrix to_matrix(const strdan::Tensor& t) {
  oracle::Matrix m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i) {
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t(i, j);
  }
  return m;
}

inline strdan::Tensor to_tensor(const oracle::Matrix& m) {
  return strdan::Tensor::from_rows(m);
}

inline strdan::Tensor random_tensor(strdan::Rng& rng, std::size_t rows, std::size_t cols,
                                    double scale = 1.0) {
  strdan::Tensor t(rows, cols);
  for (double& v : t.values()) v = scale * strdan::standard_normal(rng);
  return t;
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("strdan_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void spit(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
}

}  // namespace test

#endif  // STRDAN_TESTS_SUPPORT_HPP_
