#pragma once

#include <filesystem>
#include <random>
#include <string>

#include <ATen/CPUGeneratorImpl.h>
#include <doctest.h>
#include <torch/torch.h>

#include "diffattn/error.hpp"

namespace testing {

/// Fresh, empty scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("diffattn_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline torch::Generator make_gen(std::uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

inline torch::Tensor randn64(std::vector<std::int64_t> shape, std::uint64_t seed) {
  auto gen = make_gen(seed);
  return torch::randn(shape, gen, torch::kFloat64);
}

template <typename Fn>
diffattn::ErrorKind error_kind_of(Fn&& fn) {
  try {
    fn();
  } catch (const diffattn::Error& e) {
    return e.kind();
  }
  FAIL("expected a diffattn::Error");
  return diffattn::ErrorKind::Config;
}

}  // namespace testing

#define CHECK_ERROR_KIND(expr, kind) CHECK(testing::error_kind_of([&] { (void)(expr); }) == (kind))
