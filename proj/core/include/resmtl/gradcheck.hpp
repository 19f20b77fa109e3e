#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "resmtl/network.hpp"
#include "resmtl/losses.hpp"

namespace resmtl {

struct GradcheckOptions {
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::size_t input_dim = 8;
  std::size_t hidden = 6;
  std::size_t batch = 6;
  std::size_t num_classes = 3;  // subtlety, z, diagnosis; state stays binary (BCE)
  double step = 1e-5;
  double tolerance = 1e-4;
  double abs_floor = 1e-8;
  double alpha = 0.1;
  /// Negative control: inflate one layer's analytic gradient so the check must fail.
  bool corrupt_backward = false;
};

struct LayerError {
  std::string name;
  double max_error = 0.0;
  std::size_t entries = 0;
};

struct GradcheckResult {
  bool passed = true;
  /// Largest |analytic - numeric| / max(|analytic|, |numeric|, abs_floor).
  double max_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::uint64_t worst_seed = 0;
  std::vector<LayerError> per_layer;  // parameters() order, max over seeds
};

/// Compares backward() against central finite differences of the full
/// weighted multi-task loss on small seeded nets (dropout off, every loss
/// kind and target masking exercised).
GradcheckResult run_gradcheck(const GradcheckOptions& options = {});

}  // namespace resmtl
