#pragma once

// Finite-difference verification of every hand-written backward rule.
// Each suite builds a small random problem in double precision, reduces its
// output to a scalar with fixed random weights, and compares the tape's
// gradients with central differences.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "yolo_former/tensor.hpp"

namespace yf {

struct GradcheckOptions {
  double tolerance = 1e-4;         // on the relative error below
  double step = 1e-6;              // central-difference half step
  double denominator_floor = 1e-3; // |a - n| / max(|a|, |n|, floor)
  std::size_t max_checks_per_tensor = 160;
  std::uint64_t seed = 0;
};

struct GradcheckResult {
  std::string name;
  double max_rel_error = 0.0;
  std::string worst;  // "<tensor>[index]" of the largest error
  std::size_t checked = 0;
  double seconds = 0.0;
  bool passed = false;
};

struct GradInput {
  std::string name;
  Tensor<double> tensor;  // must require gradients
};

/// Checks `f` against central differences in every input. `f` must record on
/// the tape it is given and run forward-only for a null tape.
GradcheckResult check_gradients(const std::string& name, std::vector<GradInput> inputs,
                                const std::function<Tensor<double>(Tape<double>*)>& f,
                                const GradcheckOptions& options);

std::vector<std::string> gradcheck_suites();
GradcheckResult run_gradcheck(const std::string& suite, const GradcheckOptions& options = {});
std::vector<GradcheckResult> run_all_gradchecks(const GradcheckOptions& options = {});

}  // namespace yf
