#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ddhom {

// Error taxonomy shared by the whole pipeline. The CLI maps each class to a
// distinct exit code.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvalidInputError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct SchemaError : Error {
  using Error::Error;
};
struct ConvergenceError : Error {
  double residual = 0.0;
  ConvergenceError(const std::string& msg, double res) : Error(msg), residual(res) {}
};
struct StepFailureError : Error {
  using Error::Error;
};

// Compensated (Kahan) accumulator. Used for every physically meaningful
// reduction so sums are reproducible to the last ulp independent of length.
class KahanSum {
 public:
  void add(double x) {
    double y = x - comp_;
    double t = sum_ + y;
    comp_ = (t - sum_) - y;
    sum_ = t;
  }
  double value() const { return sum_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline double kahan_total(const std::vector<double>& xs) {
  KahanSum s;
  for (double x : xs) s.add(x);
  return s.value();
}

inline bool rel_close(double a, double b, double rtol, double atol = 0.0) {
  return std::abs(a - b) <= rtol * std::max(std::abs(a), std::abs(b)) + atol;
}

inline void require_finite(double x, const char* what) {
  if (!std::isfinite(x)) throw InvalidInputError(std::string("non-finite value in ") + what);
}

}  // namespace ddhom
