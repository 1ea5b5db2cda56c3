#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace sbflow {

/// Rows are samples, columns are coordinates.
using Batch = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

/// Paired endpoint samples: row i of x0 is coupled with row i of x1.
struct CouplingBatch {
  Batch x0;
  Batch x1;

  Eigen::Index rows() const { return x0.rows(); }
  Eigen::Index dim() const { return x0.cols(); }
};

/// Raised for numeric failures (non-finite values, left admissible regions).
/// The CLI maps it to exit code 2.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what, long index = -1)
      : std::runtime_error(what), index_(index) {}
  /// Offending row or step index, -1 when not applicable.
  long index() const { return index_; }

 private:
  long index_;
};

// Counter-based generator state. Every draw is a pure function of
// (seed, stream_id, counter); draws advance counter and nothing else.
struct RngState {
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;
  std::uint64_t counter = 0;

  /// A fresh state on a derived stream. Used to give sub-tasks their own
  /// independent sequence without touching the parent.
  RngState substream(std::uint64_t tag) const;
};

/// Philox4x32-10 block for (key, counter). Exposed for tests.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                        std::array<std::uint32_t, 2> key);

/// 64 random bits; advances the counter by one block.
std::uint64_t next_u64(RngState& rng);
/// Uniform in the open interval (0, 1).
double next_uniform(RngState& rng);

Batch sample_std_normal(RngState& rng, Eigen::Index n, Eigen::Index d);
Vec sample_uniform(RngState& rng, Eigen::Index n, double lo, double hi);
/// Fisher-Yates permutation of {0..n-1}.
std::vector<Eigen::Index> random_permutation(RngState& rng, Eigen::Index n);

/// Composite Simpson rule on [a, b] with an even number of panels.
double quadrature(const std::function<double(double)>& f, double a, double b, int n_panels);

/// Exact minimum-cost perfect matching for a square cost matrix.
/// Returns sigma with row i assigned to column sigma[i].
std::vector<int> solve_assignment(const Eigen::MatrixXd& cost);

double assignment_cost(const Eigen::MatrixXd& cost, const std::vector<int>& sigma);

void require_finite(const Batch& b, const char* what);

}  // namespace sbflow
