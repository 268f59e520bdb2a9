#pragma once

// Flat views over named parameter tensors, shared by the optimiser, the L2
// regulariser and the "WCLM" checkpoint format.

#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "weakcap/binary_io.hpp"
#include "weakcap/errors.hpp"

namespace weakcap {

struct TensorView {
  std::string name;
  double* data = nullptr;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;

  Eigen::Index size() const { return rows * cols; }
  Eigen::Map<Eigen::VectorXd> flat() const { return {data, size()}; }
};

template <class Tensor>
TensorView view_of(const std::string& name, Tensor& t) {
  return TensorView{name, t.data(), t.rows(), t.cols()};
}

/// Pair parameter and gradient views; names and shapes must agree.
inline void check_aligned(const std::vector<TensorView>& a, const std::vector<TensorView>& b) {
  require_shape(a.size() == b.size(), "tensor lists differ in length");
  for (std::size_t i = 0; i < a.size(); ++i) {
    require_shape(a[i].name == b[i].name && a[i].rows == b[i].rows && a[i].cols == b[i].cols,
                  "tensor mismatch at " + a[i].name);
  }
}

inline bool all_finite(const std::vector<TensorView>& views) {
  for (const auto& v : views) {
    if (!v.flat().allFinite()) return false;
  }
  return true;
}

/// Sum over tensors of the (unsquared) Frobenius norm; gradient W / ||W||.
inline double l2_norm_sum(const std::vector<TensorView>& params, const std::vector<TensorView>* grads, double weight) {
  double total = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double n = params[i].flat().norm();
    total += n;
    if (grads && n > 0.0) (*grads)[i].flat() += (weight / n) * params[i].flat();
  }
  return total;
}

/// RMS-propagation: ms = rho ms + (1 - rho) g^2, p -= lr g / (sqrt(ms) + eps).
class RmsProp {
 public:
  explicit RmsProp(double learning_rate, double rho = 0.99, double eps = 1e-8)
      : lr_(learning_rate), rho_(rho), eps_(eps) {}

  void step(const std::vector<TensorView>& params, const std::vector<TensorView>& grads) {
    check_aligned(params, grads);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& ms = state_[params[i].name];
      if (ms.size() != params[i].size()) ms = Eigen::VectorXd::Zero(params[i].size());
      auto g = grads[i].flat();
      ms = rho_ * ms + (1.0 - rho_) * g.cwiseAbs2();
      params[i].flat().array() -= lr_ * g.array() / (ms.array().sqrt() + eps_);
    }
  }

  double learning_rate() const { return lr_; }

 private:
  double lr_;
  double rho_;
  double eps_;
  std::map<std::string, Eigen::VectorXd> state_;
};

// ---------------------------------------------------------------------------
// "WCLM": magic, u32 version, string table (u32 count, u32-length strings),
// u32 tensor count, then per tensor: name, u32 rows, u32 cols, row-major f64.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kModelCheckpointVersion = 1;

inline void save_tensors(std::ostream& out, const std::vector<std::string>& strings,
                         const std::vector<TensorView>& tensors) {
  using namespace binio;
  write_magic(out, "WCLM");
  write_u32(out, kModelCheckpointVersion);
  write_u32(out, static_cast<std::uint32_t>(strings.size()));
  for (const auto& s : strings) write_string(out, s);
  write_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    write_string(out, t.name);
    write_u32(out, static_cast<std::uint32_t>(t.rows));
    write_u32(out, static_cast<std::uint32_t>(t.cols));
    Eigen::Map<const Eigen::MatrixXd> m(t.data, t.rows, t.cols);
    for (Eigen::Index r = 0; r < t.rows; ++r) {
      for (Eigen::Index c = 0; c < t.cols; ++c) write_f64(out, m(r, c));
    }
  }
}

struct TensorFile {
  std::vector<std::string> strings;
  std::map<std::string, Eigen::MatrixXd> tensors;
  std::vector<std::string> order;
};

inline TensorFile load_tensors(std::istream& in) {
  using namespace binio;
  expect_magic(in, "WCLM");
  const auto version = read_u32(in, "WCLM version");
  if (version != kModelCheckpointVersion) throw IngestError("unsupported WCLM version " + std::to_string(version));
  TensorFile f;
  const auto ns = read_u32(in, "WCLM strings");
  for (std::uint32_t i = 0; i < ns; ++i) f.strings.push_back(read_string(in, "WCLM string"));
  const auto nt = read_u32(in, "WCLM tensors");
  for (std::uint32_t i = 0; i < nt; ++i) {
    auto name = read_string(in, "WCLM tensor name");
    const auto rows = read_u32(in, "WCLM rows");
    const auto cols = read_u32(in, "WCLM cols");
    Eigen::MatrixXd m(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r) {
      for (std::uint32_t c = 0; c < cols; ++c) m(r, c) = read_f64(in, "WCLM data");
    }
    f.order.push_back(name);
    f.tensors.emplace(std::move(name), std::move(m));
  }
  return f;
}

/// Copy loaded tensors into views, by name, checking shapes.
inline void assign_tensors(const TensorFile& f, const std::vector<TensorView>& views) {
  for (const auto& v : views) {
    auto it = f.tensors.find(v.name);
    if (it == f.tensors.end()) throw IngestError("checkpoint lacks tensor " + v.name);
    if (it->second.rows() != v.rows || it->second.cols() != v.cols) {
      throw IngestError("checkpoint tensor " + v.name + " has the wrong shape");
    }
    Eigen::Map<Eigen::MatrixXd>(v.data, v.rows, v.cols) = it->second;
  }
}

}  // namespace weakcap
