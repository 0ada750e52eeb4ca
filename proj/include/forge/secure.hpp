#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

#include "forge/acpf.hpp"
#include "forge/netmodel.hpp"

namespace forge::secure {

// multivariate normal over the normalized free input coordinates
struct MvnModel {
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;
  double s_red = 0.25;
  double jitter = 1e-10;

  // cholesky factor of s_red * sigma + jitter * I
  Eigen::MatrixXd sampling_factor() const;
};

// sample mean / covariance (n-1 denominator); throws TooFewPoints below 2
MvnModel fit_mvn(const std::vector<Eigen::VectorXd>& points);

struct SecureSample {
  Eigen::VectorXd draw;       // normalized free coordinates as drawn
  net::InputVector x;         // physical, q-adjusted when applicable
  bool secure = false;
  acpf::Stage stage = acpf::Stage::none;
  bool out_of_box = false;
  bool diverged = false;
  std::vector<acpf::Violation> violations;
  std::uint64_t seed = 0;
};

struct SecureOptions {
  long n3 = 100000;
  std::uint64_t seed = 1;
  acpf::ClassifyOptions classify;
  int threads = 1;
};

// draws n3 candidates from the fitted normal; out-of-box draws are labeled
// insecure without running a power flow
std::vector<SecureSample> sample_secure(const net::Network& net, const net::InputSpace& xs,
                                        const MvnModel& model, const SecureOptions& opt);

}  // namespace forge::secure
