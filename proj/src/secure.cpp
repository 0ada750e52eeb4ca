#include "forge/secure.hpp"

#include <cmath>

#include "forge/parallel.hpp"
#include "forge/rng.hpp"

namespace forge::secure {

Eigen::MatrixXd MvnModel::sampling_factor() const {
  const int d = static_cast<int>(mu.size());
  Eigen::MatrixXd m = s_red * sigma + jitter * Eigen::MatrixXd::Identity(d, d);
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) {
    // fall back to a diagonal factor; sigma was not quite psd
    Eigen::VectorXd diag = m.diagonal().cwiseMax(jitter).cwiseSqrt();
    return Eigen::MatrixXd(diag.asDiagonal());
  }
  return llt.matrixL();
}

MvnModel fit_mvn(const std::vector<Eigen::VectorXd>& points) {
  if (points.size() < 2) throw TooFewPoints("mvn fit needs at least two points");
  const int d = static_cast<int>(points.front().size());
  MvnModel m;
  m.mu = Eigen::VectorXd::Zero(d);
  for (const auto& p : points) m.mu += p;
  m.mu /= static_cast<double>(points.size());
  m.sigma = Eigen::MatrixXd::Zero(d, d);
  for (const auto& p : points) {
    const Eigen::VectorXd w = p - m.mu;
    m.sigma += w * w.transpose();
  }
  m.sigma /= static_cast<double>(points.size() - 1);
  return m;
}

std::vector<SecureSample> sample_secure(const net::Network& net, const net::InputSpace& xs,
                                        const MvnModel& model, const SecureOptions& opt) {
  std::vector<SecureSample> out(static_cast<size_t>(std::max<long>(0, opt.n3)));
  if (opt.n3 <= 0) return out;
  const Eigen::MatrixXd chol = model.sampling_factor();
  const auto free = xs.free_indices();
  const int d = static_cast<int>(free.size());

  parallel_for(static_cast<int>(opt.n3), opt.threads, [&](int i) {
    SecureSample rec;
    rec.seed = derive_seed(opt.seed, 0x53ULL * 1000003ULL + i);
    Rng rng(rec.seed);
    Eigen::VectorXd z(d);
    for (int k = 0; k < d; ++k) z[k] = rng.normal();
    rec.draw = model.mu + chol * z;

    bool inside = true;
    for (int k = 0; k < d; ++k)
      if (rec.draw[k] < 0.0 || rec.draw[k] > 1.0) inside = false;

    Eigen::VectorXd unit = Eigen::VectorXd::Constant(xs.size(), 0.5);
    for (int k = 0; k < d; ++k) unit[free[k]] = rec.draw[k];
    rec.x = xs.denormalize(unit);

    if (!inside) {
      rec.out_of_box = true;
      rec.secure = false;
      rec.stage = acpf::Stage::none;
    } else {
      auto cls = acpf::classify_two_stage(net, xs, rec.x, opt.classify);
      rec.secure = cls.report.secure;
      rec.stage = cls.report.stage;
      rec.diverged = cls.report.diverged;
      rec.violations = cls.report.violations;
      if (cls.adjusted_x) rec.x = *cls.adjusted_x;
    }
    out[i] = std::move(rec);
  });
  return out;
}

}  // namespace forge::secure
