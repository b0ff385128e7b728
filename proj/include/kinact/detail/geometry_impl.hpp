#pragma once

#include <random>

namespace kinact {

template <typename Rng>
Rigid random_rigid(Rng& rng, double max_translation) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(-max_translation, max_translation);
  // Normalized Gaussian 4-vector is a uniformly distributed unit quaternion.
  Eigen::Quaterniond quat;
  double norm = 0.0;
  do {
    quat.coeffs() << normal(rng), normal(rng), normal(rng), normal(rng);
    norm = quat.norm();
  } while (norm < 1e-9);
  quat.coeffs() /= norm;
  Rigid transform = Rigid::Identity();
  transform.linear() = quat.toRotationMatrix();
  transform.translation() << uniform(rng), uniform(rng), uniform(rng);
  return transform;
}

}  // namespace kinact
