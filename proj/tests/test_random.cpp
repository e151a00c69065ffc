#include <doctest.h>

#include "tsmc/random.hpp"

using namespace tsmc;

TEST_CASE("streams are deterministic and splittable") {
  RandomStream a(42);
  RandomStream b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  RandomStream base(42);
  RandomStream left = base.derive(1);
  RandomStream right = base.derive(2);
  CHECK(left.key() != right.key());
  CHECK(base.derive("alpha").key() == RandomStream(42).derive("alpha").key());
  CHECK(base.derive("alpha").key() != base.derive("beta").key());

  // deriving does not consume or depend on parent draws
  RandomStream c(7);
  c.next_u64();
  CHECK(c.derive(3).key() == RandomStream(7).derive(3).key());
}

TEST_CASE("uniform draws are in range with the right mean") {
  RandomStream rng(123);
  double sum = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.next_double();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  CHECK(sum / n == doctest::Approx(0.5).epsilon(0.01));
}

TEST_CASE("gaussian draws have unit scale") {
  RandomStream rng(321);
  double sum = 0.0;
  double sumsq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double g = rng.next_gauss();
    sum += g;
    sumsq += g * g;
  }
  CHECK(sum / n == doctest::Approx(0.0).epsilon(0.02));
  CHECK(sumsq / n == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("categorical draws follow the weights") {
  RandomStream rng(9);
  Eigen::VectorXd weights(3);
  weights << 2.0, 1.0, 1.0;
  Eigen::Vector3d counts = Eigen::Vector3d::Zero();
  const int n = 100000;
  for (int i = 0; i < n; ++i) counts[rng.next_categorical(weights)] += 1.0;
  CHECK(counts[0] / n == doctest::Approx(0.5).epsilon(0.02));
  CHECK(counts[1] / n == doctest::Approx(0.25).epsilon(0.04));

  // zero-weight entries are never selected
  Eigen::VectorXd spiked(4);
  spiked << 0.0, 1.0, 0.0, 0.0;
  for (int i = 0; i < 1000; ++i) CHECK(rng.next_categorical(spiked) == 1);
}
