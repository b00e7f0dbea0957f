#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "entbal/entropy.hpp"
#include "entbal/error.hpp"
#include "oracles.hpp"

using entbal::EntropySpec;

namespace {

std::vector<EntropySpec> families() {
  return {EntropySpec::exponential(), EntropySpec::empirical_likelihood(), EntropySpec::hellinger(),
          EntropySpec::renyi(2.0), EntropySpec::renyi(0.5), EntropySpec::renyi(-2.0)};
}

}  // namespace

TEST_CASE("g at the documented points") {
  CHECK(entbal::g_value(EntropySpec::exponential(), 1.0) == 0.0);
  CHECK(entbal::g_value(EntropySpec::empirical_likelihood(), 1.0) == -1.0);
  CHECK(entbal::g_value(EntropySpec::hellinger(), 4.0) == doctest::Approx(-1.0).epsilon(1e-15));
  // finite-difference slope of G(w) = -4 sqrt(w) at 4
  const auto h = EntropySpec::hellinger();
  const double fd = (h.G(4.0 + 1e-6) - h.G(4.0 - 1e-6)) / 2e-6;
  CHECK(fd == doctest::Approx(-1.0).epsilon(1e-8));
}

TEST_CASE("rho at the documented points") {
  CHECK(entbal::rho(EntropySpec::exponential(), 0.0) == 1.0);
  CHECK(entbal::rho(EntropySpec::hellinger(), -2.0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(entbal::rho(EntropySpec::renyi(2.0), 0.5) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("rho' at the documented points") {
  CHECK(entbal::rho_prime(EntropySpec::exponential(), 0.0) == 1.0);
  CHECK(entbal::rho_prime(EntropySpec::empirical_likelihood(), -1.0) == doctest::Approx(1.0));
  const auto h = EntropySpec::hellinger();
  CHECK(entbal::rho_prime(h, -2.0) == doctest::Approx(1.0).epsilon(1e-15));
  const double fd = (h.rho(-2.0 + 1e-6) - h.rho(-2.0 - 1e-6)) / 2e-6;
  CHECK(fd == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("round trip rho(g(w)) = w on a log grid") {
  for (const auto& s : families()) {
    CAPTURE(s.to_string());
    for (int k = -40; k <= 40; ++k) {
      const double w = std::pow(10.0, k / 10.0);
      CHECK(std::abs(s.rho(s.g(w)) - w) <= 1e-10 * w);
    }
  }
}

TEST_CASE("rho' matches a central difference of rho") {
  for (const auto& s : families()) {
    CAPTURE(s.to_string());
    for (double x : oracle::dual_grid(s)) {
      const double h = 1e-6 * std::max(1.0, std::abs(x));
      double lo = x - h, hi = x + h;
      // stay inside the domain near its boundary
      if (!s.dual_domain().contains(lo) || !s.dual_domain().contains(hi)) continue;
      const double fd = (s.rho(hi) - s.rho(lo)) / (2.0 * h);
      CAPTURE(x);
      CHECK(std::abs(s.rho_prime(x) - fd) <= 1e-5 * std::abs(s.rho_prime(x)));
    }
  }
}

TEST_CASE("rho is strictly increasing and rho' positive") {
  for (const auto& s : families()) {
    CAPTURE(s.to_string());
    auto xs = oracle::dual_grid(s);
    std::sort(xs.begin(), xs.end());
    for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
      CHECK(s.rho(xs[i]) < s.rho(xs[i + 1]));
      CHECK(s.rho_prime(xs[i]) > 0.0);
    }
  }
}

TEST_CASE("G is strictly convex by finite differences") {
  for (const auto& s : families()) {
    CAPTURE(s.to_string());
    for (int k = -20; k <= 20; ++k) {
      const double w = std::pow(10.0, k / 10.0);
      const double h = 1e-3 * w;
      const double second = (s.G(w + h) - 2.0 * s.G(w) + s.G(w - h)) / (h * h);
      CHECK(second > 0.0);
      CHECK(second == doctest::Approx(s.G_second(w)).epsilon(1e-3));
    }
  }
}

TEST_CASE("domain errors") {
  CHECK_THROWS_AS(EntropySpec::exponential().g(0.0), entbal::Error);
  CHECK_THROWS_AS(EntropySpec::exponential().g(-1.0), entbal::Error);
  CHECK_THROWS_AS(EntropySpec::empirical_likelihood().rho(0.5), entbal::Error);
  CHECK_THROWS_AS(EntropySpec::hellinger().rho(0.0), entbal::Error);
  CHECK_THROWS_AS(EntropySpec::renyi(2.0).rho(-1.0), entbal::Error);
  CHECK_THROWS_AS(EntropySpec::renyi(-2.0).rho_prime(1.0), entbal::Error);
  try {
    EntropySpec::empirical_likelihood().rho(1.0);
    FAIL("expected an error");
  } catch (const entbal::Error& e) {
    CHECK(e.kind() == entbal::ErrorKind::Domain);
  }
}

TEST_CASE("Renyi order 0 and 1 are rejected") {
  CHECK_THROWS_AS(EntropySpec::renyi(0.0), entbal::Error);
  CHECK_THROWS_AS(EntropySpec::renyi(1.0), entbal::Error);
  CHECK_THROWS_AS(EntropySpec::parse("renyi:1"), entbal::Error);
}

TEST_CASE("parse and print") {
  CHECK(EntropySpec::parse("exp") == EntropySpec::exponential());
  CHECK(EntropySpec::parse("el") == EntropySpec::empirical_likelihood());
  CHECK(EntropySpec::parse("hellinger") == EntropySpec::hellinger());
  CHECK(EntropySpec::parse("renyi:2") == EntropySpec::renyi(2.0));
  CHECK(EntropySpec::parse("renyi:-0.5").order() == -0.5);
  CHECK(EntropySpec::parse(EntropySpec::renyi(0.25).to_string()) == EntropySpec::renyi(0.25));
  CHECK_THROWS_AS(EntropySpec::parse("kl"), entbal::Error);
  CHECK_THROWS_AS(EntropySpec::parse("renyi:"), entbal::Error);
  CHECK_THROWS_AS(EntropySpec::parse("renyi:2x"), entbal::Error);
}

TEST_CASE("Renyi orders -1 and -1/2 reproduce el and hellinger weights") {
  const auto r1 = EntropySpec::renyi(-1.0), el = EntropySpec::empirical_likelihood();
  const auto rh = EntropySpec::renyi(-0.5), hel = EntropySpec::hellinger();
  for (double w : {0.1, 0.5, 1.0, 3.0}) {
    CHECK(r1.g(w) == doctest::Approx(el.g(w)));
    // g differs by a positive factor for order -1/2; rho(c g) traces the same weights
    CHECK(rh.rho(rh.g(w)) == doctest::Approx(hel.rho(hel.g(w))));
  }
}

TEST_CASE("baseline multiplier gives unit weight") {
  for (const auto& s : families()) CHECK(s.rho(s.baseline()) == doctest::Approx(1.0).epsilon(1e-14));
}
