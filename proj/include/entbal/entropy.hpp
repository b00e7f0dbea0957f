#pragma once

#include <limits>
#include <string>
#include <string_view>

namespace entbal {

enum class EntropyFamily { Exponential, EmpiricalLikelihood, Hellinger, Renyi };

// Open interval (lower, upper); either end may be infinite.
struct Interval {
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();

  bool contains(double x) const { return x > lower && x < upper; }
};

// A strictly convex entropy G on (0, inf) together with g = G',
// rho = g^{-1} and rho'.
//
//   exp        G(w) = w log w - w      g(w) = log w        rho(x) = e^x
//   el         G(w) = -log w           g(w) = -1/w         rho(x) = -1/x
//   hellinger  G(w) = -4 sqrt(w)       g(w) = -2 w^{-1/2}  rho(x) = 4/x^2
//   renyi:r    G(w) = w^{r+1}/(r(r+1)) g(w) = w^r / r      rho(x) = (r x)^{1/r}
class EntropySpec {
 public:
  static EntropySpec exponential();
  static EntropySpec empirical_likelihood();
  static EntropySpec hellinger();
  // Throws InvalidArgument for order 0 or 1.
  static EntropySpec renyi(double order);

  // "exp" | "el" | "hellinger" | "renyi:<r>"
  static EntropySpec parse(std::string_view text);
  std::string to_string() const;

  EntropyFamily family() const { return family_; }
  double order() const { return order_; }
  Interval weight_domain() const { return {0.0, std::numeric_limits<double>::infinity()}; }
  Interval dual_domain() const;

  double G(double w) const;
  double g(double w) const;
  double G_second(double w) const;
  double rho(double x) const;
  double rho_prime(double x) const;

  // Unchecked variants for hot loops; caller guarantees x is in the dual domain.
  double rho_unchecked(double x) const;
  double rho_prime_unchecked(double x) const;

  // g(1): the dual argument that produces unit weight.
  double baseline() const { return g(1.0); }

  bool operator==(const EntropySpec& other) const {
    return family_ == other.family_ && order_ == other.order_;
  }

 private:
  EntropySpec(EntropyFamily family, double order) : family_(family), order_(order) {}

  EntropyFamily family_;
  double order_ = 0.0;  // only meaningful for Renyi
};

// Free-function forms of the three core maps.
double g_value(const EntropySpec& spec, double w);
double rho(const EntropySpec& spec, double x);
double rho_prime(const EntropySpec& spec, double x);

}  // namespace entbal
