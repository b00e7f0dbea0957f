#include "entbal/entropy.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "entbal/error.hpp"

namespace entbal {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Domain: return "DomainError";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::InfeasibleTarget: return "InfeasibleTarget";
    case ErrorKind::RankDeficientBasis: return "RankDeficientBasis";
    case ErrorKind::SingularHessian: return "SingularHessian";
    case ErrorKind::RankDeficientDesign: return "RankDeficientDesign";
    case ErrorKind::Separation: return "Separation";
    case ErrorKind::LinkMismatch: return "LinkMismatch";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::SingularJacobianBlock: return "SingularJacobianBlock";
    case ErrorKind::Io: return "IoError";
    case ErrorKind::Parse: return "ParseError";
  }
  return "Error";
}

namespace {

[[noreturn]] void domain_error(const char* what, double value) {
  std::ostringstream os;
  os.precision(17);
  os << what << " (got " << value << ")";
  throw Error(ErrorKind::Domain, os.str());
}

}  // namespace

EntropySpec EntropySpec::exponential() { return {EntropyFamily::Exponential, 0.0}; }
EntropySpec EntropySpec::empirical_likelihood() { return {EntropyFamily::EmpiricalLikelihood, 0.0}; }
EntropySpec EntropySpec::hellinger() { return {EntropyFamily::Hellinger, 0.0}; }

EntropySpec EntropySpec::renyi(double order) {
  if (!std::isfinite(order) || order == 0.0 || order == 1.0) {
    throw Error(ErrorKind::InvalidArgument, "Renyi order must be finite and not in {0, 1}");
  }
  return {EntropyFamily::Renyi, order};
}

EntropySpec EntropySpec::parse(std::string_view text) {
  if (text == "exp") return exponential();
  if (text == "el") return empirical_likelihood();
  if (text == "hellinger") return hellinger();
  constexpr std::string_view prefix = "renyi:";
  if (text.substr(0, prefix.size()) == prefix) {
    auto rest = text.substr(prefix.size());
    double r = 0.0;
    auto [ptr, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), r);
    if (ec != std::errc() || ptr != rest.data() + rest.size() || rest.empty()) {
      throw Error(ErrorKind::Parse, "bad Renyi order in entropy '" + std::string(text) + "'");
    }
    return renyi(r);
  }
  throw Error(ErrorKind::Parse, "unknown entropy '" + std::string(text) +
                                    "' (expected exp | el | hellinger | renyi:<r>)");
}

std::string EntropySpec::to_string() const {
  switch (family_) {
    case EntropyFamily::Exponential: return "exp";
    case EntropyFamily::EmpiricalLikelihood: return "el";
    case EntropyFamily::Hellinger: return "hellinger";
    case EntropyFamily::Renyi: {
      std::ostringstream os;
      os.precision(17);
      os << "renyi:" << order_;
      return os.str();
    }
  }
  return "?";
}

Interval EntropySpec::dual_domain() const {
  constexpr double inf = std::numeric_limits<double>::infinity();
  switch (family_) {
    case EntropyFamily::Exponential: return {-inf, inf};
    case EntropyFamily::EmpiricalLikelihood:
    case EntropyFamily::Hellinger: return {-inf, 0.0};
    case EntropyFamily::Renyi: return order_ > 0 ? Interval{0.0, inf} : Interval{-inf, 0.0};
  }
  return {};
}

double EntropySpec::G(double w) const {
  if (!weight_domain().contains(w)) domain_error("weight outside (0, inf)", w);
  switch (family_) {
    case EntropyFamily::Exponential: return w * std::log(w) - w;
    case EntropyFamily::EmpiricalLikelihood: return -std::log(w);
    case EntropyFamily::Hellinger: return -4.0 * std::sqrt(w);
    case EntropyFamily::Renyi: return std::pow(w, order_ + 1.0) / (order_ * (order_ + 1.0));
  }
  return 0.0;
}

double EntropySpec::g(double w) const {
  if (!weight_domain().contains(w)) domain_error("weight outside (0, inf)", w);
  switch (family_) {
    case EntropyFamily::Exponential: return std::log(w);
    case EntropyFamily::EmpiricalLikelihood: return -1.0 / w;
    case EntropyFamily::Hellinger: return -2.0 / std::sqrt(w);
    case EntropyFamily::Renyi: return std::pow(w, order_) / order_;
  }
  return 0.0;
}

double EntropySpec::G_second(double w) const {
  if (!weight_domain().contains(w)) domain_error("weight outside (0, inf)", w);
  switch (family_) {
    case EntropyFamily::Exponential: return 1.0 / w;
    case EntropyFamily::EmpiricalLikelihood: return 1.0 / (w * w);
    case EntropyFamily::Hellinger: return std::pow(w, -1.5);
    case EntropyFamily::Renyi: return std::pow(w, order_ - 1.0);
  }
  return 0.0;
}

double EntropySpec::rho_unchecked(double x) const {
  switch (family_) {
    case EntropyFamily::Exponential: return std::exp(x);
    case EntropyFamily::EmpiricalLikelihood: return -1.0 / x;
    case EntropyFamily::Hellinger: return 4.0 / (x * x);
    case EntropyFamily::Renyi: return std::pow(order_ * x, 1.0 / order_);
  }
  return 0.0;
}

double EntropySpec::rho_prime_unchecked(double x) const {
  switch (family_) {
    case EntropyFamily::Exponential: return std::exp(x);
    case EntropyFamily::EmpiricalLikelihood: return 1.0 / (x * x);
    case EntropyFamily::Hellinger: return -8.0 / (x * x * x);
    case EntropyFamily::Renyi: return std::pow(order_ * x, 1.0 / order_ - 1.0);
  }
  return 0.0;
}

double EntropySpec::rho(double x) const {
  if (!dual_domain().contains(x)) domain_error("dual argument outside domain of rho", x);
  return rho_unchecked(x);
}

double EntropySpec::rho_prime(double x) const {
  if (!dual_domain().contains(x)) domain_error("dual argument outside domain of rho'", x);
  return rho_prime_unchecked(x);
}

double g_value(const EntropySpec& spec, double w) { return spec.g(w); }
double rho(const EntropySpec& spec, double x) { return spec.rho(x); }
double rho_prime(const EntropySpec& spec, double x) { return spec.rho_prime(x); }

}  // namespace entbal
