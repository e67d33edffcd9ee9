#pragma once

// Prior log-densities with exact partial derivatives, and the element-wise
// transforms between unconstrained and constrained coordinates.

#include <cctype>
#include <cmath>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "ssmc/dataset.hpp"
#include "ssmc/error.hpp"

namespace ssmc {

enum class PriorFamily { normal, student_t, cauchy, half_student_t, half_cauchy };

inline bool is_half(PriorFamily f) noexcept {
  return f == PriorFamily::half_student_t || f == PriorFamily::half_cauchy;
}

struct PriorSpec {
  PriorFamily family = PriorFamily::normal;
  double df = 0.0;  // Student-t only
  double loc = 0.0;
  double scale = 1.0;

  static PriorSpec normal(double loc, double scale) {
    return {PriorFamily::normal, 0.0, loc, scale};
  }
  static PriorSpec student_t(double df, double loc, double scale) {
    return {PriorFamily::student_t, df, loc, scale};
  }
  static PriorSpec cauchy(double loc, double scale) {
    return {PriorFamily::cauchy, 0.0, loc, scale};
  }
  static PriorSpec half_student_t(double df, double loc, double scale) {
    return {PriorFamily::half_student_t, df, loc, scale};
  }
  static PriorSpec half_cauchy(double loc, double scale) {
    return {PriorFamily::half_cauchy, 0.0, loc, scale};
  }

  void validate() const {
    if (!(scale > 0.0) || !std::isfinite(scale)) throw ConfigError("prior scale must be > 0");
    if (!std::isfinite(loc)) throw ConfigError("prior location must be finite");
    if ((family == PriorFamily::student_t || family == PriorFamily::half_student_t) &&
        !(df > 0.0))
      throw ConfigError("Student-t prior needs df > 0");
  }

  friend bool operator==(const PriorSpec&, const PriorSpec&) = default;
};

struct LpdfGrad {
  double value;
  double d_x;
};

/// Value and partials with respect to the point and both parameters.
struct LpdfPartials {
  double value;
  double d_x;
  double d_loc;
  double d_scale;
};

/// Normalized log-density of `family` at x with the given location/scale.
/// Half-families are the symmetric density plus log 2 on [0, ∞); the
/// truncation constant does not depend on loc, so for loc ≠ 0 the result is
/// correct only up to a term in (loc, scale). Throws OutOfSupport for a
/// half-family at x < 0.
inline LpdfPartials lpdf_partials(PriorFamily family, double df, double x, double loc,
                                  double scale) {
  using std::numbers::pi;
  if (is_half(family) && x < 0.0)
    throw OutOfSupport("half-family prior evaluated at negative value");
  const double z = (x - loc) / scale;
  double value = -std::log(scale);
  double dlogk_dz;  // derivative of the kernel's log w.r.t. z
  switch (family) {
    case PriorFamily::normal:
      value += -0.5 * std::log(2.0 * pi) - 0.5 * z * z;
      dlogk_dz = -z;
      break;
    case PriorFamily::student_t:
    case PriorFamily::half_student_t: {
      const double half_df1 = 0.5 * (df + 1.0);
      value += std::lgamma(half_df1) - std::lgamma(0.5 * df) - 0.5 * std::log(df * pi) -
               half_df1 * std::log1p(z * z / df);
      dlogk_dz = -(df + 1.0) * z / (df + z * z);
      break;
    }
    case PriorFamily::cauchy:
    case PriorFamily::half_cauchy:
      value += -std::log(pi) - std::log1p(z * z);
      dlogk_dz = -2.0 * z / (1.0 + z * z);
      break;
  }
  if (is_half(family)) value += std::numbers::ln2;
  return {value, dlogk_dz / scale, -dlogk_dz / scale, -(1.0 + z * dlogk_dz) / scale};
}

inline LpdfGrad lpdf_grad(const PriorSpec& spec, double x) {
  const auto r = lpdf_partials(spec.family, spec.df, x, spec.loc, spec.scale);
  return {r.value, r.d_x};
}

/// "normal(0,10)", "student_t(3,0,3.7)", "half_cauchy(0,1)", ...
inline PriorSpec parse_prior(std::string_view text) {
  std::string s;
  for (char c : text)
    if (!std::isspace(static_cast<unsigned char>(c))) s.push_back(c);
  const auto open = s.find('(');
  if (open == std::string::npos || s.back() != ')')
    throw ConfigError("prior must look like family(args): '" + std::string(text) + "'");
  const std::string name = s.substr(0, open);
  std::vector<double> args;
  std::string_view inner(s.data() + open + 1, s.size() - open - 2);
  while (!inner.empty()) {
    const auto comma = inner.find(',');
    args.push_back(parse_double(inner.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    inner.remove_prefix(comma + 1);
  }
  auto want = [&](std::size_t k) {
    if (args.size() != k)
      throw ConfigError("prior '" + name + "' takes " + std::to_string(k) + " arguments");
  };
  PriorSpec spec;
  if (name == "normal") {
    want(2);
    spec = PriorSpec::normal(args[0], args[1]);
  } else if (name == "student_t") {
    want(3);
    spec = PriorSpec::student_t(args[0], args[1], args[2]);
  } else if (name == "cauchy") {
    want(2);
    spec = PriorSpec::cauchy(args[0], args[1]);
  } else if (name == "half_student_t") {
    want(3);
    spec = PriorSpec::half_student_t(args[0], args[1], args[2]);
  } else if (name == "half_cauchy") {
    want(2);
    spec = PriorSpec::half_cauchy(args[0], args[1]);
  } else {
    throw ConfigError("unknown prior family '" + name + "'");
  }
  spec.validate();
  return spec;
}

inline std::string to_string(const PriorSpec& s) {
  auto f = [](double v) { return format_double(v); };
  switch (s.family) {
    case PriorFamily::normal:
      return "normal(" + f(s.loc) + "," + f(s.scale) + ")";
    case PriorFamily::student_t:
      return "student_t(" + f(s.df) + "," + f(s.loc) + "," + f(s.scale) + ")";
    case PriorFamily::cauchy:
      return "cauchy(" + f(s.loc) + "," + f(s.scale) + ")";
    case PriorFamily::half_student_t:
      return "half_student_t(" + f(s.df) + "," + f(s.loc) + "," + f(s.scale) + ")";
    case PriorFamily::half_cauchy:
      return "half_cauchy(" + f(s.loc) + "," + f(s.scale) + ")";
  }
  return {};
}

enum class Transform { identity, log };

struct Constrained {
  double value;
  double log_jacobian;
};

inline Constrained transform_forward(Transform t, double unconstrained) noexcept {
  if (t == Transform::log) return {std::exp(unconstrained), unconstrained};
  return {unconstrained, 0.0};
}

/// Inverse of transform_forward.
inline double transform_inverse(Transform t, double constrained) {
  if (t == Transform::log) {
    if (!(constrained > 0.0)) throw OutOfSupport("log transform needs a positive value");
    return std::log(constrained);
  }
  return constrained;
}

}  // namespace ssmc
