#pragma once

#include <json.hpp>

#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "fmed/basis.hpp"
#include "fmed/coefficient.hpp"
#include "fmed/error.hpp"
#include "fmed/mediation.hpp"
#include "fmed/quadrature.hpp"
#include "fmed/regression.hpp"

namespace fmed {

using Json = nlohmann::ordered_json;

// JSON cannot carry infinities; unbounded windows are written as "inf".
inline Json window_to_json(double delta) {
  if (std::isinf(delta)) return "inf";
  return delta;
}

inline Json to_json(const BasisSystem& basis) {
  Json j;
  j["kind"] = to_string(basis.kind());
  j["n_basis"] = basis.size();
  if (basis.kind() == BasisKind::bspline) j["order"] = basis.order();
  j["domain_end"] = basis.domain_end();
  return j;
}

inline Json to_json(const LinDiffOp& op) {
  Json j;
  j["kind"] = to_string(op.kind);
  if (op.omega) j["omega"] = *op.omega;
  return j;
}

inline Json to_json(const CovariateTermSpec& spec) {
  Json j;
  j["name"] = spec.name;
  j["type"] = to_string(spec.type);
  if (spec.type == ModelType::historical) j["delta"] = window_to_json(spec.window.delta);
  j["basis"] = to_json(spec.basis_t);
  if (spec.basis_s) j["basis_s"] = to_json(*spec.basis_s);
  j["operator"] = to_json(spec.op);
  if (spec.type == ModelType::concurrent) {
    j["lambda"] = spec.lambda;
  } else {
    j["lambda_s"] = spec.lambda_s;
    j["lambda_t"] = spec.lambda_t;
  }
  return j;
}

// Surface coefficients are written row-major: coeffs[k][l] = G(k, l).
inline Json to_json(const CoefficientEstimate& est) {
  Json j;
  if (const auto* curve = std::get_if<CurveEstimate>(&est)) {
    j["type"] = "curve";
    j["coeffs"] = std::vector<double>(curve->coeffs.data(), curve->coeffs.data() + curve->coeffs.size());
    return j;
  }
  const auto& surface = std::get<SurfaceEstimate>(est);
  j["type"] = "surface";
  j["delta"] = window_to_json(surface.window.delta);
  Json rows = Json::array();
  for (Eigen::Index k = 0; k < surface.coeffs.rows(); ++k) {
    std::vector<double> row(static_cast<std::size_t>(surface.coeffs.cols()));
    for (Eigen::Index l = 0; l < surface.coeffs.cols(); ++l) row[static_cast<std::size_t>(l)] = surface.coeffs(k, l);
    rows.push_back(row);
  }
  j["coeffs"] = rows;
  return j;
}

inline Json to_json(const FitDiagnostics& d) {
  Json j;
  j["condition_estimate"] = std::isfinite(d.condition_estimate) ? Json(d.condition_estimate) : Json("inf");
  j["jitter_applied"] = d.jitter_applied;
  j["jitter"] = d.jitter;
  j["training_mspe"] = d.training_mspe;
  j["warnings"] = d.warnings;
  return j;
}

inline Json to_json(const FittedRegression& fit) {
  Json j;
  j["grid"] = {{"n_points", fit.grid.size()}, {"dt", fit.grid.dt()}};
  Json terms = Json::array();
  for (const auto& t : fit.terms) terms.push_back({{"spec", to_json(t.spec)}, {"estimate", to_json(t.estimate)}});
  j["terms"] = terms;
  j["diagnostics"] = to_json(fit.diagnostics);
  return j;
}

inline Json to_json(const FittedMediation& fit) {
  Json j;
  j["combo"] = fit.spec.combo();
  j["mediator"] = to_json(fit.mediator_fit);
  j["outcome"] = to_json(fit.outcome_fit);
  return j;
}

// Model configuration shared by all commands:
// {
//   "center": true, "refine": 4,
//   "mediator": {"z": TERM},
//   "outcome":  {"z": TERM, "m": TERM}
// }
// TERM = {"type": "concurrent" | "historical", "delta": number | "inf",
//         "basis": {"kind": "fourier" | "bspline" | "monomial", "n_basis": K, "order": 4},
//         "basis_s": {...}, "operator": {"kind": "curvature" | "harmonic", "omega": w},
//         "lambda": l, "lambda_s": ls, "lambda_t": lt}
struct ModelConfig {
  MediationSpec spec;
  FitOptions options;
};

class ConfigError : public InvalidArgument {
 public:
  ConfigError(std::string field, const std::string& what)
      : InvalidArgument(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

namespace detail {

inline const Json& require(const Json& j, const std::string& key, const std::string& path) {
  const std::string field = path.empty() ? key : path + "." + key;
  if (!j.is_object()) throw ConfigError(path.empty() ? "model" : path, "must be an object");
  if (!j.contains(key)) throw ConfigError(field, "missing");
  return j.at(key);
}

inline double number(const Json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError(path, "must be a number");
  return j.get<double>();
}

inline double nonnegative(const Json& j, const std::string& path) {
  const double v = number(j, path);
  if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(path, "must be a nonnegative finite number");
  return v;
}

inline int positive_int(const Json& j, const std::string& path) {
  if (!j.is_number_integer() || j.get<long long>() < 1) throw ConfigError(path, "must be a positive integer");
  return j.get<int>();
}

inline double parse_delta(const Json& j, const std::string& path) {
  if (j.is_string() && j.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
  const double v = number(j, path);
  if (!(v >= 0.0)) throw ConfigError(path, "must be nonnegative or \"inf\"");
  return v;
}

inline BasisSystem parse_basis(const Json& j, double domain_end, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path, "must be an object");
  const Json& kind = require(j, "kind", path);
  const int k = positive_int(require(j, "n_basis", path), path + ".n_basis");
  const std::string name = kind.is_string() ? kind.get<std::string>() : "";
  try {
    if (name == "fourier") return BasisSystem::fourier(k, domain_end);
    if (name == "monomial") return BasisSystem::monomial(k, domain_end);
    if (name == "bspline") {
      const int order = j.contains("order") ? positive_int(j.at("order"), path + ".order") : 4;
      return BasisSystem::bspline(k, domain_end, order);
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(path, e.what());
  }
  throw ConfigError(path + ".kind", "must be one of fourier, bspline, monomial");
}

inline LinDiffOp parse_operator(const Json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path, "must be an object");
  const Json& kind = require(j, "kind", path);
  const std::string name = kind.is_string() ? kind.get<std::string>() : "";
  if (name == "curvature") return LinDiffOp::curvature();
  if (name == "harmonic") {
    if (!j.contains("omega")) return LinDiffOp::harmonic();
    const double w = number(j.at("omega"), path + ".omega");
    if (!(w > 0.0)) throw ConfigError(path + ".omega", "must be positive");
    return LinDiffOp::harmonic(w);
  }
  throw ConfigError(path + ".kind", "must be curvature or harmonic");
}

inline CovariateTermSpec parse_term(const Json& j, const std::string& name, double domain_end,
                                    const std::string& path) {
  if (!j.is_object()) throw ConfigError(path, "must be an object");
  const Json& type = require(j, "type", path);
  const std::string kind = type.is_string() ? type.get<std::string>() : "";
  const BasisSystem basis = parse_basis(require(j, "basis", path), domain_end, path + ".basis");
  const LinDiffOp op = j.contains("operator") ? parse_operator(j.at("operator"), path + ".operator") : LinDiffOp::curvature();
  const auto lambda_or = [&](const char* key) {
    return j.contains(key) ? nonnegative(j.at(key), path + "." + key) : 0.0;
  };
  try {
    if (kind == "concurrent") return CovariateTermSpec::concurrent(name, basis, op, lambda_or("lambda"));
    if (kind == "historical") {
      const double delta = parse_delta(require(j, "delta", path), path + ".delta");
      const BasisSystem basis_s =
          j.contains("basis_s") ? parse_basis(j.at("basis_s"), domain_end, path + ".basis_s") : basis;
      const double shared = lambda_or("lambda");
      const double ls = j.contains("lambda_s") ? lambda_or("lambda_s") : shared;
      const double lt = j.contains("lambda_t") ? lambda_or("lambda_t") : shared;
      return CovariateTermSpec::historical(name, Window{delta}, basis_s, basis, op, ls, lt);
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(path, e.what());
  }
  throw ConfigError(path + ".type", "must be concurrent or historical");
}

}  // namespace detail

// Bases are built on [0, domain_end]; pass the data grid's domain length.
inline ModelConfig parse_model(const Json& j, double domain_end) {
  if (!j.is_object()) throw ConfigError("model", "must be a JSON object");
  const Json& mediator = detail::require(j, "mediator", "");
  const Json& outcome = detail::require(j, "outcome", "");
  CovariateTermSpec alpha = detail::parse_term(detail::require(mediator, "z", "mediator"), "Z", domain_end, "mediator.z");
  CovariateTermSpec gamma = detail::parse_term(detail::require(outcome, "z", "outcome"), "Z", domain_end, "outcome.z");
  CovariateTermSpec beta = detail::parse_term(detail::require(outcome, "m", "outcome"), "M", domain_end, "outcome.m");
  ModelConfig out{{std::move(alpha), std::move(gamma), std::move(beta)}, FitOptions{}};
  if (j.contains("center")) {
    if (!j.at("center").is_boolean()) throw ConfigError("center", "must be true or false");
    out.options.center = j.at("center").get<bool>();
  }
  if (j.contains("refine")) {
    out.options.refine = detail::positive_int(j.at("refine"), "refine");
    if (out.options.refine < 4) throw ConfigError("refine", "must be at least 4");
  }
  return out;
}

}  // namespace fmed
