#include "cli.hpp"

#include <CLI11.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "fmed/fmed.hpp"

namespace fmed::cli {
namespace {

namespace fs = std::filesystem;

const std::set<std::string> kCommands{"simulate", "fit", "effects", "bootstrap", "cv", "select-delta", "report"};

bool needs_inputs(const std::string& command) { return command != "simulate"; }

bool stochastic(const std::string& command) {
  return command == "simulate" || command == "bootstrap" || command == "cv" || command == "select-delta";
}

void require_file(const std::string& path, const std::string& flag) {
  if (path.empty()) throw UsageError(flag + " is required");
  if (!fs::is_regular_file(path)) throw UsageError(flag + ": no such file: " + path);
}

Json read_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError(path + ": invalid JSON: " + e.what());
  }
}

double parse_window(const std::string& text, const std::string& where) {
  if (text == "inf") return std::numeric_limits<double>::infinity();
  const double v = parse_double(text, where);
  if (!(v >= 0.0)) throw UsageError(where + ": window must be nonnegative or inf");
  return v;
}

std::string window_label(double delta) {
  if (std::isinf(delta)) return "inf";
  if (delta == 0.0) return "concurrent";
  return format_double(delta);
}

// The inverse of parse_model, so a selected model can be fed back in.
Json term_config(const CovariateTermSpec& spec) {
  Json j;
  j["type"] = to_string(spec.type);
  if (spec.type == ModelType::historical) j["delta"] = window_to_json(spec.window.delta);
  const auto basis = [](const BasisSystem& b) {
    Json out{{"kind", to_string(b.kind())}, {"n_basis", b.size()}};
    if (b.kind() == BasisKind::bspline) out["order"] = b.order();
    return out;
  };
  j["basis"] = basis(spec.basis_t);
  if (spec.basis_s) j["basis_s"] = basis(*spec.basis_s);
  j["operator"] = {{"kind", to_string(spec.op.kind)}};
  if (spec.op.omega) j["operator"]["omega"] = *spec.op.omega;
  if (spec.type == ModelType::concurrent) {
    j["lambda"] = spec.lambda;
  } else {
    j["lambda_s"] = spec.lambda_s;
    j["lambda_t"] = spec.lambda_t;
  }
  return j;
}

Json model_config(const ModelConfig& model) {
  return {{"center", model.options.center},
          {"refine", model.options.refine},
          {"mediator", {{"z", term_config(model.spec.m_on_z)}}},
          {"outcome", {{"z", term_config(model.spec.y_on_z)}, {"m", term_config(model.spec.y_on_m)}}}};
}

struct Inputs {
  FunctionalSample z;
  FunctionalSample m;
  FunctionalSample y;
  ModelConfig model;
};

Inputs load_inputs(const RunConfig& config) {
  FunctionalSample z = read_wide_csv(config.z_path);
  FunctionalSample m = read_wide_csv(config.m_path);
  FunctionalSample y = read_wide_csv(config.y_path);
  validate_aligned({{"z", z}, {"m", m}, {"y", y}});
  ModelConfig model = parse_model(read_json(config.config_path), z.grid().domain_length());
  model.options.threads = config.threads;
  return {std::move(z), std::move(m), std::move(y), std::move(model)};
}

std::string curve_csv(const TimeGrid& grid, const std::vector<std::pair<std::string, const Eigen::VectorXd*>>& cols) {
  std::ostringstream out;
  out << 't';
  for (const auto& c : cols) out << ',' << c.first;
  out << '\n';
  for (std::size_t k = 0; k < grid.size(); ++k) {
    out << format_double(grid.time(k));
    for (const auto& c : cols) out << ',' << format_double((*c.second)[static_cast<Eigen::Index>(k)]);
    out << '\n';
  }
  return out.str();
}

std::string coefficient_csv(const CoefficientEstimate& est, const TimeGrid& grid) {
  const CoefficientGrid g = sample_on_grid(est, grid);
  if (g.type == ModelType::concurrent) return curve_csv(grid, {{"value", &g.curve}});
  std::ostringstream out;
  out << "s,t,value,extrapolated\n";
  for (std::size_t j = 0; j < grid.size(); ++j) {
    for (std::size_t k = 0; k < grid.size(); ++k) {
      const bool inside = j <= k && j >= g.window.start(k);
      out << format_double(grid.time(j)) << ',' << format_double(grid.time(k)) << ','
          << format_double(g.surface(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k))) << ','
          << (inside ? 0 : 1) << '\n';
    }
  }
  return out.str();
}

std::string bands_csv(const BootstrapBands& b) {
  return curve_csv(b.estimate.grid, {{"de", &b.estimate.de},
                                     {"de_lo", &b.de.lower},
                                     {"de_hi", &b.de.upper},
                                     {"ie", &b.estimate.ie},
                                     {"ie_lo", &b.ie.lower},
                                     {"ie_hi", &b.ie.upper}});
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

void add_fit_artifacts(const FittedMediation& fit, std::vector<Artifact>& out) {
  Json j = to_json(fit);
  out.push_back({"fit.json", dump(j)});
  out.push_back({"alpha.csv", coefficient_csv(fit.alpha, fit.grid)});
  out.push_back({"gamma.csv", coefficient_csv(fit.gamma, fit.grid)});
  out.push_back({"beta.csv", coefficient_csv(fit.beta, fit.grid)});
}

void add_effect_artifacts(const FittedMediation& fit, const FunctionalSample& z, bool per_subject, int threads,
                          std::vector<Artifact>& out) {
  const auto n = static_cast<Eigen::Index>(fit.grid.size());
  const EffectCurves e = effects(fit, Eigen::VectorXd::Ones(n), Eigen::VectorXd::Zero(n));
  out.push_back({"effects.csv", curve_csv(fit.grid, {{"de", &e.de}, {"ie", &e.ie}})});
  if (!per_subject) return;
  const SubjectEffects s = per_subject_effects(fit, z, threads);
  std::ostringstream csv;
  csv << "subject_id,t,de,ie\n";
  for (std::size_t i = 0; i < z.n_subjects(); ++i) {
    for (std::size_t k = 0; k < fit.grid.size(); ++k) {
      const auto r = static_cast<Eigen::Index>(i);
      const auto c = static_cast<Eigen::Index>(k);
      csv << z.ids()[i] << ',' << format_double(fit.grid.time(k)) << ',' << format_double(s.de(r, c)) << ','
          << format_double(s.ie(r, c)) << '\n';
    }
  }
  out.push_back({"effects_subjects.csv", csv.str()});
}

std::vector<Artifact> run_simulate(const RunConfig& c) {
  const TimeGrid grid(c.n_time, c.tr);
  const double period = grid.domain_length();
  SimTruth truth = c.model == "concurrent" ? SimTruth::benchmark_concurrent(period)
                                           : SimTruth::benchmark_historical(parse_window(c.delta, "--delta"), period);
  truth.noise_m = c.noise;
  truth.noise_y = c.noise;
  const SimDataset d = gen_dataset(truth, static_cast<std::size_t>(c.n_subjects), grid, *c.seed, {}, c.threads);
  std::vector<Artifact> out;
  for (const auto& [name, sample] : {std::pair{"z.csv", &d.z}, std::pair{"m.csv", &d.m}, std::pair{"y.csv", &d.y}}) {
    std::ostringstream csv;
    write_wide_csv(csv, *sample);
    out.push_back({name, csv.str()});
  }
  std::ostringstream design;
  design << "subject_id,onset,condition\n";
  for (std::size_t i = 0; i < d.designs.size(); ++i) {
    for (std::size_t e = 0; e < d.designs[i].onsets.size(); ++e) {
      design << d.z.ids()[i] << ',' << format_double(d.designs[i].onsets[e]) << ',' << d.designs[i].conditions[e]
             << '\n';
    }
  }
  out.push_back({"design.csv", design.str()});
  Json truth_json{{"model", c.model},
                  {"seed", *c.seed},
                  {"n_subjects", c.n_subjects},
                  {"n_time", c.n_time},
                  {"tr", c.tr},
                  {"noise_sd", c.noise}};
  if (c.model == "historical") truth_json["delta"] = window_to_json(parse_window(c.delta, "--delta"));
  out.push_back({"truth.json", dump(truth_json)});
  return out;
}

std::vector<Artifact> run_cv(const RunConfig& c, const Inputs& in) {
  const MediationProblem problem(in.z, in.m, in.y, in.model.spec, in.model.options);
  CvOptions options{static_cast<std::size_t>(c.folds), *c.seed, c.threads, {}, 9};
  for (const auto& g : c.grid) options.grid.push_back(parse_double(g, "--grid"));
  const MediationCv cv = cross_validate_lambda(problem, options);
  const auto table = [&](const CvResult& r, const std::vector<std::string>& names) {
    std::ostringstream csv;
    csv << "candidate";
    for (const auto& n : names) csv << ",lambda_" << n;
    for (Eigen::Index f = 0; f < r.fold_mspe.cols(); ++f) csv << ",fold" << f + 1;
    csv << ",mean\n";
    for (std::size_t i = 0; i < r.candidates.size(); ++i) {
      csv << i;
      for (double l : r.candidates[i]) csv << ',' << format_double(l);
      for (Eigen::Index f = 0; f < r.fold_mspe.cols(); ++f) {
        csv << ',' << format_double(r.fold_mspe(static_cast<Eigen::Index>(i), f));
      }
      csv << ',' << format_double(r.mean_mspe[static_cast<Eigen::Index>(i)]) << '\n';
    }
    return csv.str();
  };
  ModelConfig selected = in.model;
  selected.spec = cv.selected;
  return {{"cv_mediator.csv", table(cv.mediator, {"z"})},
          {"cv_outcome.csv", table(cv.outcome, {"z", "m"})},
          {"model_selected.json", dump(model_config(selected))}};
}

std::vector<Artifact> run_select_delta(const RunConfig& c, const Inputs& in) {
  if (c.grid.empty()) throw UsageError("--grid is required for select-delta");
  std::vector<Window> grid;
  for (const auto& g : c.grid) grid.push_back(Window{parse_window(g, "--grid")});
  const CvOptions options{static_cast<std::size_t>(c.folds), *c.seed, c.threads, {}, 9};
  const DeltaSelection sel =
      select_delta(in.z, in.m, in.y, in.model.spec, DeltaGrids{grid, grid, grid}, options, in.model.options,
                   c.tune_lambda);
  std::ostringstream csv;
  csv << "model,window_m";
  for (const auto& w : grid) csv << ',' << window_label(w.delta);
  csv << "\nM,";
  for (Eigen::Index a = 0; a < sel.m_mspe.size(); ++a) csv << ',' << format_double(sel.m_mspe[a]);
  csv << '\n';
  for (Eigen::Index r = 0; r < sel.y_mspe.rows(); ++r) {
    csv << "Y," << window_label(grid[static_cast<std::size_t>(r)].delta);
    for (Eigen::Index col = 0; col < sel.y_mspe.cols(); ++col) csv << ',' << format_double(sel.y_mspe(r, col));
    csv << '\n';
  }
  const Json selection{{"delta_mz", window_to_json(sel.m_z.delta)},
                       {"delta_yz", window_to_json(sel.y_z.delta)},
                       {"delta_ym", window_to_json(sel.y_m.delta)},
                       {"tune_lambda", c.tune_lambda},
                       {"folds", c.folds},
                       {"seed", *c.seed}};
  return {{"delta_mspe.csv", csv.str()}, {"selection.json", dump(selection)}};
}

std::vector<Artifact> run_bootstrap(const RunConfig& c, const Inputs& in) {
  const MediationProblem problem(in.z, in.m, in.y, in.model.spec, in.model.options);
  const auto n = static_cast<Eigen::Index>(problem.grid().size());
  std::vector<Contrast> contrasts{{Eigen::VectorXd::Ones(n), Eigen::VectorXd::Zero(n)}};
  if (c.per_subject) {
    for (std::size_t i = 0; i < in.z.n_subjects(); ++i) contrasts.push_back({in.z.subject(i), Eigen::VectorXd::Zero(n)});
  }
  const BandMethod method = c.method == "percentile" ? BandMethod::percentile : BandMethod::bias_corrected;
  const BootstrapRun run = bootstrap_draws(
      problem, contrasts, BootstrapOptions{static_cast<std::size_t>(c.replicates), *c.seed, c.threads, 0.05});
  std::vector<Artifact> out;
  add_fit_artifacts(problem.fit(), out);
  out.push_back({"bands.csv", bands_csv(bands(run, 0, c.level, method))});
  for (std::size_t i = 1; i < contrasts.size(); ++i) {
    out.push_back({"bands_subject_" + in.z.ids()[i - 1] + ".csv", bands_csv(bands(run, i, c.level, method))});
  }
  out.push_back({"bootstrap.json", dump(Json{{"replicates", run.requested},
                                             {"dropped", run.dropped},
                                             {"level", c.level},
                                             {"method", to_string(method)},
                                             {"seed", run.seed}})});
  return out;
}

}  // namespace

RunConfig parse_config(const std::vector<std::string>& args) {
  if (args.empty()) throw UsageError("missing command; expected one of simulate, fit, effects, bootstrap, cv, select-delta, report");
  RunConfig c;
  c.command = args[0];
  if (!kCommands.count(c.command)) throw UsageError("unknown command '" + c.command + "'");

  CLI::App app{"functional mediation analysis", "fmed " + c.command};
  std::uint64_t seed = 0;
  std::string grid;
  app.add_option("--out", c.out_dir, "output directory")->required();
  app.add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
  auto* seed_opt = app.add_option("--seed", seed, "master seed");
  if (c.command == "simulate") {
    app.add_option("--model", c.model)->check(CLI::IsMember({"concurrent", "historical"}));
    app.add_option("--delta", c.delta);
    app.add_option("--n", c.n_subjects)->check(CLI::PositiveNumber);
    app.add_option("--n-time", c.n_time)->check(CLI::Range(3, 1 << 20));
    app.add_option("--tr", c.tr)->check(CLI::PositiveNumber);
    app.add_option("--noise", c.noise)->check(CLI::NonNegativeNumber);
  } else {
    app.add_option("--z", c.z_path)->required();
    app.add_option("--m", c.m_path)->required();
    app.add_option("--y", c.y_path)->required();
    app.add_option("--config", c.config_path)->required();
  }
  if (c.command == "effects" || c.command == "bootstrap" || c.command == "report") {
    app.add_flag("--per-subject", c.per_subject);
  }
  if (c.command == "bootstrap") {
    app.add_option("--replicates", c.replicates)->check(CLI::Range(50, 1 << 24));
    app.add_option("--level", c.level)->check(CLI::Range(0.0, 1.0));
    app.add_option("--method", c.method)->check(CLI::IsMember({"percentile", "bias_corrected"}));
  }
  if (c.command == "cv" || c.command == "select-delta") {
    app.add_option("--folds", c.folds)->check(CLI::Range(2, 1 << 20));
    app.add_option("--grid", grid);
  }
  if (c.command == "select-delta") app.add_flag("--tune-lambda", c.tune_lambda);

  std::vector<std::string> rest(args.begin() + 1, args.end());
  std::reverse(rest.begin(), rest.end());
  try {
    app.parse(rest);
  } catch (const CLI::CallForHelp&) {
    throw;
  } catch (const CLI::ParseError& e) {
    throw UsageError(e.what());
  }
  if (seed_opt->count() > 0) c.seed = seed;
  if (stochastic(c.command) && !c.seed) throw UsageError("--seed is required for " + c.command);
  if (c.command == "simulate" && c.model == "historical") parse_window(c.delta, "--delta");
  if (!grid.empty()) {
    std::string item;
    std::istringstream parts(grid);
    while (std::getline(parts, item, ',')) c.grid.push_back(item);
    for (const auto& g : c.grid) {
      if (c.command == "select-delta") {
        parse_window(g, "--grid");
      } else if (const double v = parse_double(g, "--grid"); !(v >= 0.0) || !std::isfinite(v)) {
        throw UsageError("--grid: lambda values must be nonnegative");
      }
    }
  }
  if (needs_inputs(c.command)) {
    require_file(c.z_path, "--z");
    require_file(c.m_path, "--m");
    require_file(c.y_path, "--y");
    require_file(c.config_path, "--config");
    // Schema check before any data is read; bases are rebuilt on the data grid later.
    parse_model(read_json(c.config_path), 1.0);
  }
  return c;
}

std::vector<Artifact> run(const RunConfig& config) {
  if (config.command == "simulate") return run_simulate(config);
  const Inputs in = load_inputs(config);
  if (config.command == "cv") return run_cv(config, in);
  if (config.command == "select-delta") return run_select_delta(config, in);
  if (config.command == "bootstrap") return run_bootstrap(config, in);

  const FittedMediation fit = fit_mediation(in.z, in.m, in.y, in.model.spec, in.model.options);
  std::vector<Artifact> out;
  if (config.command == "fit" || config.command == "report") add_fit_artifacts(fit, out);
  if (config.command == "effects" || config.command == "report") {
    if (config.command == "effects") out.push_back({"fit.json", dump(to_json(fit))});
    add_effect_artifacts(fit, in.z, config.per_subject, config.threads, out);
  }
  return out;
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 digest failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < length; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xF];
  }
  return out;
}

void write_report(const std::vector<Artifact>& artifacts, const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw IoError("cannot create output directory " + out_dir);
  std::vector<const Artifact*> sorted;
  for (const auto& a : artifacts) sorted.push_back(&a);
  std::sort(sorted.begin(), sorted.end(), [](const auto* a, const auto* b) { return a->name < b->name; });
  Json files = Json::array();
  const auto write = [&](const std::string& name, const std::string& content) {
    const fs::path path = fs::path(out_dir) / name;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << content;
    out.close();
    if (!out) throw IoError("write failed for " + path.string());
  };
  for (const auto* a : sorted) {
    write(a->name, a->content);
    files.push_back({{"name", a->name}, {"bytes", a->content.size()}, {"sha256", sha256_hex(a->content)}});
  }
  write("manifest.json", dump(Json{{"files", files}}));
}

int main_entry(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig config;
  try {
    config = parse_config(args);
  } catch (const CLI::CallForHelp&) {
    out << "usage: fmed <simulate|fit|effects|bootstrap|cv|select-delta|report> [options]; see README.md\n";
    return ExitCode::ok;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return ExitCode::usage;
  }
  try {
    write_report(run(config), config.out_dir);
  } catch (const SingularSystemError& e) {
    err << "numerical failure: " << e.what() << " (condition estimate " << e.condition_estimate() << ")\n";
    return ExitCode::numerical;
  } catch (const IoError& e) {
    err << "i/o failure: " << e.what() << '\n';
    return ExitCode::io;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return ExitCode::usage;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return 1;
  }
  return ExitCode::ok;
}

}  // namespace fmed::cli
