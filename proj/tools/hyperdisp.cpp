// hyperdisp: kernels, spectral measures, propagators, resonance scans and ground states on H^{n+1}.

#include <CLI11.hpp>
#include <Eigen/Core>
#include <boost/version.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <json.hpp>

#include "cli_support.hpp"
#include "hyperdisp/matrix_system.hpp"
#include "hyperdisp/perturbed.hpp"
#include "hyperdisp/propagator.hpp"
#include "hyperdisp/selftest.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace hyperdisp;
using cli::Config;

namespace {

constexpr const char* kVersion = "0.1.0";

struct KeyDef {
  const char* key;
  const char* def;
  const char* help;
};

const std::vector<KeyDef> kCommon = {
    {"n", "2", "dimension n (space is H^{n+1})"},
    {"out", "out", "output directory"},
};

const std::vector<KeyDef> kPotential = {
    {"potential", "none", "none | exp | table"},
    {"v0", "0.3", "amplitude of v0 e^{-alpha r}"},
    {"alpha", "2", "decay exponent alpha"},
    {"table", "", "CSV with columns r,v (potential = table)"},
};

struct CommandDef {
  const char* name;
  const char* help;
  std::vector<KeyDef> keys;
  bool potential = false;
};

std::vector<CommandDef> commands() {
  return {
      {"kernel", "free resolvent kernel R_0(n/2 + sigma; r)",
       {{"sigma", "1", "sigma as re or re,im"}, {"rmax", "5", "largest r"}, {"nodes", "100", "rows r = k rmax/nodes, k = 1..nodes"}}},
      {"specmeasure", "Im R_0 (and Im R_V) on the critical line, source at the origin",
       {{"lambda", "0.1:10:50", "lo:hi:count, linear"}, {"radii", "0,0.5,1,2", "comma list"}},
       true},
      {"propagate", "kernel of e^{it(-Delta [+ V])} P_c from the origin, or of e^{itH} for --matrix",
       {{"t", "1:100:12", "lo:hi:count, log-spaced (t >= 1)"},
        {"radii", "0,0.5,1,2", "comma list"},
        {"chi", "1", "frequency split for the high-frequency columns"},
        {"matrix", "false", "matrix operator linearized at an NLS ground state"},
        {"mu", "2", "ground-state frequency (matrix)"},
        {"p", "2", "nonlinearity power (matrix)"},
        {"amplitude", "0.2", "ground-state scaling (matrix)"}},
       true},
      {"decay-fit", "fit sup |kernel| ~ t^e on a propagate CSV",
       {{"input", "out/propagate.csv", "propagate output"}, {"part", "total", "total | high"}}},
      {"resonances", "Fredholm determinant scan over sigma and its zeros",
       {{"region", "0,0,0.05,20", "re_lo,re_hi,im_lo,im_hi"},
        {"nx", "1", "samples in Re sigma"},
        {"ny", "80", "samples in Im sigma"},
        {"lambda_max", "20", "grid resolution target"}},
       true},
      {"boundstate", "NLS ground state by shooting",
       {{"mu", "2", "frequency, > n^2/4"},
        {"p", "1", "power, 0 < p < 4/(n-1)"},
        {"rmax", "20", "outer radius"},
        {"step", "0.005", "sample spacing"},
        {"fit", "8,15", "window for the decay fit"}}},
      {"selftest", "run the acceptance checks", {{"only", "0", "single criterion id, 0 = all"}}},
  };
}

json build_info() {
  json b;
  b["version"] = kVersion;
#ifdef __VERSION__
  b["compiler"] = __VERSION__;
#endif
  b["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
               std::to_string(EIGEN_MINOR_VERSION);
  b["boost"] = BOOST_LIB_VERSION;
  return b;
}

PotentialSpec make_potential(const Config& c) {
  const std::string& form = c.str("potential");
  const double alpha = c.num("alpha");
  if (form == "none") return PotentialSpec::zero(alpha);
  if (form == "exp") return PotentialSpec::exponential(c.num("v0"), alpha);
  if (form == "table") {
    const auto t = cli::read_csv(c.str("table"));
    if (t.header.size() != 2) fail(ErrorCode::precondition, "potential table must have two columns r,v");
    std::vector<double> r, v;
    for (const auto& row : t.rows) {
      r.push_back(row[0]);
      v.push_back(row[1]);
    }
    return PotentialSpec::table(std::move(r), std::move(v), alpha);
  }
  fail(ErrorCode::precondition, "potential must be none, exp or table");
}

json calibration_json(int n) {
  const auto cal = calibrate_spectral_constant(n);
  return {{"c_n_fitted", {cal.fitted.real(), cal.fitted.imag()}},
          {"c_n_analytic", {cal.analytic.real(), cal.analytic.imag()}},
          {"relative_mismatch", cal.relative_mismatch}};
}

struct Run {
  const Config& cfg;
  fs::path dir;
  std::string hash;
  json manifest;

  Run(const Config& c) : cfg(c), dir(c.str("out")), hash(cli::sha256_hex(c.canonical())) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) fail(ErrorCode::io, "cannot create output directory " + dir.string());
    manifest["command"] = c.command();
    manifest["config"] = c.values();
    manifest["config_sha256"] = hash;
    manifest["build"] = build_info();
    manifest["outputs"] = json::array();
  }
  cli::CsvWriter csv(const std::string& name, const std::vector<std::string>& header) {
    manifest["outputs"].push_back(name);
    return cli::CsvWriter(dir / name, hash, header);
  }
  void finish() {
    const fs::path p = dir / (cfg.command() + ".json");
    std::ofstream f(p, std::ios::binary);
    if (!f) fail(ErrorCode::io, "cannot write " + p.string());
    f << manifest.dump(2) << "\n";
  }
};

int cmd_kernel(const Config& c) {
  Run run(c);
  const int n = c.integer("n");
  const cplx sigma = c.complex("sigma");
  const double rmax = c.num("rmax");
  const int nodes = c.integer("nodes");
  require(rmax > 0.0 && nodes >= 1, ErrorCode::precondition, "need rmax > 0 and nodes >= 1");
  const SpectralPoint pt{n, sigma};
  std::vector<cplx> vals(static_cast<std::size_t>(nodes));
  parallel_for(nodes, [&](long k) { vals[k] = r0_kernel(pt, rmax * (k + 1) / nodes); });
  auto out = run.csv("kernel.csv", {"r", "re", "im"});
  for (int k = 0; k < nodes; ++k) out.row({rmax * (k + 1) / nodes, vals[k].real(), vals[k].imag()});
  run.manifest["derived"] = calibration_json(n);
  run.finish();
  return 0;
}

int cmd_specmeasure(const Config& c) {
  Run run(c);
  const int n = c.integer("n");
  const auto lambdas = cli::linear_points(c.range("lambda"));
  const auto radii = c.list("radii");
  const PotentialSpec V = make_potential(c);
  const bool pert = !V.is_zero();
  std::optional<RadialGrid> grid;
  if (pert) grid = perturbation_grid(n, V, std::max(1.0, *std::max_element(lambdas.begin(), lambdas.end())));
  const std::size_t R = radii.size();
  std::vector<double> im0(lambdas.size() * R), imv(lambdas.size() * R);
  parallel_for(static_cast<long>(lambdas.size() * R), [&](long idx) {
    const double l = lambdas[idx / R], r = radii[idx % R];
    im0[idx] = im_r0_critical(n, l, r);
    imv[idx] = pert ? im_rv_kernel(V, n, l, r, *grid) : im0[idx];
  });
  auto out = run.csv("specmeasure.csv", {"lambda", "r", "im_r0", "im_rv"});
  for (std::size_t i = 0; i < im0.size(); ++i) out.row({lambdas[i / R], radii[i % R], im0[i], imv[i]});
  run.manifest["derived"] = calibration_json(n);
  run.finish();
  return 0;
}

int cmd_propagate(const Config& c) {
  Run run(c);
  const int n = c.integer("n");
  const auto tr = c.range("t");
  const auto times = tr.count == 1 ? std::vector<double>{tr.lo} : log_spaced(tr.lo, tr.hi, tr.count);
  for (double t : times) require(t >= 1.0, ErrorCode::precondition, "propagate needs t >= 1");
  const auto radii = c.list("radii");
  for (double r : radii) require(r >= 0.0, ErrorCode::precondition, "radii must be >= 0");
  const double chi = c.num("chi");
  json derived;
  if (c.flag("matrix")) {
    ShootingOptions so;
    const auto state = bound_state_solve(n, c.num("mu"), c.num("p"), so);
    const auto V = linearize(state, c.num("amplitude"));
    derived["bs_order"] = choose_bs_order(n, V.alpha);
    MatrixPropagatorOptions mo;
    mo.chi_scale = chi;
    const MatrixPropagator U(V, radii, mo);
    derived["psi0"] = state.psi0;
    derived["ground_state_decay_rate"] = state.decay_rate;
    derived["alpha"] = V.alpha;
    derived["v0"] = V.v0;
    derived["min_det_modulus"] = U.min_det_modulus();
    std::vector<std::string> head = {"t", "r"};
    for (const char* e : {"k11", "k12", "k21", "k22"})
      for (const char* part : {"re", "im"}) head.push_back(std::string(e) + "_" + part);
    for (const char* e : {"k11", "k12", "k21", "k22"})
      for (const char* part : {"re", "im"}) head.push_back(std::string("high_") + e + "_" + part);
    std::vector<MatrixKernelSample> vals(times.size() * radii.size());
    parallel_for(static_cast<long>(vals.size()), [&](long i) { vals[i] = U(times[i / radii.size()], i % radii.size()); });
    auto out = run.csv("propagate.csv", head);
    for (std::size_t i = 0; i < vals.size(); ++i) {
      std::vector<double> row = {times[i / radii.size()], radii[i % radii.size()]};
      for (const auto* m : {&vals[i].total, &vals[i].high})
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b) {
            row.push_back((*m)(a, b).real());
            row.push_back((*m)(a, b).imag());
          }
      out.row(row);
    }
  } else {
    const PotentialSpec V = make_potential(c);
    std::vector<cplx> tot(times.size() * radii.size()), hi(tot.size());
    if (V.is_zero()) {
      parallel_for(static_cast<long>(tot.size()), [&](long i) {
        const double t = times[i / radii.size()], r = radii[i % radii.size()];
        tot[i] = free_propagator_kernel(n, t, r);
        hi[i] = free_propagator_kernel(n, t, r, {}, chi);
      });
    } else {
      derived["bs_order"] = choose_bs_order(n, V.alpha);
      PerturbedOptions po;
      po.chi_scale = chi;
      const PerturbedPropagator P(V, n, radii, po);
      derived["min_det_modulus"] = P.min_det_modulus();
      derived["growth_exponent"] = P.growth_exponent();
      derived["ibp_terms"] = P.ibp_terms();
      for (std::size_t i = 0; i < tot.size(); ++i) {
        const auto s = P(times[i / radii.size()], i % radii.size());
        tot[i] = s.total;
        hi[i] = s.high;
      }
    }
    auto out = run.csv("propagate.csv", {"t", "r", "re", "im", "high_re", "high_im"});
    for (std::size_t i = 0; i < tot.size(); ++i)
      out.row({times[i / radii.size()], radii[i % radii.size()], tot[i].real(), tot[i].imag(), hi[i].real(), hi[i].imag()});
  }
  run.manifest["derived"] = derived;
  run.finish();
  return 0;
}

int cmd_decay_fit(const Config& c) {
  Run run(c);
  const auto table = cli::read_csv(c.str("input"));
  const std::string part = c.str("part");
  require(part == "total" || part == "high", ErrorCode::precondition, "part must be total or high");
  require(table.header.size() >= 4 && table.header[0] == "t", ErrorCode::precondition, "input is not a propagate CSV");
  // (re, im) column pairs for the requested part
  std::vector<std::size_t> re_cols;
  for (std::size_t j = 2; j + 1 < table.header.size(); ++j) {
    const std::string& h = table.header[j];
    const bool high = h.rfind("high_", 0) == 0;
    if (h.size() >= 2 && h.compare(h.size() - 2, 2, "re") == 0 && high == (part == "high")) re_cols.push_back(j);
  }
  require(!re_cols.empty(), ErrorCode::precondition, "no columns for the requested part");
  std::map<double, double> sup;
  for (const auto& row : table.rows)
    for (std::size_t j : re_cols) sup[row[0]] = std::max(sup[row[0]], std::hypot(row[j], row[j + 1]));
  std::vector<double> ts, ss;
  for (const auto& [t, s] : sup) {
    ts.push_back(t);
    ss.push_back(s);
  }
  const auto fit = fit_decay(ts, ss);
  run.manifest["derived"] = {{"exponent", fit.exponent},
                             {"intercept", fit.intercept},
                             {"residual", fit.residual},
                             {"times", fit.times},
                             {"sups", fit.sups}};
  auto out = run.csv("decay_fit.csv", {"t", "sup"});
  for (std::size_t i = 0; i < ts.size(); ++i) out.row({ts[i], ss[i]});
  run.finish();
  std::printf("exponent %s residual %s\n", cli::format_double(fit.exponent).c_str(), cli::format_double(fit.residual).c_str());
  return 0;
}

int cmd_resonances(const Config& c) {
  Run run(c);
  const int n = c.integer("n");
  PotentialSpec V = c.str("potential") == "none" ? PotentialSpec::exponential(c.num("v0"), c.num("alpha")) : make_potential(c);
  const auto reg = c.list("region");
  require(reg.size() == 4, ErrorCode::precondition, "region must be re_lo,re_hi,im_lo,im_hi");
  const ScanRegion region{reg[0], reg[1], reg[2], reg[3]};
  const RadialGrid grid = perturbation_grid(n, V, c.num("lambda_max"));
  const auto scan = fredholm_det_scan(V, n, region, c.integer("nx"), c.integer("ny"), grid);
  auto out = run.csv("resonances.csv", {"sigma_re", "sigma_im", "det_re", "det_im"});
  for (std::size_t i = 0; i < scan.sigma.size(); ++i)
    out.row({scan.sigma[i].real(), scan.sigma[i].imag(), scan.det[i].real(), scan.det[i].imag()});
  json zeros = json::array();
  for (const auto& z : scan.zeros)
    zeros.push_back({{"sigma", {z.sigma.real(), z.sigma.imag()}}, {"multiplicity", z.multiplicity}, {"det_modulus", z.det_modulus}});
  run.manifest["derived"] = {{"zeros", zeros},
                             {"min_modulus", scan.min_modulus},
                             {"argmin", {scan.argmin.real(), scan.argmin.imag()}},
                             {"grid_nodes", grid.size()}};
  run.finish();
  return 0;
}

int cmd_boundstate(const Config& c) {
  Run run(c);
  const int n = c.integer("n");
  ShootingOptions o;
  o.r_max = c.num("rmax");
  o.step = c.num("step");
  const auto fit = c.list("fit");
  require(fit.size() == 2 && fit[1] > fit[0], ErrorCode::precondition, "fit must be lo,hi with hi > lo");
  o.fit_lo = fit[0];
  o.fit_hi = fit[1];
  const double mu = c.num("mu");
  const auto s = bound_state_solve(n, mu, c.num("p"), o);
  auto out = run.csv("boundstate.csv", {"r", "psi", "dpsi"});
  for (std::size_t i = 0; i < s.r.size(); ++i) out.row({s.r[i], s.psi[i], s.dpsi[i]});
  run.manifest["derived"] = {{"psi0", s.psi0},
                             {"decay_rate", s.decay_rate},
                             {"expected_decay_rate", 0.5 * n + std::sqrt(mu)},
                             {"residual_over_max", bound_state_residual(s, 0.0, std::min(15.0, s.r_max())) / s.psi0},
                             {"match_radius", s.match_radius},
                             {"tail_amplitude", s.tail_amplitude},
                             {"bracket_width", s.bracket_width}};
  run.manifest["tolerances"] = {{"ode_rel_tol", o.ode_tol}, {"bracket_tol", o.tol}};
  run.finish();
  return 0;
}

int cmd_selftest(const Config& c) {
  Run run(c);
  const int only = c.integer("only");
  const int total = static_cast<int>(selftest::criteria().size());
  require(only >= 0 && only <= total, ErrorCode::precondition, "only must be 0 or a criterion id");
  json results = json::array();
  bool all = true;
  for (int id = only ? only : 1; id <= (only ? only : total); ++id) {
    const auto r = selftest::run_criterion(id);
    std::printf("%s\n", r.line().c_str());
    std::fflush(stdout);
    all = all && r.passed;
    results.push_back({{"id", r.id}, {"title", r.title}, {"passed", r.passed}, {"detail", r.detail}});
  }
  run.manifest["derived"] = {{"results", results}, {"all_passed", all}};
  run.finish();
  return all ? 0 : 1;
}

int dispatch(const Config& c) {
  const std::string& k = c.command();
  if (k == "kernel") return cmd_kernel(c);
  if (k == "specmeasure") return cmd_specmeasure(c);
  if (k == "propagate") return cmd_propagate(c);
  if (k == "decay-fit") return cmd_decay_fit(c);
  if (k == "resonances") return cmd_resonances(c);
  if (k == "boundstate") return cmd_boundstate(c);
  return cmd_selftest(c);
}

void print_error(const std::string& code, const std::string& msg, const std::string& command,
                 const std::string& out_dir = "") {
  const json e = {{"error", code}, {"message", msg}, {"command", command}};
  std::cerr << e.dump() << "\n";
  if (out_dir.empty()) return;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  std::ofstream f(fs::path(out_dir) / "error.json", std::ios::binary);
  if (f) f << e.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hyperdisp: dispersive kernels on hyperbolic space"};
  app.require_subcommand(1);
  const auto defs = commands();
  std::map<std::string, std::map<std::string, std::string>> given;
  std::map<std::string, std::string> config_path;
  std::map<std::string, bool> matrix_flag;
  std::map<std::string, CLI::App*> subs;
  for (const auto& d : defs) {
    auto* sub = app.add_subcommand(d.name, d.help);
    subs[d.name] = sub;
    sub->add_option("--config", config_path[d.name], "key = value config file");
    auto add = [&](const KeyDef& k) {
      if (std::string(k.key) == "matrix") {
        sub->add_flag("--matrix", matrix_flag[d.name], k.help);
        return;
      }
      sub->add_option(std::string("--") + k.key, given[d.name][k.key], std::string(k.help) + " [" + k.def + "]");
    };
    for (const auto& k : kCommon) add(k);
    for (const auto& k : d.keys) add(k);
    if (d.potential)
      for (const auto& k : kPotential) add(k);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what(), "");
    return 2;
  }
  std::string name;
  for (const auto& d : defs)
    if (subs[d.name]->parsed()) name = d.name;
  const CommandDef* def = nullptr;
  for (const auto& d : defs)
    if (name == d.name) def = &d;
  auto* sub = subs[name];
  std::string out_dir = sub->count("--out") ? given[name]["out"] : "out";
  try {
    std::map<std::string, std::string> values;
    std::vector<KeyDef> keys = kCommon;
    keys.insert(keys.end(), def->keys.begin(), def->keys.end());
    if (def->potential) keys.insert(keys.end(), kPotential.begin(), kPotential.end());
    for (const auto& k : keys) values[k.key] = k.def;
    if (!config_path[name].empty()) {
      for (const auto& [k, v] : cli::read_config_file(config_path[name])) {
        if (!values.count(k)) fail(ErrorCode::precondition, "unknown config key '" + k + "' for " + name);
        values[k] = v;
      }
    }
    for (const auto& k : keys) {
      if (std::string(k.key) == "matrix") {
        if (matrix_flag[name]) values["matrix"] = "true";
      } else if (sub->count(std::string("--") + k.key) > 0) {
        values[k.key] = given[name][k.key];
      }
    }
    out_dir = values["out"];
    const Config cfg(name, values);
    const int n = cfg.integer("n");
    require(n >= 1 && n <= 64, ErrorCode::precondition, "dimension n must be in [1, 64]");
    if (def->potential && name == "propagate" && !cfg.flag("matrix") && cfg.str("potential") != "none") {
      const PotentialSpec V = make_potential(cfg);
      if (!V.alpha_condition(n))
        fail(ErrorCode::precondition, "decay condition alpha/n > 1 - 1/floor((n+5)/4) fails for alpha = " +
                                          cli::format_double(V.alpha));
    }
    return dispatch(cfg);
  } catch (const Error& e) {
    print_error(to_string(e.code()), e.what(), name, out_dir);
    return 1;
  } catch (const std::exception& e) {
    print_error("internal", e.what(), name, out_dir);
    return 1;
  }
}
