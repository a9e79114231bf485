#include <omp.h>

#include <CLI11.hpp>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cqte/bootstrap.hpp"
#include "cqte/panel.hpp"
#include "cqte/simulate.hpp"
#include "cqte/stvcdp.hpp"
#include "cqte/vcdp.hpp"

using json = nlohmann::ordered_json;
using namespace cqte;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read input file '" + path + "'");
  // FNV-1a over the raw bytes; enough to pin inputs in the manifest
  std::uint64_t h = 1469598103934665603ULL;
  char c;
  while (in.get(c)) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write output file '" + path + "'");
  out << content;
}

// Every run records what it did and what it saw; replaying the stored argv
// reproduces the outputs bit-exactly because all randomness flows from --seed.
struct Manifest {
  std::vector<std::string> argv;
  json config;
  std::map<std::string, std::string> input_digests;
  std::vector<std::string> outputs;
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

  void write(const std::string& out_base) {
    json j;
    j["tool"] = "cqte";
    j["version"] = kVersion;
    j["command"] = argv;
    j["config"] = config;
    j["inputs"] = input_digests;
    j["outputs"] = outputs;
    j["duration_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
            .count();
    write_text(out_base + ".manifest.json", j.dump(2) + "\n");
  }
};

struct CommonOpts {
  double tau = -1.0;
  double h = 0.0;
  double h_st = 0.0;
  std::string kernel = "epanechnikov";
  std::string time_window;
  int threads = 0;
  std::string out;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool need_tau) {
  // free the -h short flag for the bandwidth option
  cmd->set_help_flag("--help", "print help");
  auto* tau = cmd->add_option("--tau", o.tau, "quantile level in (0, 1)")
                  ->check(CLI::Range(1e-9, 1.0 - 1e-9).description("(0, 1)"));
  if (need_tau) tau->required();
  cmd->add_option("--h", o.h, "temporal bandwidth (default 0.9 n^-0.26)");
  cmd->add_option("--h-st", o.h_st, "spatial bandwidth (spatial mode)");
  cmd->add_option("--kernel", o.kernel, "epanechnikov|triangular|quartic");
  cmd->add_option("--time-window", o.time_window,
                  "keep intervals lo:hi (1-based, inclusive)");
  cmd->add_option("--threads", o.threads, "OpenMP thread cap");
  cmd->add_option("--out", o.out, "output basename (default: stdout)");
}

void apply_threads(int threads) {
  if (threads <= 0) {
    const char* env = std::getenv("CQTE_THREADS");
    if (env) threads = std::atoi(env);
  }
  if (threads > 0) omp_set_num_threads(threads);
}

KernelSpec make_spec(const CommonOpts& o, int n, const Eigen::MatrixXd* coords) {
  KernelSpec spec;
  spec.kernel = kernel_from_name(o.kernel);
  spec.h = o.h > 0.0 ? o.h : default_temporal_bandwidth(n);
  if (coords)
    spec.h_st = o.h_st > 0.0 ? o.h_st : default_spatial_bandwidth(*coords);
  spec.validate(coords != nullptr);
  return spec;
}

std::pair<int, int> parse_window(const std::string& s, int m) {
  const auto colon = s.find(':');
  if (colon == std::string::npos)
    throw ValidationError("--time-window expects lo:hi, got '" + s + "'");
  const int lo = std::stoi(s.substr(0, colon));
  const int hi = std::stoi(s.substr(colon + 1));
  if (lo < 1 || hi > m || lo > hi)
    throw ValidationError("--time-window " + s + " outside 1.." +
                          std::to_string(m));
  return {lo - 1, hi - 1};
}

json common_config(const CommonOpts& o, const KernelSpec& spec, bool spatial) {
  json j;
  j["tau"] = o.tau;
  j["kernel"] = kernel_name(spec.kernel);
  j["h"] = spec.h;
  if (spatial) j["h_st"] = spec.h_st;
  if (!o.time_window.empty()) j["time_window"] = o.time_window;
  j["spatial"] = spatial;
  return j;
}

void emit(const std::string& out_base, const std::string& suffix,
          const std::string& content, Manifest& man) {
  if (out_base.empty()) {
    std::cout << content;
  } else {
    write_text(out_base + suffix, content);
    man.outputs.push_back(out_base + suffix);
  }
}

// ---------------------------------------------------------------- fit

std::string outcome_csv(const Eigen::MatrixXd& coeffs, int d, bool spatial,
                        int region) {
  std::ostringstream os;
  if (region < 0) {
    os << "t,beta0";
    for (int j = 1; j <= d; ++j) os << ",beta_" << j;
    os << (spatial ? ",gamma1,gamma2" : ",gamma") << "\n";
  }
  for (int t = 0; t < coeffs.rows(); ++t) {
    os << (t + 1);
    if (region >= 0) os << "," << (region + 1);
    for (int j = 0; j < coeffs.cols(); ++j) os << "," << fmt(coeffs(t, j));
    os << "\n";
  }
  return os.str();
}

std::string state_csv_header(int d, bool spatial, bool with_region) {
  std::ostringstream os;
  os << "t";
  if (with_region) os << ",region";
  const int cols = d + (spatial ? 3 : 2);
  for (int a = 1; a <= d; ++a)
    for (int b = 1; b <= cols; ++b) os << ",theta_" << a << "_" << b;
  os << "\n";
  return os.str();
}

std::string state_csv_rows(const Eigen::MatrixXd& coeffs, int region) {
  std::ostringstream os;
  for (int t = 0; t < coeffs.rows(); ++t) {
    os << (t + 1);
    if (region >= 0) os << "," << (region + 1);
    for (int j = 0; j < coeffs.cols(); ++j) os << "," << fmt(coeffs(t, j));
    os << "\n";
  }
  return os.str();
}

int cmd_fit(const std::string& data, const std::string& regions, bool spatial,
            const CommonOpts& o, Manifest& man) {
  apply_threads(o.threads);
  man.input_digests[data] = file_digest(data);
  if (spatial) man.input_digests[regions] = file_digest(regions);
  if (o.tau < 0.05 || o.tau > 0.95)
    std::cerr << "warning: tau=" << o.tau
              << " is outside [0.05, 0.95]; extreme-quantile fits are fragile\n";

  json report;
  std::string ocsv, scsv;
  if (!spatial) {
    PanelDataset ds = load_panel_csv(data);
    if (!o.time_window.empty()) {
      auto [lo, hi] = parse_window(o.time_window, ds.m);
      ds = ds.time_window(lo, hi);
    }
    KernelSpec spec = make_spec(o, ds.n, nullptr);
    man.config = common_config(o, spec, false);
    EstimandReport rep = estimate(ds, o.tau, spec);
    report["tau"] = rep.tau;
    report["cqte"] = rep.cqte;
    report["cqde"] = rep.cqde;
    report["cqie"] = rep.cqie;
    report["n"] = ds.n;
    report["m"] = ds.m;
    report["d"] = ds.d;
    report["bandwidth"] = rep.diagnostics.bandwidth;
    report["design_condition"] = rep.diagnostics.design_condition;
    ocsv = outcome_csv(rep.qpath.coeffs, ds.d, false, -1);
    scsv = state_csv_header(ds.d, false, false) +
           state_csv_rows(rep.spath.coeffs, -1);
  } else {
    SpatioPanelDataset ds = load_spatio_panel_csv(data, regions);
    if (!o.time_window.empty()) {
      auto [lo, hi] = parse_window(o.time_window, ds.m);
      ds = ds.time_window(lo, hi);
    }
    KernelSpec spec = make_spec(o, ds.n, &ds.coords);
    man.config = common_config(o, spec, true);
    SpatialEstimandReport rep = estimate_st(ds, o.tau, spec);
    report["tau"] = rep.tau;
    report["cqte"] = rep.cqte;
    report["cqde"] = rep.cqde;
    report["cqie"] = rep.cqie;
    report["n"] = ds.n;
    report["m"] = ds.m;
    report["d"] = ds.d;
    report["r"] = ds.r;
    report["bandwidth"] = rep.diagnostics.bandwidth;
    std::ostringstream oc, sc;
    oc << "t,region,beta0";
    for (int j = 1; j <= ds.d; ++j) oc << ",beta_" << j;
    oc << ",gamma1,gamma2\n";
    sc << state_csv_header(ds.d, true, true);
    for (int k = 0; k < ds.r; ++k) {
      oc << outcome_csv(rep.qpath.coeffs[k], ds.d, true, k);
      sc << state_csv_rows(rep.spath.coeffs[k], k);
    }
    ocsv = oc.str();
    scsv = sc.str();
  }

  emit(o.out, ".json", report.dump(2) + "\n", man);
  if (!o.out.empty()) {
    emit(o.out, "_outcome_coeffs.csv", ocsv, man);
    emit(o.out, "_state_coeffs.csv", scsv, man);
    man.write(o.out);
  }
  return 0;
}

// ---------------------------------------------------------------- test

int cmd_test(const std::string& data, const std::string& regions, bool spatial,
             const CommonOpts& o, const std::string& estimand_name_in,
             BootstrapConfig cfg, bool paired, const std::string& resample_mode,
             const std::string& pvalue_mode, Manifest& man) {
  apply_threads(o.threads);
  man.input_digests[data] = file_digest(data);
  if (spatial) man.input_digests[regions] = file_digest(regions);
  const Estimand estimand = estimand_from_name(estimand_name_in);
  cfg.resample_mode = resample_mode_from_name(resample_mode);
  cfg.paired_resample = paired;
  cfg.pvalue_mode = pvalue_mode == "normal_approx" ? PValueMode::normal_approx
                    : pvalue_mode == "empirical_quantile"
                        ? PValueMode::empirical_quantile
                        : throw ValidationError("unknown --pvalue-mode '" +
                                                pvalue_mode + "'");
  TestResult res;
  KernelSpec spec;
  if (!spatial) {
    PanelDataset ds = load_panel_csv(data);
    if (!o.time_window.empty()) {
      auto [lo, hi] = parse_window(o.time_window, ds.m);
      ds = ds.time_window(lo, hi);
    }
    spec = make_spec(o, ds.n, nullptr);
    res = run_test(ds, o.tau, estimand, spec, cfg);
  } else {
    SpatioPanelDataset ds = load_spatio_panel_csv(data, regions);
    if (!o.time_window.empty()) {
      auto [lo, hi] = parse_window(o.time_window, ds.m);
      ds = ds.time_window(lo, hi);
    }
    spec = make_spec(o, ds.n, &ds.coords);
    res = run_test_st(ds, o.tau, estimand, spec, cfg);
  }

  man.config = common_config(o, spec, spatial);
  man.config["estimand"] = estimand_name(estimand);
  man.config["B"] = cfg.B;
  man.config["alpha"] = cfg.alpha;
  man.config["resample_mode"] = resample_mode_name(cfg.resample_mode);
  man.config["paired_resample"] = cfg.paired_resample;
  man.config["pvalue_mode"] = pvalue_mode_name(cfg.pvalue_mode);
  man.config["seed"] = cfg.seed;

  json j;
  j["estimand"] = estimand_name(res.estimand);
  j["tau"] = res.tau;
  j["statistic"] = res.statistic;
  j["critical_value"] = res.critical_value;
  j["p_value"] = res.p_value;
  j["reject"] = res.reject;
  j["B"] = cfg.B;
  j["alpha"] = cfg.alpha;
  j["resample_mode"] = resample_mode_name(cfg.resample_mode);
  j["paired_resample"] = cfg.paired_resample;
  j["pvalue_mode"] = pvalue_mode_name(cfg.pvalue_mode);
  j["seed"] = cfg.seed;
  j["draws"] = std::vector<double>(res.draws.data(),
                                   res.draws.data() + res.draws.size());
  emit(o.out, ".json", j.dump(2) + "\n", man);
  if (!o.out.empty()) man.write(o.out);
  return 0;
}

// ---------------------------------------------------------------- generate

int cmd_generate(int n, int m, int d, int ti, int r, double delta,
                 std::uint64_t seed, const std::string& error_dist, bool spatial,
                 const std::string& out, int threads, Manifest& man) {
  apply_threads(threads);
  if (out.empty()) throw ValidationError("generate requires --out");
  const ErrorDist dist = error_dist == "normal" ? ErrorDist::normal
                         : error_dist == "t"
                             ? ErrorDist::student_t
                             : throw ValidationError("unknown --error-dist '" +
                                                     error_dist + "'");
  man.config = {{"n", n},     {"m", m},   {"d", d},
                {"ti", ti},   {"r", r},   {"delta", delta},
                {"seed", seed}, {"error_dist", error_dist}, {"spatial", spatial}};
  if (!spatial) {
    GeneratorSpec gen = null_generator(m, d, dist);
    gen.ti = ti;
    if (delta > 0.0) {
      const PilotSummaries pilot =
          pilot_summaries(gen, 4000, splitmix64(seed ^ 0x9107));
      gen = inject_effect(gen, delta, pilot);
    }
    write_panel_csv(generate(gen, n, seed), out + ".csv");
    man.outputs.push_back(out + ".csv");
  } else {
    SpatialGeneratorSpec gen = spatial_null_generator(m, d, r, dist);
    gen.base.ti = ti;
    if (delta > 0.0) {
      const PilotSummaries pilot =
          pilot_summaries(gen.base, 4000, splitmix64(seed ^ 0x9107));
      gen.base = inject_effect(gen.base, delta, pilot);
    }
    write_spatio_panel_csv(generate_st(gen, n, seed), out + ".csv",
                           out + "_regions.csv");
    man.outputs.push_back(out + ".csv");
    man.outputs.push_back(out + "_regions.csv");
  }
  man.write(out);
  return 0;
}

// ---------------------------------------------------------------- simulate

SimulationConfig cell_from_json(const json& j) {
  static const std::set<std::string> known = {
      "delta", "ti",    "n",     "m",    "d",           "tau",
      "error_dist",     "estimand",     "B",  "alpha",  "resample_mode",
      "paired_resample", "pvalue_mode", "runs", "seed", "h"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key))
      throw ValidationError("unknown grid key '" + key + "'");
  SimulationConfig c;
  c.delta = j.value("delta", 0.0);
  c.ti = j.value("ti", 1);
  c.n = j.value("n", 20);
  c.m = j.value("m", 24);
  c.d = j.value("d", 2);
  c.tau = j.value("tau", 0.5);
  if (j.contains("error_dist")) {
    const std::string e = j["error_dist"];
    if (e == "normal") c.error_dist = ErrorDist::normal;
    else if (e == "t") c.error_dist = ErrorDist::student_t;
    else throw ValidationError("unknown grid error_dist '" + e + "'");
  }
  if (j.contains("estimand")) c.estimand = estimand_from_name(j["estimand"]);
  c.bootstrap.B = j.value("B", 500);
  c.bootstrap.alpha = j.value("alpha", 0.05);
  if (j.contains("resample_mode"))
    c.bootstrap.resample_mode = resample_mode_from_name(j["resample_mode"]);
  c.bootstrap.paired_resample = j.value("paired_resample", false);
  if (j.contains("pvalue_mode") && j["pvalue_mode"] == "normal_approx")
    c.bootstrap.pvalue_mode = PValueMode::normal_approx;
  c.runs = j.value("runs", 500);
  c.seed = j.value("seed", 0);
  c.kernel.h = j.value("h", 0.0);
  if (!(c.kernel.h > 0.0)) c.kernel.h = default_temporal_bandwidth(c.n);
  c.validate();
  return c;
}

int cmd_simulate(const std::string& grid_path, const std::string& out,
                 int threads, Manifest& man) {
  apply_threads(threads);
  man.input_digests[grid_path] = file_digest(grid_path);
  std::ifstream in(grid_path);
  if (!in) throw ValidationError("cannot read grid file '" + grid_path + "'");
  json grid_json;
  try {
    in >> grid_json;
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("grid file is not valid JSON: ") + e.what());
  }
  if (!grid_json.is_array())
    throw ValidationError("grid file must hold a JSON array of cells");
  std::vector<SimulationConfig> grid;
  for (const auto& cell : grid_json) grid.push_back(cell_from_json(cell));
  man.config = {{"grid", grid_json}};

  std::vector<RejectionRow> rows = run_rejection_study(grid);
  std::ostringstream os;
  os << "tau,TI,n,delta,reject_rate,se,runs,failures\n";
  for (const auto& r : rows)
    os << fmt(r.tau) << "," << r.ti << "," << r.n << "," << fmt(r.delta) << ","
       << fmt(r.reject_rate) << "," << fmt(r.se) << "," << r.runs << ","
       << r.failures << "\n";
  emit(out, ".csv", os.str(), man);
  if (!out.empty()) man.write(out);
  return 0;
}

// ---------------------------------------------------------------- replay

std::vector<std::string> manifest_argv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read manifest '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("manifest is not valid JSON: ") + e.what());
  }
  if (!j.contains("command") || !j["command"].is_array())
    throw ValidationError("manifest has no command array");
  return j["command"].get<std::vector<std::string>>();
}

int dispatch(const std::vector<std::string>& args);

int cmd_replay(const std::string& path) {
  return dispatch(manifest_argv(path));
}

// ---------------------------------------------------------------- main

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"Dynamic conditional quantile treatment effects for switchback experiments"};
  app.require_subcommand(1);
  app.set_help_flag("--help", "print help");
  app.set_version_flag("--version", kVersion);

  Manifest man;
  man.argv = args;

  // fit
  CommonOpts fit_opts;
  std::string fit_data, fit_regions;
  bool fit_spatial = false;
  auto* fit = app.add_subcommand("fit", "estimate CQTE/CQDE/CQIE from a panel");
  fit->add_option("--data", fit_data, "panel CSV")->required();
  fit->add_option("--regions", fit_regions, "region sidecar CSV (spatial)");
  fit->add_flag("--spatial", fit_spatial, "spatiotemporal design");
  add_common(fit, fit_opts, true);

  // test
  CommonOpts test_opts;
  std::string test_data, test_regions, test_estimand = "cqte";
  std::string test_resample = "within_day_time_iid";
  std::string test_pvalue = "empirical_quantile";
  bool test_spatial = false, test_paired = false;
  BootstrapConfig bcfg;
  auto* test = app.add_subcommand("test", "residual-bootstrap hypothesis test");
  test->add_option("--data", test_data, "panel CSV")->required();
  test->add_option("--regions", test_regions, "region sidecar CSV (spatial)");
  test->add_flag("--spatial", test_spatial, "spatiotemporal design");
  test->add_option("--estimand", test_estimand, "cqte|cqde|cqie");
  test->add_option("--B", bcfg.B, "bootstrap replications (>= 100)");
  test->add_option("--alpha", bcfg.alpha, "test level in (0, 0.5)");
  test->add_option("--resample-mode", test_resample,
                   "within_day_time_iid|whole_day_process");
  test->add_flag("--paired-resample", test_paired,
                 "couple outcome and state error time draws");
  test->add_option("--pvalue-mode", test_pvalue,
                   "empirical_quantile|normal_approx");
  test->add_option("--seed", bcfg.seed, "bootstrap seed");
  add_common(test, test_opts, true);

  // generate
  int gn = 20, gm = 24, gd = 2, gti = 1, gr = 4, gthreads = 0;
  double gdelta = 0.0;
  std::uint64_t gseed = 0;
  std::string gdist = "normal", gout;
  bool gspatial = false;
  auto* gen = app.add_subcommand("generate", "write a synthetic panel CSV");
  gen->add_option("--n", gn, "days");
  gen->add_option("--m", gm, "intervals per day");
  gen->add_option("--d", gd, "state dimension");
  gen->add_option("--ti", gti, "alternation period");
  gen->add_option("--r", gr, "regions (spatial)");
  gen->add_option("--delta", gdelta, "injected signal strength");
  gen->add_option("--seed", gseed, "generator seed");
  gen->add_option("--error-dist", gdist, "normal|t");
  gen->add_flag("--spatial", gspatial, "spatiotemporal design");
  gen->add_option("--threads", gthreads, "OpenMP thread cap");
  gen->add_option("--out", gout, "output basename")->required();

  // simulate
  std::string sgrid, sout;
  int sthreads = 0;
  auto* sim = app.add_subcommand("simulate", "rejection-rate study over a grid");
  sim->add_option("--grid", sgrid, "JSON array of simulation cells")->required();
  sim->add_option("--threads", sthreads, "OpenMP thread cap");
  sim->add_option("--out", sout, "output basename (default: stdout)");

  // replay
  std::string rmanifest;
  auto* replay = app.add_subcommand("replay", "re-run a recorded manifest");
  replay->add_option("manifest", rmanifest, "manifest JSON path")->required();

  std::vector<const char*> argv;
  argv.push_back("cqte");
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  }

  if (fit->parsed())
    return cmd_fit(fit_data, fit_regions, fit_spatial, fit_opts, man);
  if (test->parsed())
    return cmd_test(test_data, test_regions, test_spatial, test_opts,
                    test_estimand, bcfg, test_paired, test_resample,
                    test_pvalue, man);
  if (gen->parsed())
    return cmd_generate(gn, gm, gd, gti, gr, gdelta, gseed, gdist, gspatial,
                        gout, gthreads, man);
  if (sim->parsed()) return cmd_simulate(sgrid, sout, sthreads, man);
  if (replay->parsed()) return cmd_replay(rmanifest);
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    return dispatch(args);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const SingularDesignError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 4;
  } catch (const ConvergenceError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
