#include "weakflow/cli.hpp"

#include <chrono>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "weakflow/coupling.hpp"
#include "weakflow/ensemble.hpp"
#include "weakflow/fields.hpp"
#include "weakflow/io.hpp"
#include "weakflow/wavepacket.hpp"

namespace weakflow::cli {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

struct Common {
  std::string out = "weakflow_out";
  std::string config;
  std::uint64_t seed = 20240925;
  int threads = 0;
  bool dry_run = false;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--out", c.out, "output directory");
  sub->add_option("--config", c.config, "flat key = value config file");
  sub->add_option("--seed", c.seed, "RNG seed");
  sub->add_option("--threads", c.threads, "worker threads (0: WEAKFLOW_THREADS or all cores)");
  sub->add_flag("--dry-run", c.dry_run, "validate and print the resolved parameters only");
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stod(tok));
  }
  if (out.empty()) throw std::invalid_argument("empty list: " + s);
  return out;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  for (double v : parse_list(s)) out.push_back(int(std::llround(v)));
  return out;
}

// config file: one "key = value" per line, '#' comments. Values apply only
// where the flag was not given explicitly.
std::vector<std::string> apply_config_defaults(std::vector<std::string> args,
                                               const std::string& sub_name) {
  std::string cfg_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) cfg_path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0) cfg_path = args[i].substr(9);
  }
  if (cfg_path.empty()) return args;
  std::ifstream is(cfg_path);
  if (!is) throw std::invalid_argument("cannot open config file " + cfg_path);
  std::string line;
  std::vector<std::string> extra;
  while (std::getline(is, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return (a == std::string::npos) ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.empty()) continue;
    const std::string flag = "--" + key;
    bool given = false;
    for (const auto& a : args)
      if (a == flag || a.rfind(flag + "=", 0) == 0) {
        given = true;
        break;
      }
    if (!given) {
      extra.push_back(flag);
      if (val != "true") extra.push_back(val);  // bare flags: "key = true"
    }
  }
  (void)sub_name;
  args.insert(args.end(), extra.begin(), extra.end());
  return args;
}

struct Summary {
  std::string subcommand;
  std::map<std::string, std::string> params;
  json key_results = json::object();
  bool dry_run = false;
  std::string out;

  void print(double wall_seconds) const {
    json j;
    j["subcommand"] = subcommand;
    j["params_digest"] = io::params_digest(params);
    j["key_results"] = key_results;
    j["wall_time"] = wall_seconds;
    std::cout << j.dump() << "\n";
    // file copy carries no timing, so reruns are byte-identical
    if (!dry_run) {
      json f = j;
      f.erase("wall_time");
      io::write_text_file(fs::path(out) / "summary.json", f.dump() + "\n");
    }
  }
};

// echo the resolved parameters; true if the caller should stop (dry run).
// The output path is not part of the resolved set: identical physics configs
// must produce byte-identical files wherever they are written.
bool resolve_outputs(const Common& c, Summary& s) {
  s.params.insert({"seed", std::to_string(c.seed)});
  s.dry_run = c.dry_run;
  s.out = c.out;
  if (c.dry_run) {
    json resolved = json::object();
    for (const auto& [k, v] : s.params) resolved[k] = v;
    s.key_results["dry_run"] = true;
    s.key_results["resolved"] = resolved;
    return true;
  }
  io::write_resolved_config(fs::path(c.out) / "resolved_config.txt", s.params);
  return false;
}

double lsq_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = double(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

// ---------------------------------------------------------------------------

int cmd_displacement(const Common& c, double au, double ad, int n, double t, double eps,
                     std::int64_t trials, bool postselect, int bins) {
  Summary s;
  s.subcommand = "displacement";
  s.params = {{"alpha-up", io::fmt_g17(au)}, {"alpha-down", io::fmt_g17(ad)},
              {"n", std::to_string(n)},      {"t", io::fmt_g17(t)},
              {"eps", io::fmt_g17(eps)},     {"trials", std::to_string(trials)},
              {"postselect", postselect ? "true" : "false"}, {"bins", std::to_string(bins)}};
  const auto t0 = std::chrono::steady_clock::now();
  coin::CoinState post(n, au, ad);
  if (resolve_outputs(c, s)) {
    s.print(0.0);
    return 0;
  }
  wavepacket::GaussianPacket packet(Eigen::Vector3d::Zero(), eps);
  const auto rep = wavepacket::convergence_report(packet, post, t);
  wavepacket::SpectralEvolution ev(post, eps, t);
  const double w = post.weak_velocity();

  const double lo = std::min(0.0, w * t) - 6.0 * eps, hi = std::max(0.0, w * t) + 6.0 * eps;
  const int np = 1201;
  io::CsvWriter csv(fs::path(c.out) / "displacement_profile.csv");
  csv.row({"z", "amp_exact_reduced", "amp_weak"});
  for (int i = 0; i < np; ++i) {
    const double z = lo + (hi - lo) * i / (np - 1);
    const double ae = std::abs(ev.amplitude(z));
    const double aw = std::abs(wavepacket::evaluate(wavepacket::evolve_weak(packet, w, t), z));
    csv.row({io::fmt_g17(z), io::fmt_g17(ae), io::fmt_g17(aw)});
  }
  const double amp_peak = std::abs(ev.amplitude(rep.peak_position));
  const double amp_edge = std::abs(ev.amplitude((w >= 0 ? 1.0 : -1.0) * t));
  s.key_results = {{"weak_velocity", w},
                   {"peak", rep.peak_position},
                   {"peak_error", rep.peak_error},
                   {"fidelity", rep.fidelity},
                   {"distortion", rep.distortion_parameter},
                   {"amp_ratio_peak_vs_cone_edge", amp_peak / amp_edge}};
  if (trials > 0) {
    ensemble::ExperimentConfig config(post, eps, t, trials, c.seed);
    const auto ds = ensemble::sample_displacements(config, postselect, bins, c.threads);
    io::write_histogram_csv(fs::path(c.out) / "displacement_hist.csv", ds.hist);
    s.key_results["sample_mean"] = ds.mean;
    s.key_results["sample_stddev"] = ds.stddev;
  }
  s.print(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return 0;
}

int cmd_convergence(const Common& c, double au, double ad, const std::string& nlist, double t,
                    double eps) {
  Summary s;
  s.subcommand = "convergence";
  s.params = {{"alpha-up", io::fmt_g17(au)}, {"alpha-down", io::fmt_g17(ad)},
              {"n-list", nlist},             {"t", io::fmt_g17(t)},
              {"eps", io::fmt_g17(eps)}};
  const auto t0 = std::chrono::steady_clock::now();
  const auto ns = parse_int_list(nlist);
  if (resolve_outputs(c, s)) {
    s.print(0.0);
    return 0;
  }
  wavepacket::GaussianPacket packet(Eigen::Vector3d::Zero(), eps);
  io::CsvWriter csv(fs::path(c.out) / "convergence.csv");
  csv.row({"n_spins", "fidelity", "one_minus_fidelity", "weak_overlap_deficit", "peak_error"});
  std::vector<double> lx, ly, ld;
  double min_f = 1.0;
  for (int n : ns) {
    coin::CoinState post(n, au, ad);
    const auto rep = wavepacket::convergence_report(packet, post, t);
    csv.row({std::to_string(n), io::fmt_g17(rep.fidelity), io::fmt_g17(1.0 - rep.fidelity),
             io::fmt_g17(rep.weak_overlap_deficit), io::fmt_g17(rep.peak_error)});
    lx.push_back(std::log(double(n)));
    ly.push_back(std::log(std::max(1e-300, 1.0 - rep.fidelity)));
    ld.push_back(std::log(std::max(1e-300, rep.weak_overlap_deficit)));
    min_f = std::min(min_f, rep.fidelity);
  }
  s.key_results = {{"slope_one_minus_fidelity", lsq_slope(lx, ly)},
                   {"slope_weak_overlap_deficit", lsq_slope(lx, ld)},
                   {"min_fidelity", min_f}};
  s.print(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return 0;
}

int cmd_probabilities(const Common& c, double au, double ad, int n, double t, double eps) {
  Summary s;
  s.subcommand = "probabilities";
  s.params = {{"alpha-up", io::fmt_g17(au)}, {"alpha-down", io::fmt_g17(ad)},
              {"n", std::to_string(n)},      {"t", io::fmt_g17(t)},
              {"eps", io::fmt_g17(eps)}};
  const auto t0 = std::chrono::steady_clock::now();
  coin::CoinState post(n, au, ad);
  if (resolve_outputs(c, s)) {
    s.print(0.0);
    return 0;
  }
  ensemble::ExperimentConfig config(post, eps, t, 1, c.seed);
  const auto ledger = ensemble::probability_ledger(config);
  io::CsvWriter csv(fs::path(c.out) / "probabilities.csv");
  csv.row({"log_p_error", "log_p_postselect_static", "log_p_postselect_evolved", "log_floor",
           "p_error", "p_postselect_static", "p_postselect_evolved", "floor"});
  csv.row({io::fmt_g17(ledger.log_p_error_analytic), io::fmt_g17(ledger.log_p_postselect_static),
           io::fmt_g17(ledger.log_p_postselect_evolved), io::fmt_g17(ledger.log_floor),
           io::fmt_g17(ledger.p_error_analytic), io::fmt_g17(ledger.p_postselect_static),
           io::fmt_g17(ledger.p_postselect_evolved), io::fmt_g17(ledger.floor_e_minus_n)});
  s.key_results = {{"log_p_error", ledger.log_p_error_analytic},
                   {"log_p_postselect_static", ledger.log_p_postselect_static},
                   {"log_p_postselect_evolved", ledger.log_p_postselect_evolved},
                   {"log_floor", ledger.log_floor},
                   {"error_dominates_postselection",
                    ledger.log_p_error_analytic > ledger.log_p_postselect_static},
                   {"error_above_floor", ledger.log_p_error_analytic > ledger.log_floor}};
  s.print(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return 0;
}

int cmd_moments(const Common& c, double au, double ad, int n_max, const std::string& ptlist,
                double T, const std::string& nlist) {
  Summary s;
  s.subcommand = "moments";
  s.params = {{"alpha-up", io::fmt_g17(au)}, {"alpha-down", io::fmt_g17(ad)},
              {"n-max", std::to_string(n_max)}, {"pt-list", ptlist},
              {"T", io::fmt_g17(T)},         {"n-list", nlist}};
  const auto t0 = std::chrono::steady_clock::now();
  const auto ns = parse_int_list(nlist);
  std::vector<double> ps;
  for (double pt : parse_list(ptlist)) ps.push_back(pt / T);
  if (resolve_outputs(c, s)) {
    s.print(0.0);
    return 0;
  }
  const auto table = coupling::moment_replacement_check(au, ad, n_max, ps, T, ns);
  io::CsvWriter csv(fs::path(c.out) / "moments.csv");
  csv.row({"order", "p", "n_spins", "relative_error"});
  for (const auto& cell : table.cells)
    csv.row({std::to_string(cell.order), io::fmt_g17(cell.p), std::to_string(cell.n_spins),
             io::fmt_g17(cell.relative_error)});
  s.key_results = {{"strictly_decreasing", table.strictly_decreasing},
                   {"max_loglog_slope", table.max_loglog_slope}};
  s.print(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return 0;
}

int cmd_field_map(const Common& c, double v, double q, double t, double rho_lo, double rho_hi,
                  int n_rho, double z_lo, double z_hi, int n_z, const std::string& mode_s) {
  Summary s;
  s.subcommand = "field-map";
  s.params = {{"v", io::fmt_g17(v)},         {"q", io::fmt_g17(q)},
              {"t", io::fmt_g17(t)},         {"rho-lo", io::fmt_g17(rho_lo)},
              {"rho-hi", io::fmt_g17(rho_hi)}, {"n-rho", std::to_string(n_rho)},
              {"z-lo", io::fmt_g17(z_lo)},   {"z-hi", io::fmt_g17(z_hi)},
              {"n-z", std::to_string(n_z)},  {"mode", mode_s}};
  const auto t0 = std::chrono::steady_clock::now();
  fields::FieldMode mode;
  if (mode_s == "closed_form") mode = fields::FieldMode::closed_form;
  else if (mode_s == "retarded_sum") mode = fields::FieldMode::retarded_sum;
  else throw std::invalid_argument("mode must be closed_form or retarded_sum");
  fields::GridSpec2D grid{rho_lo, rho_hi, n_rho, z_lo, z_hi, n_z};
  grid.validate();
  if (resolve_outputs(c, s)) {
    s.print(0.0);
    return 0;
  }
  const auto map = fields::field_map({q, v, t}, grid, mode, c.threads);
  io::write_field_map_csv(fs::path(c.out) / "field_map.csv", map);
  io::write_text_file(fs::path(c.out) / "field_map.gp",
                      io::field_map_plot_script("field_map.csv", "field_map.png"));
  s.key_results = {{"flagged", map.flagged}};
  if (std::abs(v) > 1.0)
    s.key_results["cone_half_angle_deg"] = fields::mach_cone_half_angle_deg(v);
  s.print(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return 0;
}

int cmd_retarded_oracle(const Common& c, const std::string& vlist, double q, double t,
                        double rho_lo, double rho_hi, int n_rho, double z_lo, double z_hi,
                        int n_z) {
  Summary s;
  s.subcommand = "retarded-oracle";
  s.params = {{"v-list", vlist},           {"q", io::fmt_g17(q)},
              {"t", io::fmt_g17(t)},       {"rho-lo", io::fmt_g17(rho_lo)},
              {"rho-hi", io::fmt_g17(rho_hi)}, {"n-rho", std::to_string(n_rho)},
              {"z-lo", io::fmt_g17(z_lo)}, {"z-hi", io::fmt_g17(z_hi)},
              {"n-z", std::to_string(n_z)}};
  const auto t0 = std::chrono::steady_clock::now();
  const auto vs = parse_list(vlist);
  fields::GridSpec2D grid{rho_lo, rho_hi, n_rho, z_lo, z_hi, n_z};
  grid.validate();
  if (resolve_outputs(c, s)) {
    s.print(0.0);
    return 0;
  }
  io::CsvWriter csv(fs::path(c.out) / "retarded_oracle.csv");
  csv.row({"v", "max_rel_diff", "max_root_residual", "closed_only_cells", "retarded_only_cells"});
  double worst_diff = 0.0, worst_res = 0.0;
  for (double v : vs) {
    const auto closed = fields::field_map({q, v, t}, grid, fields::FieldMode::closed_form,
                                          c.threads);
    const auto ret = fields::field_map({q, v, t}, grid, fields::FieldMode::retarded_sum,
                                       c.threads);
    const auto cmp = fields::compare_support(closed, ret);
    double res = 0.0;
    for (int ir = 0; ir < grid.n_rho; ++ir)
      for (int iz = 0; iz < grid.n_z; ++iz) {
        const Eigen::Vector3d x(grid.rho_lo + ir * grid.drho(), 0.0,
                                grid.z_lo + iz * grid.dz());
        res = std::max(res, fields::lienard_wiechert({q, v, t}, x).max_residual);
      }
    csv.row({io::fmt_g17(v), io::fmt_g17(cmp.max_rel_diff), io::fmt_g17(res),
             std::to_string(cmp.closed_only), std::to_string(cmp.retarded_only)});
    if (std::abs(v) < 1.0) worst_diff = std::max(worst_diff, cmp.max_rel_diff);
    worst_res = std::max(worst_res, res);
  }
  s.key_results = {{"max_rel_diff_subluminal", worst_diff}, {"max_root_residual", worst_res}};
  s.print(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return 0;
}

int cmd_kick_compare(const Common& c, double au, double ad, int n, double T, double eps,
                     double eps_test, double q, double qprime, double kick_phase, double dx,
                     double dy, double zp_center, int n_z, int n_zp, double mass,
                     const std::string& mode_s) {
  Summary s;
  s.subcommand = "kick-compare";
  s.params = {{"alpha-up", io::fmt_g17(au)},   {"alpha-down", io::fmt_g17(ad)},
              {"n", std::to_string(n)},        {"T", io::fmt_g17(T)},
              {"eps", io::fmt_g17(eps)},       {"eps-test", io::fmt_g17(eps_test)},
              {"q", io::fmt_g17(q)},           {"qprime", io::fmt_g17(qprime)},
              {"kick-phase", io::fmt_g17(kick_phase)}, {"dx", io::fmt_g17(dx)},
              {"dy", io::fmt_g17(dy)},         {"zp-center", io::fmt_g17(zp_center)},
              {"n-z", std::to_string(n_z)},    {"n-zp", std::to_string(n_zp)},
              {"mass", io::fmt_g17(mass)},     {"field-mode", mode_s}};
  const auto t0 = std::chrono::steady_clock::now();
  fields::FieldMode mode;
  if (mode_s == "closed_form") mode = fields::FieldMode::closed_form;
  else if (mode_s == "retarded_sum") mode = fields::FieldMode::retarded_sum;
  else throw std::invalid_argument("field-mode must be closed_form or retarded_sum");

  coin::CoinState post(n, au, ad);
  const double w = post.weak_velocity();

  coupling::KickGrid grid;
  grid.z_lo = -T - 8.0 * eps;
  grid.z_hi = std::max(T, std::max(0.0, w * T)) + 8.0 * eps;
  grid.n_z = n_z;
  grid.zp_lo = zp_center - 8.0 * eps_test;
  grid.zp_hi = zp_center + 8.0 * eps_test;
  grid.n_zp = n_zp;
  grid.dx = dx;
  grid.dy = dy;

  // choose q' from the target kick-phase scale when not given explicitly:
  // phase ~ q' q V_max with V_max the weak potential at closest approach
  double qp = qprime;
  if (qp == 0.0) {
    const double zeta_min = std::min(std::abs(grid.zp_lo - grid.z_hi),
                                     std::abs(grid.zp_hi - grid.z_lo));
    const double rad = grid.rho() * grid.rho() * (1.0 - w * w) + zeta_min * zeta_min;
    if (!(rad > 0.0))
      throw std::invalid_argument("kick-phase auto-scaling needs the grid in the field support");
    qp = kick_phase * std::sqrt(rad) / q;
    s.params["qprime"] = io::fmt_g17(qp);
  }
  if (resolve_outputs(c, s)) {
    s.print(0.0);
    return 0;
  }

  coupling::TestParticleSpec test;
  test.charge = qp;
  test.mass = (mass > 0.0) ? mass : std::numeric_limits<double>::infinity();
  test.packet = wavepacket::GaussianPacket(Eigen::Vector3d(0, 0, zp_center), eps_test);
  wavepacket::GaussianPacket charge_packet(Eigen::Vector3d::Zero(), eps);

  coupling::JointState2D exact, weak;
  int substeps = 0;
  if (test.infinite_mass()) {
    exact = coupling::joint_kick_exact(charge_packet, post, q, test, T, grid, c.threads);
    weak = coupling::joint_kick_weak(charge_packet, w, q, test, T, grid, mode, c.threads);
  } else {
    auto fm = coupling::joint_kick_finite_m(charge_packet, post, q, test, T, grid, mode,
                                            c.threads);
    exact = std::move(fm.exact);
    weak = std::move(fm.weak);
    substeps = fm.substeps_used;
  }
  const double F = coupling::fidelity(exact, weak);
  const auto schmidt = coupling::schmidt_values(exact, 8);

  io::write_joint_state(fs::path(c.out) / "joint_exact.bin", exact);
  io::write_joint_state(fs::path(c.out) / "joint_weak.bin", weak);
  io::CsvWriter csv(fs::path(c.out) / "kick_summary.csv");
  csv.row({"quantity", "value"});
  csv.row({"fidelity", io::fmt_g17(F)});
  csv.row({"log_norm_sq_exact", io::fmt_g17(coupling::log_norm_sq(exact))});
  csv.row({"log_norm_sq_weak", io::fmt_g17(coupling::log_norm_sq(weak))});
  csv.row({"flagged_cells", std::to_string(exact.flagged_cells)});
  csv.row({"zero_field_cells_weak", std::to_string(weak.zero_field_cells)});
  for (int k = 0; k < schmidt.size(); ++k)
    csv.row({"schmidt_" + std::to_string(k + 1), io::fmt_g17(schmidt[k])});

  s.key_results = {{"fidelity", F},
                   {"schmidt_1", schmidt[0]},
                   {"log_norm_sq_exact", coupling::log_norm_sq(exact)},
                   {"flagged_cells", exact.flagged_cells}};
  if (substeps > 0) s.key_results["substeps"] = substeps;
  s.print(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return 0;
}

int cmd_light_cone(const Common& c, double au, double ad, int n, double t, double eps,
                   double cutoff, double dz_frac) {
  Summary s;
  s.subcommand = "light-cone";
  s.params = {{"alpha-up", io::fmt_g17(au)},  {"alpha-down", io::fmt_g17(ad)},
              {"n", std::to_string(n)},       {"t", io::fmt_g17(t)},
              {"eps", io::fmt_g17(eps)},      {"cutoff", io::fmt_g17(cutoff)},
              {"dz-frac", io::fmt_g17(dz_frac)}};
  const auto t0 = std::chrono::steady_clock::now();
  coin::CoinState post(n, au, ad);
  if (resolve_outputs(c, s)) {
    s.print(0.0);
    return 0;
  }
  const auto profile = wavepacket::make_truncated_gaussian(eps, cutoff * eps, eps * dz_frac,
                                                           cutoff * eps + 2.0 * t);
  const auto rep = wavepacket::light_cone_check(profile, post, t);

  wavepacket::SpectralEvolution ev(post, eps, t);
  const double w = post.weak_velocity();
  const double analytic_at_wt = std::abs(ev.amplitude(w * t));
  const double analytic_peak = std::abs(ev.amplitude(ev.peak_position()));

  io::CsvWriter csv(fs::path(c.out) / "light_cone.csv");
  csv.row({"z", "abs_amp"});
  for (int i = 0; i < rep.evolved.size(); ++i)
    csv.row({io::fmt_g17(rep.z0 + i * rep.dz), io::fmt_g17(std::abs(rep.evolved[i]))});

  s.key_results = {{"max_outside_amp", rep.max_abs_outside},
                   {"max_inside_amp", rep.max_abs_inside},
                   {"allowed_lo", rep.allowed_lo},
                   {"allowed_hi", rep.allowed_hi},
                   {"analytic_amp_at_weak_displacement", analytic_at_wt},
                   {"analytic_peak_amp", analytic_peak}};
  s.print(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return 0;
}

int cmd_causality(const Common& c, double q2, int n, double d, double horizon, double delta_e,
                  double w) {
  Summary s;
  s.subcommand = "causality";
  s.params = {{"q2", io::fmt_g17(q2)},      {"n", std::to_string(n)},
              {"d", io::fmt_g17(d)},        {"t-horizon", io::fmt_g17(horizon)},
              {"delta-e", io::fmt_g17(delta_e)}, {"w", io::fmt_g17(w)}};
  const auto t0 = std::chrono::steady_clock::now();
  if (q2 < 0.0) throw std::invalid_argument("q2 must be >= 0");
  if (resolve_outputs(c, s)) {
    s.print(0.0);
    return 0;
  }
  coupling::CausalityQuery query;
  query.observer_distance = d;
  query.field_uncertainty = delta_e;
  query.n_spins = n;
  query.charge = std::sqrt(q2);
  query.horizon = horizon;
  const auto rep = coupling::causality_check(query, w);

  io::CsvWriter csv(fs::path(c.out) / "causality.csv");
  csv.row({"position_blur", "blur_ratio", "blur_dominates", "fluctuation_margin",
           "fluctuation_pass", "charge_margin", "charge_pass", "causal_contact"});
  csv.row({io::fmt_g17(rep.position_blur), io::fmt_g17(rep.blur_ratio),
           rep.blur_dominates ? "1" : "0", io::fmt_g17(rep.fluctuation_margin),
           rep.fluctuation_pass ? "1" : "0", io::fmt_g17(rep.charge_margin),
           rep.charge_pass ? "1" : "0", rep.causal_contact ? "1" : "0"});

  s.key_results = {{"position_blur", rep.position_blur},
                   {"blur_ratio", rep.blur_ratio},
                   {"blur_dominates", rep.blur_dominates},
                   {"fluctuation_margin", rep.fluctuation_margin},
                   {"fluctuation_pass", rep.fluctuation_pass},
                   {"charge_margin", rep.charge_margin},
                   {"charge_pass", rep.charge_pass},
                   {"causal_contact", rep.causal_contact}};
  s.print(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return 0;
}

}  // namespace

int run(std::vector<std::string> args) {
  CLI::App app{"pre/postselected quantum walk, superluminal weak velocity, and its fields"};
  app.require_subcommand(1);

  // displacement
  Common c1;
  double d_au = 0.8, d_ad = -0.6, d_t = 3.0 / 7.0, d_eps = 1.0;
  int d_n = 1000, d_bins = 61;
  std::int64_t d_trials = 0;
  bool d_post = false;
  auto* sub1 = app.add_subcommand("displacement", "exact vs weak-displaced packet");
  sub1->add_option("--alpha-up", d_au, "postselection spin-up amplitude");
  sub1->add_option("--alpha-down", d_ad, "postselection spin-down amplitude");
  sub1->add_option("--n", d_n, "number of internal spins");
  sub1->add_option("--t", d_t, "evolution time");
  sub1->add_option("--eps", d_eps, "packet width");
  sub1->add_option("--trials", d_trials, "Monte Carlo trials (0: analytic profile only)");
  sub1->add_flag("--postselect", d_post, "sample from the postselected density");
  sub1->add_option("--bins", d_bins, "histogram bins");
  add_common(sub1, c1);

  // convergence
  Common c2;
  double v_au = 0.8, v_ad = -0.6, v_t = 3.0 / 7.0, v_eps = 1.0;
  std::string v_nlist = "250,500,1000,2000";
  auto* sub2 = app.add_subcommand("convergence", "fidelity ladder over N");
  sub2->add_option("--alpha-up", v_au, "");
  sub2->add_option("--alpha-down", v_ad, "");
  sub2->add_option("--n-list", v_nlist, "comma-separated N ladder");
  sub2->add_option("--t", v_t, "");
  sub2->add_option("--eps", v_eps, "");
  add_common(sub2, c2);

  // probabilities
  Common c3;
  double p_au = 0.8, p_ad = -0.6, p_t = 3.0 / 7.0, p_eps = 1.0;
  int p_n = 1000;
  auto* sub3 = app.add_subcommand("probabilities", "error vs postselection probability ledger");
  sub3->add_option("--alpha-up", p_au, "");
  sub3->add_option("--alpha-down", p_ad, "");
  sub3->add_option("--n", p_n, "");
  sub3->add_option("--t", p_t, "");
  sub3->add_option("--eps", p_eps, "");
  add_common(sub3, c3);

  // moments
  Common c4;
  double m_au = 0.8, m_ad = -0.6, m_T = 1.0;
  int m_nmax = 3;
  std::string m_ptlist = "0,0.5,1,2", m_nlist = "100,200,400,800";
  auto* sub4 = app.add_subcommand("moments", "weak-substitution moment errors over N");
  sub4->add_option("--alpha-up", m_au, "");
  sub4->add_option("--alpha-down", m_ad, "");
  sub4->add_option("--n-max", m_nmax, "highest moment order");
  sub4->add_option("--pt-list", m_ptlist, "comma-separated p*T values");
  sub4->add_option("--T", m_T, "");
  sub4->add_option("--n-list", m_nlist, "");
  add_common(sub4, c4);

  // field-map
  Common c5;
  double f_v = 7.0, f_q = 1.0, f_t = 1.0, f_rlo = 0.05, f_rhi = 4.0, f_zlo = -6.0, f_zhi = 10.0;
  int f_nr = 64, f_nz = 64;
  std::string f_mode = "retarded_sum";
  auto* sub5 = app.add_subcommand("field-map", "potential map of a moving charge");
  sub5->add_option("--v", f_v, "source speed (units of c)");
  sub5->add_option("--q", f_q, "source charge");
  sub5->add_option("--t", f_t, "time");
  sub5->add_option("--rho-lo", f_rlo, "");
  sub5->add_option("--rho-hi", f_rhi, "");
  sub5->add_option("--n-rho", f_nr, "");
  sub5->add_option("--z-lo", f_zlo, "");
  sub5->add_option("--z-hi", f_zhi, "");
  sub5->add_option("--n-z", f_nz, "");
  sub5->add_option("--mode", f_mode, "closed_form | retarded_sum");
  add_common(sub5, c5);

  // retarded-oracle
  Common c6;
  std::string o_vlist = "0,0.3,0.9,0.99";
  double o_q = 1.0, o_t = 1.0, o_rlo = 0.1, o_rhi = 4.0, o_zlo = -5.0, o_zhi = 5.0;
  int o_nr = 64, o_nz = 64;
  auto* sub6 = app.add_subcommand("retarded-oracle",
                                  "closed form vs retarded-time route comparison");
  sub6->add_option("--v-list", o_vlist, "");
  sub6->add_option("--q", o_q, "");
  sub6->add_option("--t", o_t, "");
  sub6->add_option("--rho-lo", o_rlo, "");
  sub6->add_option("--rho-hi", o_rhi, "");
  sub6->add_option("--n-rho", o_nr, "");
  sub6->add_option("--z-lo", o_zlo, "");
  sub6->add_option("--z-hi", o_zhi, "");
  sub6->add_option("--n-z", o_nz, "");
  add_common(sub6, c6);

  // kick-compare
  Common c7;
  double k_au = 0.8, k_ad = -0.6, k_T = 3.0 / 7.0, k_eps = 1.0, k_epst = 1.0, k_q = 1.0,
         k_qp = 0.0, k_phase = 0.3, k_dx = 3.0, k_dy = 0.0, k_zpc = -50.0, k_mass = 0.0;
  int k_n = 1000, k_nz = 512, k_nzp = 512;
  std::string k_mode = "closed_form";
  auto* sub7 = app.add_subcommand("kick-compare", "exact vs weak-substituted kick experiment");
  sub7->add_option("--alpha-up", k_au, "");
  sub7->add_option("--alpha-down", k_ad, "");
  sub7->add_option("--n", k_n, "");
  sub7->add_option("--T", k_T, "kick time");
  sub7->add_option("--eps", k_eps, "charge packet width");
  sub7->add_option("--eps-test", k_epst, "test packet width");
  sub7->add_option("--q", k_q, "source charge");
  sub7->add_option("--qprime", k_qp, "test charge (0: derive from --kick-phase)");
  sub7->add_option("--kick-phase", k_phase, "target peak kick phase in radians");
  sub7->add_option("--dx", k_dx, "transverse separation x");
  sub7->add_option("--dy", k_dy, "transverse separation y");
  sub7->add_option("--zp-center", k_zpc, "test-particle center (wake side)");
  sub7->add_option("--n-z", k_nz, "");
  sub7->add_option("--n-zp", k_nzp, "");
  sub7->add_option("--mass", k_mass, "test mass (<= 0: infinite)");
  sub7->add_option("--field-mode", k_mode, "closed_form | retarded_sum for the weak branch");
  add_common(sub7, c7);

  // light-cone
  Common c8;
  double l_au = 0.8, l_ad = -0.6, l_t = 3.0 / 7.0, l_eps = 1.0, l_cut = 5.0,
         l_dzf = 1.0 / 16.0;
  int l_n = 1000;
  auto* sub8 = app.add_subcommand("light-cone", "strict support bound for truncated data");
  sub8->add_option("--alpha-up", l_au, "");
  sub8->add_option("--alpha-down", l_ad, "");
  sub8->add_option("--n", l_n, "");
  sub8->add_option("--t", l_t, "");
  sub8->add_option("--eps", l_eps, "");
  sub8->add_option("--cutoff", l_cut, "truncation radius in widths");
  sub8->add_option("--dz-frac", l_dzf, "grid spacing in widths");
  add_common(sub8, c8);

  // causality
  Common c9;
  double y_q2 = 1.0 / 137.0, y_d = 1.0, y_T = 1.0, y_dE = 0.0, y_w = 7.0;
  int y_n = 137;
  auto* sub9 = app.add_subcommand("causality", "observer-disturbance inequalities");
  sub9->add_option("--q2", y_q2, "squared source charge (natural units)");
  sub9->add_option("--n", y_n, "");
  sub9->add_option("--d", y_d, "observer distance");
  sub9->add_option("--t-horizon", y_T, "horizon time");
  sub9->add_option("--delta-e", y_dE, "field uncertainty (0: vacuum default)");
  sub9->add_option("--w", y_w, "weak velocity");
  add_common(sub9, c9);

  try {
    if (!args.empty()) args = apply_config_defaults(std::move(args), args.front());
    std::vector<const char*> argv;
    argv.push_back("weakflow");
    for (const auto& a : args) argv.push_back(a.c_str());
    app.parse(int(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (sub1->parsed())
      return cmd_displacement(c1, d_au, d_ad, d_n, d_t, d_eps, d_trials, d_post, d_bins);
    if (sub2->parsed()) return cmd_convergence(c2, v_au, v_ad, v_nlist, v_t, v_eps);
    if (sub3->parsed()) return cmd_probabilities(c3, p_au, p_ad, p_n, p_t, p_eps);
    if (sub4->parsed()) return cmd_moments(c4, m_au, m_ad, m_nmax, m_ptlist, m_T, m_nlist);
    if (sub5->parsed())
      return cmd_field_map(c5, f_v, f_q, f_t, f_rlo, f_rhi, f_nr, f_zlo, f_zhi, f_nz, f_mode);
    if (sub6->parsed())
      return cmd_retarded_oracle(c6, o_vlist, o_q, o_t, o_rlo, o_rhi, o_nr, o_zlo, o_zhi, o_nz);
    if (sub7->parsed())
      return cmd_kick_compare(c7, k_au, k_ad, k_n, k_T, k_eps, k_epst, k_q, k_qp, k_phase, k_dx,
                              k_dy, k_zpc, k_nz, k_nzp, k_mass, k_mode);
    if (sub8->parsed()) return cmd_light_cone(c8, l_au, l_ad, l_n, l_t, l_eps, l_cut, l_dzf);
    if (sub9->parsed()) return cmd_causality(c9, y_q2, y_n, y_d, y_T, y_dE, y_w);
  } catch (const std::invalid_argument& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "numerical contract violation: " << e.what() << "\n";
    return 3;
  }
  return 2;
}

}  // namespace weakflow::cli
