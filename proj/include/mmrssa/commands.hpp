#pragma once

// The five experiment commands behind the command-line tool. Each builds its
// payload files in memory; nothing touches the output directory until the
// whole computation succeeded.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "config.hpp"
#include "io.hpp"

namespace mmrssa {

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitRelaxed = 2 };

/// Command-line values that take precedence over the config file.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> solver;
  std::optional<double> eps_f;
  unsigned threads = 0;
};

inline void apply_overrides(RunConfig& rc, const Overrides& ov) {
  if (ov.seed) rc.seed = *ov.seed;
  if (ov.eps_f) {
    if (!(*ov.eps_f > 0.0 && *ov.eps_f < 1.0)) throw ConfigError("--eps-f", "must lie in (0,1)");
    rc.eps_f = *ov.eps_f;
  }
  if (ov.solver) {
    try {
      rc.solver = parse_solver_kind(*ov.solver);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("--solver", e.what());
    }
    if (rc.solver == SolverKind::additive && rc.model_kind == ModelKind::segway_multiplicative)
      throw ConfigError("--solver", "the additive solver needs a model whose g is deterministic");
  }
}

struct CommandOutput {
  int exit_code = kExitOk;
  std::vector<std::pair<std::string, std::string>> files;  // name, content
  std::string summary;                                     // one human-readable line for stdout
};

namespace detail {

inline nlohmann::json index_json(const ConfiguredIndex& idx) {
  switch (idx.kind()) {
    case ConfiguredIndex::Kind::tilt: {
      const auto& p = idx.tilt_params();
      return {{"kind", "tilt"}, {"alpha", p.alpha}, {"k_v", p.k_v}, {"beta", p.beta}};
    }
    case ConfiguredIndex::Kind::spec: return {{"kind", "spec"}};
    case ConfiguredIndex::Kind::affine:
      return {{"kind", "affine"}, {"weights", idx.affine_params().weights}, {"offset", idx.affine_params().offset}};
  }
  return {};
}

inline std::vector<std::string> state_columns(std::size_t n, const std::string& prefix = "x") {
  std::vector<std::string> c;
  for (std::size_t a = 0; a < n; ++a) c.push_back(prefix + std::to_string(a));
  return c;
}

inline std::string dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

}  // namespace detail

/// Settings that shaped the payload, recorded in the manifest.
inline nlohmann::json effective_settings(const RunConfig& rc) {
  return {{"solver", to_string(rc.solver)},
          {"eps_f", rc.eps_f},
          {"eps0", rc.eps0},
          {"gamma_slope", rc.gamma.slope},
          {"seed", rc.seed},
          {"safety_index", detail::index_json(rc.index)}};
}

inline CommandOutput cmd_solve(const RunConfig& rc, const Overrides&) {
  if (!rc.solve) throw ConfigError("solve", "missing required section for the solve command");
  const auto& sec = *rc.solve;
  const Vector u_ref = sec.u_ref ? *sec.u_ref : nominal_controller(sec.state, rc.model->box());
  SafeControlResult r;
  if (rc.solver == SolverKind::additive) {
    r = solve_safe_control_additive(sec.state, u_ref, *rc.model, rc.index, rc.gamma, {rc.eps_f, rc.eps0});
  } else {
    MultiplicativeOptions mo = rc.multiplicative;
    mo.eps_f = rc.eps_f;
    r = solve_safe_control_multiplicative(sec.state, u_ref, *rc.model, rc.index, rc.gamma, mo);
  }
  nlohmann::json j = to_json(r);
  j["state"] = sec.state;
  j["u_ref"] = u_ref;
  const SafetyEval se = rc.index.evaluate(sec.state);
  j["phi"] = se.value;
  j["grad_phi"] = se.grad;
  CommandOutput out;
  out.exit_code = r.status == SolveStatus::infeasible_relaxed ? kExitRelaxed : kExitOk;
  out.files.emplace_back("result.json", detail::dump(j));
  out.summary = std::string("status ") + to_string(r.status) + ", u = " + fmt_double(r.u.front());
  return out;
}

inline CommandOutput cmd_certify(const RunConfig& rc, const Overrides& ov) {
  if (!rc.certify) throw ConfigError("certify", "missing required section for the certify command");
  const auto& sec = *rc.certify;
  std::vector<Vector> states;
  if (sec.sampler == "uniform") {
    states = uniform_states(sec.region ? *sec.region : segway_region(), sec.samples, rc.seed);
  } else {
    std::vector<Vector> starts;
    const StateRegion start_region = sec.region ? *sec.region : segway_region();
    for (std::size_t i = 0; i < sec.trajectory_starts; ++i)
      starts.push_back(uniform_state(start_region, stream_seed(rc.seed, 1), i));
    states = trajectory_states(*rc.model, starts, stream_seed(rc.seed, 2), sec.trajectory, sec.samples);
  }
  const FeasibilityCounts c = check_states(states, rc.index, rc.feasibility_setup(), ov.threads, true);
  const FeasibilityCertificate cert =
      make_certificate(c.n_feasible, c.n_infeasible, sec.z_target, sec.prior_alpha, sec.prior_beta);

  auto cols = detail::state_columns(rc.model->state_dim());
  cols.push_back("feasible");
  cols.push_back("cause");
  CsvWriter csv(cols);
  for (const auto& s : c.samples) {
    std::string line;
    for (double v : s.state) line += fmt_double(v) + ",";
    std::string cause = s.cause;
    for (char& ch : cause)
      if (ch == ',' || ch == '\n' || ch == '"') ch = ';';
    csv.raw(line + (s.feasible ? "1," : "0,") + cause);
  }
  nlohmann::json j = to_json(cert);
  j["samples"] = states.size();
  j["sampler"] = sec.sampler;
  CommandOutput out;
  out.files.emplace_back("certificate.json", detail::dump(j));
  out.files.emplace_back("samples.csv", csv.str());
  out.summary = j["statement"].get<std::string>() + " (" + std::to_string(c.n_infeasible) + " infeasible of " +
                std::to_string(states.size()) + ")";
  return out;
}

inline CommandOutput cmd_synthesize(const RunConfig& rc, const Overrides& ov) {
  if (!rc.synthesize) throw ConfigError("synthesize", "missing required section for the synthesize command");
  SynthesisConfig cfg = rc.synthesize->config;
  cfg.seed = rc.seed;
  cfg.threads = ov.threads;
  const FeasibilitySetup setup = rc.feasibility_setup();
  const SynthesisResult res = synthesize(cfg, setup);

  CsvWriter hist({"generation", "best_alpha", "best_k_v", "best_beta", "best_certificate", "best_feasible_fraction",
                  "best_infeasible", "mean_certificate", "mean_feasible_fraction"});
  for (const auto& g : res.history)
    hist.row(g.generation, g.best_params.alpha, g.best_params.k_v, g.best_params.beta, g.best.certificate,
             g.best.feasible_fraction, g.best.n_infeasible, g.mean_certificate, g.mean_feasible_fraction);

  const auto fresh = sample_feasibility(cfg.region, rc.synthesize->certificate_samples, stream_seed(rc.seed, 0xce27),
                                        segway::TiltIndex(res.best), setup, ov.threads, false);
  const FeasibilityCertificate cert = make_certificate(fresh.n_feasible, fresh.n_infeasible, cfg.z_target);
  nlohmann::json params = {{"alpha", res.best.alpha},
                           {"k_v", res.best.k_v},
                           {"beta", res.best.beta},
                           {"generations_run", res.history.size()},
                           {"reached_zero_infeasible", res.reached_zero_infeasible},
                           {"search_fitness",
                            {{"certificate", res.best_fitness.certificate},
                             {"feasible_fraction", res.best_fitness.feasible_fraction},
                             {"n_infeasible", res.best_fitness.n_infeasible}}},
                           {"fresh_certificate", to_json(cert)}};
  CommandOutput out;
  out.files.emplace_back("params.json", detail::dump(params));
  out.files.emplace_back("history.csv", hist.str());
  out.summary = "alpha " + fmt_double(res.best.alpha) + ", k_v " + fmt_double(res.best.k_v) + ", beta " +
                fmt_double(res.best.beta) + "; fresh sample: " + std::to_string(fresh.n_infeasible) + " infeasible";
  return out;
}

inline CommandOutput cmd_simulate(const RunConfig& rc, const Overrides& ov) {
  if (!rc.simulate) throw ConfigError("simulate", "missing required section for the simulate command");
  const auto& sec = *rc.simulate;
  const SafeController ctrl =
      make_safe_controller(*rc.model, rc.index, rc.gamma, rc.solver, rc.eps_f, rc.eps0, rc.multiplicative);
  std::vector<RolloutRecord> recs;
  const std::vector<Vector> starts(sec.rollouts, sec.x0);
  const RolloutBatchStats st =
      rollout_batch(ctrl, rc.index, rc.gamma, *rc.model, starts, rc.seed, sec.options, sec.tilt_limit, ov.threads, &recs);

  auto cols = detail::state_columns(rc.model->state_dim());
  cols.insert(cols.begin(), {"rollout", "t"});
  for (const char* c : {"u", "phi", "realized_margin", "status"}) cols.emplace_back(c);
  CsvWriter csv(cols);
  for (std::size_t r = 0; r < recs.size(); ++r) {
    const auto& rec = recs[r];
    for (std::size_t k = 0; k < rec.statuses.size(); ++k) {
      std::string head = std::to_string(r) + "," + fmt_double(rec.times[k]);
      for (double v : rec.states[k]) head += "," + fmt_double(v);
      head += "," + fmt_double(rec.controls[k].front()) + "," + fmt_double(rec.phi[k]) + "," +
              fmt_double(rec.realized_margin[k]) + "," + to_string(rec.statuses[k]);
      csv.raw(head);
    }
  }
  nlohmann::json sum = {{"rollouts", st.rollouts},
                        {"rollouts_within_limit", st.rollouts_within_limit},
                        {"tilt_limit", sec.tilt_limit},
                        {"max_abs_tilt", st.max_abs_tilt},
                        {"solved_steps", st.solved_steps},
                        {"violated_steps", st.violated_steps},
                        {"relaxed_steps", st.relaxed_steps},
                        {"violation_rate", st.solved_steps ? static_cast<double>(st.violated_steps) /
                                                                 static_cast<double>(st.solved_steps)
                                                           : 0.0}};
  nlohmann::json term = nlohmann::json::array();
  for (const auto& rec : recs) term.push_back(rec.terminated ? rec.termination_cause : "");
  sum["termination"] = term;
  CommandOutput out;
  out.files.emplace_back("trajectory.csv", csv.str());
  out.files.emplace_back("summary.json", detail::dump(sum));
  out.summary = std::to_string(st.rollouts_within_limit) + "/" + std::to_string(st.rollouts) +
                " rollouts within the tilt limit, max |tilt| " + fmt_double(st.max_abs_tilt);
  return out;
}

inline CommandOutput cmd_compare(const RunConfig& rc, const Overrides& ov) {
  if (!rc.compare) throw ConfigError("compare", "missing required section for the compare command");
  const auto& sec = *rc.compare;
  std::vector<Vector> states = sec.states;
  const StateRegion region = rc.certify && rc.certify->region ? *rc.certify->region : segway_region();
  for (const auto& x : uniform_states(region, sec.probes, rc.seed)) states.push_back(x);

  std::vector<FeasibleSetReport> reps(states.size());
  parallel_for(states.size(), ov.threads, [&](std::size_t i) {
    reps[i] = compare_feasible_sets(states[i], *rc.model, rc.index, rc.gamma, rc.solver, rc.eps_f, sec.points, rc.eps0);
  });
  auto cols = detail::state_columns(rc.model->state_dim());
  for (const char* c : {"multi_interval", "uni_interval", "rhs_multi", "rhs_uni", "multi_status"}) cols.emplace_back(c);
  CsvWriter csv(cols);
  std::size_t ge = 0, strict = 0;
  for (const auto& r : reps) {
    std::string line;
    for (double v : r.state) line += fmt_double(v) + ",";
    line += fmt_double(r.multi_modal_interval) + "," + fmt_double(r.uni_modal_interval) + "," +
            fmt_double(r.rhs_multi) + "," + fmt_double(r.rhs_uni) + "," + to_string(r.multi_status);
    csv.raw(line);
    ge += r.multi_modal_interval >= r.uni_modal_interval ? 1 : 0;
    strict += r.multi_modal_interval > r.uni_modal_interval ? 1 : 0;
  }
  CommandOutput out;
  out.files.emplace_back("compare.csv", csv.str());
  out.summary = std::to_string(ge) + "/" + std::to_string(reps.size()) + " probes with multi >= uni, " +
                std::to_string(strict) + " strictly";
  return out;
}

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"solve", "certify", "synthesize", "simulate", "compare"};
  return names;
}

/// Runs `command` end to end. Config problems are reported on `err` and give
/// exit 1 with no files left behind.
inline int run_command(const std::string& command, const std::string& config_path, const std::string& out_dir,
                       const Overrides& ov, std::ostream& out, std::ostream& err) {
  try {
    const ConfigDocument doc = ConfigDocument::from_file(config_path);
    RunConfig rc = parse_run_config(doc);
    apply_overrides(rc, ov);

    CommandOutput res;
    if (command == "solve") res = cmd_solve(rc, ov);
    else if (command == "certify") res = cmd_certify(rc, ov);
    else if (command == "synthesize") res = cmd_synthesize(rc, ov);
    else if (command == "simulate") res = cmd_simulate(rc, ov);
    else if (command == "compare") res = cmd_compare(rc, ov);
    else throw ConfigError("", "unknown command '" + command + "'");

    std::ifstream in(config_path);
    std::stringstream text;
    text << in.rdbuf();
    OutputSet files(out_dir);
    std::vector<std::string> names;
    for (auto& [name, content] : res.files) {
      names.push_back(name);
      files.add(name, std::move(content));
    }
    nlohmann::json manifest = make_manifest(command, text.str(), rc.seed, names, effective_settings(rc));
    manifest["exit_code"] = res.exit_code;
    manifest["threads"] = resolve_threads(ov.threads);
    files.add("manifest.json", detail::dump(manifest));
    files.commit();
    out << command << ": " << res.summary << "\n";
    return res.exit_code;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << command << " aborted: " << e.what() << "\n";
    return kExitConfig;
  }
}

}  // namespace mmrssa
