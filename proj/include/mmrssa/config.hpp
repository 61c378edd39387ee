#pragma once

// JSON run configuration: parsing, strict validation and construction of
// the model, index and solver settings it describes.

#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cert.hpp"
#include "model.hpp"
#include "safety.hpp"
#include "segway.hpp"
#include "sim.hpp"
#include "synthesis.hpp"

namespace mmrssa {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

/// Configuration problem with a location: a field path and, when known, the
/// line and column of the offending value in the source text.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& path, const std::string& what, int line = 0, int col = 0)
      : std::runtime_error(format(path, what, line, col)), path_(path), line_(line), col_(col) {}

  const std::string& path() const { return path_; }
  int line() const { return line_; }
  int column() const { return col_; }

 private:
  static std::string format(const std::string& path, const std::string& what, int line, int col) {
    std::string s;
    if (line > 0) s += "line " + std::to_string(line) + ", column " + std::to_string(col) + ": ";
    if (!path.empty()) s += "field '" + path + "': ";
    return s + what;
  }
  std::string path_;
  int line_;
  int col_;
};

namespace detail {

inline std::pair<int, int> line_col(const std::string& text, std::size_t offset) {
  int line = 1, col = 1;
  for (std::size_t i = 0; i < offset && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

// Maps each value's dotted path to its starting offset in well-formed JSON text.
class PositionIndex {
 public:
  explicit PositionIndex(const std::string& text) : t_(text) {
    skip_ws();
    value("");
  }
  std::optional<std::size_t> find(const std::string& path) const {
    auto it = pos_.find(path);
    if (it == pos_.end()) return std::nullopt;
    return it->second;
  }

 private:
  void skip_ws() {
    while (i_ < t_.size() && (t_[i_] == ' ' || t_[i_] == '\t' || t_[i_] == '\n' || t_[i_] == '\r')) ++i_;
  }
  std::string string_token() {
    std::string s;
    ++i_;  // opening quote
    while (i_ < t_.size() && t_[i_] != '"') {
      if (t_[i_] == '\\') ++i_;
      if (i_ < t_.size()) s += t_[i_++];
    }
    ++i_;
    return s;
  }
  void value(const std::string& path) {
    if (i_ >= t_.size()) return;
    pos_[path] = i_;
    const char c = t_[i_];
    if (c == '{') {
      ++i_;
      skip_ws();
      while (i_ < t_.size() && t_[i_] != '}') {
        const std::string key = string_token();
        skip_ws();
        ++i_;  // ':'
        skip_ws();
        value(path.empty() ? key : path + "." + key);
        skip_ws();
        if (i_ < t_.size() && t_[i_] == ',') ++i_;
        skip_ws();
      }
      ++i_;
    } else if (c == '[') {
      ++i_;
      skip_ws();
      for (std::size_t k = 0; i_ < t_.size() && t_[i_] != ']'; ++k) {
        value(path + "[" + std::to_string(k) + "]");
        skip_ws();
        if (i_ < t_.size() && t_[i_] == ',') ++i_;
        skip_ws();
      }
      ++i_;
    } else if (c == '"') {
      (void)string_token();
    } else {
      while (i_ < t_.size() && t_[i_] != ',' && t_[i_] != '}' && t_[i_] != ']' && t_[i_] != ' ' && t_[i_] != '\n' &&
             t_[i_] != '\r' && t_[i_] != '\t')
        ++i_;
    }
  }

  const std::string& t_;
  std::size_t i_ = 0;
  std::map<std::string, std::size_t> pos_;
};

}  // namespace detail

/// Parsed document plus the source text, for located errors.
class ConfigDocument {
 public:
  static ConfigDocument from_text(std::string text) {
    ConfigDocument d;
    d.text_ = std::move(text);
    try {
      d.root_ = json::parse(d.text_);
    } catch (const json::parse_error& e) {
      const auto [line, col] = detail::line_col(d.text_, e.byte > 0 ? e.byte - 1 : 0);
      std::string msg = e.what();
      const auto p = msg.find("syntax error");
      throw ConfigError("", "malformed JSON: " + (p == std::string::npos ? msg : msg.substr(p)), line, col);
    }
    d.index_ = std::make_shared<detail::PositionIndex>(d.text_);
    return d;
  }
  static ConfigDocument from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("", "cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return from_text(ss.str());
  }
  static ConfigDocument from_json(json j) {
    ConfigDocument d;
    d.root_ = std::move(j);
    d.text_ = d.root_.dump(2);
    d.index_ = std::make_shared<detail::PositionIndex>(d.text_);
    return d;
  }

  const json& root() const { return root_; }
  json& root() { return root_; }

  [[noreturn]] void fail(const std::string& path, const std::string& what) const {
    if (index_) {
      if (auto off = index_->find(path)) {
        const auto [line, col] = detail::line_col(text_, *off);
        throw ConfigError(path, what, line, col);
      }
    }
    throw ConfigError(path, what);
  }

 private:
  std::string text_;
  json root_;
  std::shared_ptr<detail::PositionIndex> index_;
};

/// Typed, path-aware accessors over one JSON object.
class Node {
 public:
  Node(const ConfigDocument& doc, const json& j, std::string path) : doc_(&doc), j_(&j), path_(std::move(path)) {}

  const std::string& path() const { return path_; }
  const json& raw() const { return *j_; }
  bool has(const std::string& key) const { return j_->is_object() && j_->contains(key); }

  Node at(const std::string& key) const {
    require_object();
    if (!j_->contains(key)) doc_->fail(path_, "missing required field '" + key + "'");
    return Node(*doc_, (*j_)[key], child(key));
  }
  std::optional<Node> opt(const std::string& key) const {
    require_object();
    if (!j_->contains(key)) return std::nullopt;
    return Node(*doc_, (*j_)[key], child(key));
  }
  std::vector<Node> items() const {
    if (!j_->is_array()) fail("expected an array");
    std::vector<Node> out;
    for (std::size_t k = 0; k < j_->size(); ++k) out.emplace_back(*doc_, (*j_)[k], path_ + "[" + std::to_string(k) + "]");
    return out;
  }

  void allow_only(std::initializer_list<const char*> keys) const {
    require_object();
    std::set<std::string> ok(keys.begin(), keys.end());
    for (auto it = j_->begin(); it != j_->end(); ++it)
      if (!ok.count(it.key())) Node(*doc_, it.value(), child(it.key())).fail("unknown field");
  }

  double number() const {
    if (!j_->is_number()) fail("expected a number");
    return j_->get<double>();
  }
  std::uint64_t u64() const {
    if (!j_->is_number_unsigned() && !(j_->is_number_integer() && j_->get<std::int64_t>() >= 0))
      fail("expected a nonnegative integer");
    return j_->get<std::uint64_t>();
  }
  bool boolean() const {
    if (!j_->is_boolean()) fail("expected true or false");
    return j_->get<bool>();
  }
  std::string string() const {
    if (!j_->is_string()) fail("expected a string");
    return j_->get<std::string>();
  }
  Vector vector(std::size_t expected = 0) const {
    if (!j_->is_array()) fail("expected an array of numbers");
    Vector v;
    for (const auto& n : items()) v.push_back(n.number());
    if (expected && v.size() != expected) fail("expected " + std::to_string(expected) + " entries");
    return v;
  }
  Matrix matrix(std::size_t rows, std::size_t cols) const {
    if (!j_->is_array() || j_->size() != rows) fail("expected " + std::to_string(rows) + " rows");
    Matrix m(rows, cols);
    const auto rs = items();
    for (std::size_t r = 0; r < rows; ++r) {
      const Vector row = rs[r].vector(cols);
      for (std::size_t c = 0; c < cols; ++c) m(r, c) = row[c];
    }
    return m;
  }

  double number_or(const std::string& key, double dflt) const {
    auto n = opt(key);
    return n ? n->number() : dflt;
  }
  std::size_t count_or(const std::string& key, std::size_t dflt) const {
    auto n = opt(key);
    return n ? static_cast<std::size_t>(n->u64()) : dflt;
  }

  [[noreturn]] void fail(const std::string& what) const { doc_->fail(path_, what); }

 private:
  void require_object() const {
    if (!j_->is_object()) fail("expected an object");
  }
  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const ConfigDocument* doc_;
  const json* j_;
  std::string path_;
};

enum class ModelKind { segway_additive, segway_multiplicative, generic };

/// Safety index chosen by the config: the Segway tilt family, the raw
/// specification, or an affine index c·x + d for generic models.
struct AffineIndex {
  Vector weights;
  double offset = 0.0;
  SafetyEval evaluate(std::span<const double> x) const {
    if (x.size() != weights.size()) throw DimensionError("AffineIndex: state dimension");
    return {dot(weights, x) + offset, weights};
  }
};

class ConfiguredIndex {
 public:
  enum class Kind { tilt, spec, affine };

  static ConfiguredIndex tilt(segway::SafetyIndexParams p) {
    ConfiguredIndex c;
    c.kind_ = Kind::tilt;
    c.tilt_ = segway::TiltIndex(p);
    return c;
  }
  static ConfiguredIndex spec() {
    ConfiguredIndex c;
    c.kind_ = Kind::spec;
    return c;
  }
  static ConfiguredIndex affine(AffineIndex a) {
    ConfiguredIndex c;
    c.kind_ = Kind::affine;
    c.affine_ = std::move(a);
    return c;
  }

  Kind kind() const { return kind_; }
  const segway::SafetyIndexParams& tilt_params() const { return tilt_.params(); }
  const AffineIndex& affine_params() const { return affine_; }

  SafetyEval evaluate(std::span<const double> x) const {
    switch (kind_) {
      case Kind::tilt: return tilt_.evaluate(x);
      case Kind::spec: return segway::SpecIndex{}.evaluate(x);
      case Kind::affine: return affine_.evaluate(x);
    }
    return {};
  }

 private:
  Kind kind_ = Kind::tilt;
  segway::TiltIndex tilt_{};
  AffineIndex affine_{};
};

struct SolveSection {
  Vector state;
  std::optional<Vector> u_ref;
};

struct CertifySection {
  std::size_t samples = 100000;
  std::string sampler = "uniform";
  std::optional<StateRegion> region;
  double z_target = 0.9999;
  double prior_alpha = 1.0;
  double prior_beta = 1.0;
  std::size_t trajectory_starts = 10;
  RolloutOptions trajectory{};
};

struct SynthesizeSection {
  SynthesisConfig config{};
  std::size_t certificate_samples = 100000;
};

struct SimulateSection {
  Vector x0;
  std::size_t rollouts = 1;
  RolloutOptions options{};
  double tilt_limit = 0.1;
};

struct CompareSection {
  std::vector<Vector> states;
  std::size_t probes = 0;  // extra uniform probe states drawn from the certification region
  std::size_t points = 10000;
};

/// Everything a run needs, after validation.
struct RunConfig {
  ModelKind model_kind = ModelKind::segway_additive;
  segway::SegwayParams segway{};
  std::shared_ptr<const MultiModalModel> model;
  ConfiguredIndex index = ConfiguredIndex::tilt(segway::kHandIndex);
  GammaSpec gamma{};
  double eps_f = 0.01;
  double eps0 = 1e-6;
  std::uint64_t seed = 0;
  SolverKind solver = SolverKind::multiplicative;
  MultiplicativeOptions multiplicative{};
  std::optional<SolveSection> solve;
  std::optional<CertifySection> certify;
  std::optional<SynthesizeSection> synthesize;
  std::optional<SimulateSection> simulate;
  std::optional<CompareSection> compare;

  FeasibilitySetup feasibility_setup() const {
    FeasibilitySetup s;
    s.model = model.get();
    s.gamma = gamma;
    s.solver = solver;
    s.eps_f = eps_f;
    s.eps0 = eps0;
    s.multiplicative = multiplicative;
    return s;
  }
};

namespace detail {

inline segway::SegwayParams parse_segway(const Node& n) {
  n.allow_only({"m", "m0", "J0", "mL", "R", "K_m", "K_b", "grav"});
  segway::SegwayParams p;
  p.m = n.number_or("m", p.m);
  p.m0 = n.number_or("m0", p.m0);
  p.J0 = n.number_or("J0", p.J0);
  p.mL = n.number_or("mL", p.mL);
  p.R = n.number_or("R", p.R);
  p.K_m = n.number_or("K_m", p.K_m);
  p.K_b = n.number_or("K_b", p.K_b);
  p.grav = n.number_or("grav", p.grav);
  try {
    p.validate();
  } catch (const std::exception& e) {
    n.fail(e.what());
  }
  return p;
}

inline ControlBox parse_box(const Node& n, std::size_t m) {
  n.allow_only({"lower", "upper"});
  ControlBox b{n.at("lower").vector(m), n.at("upper").vector(m)};
  for (std::size_t j = 0; j < m; ++j)
    if (!(b.lower[j] < b.upper[j])) n.fail("each lower bound must be below its upper bound");
  return b;
}

inline StateRegion parse_region(const Node& n) {
  n.allow_only({"lower", "upper"});
  StateRegion r{n.at("lower").vector(), n.at("upper").vector()};
  try {
    r.validate();
  } catch (const std::exception& e) {
    n.fail(e.what());
  }
  return r;
}

inline void check_weights(const Node& modes, const std::vector<double>& w) {
  double total = 0.0;
  for (double v : w) {
    if (!(v >= 0.0 && v <= 1.0)) modes.fail("mode weights must lie in [0,1]");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9) modes.fail("mode weights must sum to 1");
}

inline RolloutOptions parse_rollout_options(const Node& n, RolloutOptions o) {
  o.horizon = n.number_or("horizon", o.horizon);
  o.dt = n.number_or("dt", o.dt);
  o.target_speed = n.number_or("target_speed", o.target_speed);
  o.gain = n.number_or("gain", o.gain);
  if (auto s = n.opt("safe_layer")) o.safe_layer = s->boolean();
  if (!(o.dt > 0.0)) n.fail("dt must be positive");
  if (!(o.horizon > 0.0)) n.fail("horizon must be positive");
  return o;
}

}  // namespace detail

/// Validates the whole document and builds the run configuration.
inline RunConfig parse_run_config(const ConfigDocument& doc) {
  const Node root(doc, doc.root(), "");
  root.allow_only({"schema_version", "model", "safety_index", "gamma", "eps_f", "eps0", "seed", "solver", "solve",
                   "certify", "synthesize", "simulate", "compare", "description"});
  const Node ver = root.at("schema_version");
  if (ver.u64() != static_cast<std::uint64_t>(kSchemaVersion))
    ver.fail("unsupported schema version (expected " + std::to_string(kSchemaVersion) + ")");

  RunConfig rc;
  const Node model = root.at("model");
  model.allow_only({"kind", "segway", "modes", "km_modes", "control_bounds", "state_dim", "control_dim"});
  const Node kind = model.at("kind");
  const std::string k = kind.string();
  if (k == "segway_additive") rc.model_kind = ModelKind::segway_additive;
  else if (k == "segway_multiplicative") rc.model_kind = ModelKind::segway_multiplicative;
  else if (k == "generic") rc.model_kind = ModelKind::generic;
  else kind.fail("unknown model kind '" + k + "' (expected segway_additive, segway_multiplicative or generic)");

  if (auto s = model.opt("segway")) rc.segway = detail::parse_segway(*s);
  const std::size_t m_dim = rc.model_kind == ModelKind::generic ? model.at("control_dim").u64() : 1;
  ControlBox box = segway::default_control_box();
  if (auto b = model.opt("control_bounds")) box = detail::parse_box(*b, m_dim);
  else if (rc.model_kind == ModelKind::generic) model.at("control_bounds");

  try {
    if (rc.model_kind == ModelKind::segway_additive) {
      std::vector<segway::AdditiveMode> modes;
      const Node ms = model.at("modes");
      std::vector<double> w;
      for (const Node& mn : ms.items()) {
        mn.allow_only({"weight", "mu_d", "sigma_d"});
        segway::AdditiveMode am{mn.at("weight").number(), mn.at("mu_d").vector(4), mn.at("sigma_d").matrix(4, 4)};
        try {
          require_psd(am.sigma_d);
        } catch (const std::exception& e) {
          mn.at("sigma_d").fail(e.what());
        }
        w.push_back(am.weight);
        modes.push_back(std::move(am));
      }
      if (modes.empty()) ms.fail("at least one mode is required");
      detail::check_weights(ms, w);
      rc.model = std::make_shared<const MultiModalModel>(segway::segway_additive_model(rc.segway, modes, box));
    } else if (rc.model_kind == ModelKind::segway_multiplicative) {
      std::vector<segway::MotorMode> modes;
      const Node ms = model.at("km_modes");
      std::vector<double> w;
      for (const Node& mn : ms.items()) {
        mn.allow_only({"weight", "mu_k", "sigma_k"});
        segway::MotorMode mm{mn.at("weight").number(), mn.at("mu_k").number(), mn.at("sigma_k").number()};
        if (mm.sigma_k < 0.0) mn.at("sigma_k").fail("must be nonnegative");
        w.push_back(mm.weight);
        modes.push_back(mm);
      }
      if (modes.empty()) ms.fail("at least one mode is required");
      detail::check_weights(ms, w);
      rc.model = std::make_shared<const MultiModalModel>(segway::segway_multiplicative_model(rc.segway, modes, box));
    } else {
      const std::size_t n = model.at("state_dim").u64();
      if (n == 0 || m_dim == 0) model.fail("state_dim and control_dim must be positive");
      ModeList modes;
      const Node ms = model.at("modes");
      std::vector<double> w;
      for (const Node& mn : ms.items()) {
        mn.allow_only({"weight", "mu_f", "sigma_f", "mu_g", "sigma_g"});
        ModeParams mp;
        mp.weight = mn.at("weight").number();
        mp.mu_f = mn.at("mu_f").vector(n);
        mp.sigma_f = mn.at("sigma_f").matrix(n, n);
        mp.mu_g = mn.at("mu_g").matrix(n, m_dim);
        if (auto sg = mn.opt("sigma_g")) mp.sigma_g = sg->matrix(n * m_dim, n * m_dim);
        try {
          require_psd(mp.sigma_f);
        } catch (const std::exception& e) {
          mn.at("sigma_f").fail(e.what());
        }
        if (!mp.sigma_g.empty()) {
          try {
            require_psd(mp.sigma_g);
          } catch (const std::exception& e) {
            mn.at("sigma_g").fail(e.what());
          }
        }
        w.push_back(mp.weight);
        modes.push_back(std::move(mp));
      }
      if (modes.empty()) ms.fail("at least one mode is required");
      detail::check_weights(ms, w);
      rc.model = std::make_shared<const MultiModalModel>(constant_model(std::move(modes), box));
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    model.fail(e.what());
  }

  if (auto si = root.opt("safety_index")) {
    si->allow_only({"kind", "alpha", "k_v", "beta", "weights", "offset"});
    const std::string sk = si->has("kind") ? si->at("kind").string() : "tilt";
    if (sk == "tilt") {
      segway::SafetyIndexParams p{si->number_or("alpha", 1.0), si->number_or("k_v", 1.0), si->number_or("beta", 0.001)};
      try {
        p.validate();
      } catch (const std::exception& e) {
        si->fail(e.what());
      }
      rc.index = ConfiguredIndex::tilt(p);
    } else if (sk == "spec") {
      rc.index = ConfiguredIndex::spec();
    } else if (sk == "affine") {
      rc.index = ConfiguredIndex::affine({si->at("weights").vector(rc.model->state_dim()), si->number_or("offset", 0.0)});
    } else {
      si->at("kind").fail("unknown safety index kind '" + sk + "' (expected tilt, spec or affine)");
    }
  }
  if (rc.model_kind == ModelKind::generic && rc.index.kind() != ConfiguredIndex::Kind::affine)
    root.at("safety_index").fail("generic models need an affine safety index");

  if (auto g = root.opt("gamma")) {
    g->allow_only({"slope"});
    rc.gamma.slope = g->number_or("slope", 1.0);
    if (!(rc.gamma.slope > 0.0)) g->at("slope").fail("must be positive");
  }
  if (auto e = root.opt("eps_f")) {
    rc.eps_f = e->number();
    if (!(rc.eps_f > 0.0 && rc.eps_f < 1.0)) e->fail("must lie in (0,1)");
  }
  if (auto e = root.opt("eps0")) {
    rc.eps0 = e->number();
    if (!(rc.eps0 > 0.0)) e->fail("must be positive");
  }
  if (auto s = root.opt("seed")) rc.seed = s->u64();

  if (auto s = root.opt("solver")) {
    s->allow_only({"kind", "multiplicative"});
    if (auto k2 = s->opt("kind")) {
      try {
        rc.solver = parse_solver_kind(k2->string());
      } catch (const std::invalid_argument& e) {
        k2->fail(e.what());
      }
    }
    if (auto mo = s->opt("multiplicative")) {
      mo->allow_only({"p_floor", "p_ceil", "fd_h", "max_iter", "step_tol", "gap_tol", "mu_factor", "feas_tol"});
      auto& o = rc.multiplicative;
      o.p_floor = mo->number_or("p_floor", o.p_floor);
      o.p_ceil = mo->number_or("p_ceil", o.p_ceil);
      o.fd_h = mo->number_or("fd_h", o.fd_h);
      o.max_iter = static_cast<int>(mo->count_or("max_iter", static_cast<std::size_t>(o.max_iter)));
      o.step_tol = mo->number_or("step_tol", o.step_tol);
      o.socp.gap_tol = mo->number_or("gap_tol", o.socp.gap_tol);
      o.socp.mu_factor = mo->number_or("mu_factor", o.socp.mu_factor);
      o.socp.feas_tol = mo->number_or("feas_tol", o.socp.feas_tol);
      if (!(o.p_floor > 0.0 && o.p_floor < o.p_ceil && o.p_ceil < 1.0)) mo->fail("need 0 < p_floor < p_ceil < 1");
      if (!(o.fd_h > 0.0) || !(o.step_tol > 0.0) || !(o.socp.gap_tol > 0.0) || !(o.socp.mu_factor > 1.0))
        mo->fail("tolerances must be positive and mu_factor above 1");
    }
  }
  if (rc.solver == SolverKind::additive && rc.model_kind == ModelKind::segway_multiplicative)
    root.at("solver").fail("the additive solver needs a model whose g is deterministic");

  const std::size_t n = rc.model->state_dim();
  if (auto s = root.opt("solve")) {
    s->allow_only({"state", "u_ref"});
    SolveSection sec;
    sec.state = s->at("state").vector(n);
    if (auto u = s->opt("u_ref")) sec.u_ref = u->vector(rc.model->control_dim());
    else if (rc.model_kind == ModelKind::generic) s->at("u_ref");
    rc.solve = sec;
  }
  if (auto c = root.opt("certify")) {
    c->allow_only({"samples", "sampler", "region", "z_target", "prior_alpha", "prior_beta", "trajectory"});
    CertifySection sec;
    sec.samples = c->count_or("samples", sec.samples);
    if (sec.samples == 0) c->at("samples").fail("must be at least 1");
    if (auto sm = c->opt("sampler")) {
      sec.sampler = sm->string();
      if (sec.sampler != "uniform" && sec.sampler != "trajectory") sm->fail("expected uniform or trajectory");
    }
    if (auto r = c->opt("region")) {
      sec.region = detail::parse_region(*r);
      if (sec.region->lower.size() != n) r->fail("region dimension must match the state dimension");
    }
    sec.z_target = c->number_or("z_target", sec.z_target);
    if (!(sec.z_target >= 0.0 && sec.z_target <= 1.0)) c->at("z_target").fail("must lie in [0,1]");
    sec.prior_alpha = c->number_or("prior_alpha", sec.prior_alpha);
    sec.prior_beta = c->number_or("prior_beta", sec.prior_beta);
    if (!(sec.prior_alpha > 0.0) || !(sec.prior_beta > 0.0)) c->fail("prior parameters must be positive");
    if (auto t = c->opt("trajectory")) {
      t->allow_only({"starts", "horizon", "dt", "target_speed", "gain"});
      sec.trajectory_starts = t->count_or("starts", sec.trajectory_starts);
      sec.trajectory = detail::parse_rollout_options(*t, sec.trajectory);
    }
    if (sec.sampler == "trajectory" && !rc.model->has_nominal())
      c->at("sampler").fail("trajectory sampling needs a Segway model");
    if (rc.model_kind == ModelKind::generic && !sec.region) c->at("region");
    rc.certify = sec;
  }
  if (auto s = root.opt("synthesize")) {
    s->allow_only({"ranges", "population", "generations", "eval_samples", "sigma0", "z_target", "certificate_samples",
                   "stop_on_zero_infeasible"});
    if (rc.model_kind == ModelKind::generic) s->fail("synthesis needs a Segway model");
    SynthesizeSection sec;
    auto& cfg = sec.config;
    if (auto r = s->opt("ranges")) {
      r->allow_only({"alpha", "k_v", "beta"});
      const char* names[3] = {"alpha", "k_v", "beta"};
      for (int i = 0; i < 3; ++i)
        if (auto pr = r->opt(names[i])) {
          const Vector v = pr->vector(2);
          if (!(v[0] > 0.0 && v[0] < v[1])) pr->fail("expected [low, high] with 0 < low < high");
          cfg.ranges[i] = {v[0], v[1]};
        }
    }
    cfg.population = static_cast<int>(s->count_or("population", static_cast<std::size_t>(cfg.population)));
    cfg.generations = static_cast<int>(s->count_or("generations", static_cast<std::size_t>(cfg.generations)));
    cfg.eval_samples = s->count_or("eval_samples", cfg.eval_samples);
    cfg.sigma0 = s->number_or("sigma0", cfg.sigma0);
    cfg.z_target = s->number_or("z_target", cfg.z_target);
    if (auto z = s->opt("stop_on_zero_infeasible")) cfg.stop_on_zero_infeasible = z->boolean();
    sec.certificate_samples = s->count_or("certificate_samples", sec.certificate_samples);
    try {
      cfg.validate();
    } catch (const std::exception& e) {
      s->fail(e.what());
    }
    if (sec.certificate_samples == 0) s->at("certificate_samples").fail("must be at least 1");
    rc.synthesize = sec;
  }
  if (auto s = root.opt("simulate")) {
    s->allow_only({"x0", "rollouts", "horizon", "dt", "target_speed", "gain", "safe_layer", "tilt_limit"});
    if (!rc.model->has_nominal()) s->fail("simulation needs a Segway model");
    SimulateSection sec;
    sec.x0 = s->at("x0").vector(n);
    sec.rollouts = s->count_or("rollouts", sec.rollouts);
    if (sec.rollouts == 0) s->at("rollouts").fail("must be at least 1");
    sec.options = detail::parse_rollout_options(*s, sec.options);
    sec.tilt_limit = s->number_or("tilt_limit", sec.tilt_limit);
    rc.simulate = sec;
  }
  if (auto c = root.opt("compare")) {
    c->allow_only({"states", "probes", "points"});
    if (rc.model->control_dim() != 1) c->fail("set comparison sweeps single-control models only");
    CompareSection sec;
    if (auto st = c->opt("states"))
      for (const Node& x : st->items()) sec.states.push_back(x.vector(n));
    sec.probes = c->count_or("probes", 0);
    sec.points = c->count_or("points", sec.points);
    if (sec.points < 2) c->fail("points must be at least 2");
    if (sec.states.empty() && sec.probes == 0) c->fail("give 'states' or a positive 'probes' count");
    if (sec.probes > 0 && rc.model_kind == ModelKind::generic) c->at("probes").fail("probe sampling needs a Segway model");
    rc.compare = sec;
  }
  return rc;
}

}  // namespace mmrssa
