#include "ultra/errors.hpp"
#include "ultra/reports.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace ultra {

ConfigError::ConfigError(const std::string& msg, int line, int column)
    : Error("config:" + std::to_string(line) + ":" + std::to_string(column) + ": " + msg),
      line_(line),
      column_(column) {}

namespace {

[[noreturn]] void fail(const YAML::Node& at, const std::string& msg) {
  const YAML::Mark m = at.Mark();
  throw ConfigError(msg, m.line + 1, m.column + 1);
}

void check_map(const YAML::Node& node, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!node.IsMap()) fail(node, "'" + where + "' must be a mapping");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& kv : node) {
    const std::string key = kv.first.as<std::string>();
    if (!ok.count(key)) fail(kv.first, "unknown key '" + key + "' in " + where);
  }
}

template <class T>
const char* type_name() {
  if constexpr (std::is_same_v<T, double>) return "a number";
  if constexpr (std::is_same_v<T, int>) return "an integer";
  if constexpr (std::is_same_v<T, std::uint64_t>) return "a nonnegative integer";
  if constexpr (std::is_same_v<T, bool>) return "a boolean";
  if constexpr (std::is_same_v<T, std::string>) return "a string";
  return "a value";
}

template <class T>
T as(const YAML::Node& n, const std::string& key) {
  if (!n.IsScalar()) fail(n, "'" + key + "' must be " + type_name<T>());
  try {
    return n.as<T>();
  } catch (const YAML::BadConversion&) {
    fail(n, "'" + key + "' must be " + type_name<T>() + ", got '" + n.Scalar() + "'");
  }
}

template <class T>
void read(const YAML::Node& map, const char* key, T& out) {
  if (const YAML::Node n = map[key]) out = as<T>(n, key);
}

template <class T>
void read_list(const YAML::Node& map, const char* key, std::vector<T>& out) {
  const YAML::Node n = map[key];
  if (!n) return;
  if (!n.IsSequence()) fail(n, std::string("'") + key + "' must be a list");
  out.clear();
  for (const auto& e : n) out.push_back(as<T>(e, key));
}

void read_matrix(const YAML::Node& map, const char* key, std::vector<std::vector<double>>& out) {
  const YAML::Node n = map[key];
  if (!n) return;
  if (!n.IsSequence()) fail(n, std::string("'") + key + "' must be a list of rows");
  out.clear();
  for (const auto& row : n) {
    if (!row.IsSequence()) fail(row, std::string("'") + key + "' rows must be lists");
    std::vector<double> r;
    for (const auto& e : row) r.push_back(as<double>(e, key));
    if (!out.empty() && r.size() != out.front().size()) fail(row, std::string("'") + key + "' rows differ in length");
    out.push_back(std::move(r));
  }
}

Axis read_axis(const YAML::Node& n, const std::string& key) {
  if (!n.IsSequence() || n.size() != 2) fail(n, "'" + key + "' axes are [half_width, points] pairs");
  return Axis{as<double>(n[0], key), as<int>(n[1], key)};
}

void read_axes(const YAML::Node& map, const char* key, std::vector<Axis>& out) {
  const YAML::Node n = map[key];
  if (!n) return;
  if (!n.IsSequence()) fail(n, std::string("'") + key + "' must be a list of axes");
  out.clear();
  for (const auto& e : n) out.push_back(read_axis(e, key));
}

void read_family(const YAML::Node& map, const char* key, CoefficientFamily& f) {
  const YAML::Node n = map[key];
  if (!n) return;
  check_map(n, key, {"kind", "a0", "a_t", "a_v", "amp", "k", "omega"});
  read(n, "kind", f.kind);
  if (f.kind != "constant" && f.kind != "affine" && f.kind != "sinusoidal")
    fail(n["kind"], "unknown coefficient family '" + f.kind + "'");
  read(n, "a0", f.a0);
  read(n, "a_t", f.a_t);
  read_list(n, "a_v", f.a_v);
  read(n, "amp", f.amp);
  read(n, "k", f.k);
  read(n, "omega", f.omega);
}

TestFunctionKind read_kind(const YAML::Node& n) {
  try {
    return test_function_kind(as<std::string>(n, "test_function"));
  } catch (const ValidationError& e) {
    fail(n, e.what());
  }
}

// Every invariant that can be checked without running anything.
void validate(const RunConfig& cfg, const YAML::Node& root) {
  const auto at = [&](const char* block) { return root[block] ? root[block] : root; };
  OperatorSpec spec = [&] {
    try {
      return build_operator(cfg);
    } catch (const Error& e) {
      fail(at("operator"), e.what());
    }
  }();
  GridSpec grid = [&] {
    try {
      return build_grid(cfg);
    } catch (const Error& e) {
      fail(at("grid"), e.what());
    }
  }();
  if (grid.m() != spec.m()) fail(at("grid"), "grid has " + std::to_string(grid.m()) + " v axes, operator needs " +
                                                 std::to_string(spec.m()));
  if (grid.n() != 0 && grid.n() != spec.n())
    fail(at("grid"), "grid has " + std::to_string(grid.n()) + " w axes, operator needs " + std::to_string(spec.n()));

  const auto& c = cfg.carleman;
  if (c.alphas.empty()) fail(at("carleman"), "alpha list is empty");
  if (c.R.empty()) fail(at("carleman"), "R list is empty");
  for (double a : c.alphas)
    for (double r : c.R) try {
        base_params(cfg, a, r).validate();
      } catch (const ValidationError& e) {
        fail(at("carleman"), e.what());
      }
  const auto& k = c.ceilings;
  if (!(k.carleman > 0 && k.trend >= 1 && k.lemma1_floor > 0 && k.lemma2 > 0 && k.lemma2_band >= 1 && k.c_chi > 0 &&
        k.identity_vanish > 0 && k.identity_margin >= 0 && k.residual > 0))
    fail(at("carleman"), "ceilings must be positive (trend and lemma2_band at least 1)");

  const auto& s = cfg.suite;
  const YAML::Node sn = at("suite");
  for (const auto& item : s.items)
    if (std::find(suite_items().begin(), suite_items().end(), item) == suite_items().end())
      fail(sn, "unknown suite item '" + item + "'");
  if (s.seeds < 1) fail(sn, "seeds must be at least 1");
  if (!s.rho.empty() && static_cast<int>(s.rho.size()) != spec.n())
    fail(sn, "rho needs " + std::to_string(spec.n()) + " entries");
  if (s.sweep_mode != "local" && s.sweep_mode != "global") fail(sn, "sweep_mode must be local or global");
  if (!(s.lemma2_eps > 0.0)) fail(sn, "lemma2_eps must be positive");
  for (double x : s.rho_scales)
    if (!(x > 0.0)) fail(sn, "rho_scales must be positive");

  const bool needs_jerk = std::any_of(s.items.begin(), s.items.end(),
                                      [](const auto& i) { return i == "simulate-jerk" || i == "pipeline"; });
  const auto& j = cfg.jerk.setup;
  const YAML::Node jn = at("jerk");
  if (needs_jerk && (spec.m() != 1 || spec.n() != 3 || cfg.op.preset != "jerk"))
    fail(jn, "simulate-jerk and pipeline need operator preset jerk");
  if (j.w_axes.size() != 3) fail(jn, "jerk w needs three axes (A, V, Q)");
  if (j.stored < 16) fail(jn, "stored must be at least 16");
  if (j.substeps < 1) fail(jn, "substeps must be at least 1");
  if (j.alphas.empty()) fail(jn, "alpha list is empty");
  if (!(j.packet.sigma > 0.0)) fail(jn, "sigma must be positive");
  try {
    GridSpec(c.t2, j.stored, {j.j_axis}, j.w_axes);
    for (double a : j.alphas) {
      CarlemanParams p = base_params(cfg, a, c.R.front());
      p.validate();
      const double pos = p.t1 / (c.t2 / (j.stored - 1));
      if (std::abs(pos - std::round(pos)) > 1e-9) throw ValidationError("t1 must be a stored time node");
    }
  } catch (const Error& e) {
    fail(jn, e.what());
  }
  const YAML::Node on = at("output");
  if (cfg.output.directory.empty()) fail(on, "directory must not be empty");
  for (const auto& f : cfg.output.formats)
    if (f != "json" && f != "csv") fail(on, "unknown format '" + f + "'");
}

void emit_family(YAML::Emitter& e, const CoefficientFamily& f) {
  e << YAML::BeginMap << YAML::Key << "kind" << YAML::Value << f.kind << YAML::Key << "a0" << YAML::Value << f.a0
    << YAML::Key << "a_t" << YAML::Value << f.a_t << YAML::Key << "a_v" << YAML::Value << YAML::Flow << f.a_v
    << YAML::Key << "amp" << YAML::Value << f.amp << YAML::Key << "k" << YAML::Value << f.k << YAML::Key << "omega"
    << YAML::Value << f.omega << YAML::EndMap;
}

void emit_axes(YAML::Emitter& e, const std::vector<Axis>& axes) {
  e << YAML::BeginSeq;
  for (const auto& a : axes) e << YAML::Flow << YAML::BeginSeq << a.half_width << a.points << YAML::EndSeq;
  e << YAML::EndSeq;
}

void emit_matrix(YAML::Emitter& e, const std::vector<std::vector<double>>& m) {
  e << YAML::BeginSeq;
  for (const auto& r : m) e << YAML::Flow << r;
  e << YAML::EndSeq;
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(e.msg, e.mark.line + 1, e.mark.column + 1);
  }
  RunConfig cfg;
  if (!root || root.IsNull()) return cfg;
  check_map(root, "config", {"operator", "grid", "carleman", "suite", "jerk", "output"});

  if (const YAML::Node n = root["operator"]) {
    check_map(n, "operator", {"preset", "n", "B1", "B2", "diffusivity", "potential", "drift_v", "lambda"});
    auto& o = cfg.op;
    read(n, "preset", o.preset);
    read(n, "n", o.n);
    read_matrix(n, "B1", o.B1);
    read_matrix(n, "B2", o.B2);
    read_family(n, "diffusivity", o.diffusivity);
    read_family(n, "potential", o.potential);
    read_list(n, "drift_v", o.drift_v);
    read(n, "lambda", o.lambda);
    static const std::set<std::string> presets{"heat", "L1", "jerk", "example1", "custom"};
    if (!presets.count(o.preset)) fail(n["preset"], "unknown preset '" + o.preset + "'");
    if (o.preset == "custom" && (o.B1.empty() || o.B2.empty())) fail(n, "custom preset needs B1 and B2");
    if (o.preset != "custom" && (!o.B1.empty() || !o.B2.empty())) fail(n, "B1/B2 literals need preset custom");
  }
  if (const YAML::Node n = root["grid"]) {
    check_map(n, "grid", {"nt", "v", "w"});
    read(n, "nt", cfg.grid.nt);
    read_axes(n, "v", cfg.grid.v);
    read_axes(n, "w", cfg.grid.w);
  }
  if (const YAML::Node n = root["carleman"]) {
    check_map(n, "carleman", {"alpha", "b", "t1", "t2", "R", "eps0", "alpha0", "c_star", "c0", "ceilings"});
    auto& c = cfg.carleman;
    read_list(n, "alpha", c.alphas);
    read(n, "b", c.b);
    read(n, "t1", c.t1);
    read(n, "t2", c.t2);
    read_list(n, "R", c.R);
    read(n, "eps0", c.eps0);
    read(n, "alpha0", c.alpha0);
    read(n, "c_star", c.c_star);
    read(n, "c0", c.c0);
    if (const YAML::Node k = n["ceilings"]) {
      check_map(k, "ceilings", {"carleman", "trend", "lemma1_floor", "lemma2", "lemma2_band", "c_chi",
                                "identity_vanish", "identity_margin", "residual"});
      auto& x = c.ceilings;
      read(k, "carleman", x.carleman);
      read(k, "trend", x.trend);
      read(k, "lemma1_floor", x.lemma1_floor);
      read(k, "lemma2", x.lemma2);
      read(k, "lemma2_band", x.lemma2_band);
      read(k, "c_chi", x.c_chi);
      read(k, "identity_vanish", x.identity_vanish);
      read(k, "identity_margin", x.identity_margin);
      read(k, "residual", x.residual);
    }
  }
  if (const YAML::Node n = root["suite"]) {
    check_map(n, "suite", {"items", "seeds", "seed_base", "test_function", "rho", "lemma2_eps", "rho_scales",
                           "sweep_mode"});
    auto& s = cfg.suite;
    read_list(n, "items", s.items);
    read(n, "seeds", s.seeds);
    read(n, "seed_base", s.seed_base);
    if (n["test_function"]) s.test_function = read_kind(n["test_function"]);
    read_list(n, "rho", s.rho);
    read(n, "lemma2_eps", s.lemma2_eps);
    read_list(n, "rho_scales", s.rho_scales);
    read(n, "sweep_mode", s.sweep_mode);
  }
  if (const YAML::Node n = root["jerk"]) {
    check_map(n, "jerk", {"J", "w", "stored", "substeps", "sigma", "k", "contrast_k", "contrast", "alpha", "export"});
    auto& j = cfg.jerk.setup;
    if (n["J"]) j.j_axis = read_axis(n["J"], "J");
    read_axes(n, "w", j.w_axes);
    read(n, "stored", j.stored);
    read(n, "substeps", j.substeps);
    read(n, "sigma", j.packet.sigma);
    read(n, "k", j.packet.k);
    read(n, "contrast_k", j.contrast_k);
    read(n, "contrast", j.run_contrast);
    read_list(n, "alpha", j.alphas);
    read(n, "export", cfg.jerk.export_trajectory);
  }
  if (const YAML::Node n = root["output"]) {
    check_map(n, "output", {"directory", "formats"});
    read(n, "directory", cfg.output.directory);
    read_list(n, "formats", cfg.output.formats);
  }
  validate(cfg, root);
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open " + path.string(), 0, 0);
  std::ostringstream os;
  os << is.rdbuf();
  return parse_config(os.str());
}

std::string serialize_config(const RunConfig& cfg) {
  YAML::Emitter e;
  e.SetDoublePrecision(17);
  e << YAML::BeginMap;
  const auto& o = cfg.op;
  e << YAML::Key << "operator" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "preset" << YAML::Value << o.preset << YAML::Key << "n" << YAML::Value << o.n;
  if (!o.B1.empty()) {
    e << YAML::Key << "B1" << YAML::Value;
    emit_matrix(e, o.B1);
    e << YAML::Key << "B2" << YAML::Value;
    emit_matrix(e, o.B2);
  }
  e << YAML::Key << "diffusivity" << YAML::Value;
  emit_family(e, o.diffusivity);
  e << YAML::Key << "potential" << YAML::Value;
  emit_family(e, o.potential);
  e << YAML::Key << "drift_v" << YAML::Value << YAML::Flow << o.drift_v;
  e << YAML::Key << "lambda" << YAML::Value << o.lambda << YAML::EndMap;

  e << YAML::Key << "grid" << YAML::Value << YAML::BeginMap << YAML::Key << "nt" << YAML::Value << cfg.grid.nt
    << YAML::Key << "v" << YAML::Value;
  emit_axes(e, cfg.grid.v);
  e << YAML::Key << "w" << YAML::Value;
  emit_axes(e, cfg.grid.w);
  e << YAML::EndMap;

  const auto& c = cfg.carleman;
  const auto& k = c.ceilings;
  e << YAML::Key << "carleman" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "alpha" << YAML::Value << YAML::Flow << c.alphas;
  e << YAML::Key << "b" << YAML::Value << c.b << YAML::Key << "t1" << YAML::Value << c.t1 << YAML::Key << "t2"
    << YAML::Value << c.t2;
  e << YAML::Key << "R" << YAML::Value << YAML::Flow << c.R;
  e << YAML::Key << "eps0" << YAML::Value << c.eps0 << YAML::Key << "alpha0" << YAML::Value << c.alpha0 << YAML::Key
    << "c_star" << YAML::Value << c.c_star << YAML::Key << "c0" << YAML::Value << c.c0;
  e << YAML::Key << "ceilings" << YAML::Value << YAML::BeginMap << YAML::Key << "carleman" << YAML::Value
    << k.carleman << YAML::Key << "trend" << YAML::Value << k.trend << YAML::Key << "lemma1_floor" << YAML::Value
    << k.lemma1_floor << YAML::Key << "lemma2" << YAML::Value << k.lemma2 << YAML::Key << "lemma2_band"
    << YAML::Value << k.lemma2_band << YAML::Key << "c_chi" << YAML::Value << k.c_chi << YAML::Key
    << "identity_vanish" << YAML::Value << k.identity_vanish << YAML::Key << "identity_margin" << YAML::Value
    << k.identity_margin << YAML::Key << "residual" << YAML::Value << k.residual << YAML::EndMap;
  e << YAML::EndMap;

  const auto& s = cfg.suite;
  e << YAML::Key << "suite" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "items" << YAML::Value << YAML::Flow << s.items;
  e << YAML::Key << "seeds" << YAML::Value << s.seeds << YAML::Key << "seed_base" << YAML::Value << s.seed_base;
  e << YAML::Key << "test_function" << YAML::Value << to_string(s.test_function);
  e << YAML::Key << "rho" << YAML::Value << YAML::Flow << s.rho;
  e << YAML::Key << "lemma2_eps" << YAML::Value << s.lemma2_eps;
  e << YAML::Key << "rho_scales" << YAML::Value << YAML::Flow << s.rho_scales;
  e << YAML::Key << "sweep_mode" << YAML::Value << s.sweep_mode << YAML::EndMap;

  const auto& j = cfg.jerk.setup;
  e << YAML::Key << "jerk" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "J" << YAML::Value << YAML::Flow << YAML::BeginSeq << j.j_axis.half_width << j.j_axis.points
    << YAML::EndSeq;
  e << YAML::Key << "w" << YAML::Value;
  emit_axes(e, j.w_axes);
  e << YAML::Key << "stored" << YAML::Value << j.stored << YAML::Key << "substeps" << YAML::Value << j.substeps;
  e << YAML::Key << "sigma" << YAML::Value << j.packet.sigma << YAML::Key << "k" << YAML::Value << j.packet.k;
  e << YAML::Key << "contrast_k" << YAML::Value << j.contrast_k << YAML::Key << "contrast" << YAML::Value
    << j.run_contrast;
  e << YAML::Key << "alpha" << YAML::Value << YAML::Flow << j.alphas;
  e << YAML::Key << "export" << YAML::Value << cfg.jerk.export_trajectory << YAML::EndMap;

  e << YAML::Key << "output" << YAML::Value << YAML::BeginMap << YAML::Key << "directory" << YAML::Value
    << cfg.output.directory << YAML::Key << "formats" << YAML::Value << YAML::Flow << cfg.output.formats
    << YAML::EndMap;
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

OperatorSpec build_operator(const RunConfig& cfg) {
  const auto& o = cfg.op;
  DriftPair drift = [&] {
    if (o.preset != "custom") return drift_preset(o.preset, o.n);
    const int n = static_cast<int>(o.B2.size());
    const int m = static_cast<int>(o.B1.front().size());
    if (static_cast<int>(o.B1.size()) != n) throw DimensionError("B1 needs as many rows as B2");
    Mat b1(n, m), b2(n, n);
    for (int r = 0; r < n; ++r) {
      if (static_cast<int>(o.B2[r].size()) != n) throw DimensionError("B2 must be square");
      for (int c = 0; c < m; ++c) b1(r, c) = o.B1[r][c];
      for (int c = 0; c < n; ++c) b2(r, c) = o.B2[r][c];
    }
    return DriftPair(b1, b2);
  }();
  OperatorSpec spec = make_operator(std::move(drift), o.diffusivity, o.potential, o.drift_v, o.lambda, o.preset);
  const GridSpec g = build_grid(cfg);
  const AssumptionReport a = validate_assumptions(spec, g, 1000);
  if (!a.pass) {
    std::string bad;
    for (const auto& c : a.checks)
      if (!c.pass) bad += " " + c.name;
    throw ValidationError("coefficient assumptions fail:" + bad);
  }
  return spec;
}

GridSpec build_grid(const RunConfig& cfg) {
  return GridSpec(cfg.carleman.t2, cfg.grid.nt, cfg.grid.v, cfg.grid.w);
}

CarlemanParams base_params(const RunConfig& cfg, double alpha, double R) {
  const auto& c = cfg.carleman;
  CarlemanParams p;
  p.alpha = alpha;
  p.b = c.b;
  p.t1 = c.t1;
  p.t2 = c.t2;
  p.R = R;
  p.eps0 = c.eps0;
  p.alpha0 = c.alpha0;
  p.c_star = c.c_star;
  p.c0 = c.c0;
  p.lambda = cfg.op.lambda;
  return p;
}

}  // namespace ultra
