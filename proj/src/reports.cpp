#include "ultra/reports.hpp"

#include "ultra/errors.hpp"
#include "ultra/linalg.hpp"
#include "ultra/spectral.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <functional>
#include <map>
#include <thread>

namespace ultra {

namespace {

using Clock = std::chrono::steady_clock;

std::string num(double x) {
  if (!std::isfinite(x)) return "null";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string csv_num(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  return num(x);
}

std::string quoted(const std::string& s) { return nlohmann::json(s).dump(); }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

// Direction `dir` (default e_1) scaled so g_sup sits at `fraction` of the
// local regime bound eps0 alpha; zero when the drift never decays.
Vec regime_rho(const OperatorSpec& spec, const std::vector<double>& given, const CarlemanParams& p, double fraction) {
  const int n = spec.n();
  Vec rho = Vec::Zero(n);
  if (!given.empty()) {
    for (int i = 0; i < n; ++i) rho(i) = given[i];
    return rho;
  }
  rho(0) = 1.0;
  const double g = g_sup(spec.drift, rho, p.t2, p.b).g_value;
  return g > 0.0 ? Vec(rho * std::sqrt(fraction * p.eps0 * p.alpha / g)) : Vec(Vec::Zero(n));
}

std::vector<std::uint64_t> seed_list(const SuiteConfig& s, std::uint64_t base) {
  std::vector<std::uint64_t> out(static_cast<std::size_t>(s.seeds));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = base + i;
  return out;
}

VerificationReport error_report(const std::string& item, const std::string& what) {
  VerificationReport r;
  r.name = item;
  r.suite = item;
  r.status = Status::Fail;
  r.notes.push_back("error: " + what);
  return r;
}

struct Context {
  const RunConfig& cfg;
  const OperatorSpec& spec;
  const GridSpec& grid;
  std::uint64_t seed_base;
  std::filesystem::path dir;
};

using Reports = std::vector<VerificationReport>;

Reports item_check_rank(const Context& c) {
  const auto start = Clock::now();
  const RankReport rank = numerical_rank(kalman_matrix(c.spec.drift));
  VerificationReport r;
  r.name = "kalman_rank";
  r.suite = "check-rank";
  r.preset = c.spec.label;
  r.params = base_params(c.cfg, c.cfg.carleman.alphas.front(), c.cfg.carleman.R.front());
  r.grid = describe(c.grid);
  r.lhs = rank.rank;
  r.rhs = c.spec.n();
  r.empirical_constant = r.lhs / r.rhs;
  r.values.emplace_back("rank", rank.rank);
  r.values.emplace_back("n", c.spec.n());
  r.values.emplace_back("tol_used", rank.tol_used);
  r.status = rank.rank == c.spec.n() ? Status::Pass : Status::Fail;
  r.runtime_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
  return {r};
}

Reports item_constants(const Context& c) {
  Reports out;
  for (double R : c.cfg.carleman.R) {
    const auto start = Clock::now();
    const CarlemanParams p = base_params(c.cfg, c.cfg.carleman.alphas.front(), R);
    const FrequencyRegion region(c.spec.drift, R, p.b, p.t2, true);
    VerificationReport r;
    r.name = "constants";
    r.suite = "constants";
    r.preset = c.spec.label;
    r.params = p;
    r.grid = describe(c.grid);
    if (region.c2() && *region.c2() > 0.0 && region.bounding_radius()) {
      r.lhs = *region.c2();
      r.rhs = *region.bounding_radius();
      r.empirical_constant = r.rhs;
      r.values.emplace_back("c2", *region.c2());
      r.values.emplace_back("radius", *region.bounding_radius());
      r.status = Status::Pass;
    } else {
      r.status = Status::Fail;
      r.notes.push_back("rank condition fails: no positive c2");
    }
    r.runtime_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    out.push_back(std::move(r));
  }
  return out;
}

template <class Verify>
Reports per_alpha_seed(const Context& c, const std::string& suite, Verify verify) {
  Reports out;
  const auto seeds = seed_list(c.cfg.suite, c.seed_base);
  for (std::uint64_t seed : seeds) {
    const Field h = gen_test_function(c.grid, c.cfg.suite.test_function, seed, false);
    for (double a : c.cfg.carleman.alphas) {
      const CarlemanParams p = base_params(c.cfg, a, c.cfg.carleman.R.front());
      VerificationReport r = verify(p, h);
      r.suite = suite;
      r.seed = seed;
      out.push_back(std::move(r));
    }
  }
  return out;
}

Reports item_local(const Context& c) {
  return per_alpha_seed(c, "local", [&](const CarlemanParams& p, const Field& h) {
    return verify_local(c.spec, regime_rho(c.spec, c.cfg.suite.rho, p, 0.8), p, h, c.cfg.carleman.ceilings);
  });
}

Reports item_lemma1(const Context& c) {
  return per_alpha_seed(c, "lemma1", [&](const CarlemanParams& p, const Field& h) {
    return verify_lemma1(c.spec, p, h, c.cfg.carleman.ceilings);
  });
}

Reports item_identities(const Context& c) {
  return per_alpha_seed(c, "identities", [&](const CarlemanParams& p, const Field& h) {
    return verify_identities(c.spec, regime_rho(c.spec, c.cfg.suite.rho, p, 0.8), p, h, c.cfg.carleman.ceilings);
  });
}

// Worst C_eps over seeds for each rho scaling, then a band report per alpha.
Reports item_lemma2(const Context& c) {
  Reports out;
  const auto& s = c.cfg.suite;
  const auto seeds = seed_list(s, c.seed_base);
  std::vector<Field> hs;
  for (std::uint64_t seed : seeds) hs.push_back(gen_test_function(c.grid, s.test_function, seed, false));
  for (double a : c.cfg.carleman.alphas) {
    const CarlemanParams p = base_params(c.cfg, a, c.cfg.carleman.R.front());
    std::vector<double> worst;
    bool graded = true;
    for (double scale : s.rho_scales) {
      const Vec rho = regime_rho(c.spec, s.rho, p, scale);
      double w = 0.0;
      for (std::size_t i = 0; i < seeds.size(); ++i) {
        VerificationReport r = verify_lemma2(c.spec, rho, p, hs[i], s.lemma2_eps, c.cfg.carleman.ceilings);
        r.suite = "lemma2";
        r.seed = seeds[i];
        r.values.emplace_back("rho_scale", scale);
        if (r.status == Status::Pass || r.status == Status::Fail)
          w = std::max(w, r.empirical_constant);
        else
          graded = false;
        out.push_back(std::move(r));
      }
      worst.push_back(w);
    }
    VerificationReport band;
    band.name = "lemma2_band";
    band.suite = "lemma2";
    band.preset = c.spec.label;
    band.params = p;
    band.grid = describe(c.grid);
    band.seed = seeds.front();
    const Spread sp = spread_of(worst);
    band.lhs = sp.max;
    band.rhs = sp.min;
    band.empirical_constant = sp.ratio;
    band.values.emplace_back("band", sp.ratio);
    band.values.emplace_back("band_ceiling", c.cfg.carleman.ceilings.lemma2_band);
    if (!graded) {
      band.status = Status::OutOfRegime;
      band.notes.push_back("some rho scaling left the regime");
    } else {
      band.status = std::isfinite(sp.ratio) && sp.ratio <= c.cfg.carleman.ceilings.lemma2_band ? Status::Pass
                                                                                               : Status::Fail;
    }
    out.push_back(std::move(band));
  }
  return out;
}

SweepSetup sweep_setup(const Context& c, SweepMode mode, double R) {
  const CarlemanParams base = base_params(c.cfg, c.cfg.carleman.alphas.front(), R);
  // Local sweeps share one rho, in regime for the smallest alpha.
  Vec rho = mode == SweepMode::Local ? regime_rho(c.spec, c.cfg.suite.rho, base, 0.8) : Vec();
  return SweepSetup{.spec = &c.spec,
                    .grid = c.grid,
                    .base = base,
                    .alphas = c.cfg.carleman.alphas,
                    .seeds = seed_list(c.cfg.suite, c.seed_base),
                    .mode = mode,
                    .rho = std::move(rho),
                    .kind = c.cfg.suite.test_function,
                    .ceil = c.cfg.carleman.ceilings};
}

Reports item_global(const Context& c) {
  Reports out;
  for (double R : c.cfg.carleman.R) {
    Reports part = alpha_sweep(sweep_setup(c, SweepMode::Global, R));
    for (auto& r : part) r.suite = "global";
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

Reports item_sweep(const Context& c) {
  const bool global = c.cfg.suite.sweep_mode == "global";
  Reports out;
  const std::vector<double> Rs = global ? c.cfg.carleman.R : std::vector<double>{c.cfg.carleman.R.front()};
  for (double R : Rs) {
    Reports part = alpha_sweep(sweep_setup(c, global ? SweepMode::Global : SweepMode::Local, R));
    const TrendSummary t = summarize_trend(part, c.cfg.carleman.ceilings.trend);
    for (auto& r : part) r.suite = "sweep";
    VerificationReport sum;
    sum.name = "trend";
    sum.suite = "sweep";
    sum.preset = c.spec.label;
    sum.params = base_params(c.cfg, c.cfg.carleman.alphas.back(), R);
    sum.grid = describe(c.grid);
    sum.seed = c.seed_base;
    double lo = INFINITY, hi = 0.0;
    for (const auto& [a, v] : t.per_alpha) {
      sum.values.emplace_back("max_constant_alpha_" + num(a), v);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    sum.lhs = hi;
    sum.rhs = t.per_alpha.empty() ? 0.0 : lo;
    sum.empirical_constant = t.ratio;
    sum.values.emplace_back("ratio", t.ratio);
    sum.values.emplace_back("trend_ceiling", c.cfg.carleman.ceilings.trend);
    sum.values.emplace_back("in_regime_alphas", t.in_regime_alphas);
    sum.values.emplace_back("all_finite", t.all_finite ? 1.0 : 0.0);
    sum.status = t.status;
    out.insert(out.end(), part.begin(), part.end());
    out.push_back(std::move(sum));
  }
  return out;
}

PipelineSetup jerk_setup(const RunConfig& cfg) {
  PipelineSetup s = cfg.jerk.setup;
  s.base = base_params(cfg, s.alphas.front(), cfg.carleman.R.front());
  s.ceil = cfg.carleman.ceilings;
  return s;
}

Reports item_simulate(const Context& c) {
  const auto start = Clock::now();
  const PipelineSetup s = jerk_setup(c.cfg);
  const double T = s.base.t2;
  const GridSpec g(T, s.stored, {s.j_axis}, s.w_axes);
  SchemeConfig sc;
  sc.dt = T / (static_cast<double>(s.stored - 1) * s.substeps);
  sc.substeps = s.substeps;
  const Trajectory tr = simulate(wave_packet(g, s.packet), c.spec, sc, T, T);
  if (c.cfg.jerk.export_trajectory) {
    std::filesystem::create_directories(c.dir);
    export_trajectory(tr, c.dir / "trajectory.bin", c.dir / "trajectory.json");
  }
  VerificationReport r;
  r.name = "simulate_jerk";
  r.suite = "simulate-jerk";
  r.preset = c.spec.label;
  r.params = s.base;
  r.grid = describe(g);
  r.lhs = tr.residual.absolute;
  r.rhs = tr.residual.scale;
  r.empirical_constant = tr.residual.relative;
  r.values.emplace_back("residual_relative", tr.residual.relative);
  r.values.emplace_back("residual_worst_node", tr.residual.worst_node);
  r.values.emplace_back("dt", sc.dt);
  r.values.emplace_back("final_norm", std::sqrt(tr.slice(g.nt() - 1).norm2()));
  r.values.emplace_back("initial_norm", std::sqrt(tr.slice(0).norm2()));
  r.status = tr.residual.relative <= c.cfg.carleman.ceilings.residual ? Status::Pass : Status::Fail;
  r.runtime_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
  return {r};
}

Reports item_pipeline(const Context& c) {
  PipelineResult res = run_pipeline(c.spec, jerk_setup(c.cfg));
  Reports out = std::move(res.reports);
  out.insert(out.end(), res.contrast.begin(), res.contrast.end());
  out.push_back(std::move(res.summary));
  return out;
}

const std::map<std::string, std::function<Reports(const Context&)>>& dispatch() {
  static const std::map<std::string, std::function<Reports(const Context&)>> table{
      {"check-rank", item_check_rank}, {"constants", item_constants}, {"local", item_local},
      {"global", item_global},         {"lemma1", item_lemma1},       {"lemma2", item_lemma2},
      {"identities", item_identities}, {"sweep", item_sweep},         {"simulate-jerk", item_simulate},
      {"pipeline", item_pipeline}};
  return table;
}

std::string utc_stamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

void sort_reports(std::vector<VerificationReport>& reports) {
  std::stable_sort(reports.begin(), reports.end(), [](const auto& a, const auto& b) {
    if (a.suite != b.suite) return a.suite < b.suite;
    if (a.params.alpha != b.params.alpha) return a.params.alpha < b.params.alpha;
    if (a.seed != b.seed) return a.seed < b.seed;
    return a.name < b.name;
  });
}

int exit_code_for(const std::vector<VerificationReport>& reports, bool strict) {
  bool any_fail = false, all_out = true;
  for (const auto& r : reports) {
    if (r.status == Status::Fail || (strict && r.status == Status::Inconclusive)) any_fail = true;
    if (r.status != Status::OutOfRegime) all_out = false;
  }
  if (any_fail) return kExitFail;
  if (all_out) return kExitOutOfRegime;
  return kExitPass;
}

std::string report_json(const VerificationReport& r) {
  const auto& p = r.params;
  std::string s = "{";
  s += "\"name\":" + quoted(r.name);
  s += ",\"suite\":" + quoted(r.suite);
  s += ",\"preset\":" + quoted(r.preset);
  s += ",\"params\":{\"alpha\":" + num(p.alpha) + ",\"b\":" + num(p.b) + ",\"t1\":" + num(p.t1) +
       ",\"t2\":" + num(p.t2) + ",\"R\":" + num(p.R) + ",\"eps0\":" + num(p.eps0) + ",\"alpha0\":" +
       num(p.alpha0) + ",\"c_star\":" + num(p.c_star) + ",\"c0\":" + num(p.c0) + ",\"lambda\":" + num(p.lambda) +
       "}";
  s += ",\"seed\":" + std::to_string(r.seed);
  s += ",\"grid\":" + quoted(r.grid);
  s += ",\"lhs\":" + num(r.lhs);
  s += ",\"rhs\":" + num(r.rhs);
  s += ",\"empirical_constant\":" + num(r.empirical_constant);
  s += ",\"status\":" + quoted(to_string(r.status));
  s += std::string(",\"pass\":") + (r.pass() ? "true" : "false");
  s += ",\"values\":{";
  for (std::size_t i = 0; i < r.values.size(); ++i)
    s += (i ? "," : "") + quoted(r.values[i].first) + ":" + num(r.values[i].second);
  s += "},\"notes\":[";
  for (std::size_t i = 0; i < r.notes.size(); ++i) s += (i ? "," : "") + quoted(r.notes[i]);
  s += "]}";
  return s;
}

std::string reports_json(const std::vector<VerificationReport>& reports) {
  std::string s = "[\n";
  for (std::size_t i = 0; i < reports.size(); ++i) s += "  " + report_json(reports[i]) + (i + 1 < reports.size() ? ",\n" : "\n");
  return s + "]\n";
}

std::string csv_header() {
  return "suite,name,preset,alpha,seed,R,b,t1,t2,lhs,rhs,empirical_constant,status,pass,grid\n";
}

std::string reports_csv(const std::vector<VerificationReport>& reports) {
  std::vector<VerificationReport> sorted = reports;
  sort_reports(sorted);
  std::string s = csv_header();
  for (const auto& r : sorted) {
    const auto& p = r.params;
    s += csv_field(r.suite) + "," + csv_field(r.name) + "," + csv_field(r.preset) + "," + csv_num(p.alpha) + "," +
         std::to_string(r.seed) + "," + csv_num(p.R) + "," + csv_num(p.b) + "," + csv_num(p.t1) + "," +
         csv_num(p.t2) + "," + csv_num(r.lhs) + "," + csv_num(r.rhs) + "," + csv_num(r.empirical_constant) + "," +
         to_string(r.status) + "," + (r.pass() ? "true" : "false") + "," + csv_field(r.grid) + "\n";
  }
  return s;
}

void write_atomic(const std::filesystem::path& path, const std::string& body) {
  const std::filesystem::path tmp = path.string() + ".partial";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open " + tmp.string() + " for writing");
    os << body;
    os.flush();
    if (!os) throw Error("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw Error("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

void emit_report(const std::vector<VerificationReport>& reports, const std::vector<std::string>& formats,
                 const std::filesystem::path& dir, int exit_code) {
  if (reports.empty()) throw ValidationError("emit_report: no reports");
  std::filesystem::create_directories(dir);
  std::vector<VerificationReport> sorted = reports;
  sort_reports(sorted);
  const auto has = [&](const char* f) { return std::find(formats.begin(), formats.end(), f) != formats.end(); };
  if (has("json")) write_atomic(dir / "reports.json", reports_json(sorted));
  if (has("csv")) write_atomic(dir / "reports.csv", reports_csv(sorted));

  std::map<std::string, std::map<std::string, int>> per_suite;
  std::map<std::string, int> totals;
  for (const auto& r : sorted) {
    ++per_suite[r.suite][to_string(r.status)];
    ++totals[to_string(r.status)];
  }
  nlohmann::ordered_json summary;
  summary["exit_code"] = exit_code;
  summary["reports"] = sorted.size();
  summary["status_counts"] = totals;
  summary["suites"] = per_suite;
  write_atomic(dir / "summary.json", summary.dump(2) + "\n");

  nlohmann::ordered_json timing;
  timing["finished_utc"] = utc_stamp();
  auto& rows = timing["runtime_ms"] = nlohmann::ordered_json::array();
  for (const auto& r : sorted)
    rows.push_back({{"suite", r.suite}, {"name", r.name}, {"alpha", r.params.alpha}, {"seed", r.seed},
                    {"runtime_ms", r.runtime_ms}});
  write_atomic(dir / "timing.json", timing.dump(2) + "\n");
}

RunResult run(const RunConfig& cfg, const RunOptions& opts) {
  RunResult res;
  res.directory = opts.out ? *opts.out : std::filesystem::path(cfg.output.directory);
  const OperatorSpec spec = build_operator(cfg);
  const GridSpec grid = build_grid(cfg);
  const Context ctx{cfg, spec, grid, opts.seed_base ? *opts.seed_base : cfg.suite.seed_base, res.directory};

  std::vector<std::string> items;
  for (const auto& item : cfg.suite.items)
    if (opts.only.empty() || std::find(opts.only.begin(), opts.only.end(), item) != opts.only.end())
      items.push_back(item);

  // Items run on a small pool; results are slotted by item index.
  std::vector<Reports> slots(items.size());
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < items.size(); i = next++) {
      try {
        slots[i] = dispatch().at(items[i])(ctx);
      } catch (const std::exception& e) {
        slots[i] = {error_report(items[i], e.what())};
      }
    }
  };
  const int threads = std::max(1, std::min<int>(opts.threads, static_cast<int>(items.size())));
  {
    std::vector<std::jthread> pool;
    for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
  }
  for (auto& s : slots) res.reports.insert(res.reports.end(), s.begin(), s.end());
  sort_reports(res.reports);
  res.exit_code = exit_code_for(res.reports, opts.strict);
  if (!res.reports.empty()) emit_report(res.reports, cfg.output.formats, res.directory, res.exit_code);
  return res;
}

}  // namespace ultra
