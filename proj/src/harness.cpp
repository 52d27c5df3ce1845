#include "dsbo/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <future>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>

namespace dsbo {

namespace {

std::string trim(const std::string& s) {
  const auto from = s.find_first_not_of(" \t\r\n");
  if (from == std::string::npos) return "";
  const auto to = s.find_last_not_of(" \t\r\n");
  return s.substr(from, to - from + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// Typed accessor over the parsed key map; records which keys were consumed so
// unknown keys can be rejected afterwards.
class MapReader {
 public:
  explicit MapReader(const std::map<std::string, std::string>& kv) : kv_(kv) {}

  bool has(const std::string& key) {
    used_.insert(key);
    return kv_.count(key) > 0;
  }
  std::string str(const std::string& key, const std::string& fallback) {
    used_.insert(key);
    const auto it = kv_.find(key);
    return it == kv_.end() ? fallback : it->second;
  }
  double num(const std::string& key, double fallback) {
    used_.insert(key);
    const auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    try {
      std::size_t pos = 0;
      const double v = std::stod(it->second, &pos);
      if (pos != it->second.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw ConfigError("config key '" + key + "': expected a number, got '" + it->second + "'");
    }
  }
  long integer(const std::string& key, long fallback) {
    const double v = num(key, static_cast<double>(fallback));
    const long r = static_cast<long>(v);
    if (static_cast<double>(r) != v) {
      throw ConfigError("config key '" + key + "': expected an integer");
    }
    return r;
  }
  bool flag(const std::string& key, bool fallback) {
    used_.insert(key);
    const auto it = kv_.find(key);
    if (it == kv_.end()) return fallback;
    const std::string v = it->second;
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
  }
  void reject_unknown() const {
    for (const auto& [key, value] : kv_) {
      (void)value;
      if (used_.count(key) == 0) throw ConfigError("unknown config key: " + key);
    }
  }

 private:
  const std::map<std::string, std::string>& kv_;
  std::set<std::string> used_;
};

}  // namespace

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> out;
  std::stringstream ss(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto comment = line.find_first_of("#;");
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) {
        throw ConfigError("config line " + std::to_string(lineno) + ": malformed section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    if (section.empty()) {
      throw ConfigError("config line " + std::to_string(lineno) + ": key outside any [section]");
    }
    const std::string full = section + "." + key;
    if (!out.emplace(full, value).second) throw ConfigError("duplicate config key: " + full);
  }
  return out;
}

std::map<std::string, std::string> parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

ExperimentConfig ExperimentConfig::from_map(const std::map<std::string, std::string>& kv) {
  MapReader rd(kv);
  ExperimentConfig cfg;

  cfg.run.problem.id = rd.str("problem.id", cfg.run.problem.id);
  cfg.run.problem.n = static_cast<int>(rd.integer("problem.n", cfg.run.problem.n));
  cfg.run.problem.p = static_cast<int>(rd.integer("problem.p", cfg.run.problem.p));
  cfg.run.problem.q = static_cast<int>(rd.integer("problem.q", cfg.run.problem.q));
  cfg.run.problem.het = rd.num("problem.het", cfg.run.problem.het);
  cfg.run.problem.sigma_f = rd.num("problem.sigma_f", cfg.run.problem.sigma_f);
  cfg.run.problem.sigma_g1 = rd.num("problem.sigma_g1", cfg.run.problem.sigma_g1);
  cfg.run.problem.sigma_g2 = rd.num("problem.sigma_g2", cfg.run.problem.sigma_g2);
  cfg.run.problem.deterministic = rd.flag("problem.deterministic", cfg.run.problem.deterministic);
  cfg.run.problem.batch = static_cast<int>(rd.integer("problem.batch", cfg.run.problem.batch));
  cfg.run.problem.samples_per_node =
      static_cast<int>(rd.integer("problem.samples_per_node", cfg.run.problem.samples_per_node));
  cfg.run.problem.noise_eps = rd.num("problem.noise_eps", cfg.run.problem.noise_eps);
  cfg.run.problem.het_rate = rd.num("problem.het_rate", cfg.run.problem.het_rate);
  if (rd.has("problem.dataset_dir")) cfg.run.problem.dataset_dir = rd.str("problem.dataset_dir", "");
  if (rd.has("problem.data_seed")) {
    cfg.run.problem.data_seed = static_cast<std::uint64_t>(rd.integer("problem.data_seed", 0));
  }

  const std::string topo = rd.str("topology.kind", "ring");
  if (topo == "ring") {
    cfg.run.topology.kind = TopologySpec::Kind::ring;
  } else if (topo == "complete") {
    cfg.run.topology.kind = TopologySpec::Kind::complete;
  } else if (topo == "custom") {
    cfg.run.topology.kind = TopologySpec::Kind::custom;
  } else {
    throw ConfigError("config key 'topology.kind': expected ring|complete|custom, got '" + topo + "'");
  }
  cfg.run.topology.self_weight = rd.num("topology.w", cfg.run.topology.self_weight);
  cfg.run.topology.csv_path = rd.str("topology.csv", cfg.run.topology.csv_path);
  if (cfg.run.topology.kind == TopologySpec::Kind::custom && cfg.run.topology.csv_path.empty()) {
    throw ConfigError("custom topology requires 'topology.csv'");
  }

  cfg.run.K = rd.integer("run.K", cfg.run.K);
  cfg.run.T = static_cast<int>(rd.integer("run.T", cfg.run.T));
  const std::string sched = rd.str("run.schedule", "theorem");
  if (sched == "theorem") {
    cfg.run.schedule = ScheduleKind::theorem;
  } else if (sched == "manual") {
    cfg.run.schedule = ScheduleKind::manual;
  } else {
    throw ConfigError("config key 'run.schedule': expected theorem|manual, got '" + sched + "'");
  }
  cfg.run.a0 = rd.num("run.a0", cfg.run.a0);
  cfg.run.b0 = rd.num("run.b0", cfg.run.b0);
  cfg.run.c0 = rd.num("run.c0", cfg.run.c0);
  cfg.run.alpha = rd.num("run.alpha", cfg.run.alpha);
  cfg.run.beta = rd.num("run.beta", cfg.run.beta);
  cfg.run.rounds = static_cast<int>(rd.integer("run.N", cfg.run.rounds));
  if (rd.has("run.gamma")) cfg.run.gamma = rd.num("run.gamma", 0.0);

  cfg.out_dir = rd.str("output.dir", cfg.out_dir);
  if (rd.has("output.seeds")) {
    cfg.seeds.clear();
    for (const auto& tok : split(rd.str("output.seeds", ""), ',')) {
      if (tok.empty()) continue;
      try {
        cfg.seeds.push_back(std::stoull(tok));
      } catch (...) {
        throw ConfigError("config key 'output.seeds': expected comma-separated integers");
      }
    }
    if (cfg.seeds.empty()) throw ConfigError("config key 'output.seeds': no seeds given");
  }
  cfg.emit_plots = rd.flag("output.plots", cfg.emit_plots);
  cfg.parallel_seeds = rd.flag("output.parallel", cfg.parallel_seeds);

  if (rd.has("sweep.ks")) {
    cfg.sweep_k.clear();
    for (const auto& tok : split(rd.str("sweep.ks", ""), ',')) {
      if (!tok.empty()) cfg.sweep_k.push_back(std::stol(tok));
    }
  }
  if (rd.has("sweep.gammas")) {
    cfg.sweep_gammas.clear();
    for (const auto& tok : split(rd.str("sweep.gammas", ""), ',')) {
      if (!tok.empty()) cfg.sweep_gammas.push_back(std::stod(tok));
    }
  }

  rd.reject_unknown();
  return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::filesystem::path& path) {
  return from_map(parse_config_file(path));
}

std::filesystem::path ExperimentConfig::resolved_out_dir() const {
  if (!out_dir.empty()) return out_dir;
  if (const char* env = std::getenv("DSBO_OUT_DIR"); env != nullptr && *env != '\0') return env;
  return "out";
}

std::string ExperimentConfig::echo() const {
  std::ostringstream os;
  os << "[problem]\n";
  os << "id = " << run.problem.id << "\n";
  os << "n = " << run.problem.n << "\n";
  os << "p = " << run.problem.p << "\n";
  os << "q = " << run.problem.q << "\n";
  os << "het = " << fmt17(run.problem.het) << "\n";
  os << "sigma_f = " << fmt17(run.problem.sigma_f) << "\n";
  os << "sigma_g1 = " << fmt17(run.problem.sigma_g1) << "\n";
  os << "sigma_g2 = " << fmt17(run.problem.sigma_g2) << "\n";
  os << "deterministic = " << (run.problem.deterministic ? "true" : "false") << "\n";
  os << "batch = " << run.problem.batch << "\n";
  os << "samples_per_node = " << run.problem.samples_per_node << "\n";
  os << "noise_eps = " << fmt17(run.problem.noise_eps) << "\n";
  os << "het_rate = " << fmt17(run.problem.het_rate) << "\n";
  if (run.problem.dataset_dir) os << "dataset_dir = " << *run.problem.dataset_dir << "\n";
  if (run.problem.data_seed) os << "data_seed = " << *run.problem.data_seed << "\n";
  os << "\n[topology]\n";
  os << "kind = "
     << (run.topology.kind == TopologySpec::Kind::ring
             ? "ring"
             : run.topology.kind == TopologySpec::Kind::complete ? "complete" : "custom")
     << "\n";
  os << "w = " << fmt17(run.topology.self_weight) << "\n";
  if (!run.topology.csv_path.empty()) os << "csv = " << run.topology.csv_path << "\n";
  os << "\n[run]\n";
  os << "K = " << run.K << "\n";
  os << "T = " << run.T << "\n";
  os << "schedule = " << (run.schedule == ScheduleKind::theorem ? "theorem" : "manual") << "\n";
  os << "a0 = " << fmt17(run.a0) << "\n";
  os << "b0 = " << fmt17(run.b0) << "\n";
  os << "c0 = " << fmt17(run.c0) << "\n";
  os << "alpha = " << fmt17(run.alpha) << "\n";
  os << "beta = " << fmt17(run.beta) << "\n";
  os << "N = " << run.rounds << "\n";
  if (run.gamma) os << "gamma = " << fmt17(*run.gamma) << "\n";
  os << "\n[output]\n";
  os << "dir = " << resolved_out_dir().string() << "\n";
  os << "seeds = ";
  for (std::size_t j = 0; j < seeds.size(); ++j) os << (j ? "," : "") << seeds[j];
  os << "\n";
  os << "plots = " << (emit_plots ? "true" : "false") << "\n";
  os << "parallel = " << (parallel_seeds ? "true" : "false") << "\n";
  return os.str();
}

// --- trace CSV ---------------------------------------------------------

std::string trace_csv_header() {
  return "k,stationarity,surrogate,consensus_x,consensus_y,inner_residual,samples_cum,"
         "comm_scalars_cum,upper_loss";
}

void write_trace_csv(const std::filesystem::path& path, const std::vector<TraceRecord>& trace) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trace file: " + path.string());
  out << trace_csv_header() << "\n";
  for (const auto& rec : trace) {
    out << rec.k << ',';
    if (rec.stationarity) out << fmt17(*rec.stationarity);
    out << ',' << fmt17(rec.surrogate) << ',' << fmt17(rec.consensus_x) << ','
        << fmt17(rec.consensus_y) << ',';
    if (rec.inner_residual) out << fmt17(*rec.inner_residual);
    out << ',' << rec.samples_cum << ',' << rec.comm_scalars_cum << ',';
    if (rec.upper_loss) out << fmt17(*rec.upper_loss);
    out << '\n';
  }
}

std::vector<TraceRecord> read_trace_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open trace file: " + path.string());
  std::string line;
  if (!std::getline(in, line) || trim(line) != trace_csv_header()) {
    throw std::runtime_error("trace file has an unexpected header: " + path.string());
  }
  std::vector<TraceRecord> out;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    while (cells.size() < 9) cells.emplace_back();  // trailing empty cell
    if (cells.size() != 9) throw std::runtime_error("trace row has wrong arity: " + path.string());
    TraceRecord rec;
    rec.k = std::stol(cells[0]);
    if (!cells[1].empty()) rec.stationarity = std::stod(cells[1]);
    rec.surrogate = std::stod(cells[2]);
    rec.consensus_x = std::stod(cells[3]);
    rec.consensus_y = std::stod(cells[4]);
    if (!cells[5].empty()) rec.inner_residual = std::stod(cells[5]);
    rec.samples_cum = std::stoull(cells[6]);
    rec.comm_scalars_cum = std::stoull(cells[7]);
    if (!cells[8].empty()) rec.upper_loss = std::stod(cells[8]);
    out.push_back(rec);
  }
  return out;
}

// --- SVG plots ---------------------------------------------------------

namespace {

constexpr int kPlotW = 880;
constexpr int kPlotH = 560;
constexpr int kMarginL = 75;
constexpr int kMarginR = 160;
constexpr int kMarginT = 45;
constexpr int kMarginB = 55;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

std::string xml_escape(const std::string& s) {
  std::string out;
  for (const char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

void write_svg_plot(const std::filesystem::path& path, const std::string& title,
                    const std::string& x_label, const std::string& y_label,
                    const std::vector<PlotSeries>& series, bool log_x, bool log_y,
                    const std::string& annotation) {
  // Transform to plotting space, dropping non-positive values on log axes.
  struct Pts {
    std::string label;
    std::vector<std::pair<double, double>> xy;
  };
  std::vector<Pts> data;
  double xmin = 0, xmax = 0, ymin = 0, ymax = 0;
  bool any = false;
  for (const auto& s : series) {
    Pts pts;
    pts.label = s.label;
    for (std::size_t j = 0; j < s.x.size() && j < s.y.size(); ++j) {
      double x = s.x[j], y = s.y[j];
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      if (log_x) {
        if (x <= 0.0) continue;
        x = std::log10(x);
      }
      if (log_y) {
        if (y <= 0.0) continue;
        y = std::log10(y);
      }
      if (!any) {
        xmin = xmax = x;
        ymin = ymax = y;
        any = true;
      } else {
        xmin = std::min(xmin, x);
        xmax = std::max(xmax, x);
        ymin = std::min(ymin, y);
        ymax = std::max(ymax, y);
      }
      pts.xy.emplace_back(x, y);
    }
    data.push_back(std::move(pts));
  }
  if (!any) {
    xmin = ymin = 0.0;
    xmax = ymax = 1.0;
  }
  if (xmax - xmin < 1e-12) {
    xmin -= 0.5;
    xmax += 0.5;
  }
  if (ymax - ymin < 1e-12) {
    ymin -= 0.5;
    ymax += 0.5;
  }

  const double plot_w = kPlotW - kMarginL - kMarginR;
  const double plot_h = kPlotH - kMarginT - kMarginB;
  const auto px = [&](double x) { return kMarginL + (x - xmin) / (xmax - xmin) * plot_w; };
  const auto py = [&](double y) { return kMarginT + (ymax - y) / (ymax - ymin) * plot_h; };
  const auto coord = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };
  const auto tick_label = [&](double v, bool log_axis) {
    return fmt6(log_axis ? std::pow(10.0, v) : v);
  };

  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write plot file: " + path.string());
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kPlotW << "\" height=\"" << kPlotH
      << "\" viewBox=\"0 0 " << kPlotW << " " << kPlotH << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << kPlotW / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\" "
      << "font-family=\"sans-serif\">" << xml_escape(title) << "</text>\n";

  // Axes box and ticks.
  out << "<rect x=\"" << kMarginL << "\" y=\"" << kMarginT << "\" width=\"" << plot_w
      << "\" height=\"" << plot_h << "\" fill=\"none\" stroke=\"black\"/>\n";
  constexpr int kTicks = 5;
  for (int t = 0; t <= kTicks; ++t) {
    const double fx = xmin + (xmax - xmin) * t / kTicks;
    const double fy = ymin + (ymax - ymin) * t / kTicks;
    out << "<line x1=\"" << coord(px(fx)) << "\" y1=\"" << kMarginT + plot_h << "\" x2=\""
        << coord(px(fx)) << "\" y2=\"" << kMarginT + plot_h + 5 << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << coord(px(fx)) << "\" y=\"" << kMarginT + plot_h + 20
        << "\" text-anchor=\"middle\" font-size=\"11\" font-family=\"sans-serif\">"
        << xml_escape(tick_label(fx, log_x)) << "</text>\n";
    out << "<line x1=\"" << kMarginL - 5 << "\" y1=\"" << coord(py(fy)) << "\" x2=\"" << kMarginL
        << "\" y2=\"" << coord(py(fy)) << "\" stroke=\"black\"/>\n";
    out << "<text x=\"" << kMarginL - 8 << "\" y=\"" << coord(py(fy) + 4)
        << "\" text-anchor=\"end\" font-size=\"11\" font-family=\"sans-serif\">"
        << xml_escape(tick_label(fy, log_y)) << "</text>\n";
  }
  out << "<text x=\"" << kMarginL + plot_w / 2 << "\" y=\"" << kPlotH - 12
      << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\">"
      << xml_escape(x_label) << "</text>\n";
  out << "<text x=\"18\" y=\"" << kMarginT + plot_h / 2
      << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\" transform=\"rotate(-90 18 "
      << kMarginT + plot_h / 2 << ")\">" << xml_escape(y_label) << "</text>\n";

  for (std::size_t si = 0; si < data.size(); ++si) {
    const auto& pts = data[si];
    const char* color = kPalette[si % (sizeof kPalette / sizeof kPalette[0])];
    out << "<!-- series \"" << xml_escape(pts.label) << "\" n=" << pts.xy.size() << " -->\n";
    if (!pts.xy.empty()) {
      out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t j = 0; j < pts.xy.size(); ++j) {
        if (j) out << ' ';
        out << coord(px(pts.xy[j].first)) << ',' << coord(py(pts.xy[j].second));
      }
      out << "\"/>\n";
    }
    out << "<text x=\"" << kPlotW - kMarginR + 10 << "\" y=\"" << kMarginT + 16 + 18 * si
        << "\" font-size=\"12\" font-family=\"sans-serif\" fill=\"" << color << "\">"
        << xml_escape(pts.label) << "</text>\n";
  }
  if (!annotation.empty()) {
    out << "<text x=\"" << kMarginL + 6 << "\" y=\"" << kMarginT + 16
        << "\" font-size=\"12\" font-family=\"sans-serif\">" << xml_escape(annotation)
        << "</text>\n";
  }
  out << "</svg>\n";
}

// --- subcommand drivers --------------------------------------------------

namespace {

struct SeedOutcome {
  std::uint64_t seed = 0;
  double wall_seconds = 0.0;
};

void emit_metric_plots(const std::filesystem::path& dir,
                       const std::vector<std::pair<std::uint64_t, std::vector<TraceRecord>>>& traces) {
  struct MetricDef {
    const char* name;
    bool log_y;
    std::function<std::optional<double>(const TraceRecord&)> get;
  };
  const std::vector<MetricDef> metrics = {
      {"stationarity", true, [](const TraceRecord& r) { return r.stationarity; }},
      {"surrogate", true, [](const TraceRecord& r) { return std::optional<double>(r.surrogate); }},
      {"consensus_x", true, [](const TraceRecord& r) { return std::optional<double>(r.consensus_x); }},
      {"consensus_y", true, [](const TraceRecord& r) { return std::optional<double>(r.consensus_y); }},
      {"inner_residual", true, [](const TraceRecord& r) { return r.inner_residual; }},
      {"upper_loss", false, [](const TraceRecord& r) { return r.upper_loss; }},
  };
  for (const auto& metric : metrics) {
    std::vector<PlotSeries> series;
    bool have_values = false;
    for (const auto& [seed, trace] : traces) {
      PlotSeries s;
      s.label = "seed " + std::to_string(seed);
      for (const auto& rec : trace) {
        const auto v = metric.get(rec);
        if (!v) continue;
        s.x.push_back(static_cast<double>(rec.k));
        s.y.push_back(*v);
        have_values = true;
      }
      series.push_back(std::move(s));
    }
    if (!have_values) continue;
    write_svg_plot(dir / (std::string("plot_") + metric.name + ".svg"), metric.name,
                   "outer iteration k", metric.name, series, false, metric.log_y);
  }
}

int report_error(const std::exception& e, int code) {
  std::cerr << "error: " << e.what() << "\n";
  return code;
}

}  // namespace

int cli_run(const ExperimentConfig& cfg) {
  try {
    cfg.run.validate();
  } catch (const std::invalid_argument& e) {
    return report_error(e, 1);
  }
  const auto dir = cfg.resolved_out_dir();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    std::cerr << "error: cannot create output directory " << dir << ": " << ec.message() << "\n";
    return 1;
  }
  {
    std::ofstream echo(dir / "config_echo.ini");
    echo << cfg.echo();
  }

  auto run_one = [&](std::uint64_t seed) -> SeedOutcome {
    const auto t0 = std::chrono::steady_clock::now();
    RunConfig rc = cfg.run;
    rc.seed = seed;
    Problem prob = make_problem(rc.problem, seed);
    const RunResult res = madsbo_run(rc, prob);
    write_trace_csv(dir / ("trace_seed" + std::to_string(seed) + ".csv"), res.trace);
    const auto t1 = std::chrono::steady_clock::now();
    return SeedOutcome{seed, std::chrono::duration<double>(t1 - t0).count()};
  };

  std::vector<SeedOutcome> outcomes;
  try {
    if (cfg.parallel_seeds && cfg.seeds.size() > 1) {
      std::vector<std::future<SeedOutcome>> futs;
      futs.reserve(cfg.seeds.size());
      for (const std::uint64_t seed : cfg.seeds) {
        futs.push_back(std::async(std::launch::async, run_one, seed));
      }
      for (auto& f : futs) outcomes.push_back(f.get());
    } else {
      for (const std::uint64_t seed : cfg.seeds) outcomes.push_back(run_one(seed));
    }
  } catch (const DivergedError& e) {
    return report_error(e, 2);
  } catch (const std::invalid_argument& e) {
    return report_error(e, 1);
  } catch (const ConfigError& e) {
    return report_error(e, 1);
  }

  // Summary recomputed from the files just written, so every aggregate is
  // reproducible from the traces alone (wall time excepted).
  std::vector<std::pair<std::uint64_t, std::vector<TraceRecord>>> traces;
  traces.reserve(outcomes.size());
  for (const auto& oc : outcomes) {
    traces.emplace_back(oc.seed,
                        read_trace_csv(dir / ("trace_seed" + std::to_string(oc.seed) + ".csv")));
  }
  {
    std::ofstream out(dir / "summary.csv");
    out << "seed,records,min_stationarity,final_stationarity,final_surrogate,final_consensus_x,"
           "final_consensus_y,initial_upper_loss,final_upper_loss,samples_total,"
           "comm_scalars_total,wall_seconds\n";
    for (std::size_t j = 0; j < traces.size(); ++j) {
      const auto& [seed, trace] = traces[j];
      const auto& last = trace.back();
      std::optional<double> min_stat;
      for (const auto& rec : trace) {
        if (rec.stationarity && (!min_stat || *rec.stationarity < *min_stat)) {
          min_stat = rec.stationarity;
        }
      }
      out << seed << ',' << trace.size() << ',';
      if (min_stat) out << fmt17(*min_stat);
      out << ',';
      if (last.stationarity) out << fmt17(*last.stationarity);
      out << ',' << fmt17(last.surrogate) << ',' << fmt17(last.consensus_x) << ','
          << fmt17(last.consensus_y) << ',';
      if (trace.front().upper_loss) out << fmt17(*trace.front().upper_loss);
      out << ',';
      if (last.upper_loss) out << fmt17(*last.upper_loss);
      out << ',' << last.samples_cum << ',' << last.comm_scalars_cum << ','
          << fmt6(outcomes[j].wall_seconds) << '\n';
    }
  }
  if (cfg.emit_plots) emit_metric_plots(dir, traces);
  std::cout << "wrote " << traces.size() << " trace file(s) to " << dir.string() << "\n";
  return 0;
}

int cli_rate_sweep(const ExperimentConfig& cfg) {
  const auto dir = cfg.resolved_out_dir();
  std::filesystem::create_directories(dir);
  RateSweepResult result;
  try {
    result = rate_sweep(cfg.run, cfg.sweep_k, cfg.seeds);
  } catch (const DivergedError& e) {
    return report_error(e, 2);
  } catch (const std::invalid_argument& e) {
    return report_error(e, 1);
  } catch (const ConfigError& e) {
    return report_error(e, 1);
  }

  {
    std::ofstream out(dir / "sweep.csv");
    out << "K,min_stationarity,tail_consensus\n";
    for (const auto& row : result.rows) {
      out << row.K << ',' << fmt17(row.min_stationarity) << ',' << fmt17(row.tail_consensus) << '\n';
    }
  }
  std::vector<PlotSeries> series(2);
  series[0].label = "min stationarity";
  series[1].label = "tail consensus";
  for (const auto& row : result.rows) {
    series[0].x.push_back(static_cast<double>(row.K));
    series[0].y.push_back(row.min_stationarity);
    series[1].x.push_back(static_cast<double>(row.K));
    series[1].y.push_back(row.tail_consensus);
  }
  const std::string note = "stationarity slope = " + fmt6(result.stationarity_slope) +
                           ", consensus slope = " + fmt6(result.consensus_slope);
  if (cfg.emit_plots) {
    write_svg_plot(dir / "sweep.svg", "convergence rate sweep", "outer iterations K", "metric",
                   series, true, true, note);
  }
  std::cout << "K,min_stationarity,tail_consensus\n";
  for (const auto& row : result.rows) {
    std::cout << row.K << ',' << fmt6(row.min_stationarity) << ',' << fmt6(row.tail_consensus)
              << '\n';
  }
  std::cout << note << "\n";
  return 0;
}

int cli_baseline_compare(const ExperimentConfig& cfg) {
  try {
    cfg.run.validate();
  } catch (const std::invalid_argument& e) {
    return report_error(e, 1);
  }
  const auto dir = cfg.resolved_out_dir();
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "baseline.csv");
  out << "seed,terminal_stationarity,baseline_terminal_stationarity,comm_scalars,"
         "baseline_comm_scalars\n";

  try {
    for (const std::uint64_t seed : cfg.seeds) {
      RunConfig rc = cfg.run;
      rc.seed = seed;
      Problem prob = make_problem(rc.problem, seed);
      if (prob.local_solves == nullptr || prob.closed_form == nullptr) {
        throw std::invalid_argument("baseline unavailable: problem '" + rc.problem.id +
                                    "' lacks per-agent closed-form solves");
      }
      const RunResult res = madsbo_run(rc, prob);
      const double alg_stat = res.trace.back().stationarity.value();

      // Same mixing, schedule, and moving-average update, but the estimation
      // pass is replaced by each agent's locally-solved hypergradient.
      const MixingMatrix w = build_topology(rc.topology, prob.oracle->agents());
      const ResolvedSchedule sched = resolve_schedule(rc, prob, w);
      AgentField x = AgentField::zero(prob.oracle->dim_x(), prob.oracle->agents());
      AgentField r = x;
      CommLedger comm;
      for (long k = 0; k < rc.K; ++k) {
        AgentField u = AgentField::zero(x.dim(), x.agents());
        for (int i = 0; i < x.agents(); ++i) {
          u.m.col(i) = prob.local_solves->local_hypergradient(i, x.m.col(i));
        }
        const AgentField mixed = mix(w, x, &comm);
        x.m = mixed.m - sched.alpha * r.m;
        r.m = (1.0 - sched.alpha) * r.m + sched.alpha * u.m;
      }
      const double base_stat =
          ground_truth_hypergradient(*prob.closed_form, x.average()).squaredNorm();

      out << seed << ',' << fmt17(alg_stat) << ',' << fmt17(base_stat) << ','
          << res.comm.scalars << ',' << comm.scalars << '\n';
      std::cout << "seed " << seed << ": terminal stationarity " << fmt6(alg_stat)
                << " (tracked estimator, " << res.comm.scalars << " scalars) vs " << fmt6(base_stat)
                << " (local baseline, " << comm.scalars << " scalars)\n";
    }
  } catch (const DivergedError& e) {
    return report_error(e, 2);
  } catch (const std::invalid_argument& e) {
    return report_error(e, 1);
  }
  return 0;
}

int cli_hypergrad_check(const ExperimentConfig& cfg) {
  try {
    Problem prob = make_problem(cfg.run.problem, cfg.seeds.front());
    if (prob.closed_form == nullptr) {
      throw std::invalid_argument("hypergradient check requires a problem with closed forms");
    }
    prob.oracle->set_expectation_mode(true);
    RunConfig rc = cfg.run;
    const MixingMatrix w = build_topology(rc.topology, prob.oracle->agents());
    const ResolvedSchedule sched = resolve_schedule(rc, prob, w);

    const int n = prob.oracle->agents();
    Vec probe = Vec::Constant(prob.oracle->dim_x(), 0.5);
    AgentField x{Mat(probe.rowwise().replicate(n))};
    const Vec ys = prob.closed_form->y_star(probe);
    AgentField y{Mat(ys.rowwise().replicate(n))};

    const HypergradEstimate est =
        estimate_hypergradient(w, *prob.oracle, x, y, sched.gamma, sched.rounds, 0);
    const Vec truth = ground_truth_hypergradient(*prob.closed_form, probe);
    const double scale = std::max(1.0, truth.norm());
    std::cout << "problem " << prob.id << ": ||truth|| = " << fmt6(truth.norm())
              << ", estimator error = " << fmt6((est.ubar - truth).norm() / scale)
              << " (relative, " << sched.rounds << " solver rounds, gamma " << fmt6(sched.gamma)
              << ")\n";
    if (prob.local_solves != nullptr) {
      const Vec naive = naive_local_average(*prob.local_solves, n, probe);
      std::cout << "local-solve baseline error = " << fmt6((naive - truth).norm() / scale)
                << " (relative)\n";
    }
    return 0;
  } catch (const DivergedError& e) {
    return report_error(e, 2);
  } catch (const std::invalid_argument& e) {
    return report_error(e, 1);
  } catch (const ConfigError& e) {
    return report_error(e, 1);
  }
}

int cli_gamma_sweep(const ExperimentConfig& cfg) {
  try {
    Problem prob = make_problem(cfg.run.problem, cfg.seeds.front());
    RunConfig rc = cfg.run;
    rc.gamma.reset();  // grid supplies the stepsize
    const MixingMatrix w = build_topology(rc.topology, prob.oracle->agents());
    const ResolvedSchedule sched = resolve_schedule(rc, prob, w);
    const int n = prob.oracle->agents();

    Vec probe = Vec::Constant(prob.oracle->dim_x(), 0.5);
    AgentField x{Mat(probe.rowwise().replicate(n))};
    Vec y0 = prob.closed_form != nullptr ? Vec(prob.closed_form->y_star(probe))
                                         : Vec(Vec::Zero(prob.oracle->dim_y()));
    AgentField y{Mat(y0.rowwise().replicate(n))};

    std::vector<double> grid = cfg.sweep_gammas;
    if (grid.empty()) {
      // Spanning x8 above the stable default walks the grid across the
      // solver's theoretical stability threshold on purpose.
      const double base = sched.gamma;
      for (const double f : {0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0}) grid.push_back(base * f);
    }

    const auto dir = cfg.resolved_out_dir();
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / "gamma_sweep.csv");
    out << "gamma,status,max_iterate_norm,estimator_error\n";
    std::cout << "gamma,status,max_iterate_norm,estimator_error\n";
    for (const double gamma : grid) {
      std::string status = "completed";
      double max_norm = 0.0;
      std::string err_cell;
      try {
        const HypergradEstimate est =
            estimate_hypergradient(w, *prob.oracle, x, y, gamma, sched.rounds, 0);
        for (int i = 0; i < n; ++i) max_norm = std::max(max_norm, est.z.m.col(i).norm());
        if (prob.closed_form != nullptr) {
          const Vec truth = ground_truth_hypergradient(*prob.closed_form, probe);
          err_cell = fmt17((est.ubar - truth).norm() / std::max(1.0, truth.norm()));
        }
      } catch (const DivergedError& e) {
        status = "diverged@round" + std::to_string(e.round());
        max_norm = std::numeric_limits<double>::infinity();
      }
      out << fmt17(gamma) << ',' << status << ',' << fmt17(max_norm) << ',' << err_cell << '\n';
      std::cout << fmt6(gamma) << ',' << status << ',' << fmt6(max_norm) << ',' << err_cell << '\n';
    }
    return 0;
  } catch (const std::invalid_argument& e) {
    return report_error(e, 1);
  } catch (const ConfigError& e) {
    return report_error(e, 1);
  }
}

}  // namespace dsbo
