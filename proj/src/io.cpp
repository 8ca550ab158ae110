#include "ncs/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

namespace ncs {
namespace {

namespace fs = std::filesystem;

[[noreturn]] void fail(const std::string& path, const std::string& what) { throw IoError(path + ": " + what); }

const Json& field(const Json& j, const char* key, const std::string& path) {
  if (!j.is_object()) fail(path, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) fail(path, fmt::format("missing field \"{}\"", key));
  return *it;
}

double number(const Json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) fail(path, "expected a finite number");
  return v;
}

double number(const Json& j, const char* key, const std::string& path) {
  return number(field(j, key, path), path + "." + key);
}

int integer(const Json& j, const std::string& path) {
  if (!j.is_number_integer()) fail(path, "expected an integer");
  return j.get<int>();
}

int integer(const Json& j, const char* key, const std::string& path) {
  return integer(field(j, key, path), path + "." + key);
}

std::vector<double> number_list(const Json& j, const std::string& path) {
  if (!j.is_array()) fail(path, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(number(j[i], fmt::format("{}[{}]", path, i)));
  return out;
}

Json finite(double v, const std::string& what) {
  if (!std::isfinite(v)) throw IoError(what + " is not finite");
  return v;
}

Json dense_to_json(const MatrixXd& m, const std::string& what) {
  Json rows = Json::array();
  for (int i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (int j = 0; j < m.cols(); ++j) row.push_back(finite(m(i, j), what));
    rows.push_back(std::move(row));
  }
  return rows;
}

MatrixXd dense_from_json(const Json& j, int rows, int cols, const std::string& path) {
  if (!j.is_array() || static_cast<int>(j.size()) != rows) fail(path, fmt::format("expected {} rows", rows));
  MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    const std::string rp = fmt::format("{}[{}]", path, i);
    if (!j[i].is_array() || static_cast<int>(j[i].size()) != cols) fail(rp, fmt::format("expected {} columns", cols));
    for (int c = 0; c < cols; ++c) m(i, c) = number(j[i][c], fmt::format("{}[{}]", rp, c));
  }
  return m;
}

// Matrix entries: a number, or {"kind": "const" | "cos" | "sin", "a0", "a1", "omega"}.
Json scalar_to_json(const ParametricScalar& s, const std::string& what) {
  if (s.kind == Waveform::kConstant) return finite(s.a0, what);
  Json o = Json::object();
  o["kind"] = s.kind == Waveform::kCosine ? "cos" : "sin";
  o["a0"] = finite(s.a0, what);
  o["a1"] = finite(s.a1, what);
  o["omega"] = finite(s.omega, what);
  return o;
}

ParametricScalar scalar_from_json(const Json& j, const std::string& path) {
  if (j.is_number()) return ParametricScalar::constant(number(j, path));
  if (!j.is_object()) fail(path, "expected a number or a {\"kind\", \"a0\", \"a1\", \"omega\"} object");
  const Json& kind = field(j, "kind", path);
  if (!kind.is_string()) fail(path + ".kind", "expected a string");
  const auto k = kind.get<std::string>();
  if (k == "const") return ParametricScalar::constant(number(j, "a0", path));
  if (k != "cos" && k != "sin") fail(path + ".kind", "expected \"const\", \"cos\" or \"sin\", got \"" + k + "\"");
  const double a0 = number(j, "a0", path);
  const double a1 = number(j, "a1", path);
  const double w = number(j, "omega", path);
  return k == "cos" ? ParametricScalar::cosine(a0, a1, w) : ParametricScalar::sine(a0, a1, w);
}

Json function_to_json(const MatrixFunction& f, const std::string& what) {
  const ParametricMatrix* p = f.parametric();
  if (!p) throw IoError(what + " is not a parametric matrix and cannot be serialized");
  Json rows = Json::array();
  for (int i = 0; i < p->rows(); ++i) {
    Json row = Json::array();
    for (int j = 0; j < p->cols(); ++j) row.push_back(scalar_to_json(p->at(i, j), what));
    rows.push_back(std::move(row));
  }
  return rows;
}

ParametricMatrix function_from_json(const Json& j, int rows, int cols, const std::string& path) {
  if (!j.is_array() || static_cast<int>(j.size()) != rows) fail(path, fmt::format("expected {} rows", rows));
  ParametricMatrix p(rows, cols);
  for (int i = 0; i < rows; ++i) {
    const std::string rp = fmt::format("{}[{}]", path, i);
    if (!j[i].is_array() || static_cast<int>(j[i].size()) != cols) fail(rp, fmt::format("expected {} columns", cols));
    for (int c = 0; c < cols; ++c) p.at(i, c) = scalar_from_json(j[i][c], fmt::format("{}[{}]", rp, c));
  }
  return p;
}

Json links_to_json(const LinkSet& links) {
  Json a = Json::array();
  for (const auto& l : links) a.push_back(Json::array({l.i + 1, l.j + 1}));
  return a;
}

Json block_matrix_to_json(const BlockMatrix& b, const std::string& what) {
  Json a = Json::array();
  for (const auto& [ij, m] : b.blocks()) {
    Json o = Json::object();
    o["i"] = ij.first + 1;
    o["j"] = ij.second + 1;
    o["value"] = dense_to_json(m, what);
    a.push_back(std::move(o));
  }
  return a;
}

BlockMatrix block_matrix_from_json(const Json& j, const std::vector<int>& row_dims, const std::vector<int>& col_dims,
                                   const std::string& path) {
  if (!j.is_array()) fail(path, "expected an array of blocks");
  BlockMatrix b(row_dims, col_dims);
  for (std::size_t s = 0; s < j.size(); ++s) {
    const std::string bp = fmt::format("{}[{}]", path, s);
    const int i = integer(j[s], "i", bp) - 1;
    const int c = integer(j[s], "j", bp) - 1;
    if (i < 0 || i >= b.block_rows() || c < 0 || c >= b.block_cols()) fail(bp, "block index out of range");
    if (b.has_block(i, c)) fail(bp, "duplicate block");
    b.set_block(i, c, dense_from_json(field(j[s], "value", bp), row_dims[i], col_dims[c], bp + ".value"));
  }
  return b;
}

Json sym_blocks_to_json(const SymMatrix& m, const std::vector<int>& dims, const std::string& what) {
  Json a = Json::array();
  int off = 0;
  for (int d : dims) {
    a.push_back(dense_to_json(m.block(off, d).matrix(), what));
    off += d;
  }
  return a;
}

SymMatrix sym_blocks_from_json(const Json& j, const std::vector<int>& dims, const std::string& path) {
  if (!j.is_array() || j.size() != dims.size()) fail(path, fmt::format("expected {} diagonal blocks", dims.size()));
  std::vector<SymMatrix> blocks;
  for (std::size_t i = 0; i < dims.size(); ++i) {
    const std::string bp = fmt::format("{}[{}]", path, i);
    try {
      blocks.push_back(SymMatrix::from_symmetric(dense_from_json(j[i], dims[i], dims[i], bp)));
    } catch (const InvalidInputError&) {
      fail(bp, "block is not symmetric");
    }
  }
  return SymMatrix::block_diagonal(blocks);
}

MatrixXd link_matrix_from_json(const Json& j, int n, const std::string& path) {
  if (j.is_number()) {
    MatrixXd m = MatrixXd::Constant(n, n, number(j, path));
    m.diagonal().setZero();
    return m;
  }
  MatrixXd m = dense_from_json(j, n, n, path);
  m.diagonal().setZero();
  return m;
}

Json parse_text(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n');
    throw IoError(fmt::format("{}: malformed JSON near line {}: {}", what, line, e.what()));
  }
}

GainScheduleEntry entry_from_json(const Json& j, const TimeVaryingNetworkedPlant& plant, const std::string& path) {
  const auto n = plant.state_dims();
  const auto m = plant.input_dims();
  const auto r = plant.output_dims();
  GainScheduleEntry g;
  g.k = integer(j, "k", path);
  g.t = number(j, "t", path);
  g.T = number(j, "T", path);
  const Json& alpha = field(j, "alpha", path);
  if (!alpha.is_array()) fail(path + ".alpha", "expected an array of [i, j] pairs");
  for (std::size_t s = 0; s < alpha.size(); ++s) {
    const std::string lp = fmt::format("{}.alpha[{}]", path, s);
    if (!alpha[s].is_array() || alpha[s].size() != 2) fail(lp, "expected an [i, j] pair");
    const Link l{integer(alpha[s][0], lp) - 1, integer(alpha[s][1], lp) - 1};
    if (!plant.has_link(l)) fail(lp, "link is not in the plant adjacency");
    g.alpha.push_back(l);
  }
  if (!std::is_sorted(g.alpha.begin(), g.alpha.end()) ||
      std::adjacent_find(g.alpha.begin(), g.alpha.end()) != g.alpha.end()) {
    fail(path + ".alpha", "links must be sorted and distinct");
  }
  g.slack = number(j, "slack", path);
  g.solve_count = integer(j, "solves", path);
  g.K = block_matrix_from_json(field(j, "K", path), m, n, path + ".K");
  g.L = block_matrix_from_json(field(j, "L", path), m, n, path + ".L");
  g.M = block_matrix_from_json(field(j, "M", path), n, r, path + ".M");
  g.O = block_matrix_from_json(field(j, "O", path), n, r, path + ".O");
  g.W = block_matrix_from_json(field(j, "W", path), m, n, path + ".W");
  g.Y = block_matrix_from_json(field(j, "Y", path), m, n, path + ".Y");
  g.What = block_matrix_from_json(field(j, "What", path), n, r, path + ".What");
  g.Yhat = block_matrix_from_json(field(j, "Yhat", path), n, r, path + ".Yhat");
  g.Z = sym_blocks_from_json(field(j, "Z", path), n, path + ".Z");
  g.Phat = sym_blocks_from_json(field(j, "Phat", path), n, path + ".Phat");
  return g;
}

Json entry_to_json(const GainScheduleEntry& g, const TimeVaryingNetworkedPlant& plant) {
  const auto n = plant.state_dims();
  const std::string what = fmt::format("schedule entry {}", g.k);
  Json o = Json::object();
  o["k"] = g.k;
  o["t"] = finite(g.t, what);
  o["T"] = finite(g.T, what);
  o["alpha"] = links_to_json(g.alpha);
  o["slack"] = finite(g.slack, what);
  o["solves"] = g.solve_count;
  o["K"] = block_matrix_to_json(g.K, what);
  o["L"] = block_matrix_to_json(g.L, what);
  o["M"] = block_matrix_to_json(g.M, what);
  o["O"] = block_matrix_to_json(g.O, what);
  o["W"] = block_matrix_to_json(g.W, what);
  o["Y"] = block_matrix_to_json(g.Y, what);
  o["What"] = block_matrix_to_json(g.What, what);
  o["Yhat"] = block_matrix_to_json(g.Yhat, what);
  o["Z"] = sym_blocks_to_json(g.Z, n, what);
  o["Phat"] = sym_blocks_to_json(g.Phat, n, what);
  return o;
}

double block_norm(const BlockMatrix& b, int i, int j) { return b.has_block(i, j) ? max_singular_value(b.block(i, j)) : 0.0; }

}  // namespace

std::string format_double(double v) { return fmt::format("{:.17g}", v); }

Json plant_to_json(const TimeVaryingNetworkedPlant& plant) {
  Json subs = Json::array();
  for (int i = 0; i < plant.size(); ++i) {
    const auto& s = plant.subsystems()[i];
    const std::string what = fmt::format("subsystem {}", i + 1);
    Json o = Json::object();
    o["n"] = s.dims.n;
    o["m"] = s.dims.m;
    o["r"] = s.dims.r;
    o["A"] = function_to_json(s.A, what + " A");
    o["B"] = function_to_json(s.B, what + " B");
    o["C"] = function_to_json(s.C, what + " C");
    subs.push_back(std::move(o));
  }
  Json couplings = Json::array();
  for (const auto& c : plant.couplings()) {
    Json o = Json::object();
    o["i"] = c.link.i + 1;
    o["j"] = c.link.j + 1;
    o["H"] = function_to_json(c.H, fmt::format("coupling H_{}{}", c.link.i + 1, c.link.j + 1));
    couplings.push_back(std::move(o));
  }
  const auto& lb = plant.lipschitz();
  Json out = Json::object();
  out["subsystems"] = std::move(subs);
  out["couplings"] = std::move(couplings);
  out["lipschitz"] = {{"a", finite(lb.a, "lipschitz.a")},
                      {"b", finite(lb.b, "lipschitz.b")},
                      {"c", finite(lb.c, "lipschitz.c")},
                      {"h", finite(lb.h, "lipschitz.h")}};
  return out;
}

TimeVaryingNetworkedPlant plant_from_json(const Json& j) {
  const std::string path = "plant";
  const Json& subs = field(j, "subsystems", path);
  if (!subs.is_array() || subs.empty()) fail(path + ".subsystems", "expected a nonempty array");
  std::vector<Subsystem> subsystems;
  for (std::size_t i = 0; i < subs.size(); ++i) {
    const std::string sp = fmt::format("{}.subsystems[{}]", path, i);
    Subsystem s;
    s.dims = {integer(subs[i], "n", sp), integer(subs[i], "m", sp), integer(subs[i], "r", sp)};
    if (s.dims.n < 1 || s.dims.m < 1 || s.dims.r < 1) fail(sp, "n, m and r must be at least 1");
    s.A = function_from_json(field(subs[i], "A", sp), s.dims.n, s.dims.n, sp + ".A");
    s.B = function_from_json(field(subs[i], "B", sp), s.dims.n, s.dims.m, sp + ".B");
    s.C = function_from_json(field(subs[i], "C", sp), s.dims.r, s.dims.n, sp + ".C");
    subsystems.push_back(std::move(s));
  }
  std::vector<Coupling> couplings;
  if (j.contains("couplings")) {
    const Json& cs = j["couplings"];
    if (!cs.is_array()) fail(path + ".couplings", "expected an array");
    for (std::size_t s = 0; s < cs.size(); ++s) {
      const std::string cp = fmt::format("{}.couplings[{}]", path, s);
      const int i = integer(cs[s], "i", cp) - 1;
      const int jj = integer(cs[s], "j", cp) - 1;
      const int N = static_cast<int>(subsystems.size());
      if (i < 0 || i >= N || jj < 0 || jj >= N) fail(cp, "subsystem index out of range (indices are 1-based)");
      const int ni = subsystems[i].dims.n, nj = subsystems[jj].dims.n;
      couplings.push_back({{i, jj}, function_from_json(field(cs[s], "H", cp), ni, nj, cp + ".H")});
    }
  }
  const Json& lj = field(j, "lipschitz", path);
  const std::string lp = path + ".lipschitz";
  LipschitzBounds lb{number(lj, "a", lp), number(lj, "b", lp), number(lj, "c", lp), number(lj, "h", lp)};
  if (lb.a < 0 || lb.b < 0 || lb.c < 0 || lb.h < 0) fail(lp, "bounds must be nonnegative");
  try {
    return TimeVaryingNetworkedPlant(std::move(subsystems), std::move(couplings), lb);
  } catch (const ModelError& e) {
    fail(path, e.what());
  } catch (const InvalidInputError& e) {
    fail(path, e.what());
  }
}

Json config_to_json(const DesignConfig& c) {
  Json o = Json::object();
  o["kappa"] = c.kappa;
  o["mu"] = c.mu;
  o["iota"] = dense_to_json(c.iota, "config.iota");
  o["omega"] = dense_to_json(c.omega, "config.omega");
  o["beta"] = c.beta;
  o["epsilon"] = c.epsilon;
  o["gamma"] = c.gamma;
  o["solverTol"] = c.solver_tol;
  o["maxSolverIters"] = c.max_solver_iters;
  o["T_max"] = c.t_max;
  o["odeStep"] = c.ode_step;
  return o;
}

DesignConfig config_from_json(const Json& j, int n) {
  const std::string path = "config";
  DesignConfig c;
  c.kappa = number_list(field(j, "kappa", path), path + ".kappa");
  c.mu = number_list(field(j, "mu", path), path + ".mu");
  c.iota = link_matrix_from_json(field(j, "iota", path), n, path + ".iota");
  c.omega = link_matrix_from_json(field(j, "omega", path), n, path + ".omega");
  c.beta = number_list(field(j, "beta", path), path + ".beta");
  c.epsilon = number_list(field(j, "epsilon", path), path + ".epsilon");
  if (j.contains("gamma")) c.gamma = number(j, "gamma", path);
  if (j.contains("solverTol")) c.solver_tol = number(j, "solverTol", path);
  if (j.contains("maxSolverIters")) c.max_solver_iters = integer(j, "maxSolverIters", path);
  if (j.contains("T_max")) c.t_max = number(j, "T_max", path);
  if (j.contains("odeStep")) c.ode_step = number(j, "odeStep", path);
  try {
    c.validate(n);
  } catch (const InvalidInputError& e) {
    throw IoError(e.what());
  }
  return c;
}

ProblemDocument parse_problem(const std::string& text) {
  const Json j = parse_text(text, "input");
  if (!j.is_object()) throw IoError("input: expected an object with \"plant\" and \"config\"");
  ProblemDocument doc;
  doc.plant = plant_from_json(field(j, "plant", "input"));
  doc.config = config_from_json(field(j, "config", "input"), doc.plant.size());
  return doc;
}

ProblemDocument load_problem(const fs::path& path) { return parse_problem(read_file(path)); }

std::string schedule_to_string(const ScheduleDocument& doc) {
  Json o = Json::object();
  o["format"] = "ncs-schedule";
  o["version"] = 1;
  o["variant"] = to_string(doc.variant);
  o["t_end"] = finite(doc.t_end, "t_end");
  o["complete"] = doc.complete;
  o["diagnostic"] = doc.diagnostic;
  o["tmin_bound"] = std::isfinite(doc.tmin_bound) ? Json(doc.tmin_bound) : Json("inf");
  o["plant"] = plant_to_json(doc.plant);
  o["config"] = config_to_json(doc.config);
  // One line per top-level field and per schedule entry keeps the file
  // compact yet line-diffable.
  std::string s = "{\n";
  for (const auto& [key, value] : o.items()) s += " " + Json(key).dump() + ": " + value.dump() + ",\n";
  s += " \"entries\": [";
  for (std::size_t k = 0; k < doc.entries.size(); ++k) {
    s += k ? ",\n  " : "\n  ";
    s += entry_to_json(doc.entries[k], doc.plant).dump();
  }
  s += doc.entries.empty() ? "]\n}\n" : "\n ]\n}\n";
  return s;
}

ScheduleDocument parse_schedule(const std::string& text) {
  const Json j = parse_text(text, "schedule");
  const std::string path = "schedule";
  const Json& fmt_field = field(j, "format", path);
  if (!fmt_field.is_string() || fmt_field.get<std::string>() != "ncs-schedule") fail(path, "not a schedule document");
  if (integer(j, "version", path) != 1) fail(path + ".version", "unsupported version");
  ScheduleDocument doc;
  doc.plant = plant_from_json(field(j, "plant", path));
  doc.config = config_from_json(field(j, "config", path), doc.plant.size());
  const Json& v = field(j, "variant", path);
  if (!v.is_string()) fail(path + ".variant", "expected a string");
  try {
    doc.variant = parse_variant(v.get<std::string>());
  } catch (const std::exception& e) {
    fail(path + ".variant", e.what());
  }
  doc.t_end = number(j, "t_end", path);
  const Json& complete = field(j, "complete", path);
  if (!complete.is_boolean()) fail(path + ".complete", "expected a boolean");
  doc.complete = complete.get<bool>();
  const Json& diag = field(j, "diagnostic", path);
  if (!diag.is_string()) fail(path + ".diagnostic", "expected a string");
  doc.diagnostic = diag.get<std::string>();
  const Json& tb = field(j, "tmin_bound", path);
  doc.tmin_bound = tb.is_string() && tb.get<std::string>() == "inf" ? std::numeric_limits<double>::infinity()
                                                                      : number(tb, path + ".tmin_bound");
  const Json& entries = field(j, "entries", path);
  if (!entries.is_array()) fail(path + ".entries", "expected an array");
  for (std::size_t s = 0; s < entries.size(); ++s) {
    const std::string ep = fmt::format("{}.entries[{}]", path, s);
    auto e = entry_from_json(entries[s], doc.plant, ep);
    if (e.k != static_cast<int>(s)) fail(ep + ".k", fmt::format("expected {}", s));
    if (!(e.T > 0.0)) fail(ep + ".T", "must be positive");
    if (s == 0 && e.t != 0.0) fail(ep + ".t", "the first interval must start at 0");
    if (s > 0) {
      const auto& prev = doc.entries.back();
      if (std::abs(prev.t + prev.T - e.t) > 1e-9 * std::max(1.0, std::abs(e.t))) {
        fail(ep + ".t", "does not continue the previous interval");
      }
    }
    doc.entries.push_back(std::move(e));
  }
  if (doc.complete && (doc.entries.empty() || doc.entries.back().t + doc.entries.back().T < doc.t_end * (1 - 1e-12))) {
    fail(path, "marked complete but the entries do not reach t_end");
  }
  return doc;
}

ScheduleDocument load_schedule(const fs::path& path) { return parse_schedule(read_file(path)); }

void write_summary_csv(std::ostream& os, const TimeVaryingNetworkedPlant& plant,
                       const std::vector<GainScheduleEntry>& entries) {
  const int N = plant.size();
  const auto dims = plant.state_dims();
  const auto& adj = plant.adjacency();
  os << "k,t,T,links,slack,solves";
  for (int i = 1; i <= N; ++i) os << ",K_" << i;
  for (int i = 1; i <= N; ++i) os << ",M_" << i;
  for (const auto& l : adj) os << ",L_" << l.i + 1 << "_" << l.j + 1;
  for (const auto& l : adj) os << ",O_" << l.i + 1 << "_" << l.j + 1;
  for (int i = 1; i <= N; ++i) os << ",P_" << i;
  for (int i = 1; i <= N; ++i) os << ",Phat_" << i;
  os << "\n";
  for (const auto& g : entries) {
    os << g.k << ',' << format_double(g.t) << ',' << format_double(g.T) << ',' << g.link_count() << ','
       << format_double(g.slack) << ',' << g.solve_count;
    for (int i = 0; i < N; ++i) os << ',' << format_double(block_norm(g.K, i, i));
    for (int i = 0; i < N; ++i) os << ',' << format_double(block_norm(g.M, i, i));
    for (const auto& l : adj) os << ',' << format_double(block_norm(g.L, l.i, l.j));
    for (const auto& l : adj) os << ',' << format_double(block_norm(g.O, l.i, l.j));
    int off = 0;
    for (int i = 0; i < N; ++i) {
      os << ',' << format_double(1.0 / min_eig(g.Z.block(off, dims[i])));
      off += dims[i];
    }
    off = 0;
    for (int i = 0; i < N; ++i) {
      os << ',' << format_double(max_eig(g.Phat.block(off, dims[i])));
      off += dims[i];
    }
    os << "\n";
  }
}

void write_trace_csv(std::ostream& os, const SimulationTrace& trace) {
  const int n = trace.size() ? static_cast<int>(trace.x.front().size()) : 0;
  os << "time,k,switch";
  for (int i = 1; i <= n; ++i) os << ",x" << i;
  for (int i = 1; i <= n; ++i) os << ",e" << i;
  for (int i = 1; i <= n; ++i) os << ",xu" << i;
  os << ",V_state,V_err,V_unforced\n";
  std::string line;
  for (std::size_t r = 0; r < trace.size(); ++r) {
    line.clear();
    fmt::format_to(std::back_inserter(line), "{:.17g},{},{}", trace.times[r], trace.interval[r],
                   static_cast<int>(trace.is_switch[r]));
    for (const auto* v : {&trace.x[r], &trace.e[r], &trace.xu[r]}) {
      for (int i = 0; i < v->size(); ++i) fmt::format_to(std::back_inserter(line), ",{:.17g}", (*v)(i));
    }
    fmt::format_to(std::back_inserter(line), ",{:.17g},{:.17g},{:.17g}\n", trace.V_state[r], trace.V_err[r],
                   trace.V_unforced[r]);
    os << line;
  }
}

void write_links_compare_csv(std::ostream& os, const std::vector<LinkComparisonRow>& rows) {
  os << "k,t,heuristic,optimal\n";
  for (const auto& r : rows) os << r.k << ',' << format_double(r.t) << ',' << r.heuristic << ',' << r.optimal << "\n";
}

Json lyapunov_to_json(const LyapunovReport& r) {
  constexpr std::size_t kMaxListed = 100;
  Json o = Json::object();
  o["passed"] = r.passed;
  o["beta"] = r.beta;
  o["worst_interval_margin"] = r.worst_interval_margin;
  o["worst_switch_increase"] = r.worst_switch_increase;
  o["forced_interval_margin"] = r.forced_interval_margin;
  o["violation_count"] = r.violations.size();
  Json v = Json::array();
  for (std::size_t i = 0; i < std::min(kMaxListed, r.violations.size()); ++i) {
    const auto& x = r.violations[i];
    v.push_back({{"check", x.check}, {"k", x.k}, {"t", x.t}, {"margin", x.margin}});
  }
  o["violations"] = std::move(v);
  return o;
}

Json theorem2_to_json(const Theorem2Report& r) {
  constexpr std::size_t kMaxListed = 100;
  Json o = Json::object();
  o["passed"] = r.passed;
  o["tolerance"] = r.tolerance;
  o["samples_per_interval"] = r.samples_per_interval;
  o["max_residual"] = {{"7a", r.max_residual_7a}, {"7b", r.max_residual_7b}, {"7c", r.max_residual_7c},
                       {"7d", r.max_residual_7d}, {"7e", r.max_residual_7e}, {"7f", r.max_residual_7f}};
  o["violation_count"] = r.violations.size();
  Json v = Json::array();
  for (std::size_t i = 0; i < std::min(kMaxListed, r.violations.size()); ++i) {
    const auto& x = r.violations[i];
    v.push_back({{"k", x.k}, {"t", x.t}, {"id", x.id}, {"residual", x.residual}});
  }
  o["violations"] = std::move(v);
  return o;
}

std::string plot_script(const std::string& summary_header, bool with_compare) {
  std::vector<std::string> cols;
  std::stringstream ss(summary_header);
  for (std::string c; std::getline(ss, c, ',');) {
    if (!c.empty() && c.back() == '\r') c.pop_back();
    cols.push_back(c);
  }
  auto column = [&](const std::string& name) -> int {
    auto it = std::find(cols.begin(), cols.end(), name);
    if (it == cols.end()) throw IoError("summary.csv: missing column " + name);
    return static_cast<int>(it - cols.begin()) + 1;
  };
  auto with_prefix = [&](const std::string& prefix) {
    std::vector<std::string> out;
    for (const auto& c : cols) {
      if (c.rfind(prefix, 0) == 0 && c.size() > prefix.size() && std::isdigit(static_cast<unsigned char>(c[prefix.size()]))) {
        out.push_back(c);
      }
    }
    return out;
  };
  const int t = column("t");

  std::string s;
  auto out = std::back_inserter(s);
  fmt::format_to(out,
                 "# Run from the output directory: gnuplot plot.gp\n"
                 "set datafile separator ','\n"
                 "set terminal pngcairo size 900,600\n"
                 "set grid\n"
                 "set key outside right\n"
                 "set xlabel 't [s]'\n");
  auto figure = [&](const char* file, const char* title, const std::string& prefix, const char* label) {
    fmt::format_to(out, "\nset output '{}'\nset title '{}'\nset ylabel '{}'\nplot ", file, title, label);
    const auto names = with_prefix(prefix);
    if (names.empty()) {
      fmt::format_to(out, "'summary.csv' every ::1 using {}:(0) with steps title 'none'\n", t);
      return;
    }
    for (std::size_t i = 0; i < names.size(); ++i) {
      fmt::format_to(out, "{}'summary.csv' every ::1 using {}:{} with steps title '{}'", i ? ", \\\n     " : "", t,
                     column(names[i]), names[i]);
    }
    fmt::format_to(out, "\n");
  };
  figure("fig_P_norm.png", "||P_{k,i}||", "P_", "norm");
  figure("fig_Phat_norm.png", "||Phat_{k,i}||", "Phat_", "norm");
  figure("fig_K_norm.png", "||K_{k,i}||", "K_", "norm");
  figure("fig_M_norm.png", "||M_{k,i}||", "M_", "norm");
  figure("fig_L_norm.png", "||L_{k,ij}||", "L_", "norm");
  figure("fig_O_norm.png", "||O_{k,ij}||", "O_", "norm");
  fmt::format_to(out, "\nset output 'fig_links.png'\nset title 'active links'\nset ylabel 'count'\n");
  if (with_compare) {
    fmt::format_to(out,
                   "plot 'links_compare.csv' every ::1 using 2:3 with steps title 'heuristic', \\\n"
                   "     'links_compare.csv' every ::1 using 2:4 with steps title 'exhaustive'\n");
  } else {
    fmt::format_to(out, "plot 'summary.csv' every ::1 using {}:{} with steps title 'links'\n", t, column("links"));
  }
  fmt::format_to(out, "\nset output 'fig_T.png'\nset title 'T_k'\nset ylabel 'T_k [s]'\n");
  fmt::format_to(out, "plot 'summary.csv' every ::1 using {}:{} with points pt 7 ps 0.3 title 'T_k'\n", t, column("T"));
  return s;
}

void write_file_atomic(const fs::path& path, const std::function<void(std::ostream&)>& body) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + tmp.string());
    body(os);
    os.flush();
    if (!os) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  write_file_atomic(path, [&](std::ostream& os) { os << content; });
}

std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace ncs
