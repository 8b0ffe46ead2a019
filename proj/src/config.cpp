#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "condflow/experiments.hpp"

namespace condflow {

namespace {

void check_keys(const YAML::Node& node, const std::string& where, const std::set<std::string>& allowed) {
  if (!node.IsMap()) throw ConfigError("config: '" + where + "' must be a mapping");
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (!allowed.count(key)) throw ConfigError("config: unknown key '" + key + "' in " + where);
  }
}

template <class T>
void read(const YAML::Node& node, const char* key, T& out) {
  const YAML::Node v = node[key];
  if (!v) return;
  try {
    out = v.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError(std::string("config: bad value for '") + key + "'");
  }
}

template <class T>
void read_opt(const YAML::Node& node, const char* key, std::optional<T>& out) {
  if (!node[key]) return;
  T v{};
  read(node, key, v);
  out = v;
}

void positive(std::size_t v, const char* what) {
  if (v == 0) throw ConfigError(std::string("config: ") + what + " must be positive");
}

void positive(double v, const char* what) {
  if (!(v > 0.0)) throw ConfigError(std::string("config: ") + what + " must be positive");
}

}  // namespace

const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names = {"deriv-check",    "dpp-check",    "flow-modulus",
                                                 "hjb-lq",         "lemma-qv",     "sweep",
                                                 "verify-brownian", "verify-factor", "verify-ito",
                                                 "verify-wentzell"};
  return names;
}

ExperimentConfig parse_config(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  ExperimentConfig c;
  if (!root || root.IsNull()) return c;
  check_keys(root, "top level",
             {"experiment", "functional", "instance", "seed", "threads", "bracket", "cross", "sizes", "coefficients",
              "factor", "tolerance", "sweep", "lemma", "deriv", "lq", "dpp", "modulus", "output"});
  read(root, "experiment", c.experiment);
  if (!c.experiment.empty()) {
    const auto& names = experiment_names();
    if (!std::binary_search(names.begin(), names.end(), c.experiment)) {
      throw ConfigError("config: unknown experiment '" + c.experiment + "'");
    }
  }
  read(root, "functional", c.functional);
  read(root, "instance", c.instance);
  read_opt(root, "seed", c.seed);
  read(root, "threads", c.threads);
  read(root, "output", c.output);
  if (root["bracket"]) {
    const auto b = root["bracket"].as<std::string>();
    if (b == "analytic") c.bracket = BracketMode::kAnalytic;
    else if (b == "realized") c.bracket = BracketMode::kRealized;
    else throw ConfigError("config: bracket must be 'analytic' or 'realized'");
  }
  if (root["cross"]) {
    const auto b = root["cross"].as<std::string>();
    if (b == "analytic") c.cross = CrossMode::kAnalytic;
    else if (b == "pairwise") c.cross = CrossMode::kPairwise;
    else throw ConfigError("config: cross must be 'analytic' or 'pairwise'");
  }
  if (const auto s = root["sizes"]) {
    check_keys(s, "sizes", {"n", "particles", "outer_paths"});
    read(s, "n", c.sizes.n);
    read(s, "particles", c.sizes.particles);
    read(s, "outer_paths", c.sizes.outer_paths);
  }
  if (const auto s = root["coefficients"]) {
    check_keys(s, "coefficients", {"drift", "sigma", "sigma0", "mean_reversion", "x0", "x0_var", "horizon"});
    auto& k = c.coefficients;
    read(s, "drift", k.drift);
    read(s, "sigma", k.sigma);
    read(s, "sigma0", k.sigma0);
    read(s, "mean_reversion", k.mean_reversion);
    read(s, "x0", k.x0);
    read(s, "x0_var", k.x0_var);
    read(s, "horizon", k.horizon);
  }
  if (const auto s = root["factor"]) {
    check_keys(s, "factor", {"k", "gamma", "gamma0", "y0"});
    c.factor.enabled = true;
    read(s, "k", c.factor.k);
    read(s, "gamma", c.factor.gamma);
    read(s, "gamma0", c.factor.gamma0);
    read(s, "y0", c.factor.y0);
  }
  if (const auto s = root["tolerance"]) {
    check_keys(s, "tolerance", {"c", "statistic", "scale", "check_quantile", "tol_hjb", "c_dpp"});
    auto& t = c.tolerance;
    read(s, "c", t.c);
    read_opt(s, "statistic", t.statistic);
    read_opt(s, "scale", t.scale);
    read(s, "check_quantile", t.check_quantile);
    read(s, "tol_hjb", t.tol_hjb);
    read(s, "c_dpp", t.c_dpp);
    if (t.statistic && *t.statistic != "mean-abs" && *t.statistic != "signed-mean") {
      throw ConfigError("config: tolerance.statistic must be 'mean-abs' or 'signed-mean'");
    }
    if (t.scale && *t.scale != "root-sizes" && *t.scale != "mesh") {
      throw ConfigError("config: tolerance.scale must be 'root-sizes' or 'mesh'");
    }
    if (!(t.c >= 0.0)) throw ConfigError("config: tolerance.c must be nonnegative");
  }
  if (const auto s = root["sweep"]) {
    check_keys(s, "sweep", {"cells"});
    for (const auto& cell : s["cells"]) {
      if (!cell.IsSequence() || cell.size() != 3) throw ConfigError("config: sweep cells are [n, N, M] triples");
      SweepCell sc{cell[0].as<std::size_t>(), cell[1].as<std::size_t>(), cell[2].as<std::size_t>()};
      positive(sc.n, "sweep n");
      positive(sc.particles, "sweep N");
      positive(sc.outer_paths, "sweep M");
      c.sweep.push_back(sc);
    }
  }
  if (const auto s = root["lemma"]) {
    check_keys(s, "lemma", {"weight", "sigma", "n_list", "seeds", "max_error"});
    read(s, "weight", c.lemma.weight);
    read(s, "sigma", c.lemma.sigma);
    read(s, "n_list", c.lemma.n_list);
    read(s, "seeds", c.lemma.seeds);
    read(s, "max_error", c.lemma.max_error);
    positive(c.lemma.seeds, "lemma.seeds");
    if (c.lemma.n_list.empty()) throw ConfigError("config: lemma.n_list must not be empty");
    for (auto n : c.lemma.n_list) positive(n, "lemma.n_list entries");
  }
  if (const auto s = root["deriv"]) {
    check_keys(s, "deriv", {"functionals", "eps", "identity_tol"});
    read(s, "functionals", c.deriv.functionals);
    read(s, "eps", c.deriv.eps);
    read(s, "identity_tol", c.deriv.identity_tol);
    if (c.deriv.eps.empty()) throw ConfigError("config: deriv.eps must not be empty");
    for (double e : c.deriv.eps) positive(e, "deriv.eps entries");
  }
  if (const auto s = root["lq"]) {
    check_keys(s, "lq", {"q", "r", "c_g", "c_m", "sigma", "sigma0", "horizon", "perturbation", "perturbation_floor",
                         "mc_nodes", "mc_particles", "mc_paths", "mc_steps"});
    auto& p = c.lq.params;
    read(s, "q", p.q);
    read(s, "r", p.r);
    read(s, "c_g", p.c_g);
    read(s, "c_m", p.c_m);
    read(s, "sigma", p.sigma);
    read(s, "sigma0", p.sigma0);
    read(s, "horizon", p.horizon);
    read(s, "perturbation", c.lq.perturbation);
    read(s, "perturbation_floor", c.lq.perturbation_floor);
    read(s, "mc_particles", c.lq.mc_particles);
    read(s, "mc_paths", c.lq.mc_paths);
    read(s, "mc_steps", c.lq.mc_steps);
    if (const auto nodes = s["mc_nodes"]) {
      c.lq.mc_nodes.clear();
      for (const auto& node : nodes) {
        if (!node.IsSequence() || node.size() != 3) throw ConfigError("config: lq.mc_nodes are [t, mean, var] triples");
        c.lq.mc_nodes.push_back({node[0].as<double>(), node[1].as<double>(), node[2].as<double>()});
      }
    }
    positive(p.horizon, "lq.horizon");
    positive(c.lq.mc_steps, "lq.mc_steps");
    if (c.lq.mc_paths < 2) throw ConfigError("config: lq.mc_paths must be at least 2");
    if (c.lq.mc_particles < 2) throw ConfigError("config: lq.mc_particles must be at least 2");
  }
  if (const auto s = root["dpp"]) {
    check_keys(s, "dpp", {"t", "theta", "mean", "var", "control", "band"});
    read(s, "t", c.dpp.t);
    read(s, "theta", c.dpp.theta);
    read(s, "mean", c.dpp.mean);
    read(s, "var", c.dpp.var);
    read(s, "control", c.dpp.control);
    read(s, "band", c.dpp.band);
    if (c.dpp.control != "optimal" && c.dpp.control != "constant" && c.dpp.control != "both") {
      throw ConfigError("config: dpp.control must be 'optimal', 'constant' or 'both'");
    }
    if (!(c.dpp.theta > c.dpp.t)) throw ConfigError("config: dpp.theta must exceed dpp.t");
  }
  if (const auto s = root["modulus"]) {
    check_keys(s, "modulus", {"pairs"});
    read(s, "pairs", c.modulus.pairs);
    positive(c.modulus.pairs, "modulus.pairs");
  }
  positive(c.sizes.n, "sizes.n");
  positive(c.sizes.outer_paths, "sizes.outer_paths");
  if (c.sizes.particles < 2) throw ConfigError("config: sizes.particles must be at least 2");
  positive(c.threads, "threads");
  positive(c.coefficients.horizon, "coefficients.horizon");
  if (!(c.coefficients.sigma >= 0.0) || !(c.coefficients.sigma0 >= 0.0) || !(c.coefficients.x0_var >= 0.0)) {
    throw ConfigError("config: sigma, sigma0 and x0_var must be nonnegative");
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["experiment"] = c.experiment;
  j["functional"] = c.functional;
  j["instance"] = c.instance;
  j["seed"] = c.seed ? nlohmann::json(*c.seed) : nlohmann::json(nullptr);
  j["bracket"] = c.bracket == BracketMode::kAnalytic ? "analytic" : "realized";
  j["cross"] = c.cross == CrossMode::kAnalytic ? "analytic" : "pairwise";
  j["sizes"] = {{"n", c.sizes.n}, {"particles", c.sizes.particles}, {"outer_paths", c.sizes.outer_paths}};
  const auto& k = c.coefficients;
  j["coefficients"] = {{"drift", k.drift}, {"sigma", k.sigma}, {"sigma0", k.sigma0}, {"mean_reversion", k.mean_reversion},
                       {"x0", k.x0}, {"x0_var", k.x0_var}, {"horizon", k.horizon}};
  if (c.factor.enabled) {
    j["factor"] = {{"k", c.factor.k}, {"gamma", c.factor.gamma}, {"gamma0", c.factor.gamma0}, {"y0", c.factor.y0}};
  }
  const auto& t = c.tolerance;
  j["tolerance"] = {{"c", t.c}, {"check_quantile", t.check_quantile}, {"tol_hjb", t.tol_hjb}, {"c_dpp", t.c_dpp}};
  if (t.statistic) j["tolerance"]["statistic"] = *t.statistic;
  if (t.scale) j["tolerance"]["scale"] = *t.scale;
  if (!c.sweep.empty()) {
    auto cells = nlohmann::json::array();
    for (const auto& s : c.sweep) cells.push_back({s.n, s.particles, s.outer_paths});
    j["sweep"] = {{"cells", cells}};
  }
  j["lemma"] = {{"weight", c.lemma.weight}, {"sigma", c.lemma.sigma}, {"n_list", c.lemma.n_list},
                {"seeds", c.lemma.seeds}, {"max_error", c.lemma.max_error}};
  j["deriv"] = {{"functionals", c.deriv.functionals}, {"eps", c.deriv.eps}, {"identity_tol", c.deriv.identity_tol}};
  const auto& p = c.lq.params;
  auto nodes = nlohmann::json::array();
  for (const auto& n : c.lq.mc_nodes) nodes.push_back({n[0], n[1], n[2]});
  j["lq"] = {{"q", p.q}, {"r", p.r}, {"c_g", p.c_g}, {"c_m", p.c_m}, {"sigma", p.sigma}, {"sigma0", p.sigma0},
             {"horizon", p.horizon}, {"perturbation", c.lq.perturbation}, {"perturbation_floor", c.lq.perturbation_floor},
             {"mc_nodes", nodes}, {"mc_particles", c.lq.mc_particles}, {"mc_paths", c.lq.mc_paths},
             {"mc_steps", c.lq.mc_steps}};
  j["dpp"] = {{"t", c.dpp.t}, {"theta", c.dpp.theta}, {"mean", c.dpp.mean}, {"var", c.dpp.var},
              {"control", c.dpp.control}, {"band", c.dpp.band}};
  j["modulus"] = {{"pairs", c.modulus.pairs}};
  return j;
}

}  // namespace condflow
