// Copyright 2026 The MocDT Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// mocdt: command-line front end. Every invocation writes one self-describing
// run directory holding its outputs, the fully resolved configuration
// (config.txt, loadable with --config) and manifest.json with SHA-256 hashes
// of every file read or written.
//
//   mocdt synth    --out runs/data --seed 7 --users 50 --items 200
//   mocdt augment  --out runs/aug --data runs/data --strategy rating --rate 1 --horizon 10
//   mocdt train    --out runs/model --data runs/aug --epochs 30
//   mocdt evaluate --out runs/eval --data runs/data --oracle runs/data/oracle.csv
//                  --checkpoints runs/model/checkpoints
//
// Exit codes: 0 success, 1 unexpected failure, 2 usage, 3 I/O, 4 invalid
// input data, 5 configuration, 6 training divergence.

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mocdt/mocdt.hpp"

namespace {

using namespace mocdt;
namespace fs = std::filesystem;
using json = nlohmann::json;

constexpr const char* kVersion = "1.0.0";

enum ExitCode : int { kOk = 0, kFailure = 1, kUsage = 2, kIo = 3, kBadInput = 4, kBadConfig = 5, kDiverged = 6 };

int exit_code_for(const std::string& category) {
  if (category == "io") return kIo;
  if (category == "config") return kBadConfig;
  if (category == "divergence") return kDiverged;
  return kBadInput;  // parse, validation, lookup, domain, shape
}

// ---------------------------------------------------------------------------
// Configuration: a flat set of known `key = value` entries. Defaults, then the
// --config file, then --set and command flags, each overriding the previous.

struct KeyInfo {
  const char* key;
  const char* fallback;
  const char* help;
};

// Empty module seeds fall back to the global `seed`.
const std::vector<KeyInfo>& known_keys() {
  static const std::vector<KeyInfo> keys = {
      {"seed", "0", "global seed; used by every module seed left empty"},
      {"threads", "1", "worker cap for training and evaluation"},
      {"horizon", "10", "H: to-go length, training window length, generation length"},
      {"scale.r_min", "1", "lowest rating on the scale"},
      {"scale.r_max", "5", "highest rating on the scale"},
      {"synth.users", "200", "synthetic users"},
      {"synth.items", "300", "synthetic items"},
      {"synth.categories", "12", "synthetic categories"},
      {"synth.traj_len", "30", "interactions per synthetic user"},
      {"synth.rank", "4", "latent rank of the synthetic rating matrix"},
      {"synth.seed", "", "synthetic data seed"},
      {"synth.greedy_min", "0.2", "lower bound of the per-user greedy probability"},
      {"synth.greedy_max", "0.8", "upper bound of the per-user greedy probability"},
      {"synth.item_noise", "0.3", "item factor noise around the category prototypes"},
      {"synth.user_scale", "1.5", "spread of the user factors"},
      {"complete.rank", "8", "matrix factorization rank"},
      {"complete.epochs", "60", "SGD epochs"},
      {"complete.lr", "0.01", "SGD step size"},
      {"complete.reg", "0.02", "L2 regularization"},
      {"complete.seed", "", "factorization seed"},
      {"augment.strategy", "rating", "comma list of rating|diversity|random"},
      {"augment.rate", "1", "comma list: synthetic per original trajectory, one per strategy"},
      {"augment.seed", "", "comma list of seeds, one per strategy"},
      {"model.d_model", "32", "embedding width"},
      {"model.layers", "1", "layers of each transformer"},
      {"model.heads", "2", "attention heads"},
      {"model.max_hist", "50", "history items kept"},
      {"model.control_layer", "0", "step-transformer layer feeding the control MLP (0: last)"},
      {"model.seed", "", "parameter initialization seed"},
      {"train.epochs", "30", "training epochs"},
      {"train.batch_size", "32", "windows per batch"},
      {"train.lr", "0.001", "Adam learning rate"},
      {"train.grad_clip", "1", "global gradient norm bound"},
      {"train.seed", "", "shuffle seed"},
      {"train.checked", "false", "abort on the first non-finite value"},
      {"eval.points", "grid", "'grid' or semicolon list of o_rate,o_div points"},
      {"eval.epochs", "all", "'all', 'last:N' or comma list of checkpoint epochs"},
      {"eval.sample_users", "", "evaluate a seeded sample of this many users (empty: all)"},
      {"eval.user_seed", "", "user sample seed"},
      {"eval.cut", "0.8", "fraction of each trajectory that is history"},
      {"eval.exclude_history", "false", "never generate history items"},
      {"generate.user", "all", "external user id or 'all'"},
      {"generate.point", "1,1", "o_rate,o_div"},
      {"generate.mode", "greedy", "'greedy' or 'sample:T'"},
      {"generate.seed", "", "sampling seed"},
      {"ablate.axis", "layers", "layers|horizon"},
      {"ablate.values", "1,2,3,4,5", "comma list of axis values"},
      {"in.data", "", "dataset directory (interactions.csv, categories.csv)"},
      {"in.interactions", "", "interactions CSV to ingest"},
      {"in.categories", "", "categories CSV to ingest"},
      {"in.oracle", "", "rating oracle CSV"},
      {"in.checkpoints", "", "checkpoint directory"},
      {"in.checkpoint", "", "single checkpoint file"},
      {"in.report", "", "evaluation report CSV"},
  };
  return keys;
}

class Config {
 public:
  Config() {
    for (const auto& k : known_keys()) values_[k.key] = k.fallback;
  }

  void set(const std::string& key, const std::string& value) {
    if (!values_.contains(key)) throw ConfigError("unknown config key '" + key + "'");
    values_[key] = value;
  }

  void load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    std::string line;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      const auto text = trim(line);
      if (text.empty()) continue;
      const auto eq = text.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(path + " line " + std::to_string(lineno) + ": expected 'key = value'");
      }
      set(trim(text.substr(0, eq)), trim(text.substr(eq + 1)));
    }
  }

  const std::string& str(const std::string& key) const { return values_.at(key); }

  template <class N>
  N num(const std::string& key) const {
    const auto& v = str(key);
    const auto parsed = detail::parse_number<N>(v);
    if (!parsed) throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
    return *parsed;
  }

  bool flag(const std::string& key) const {
    const auto& v = str(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
  }

  std::uint64_t seed(const std::string& key) const {
    return str(key).empty() ? num<std::uint64_t>("seed") : num<std::uint64_t>(key);
  }

  std::string required(const std::string& key) const {
    if (str(key).empty()) throw ConfigError("config key '" + key + "' is required for this command");
    return str(key);
  }

  /// Resolved configuration in the file format accepted by load().
  std::string echo() const {
    std::ostringstream os;
    os << "# mocdt " << kVersion << " resolved configuration\n";
    for (const auto& k : known_keys()) os << k.key << " = " << values_.at(k.key) << "\n";
    return os.str();
  }

  json to_json() const {
    json j = json::object();
    for (const auto& k : known_keys()) j[k.key] = values_.at(k.key);
    return j;
  }

  static std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
  }

 private:
  std::map<std::string, std::string> values_;
};

std::vector<std::string> split_list(const std::string& s, char sep) {
  std::vector<std::string> out;
  for (auto part : detail::split(s, sep)) {
    auto t = Config::trim(part);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

template <class N>
std::vector<N> number_list(const Config& cfg, const std::string& key) {
  std::vector<N> out;
  for (const auto& part : split_list(cfg.str(key), ',')) {
    const auto v = detail::parse_number<N>(part);
    if (!v) throw ConfigError("config key '" + key + "': bad list entry '" + part + "'");
    out.push_back(*v);
  }
  return out;
}

ObjectivePoint parse_point(const std::string& text, const std::string& key) {
  const auto parts = split_list(text, ',');
  std::optional<double> r, d;
  if (parts.size() == 2) {
    r = detail::parse_number<double>(parts[0]);
    d = detail::parse_number<double>(parts[1]);
  }
  if (!r || !d || *r < 0.0 || *r > 1.0 || *d < 0.0 || *d > 1.0) {
    throw ConfigError("config key '" + key + "': expected 'o_rate,o_div' in [0,1], got '" + text + "'");
  }
  return ObjectivePoint(*r, *d);
}

// ---------------------------------------------------------------------------
// Run directory and manifest

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw IoError("SHA-256 unavailable");
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  std::string hex;
  char byte[3];
  for (unsigned int k = 0; k < len; ++k) {
    std::snprintf(byte, sizeof(byte), "%02x", digest[k]);
    hex += byte;
  }
  return hex;
}

class Run {
 public:
  Run(std::string command, const Config& cfg, fs::path dir, bool force)
      : command_(std::move(command)), cfg_(cfg), dir_(std::move(dir)), start_(std::chrono::steady_clock::now()) {
    if (fs::exists(dir_) && !fs::is_directory(dir_)) throw IoError(dir_.string() + " exists and is not a directory");
    if (fs::exists(dir_) && !fs::is_empty(dir_) && !force) {
      throw IoError("run directory " + dir_.string() + " is not empty (pass --force to reuse it)");
    }
    fs::create_directories(dir_);
    std::ofstream(dir_ / "config.txt") << cfg_.echo();
  }

  const fs::path& dir() const { return dir_; }
  fs::path out(const std::string& name) const { return dir_ / name; }

  /// Records a file this command read.
  fs::path input(const fs::path& path) {
    if (!fs::is_regular_file(path)) throw IoError("missing input file " + path.string());
    inputs_.push_back(path);
    return path;
  }
  void output(const fs::path& path) { outputs_.push_back(path); }

  void finish(json summary = json::object()) const {
    json files_in = json::array(), files_out = json::array();
    for (const auto& p : inputs_) files_in.push_back({{"path", p.string()}, {"sha256", sha256_file(p)}});
    for (const auto& p : outputs_) {
      files_out.push_back({{"path", fs::relative(p, dir_).string()}, {"sha256", sha256_file(p)}});
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    json manifest = {{"command", command_},
                     {"version", kVersion},
                     {"config_file", "config.txt"},
                     {"config", cfg_.to_json()},
                     {"inputs", files_in},
                     {"outputs", files_out},
                     {"summary", summary},
                     {"wall_seconds", wall}};
    std::ofstream(dir_ / "manifest.json") << manifest.dump(2) << "\n";
  }

 private:
  std::string command_;
  const Config& cfg_;
  fs::path dir_;
  std::chrono::steady_clock::time_point start_;
  std::vector<fs::path> inputs_, outputs_;
};

// ---------------------------------------------------------------------------
// Config -> module settings

Scale scale_of(const Config& c) { return {c.num<double>("scale.r_min"), c.num<double>("scale.r_max")}; }

std::size_t threads_of(const Config& c) {
  const auto n = c.num<std::size_t>("threads");
  if (n < 1) throw ConfigError("config key 'threads' must be >= 1");
  return n;
}

SynthSpec synth_spec(const Config& c) {
  SynthSpec s;
  s.num_users = c.num<std::size_t>("synth.users");
  s.num_items = c.num<std::size_t>("synth.items");
  s.num_categories = c.num<std::size_t>("synth.categories");
  s.traj_len = c.num<std::size_t>("synth.traj_len");
  s.latent_rank = c.num<std::size_t>("synth.rank");
  s.seed = c.seed("synth.seed");
  s.greedy_min = c.num<double>("synth.greedy_min");
  s.greedy_max = c.num<double>("synth.greedy_max");
  s.item_noise = c.num<double>("synth.item_noise");
  s.user_scale = c.num<double>("synth.user_scale");
  s.scale = scale_of(c);
  return s;
}

std::vector<AugmentSpec> augment_specs(const Config& c) {
  const auto names = split_list(c.str("augment.strategy"), ',');
  const auto rates = number_list<double>(c, "augment.rate");
  std::vector<std::uint64_t> seeds = number_list<std::uint64_t>(c, "augment.seed");
  if (seeds.empty()) {
    for (std::size_t k = 0; k < names.size(); ++k) seeds.push_back(derive_seed(c.num<std::uint64_t>("seed"), k));
  }
  if (names.empty() || rates.size() != names.size() || seeds.size() != names.size()) {
    throw ConfigError("augment.strategy, augment.rate and augment.seed must list the same number of entries");
  }
  std::vector<AugmentSpec> out;
  for (std::size_t k = 0; k < names.size(); ++k) {
    AugmentStrategy strategy;
    try {
      strategy = parse_strategy(names[k]);
    } catch (const DomainError& e) {
      throw ConfigError(std::string("config key 'augment.strategy': ") + e.what());
    }
    out.push_back({strategy, rates[k], seeds[k]});
  }
  return out;
}

ModelConfig model_config(const Config& c, const Dataset& ds) {
  ModelConfig m;
  m.d_model = c.num<std::size_t>("model.d_model");
  m.layers = c.num<std::size_t>("model.layers");
  m.heads = c.num<std::size_t>("model.heads");
  m.horizon = c.num<std::size_t>("horizon");
  m.max_hist = c.num<std::size_t>("model.max_hist");
  m.control_layer = c.num<std::size_t>("model.control_layer");
  m.seed = c.seed("model.seed");
  m.vocab = ds.catalog.num_items();
  m.num_users = ds.num_users;
  m.validate();
  return m;
}

TrainConfig train_config(const Config& c) {
  TrainConfig t;
  t.epochs = c.num<std::size_t>("train.epochs");
  t.batch_size = c.num<std::size_t>("train.batch_size");
  t.lr = c.num<double>("train.lr");
  t.grad_clip = c.num<double>("train.grad_clip");
  t.seed = c.seed("train.seed");
  t.checked = c.flag("train.checked");
  t.threads = threads_of(c);
  t.validate();
  return t;
}

EvalConfig eval_config(const Config& c) {
  EvalConfig e;
  if (c.str("eval.points") != "grid") {
    e.points.clear();
    for (const auto& p : split_list(c.str("eval.points"), ';')) e.points.push_back(parse_point(p, "eval.points"));
  }
  if (!c.str("eval.sample_users").empty()) e.sample_users = c.num<std::size_t>("eval.sample_users");
  e.user_seed = c.seed("eval.user_seed");
  e.horizon = c.num<std::size_t>("horizon");
  e.max_hist = c.num<std::size_t>("model.max_hist");
  e.cut = c.num<double>("eval.cut");
  e.exclude_history = c.flag("eval.exclude_history");
  e.threads = threads_of(c);
  e.validate();
  return e;
}

PipelineConfig pipeline_config(const Config& c, const Dataset& ds) {
  PipelineConfig p;
  p.model = model_config(c, ds);
  p.train = train_config(c);
  p.eval = eval_config(c);
  p.augment = augment_specs(c);
  return p;
}

Dataset load_dataset(Run& run, const Config& c, const std::string& key = "in.data") {
  const fs::path dir = c.required(key);
  const auto inter = run.input(dir / "interactions.csv");
  const auto cats = run.input(dir / "categories.csv");
  return ingest_csv(inter.string(), cats.string(), scale_of(c));
}

RatingOracle load_oracle(Run& run, const Config& c) {
  return read_oracle_csv(run.input(c.required("in.oracle")).string(), scale_of(c));
}

void save_dataset(Run& run, const Dataset& ds) {
  write_csv(ds, run.out("interactions.csv").string(), run.out("categories.csv").string());
  run.output(run.out("interactions.csv"));
  run.output(run.out("categories.csv"));
}

json dataset_summary(const Dataset& ds) {
  std::map<std::string, std::size_t> by_origin;
  std::size_t interactions = 0;
  for (const auto& t : ds.trajectories) {
    ++by_origin[std::string(to_string(t.origin))];
    interactions += t.size();
  }
  return {{"users", ds.num_users},
          {"items", ds.catalog.num_items()},
          {"categories", ds.catalog.num_categories()},
          {"trajectories", ds.trajectories.size()},
          {"interactions", interactions},
          {"trajectories_by_origin", by_origin}};
}

std::vector<std::size_t> checkpoint_epochs(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("missing checkpoint directory " + dir.string());
  std::vector<std::size_t> epochs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    std::size_t e = 0;
    char tail = 0;
    if (std::sscanf(name.c_str(), "epoch_%zu.ckp%c", &e, &tail) == 2 && tail == 't' && name == checkpoint_name(e)) {
      epochs.push_back(e);
    }
  }
  std::sort(epochs.begin(), epochs.end());
  if (epochs.empty()) throw IoError("no checkpoints in " + dir.string());
  return epochs;
}

std::vector<std::size_t> select_epochs(const Config& c, const std::vector<std::size_t>& available) {
  const auto& spec = c.str("eval.epochs");
  if (spec == "all") return available;
  if (spec.starts_with("last:")) {
    const auto n = detail::parse_number<std::size_t>(std::string_view(spec).substr(5));
    if (!n || *n == 0) throw ConfigError("config key 'eval.epochs': bad count in '" + spec + "'");
    const auto keep = std::min(*n, available.size());
    return {available.end() - static_cast<std::ptrdiff_t>(keep), available.end()};
  }
  return number_list<std::size_t>(c, "eval.epochs");
}

json stats_json(const EvalReport& report) {
  json per_point = json::array();
  const auto np = report.num_points();
  const auto ne = report.epochs().size();
  for (std::size_t p = 0; p < np; ++p) {
    double r = 0.0, d = 0.0;
    for (std::size_t e = 0; e < ne; ++e) {
      r += report.rows[e * np + p].mean_rating;
      d += report.rows[e * np + p].mean_diversity;
    }
    const auto& pt = report.rows[p].point;
    per_point.push_back({{"o_rate", pt.o_rate},
                         {"o_div", pt.o_div},
                         {"mean_rating", r / static_cast<double>(ne)},
                         {"mean_diversity", d / static_cast<double>(ne)}});
  }
  json j = {{"epochs", report.epochs()}, {"points", per_point}};
  if (ne >= 2 && np >= 3) {
    const auto s = controllability_stats(report);
    j["spearman_rate"] = s.spearman_rate;
    j["spearman_div"] = s.spearman_div;
    j["order_stability"] = s.order_stability;
    j["order_stability_rate"] = s.order_stability_rate;
    j["order_stability_div"] = s.order_stability_div;
    j["degenerate_rate"] = s.degenerate_rate;
    j["degenerate_div"] = s.degenerate_div;
  } else {
    j["controllability"] = "needs at least 2 checkpoints and 3 points";
  }
  return j;
}

void write_text(Run& run, const std::string& name, const std::string& text) {
  std::ofstream(run.out(name), std::ios::binary) << text;
  run.output(run.out(name));
}

// ---------------------------------------------------------------------------
// Commands

void cmd_synth(Run& run, const Config& c) {
  const auto result = synth_dataset(synth_spec(c));
  save_dataset(run, result.dataset);
  write_oracle_csv(result.oracle, run.out("oracle.csv").string(), OracleFormat::kTriplets);
  run.output(run.out("oracle.csv"));
  run.finish(dataset_summary(result.dataset));
}

void cmd_ingest(Run& run, const Config& c) {
  const auto inter = run.input(c.required("in.interactions"));
  const auto cats = run.input(c.required("in.categories"));
  const auto ds = ingest_csv(inter.string(), cats.string(), scale_of(c));
  save_dataset(run, ds);
  run.finish(dataset_summary(ds));
}

void cmd_complete(Run& run, const Config& c) {
  const auto ds = load_dataset(run, c);
  CompletionConfig cc;
  cc.rank = c.num<std::size_t>("complete.rank");
  cc.epochs = c.num<std::size_t>("complete.epochs");
  cc.lr = c.num<double>("complete.lr");
  cc.reg = c.num<double>("complete.reg");
  cc.seed = c.seed("complete.seed");
  const auto completion = complete_matrix(ds, cc);
  write_oracle_csv(completion.oracle, run.out("oracle.csv").string(), OracleFormat::kTriplets);
  run.output(run.out("oracle.csv"));
  std::cout << "training MAE " << completion.train_mae << "\n";
  run.finish({{"train_mae", completion.train_mae}});
}

void cmd_augment(Run& run, const Config& c) {
  const auto full = load_dataset(run, c);
  PipelineConfig p;
  p.eval.cut = c.num<double>("eval.cut");
  p.augment = augment_specs(c);
  const auto horizon = c.num<std::size_t>("horizon");
  // Warnings come from augmenting the holdout alone, as training_dataset does.
  const Dataset base = holdout_prefix(full, p.eval.cut);
  json warnings = json::array();
  for (const auto& spec : p.augment) {
    for (const auto& w : augment_dataset(base, spec, horizon).warnings) {
      std::cerr << "warning: " << w << "\n";
      warnings.push_back(w);
    }
  }
  const auto ds = training_dataset(full, p, horizon);
  save_dataset(run, ds);
  auto summary = dataset_summary(ds);
  summary["warnings"] = warnings;
  run.finish(summary);
}

void cmd_train(Run& run, const Config& c) {
  const auto ds = load_dataset(run, c);
  const auto mc = model_config(c, ds);
  auto tc = train_config(c);
  tc.checkpoint_dir = run.out("checkpoints").string();
  Model<double> model(mc);
  const auto windows = make_windows(ds, mc.horizon, mc.max_hist);
  std::cerr << windows.size() << " training windows, " << Model<double>::parameter_count(mc) << " parameters\n";
  const auto result = train(model, windows, tc, [](std::size_t epoch, const Model<double>&, double loss) {
    std::cerr << "epoch " << epoch << " mean loss " << loss << "\n";
  });
  {
    std::ofstream out(run.out("loss.csv"), std::ios::binary);
    write_loss_curve(result.loss_curve, out);
  }
  run.output(run.out("loss.csv"));
  for (const auto& ckpt : result.checkpoints) run.output(ckpt);
  run.finish({{"windows", windows.size()}, {"final_loss", result.loss_curve.back()}});
}

void cmd_generate(Run& run, const Config& c) {
  const auto ds = load_dataset(run, c);
  std::optional<RatingOracle> oracle;
  if (!c.str("in.oracle").empty()) oracle = load_oracle(run, c);
  const auto model = load_checkpoint<double>(run.input(c.required("in.checkpoint")).string());

  GenRequest base;
  base.point = parse_point(c.str("generate.point"), "generate.point");
  base.horizon = c.num<std::size_t>("horizon");
  base.exclude_history = c.flag("eval.exclude_history");
  const auto& mode = c.str("generate.mode");
  if (mode == "greedy") {
    base.mode = DecodeMode::kGreedy;
  } else if (mode.starts_with("sample:")) {
    const auto t = detail::parse_number<double>(std::string_view(mode).substr(7));
    if (!t || !(*t > 0.0)) throw ConfigError("config key 'generate.mode': bad temperature in '" + mode + "'");
    base.mode = DecodeMode::kSample;
    base.temperature = *t;
  } else {
    throw ConfigError("config key 'generate.mode': expected 'greedy' or 'sample:T', got '" + mode + "'");
  }
  const auto seed = c.seed("generate.seed");

  EvalConfig ec;
  ec.cut = c.num<double>("eval.cut");
  ec.max_hist = model.config().max_hist;
  auto users = eval_users(ds, ec);
  if (c.str("generate.user") != "all") {
    const auto internal = ds.user_ids.internal(c.num<std::int64_t>("generate.user"));
    std::erase_if(users, [&](const EvalUser& u) { return u.user != internal; });
    if (users.empty()) throw LookupError("user " + c.str("generate.user") + " has no original trajectory");
  }
  std::ofstream out(run.out("generations.jsonl"), std::ios::binary);
  for (const auto& u : users) {
    GenRequest req = base;
    req.user = u.user;
    req.history = u.history;
    req.seed = derive_seed(seed, u.user);
    const auto result = generate(model, req, oracle ? &*oracle : nullptr, &ds.catalog);
    json items = json::array();
    for (ItemId i : result.items) items.push_back(ds.item_ids.to_external(i));
    json line = {{"user", ds.user_ids.to_external(u.user)},
                 {"point", {req.point.o_rate, req.point.o_div}},
                 {"items", items},
                 {"rating", nullptr},
                 {"diversity", diversity(result.items, ds.catalog)}};
    if (result.realized) line["rating"] = result.realized->first;
    out << line.dump() << "\n";
    std::cout << line.dump() << "\n";
  }
  out.close();
  run.output(run.out("generations.jsonl"));
  run.finish({{"users", users.size()}});
}

void cmd_evaluate(Run& run, const Config& c) {
  const auto ds = load_dataset(run, c);
  const auto oracle = load_oracle(run, c);
  const fs::path dir = c.required("in.checkpoints");
  const auto epochs = select_epochs(c, checkpoint_epochs(dir));
  for (auto e : epochs) run.input(dir / checkpoint_name(e));
  auto ec = eval_config(c);
  // Horizon and history length follow the checkpoints.
  const auto first = load_checkpoint<double>((dir / checkpoint_name(epochs.front())).string());
  ec.horizon = first.config().horizon;
  ec.max_hist = first.config().max_hist;
  const auto report = evaluate<double>(dir.string(), epochs, oracle, ds, ec);
  {
    std::ofstream out(run.out("report.csv"), std::ios::binary);
    write_report_csv(report, out);
  }
  run.output(run.out("report.csv"));
  const auto stats = stats_json(report);
  write_text(run, "stats.json", stats.dump(2) + "\n");
  std::cout << stats.dump(2) << "\n";
  run.finish({{"rows", report.rows.size()}});
}

void cmd_ablate(Run& run, const Config& c) {
  const auto ds = load_dataset(run, c);
  const auto oracle = load_oracle(run, c);
  const auto p = pipeline_config(c, ds);
  const auto& axis_name = c.str("ablate.axis");
  AblationAxis axis;
  if (axis_name == "layers") axis = AblationAxis::kLayers;
  else if (axis_name == "horizon") axis = AblationAxis::kHorizon;
  else throw ConfigError("config key 'ablate.axis': expected layers or horizon, got '" + axis_name + "'");
  const auto values = number_list<std::size_t>(c, "ablate.values");
  if (values.empty()) throw ConfigError("config key 'ablate.values' is empty");
  const auto rows = ablation_sweep<double>(ds, oracle, axis, values, p, [](const std::string& m) {
    std::cerr << m << "\n";
  });
  std::ostringstream csv, table;
  write_ablation_csv(rows, axis, csv);
  write_ablation_table(rows, axis, table);
  write_text(run, "ablation_" + axis_name + ".csv", csv.str());
  write_text(run, "ablation_" + axis_name + ".md", table.str());
  std::cout << table.str();
  run.finish({{"values", values}});
}

void cmd_report(Run& run, const Config& c) {
  std::ifstream in(run.input(c.required("in.report")), std::ios::binary);
  auto report = read_report_csv(in);
  const auto keep = select_epochs(c, report.epochs());
  EvalReport selected;
  for (const auto& row : report.rows) {
    if (std::find(keep.begin(), keep.end(), row.epoch) != keep.end()) selected.rows.push_back(row);
  }
  if (selected.rows.empty()) throw DomainError("report: no rows for the selected epochs");
  compute_orderings(selected);
  const auto stats = stats_json(selected);
  write_text(run, "stats.json", stats.dump(2) + "\n");

  std::ostringstream md;
  md << "| o_rate | o_div | rating | diversity |\n|---|---|---|---|\n";
  char buf[128];
  for (const auto& p : stats["points"]) {
    std::snprintf(buf, sizeof(buf), "| %.1f | %.1f | %.3f | %.3f |\n", p["o_rate"].get<double>(),
                  p["o_div"].get<double>(), p["mean_rating"].get<double>(), p["mean_diversity"].get<double>());
    md << buf;
  }
  if (stats.contains("spearman_rate")) {
    std::snprintf(buf, sizeof(buf), "\nspearman rate %.3f, spearman diversity %.3f, order stability %.3f\n",
                  stats["spearman_rate"].get<double>(), stats["spearman_div"].get<double>(),
                  stats["order_stability"].get<double>());
    md << buf;
  }
  write_text(run, "summary.md", md.str());
  std::cout << md.str();
  run.finish({{"epochs", keep}});
}

// ---------------------------------------------------------------------------

struct Command {
  const char* name;
  const char* help;
  void (*run)(Run&, const Config&);
  // (flag, config key, help)
  std::vector<std::tuple<const char*, const char*, const char*>> flags;
};

const std::vector<Command>& commands() {
  static const std::vector<Command> all = {
      {"synth", "Generate a synthetic dataset and its rating oracle", cmd_synth,
       {{"--seed", "synth.seed", "data seed"},
        {"--users", "synth.users", "number of users"},
        {"--items", "synth.items", "number of items"},
        {"--categories", "synth.categories", "number of categories"},
        {"--traj-len", "synth.traj_len", "interactions per user"},
        {"--rank", "synth.rank", "latent rank"}}},
      {"ingest", "Validate and canonicalize an interaction log", cmd_ingest,
       {{"--interactions", "in.interactions", "user,item,rating,timestamp CSV"},
        {"--categories", "in.categories", "item,categories CSV"}}},
      {"complete", "Fit a rating oracle by matrix factorization", cmd_complete,
       {{"--data", "in.data", "dataset directory"},
        {"--rank", "complete.rank", "factorization rank"},
        {"--seed", "complete.seed", "seed"}}},
      {"augment", "Hold out each trajectory's tail and add to-go trajectories", cmd_augment,
       {{"--data", "in.data", "dataset directory"},
        {"--strategy", "augment.strategy", "rating|diversity|random (comma list)"},
        {"--rate", "augment.rate", "synthetic per original trajectory (comma list)"},
        {"--seed", "augment.seed", "seed (comma list)"},
        {"--horizon", "horizon", "to-go length H"},
        {"--cut", "eval.cut", "history fraction kept for training"}}},
      {"train", "Train a model and checkpoint every epoch", cmd_train,
       {{"--data", "in.data", "training dataset directory"},
        {"--epochs", "train.epochs", "epochs"},
        {"--lr", "train.lr", "learning rate"},
        {"--batch-size", "train.batch_size", "windows per batch"},
        {"--seed", "train.seed", "shuffle seed"},
        {"--horizon", "horizon", "window length H"},
        {"--layers", "model.layers", "transformer layers"}}},
      {"generate", "Generate item sequences for an objective point", cmd_generate,
       {{"--data", "in.data", "dataset directory (histories, catalog)"},
        {"--oracle", "in.oracle", "rating oracle CSV (optional)"},
        {"--checkpoint", "in.checkpoint", "checkpoint file"},
        {"--user", "generate.user", "external user id or 'all'"},
        {"--point", "generate.point", "o_rate,o_div"},
        {"--horizon", "horizon", "sequence length"},
        {"--mode", "generate.mode", "greedy or sample:T"},
        {"--seed", "generate.seed", "sampling seed"}}},
      {"evaluate", "Score checkpoints over the objective grid", cmd_evaluate,
       {{"--data", "in.data", "full dataset directory"},
        {"--oracle", "in.oracle", "rating oracle CSV"},
        {"--checkpoints", "in.checkpoints", "checkpoint directory"},
        {"--epochs", "eval.epochs", "all, last:N or comma list"}}},
      {"ablate", "Sweep layers or horizon and tabulate results", cmd_ablate,
       {{"--data", "in.data", "full dataset directory"},
        {"--oracle", "in.oracle", "rating oracle CSV"},
        {"--axis", "ablate.axis", "layers or horizon"},
        {"--values", "ablate.values", "comma list of values"}}},
      {"report", "Summarize an evaluation report", cmd_report,
       {{"--report", "in.report", "report CSV"},
        {"--epochs", "eval.epochs", "all, last:N or comma list"}}},
  };
  return all;
}

std::string key_reference() {
  std::ostringstream os;
  os << "Config keys (file lines 'key = value', '#' comments):\n";
  for (const auto& k : known_keys()) os << "  " << k.key << " [" << k.fallback << "]  " << k.help << "\n";
  return os.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MocDT: multi-objective controllable sequence recommendation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  app.footer(key_reference());

  std::string config_file, out_dir;
  std::vector<std::string> sets;
  std::map<std::string, std::string> overrides;
  bool force = false;
  const Command* chosen = nullptr;

  for (const auto& cmd : commands()) {
    auto* sub = app.add_subcommand(cmd.name, cmd.help);
    sub->add_option("--out", out_dir, "run directory for outputs, config echo and manifest")->required();
    sub->add_option("--config", config_file, "key-value config file");
    sub->add_option("--set", sets, "override a config key: key=value (repeatable)");
    sub->add_option_function<std::string>(
        "--threads", [&](const std::string& v) { overrides["threads"] = v; }, "worker cap");
    sub->add_flag("--force", force, "reuse a non-empty run directory");
    for (const auto& [flag, key, help] : cmd.flags) {
      sub->add_option_function<std::string>(
          flag, [&overrides, key](const std::string& v) { overrides[key] = v; }, help);
    }
    sub->callback([&chosen, &cmd] { chosen = &cmd; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    Config cfg;
    if (!config_file.empty()) cfg.load(config_file);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      cfg.set(Config::trim(s.substr(0, eq)), Config::trim(s.substr(eq + 1)));
    }
    for (const auto& [key, value] : overrides) cfg.set(key, value);
    Run run(chosen->name, cfg, out_dir, force);
    chosen->run(run, cfg);
    std::cerr << chosen->name << ": wrote " << run.dir().string() << "\n";
    return kOk;
  } catch (const Error& e) {
    std::cerr << "mocdt: error[" << e.category() << "]: " << e.what() << "\n";
    return exit_code_for(e.category());
  } catch (const std::exception& e) {
    std::cerr << "mocdt: error[internal]: " << e.what() << "\n";
    return kFailure;
  }
}
