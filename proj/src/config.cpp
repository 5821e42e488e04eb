#include "lpres/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace lpres {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

long long to_integer(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
}

int to_int(const std::string& key, const std::string& v) { return static_cast<int>(to_integer(key, v)); }

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  const long long x = to_integer(key, v);
  if (x < 0) throw ConfigError(key + ": expected a non-negative integer");
  return static_cast<std::uint64_t>(x);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

template <typename Enum>
Enum lookup(const std::string& key, const std::string& v, const std::map<std::string, Enum>& table) {
  auto it = table.find(v);
  if (it != table.end()) return it->second;
  std::string options;
  for (const auto& [name, _] : table) options += (options.empty() ? "" : "|") + name;
  throw ConfigError(key + ": '" + v + "' is not one of " + options);
}

template <typename Enum>
std::string name_of(Enum e, const std::map<std::string, Enum>& table) {
  for (const auto& [name, value] : table) {
    if (value == e) return name;
  }
  return "?";
}

const std::map<std::string, RunMode> kModes = {
    {"serial", RunMode::serial},
    {"parallel_penalty", RunMode::parallel_penalty},
    {"parallel_al", RunMode::parallel_al},
    {"parallel_penalty_auxnet", RunMode::parallel_penalty_auxnet},
    {"parallel_penalty_reauxnet", RunMode::parallel_penalty_reauxnet},
};
const std::map<std::string, LrSchedule> kSchedules = {
    {"cosine", LrSchedule::cosine}, {"constant", LrSchedule::constant}, {"step", LrSchedule::step}};
const std::map<std::string, PsiKind> kPsi = {{"l2_squared", PsiKind::l2_squared}, {"l1", PsiKind::l1}};
const std::map<std::string, DatasetKind> kData = {
    {"blobs", DatasetKind::blobs}, {"spirals", DatasetKind::spirals}, {"rings", DatasetKind::rings},
    {"csv", DatasetKind::csv}};
const std::map<std::string, AugmentKind> kAugment = {{"none", AugmentKind::none},
                                                     {"gaussian_jitter", AugmentKind::gaussian_jitter},
                                                     {"random_shift", AugmentKind::random_shift},
                                                     {"flip_sign", AugmentKind::flip_sign}};

RateRule parse_rate(const std::string& key, const std::string& v) {
  if (v == "tied") return {RateRule::Kind::tied, 0.0};
  if (v == "exact") return {RateRule::Kind::exact, 0.0};
  if (v == "balanced") return {RateRule::Kind::balanced, 0.0};
  return {RateRule::Kind::fixed, to_double(key, v)};
}

std::string fmt(double v) {
  char buf[32];
  const auto end = std::to_chars(buf, buf + sizeof buf, v).ptr;
  return std::string(buf, end);
}

std::string format_rate(const RateRule& r) {
  switch (r.kind) {
    case RateRule::Kind::tied: return "tied";
    case RateRule::Kind::exact: return "exact";
    case RateRule::Kind::balanced: return "balanced";
    case RateRule::Kind::fixed: break;
  }
  return fmt(r.value);
}

}  // namespace

std::string to_string(RunMode mode) { return name_of(mode, kModes); }
RunMode parse_mode(const std::string& text) { return lookup("mode", text, kModes); }

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = {
      "mode",
      "model.depth", "model.width", "model.hidden", "model.residual_scale",
      "parallel.stages",
      "penalty.beta", "penalty.beta_gamma", "penalty.beta_every", "penalty.psi",
      "optim.lr", "optim.schedule", "optim.milestones", "optim.step_factor", "optim.momentum",
      "optim.lambda_lr", "optim.kappa_lr",
      "lambda.noise",
      "auxnet.depth", "auxnet.hidden", "auxnet.capacity", "auxnet.lr", "auxnet.distill_steps",
      "auxnet.shared_prefix",
      "data.kind", "data.samples", "data.classes", "data.noise", "data.seed", "data.csv", "data.train_fraction",
      "augment.kind", "augment.magnitude", "augment.ratio", "augment.seed",
      "train.epochs", "train.batch_size", "train.seed", "train.threads",
      "output.dir", "output.checkpoint",
      "speedup.reference",
  };
  return k;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const std::string& v = value;
  if (key == "mode") mode = parse_mode(v);
  else if (key == "model.depth") model.depth = to_int(key, v);
  else if (key == "model.width") model.width = to_int(key, v);
  else if (key == "model.hidden") model.hidden = to_int(key, v);
  else if (key == "model.residual_scale") model.residual_scale = to_double(key, v);
  else if (key == "parallel.stages") parallel.stages = to_int(key, v);
  else if (key == "penalty.beta") parallel.beta = to_double(key, v);
  else if (key == "penalty.beta_gamma") parallel.beta_gamma = to_double(key, v);
  else if (key == "penalty.beta_every") parallel.beta_every = to_int(key, v);
  else if (key == "penalty.psi") parallel.psi = lookup(key, v, kPsi);
  else if (key == "optim.lr") sgd.eta0 = to_double(key, v);
  else if (key == "optim.schedule") sgd.schedule = lookup(key, v, kSchedules);
  else if (key == "optim.milestones") {
    sgd.milestones.clear();
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (!item.empty()) sgd.milestones.push_back(to_int(key, item));
    }
  } else if (key == "optim.step_factor") sgd.step_factor = to_double(key, v);
  else if (key == "optim.momentum") sgd.momentum = to_double(key, v);
  else if (key == "optim.lambda_lr") parallel.lambda_rate = parse_rate(key, v);
  else if (key == "optim.kappa_lr") parallel.kappa_rate = parse_rate(key, v);
  else if (key == "lambda.noise") parallel.noise = to_double(key, v);
  else if (key == "auxnet.depth") parallel.aux.depth = to_int(key, v);
  else if (key == "auxnet.hidden") parallel.aux.hidden = to_int(key, v);
  else if (key == "auxnet.capacity") parallel.aux.max_capacity_ratio = to_double(key, v);
  else if (key == "auxnet.lr") {
    if (v == "tied") parallel.aux_lr.reset();
    else parallel.aux_lr = to_double(key, v);
  } else if (key == "auxnet.distill_steps") parallel.distill_steps = to_int(key, v);
  else if (key == "auxnet.shared_prefix") parallel.reaux_shared_prefix = to_bool(key, v);
  else if (key == "data.kind") data.kind = lookup(key, v, kData);
  else if (key == "data.samples") data.samples = to_int(key, v);
  else if (key == "data.classes") data.classes = to_int(key, v);
  else if (key == "data.noise") data.noise = to_double(key, v);
  else if (key == "data.seed") data.seed = to_u64(key, v);
  else if (key == "data.csv") data.csv_path = v;
  else if (key == "data.train_fraction") train_fraction = to_double(key, v);
  else if (key == "augment.kind") augment.kind = lookup(key, v, kAugment);
  else if (key == "augment.magnitude") augment.magnitude = to_double(key, v);
  else if (key == "augment.ratio") {
    if (v == "unbounded") augment.ratio.reset();
    else augment.ratio = to_int(key, v);
  } else if (key == "augment.seed") augment.seed = to_u64(key, v);
  else if (key == "train.epochs") sgd.epochs = to_int(key, v);
  else if (key == "train.batch_size") sgd.batch_size = to_int(key, v);
  else if (key == "train.seed") seed = to_u64(key, v);
  else if (key == "train.threads") parallel.workers = to_int(key, v);
  else if (key == "output.dir") output_dir = v;
  else if (key == "output.checkpoint") write_checkpoint = to_bool(key, v);
  else if (key == "speedup.reference") {
    if (v.empty() || v == "none") speedup_reference.reset();
    else speedup_reference = v;
  } else throw ConfigError("unknown key '" + key + "'");
}

RunConfig RunConfig::parse(std::istream& in, const std::string& source) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(number) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      cfg.set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return cfg;
}

RunConfig RunConfig::parse_string(const std::string& text) {
  std::istringstream in(text);
  return parse(in);
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse(in, path.string());
}

void RunConfig::apply_environment() {
  if (const char* dir = std::getenv("LPRES_OUTPUT_DIR"); dir != nullptr && *dir != '\0') output_dir = dir;
  if (const char* threads = std::getenv("LPRES_THREADS"); threads != nullptr && *threads != '\0') {
    parallel.workers = to_int("LPRES_THREADS", threads);
  }
}

void RunConfig::validate() const {
  if (model.depth < 1) throw ConfigError("model.depth must be >= 1");
  if (model.width < 1 || model.hidden < 1) throw ConfigError("model.width and model.hidden must be >= 1");
  if (!(model.residual_scale > 0.0)) throw ConfigError("model.residual_scale must be > 0");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("data.train_fraction must be in (0, 1)");
  if (data.kind == DatasetKind::csv && data.csv_path.empty()) throw ConfigError("data.kind = csv needs data.csv");
  if (data.kind != DatasetKind::csv && (data.classes < 2 || data.samples < data.classes)) {
    throw ConfigError("data.samples >= data.classes >= 2 required");
  }
  try {
    sgd.validate();
    augment.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (parallel.workers < 1) throw ConfigError("train.threads must be >= 1");
  if (!parallel_mode()) return;
  if (parallel.stages > model.depth) {
    throw ConfigError("parallel.stages (" + std::to_string(parallel.stages) + ") exceeds model.depth (" +
                      std::to_string(model.depth) + ")");
  }
  ParallelConfig p = parallel;
  p.relaxation = mode == RunMode::parallel_al ? Relaxation::augmented_lagrangian : Relaxation::penalty;
  p.source = mode == RunMode::parallel_penalty_auxnet     ? LambdaSource::auxnet
             : mode == RunMode::parallel_penalty_reauxnet ? LambdaSource::reauxnet
                                                          : LambdaSource::persistent;
  p.validate();
}

std::string RunConfig::to_text() const {
  std::ostringstream os;
  auto kv = [&](const std::string& k, const std::string& v) { os << k << " = " << v << '\n'; };
  kv("mode", to_string(mode));
  kv("model.depth", std::to_string(model.depth));
  kv("model.width", std::to_string(model.width));
  kv("model.hidden", std::to_string(model.hidden));
  kv("model.residual_scale", fmt(model.residual_scale));
  kv("parallel.stages", std::to_string(parallel.stages));
  kv("penalty.beta", fmt(parallel.beta));
  kv("penalty.beta_gamma", fmt(parallel.beta_gamma));
  kv("penalty.beta_every", std::to_string(parallel.beta_every));
  kv("penalty.psi", name_of(parallel.psi, kPsi));
  kv("optim.lr", fmt(sgd.eta0));
  kv("optim.schedule", name_of(sgd.schedule, kSchedules));
  std::string milestones;
  for (int m : sgd.milestones) milestones += (milestones.empty() ? "" : ",") + std::to_string(m);
  kv("optim.milestones", milestones);
  kv("optim.step_factor", fmt(sgd.step_factor));
  kv("optim.momentum", fmt(sgd.momentum));
  kv("optim.lambda_lr", format_rate(parallel.lambda_rate));
  kv("optim.kappa_lr", format_rate(parallel.kappa_rate));
  kv("lambda.noise", fmt(parallel.noise));
  kv("auxnet.depth", std::to_string(parallel.aux.depth));
  kv("auxnet.hidden", std::to_string(parallel.aux.hidden));
  kv("auxnet.capacity", fmt(parallel.aux.max_capacity_ratio));
  kv("auxnet.lr", parallel.aux_lr ? fmt(*parallel.aux_lr) : "tied");
  kv("auxnet.distill_steps", std::to_string(parallel.distill_steps));
  kv("auxnet.shared_prefix", parallel.reaux_shared_prefix ? "true" : "false");
  kv("data.kind", name_of(data.kind, kData));
  kv("data.samples", std::to_string(data.samples));
  kv("data.classes", std::to_string(data.classes));
  kv("data.noise", fmt(data.noise));
  kv("data.seed", std::to_string(data.seed));
  kv("data.csv", data.csv_path.string());
  kv("data.train_fraction", fmt(train_fraction));
  kv("augment.kind", name_of(augment.kind, kAugment));
  kv("augment.magnitude", fmt(augment.magnitude));
  kv("augment.ratio", augment.ratio ? std::to_string(*augment.ratio) : "unbounded");
  kv("augment.seed", std::to_string(augment.seed));
  kv("train.epochs", std::to_string(sgd.epochs));
  kv("train.batch_size", std::to_string(sgd.batch_size));
  kv("train.seed", std::to_string(seed));
  kv("train.threads", std::to_string(parallel.workers));
  kv("output.dir", output_dir.string());
  kv("output.checkpoint", write_checkpoint ? "true" : "false");
  kv("speedup.reference", speedup_reference ? speedup_reference->string() : "none");
  return os.str();
}

}  // namespace lpres
