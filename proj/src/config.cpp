#include "zsil/config.hpp"

#include "zsil/format.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace zsil {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path);
  KeyValueConfig kv;
  kv.source_ = path;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(path + ":" + std::to_string(lineno) +
                                  ": expected key=value, got '" + t + "'");
    const std::string key = trim(t.substr(0, eq));
    if (key.empty())
      throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": empty key");
    kv.set(key, trim(t.substr(eq + 1)), lineno);
  }
  return kv;
}

void KeyValueConfig::set(const std::string& key, const std::string& value, int line) {
  values_[key] = value;
  lines_[key] = line;
}

void KeyValueConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw std::invalid_argument("override must look like key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)), 0);
}

int KeyValueConfig::line_of(const std::string& key) const {
  auto it = lines_.find(key);
  return it == lines_.end() ? 0 : it->second;
}

void KeyValueConfig::fail(const std::string& key, const std::string& message) const {
  std::string where = source_;
  if (const int line = line_of(key)) where += ":" + std::to_string(line);
  throw std::invalid_argument(where + ": field '" + key + "': " + message);
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    fail(key, "expected a real number, got '" + it->second + "'");
  }
}

long KeyValueConfig::get_long(const std::string& key, long fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t pos = 0;
    const long v = std::stol(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    fail(key, "expected an integer, got '" + it->second + "'");
  }
}

std::uint64_t KeyValueConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t pos = 0;
    const std::uint64_t v = std::stoull(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    fail(key, "expected a nonnegative integer, got '" + it->second + "'");
  }
}

std::string KeyValueConfig::resolved() const {
  std::ostringstream os;
  for (const auto& [key, value] : values_) os << key << '=' << value << '\n';
  return os.str();
}

std::string method_name(Method m) {
  switch (m) {
    case Method::kZsil: return "zsil";
    case Method::kNaive: return "naive";
    case Method::kJoint: return "joint";
    case Method::kFsil: return "fsil";
  }
  return "?";
}

std::string setting_name(Setting s) {
  return s == Setting::kClassIL ? "class_il" : "task_il";
}

std::vector<BetaShare> parse_beta_schedule(const std::string& text) {
  std::vector<BetaShare> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    const auto colon = tok.find(':');
    if (colon == std::string::npos)
      throw std::invalid_argument("beta schedule entries must look like beta:proportion, got '" +
                                  tok + "'");
    out.push_back({std::stod(tok.substr(0, colon)), std::stod(tok.substr(colon + 1))});
  }
  if (out.empty()) throw std::invalid_argument("empty beta schedule");
  return out;
}

std::string beta_schedule_string(const std::vector<BetaShare>& schedule) {
  std::ostringstream os;
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    if (i) os << ',';
    os << format_g17(schedule[i].beta) << ':' << format_g17(schedule[i].proportion);
  }
  return os.str();
}

namespace {

const std::set<std::string> kKnownKeys = {
    "dataset.kind",       "dataset.path",
    "dataset.tasks",      "dataset.classes_per_task",
    "dataset.samples_per_class", "dataset.image_shape",
    "dataset.separation", "setting",
    "method",             "seed",
    "learner.backbone",   "train.lambda",
    "train.lambda1",      "train.lambda2",
    "train.epochs",       "train.batch_replay",
    "train.batch_new",    "train.lr",
    "recovery.transfer_size", "recovery.eta",
    "recovery.tau",       "recovery.beta_schedule",
    "recovery.max_steps", "recovery.lr",
    "recovery.max_resample", "memory.capacity",
};

std::vector<int> parse_shape(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, 'x'))
    if (!tok.empty()) out.push_back(std::stoi(tok));
  return out;
}

[[noreturn]] void field_error(const KeyValueConfig& kv, const std::string& key,
                              const std::string& message) {
  std::string where = kv.source();
  if (const int line = kv.line_of(key)) where += ":" + std::to_string(line);
  throw std::invalid_argument(where + ": field '" + key + "': " + message);
}

}  // namespace

ExperimentConfig ExperimentConfig::from_kv(const KeyValueConfig& kv) {
  for (const auto& [key, value] : kv.entries())
    if (!kKnownKeys.count(key)) field_error(kv, key, "unknown key");

  ExperimentConfig cfg;
  cfg.dataset.kind = kv.get_string("dataset.kind", cfg.dataset.kind);
  if (cfg.dataset.kind != "synthetic" && cfg.dataset.kind != "cifar10")
    field_error(kv, "dataset.kind", "must be synthetic or cifar10");
  cfg.dataset.path = kv.get_string("dataset.path", cfg.dataset.path);
  cfg.dataset.tasks = static_cast<int>(kv.get_long("dataset.tasks", cfg.dataset.tasks));
  cfg.dataset.classes_per_task =
      static_cast<int>(kv.get_long("dataset.classes_per_task", cfg.dataset.classes_per_task));
  cfg.dataset.samples_per_class =
      static_cast<int>(kv.get_long("dataset.samples_per_class", cfg.dataset.samples_per_class));
  if (kv.has("dataset.image_shape")) {
    cfg.dataset.image_shape = parse_shape(kv.get_string("dataset.image_shape", ""));
    if (cfg.dataset.image_shape.size() != 3)
      field_error(kv, "dataset.image_shape", "expected CxHxW");
  }
  cfg.dataset.separation = kv.get_double("dataset.separation", cfg.dataset.separation);

  const std::string setting = kv.get_string("setting", "class_il");
  if (setting == "class_il")
    cfg.setting = Setting::kClassIL;
  else if (setting == "task_il")
    cfg.setting = Setting::kTaskIL;
  else
    field_error(kv, "setting", "must be class_il or task_il");

  const std::string method = kv.get_string("method", "zsil");
  if (method == "zsil")
    cfg.method = Method::kZsil;
  else if (method == "naive")
    cfg.method = Method::kNaive;
  else if (method == "joint")
    cfg.method = Method::kJoint;
  else if (method == "fsil")
    cfg.method = Method::kFsil;
  else
    field_error(kv, "method", "must be one of zsil, naive, joint, fsil");

  cfg.seed = kv.get_u64("seed", cfg.seed);
  cfg.backbone = kv.get_string("learner.backbone", cfg.backbone);
  try {
    parse_backbone(cfg.backbone);
  } catch (const std::exception& e) {
    field_error(kv, "learner.backbone", e.what());
  }

  cfg.train.lambda = kv.get_double("train.lambda", cfg.train.lambda);
  cfg.train.lambda1 = kv.get_double("train.lambda1", cfg.train.lambda1);
  cfg.train.lambda2 = kv.get_double("train.lambda2", cfg.train.lambda2);
  cfg.train.epochs = static_cast<int>(kv.get_long("train.epochs", cfg.train.epochs));
  cfg.train.batch_replay = static_cast<int>(kv.get_long("train.batch_replay", cfg.train.batch_replay));
  cfg.train.batch_new = static_cast<int>(kv.get_long("train.batch_new", cfg.train.batch_new));
  cfg.train.lr = kv.get_double("train.lr", cfg.train.lr);
  cfg.train.seed = cfg.seed;
  try {
    cfg.train.validate();
  } catch (const std::exception& e) {
    field_error(kv, "train.lr", e.what());
  }

  cfg.recovery.transfer_size = kv.get_long("recovery.transfer_size", cfg.recovery.transfer_size);
  cfg.recovery.eta = kv.get_double("recovery.eta", cfg.recovery.eta);
  cfg.recovery.tau = kv.get_double("recovery.tau", cfg.recovery.tau);
  if (kv.has("recovery.beta_schedule")) {
    try {
      cfg.recovery.beta_schedule =
          parse_beta_schedule(kv.get_string("recovery.beta_schedule", ""));
    } catch (const std::exception& e) {
      field_error(kv, "recovery.beta_schedule", e.what());
    }
  }
  cfg.recovery.inversion.max_steps =
      static_cast<int>(kv.get_long("recovery.max_steps", cfg.recovery.inversion.max_steps));
  cfg.recovery.inversion.lr = kv.get_double("recovery.lr", cfg.recovery.inversion.lr);
  cfg.recovery.max_resample =
      static_cast<int>(kv.get_long("recovery.max_resample", cfg.recovery.max_resample));
  cfg.recovery.seed = cfg.seed;
  try {
    cfg.recovery.validate();
  } catch (const std::exception& e) {
    field_error(kv, "recovery.eta", e.what());
  }

  cfg.memory_capacity = static_cast<int>(kv.get_long("memory.capacity", cfg.memory_capacity));
  if (cfg.method == Method::kFsil && cfg.memory_capacity < 1)
    field_error(kv, "memory.capacity", "fsil requires a positive memory capacity");

  if (cfg.dataset.kind == "cifar10" && cfg.dataset.path.empty())
    field_error(kv, "dataset.path", "cifar10 requires the binary batch directory");
  if (cfg.dataset.kind == "synthetic") {
    if (cfg.dataset.tasks < 1 || cfg.dataset.classes_per_task < 1 ||
        cfg.dataset.samples_per_class < 1)
      field_error(kv, "dataset.tasks", "synthetic stream counts must be >= 1");
    if (!(cfg.dataset.separation > 0.0))
      field_error(kv, "dataset.separation", "must be positive");
  }
  return cfg;
}

KeyValueConfig ExperimentConfig::to_kv() const {
  KeyValueConfig kv;
  kv.set("dataset.kind", dataset.kind);
  if (!dataset.path.empty()) kv.set("dataset.path", dataset.path);
  kv.set("dataset.tasks", std::to_string(dataset.tasks));
  kv.set("dataset.classes_per_task", std::to_string(dataset.classes_per_task));
  kv.set("dataset.samples_per_class", std::to_string(dataset.samples_per_class));
  kv.set("dataset.image_shape", std::to_string(dataset.image_shape[0]) + "x" +
                                    std::to_string(dataset.image_shape[1]) + "x" +
                                    std::to_string(dataset.image_shape[2]));
  kv.set("dataset.separation", format_g17(dataset.separation));
  kv.set("setting", setting_name(setting));
  kv.set("method", method_name(method));
  kv.set("seed", std::to_string(seed));
  kv.set("learner.backbone", backbone);
  kv.set("train.lambda", format_g17(train.lambda));
  kv.set("train.lambda1", format_g17(train.lambda1));
  kv.set("train.lambda2", format_g17(train.lambda2));
  kv.set("train.epochs", std::to_string(train.epochs));
  kv.set("train.batch_replay", std::to_string(train.batch_replay));
  kv.set("train.batch_new", std::to_string(train.batch_new));
  kv.set("train.lr", format_g17(train.lr));
  kv.set("recovery.transfer_size", std::to_string(recovery.transfer_size));
  kv.set("recovery.eta", format_g17(recovery.eta));
  kv.set("recovery.tau", format_g17(recovery.tau));
  kv.set("recovery.beta_schedule", beta_schedule_string(recovery.beta_schedule));
  kv.set("recovery.max_steps", std::to_string(recovery.inversion.max_steps));
  kv.set("recovery.lr", format_g17(recovery.inversion.lr));
  kv.set("recovery.max_resample", std::to_string(recovery.max_resample));
  kv.set("memory.capacity", std::to_string(memory_capacity));
  return kv;
}

TaskSequence ExperimentConfig::build_stream() const {
  if (dataset.kind == "cifar10") {
    auto [train_set, test_set] = load_cifar10(dataset.path);
    return split_tasks(train_set, test_set, dataset.classes_per_task, seed);
  }
  return make_synthetic_stream(dataset.tasks, dataset.classes_per_task, dataset.samples_per_class,
                               dataset.image_shape, dataset.separation, seed);
}

LearnerConfig ExperimentConfig::learner_config(const TaskSequence& stream) const {
  LearnerConfig lc;
  lc.input_shape = stream.image_shape;
  lc.backbone = parse_backbone(backbone);
  lc.seed = seed;
  if (setting == Setting::kTaskIL) {
    std::vector<int> widths;
    for (const Task& t : stream.tasks) widths.push_back(static_cast<int>(t.classes.size()));
    lc.heads = HeadConfig::multi(std::move(widths));
  } else {
    lc.heads = HeadConfig::single(stream.total_classes);
  }
  return lc;
}

std::string ExperimentConfig::run_id() const {
  return method_name(method) + "_" + setting_name(setting) + "_s" + std::to_string(seed);
}

}  // namespace zsil
