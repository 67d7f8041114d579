#include "transtailor/cli/config.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>

#include "transtailor/data/synthetic.hpp"

namespace transtailor::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Method method) {
  switch (method) {
    case Method::transtailor: return "transtailor";
    case Method::ft: return "ft";
    case Method::ft_full: return "ft-full";
    case Method::l1: return "l1";
    case Method::source_taylor: return "source-taylor";
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  for (auto m : {Method::transtailor, Method::ft, Method::ft_full, Method::l1,
                 Method::source_taylor}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown method '" + name +
                    "' (expected transtailor, ft, ft-full, l1 or source-taylor)");
}

namespace {

// Reads known keys of one JSON object and rejects the rest.
class Reader {
 public:
  Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  std::string path(const char* key) const { return where_ + "." + key; }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw ConfigError("unknown key " + where_ + "." + item.key());
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

DatasetSpec dataset_from_json(const json& j, const std::string& where) {
  DatasetSpec d;
  Reader r(j, where);
  r.get("format", d.format);
  r.get("task", d.task);
  r.get("per_class", d.per_class);
  r.get("noise", d.noise);
  r.get("image_size", d.image_size);
  r.get("seed", d.seed);
  r.get("images", d.images);
  r.get("labels", d.labels);
  r.get("files", d.files);
  r.finish();
  return d;
}

json dataset_to_json(const DatasetSpec& d) {
  json j{{"format", d.format}};
  if (d.format == "synthetic") {
    j["task"] = d.task;
    j["per_class"] = d.per_class;
    j["noise"] = d.noise;
    j["image_size"] = d.image_size;
    j["seed"] = d.seed;
  } else if (d.format == "idx") {
    j["images"] = d.images;
    j["labels"] = d.labels;
  } else {
    j["files"] = d.files;
  }
  return j;
}

std::string budget_mode_name(tailor::BudgetMode mode) {
  return mode == tailor::BudgetMode::flops_fraction ? "flops_fraction" : "filter_count";
}

tailor::TailorConfig tailor_from_json(const json& j) {
  tailor::TailorConfig c;
  Reader r(j, "tailor");
  if (const json* tau = r.child("tau")) {
    if (tau->is_string() && tau->get<std::string>() == "inf") {
      c.tau = tailor::TailorConfig::kNeverStop;
    } else if (tau->is_number()) {
      c.tau = tau->get<double>();
    } else {
      throw ConfigError("tailor.tau: expected a number or \"inf\"");
    }
  }
  std::string mode = budget_mode_name(c.budget_mode);
  r.get("budget_mode", mode);
  if (mode == "flops_fraction") {
    c.budget_mode = tailor::BudgetMode::flops_fraction;
  } else if (mode == "filter_count") {
    c.budget_mode = tailor::BudgetMode::filter_count;
  } else {
    throw ConfigError("tailor.budget_mode: expected flops_fraction or filter_count");
  }
  r.get("budget_fraction", c.budget_fraction);
  r.get("filters_per_iteration", c.filters_per_iteration);
  r.get("reference_flops", c.reference_flops);
  r.get("min_filters_per_layer", c.min_filters_per_layer);
  r.get("max_iterations", c.max_iterations);
  r.get("head_epochs", c.head_epochs);
  r.get("factor_epochs", c.factor_epochs);
  r.get("finetune_epochs", c.finetune_epochs);
  r.get("batch_size", c.batch_size);
  r.get("crop_pad", c.crop_pad);
  r.get("lr_factor", c.lr_factor);
  r.get("lr_head", c.lr_head);
  r.get("lr_conv", c.lr_conv);
  r.get("momentum", c.momentum);
  r.get("weight_decay", c.weight_decay);
  r.finish();
  return c;
}

json tailor_to_json(const tailor::TailorConfig& c) {
  json j;
  if (std::isinf(c.tau)) {
    j["tau"] = "inf";
  } else {
    j["tau"] = c.tau;
  }
  j["budget_mode"] = budget_mode_name(c.budget_mode);
  j["budget_fraction"] = c.budget_fraction;
  j["filters_per_iteration"] = c.filters_per_iteration;
  j["reference_flops"] = c.reference_flops;
  j["min_filters_per_layer"] = c.min_filters_per_layer;
  j["max_iterations"] = c.max_iterations;
  j["head_epochs"] = c.head_epochs;
  j["factor_epochs"] = c.factor_epochs;
  j["finetune_epochs"] = c.finetune_epochs;
  j["batch_size"] = c.batch_size;
  j["crop_pad"] = c.crop_pad;
  j["lr_factor"] = c.lr_factor;
  j["lr_head"] = c.lr_head;
  j["lr_conv"] = c.lr_conv;
  j["momentum"] = c.momentum;
  j["weight_decay"] = c.weight_decay;
  return j;
}

}  // namespace

RunConfig config_from_json(const json& j) {
  RunConfig cfg;
  Reader r(j, "config");
  r.get("name", cfg.name);
  r.get("architecture", cfg.architecture);
  std::string method = to_string(cfg.method);
  r.get("method", method);
  cfg.method = parse_method(method);
  r.get("out", cfg.out);
  r.get("seed", cfg.seed);
  r.get("pretrained", cfg.pretrained);
  r.get("source_importance_per_class", cfg.source_importance_per_class);
  if (const json* s = r.child("source")) cfg.source = dataset_from_json(*s, "source");
  if (const json* t = r.child("target")) cfg.target = dataset_from_json(*t, "target");
  if (const json* t = r.child("target_task")) {
    Reader tr(*t, "target_task");
    tr.get("per_class_train", cfg.target_task.per_class_train);
    tr.get("val_fraction", cfg.target_task.val_fraction);
    tr.finish();
  }
  if (const json* p = r.child("pretrain")) {
    Reader pr(*p, "pretrain");
    pr.get("epochs", cfg.pretrain.epochs);
    pr.get("decay_epoch", cfg.pretrain.decay_epoch);
    pr.get("decay_factor", cfg.pretrain.decay_factor);
    pr.get("lr", cfg.pretrain.lr);
    pr.get("momentum", cfg.pretrain.momentum);
    pr.get("weight_decay", cfg.pretrain.weight_decay);
    pr.get("batch_size", cfg.pretrain.batch_size);
    pr.get("val_fraction", cfg.pretrain.val_fraction);
    pr.finish();
  }
  if (const json* t = r.child("tailor")) cfg.tailor = tailor_from_json(*t);
  r.finish();
  if (cfg.architecture != "vgg-mini") {
    throw ConfigError("unknown architecture '" + cfg.architecture + "' (expected vgg-mini)");
  }
  cfg.tailor.seed = cfg.seed;
  cfg.target_task.seed = cfg.seed;
  return cfg;
}

json to_json(const RunConfig& cfg) {
  return {
      {"name", cfg.name},
      {"architecture", cfg.architecture},
      {"method", to_string(cfg.method)},
      {"out", cfg.out},
      {"seed", cfg.seed},
      {"source", dataset_to_json(cfg.source)},
      {"target", dataset_to_json(cfg.target)},
      {"target_task",
       {{"per_class_train", cfg.target_task.per_class_train},
        {"val_fraction", cfg.target_task.val_fraction}}},
      {"pretrain",
       {{"epochs", cfg.pretrain.epochs},
        {"decay_epoch", cfg.pretrain.decay_epoch},
        {"decay_factor", cfg.pretrain.decay_factor},
        {"lr", cfg.pretrain.lr},
        {"momentum", cfg.pretrain.momentum},
        {"weight_decay", cfg.pretrain.weight_decay},
        {"batch_size", cfg.pretrain.batch_size},
        {"val_fraction", cfg.pretrain.val_fraction}}},
      {"pretrained", cfg.pretrained},
      {"source_importance_per_class", cfg.source_importance_per_class},
      {"tailor", tailor_to_json(cfg.tailor)},
  };
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

void save_run_config(const RunConfig& cfg, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << to_json(cfg).dump(2) << '\n';
}

fs::path resolve_data_path(const std::string& path) {
  fs::path p(path);
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv(kDataRootEnv); root && *root) return fs::path(root) / p;
  return p;
}

void check_dataset_spec(const DatasetSpec& spec, const std::string& role) {
  auto require = [&](const std::string& path, const char* field) {
    if (path.empty()) throw ConfigError(role + "." + field + " is required for format " + spec.format);
    const auto resolved = resolve_data_path(path);
    if (!fs::exists(resolved)) {
      throw ConfigError(role + "." + field + ": " + resolved.string() + " does not exist");
    }
  };
  if (spec.format == "synthetic") {
    const auto names = data::pattern_task_names();
    if (std::find(names.begin(), names.end(), spec.task) == names.end()) {
      throw ConfigError(role + ".task: unknown synthetic task '" + spec.task + "'");
    }
    if (spec.per_class < 1 || spec.image_size < 4 || !(spec.noise >= 0.0f)) {
      throw ConfigError(role + ": per_class >= 1, image_size >= 4 and noise >= 0 required");
    }
  } else if (spec.format == "idx") {
    require(spec.images, "images");
    require(spec.labels, "labels");
  } else if (spec.format == "cifar") {
    if (spec.files.empty()) throw ConfigError(role + ".files: at least one batch file required");
    for (const auto& f : spec.files) require(f, "files");
  } else {
    throw ConfigError(role + ".format: expected synthetic, idx or cifar, got '" + spec.format + "'");
  }
}

data::Dataset load_dataset(const DatasetSpec& spec) {
  check_dataset_spec(spec, spec.format);
  if (spec.format == "synthetic") {
    return data::generate_patterns(data::pattern_task(spec.task),
                                   {spec.image_size, spec.per_class, spec.noise, spec.seed});
  }
  if (spec.format == "idx") {
    return data::load_idx(resolve_data_path(spec.images), resolve_data_path(spec.labels));
  }
  std::vector<fs::path> files;
  for (const auto& f : spec.files) files.push_back(resolve_data_path(f));
  return data::load_cifar_binary(files);
}

}  // namespace transtailor::cli
