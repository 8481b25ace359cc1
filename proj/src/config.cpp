#include "splat/config.hpp"

#include <algorithm>
#include <cstdio>
#include <functional>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "splat/common.hpp"

namespace splat {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

int64_t parse_int(const std::string& key, const std::string& v) {
  size_t pos = 0;
  int64_t out;
  try {
    out = std::stoll(v, &pos);
  } catch (const std::exception&) {
    throw ValidationError("config: key '" + key + "' needs an integer, got '" + v + "'");
  }
  if (pos != v.size())
    throw ValidationError("config: key '" + key + "' needs an integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  size_t pos = 0;
  double out;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw ValidationError("config: key '" + key + "' needs a number, got '" + v + "'");
  }
  if (pos != v.size())
    throw ValidationError("config: key '" + key + "' needs a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ValidationError("config: key '" + key + "' needs true or false, got '" + v + "'");
}

std::vector<std::string> split_commas(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (size_t j = 1; j <= b.size(); ++j) {
      size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::vector<std::pair<std::string, Setter>>& key_table() {
  static const std::vector<std::pair<std::string, Setter>> table = {
      {"preset",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v == "toy") {
           c.model = toy_config();
         } else if (v == "small") {
           c.model = small_config();
         } else {
           throw ValidationError("config: key '" + k +
                                 "' must be toy or small, got '" + v + "'");
         }
         c.preset = v;
       }},
      {"val_fraction",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.val_fraction = parse_double(k, v);
         if (!(c.val_fraction >= 0.0 && c.val_fraction < 1.0))
           throw ValidationError("config: val_fraction must lie in [0,1), got " + v);
       }},
      {"model.patch_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.patch_size = parse_int(k, v); }},
      {"model.image_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.image_size = parse_int(k, v); }},
      {"model.encoder_depth", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.encoder_depth = parse_int(k, v); }},
      {"model.encoder_width", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.encoder_width = parse_int(k, v); }},
      {"model.encoder_heads", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.encoder_heads = parse_int(k, v); }},
      {"model.classifier_depth", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.classifier_depth = parse_int(k, v); }},
      {"model.classifier_width", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.classifier_width = parse_int(k, v); }},
      {"model.classifier_heads", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.classifier_heads = parse_int(k, v); }},
      {"model.k", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.k = parse_int(k, v); }},
      {"model.num_classes", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.num_classes = parse_int(k, v); }},
      {"model.use_class_token", [](RunConfig& c, const std::string& k, const std::string& v) { c.model.use_class_token = parse_bool(k, v); }},
      {"train.base_lr", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.base_lr = parse_double(k, v); }},
      {"train.batch_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.batch_size = parse_int(k, v); }},
      {"train.epochs_warmup_encoder", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.epochs_warmup_encoder = parse_int(k, v); }},
      {"train.epochs_perc_on", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.epochs_perc_on = parse_int(k, v); }},
      {"train.epochs_classifier_pre", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.epochs_classifier_pre = parse_int(k, v); }},
      {"train.epochs_classifier_joint", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.epochs_classifier_joint = parse_int(k, v); }},
      {"train.epochs_guidance", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.epochs_guidance = parse_int(k, v); }},
      {"train.weight_decay", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.weight_decay = parse_double(k, v); }},
      {"train.beta1", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.beta1 = parse_double(k, v); }},
      {"train.beta2", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.beta2 = parse_double(k, v); }},
      {"train.warmup_epochs", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.warmup_epochs = parse_int(k, v); }},
      {"train.guidance_every", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.guidance_every = parse_int(k, v); }},
      {"train.gamma", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.gamma = parse_double(k, v); }},
      {"train.lambda_perc", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.lambda_perc = parse_double(k, v); }},
      {"train.lambda_cls", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.lambda_cls = parse_double(k, v); }},
      {"train.g0_scale", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.g0_scale = parse_double(k, v); }},
      {"train.loss_variant", [](RunConfig& c, const std::string&, const std::string& v) { c.train.loss_variant = v; }},
      {"train.augment_data", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.augment_data = parse_bool(k, v); }},
      {"train.seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.seed = static_cast<uint64_t>(parse_int(k, v)); }},
      {"dataset.per_class",
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.synth_per_class = parse_int(k, v);
         if (c.synth_per_class < 1)
           throw ValidationError("config: dataset.per_class must be >= 1, got " + v);
       }},
      {"dataset.seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.synth_seed = static_cast<uint64_t>(parse_int(k, v)); }},
      {"dataset.root", [](RunConfig& c, const std::string&, const std::string& v) { c.dataset.root = v; }},
      {"dataset.format", [](RunConfig& c, const std::string&, const std::string& v) { c.dataset.format = v; }},
      {"dataset.image_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.dataset.image_size = parse_int(k, v); }},
      {"dataset.classes", [](RunConfig& c, const std::string&, const std::string& v) { c.dataset.classes = split_commas(v); }},
  };
  return table;
}

const Setter* find_setter(const std::string& key) {
  for (const auto& [name, fn] : key_table())
    if (name == key) return &fn;
  return nullptr;
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const auto& [name, fn] : key_table()) out.push_back(name);
    return out;
  }();
  return keys;
}

RunConfig parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::unordered_set<std::string> seen;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config: line " + std::to_string(lineno) +
                            " is not key=value: '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (!find_setter(key)) {
      std::string best;
      size_t best_d = SIZE_MAX;
      for (const auto& name : config_keys()) {
        size_t d = edit_distance(key, name);
        if (d < best_d) {
          best_d = d;
          best = name;
        }
      }
      throw ValidationError("config: unknown key '" + key + "' (line " +
                            std::to_string(lineno) + "); closest valid key is '" +
                            best + "'");
    }
    if (!seen.insert(key).second)
      throw ValidationError("config: duplicate key '" + key + "' (line " +
                            std::to_string(lineno) + ")");
    pairs.emplace_back(key, value);
  }

  RunConfig config;
  // preset seeds the model fields, so it applies before any model.* key
  // regardless of file order
  for (const auto& [key, value] : pairs)
    if (key == "preset") (*find_setter(key))(config, key, value);
  for (const auto& [key, value] : pairs)
    if (key != "preset") (*find_setter(key))(config, key, value);

  config.model.validate();
  config.train.validate();
  return config;
}

RunConfig load_config_file(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw IoError("config: cannot open '" + path + "'");
  std::string text;
  char buf[4096];
  size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) text.append(buf, n);
  std::fclose(f);
  return parse_config_text(text);
}

std::string config_to_text(const RunConfig& c) {
  std::ostringstream out;
  out.precision(17);
  out << "preset=" << c.preset << "\n";
  out << "val_fraction=" << c.val_fraction << "\n";
  out << "model.patch_size=" << c.model.patch_size << "\n";
  out << "model.image_size=" << c.model.image_size << "\n";
  out << "model.encoder_depth=" << c.model.encoder_depth << "\n";
  out << "model.encoder_width=" << c.model.encoder_width << "\n";
  out << "model.encoder_heads=" << c.model.encoder_heads << "\n";
  out << "model.classifier_depth=" << c.model.classifier_depth << "\n";
  out << "model.classifier_width=" << c.model.classifier_width << "\n";
  out << "model.classifier_heads=" << c.model.classifier_heads << "\n";
  out << "model.k=" << c.model.k << "\n";
  out << "model.num_classes=" << c.model.num_classes << "\n";
  out << "model.use_class_token=" << (c.model.use_class_token ? "true" : "false") << "\n";
  out << "train.base_lr=" << c.train.base_lr << "\n";
  out << "train.batch_size=" << c.train.batch_size << "\n";
  out << "train.epochs_warmup_encoder=" << c.train.epochs_warmup_encoder << "\n";
  out << "train.epochs_perc_on=" << c.train.epochs_perc_on << "\n";
  out << "train.epochs_classifier_pre=" << c.train.epochs_classifier_pre << "\n";
  out << "train.epochs_classifier_joint=" << c.train.epochs_classifier_joint << "\n";
  out << "train.epochs_guidance=" << c.train.epochs_guidance << "\n";
  out << "train.weight_decay=" << c.train.weight_decay << "\n";
  out << "train.beta1=" << c.train.beta1 << "\n";
  out << "train.beta2=" << c.train.beta2 << "\n";
  out << "train.warmup_epochs=" << c.train.warmup_epochs << "\n";
  out << "train.guidance_every=" << c.train.guidance_every << "\n";
  out << "train.gamma=" << c.train.gamma << "\n";
  out << "train.lambda_perc=" << c.train.lambda_perc << "\n";
  out << "train.lambda_cls=" << c.train.lambda_cls << "\n";
  out << "train.g0_scale=" << c.train.g0_scale << "\n";
  out << "train.loss_variant=" << c.train.loss_variant << "\n";
  out << "train.augment_data=" << (c.train.augment_data ? "true" : "false") << "\n";
  out << "train.seed=" << c.train.seed << "\n";
  out << "dataset.per_class=" << c.synth_per_class << "\n";
  out << "dataset.seed=" << c.synth_seed << "\n";
  out << "dataset.root=" << c.dataset.root << "\n";
  out << "dataset.format=" << c.dataset.format << "\n";
  out << "dataset.image_size=" << c.dataset.image_size << "\n";
  out << "dataset.classes=";
  for (size_t i = 0; i < c.dataset.classes.size(); ++i) {
    if (i) out << ",";
    out << c.dataset.classes[i];
  }
  out << "\n";
  return out.str();
}

}  // namespace splat
