#include "condisr/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace condisr {
namespace {

bool parse_real(const std::string& s, double& out) {
  try {
    std::size_t pos = 0;
    out = std::stod(s, &pos);
    return pos == s.size() && std::isfinite(out);
  } catch (...) {
    return false;
  }
}

bool parse_int(const std::string& s, long& out) {
  try {
    std::size_t pos = 0;
    out = std::stol(s, &pos);
    return pos == s.size();
  } catch (...) {
    return false;
  }
}

bool parse_bool(const std::string& s, bool& out) {
  if (s == "true" || s == "1" || s == "yes") {
    out = true;
    return true;
  }
  if (s == "false" || s == "0" || s == "no") {
    out = false;
    return true;
  }
  return false;
}

std::function<bool(const std::string&)> real_range(double lo, double hi) {
  return [lo, hi](const std::string& s) {
    double v;
    return parse_real(s, v) && v >= lo && v <= hi;
  };
}

std::function<bool(const std::string&)> real_min_exclusive(double lo) {
  return [lo](const std::string& s) {
    double v;
    return parse_real(s, v) && v > lo;
  };
}

std::function<bool(const std::string&)> real_min(double lo) {
  return [lo](const std::string& s) {
    double v;
    return parse_real(s, v) && v >= lo;
  };
}

std::function<bool(const std::string&)> int_min(long lo) {
  return [lo](const std::string& s) {
    long v;
    return parse_int(s, v) && v >= lo;
  };
}

std::function<bool(const std::string&)> int_list_nonempty() {
  return [](const std::string& s) {
    if (s.empty()) return false;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
      long v;
      if (!parse_int(item, v)) return false;
    }
    return true;
  };
}

std::function<bool(const std::string&)> real_list_of(std::size_t n) {
  return [n](const std::string& s) {
    std::stringstream ss(s);
    std::string item;
    std::size_t count = 0;
    while (std::getline(ss, item, ',')) {
      double v;
      if (!parse_real(item, v)) return false;
      ++count;
    }
    return count == n;
  };
}

std::vector<KeySpec> build_schema() {
  std::vector<KeySpec> s;
  auto add = [&s](KeySpec k) { s.push_back(std::move(k)); };

  // data
  add({"data.kind", KeyType::kEnum, "synthetic", {"synthetic", "camelyon17"}, "", nullptr});
  add({"data.root", KeyType::kString, "", {}, "", nullptr});
  add({"data.seed", KeyType::kInt, "1234", {}, "", nullptr});
  add({"data.samples_per_domain", KeyType::kInt, "1000", {}, ">= 10", int_min(10)});
  add({"data.holdout_fraction", KeyType::kReal, "0.2", {}, "in (0,1)",
       [](const std::string& v) {
         double x;
         return parse_real(v, x) && x > 0.0 && x < 1.0;
       }});
  add({"data.norm_mean", KeyType::kString, "0.5,0.5,0.5", {}, "3 comma-separated reals",
       real_list_of(3)});
  add({"data.norm_std", KeyType::kString, "0.5,0.5,0.5", {}, "3 positive reals",
       [](const std::string& v) {
         if (!real_list_of(3)(v)) return false;
         std::stringstream ss(v);
         std::string item;
         while (std::getline(ss, item, ',')) {
           double x;
           parse_real(item, x);
           if (x <= 0) return false;
         }
         return true;
       }});

  // model
  add({"model.kind", KeyType::kEnum, "small-cnn", {"small-cnn", "resnet18"}, "", nullptr});
  add({"model.stem_channels", KeyType::kInt, "64", {}, ">= 2", int_min(2)});
  add({"model.proj_dim", KeyType::kInt, "128", {}, ">= 1", int_min(1)});
  add({"model.proj_hidden", KeyType::kInt, "0", {}, ">= 0", int_min(0)});
  add({"model.tau", KeyType::kReal, "0.1", {}, "> 0", real_min_exclusive(0.0)});
  add({"model.pretrained", KeyType::kString, "", {}, "", nullptr});
  add({"model.stopgrad_cls", KeyType::kBool, "false", {}, "", nullptr});

  // decoder
  add({"decoder.resolution", KeyType::kEnum, "48", {"24", "48", "96"}, "", nullptr});
  add({"decoder.widths", KeyType::kString, "16", {}, "comma-separated positive ints",
       [](const std::string& v) {
         if (!int_list_nonempty()(v)) return false;
         std::stringstream ss(v);
         std::string item;
         while (std::getline(ss, item, ',')) {
           long x;
           parse_int(item, x);
           if (x < 1) return false;
         }
         return true;
       }});
  add({"decoder.pool_stages", KeyType::kInt, "0", {}, ">= 0", int_min(0)});

  // plugin
  add({"plugin.kind", KeyType::kString, "none", {}, "", nullptr});
  add({"plugin.p", KeyType::kReal, "0.5", {}, "in [0,1]", real_range(0.0, 1.0)});
  add({"plugin.alpha", KeyType::kReal, "0.1", {}, "> 0", real_min_exclusive(0.0)});

  // augmentation
  add({"aug.bezier.invert_prob", KeyType::kReal, "0.5", {}, "in [0,1]", real_range(0.0, 1.0)});
  add({"aug.bezier.per_channel", KeyType::kBool, "false", {}, "", nullptr});
  add({"aug.fda.beta_min", KeyType::kReal, "0.05", {}, "in [0,0.5]", real_range(0.0, 0.5)});
  add({"aug.fda.beta_max", KeyType::kReal, "0.15", {}, "in [0,0.5]", real_range(0.0, 0.5)});
  add({"aug.resample_per_batch", KeyType::kBool, "true", {}, "", nullptr});

  // loss
  add({"loss.lambda_cls", KeyType::kReal, "1.0", {}, ">= 0", real_min(0.0)});
  add({"loss.lambda_str", KeyType::kReal, "0.1", {}, ">= 0", real_min(0.0)});
  add({"loss.lambda_sty", KeyType::kReal, "0.1", {}, ">= 0", real_min(0.0)});
  add({"loss.lambda_rec", KeyType::kReal, "0.1", {}, ">= 0", real_min(0.0)});
  add({"loss.style_mode", KeyType::kEnum, "literal", {"literal", "margin"}, "", nullptr});
  add({"loss.margin", KeyType::kReal, "1.0", {}, "> 0", real_min_exclusive(0.0)});
  add({"loss.style_clamp", KeyType::kReal, "0", {}, ">= 0 (0 disables)", real_min(0.0)});
  add({"loss.rec_norm", KeyType::kEnum, "mse", {"mse", "sum"}, "", nullptr});
  add({"loss.l1_reduction", KeyType::kEnum, "sum", {"sum", "coord_mean"}, "", nullptr});

  // training
  add({"train.methods", KeyType::kString, "condisr", {},
       "comma-separated subset of {erm_noaug, erm, condisr, condisr_norec}",
       [](const std::string& v) {
         std::stringstream ss(v);
         std::string item;
         bool any = false;
         while (std::getline(ss, item, ',')) {
           if (item != "erm_noaug" && item != "erm" && item != "condisr" &&
               item != "condisr_norec")
             return false;
           any = true;
         }
         return any;
       }});
  add({"train.optimizer", KeyType::kEnum, "adam", {"adam"}, "", nullptr});
  add({"train.lr", KeyType::kReal, "0.001", {}, "> 0", real_min_exclusive(0.0)});
  add({"train.batch_size", KeyType::kInt, "256", {}, ">= 1", int_min(1)});
  add({"train.epochs", KeyType::kInt, "50", {}, ">= 1", int_min(1)});
  add({"train.seeds", KeyType::kString, "0,1,2", {}, "comma-separated ints",
       int_list_nonempty()});
  add({"train.source", KeyType::kInt, "-1", {}, "-1 (all domains) or a domain id",
       int_min(-1)});
  add({"train.workers", KeyType::kInt, "2", {}, ">= 1", int_min(1)});
  return s;
}

const KeySpec* find_spec(const std::string& key) {
  for (const auto& k : Config::schema())
    if (k.name == key) return &k;
  return nullptr;
}

std::string type_error(const KeySpec& spec, const std::string& value) {
  switch (spec.type) {
    case KeyType::kReal:
      return "'" + spec.name + "': expected a real number, got '" + value + "'";
    case KeyType::kInt:
      return "'" + spec.name + "': expected an integer, got '" + value + "'";
    case KeyType::kBool:
      return "'" + spec.name + "': expected true/false, got '" + value + "'";
    case KeyType::kEnum: {
      std::string allowed;
      for (const auto& e : spec.enum_values) allowed += (allowed.empty() ? "" : ", ") + e;
      return "'" + spec.name + "': expected one of {" + allowed + "}, got '" + value + "'";
    }
    default:
      return "'" + spec.name + "': invalid value '" + value + "'";
  }
}

std::optional<std::string> check_value(const KeySpec& spec, const std::string& value) {
  double d;
  long l;
  bool b;
  switch (spec.type) {
    case KeyType::kReal:
      if (!parse_real(value, d)) return type_error(spec, value);
      break;
    case KeyType::kInt:
      if (!parse_int(value, l)) return type_error(spec, value);
      break;
    case KeyType::kBool:
      if (!parse_bool(value, b)) return type_error(spec, value);
      break;
    case KeyType::kEnum:
      if (std::find(spec.enum_values.begin(), spec.enum_values.end(), value) ==
          spec.enum_values.end())
        return type_error(spec, value);
      break;
    case KeyType::kString:
      break;
  }
  if (spec.check && !spec.check(value))
    return "'" + spec.name + "' = '" + value + "' violates constraint: " + spec.constraint_doc;
  return std::nullopt;
}

std::size_t levenshtein(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

const std::vector<KeySpec>& Config::schema() {
  static const std::vector<KeySpec> s = build_schema();
  return s;
}

std::string nearest_key(const std::string& key) {
  std::string best;
  std::size_t best_d = std::string::npos;
  for (const auto& k : Config::schema()) {
    std::size_t d = levenshtein(key, k.name);
    if (d < best_d) {
      best_d = d;
      best = k.name;
    }
  }
  return best;
}

Config::Config() {
  for (const auto& k : schema()) values_[k.name] = k.default_value;
}

void Config::set(const std::string& key, const std::string& value) {
  const KeySpec* spec = find_spec(key);
  if (!spec)
    throw ConfigError("unknown key '" + key + "' (did you mean '" + nearest_key(key) + "'?)");
  if (auto err = check_value(*spec, value)) throw ConfigError(*err);
  values_[key] = value;
}

Config Config::from_string(const std::string& text, std::vector<std::string>* errors) {
  Config cfg;
  std::vector<std::string> errs;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    std::string stripped = line;
    std::size_t hash = stripped.find('#');
    if (hash != std::string::npos) stripped = stripped.substr(0, hash);
    stripped = trim(stripped);
    if (stripped.empty()) continue;
    std::size_t eq = stripped.find('=');
    if (eq == std::string::npos) {
      errs.push_back("line " + std::to_string(lineno) + ": expected 'key = value'");
      continue;
    }
    std::string key = trim(stripped.substr(0, eq));
    std::string value = trim(stripped.substr(eq + 1));
    const KeySpec* spec = find_spec(key);
    if (!spec) {
      errs.push_back("line " + std::to_string(lineno) + ": unknown key '" + key +
                     "' (did you mean '" + nearest_key(key) + "'?)");
      continue;
    }
    if (auto err = check_value(*spec, value)) {
      errs.push_back("line " + std::to_string(lineno) + ": " + *err);
      continue;
    }
    cfg.values_[key] = value;
  }
  for (const auto& e : cfg.validate()) errs.push_back(e);
  if (errors) {
    *errors = errs;
  } else if (!errs.empty()) {
    std::string msg;
    for (const auto& e : errs) msg += (msg.empty() ? "" : "\n") + e;
    throw ConfigError(msg);
  }
  return cfg;
}

Config Config::from_file(const std::string& path, std::vector<std::string>* errors) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  std::stringstream buf;
  buf << is.rdbuf();
  return from_string(buf.str(), errors);
}

std::string Config::get_string(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown key '" + key + "'");
  return it->second;
}

double Config::get_real(const std::string& key) const {
  double v;
  if (!parse_real(get_string(key), v)) throw ConfigError("'" + key + "' is not a real");
  return v;
}

long Config::get_int(const std::string& key) const {
  long v;
  if (!parse_int(get_string(key), v)) throw ConfigError("'" + key + "' is not an integer");
  return v;
}

bool Config::get_bool(const std::string& key) const {
  bool v;
  if (!parse_bool(get_string(key), v)) throw ConfigError("'" + key + "' is not a bool");
  return v;
}

std::vector<double> Config::get_real_list(const std::string& key) const {
  std::vector<double> out;
  std::stringstream ss(get_string(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    double v;
    if (!parse_real(trim(item), v)) throw ConfigError("'" + key + "' has a non-real entry");
    out.push_back(v);
  }
  return out;
}

std::vector<long> Config::get_int_list(const std::string& key) const {
  std::vector<long> out;
  std::stringstream ss(get_string(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    long v;
    if (!parse_int(trim(item), v)) throw ConfigError("'" + key + "' has a non-integer entry");
    out.push_back(v);
  }
  return out;
}

std::string Config::resolved() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::vector<std::string> Config::validate() const {
  std::vector<std::string> errs;
  if (get_real("aug.fda.beta_min") > get_real("aug.fda.beta_max"))
    errs.push_back("'aug.fda.beta_min' must not exceed 'aug.fda.beta_max'");
  if (get_string("plugin.kind") != "none") {
    // plugin names are validated against the registry at build time; here we
    // only check the built-ins plus registered extensions lazily.
  }
  return errs;
}

}  // namespace condisr
