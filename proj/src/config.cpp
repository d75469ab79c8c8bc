#include "malfuse/config.hpp"

#include <cstdlib>
#include <cstdio>
#include <algorithm>
#include <functional>
#include <sstream>

#include "malfuse/error.hpp"
#include "malfuse/io.hpp"

namespace malfuse {

namespace {

using Setter = std::function<void(ExperimentConfig&, std::string_view)>;
using Getter = std::function<std::string(const ExperimentConfig&)>;

struct Field {
  std::string key;  // section.name
  Setter set;
  Getter get;
  bool affects_results = true;
};

[[noreturn]] void bad_value(std::string_view what, std::string_view value) {
  throw Error(ErrorKind::ConfigError, "expected " + std::string(what) + ", got '" + std::string(value) + "'");
}

double as_real(std::string_view v) {
  try {
    return io::parse_real(v);
  } catch (const Error&) {
    bad_value("a number", v);
  }
}

long long as_int(std::string_view v) {
  try {
    return io::parse_int(v);
  } catch (const Error&) {
    bad_value("an integer", v);
  }
}

bool as_bool(std::string_view v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  bad_value("true or false", v);
}

std::string unquote(std::string_view v) {
  v = io::trim(v);
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') v = v.substr(1, v.size() - 2);
  return std::string(v);
}

std::string quote(const std::string& s) { return "\"" + s + "\""; }

template <typename Member>
Field real_field(std::string key, Member member) {
  return {std::move(key), [member](ExperimentConfig& c, std::string_view v) { member(c) = as_real(v); },
          [member](const ExperimentConfig& c) { return io::format_real(member(const_cast<ExperimentConfig&>(c))); }};
}

template <typename T, typename Member>
Field int_field(std::string key, Member member) {
  return {std::move(key), [member](ExperimentConfig& c, std::string_view v) { member(c) = static_cast<T>(as_int(v)); },
          [member](const ExperimentConfig& c) { return std::to_string(member(const_cast<ExperimentConfig&>(c))); }};
}

void add_train_fields(std::vector<Field>& f, const std::string& section, nn::TrainConfig ExperimentConfig::*block) {
  f.push_back(int_field<int>(section + ".epochs", [block](ExperimentConfig& c) -> int& { return (c.*block).epochs; }));
  f.push_back(
      int_field<int>(section + ".batch_size", [block](ExperimentConfig& c) -> int& { return (c.*block).batch_size; }));
  f.push_back(real_field(section + ".learning_rate",
                         [block](ExperimentConfig& c) -> double& { return (c.*block).learning_rate; }));
  f.push_back(real_field(section + ".weight_decay",
                         [block](ExperimentConfig& c) -> double& { return (c.*block).weight_decay; }));
}

void add_svm_fields(std::vector<Field>& f, const std::string& section, SvmParams ExperimentConfig::*block) {
  f.push_back(real_field(section + ".C", [block](ExperimentConfig& c) -> double& { return (c.*block).C; }));
  f.push_back({section + ".kernel",
               [block](ExperimentConfig& c, std::string_view v) {
                 const std::string s = unquote(v);
                 if (s == "linear")
                   (c.*block).kernel.type = KernelType::Linear;
                 else if (s == "rbf")
                   (c.*block).kernel.type = KernelType::Rbf;
                 else
                   bad_value("linear or rbf", v);
               },
               [block](const ExperimentConfig& c) {
                 return quote((c.*block).kernel.type == KernelType::Linear ? "linear" : "rbf");
               }});
  f.push_back(real_field(section + ".gamma", [block](ExperimentConfig& c) -> double& { return (c.*block).kernel.gamma; }));
  f.push_back(real_field(section + ".tolerance", [block](ExperimentConfig& c) -> double& { return (c.*block).tolerance; }));
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
    f.push_back({"general.data_root", [](ExperimentConfig& c, std::string_view v) { c.data_root = unquote(v); },
                 [](const ExperimentConfig& c) { return quote(c.data_root.string()); }});
    f.push_back({"general.output_root", [](ExperimentConfig& c, std::string_view v) { c.output_root = unquote(v); },
                 [](const ExperimentConfig& c) { return quote(c.output_root.string()); }, false});
    f.push_back(int_field<std::uint64_t>("general.seed", [](ExperimentConfig& c) -> std::uint64_t& { return c.seed; }));
    f.push_back(int_field<int>("general.runs", [](ExperimentConfig& c) -> int& { return c.runs; }));
    f.push_back(real_field("general.test_fraction", [](ExperimentConfig& c) -> double& { return c.test_fraction; }));
    f.push_back(real_field("general.val_fraction", [](ExperimentConfig& c) -> double& { return c.val_fraction; }));
    f.push_back(int_field<std::size_t>("general.vocabulary_cap",
                                       [](ExperimentConfig& c) -> std::size_t& { return c.vocabulary_cap; }));
    f.push_back({"general.deterministic",
                 [](ExperimentConfig& c, std::string_view v) { c.deterministic = as_bool(io::trim(v)); },
                 [](const ExperimentConfig& c) { return std::string(c.deterministic ? "true" : "false"); }});
    f.push_back(Field{int_field<int>("general.workers", [](ExperimentConfig& c) -> int& { return c.workers; })});
    f.back().affects_results = false;
    f.push_back({"general.compare_random_init",
                 [](ExperimentConfig& c, std::string_view v) { c.compare_random_init = as_bool(io::trim(v)); },
                 [](const ExperimentConfig& c) { return std::string(c.compare_random_init ? "true" : "false"); }});

    f.push_back(int_field<int>("synth.families", [](ExperimentConfig& c) -> int& { return c.synth_families; }));
    f.push_back(int_field<std::size_t>("synth.per_family",
                                       [](ExperimentConfig& c) -> std::size_t& { return c.synth_per_family; }));

    add_train_fields(f, "cnn", &ExperimentConfig::cnn);
    f.push_back(int_field<nn::Index>("cnn.width_divisor",
                                     [](ExperimentConfig& c) -> nn::Index& { return c.cnn_width_divisor; }));
    add_train_fields(f, "cae", &ExperimentConfig::cae);
    f.push_back(int_field<nn::Index>("cae.width_divisor",
                                     [](ExperimentConfig& c) -> nn::Index& { return c.cae_width_divisor; }));
    add_train_fields(f, "pretrained_cnn", &ExperimentConfig::pretrained_cnn);
    add_train_fields(f, "baseline_mlp", &ExperimentConfig::baseline_mlp);
    add_train_fields(f, "fusion_mlp", &ExperimentConfig::fusion_mlp);
    f.push_back(int_field<nn::Index>("fusion_mlp.hidden1", [](ExperimentConfig& c) -> nn::Index& { return c.fusion_hidden1; }));
    f.push_back(int_field<nn::Index>("fusion_mlp.hidden2", [](ExperimentConfig& c) -> nn::Index& { return c.fusion_hidden2; }));

    add_svm_fields(f, "linear_svm", &ExperimentConfig::baseline_linear);
    add_svm_fields(f, "rbf_svm", &ExperimentConfig::baseline_rbf);

    f.push_back({"selection.metric",
                 [](ExperimentConfig& c, std::string_view v) {
                   c.selection.evaluator.metric = parse_selection_metric(unquote(v));
                 },
                 [](const ExperimentConfig& c) { return quote(std::string(to_string(c.selection.evaluator.metric))); }});
    f.push_back({"selection.backward",
                 [](ExperimentConfig& c, std::string_view v) { c.selection.backward = parse_backward_mode(unquote(v)); },
                 [](const ExperimentConfig& c) { return quote(std::string(to_string(c.selection.backward))); }});
    f.push_back(int_field<std::size_t>("selection.step", [](ExperimentConfig& c) -> std::size_t& { return c.selection.step; }));
    f.push_back(int_field<std::size_t>("selection.patience",
                                       [](ExperimentConfig& c) -> std::size_t& { return c.selection.patience; }));
    f.push_back(real_field("selection.C", [](ExperimentConfig& c) -> double& { return c.selection.evaluator.svm.C; }));
    f.push_back(real_field("selection.gamma",
                           [](ExperimentConfig& c) -> double& { return c.selection.evaluator.svm.kernel.gamma; }));
    return f;
  }();
  return all;
}

const Field* find_field(std::string key) {
  if (key.find('.') == std::string::npos) key = "general." + key;
  for (const auto& f : fields())
    if (f.key == key) return &f;
  return nullptr;
}

void set_key(ExperimentConfig& c, const std::string& key, std::string_view value, const std::string& where) {
  const Field* f = find_field(key);
  if (!f) throw Error(ErrorKind::ConfigError, where + "unknown key '" + key + "'");
  try {
    f->set(c, io::trim(value));
  } catch (const Error& e) {
    throw Error(ErrorKind::ConfigError, where + "key '" + key + "': " + e.what());
  }
}

bool valid_key_char(char ch) {
  return (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') || ch == '_' || ch == '.';
}

}  // namespace

ExperimentConfig parse_config(std::istream& in, const std::string& source) {
  ExperimentConfig c;
  if (const char* env = std::getenv("MALFUSE_DATA_ROOT"); env && *env) c.data_root = env;
  std::string section = "general";
  std::string raw;
  for (std::size_t n = 1; std::getline(in, raw); ++n) {
    const std::string where = source + ":" + std::to_string(n) + ": ";
    std::string_view line = raw;
    bool in_quote = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') in_quote = !in_quote;
      if (line[i] == '#' && !in_quote) {
        line = line.substr(0, i);
        break;
      }
    }
    line = io::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) throw Error(ErrorKind::ConfigError, where + "malformed section header");
      section = std::string(io::trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    const std::string key(io::trim(line.substr(0, eq == std::string_view::npos ? line.size() : eq)));
    if (eq == std::string_view::npos)
      throw Error(ErrorKind::ConfigError, where + "key '" + key + "' has no '=' and value");
    if (key.empty() || !std::all_of(key.begin(), key.end(), valid_key_char))
      throw Error(ErrorKind::ConfigError, where + "malformed key '" + key + "'");
    const std::string full = key.find('.') == std::string::npos ? section + "." + key : key;
    set_key(c, full, line.substr(eq + 1), where);
  }
  return c;
}

void apply_override(ExperimentConfig& config, const std::string& key, const std::string& value) {
  set_key(config, key, value, "override: ");
}

void validate_config(const ExperimentConfig& c) {
  auto fail = [](const std::string& key, const std::string& why) {
    throw Error(ErrorKind::ConfigError, "key '" + key + "': " + why);
  };
  if (!(c.test_fraction > 0 && c.test_fraction < 1)) fail("general.test_fraction", "must be in (0,1)");
  if (!(c.val_fraction > 0 && c.val_fraction < 1)) fail("general.val_fraction", "must be in (0,1)");
  if (c.runs < 1) fail("general.runs", "must be at least 1");
  if (c.workers < 1) fail("general.workers", "must be at least 1");
  if (c.vocabulary_cap < 1) fail("general.vocabulary_cap", "must be positive");
  if (c.synth_families < 2 || c.synth_families > kNumFamilies) fail("synth.families", "must be in 2..9");
  if (c.synth_per_family < 4) fail("synth.per_family", "must be at least 4");
  const std::pair<const char*, const nn::TrainConfig*> blocks[] = {{"cnn", &c.cnn},
                                                                   {"cae", &c.cae},
                                                                   {"pretrained_cnn", &c.pretrained_cnn},
                                                                   {"baseline_mlp", &c.baseline_mlp},
                                                                   {"fusion_mlp", &c.fusion_mlp}};
  for (const auto& [name, t] : blocks) {
    const std::string s(name);
    if (t->epochs < 1) fail(s + ".epochs", "must be positive");
    if (t->batch_size < 2) fail(s + ".batch_size", "must be at least 2");
    if (!(t->learning_rate > 0)) fail(s + ".learning_rate", "must be positive");
    if (!(t->weight_decay >= 0)) fail(s + ".weight_decay", "must be nonnegative");
  }
  if (c.cnn_width_divisor < 1) fail("cnn.width_divisor", "must be positive");
  if (c.cae_width_divisor < 1) fail("cae.width_divisor", "must be positive");
  if (c.fusion_hidden1 < 1 || c.fusion_hidden2 < 1) fail("fusion_mlp.hidden1", "hidden widths must be positive");
  for (const auto& [name, p] : {std::pair{"linear_svm", &c.baseline_linear}, std::pair{"rbf_svm", &c.baseline_rbf}}) {
    if (!(p->C > 0)) fail(std::string(name) + ".C", "must be positive");
    if (p->kernel.type == KernelType::Rbf && !(p->kernel.gamma > 0)) fail(std::string(name) + ".gamma", "must be positive");
  }
  if (c.selection.step < 1) fail("selection.step", "must be positive");
  if (c.selection.patience < 1) fail("selection.patience", "must be positive");
  if (!c.data_root.empty() && !std::filesystem::is_directory(c.data_root))
    fail("general.data_root", "'" + c.data_root.string() + "' is not a directory");
}

ExperimentConfig load_config(const std::filesystem::path& path, const std::map<std::string, std::string>& overrides) {
  ExperimentConfig c;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::ConfigError, "cannot open config file '" + path.string() + "'");
    c = parse_config(in, path.string());
  } else {
    std::istringstream empty;
    c = parse_config(empty);
  }
  for (const auto& [k, v] : overrides) apply_override(c, k, v);
  validate_config(c);
  return c;
}

std::string format_config(const ExperimentConfig& config) {
  std::string out, section;
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string s = f.key.substr(0, dot);
    if (s != section) {
      if (!section.empty()) out += '\n';
      out += "[" + s + "]\n";
      section = s;
    }
    out += f.key.substr(dot + 1) + " = " + f.get(config) + "\n";
  }
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.key);
  return out;
}

std::string config_fingerprint(const ExperimentConfig& config) {
  std::uint64_t h = io::kFnvOffset;
  for (const auto& f : fields()) {
    if (!f.affects_results) continue;
    io::fnv1a(h, f.key);
    io::fnv1a(h, "=");
    io::fnv1a(h, f.get(config));
    io::fnv1a(h, "\n");
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace malfuse
