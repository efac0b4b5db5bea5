#include "lpv/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace lpv::inline LPV_NS {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError(key + ": expected a non-negative integer, got \"" + v + "\"");
  return out;
}

std::size_t to_size(const std::string& key, const std::string& v) { return static_cast<std::size_t>(to_u64(key, v)); }

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got \"" + v + "\"");
  }
}

int to_int(const std::string& key, const std::string& v) {
  int out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError(key + ": expected an integer, got \"" + v + "\"");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError(key + ": expected true/false, got \"" + v + "\"");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct Field {
  const char* key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"seed", [](RunConfig& c, const std::string& v) { c.model.seed = to_u64("seed", v); },
       [](const RunConfig& c) { return std::to_string(c.model.seed); }},
      {"stages", [](RunConfig& c, const std::string& v) { c.model.n_stages = to_size("stages", v); },
       [](const RunConfig& c) { return std::to_string(c.model.n_stages); }},
      {"glrm_layers", [](RunConfig& c, const std::string& v) { c.model.glrm_layers = to_size("glrm_layers", v); },
       [](const RunConfig& c) { return std::to_string(c.model.glrm_layers); }},
      {"threshold", [](RunConfig& c, const std::string& v) { c.model.threshold = to_double("threshold", v); },
       [](const RunConfig& c) { return fmt(c.model.threshold); }},
      {"t_max", [](RunConfig& c, const std::string& v) { c.model.t_max = to_size("t_max", v); },
       [](const RunConfig& c) { return std::to_string(c.model.t_max); }},
      {"charset", [](RunConfig& c, const std::string& v) { c.model.charset = v; },
       [](const RunConfig& c) { return c.model.charset; }},
      {"img_h", [](RunConfig& c, const std::string& v) { c.model.backbone.img_h = c.render.img_h = to_size("img_h", v); },
       [](const RunConfig& c) { return std::to_string(c.model.backbone.img_h); }},
      {"img_w", [](RunConfig& c, const std::string& v) { c.model.backbone.img_w = c.render.img_w = to_size("img_w", v); },
       [](const RunConfig& c) { return std::to_string(c.model.backbone.img_w); }},
      {"e", [](RunConfig& c, const std::string& v) { c.model.backbone.e = to_size("e", v); },
       [](const RunConfig& c) { return std::to_string(c.model.backbone.e); }},
      {"heads", [](RunConfig& c, const std::string& v) { c.model.backbone.heads = to_size("heads", v); },
       [](const RunConfig& c) { return std::to_string(c.model.backbone.heads); }},
      {"mix_blocks", [](RunConfig& c, const std::string& v) { c.model.backbone.n_mix_blocks = to_size("mix_blocks", v); },
       [](const RunConfig& c) { return std::to_string(c.model.backbone.n_mix_blocks); }},
      {"periodic_padding",
       [](RunConfig& c, const std::string& v) { c.model.backbone.periodic_padding = to_bool("periodic_padding", v); },
       [](const RunConfig& c) { return std::string(c.model.backbone.periodic_padding ? "true" : "false"); }},
      {"lr", [](RunConfig& c, const std::string& v) { c.model.optimizer.lr = to_double("lr", v); },
       [](const RunConfig& c) { return fmt(c.model.optimizer.lr); }},
      {"beta1", [](RunConfig& c, const std::string& v) { c.model.optimizer.beta1 = to_double("beta1", v); },
       [](const RunConfig& c) { return fmt(c.model.optimizer.beta1); }},
      {"beta2", [](RunConfig& c, const std::string& v) { c.model.optimizer.beta2 = to_double("beta2", v); },
       [](const RunConfig& c) { return fmt(c.model.optimizer.beta2); }},
      {"adam_eps", [](RunConfig& c, const std::string& v) { c.model.optimizer.eps = to_double("adam_eps", v); },
       [](const RunConfig& c) { return fmt(c.model.optimizer.eps); }},
      {"epochs", [](RunConfig& c, const std::string& v) { c.model.schedule.total_epochs = to_size("epochs", v); },
       [](const RunConfig& c) { return std::to_string(c.model.schedule.total_epochs); }},
      {"mask_on_epoch", [](RunConfig& c, const std::string& v) { c.model.schedule.mask_on_epoch = to_size("mask_on_epoch", v); },
       [](const RunConfig& c) { return std::to_string(c.model.schedule.mask_on_epoch); }},
      {"lr_decay_epoch",
       [](RunConfig& c, const std::string& v) { c.model.schedule.lr_decay_epoch = to_size("lr_decay_epoch", v); },
       [](const RunConfig& c) { return std::to_string(c.model.schedule.lr_decay_epoch); }},
      {"decayed_lr", [](RunConfig& c, const std::string& v) { c.model.schedule.decayed_lr = to_double("decayed_lr", v); },
       [](const RunConfig& c) { return fmt(c.model.schedule.decayed_lr); }},
      {"warmup_steps", [](RunConfig& c, const std::string& v) { c.model.schedule.warmup_steps = to_size("warmup_steps", v); },
       [](const RunConfig& c) { return std::to_string(c.model.schedule.warmup_steps); }},
      {"batch_size", [](RunConfig& c, const std::string& v) { c.model.schedule.batch_size = to_size("batch_size", v); },
       [](const RunConfig& c) { return std::to_string(c.model.schedule.batch_size); }},
      {"mask", [](RunConfig& c, const std::string& v) { c.mask_mode = parse_mask_mode(v); },
       [](const RunConfig& c) { return to_string(c.mask_mode); }},
      {"train_samples", [](RunConfig& c, const std::string& v) { c.train_samples = to_size("train_samples", v); },
       [](const RunConfig& c) { return std::to_string(c.train_samples); }},
      {"test_samples", [](RunConfig& c, const std::string& v) { c.test_samples = to_size("test_samples", v); },
       [](const RunConfig& c) { return std::to_string(c.test_samples); }},
      {"vocab",
       [](RunConfig& c, const std::string& v) { c.vocab = split_list(v); },
       [](const RunConfig& c) {
         std::string out;
         for (std::size_t i = 0; i < c.vocab.size(); ++i) out += (i ? "," : "") + c.vocab[i];
         return out;
       }},
      {"noise", [](RunConfig& c, const std::string& v) { c.render.noise = to_double("noise", v); },
       [](const RunConfig& c) { return fmt(c.render.noise); }},
      {"min_scale", [](RunConfig& c, const std::string& v) { c.render.min_scale = to_double("min_scale", v); },
       [](const RunConfig& c) { return fmt(c.render.min_scale); }},
      {"max_scale", [](RunConfig& c, const std::string& v) { c.render.max_scale = to_double("max_scale", v); },
       [](const RunConfig& c) { return fmt(c.render.max_scale); }},
      {"gap_jitter", [](RunConfig& c, const std::string& v) { c.render.gap_jitter = to_int("gap_jitter", v); },
       [](const RunConfig& c) { return std::to_string(c.render.gap_jitter); }},
      {"max_x_offset", [](RunConfig& c, const std::string& v) { c.render.max_x_offset = to_int("max_x_offset", v); },
       [](const RunConfig& c) { return std::to_string(c.render.max_x_offset); }},
      {"min_ink", [](RunConfig& c, const std::string& v) { c.render.min_ink = to_double("min_ink", v); },
       [](const RunConfig& c) { return fmt(c.render.min_ink); }},
      {"eval_threads", [](RunConfig& c, const std::string& v) { c.eval_threads = to_size("eval_threads", v); },
       [](const RunConfig& c) { return std::to_string(c.eval_threads); }},
  };
  return table;
}

}  // namespace

DatasetSpec RunConfig::dataset_spec() const {
  DatasetSpec spec;
  spec.vocab = vocab;
  spec.charset = Charset(model.charset);
  spec.t_max = model.t_max;
  spec.render = render;
  spec.render.img_h = model.backbone.img_h;
  spec.render.img_w = model.backbone.img_w;
  return spec;
}

void RunConfig::validate() const {
  model.validate();
  if (model.backbone.channels != 1) throw ConfigError("the synthetic data is grayscale; channels must be 1");
  if (vocab.empty()) throw ConfigError("vocab must not be empty");
  if (train_samples == 0) throw ConfigError("train_samples must be positive");
  if (render.min_scale <= 0 || render.max_scale < render.min_scale) throw ConfigError("need 0 < min_scale <= max_scale");
  if (render.noise < 0) throw ConfigError("noise must be non-negative");
}

std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& origin) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected `key = value`");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (!out.emplace(key, value).second) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key " + key);
    }
  }
  return out;
}

std::map<std::string, std::string> read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str(), path.string());
}

void apply_config(RunConfig& cfg, const std::map<std::string, std::string>& values) {
  for (const auto& [key, value] : values) {
    const auto& table = fields();
    auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return key == f.key; });
    if (it == table.end()) throw ConfigError("unknown config key \"" + key + "\"");
    it->set(cfg, value);
  }
}

std::vector<std::string> known_config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.emplace_back(f.key);
  return out;
}

std::string format_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(cfg) + "\n";
  return out;
}

}  // namespace lpv::inline LPV_NS
