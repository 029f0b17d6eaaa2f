#include "cst/config.hpp"

#include "cst/errors.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

namespace cst {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string fmt_bool(bool v) { return v ? "true" : "false"; }

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  }
}

template <typename Int>
Int parse_int(const std::string& key, const std::string& v) {
  Int out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

struct Field {
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&, const std::string&)> set;
};

#define CST_FIELD_PATH(name, member)                                                             \
  {name, Field{[](const TrainConfig& c) { return c.member.string(); },                           \
               [](TrainConfig& c, const std::string&, const std::string& v) { c.member = v; }}}
#define CST_FIELD_STR(name, member)                                                              \
  {name, Field{[](const TrainConfig& c) { return c.member; },                                    \
               [](TrainConfig& c, const std::string&, const std::string& v) { c.member = v; }}}
#define CST_FIELD_DBL(name, member)                                                              \
  {name, Field{[](const TrainConfig& c) { return fmt_double(c.member); },                        \
               [](TrainConfig& c, const std::string& k, const std::string& v) { c.member = parse_double(k, v); }}}
#define CST_FIELD_INT(name, member)                                                              \
  {name, Field{[](const TrainConfig& c) { return std::to_string(c.member); },                    \
               [](TrainConfig& c, const std::string& k, const std::string& v) {                  \
                 c.member = parse_int<decltype(c.member)>(k, v);                                 \
               }}}
#define CST_FIELD_BOOL(name, member)                                                             \
  {name, Field{[](const TrainConfig& c) { return fmt_bool(c.member); },                          \
               [](TrainConfig& c, const std::string& k, const std::string& v) { c.member = parse_bool(k, v); }}}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      CST_FIELD_PATH("data_dir", data_dir),
      CST_FIELD_PATH("run_dir", run_dir),
      CST_FIELD_PATH("resume_from", resume_from),
      CST_FIELD_INT("image_size", image_size),
      CST_FIELD_INT("batch_size", batch_size),
      CST_FIELD_INT("epochs_total", epochs_total),
      CST_FIELD_INT("epochs_constant_lr", epochs_constant_lr),
      CST_FIELD_DBL("lr", lr),
      CST_FIELD_DBL("adam_beta1", adam_beta1),
      CST_FIELD_DBL("adam_beta2", adam_beta2),
      CST_FIELD_INT("seed", seed),
      CST_FIELD_INT("checkpoint_every", checkpoint_every),
      CST_FIELD_INT("max_train_images", max_train_images),
      CST_FIELD_INT("threads", threads),
      CST_FIELD_BOOL("verbose", verbose),
      CST_FIELD_DBL("cst.lambda1", cst.lambda1),
      CST_FIELD_DBL("cst.lambda2", cst.lambda2),
      CST_FIELD_DBL("cst.epsilon", cst.epsilon),
      CST_FIELD_BOOL("cst.symmetric", cst_symmetric),
      CST_FIELD_BOOL("cst.detach_maps", cst_detach_maps),
      CST_FIELD_BOOL("cst.per_image_rotation", per_image_rotation),
      CST_FIELD_BOOL("ablation.disable_cur", disable_cur),
      CST_FIELD_BOOL("ablation.disable_rot", disable_rot),
      CST_FIELD_DBL("baseline.lambda_cyc", baseline.lambda_cyc),
      CST_FIELD_DBL("baseline.lambda_idt", baseline.lambda_idt),
      CST_FIELD_BOOL("baseline.use_identity", baseline.use_identity),
      CST_FIELD_INT("pool_size", pool_size),
      CST_FIELD_INT("generator.base_channels", generator.base_channels),
      CST_FIELD_INT("generator.n_resblocks", generator.n_resblocks),
      CST_FIELD_INT("generator.downsamples", generator.downsamples),
      CST_FIELD_INT("generator.channels", generator.channels),
      CST_FIELD_INT("discriminator.base_channels", discriminator.base_channels),
      CST_FIELD_INT("discriminator.n_layers", discriminator.n_layers),
      CST_FIELD_STR("cem.backend", cem_backend),
      CST_FIELD_INT("perceptual.seed", perceptual_seed),
      CST_FIELD_PATH("perceptual.weights", perceptual_weights),
      CST_FIELD_BOOL("perceptual.polarity_invariant", perceptual_polarity_invariant),
  };
  return table;
}

#undef CST_FIELD_PATH
#undef CST_FIELD_STR
#undef CST_FIELD_DBL
#undef CST_FIELD_INT
#undef CST_FIELD_BOOL

const Field& field(const std::string& key) {
  for (const auto& [k, f] : fields())
    if (k == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

bool is_location_key(const std::string& k) { return k == "data_dir" || k == "run_dir" || k == "resume_from"; }

}  // namespace

std::string fnv1a_hex(const std::string& bytes) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

void TrainConfig::validate() const {
  if (image_size <= 0 || batch_size <= 0) throw ConfigError("image_size and batch_size must be > 0");
  if (epochs_total <= 0) throw ConfigError("epochs_total must be > 0");
  if (epochs_constant_lr < 0 || epochs_constant_lr > epochs_total)
    throw ConfigError("epochs_constant_lr must lie in [0, epochs_total]");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw ConfigError("adam betas must lie in [0, 1)");
  if (checkpoint_every < 0 || max_train_images < 0 || pool_size < 0 || threads <= 0)
    throw ConfigError("checkpoint_every, max_train_images, pool_size must be >= 0 and threads > 0");
  if (image_size % generator.stride() != 0)
    throw ConfigError("image_size must be divisible by the generator stride " + std::to_string(generator.stride()));
  try {
    cst.validate();
    baseline.validate();
    generator.validate();
    discriminator.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  if (generator.channels != discriminator.channels)
    throw ConfigError("generator and discriminator channel counts differ");
}

void TrainConfig::set(const std::string& key, const std::string& value) { field(key).set(*this, key, value); }

std::string TrainConfig::get(const std::string& key) const { return field(key).get(*this); }

const std::vector<std::string>& TrainConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [name, f] : fields()) out.push_back(name);
    return out;
  }();
  return k;
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os << "version = " << kVersion << '\n';
  for (const auto& [k, f] : fields()) os << k << " = " << f.get(*this) << '\n';
  return os.str();
}

TrainConfig TrainConfig::from_text(const std::string& text) {
  TrainConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  bool saw_version = false;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "version") {
      if (parse_int<int>(key, value) != kVersion) throw ConfigError("unsupported config version " + value);
      saw_version = true;
      continue;
    }
    cfg.set(key, value);
  }
  if (!saw_version) throw ConfigError("config is missing the 'version' key");
  return cfg;
}

TrainConfig TrainConfig::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot read config file " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

void TrainConfig::save(const std::filesystem::path& file) const {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw IoError("cannot write config " + file.string());
  out << to_text();
}

void TrainConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override must be key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::string TrainConfig::fingerprint() const {
  std::string canon;
  for (const auto& [k, f] : fields()) {
    if (is_location_key(k) || k == "verbose") continue;
    canon += k + "=" + f.get(*this) + "\n";
  }
  return fnv1a_hex(canon);
}

torch::Device default_device() {
  const char* env = std::getenv("CST_DEVICE");
  const std::string name = env ? env : "cpu";
  if (name.empty() || name == "cpu") return torch::kCPU;
  if (name.rfind("cuda", 0) == 0) {
    if (!torch::cuda::is_available()) throw ConfigError("CST_DEVICE=" + name + " but CUDA is not available");
    return torch::Device(name);
  }
  throw ConfigError("unknown CST_DEVICE '" + name + "'");
}

}  // namespace cst
