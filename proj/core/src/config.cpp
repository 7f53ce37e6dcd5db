#include "imnd/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace imnd {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void fail(const std::string& origin, int line, const std::string& msg) {
  std::ostringstream os;
  os << origin;
  if (line > 0) os << ":" << line;
  os << ": " << msg;
  throw ConfigError(os.str());
}

double to_double(const std::string& v, const std::string& origin, int line,
                 const std::string& key) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return d;
  } catch (const std::exception&) {
    fail(origin, line, "key '" + key + "': expected a number, got '" + v + "'");
  }
}

long long to_int(const std::string& v, const std::string& origin, int line,
                 const std::string& key) {
  long long out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    fail(origin, line, "key '" + key + "': expected an integer, got '" + v + "'");
  return out;
}

std::uint64_t to_uint(const std::string& v, const std::string& origin, int line,
                      const std::string& key) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    fail(origin, line, "key '" + key + "': expected an unsigned integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& v, const std::string& origin, int line,
             const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  fail(origin, line, "key '" + key + "': expected a boolean, got '" + v + "'");
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

std::vector<int> int_list(const std::string& v, const std::string& origin, int line,
                          const std::string& key) {
  std::vector<int> out;
  for (const auto& s : split_list(v)) out.push_back((int)to_int(s, origin, line, key));
  if (out.empty()) fail(origin, line, "key '" + key + "': empty list");
  return out;
}

Range to_range(const std::string& v, const std::string& origin, int line,
               const std::string& key) {
  const auto parts = split_list(v);
  if (parts.size() == 1) {
    const double x = to_double(parts[0], origin, line, key);
    return {x, x};
  }
  if (parts.size() == 2) {
    return {to_double(parts[0], origin, line, key), to_double(parts[1], origin, line, key)};
  }
  fail(origin, line, "key '" + key + "': expected 'lo,hi' or a single value");
}

// Stable name hash (FNV-1a); std::hash is implementation-defined and would
// break cross-platform reproducibility of derived domain seeds.
std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

DomainSpec& domain_slot(RunConfig& cfg, const std::string& name) {
  for (std::size_t i = 0; i < cfg.domains.size(); ++i)
    if (cfg.domains[i].name == name) return cfg.domains[i];
  DomainSpec spec;
  spec.name = name;
  cfg.domains.push_back(spec);
  cfg.domain_seeds.push_back(kDeriveDomainSeed);
  return cfg.domains.back();
}

void set_key(RunConfig& cfg, const std::string& key, const std::string& value,
             const std::string& origin, int line) {
  if (key == "data_dir") { cfg.data_dir = value; return; }
  if (key == "out_dir") { cfg.out_dir = value; return; }
  if (key == "seed") {
    cfg.seed = to_uint(value, origin, line, key);
    cfg.train.seed = cfg.seed;
    return;
  }
  if (key == "threads") { cfg.threads = (int)to_int(value, origin, line, key); return; }
  if (key == "mode") {
    try {
      cfg.train.mode = parse_mode(value);
    } catch (const std::exception& e) {
      fail(origin, line, e.what());
    }
    return;
  }

  if (key == "split.train") { cfg.train_names = split_list(value); return; }
  if (key == "split.test") { cfg.test_names = split_list(value); return; }
  if (key == "split.support_seconds") {
    cfg.train.support_seconds = to_double(value, origin, line, key);
    return;
  }

  if (key == "train.alpha") { cfg.train.alpha = to_double(value, origin, line, key); return; }
  if (key == "train.beta") { cfg.train.beta = to_double(value, origin, line, key); return; }
  if (key == "train.inner_steps") { cfg.train.inner_steps = (int)to_int(value, origin, line, key); return; }
  if (key == "train.task_batch") { cfg.train.task_batch = (int)to_int(value, origin, line, key); return; }
  if (key == "train.outer_iters") { cfg.train.outer_iters = (int)to_int(value, origin, line, key); return; }
  if (key == "train.window_len") { cfg.train.window_len = (std::size_t)to_int(value, origin, line, key); return; }
  if (key == "train.window_stride") { cfg.train.window_stride = (std::size_t)to_int(value, origin, line, key); return; }
  if (key == "train.max_windows") { cfg.train.max_windows = (int)to_int(value, origin, line, key); return; }
  if (key == "train.first_order") { cfg.train.first_order = to_bool(value, origin, line, key); return; }
  if (key == "adapt.steps") { cfg.train.adapt_steps = (int)to_int(value, origin, line, key); return; }
  if (key == "adapt.alpha") { cfg.train.adapt_alpha = to_double(value, origin, line, key); return; }
  if (key == "train.outer_include_support") {
    cfg.train.outer_include_support = to_bool(value, origin, line, key);
    return;
  }

  if (key == "model.d_embed") { cfg.train.model.d_embed = (int)to_int(value, origin, line, key); return; }
  if (key == "model.mlp_hidden") { cfg.train.model.mlp_hidden = int_list(value, origin, line, key); return; }
  if (key == "model.conv_channels") { cfg.train.model.conv_channels = (int)to_int(value, origin, line, key); return; }
  if (key == "model.kernel") { cfg.train.model.kernel = (int)to_int(value, origin, line, key); return; }
  if (key == "model.dilations") { cfg.train.model.dilations = int_list(value, origin, line, key); return; }

  if (key == "loss.gamma") { cfg.train.loss.gamma = to_double(value, origin, line, key); return; }
  if (key == "loss.j_set") {
    cfg.train.loss.j_set.clear();
    for (int j : int_list(value, origin, line, key)) {
      if (j <= 0) fail(origin, line, "key '" + key + "': strides must be positive");
      cfg.train.loss.j_set.push_back((std::size_t)j);
    }
    return;
  }
  if (key == "loss.huber_delta") { cfg.train.loss.huber_delta = to_double(value, origin, line, key); return; }
  if (key == "loss.recon_noise_std") { cfg.train.loss.recon_noise_std = to_double(value, origin, line, key); return; }

  if (key.rfind("domain.", 0) == 0) {
    const std::string rest = key.substr(7);
    const auto dot = rest.find('.');
    if (dot == std::string::npos || dot == 0 || dot + 1 >= rest.size())
      fail(origin, line, "malformed domain key '" + key + "' (want domain.<name>.<field>)");
    const std::string name = rest.substr(0, dot);
    const std::string field = rest.substr(dot + 1);
    DomainSpec& d = domain_slot(cfg, name);
    if (field == "profile") { d.profile = value; return; }
    if (field == "duration") { d.duration_s = to_double(value, origin, line, key); return; }
    if (field == "rate") { d.rate_hz = to_double(value, origin, line, key); return; }
    if (field == "seed") {
      for (std::size_t i = 0; i < cfg.domains.size(); ++i)
        if (cfg.domains[i].name == name)
          cfg.domain_seeds[i] = to_uint(value, origin, line, key);
      return;
    }
    if (field == "gyro_bias") { d.gyro_bias = to_range(value, origin, line, key); return; }
    if (field == "accel_bias") { d.accel_bias = to_range(value, origin, line, key); return; }
    if (field == "gyro_scale_dev") { d.gyro_scale_dev = to_range(value, origin, line, key); return; }
    if (field == "misalign_dev") { d.misalign_dev = to_range(value, origin, line, key); return; }
    if (field == "gyro_noise_std") { d.gyro_noise_std = to_range(value, origin, line, key); return; }
    if (field == "accel_noise_std") { d.accel_noise_std = to_range(value, origin, line, key); return; }
    if (field == "gyro_walk_std") { d.gyro_walk_std = to_range(value, origin, line, key); return; }
    if (field == "g_sensitivity") { d.g_sensitivity = to_bool(value, origin, line, key); return; }
    fail(origin, line, "unknown domain field '" + field + "' in key '" + key + "'");
  }

  fail(origin, line, "unknown config key '" + key + "'");
}

std::string render_range(const Range& r) {
  std::ostringstream os;
  os.precision(17);
  os << r.lo << "," << r.hi;
  return os.str();
}

template <typename T>
std::string render_list(const std::vector<T>& v) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) os << ",";
    os << v[i];
  }
  return os.str();
}

}  // namespace

void RunConfig::validate() const {
  std::set<std::string> seen;
  for (const auto& d : domains) {
    try {
      d.validate();
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
    if (!seen.insert(d.name).second)
      throw ConfigError("duplicate domain '" + d.name + "'");
  }
  if (threads < 0) throw ConfigError("threads must be >= 0");
  try {
    train.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  // Split overlap is re-checked by make_meta_splits; catching it here keeps
  // the error at config-parse time.
  for (const auto& n : train_names)
    if (std::find(test_names.begin(), test_names.end(), n) != test_names.end())
      throw ConfigError("sequence '" + n + "' appears in both split.train and split.test");
}

std::uint64_t domain_seed(const RunConfig& cfg, std::size_t i) {
  if (i >= cfg.domains.size()) throw ConfigError("domain index out of range");
  if (cfg.domain_seeds[i] != kDeriveDomainSeed) return cfg.domain_seeds[i];
  // splitmix64 of the global seed, xor'd with a stable name hash
  std::uint64_t z = cfg.seed + 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  z = z ^ (z >> 31);
  return z ^ fnv1a(cfg.domains[i].name);
}

RunConfig parse_run_config_text(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    const std::string s = trim(raw);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      fail(origin, line, "expected 'key = value', got '" + s + "'");
    const std::string key = trim(s.substr(0, eq));
    const std::string value = trim(s.substr(eq + 1));
    if (key.empty()) fail(origin, line, "empty key");
    set_key(cfg, key, value, origin, line);
  }
  cfg.train.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

RunConfig parse_run_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config file " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config_text(ss.str(), file.string());
}

void apply_config_key(RunConfig& cfg, const std::string& key, const std::string& value,
                      const std::string& origin) {
  set_key(cfg, key, value, origin, 0);
  cfg.train.seed = cfg.seed;
}

std::string render_run_config(const RunConfig& cfg) {
  std::ostringstream os;
  os.precision(17);
  os << "data_dir = " << cfg.data_dir.string() << "\n";
  os << "out_dir = " << cfg.out_dir.string() << "\n";
  os << "seed = " << cfg.seed << "\n";
  os << "threads = " << cfg.threads << "\n";
  os << "mode = " << to_string(cfg.train.mode) << "\n";
  os << "split.train = " << render_list(cfg.train_names) << "\n";
  os << "split.test = " << render_list(cfg.test_names) << "\n";
  os << "split.support_seconds = " << cfg.train.support_seconds << "\n";
  os << "train.alpha = " << cfg.train.alpha << "\n";
  os << "train.beta = " << cfg.train.beta << "\n";
  os << "train.inner_steps = " << cfg.train.inner_steps << "\n";
  os << "train.task_batch = " << cfg.train.task_batch << "\n";
  os << "train.outer_iters = " << cfg.train.outer_iters << "\n";
  os << "train.window_len = " << cfg.train.window_len << "\n";
  os << "train.window_stride = " << cfg.train.window_stride << "\n";
  os << "train.max_windows = " << cfg.train.max_windows << "\n";
  os << "train.first_order = " << (cfg.train.first_order ? "true" : "false") << "\n";
  os << "train.outer_include_support = "
     << (cfg.train.outer_include_support ? "true" : "false") << "\n";
  os << "adapt.steps = " << cfg.train.adapt_steps << "\n";
  os << "adapt.alpha = " << cfg.train.adapt_alpha << "\n";
  os << "model.d_embed = " << cfg.train.model.d_embed << "\n";
  os << "model.mlp_hidden = " << render_list(cfg.train.model.mlp_hidden) << "\n";
  os << "model.conv_channels = " << cfg.train.model.conv_channels << "\n";
  os << "model.kernel = " << cfg.train.model.kernel << "\n";
  os << "model.dilations = " << render_list(cfg.train.model.dilations) << "\n";
  os << "loss.gamma = " << cfg.train.loss.gamma << "\n";
  os << "loss.j_set = " << render_list(cfg.train.loss.j_set) << "\n";
  os << "loss.huber_delta = " << cfg.train.loss.huber_delta << "\n";
  os << "loss.recon_noise_std = " << cfg.train.loss.recon_noise_std << "\n";
  for (std::size_t i = 0; i < cfg.domains.size(); ++i) {
    const DomainSpec& d = cfg.domains[i];
    const std::string p = "domain." + d.name + ".";
    os << p << "profile = " << d.profile << "\n";
    os << p << "duration = " << d.duration_s << "\n";
    os << p << "rate = " << d.rate_hz << "\n";
    os << p << "seed = " << domain_seed(cfg, i) << "\n";
    os << p << "gyro_bias = " << render_range(d.gyro_bias) << "\n";
    os << p << "accel_bias = " << render_range(d.accel_bias) << "\n";
    os << p << "gyro_scale_dev = " << render_range(d.gyro_scale_dev) << "\n";
    os << p << "misalign_dev = " << render_range(d.misalign_dev) << "\n";
    os << p << "gyro_noise_std = " << render_range(d.gyro_noise_std) << "\n";
    os << p << "accel_noise_std = " << render_range(d.accel_noise_std) << "\n";
    os << p << "gyro_walk_std = " << render_range(d.gyro_walk_std) << "\n";
    os << p << "g_sensitivity = " << (d.g_sensitivity ? "true" : "false") << "\n";
  }
  return os.str();
}

}  // namespace imnd
