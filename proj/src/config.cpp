#include "dcnt/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "dcnt/errors.hpp"

namespace dcnt::config {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = s.find(',', start);
    out.push_back(trim(s.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::uint64_t to_uint(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (v.empty() || ec != std::errc{} || p != end)
    throw ConfigError("config: " + std::string(key) + " expects a non-negative integer, got '" + std::string(v) + "'");
  return out;
}

double to_double(std::string_view key, std::string_view v) {
  const std::string s(v);
  char* end = nullptr;
  const double out = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(out))
    throw ConfigError("config: " + std::string(key) + " expects a number, got '" + s + "'");
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: " + std::string(key) + " expects true or false, got '" + std::string(v) + "'");
}

std::string fmt(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed);
  if (ec != std::errc{}) throw ConfigError("config: cannot format value");
  return std::string(buf, end);
}

std::string fmt(bool v) { return v ? "true" : "false"; }

template <class T, std::size_t N>
std::string fmt_list(const std::array<T, N>& a) {
  std::string out;
  for (std::size_t i = 0; i < N; ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>) {
      out += fmt(a[i]);
    } else {
      out += std::to_string(a[i]);
    }
  }
  return out;
}

template <class T, std::size_t N>
void parse_list(std::string_view key, std::string_view v, std::array<T, N>& dst) {
  const auto parts = split_list(v);
  if (parts.size() != N)
    throw ConfigError("config: " + std::string(key) + " expects " + std::to_string(N) + " comma-separated values");
  for (std::size_t i = 0; i < N; ++i) {
    if constexpr (std::is_floating_point_v<T>) {
      dst[i] = to_double(key, parts[i]);
    } else {
      dst[i] = static_cast<T>(to_uint(key, parts[i]));
    }
  }
}

struct Entry {
  const char* key;
  const char* doc;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view, std::string_view)> set;
};

#define UINT_ENTRY(KEY, FIELD, DOC)                                                               \
  Entry {                                                                                         \
    KEY, DOC, [](const RunConfig& c) { return std::to_string(c.FIELD); },                         \
        [](RunConfig& c, std::string_view k, std::string_view v) {                                \
          c.FIELD = static_cast<decltype(c.FIELD)>(to_uint(k, v));                                \
        }                                                                                         \
  }
#define REAL_ENTRY(KEY, FIELD, DOC)                                                                     \
  Entry {                                                                                               \
    KEY, DOC, [](const RunConfig& c) { return fmt(c.FIELD); },                                          \
        [](RunConfig& c, std::string_view k, std::string_view v) { c.FIELD = to_double(k, v); }         \
  }
#define BOOL_ENTRY(KEY, FIELD, DOC)                                                                     \
  Entry {                                                                                               \
    KEY, DOC, [](const RunConfig& c) { return fmt(c.FIELD); },                                          \
        [](RunConfig& c, std::string_view k, std::string_view v) { c.FIELD = to_bool(k, v); }           \
  }
#define LIST_ENTRY(KEY, FIELD, DOC)                                                                     \
  Entry {                                                                                               \
    KEY, DOC, [](const RunConfig& c) { return fmt_list(c.FIELD); },                                     \
        [](RunConfig& c, std::string_view k, std::string_view v) { parse_list(k, v, c.FIELD); }         \
  }

const std::vector<Entry>& table() {
  static const std::vector<Entry> entries{
      UINT_ENTRY("trispec.G", groups, "band groups; the set holds C(G,3) images"),
      BOOL_ENTRY("trispec.wavelength_descending", wavelength_descending, "mirror group indices"),
      LIST_ENTRY("backbone.widths", model.backbone.widths, "channels of the four conv stages"),
      LIST_ENTRY("backbone.convs", model.backbone.convs, "3x3 convs per stage"),
      LIST_ENTRY("backbone.mean", model.backbone.mean, "per-channel input mean after /255"),
      LIST_ENTRY("backbone.std", model.backbone.std, "per-channel input std after /255"),
      UINT_ENTRY("dcm.C", model.dcm.channels, "reduced feature channels"),
      UINT_ENTRY("dcm.Z", model.dcm.areas, "homogeneous areas"),
      UINT_ENTRY("dcm.T", model.dcm.iterations, "soft clustering iterations"),
      UINT_ENTRY("dcm.heads", model.dcm.heads, "attention heads"),
      UINT_ENTRY("dcm.mlp_ratio", model.dcm.mlp_ratio, "MLP hidden width / C"),
      BOOL_ENTRY("dcm.use_F", model.dcm.use_f, "concatenate the input feature"),
      BOOL_ENTRY("dcm.use_RAC", model.dcm.use_rac, "regional context branch"),
      BOOL_ENTRY("dcm.use_GAC", model.dcm.use_gac, "global context branch"),
      UINT_ENTRY("model.classes", model.classes, "output classes; 0 = largest training label"),
      UINT_ENTRY("model.seed", model.seed, "weight initialisation seed"),
      UINT_ENTRY("train.epochs", train.epochs, "passes over the tri-spectral set"),
      UINT_ENTRY("train.batch", train.batch_size, "images per iteration"),
      REAL_ENTRY("train.lr", train.initial_lr, "initial backbone learning rate"),
      REAL_ENTRY("train.momentum", train.momentum, "SGD momentum"),
      REAL_ENTRY("train.weight_decay", train.weight_decay, "L2 weight decay"),
      REAL_ENTRY("train.poly_power", train.poly_power, "poly schedule exponent"),
      REAL_ENTRY("train.head_lr_mult", train.head_lr_mult, "learning-rate multiplier of new layers"),
      UINT_ENTRY("train.seed", train.seed, "shuffle and validation split seed"),
      REAL_ENTRY("train.val_fraction", train.val_fraction, "held-out share of images"),
  };
  return entries;
}

#undef UINT_ENTRY
#undef REAL_ENTRY
#undef BOOL_ENTRY
#undef LIST_ENTRY

const Entry& find(std::string_view key) {
  for (const auto& e : table())
    if (key == e.key) return e;
  throw ConfigError("config: unknown key '" + std::string(key) + "'");
}

}  // namespace

std::vector<KeyInfo> keys() {
  const RunConfig defaults;
  std::vector<KeyInfo> out;
  for (const auto& e : table()) out.push_back({e.key, e.get(defaults), e.doc});
  return out;
}

std::string describe_keys() {
  std::string out;
  for (const auto& k : keys()) {
    std::string line = k.key + " = " + k.default_value;
    if (line.size() < 40) line.resize(40, ' ');
    out += "  " + line + " # " + k.doc + "\n";
  }
  return out;
}

void set(RunConfig& cfg, std::string_view key, std::string_view value) { find(key).set(cfg, key, value); }

std::string get(const RunConfig& cfg, std::string_view key) { return find(key).get(cfg); }

RunConfig parse(std::string_view text, RunConfig cfg) {
  std::size_t line_no = 0, pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    try {
      set(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& e : table()) out += std::string(e.key) + " = " + e.get(cfg) + "\n";
  return out;
}

}  // namespace dcnt::config
