#include "gatescale/harness/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "gatescale/numerics/errors.hpp"

namespace gatescale::harness {

ConfigError::ConfigError(const std::string& what, std::size_t line_, std::size_t column_)
    : std::runtime_error(line_ ? "line " + std::to_string(line_) + ", column " + std::to_string(column_) + ": " + what
                               : what),
      line(line_),
      column(column_) {}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string format_csv_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

// Thrown by value parsers; parse() adds the position.
struct BadValue {
  std::string what;
};

template <typename T>
T parse_integer(std::string_view s) {
  T v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size() || s.empty())
    throw BadValue{"expected an integer, got '" + std::string(s) + "'"};
  return v;
}

double parse_real(std::string_view s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size() || s.empty())
    throw BadValue{"expected a number, got '" + std::string(s) + "'"};
  return v;
}

bool parse_bool(std::string_view s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw BadValue{"expected true or false, got '" + std::string(s) + "'"};
}

std::string_view trim(std::string_view s) {
  const auto ws = [](char c) { return c == ' ' || c == '\t' || c == '\r'; };
  while (!s.empty() && ws(s.front())) s.remove_prefix(1);
  while (!s.empty() && ws(s.back())) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_list(std::string_view s) {
  std::vector<std::string_view> out;
  if (trim(s).empty()) return out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == ',') {
      out.push_back(trim(s.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

template <typename T, typename F>
std::vector<T> parse_list(std::string_view s, F item) {
  std::vector<T> out;
  for (std::string_view part : split_list(s)) out.push_back(item(part));
  return out;
}

template <typename T, typename F>
std::string join(const std::vector<T>& v, F fmt) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += fmt(v[i]);
  }
  return out;
}

template <typename F>
auto wrap_contract(F f) {
  try {
    return f();
  } catch (const ContractError& e) {
    throw BadValue{e.what()};
  }
}

struct Field {
  std::string_view key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define GS_SIZE(key, member)                                                                       \
  Field {                                                                                          \
    key, [](RunConfig& c, std::string_view v) { c.member = parse_integer<std::size_t>(v); },       \
        [](const RunConfig& c) { return std::to_string(c.member); }                                \
  }
#define GS_LONG(key, member)                                                                       \
  Field {                                                                                          \
    key, [](RunConfig& c, std::string_view v) { c.member = parse_integer<long>(v); },              \
        [](const RunConfig& c) { return std::to_string(c.member); }                                \
  }
#define GS_REAL(key, member)                                                                       \
  Field {                                                                                          \
    key, [](RunConfig& c, std::string_view v) { c.member = parse_real(v); },                       \
        [](const RunConfig& c) { return format_double(c.member); }                                 \
  }
#define GS_TEXT(key, member)                                                                       \
  Field {                                                                                          \
    key, [](RunConfig& c, std::string_view v) { c.member = std::string(v); },                      \
        [](const RunConfig& c) { return c.member; }                                                \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"seed", [](RunConfig& c, std::string_view v) { c.seed = parse_integer<std::uint64_t>(v); },
            [](const RunConfig& c) { return std::to_string(c.seed); }},
      GS_TEXT("checkpoint", checkpoint),

      Field{"arch.variant",
            [](RunConfig& c, std::string_view v) { c.arch.variant = wrap_contract([&] { return dit::parse_variant(v); }); },
            [](const RunConfig& c) { return std::string(dit::to_string(c.arch.variant)); }},
      GS_SIZE("arch.depth", arch.depth),
      GS_SIZE("arch.model_dim", arch.model_dim),
      GS_SIZE("arch.heads", arch.heads),
      GS_SIZE("arch.text_tokens", arch.text_tokens),
      GS_SIZE("arch.class_count", arch.class_count),
      GS_SIZE("arch.ff_mult", arch.ff_mult),
      Field{"arch.positional_embedding",
            [](RunConfig& c, std::string_view v) { c.arch.positional_embedding = parse_bool(v); },
            [](const RunConfig& c) { return std::string(c.arch.positional_embedding ? "true" : "false"); }},

      GS_LONG("train.steps", train.steps),
      GS_SIZE("train.batch", train.batch),
      GS_REAL("train.lr", train.lr),
      GS_REAL("train.beta1", train.beta1),
      GS_REAL("train.beta2", train.beta2),
      GS_REAL("train.adam_eps", train.adam_eps),
      GS_REAL("train.cond_drop", train.cond_drop),
      GS_REAL("train.noise_std", train.data.noise_std),

      Field{"reward",
            [](RunConfig& c, std::string_view v) {
              wrap_contract([&] { return rewards::RewardSpec::parse(v); });
              c.reward = std::string(v);
            },
            [](const RunConfig& c) { return c.reward; }},
      GS_SIZE("reward.reference_count", reference_count),

      GS_SIZE("eval.conditions", eval_conditions),
      Field{"eval.seeds",
            [](RunConfig& c, std::string_view v) { c.eval_seeds = parse_list<std::uint64_t>(v, parse_integer<std::uint64_t>); },
            [](const RunConfig& c) { return join(c.eval_seeds, [](std::uint64_t s) { return std::to_string(s); }); }},
      GS_SIZE("eval.nfe", eval_nfe),
      Field{"eval.nfe_list",
            [](RunConfig& c, std::string_view v) { c.eval_nfe_list = parse_list<std::size_t>(v, parse_integer<std::size_t>); },
            [](const RunConfig& c) { return join(c.eval_nfe_list, [](std::size_t s) { return std::to_string(s); }); }},
      GS_TEXT("eval.calibration", eval_calibration),

      Field{"sweep.scales", [](RunConfig& c, std::string_view v) { c.sweep_scales = parse_list<double>(v, parse_real); },
            [](const RunConfig& c) { return join(c.sweep_scales, format_double); }},

      Field{"calibrate.granularity",
            [](RunConfig& c, std::string_view v) {
              c.granularity = wrap_contract([&] { return calibration::parse_granularity(v); });
            },
            [](const RunConfig& c) { return std::string(calibration::to_string(c.granularity)); }},
      GS_SIZE("calibrate.nfe", nfe_train),
      GS_SIZE("calibrate.models", models),
      Field{"calibrate.second_role",
            [](RunConfig& c, std::string_view v) { c.second_role = wrap_contract([&] { return calibration::parse_role(v); }); },
            [](const RunConfig& c) { return std::string(calibration::to_string(c.second_role)); }},
      GS_REAL("calibrate.sigma0", sigma0),
      GS_SIZE("calibrate.population", population),
      GS_SIZE("calibrate.bucket_size", bucket_size),
      GS_SIZE("calibrate.heldout_size", heldout_size),
      GS_LONG("calibrate.min_generations", min_generations),
      GS_LONG("calibrate.max_generations", max_generations),
      GS_REAL("calibrate.sigma_stop", sigma_stop),
      GS_REAL("calibrate.plateau_epsilon", plateau_epsilon),
      GS_SIZE("calibrate.plateau_window", plateau_window),
      GS_SIZE("calibrate.max_dimension", max_dimension),
  };
  return table;
}

#undef GS_SIZE
#undef GS_LONG
#undef GS_REAL
#undef GS_TEXT

const Field* find_field(std::string_view key) {
  for (const Field& f : fields())
    if (f.key == key) return &f;
  return nullptr;
}

void check(const RunConfig& c) {
  try {
    c.arch.validate();
  } catch (const ContractError& e) {
    throw ConfigError(e.what());
  }
  if (c.models != 1 && c.models != 2) throw ConfigError("calibrate.models must be 1 or 2");
  if (c.eval_nfe == 0 || c.nfe_train == 0) throw ConfigError("nfe must be >= 1");
  for (std::size_t n : c.eval_nfe_list)
    if (n == 0) throw ConfigError("eval.nfe_list entries must be >= 1");
  if (!(c.sigma0 > 0.0)) throw ConfigError("calibrate.sigma0 must be > 0");
  if (c.eval_seeds.empty()) throw ConfigError("eval.seeds must not be empty");
  if (c.eval_conditions < 2) throw ConfigError("eval.conditions must be >= 2");
  if (c.bucket_size == 0 || c.heldout_size == 0) throw ConfigError("bucket sizes must be >= 1");
  if (c.train.steps < 0) throw ConfigError("train.steps must be >= 0");
  if (c.reference_count == 0) throw ConfigError("reward.reference_count must be >= 1");
}

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
  const Field* f = find_field(key);
  if (!f) throw ConfigError("unknown key '" + std::string(key) + "'");
  try {
    f->set(*this, value);
  } catch (const BadValue& e) {
    throw ConfigError(std::string(key) + ": " + e.what);
  }
}

RunConfig RunConfig::parse(std::string_view text) {
  RunConfig c;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    if (trim(line).empty()) {
      if (end == text.size()) break;
      continue;
    }
    const std::size_t key_col = line.find_first_not_of(" \t") + 1;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError("expected 'key = value'", line_no, key_col);
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view raw_value = line.substr(eq + 1);
    const std::string_view value = trim(raw_value);
    const std::size_t lead = raw_value.find_first_not_of(" \t");
    const std::size_t value_col = eq + 2 + (lead == std::string_view::npos ? 0 : lead);
    const Field* f = find_field(key);
    if (!f) throw ConfigError("unknown key '" + std::string(key) + "'", line_no, key_col);
    if (!seen.insert(std::string(key)).second)
      throw ConfigError("duplicate key '" + std::string(key) + "'", line_no, key_col);
    try {
      f->set(c, value);
    } catch (const BadValue& e) {
      throw ConfigError(std::string(key) + ": " + e.what, line_no, value_col);
    }
    if (end == text.size()) break;
  }
  check(c);
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string RunConfig::manifest() const {
  std::string out;
  for (const Field& f : fields()) {
    out += f.key;
    out += " = ";
    out += f.get(*this);
    out += '\n';
  }
  return out;
}

std::vector<std::size_t> RunConfig::classes() const {
  std::vector<std::size_t> out(arch.class_count);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = i;
  return out;
}

}  // namespace gatescale::harness
