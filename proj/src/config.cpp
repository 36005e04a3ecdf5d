#include "segnext/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace segnext {

void RunConfig::validate() const {
  model.validate();
  if (train.iters < 0) throw Error("train.iters must be >= 0");
  if (train.batch < 1) throw Error("train.batch must be >= 1");
  if (train.crop < Encoder::kMinInput) throw Error("train.crop must be >= " + std::to_string(Encoder::kMinInput));
  if (!(train.schedule.base_lr > 0.0)) throw Error("train.lr must be positive");
  if (train.schedule.power < 0.0) throw Error("train.power must be >= 0");
  if (train.schedule.warmup_iters < 0) throw Error("train.warmup_iters must be >= 0");
  if (train.eval_interval < 0 || train.checkpoint_interval < 0) throw Error("train intervals must be >= 0");
  if (train.threads < 1) throw Error("train.threads must be >= 1");
  if (data.train_samples < 1 || data.val_samples < 1) throw Error("data sample counts must be >= 1");
  if (data.size < 64) throw Error("data.size must be >= 64");
  if (eval.scales.empty()) throw Error("eval.scales must not be empty");
  for (double s : eval.scales) {
    if (!(s > 0.0)) throw Error("eval.scales must be positive");
  }
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

struct LineError {
  int line;
  std::string msg;
};

int64_t to_int(const std::string& v) {
  int64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw std::invalid_argument("expected an integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& v) {
  double out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw std::invalid_argument("expected a number, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("expected true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream is(v);
  while (std::getline(is, item, ',')) out.push_back(trim(item));
  return out;
}

std::array<int64_t, 4> to_int4(const std::string& v) {
  const auto parts = split_list(v);
  if (parts.size() != 4) throw std::invalid_argument("expected 4 comma-separated integers, got '" + v + "'");
  std::array<int64_t, 4> out{};
  for (size_t i = 0; i < 4; ++i) out[i] = to_int(parts[i]);
  return out;
}

std::string fmt_double(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, p);
}

using Setter = std::function<void(RunConfig&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    t["model"] = [](RunConfig& c, const std::string& v) { c.model = ModelConfig::preset(v); };
    t["seed"] = [](RunConfig& c, const std::string& v) {
      uint64_t s = 0;
      const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), s);
      if (ec != std::errc() || p != v.data() + v.size())
        throw std::invalid_argument("expected an unsigned 64-bit integer, got '" + v + "'");
      c.seed = s;
    };
    t["out_dir"] = [](RunConfig& c, const std::string& v) { c.out_dir = v; };

    t["model.preset"] = [](RunConfig& c, const std::string& v) { c.model = ModelConfig::preset(v); };
    t["model.channels"] = [](RunConfig& c, const std::string& v) {
      const auto a = to_int4(v);
      for (size_t i = 0; i < 4; ++i) c.model.stages[i].channels = a[i];
    };
    t["model.depths"] = [](RunConfig& c, const std::string& v) {
      const auto a = to_int4(v);
      for (size_t i = 0; i < 4; ++i) c.model.stages[i].depth = a[i];
    };
    t["model.expansions"] = [](RunConfig& c, const std::string& v) {
      const auto a = to_int4(v);
      for (size_t i = 0; i < 4; ++i) c.model.stages[i].expansion = a[i];
    };
    t["model.decoder_dim"] = [](RunConfig& c, const std::string& v) { c.model.decoder_dim = to_int(v); };
    t["model.num_classes"] = [](RunConfig& c, const std::string& v) { c.model.num_classes = to_int(v); };
    t["model.decoder"] = [](RunConfig& c, const std::string& v) { c.model.decoder = decoder_variant_from_string(v); };
    t["model.stage1_in_decoder"] = [](RunConfig& c, const std::string& v) { c.model.stage1_in_decoder = to_bool(v); };
    t["model.ham_rank"] = [](RunConfig& c, const std::string& v) { c.model.ham_rank = to_int(v); };
    t["model.ham_iters"] = [](RunConfig& c, const std::string& v) { c.model.ham_iters = to_int(v); };
    t["model.attention"] = [](RunConfig& c, const std::string& v) { c.model.attention = attention_kind_from_string(v); };
    t["model.drop_path"] = [](RunConfig& c, const std::string& v) { c.model.drop_path = to_double(v); };

    t["train.iters"] = [](RunConfig& c, const std::string& v) { c.train.iters = to_int(v); };
    t["train.batch"] = [](RunConfig& c, const std::string& v) { c.train.batch = to_int(v); };
    t["train.crop"] = [](RunConfig& c, const std::string& v) { c.train.crop = to_int(v); };
    t["train.lr"] = [](RunConfig& c, const std::string& v) { c.train.schedule.base_lr = to_double(v); };
    t["train.power"] = [](RunConfig& c, const std::string& v) { c.train.schedule.power = to_double(v); };
    t["train.warmup_iters"] = [](RunConfig& c, const std::string& v) { c.train.schedule.warmup_iters = to_int(v); };
    t["train.warmup_ratio"] = [](RunConfig& c, const std::string& v) { c.train.schedule.warmup_ratio = to_double(v); };
    t["train.beta1"] = [](RunConfig& c, const std::string& v) { c.train.adamw.beta1 = to_double(v); };
    t["train.beta2"] = [](RunConfig& c, const std::string& v) { c.train.adamw.beta2 = to_double(v); };
    t["train.eps"] = [](RunConfig& c, const std::string& v) { c.train.adamw.eps = to_double(v); };
    t["train.weight_decay"] = [](RunConfig& c, const std::string& v) { c.train.adamw.weight_decay = to_double(v); };
    t["train.eval_interval"] = [](RunConfig& c, const std::string& v) { c.train.eval_interval = to_int(v); };
    t["train.checkpoint_interval"] = [](RunConfig& c, const std::string& v) { c.train.checkpoint_interval = to_int(v); };
    t["train.threads"] = [](RunConfig& c, const std::string& v) { c.train.threads = static_cast<int>(to_int(v)); };

    t["data.train_samples"] = [](RunConfig& c, const std::string& v) { c.data.train_samples = to_int(v); };
    t["data.val_samples"] = [](RunConfig& c, const std::string& v) { c.data.val_samples = to_int(v); };
    t["data.size"] = [](RunConfig& c, const std::string& v) { c.data.size = to_int(v); };

    t["eval.scales"] = [](RunConfig& c, const std::string& v) {
      c.eval.scales.clear();
      for (const auto& s : split_list(v)) c.eval.scales.push_back(to_double(s));
    };
    t["eval.flip"] = [](RunConfig& c, const std::string& v) { c.eval.flip = to_bool(v); };
    return t;
  }();
  return table;
}

const std::vector<std::string> kSections{"model", "train", "data", "eval"};

}  // namespace

RunConfig parse_config(std::string_view text) {
  RunConfig cfg;
  std::string section;
  int lineno = 0;
  std::istringstream is{std::string(text)};
  std::string raw;
  auto fail = [&](const std::string& msg) -> Error {
    return Error("config line " + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(is, raw)) {
    ++lineno;
    std::string line = raw;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw fail("malformed section header '" + line + "'");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (std::find(kSections.begin(), kSections.end(), section) == kSections.end()) {
        throw fail("unknown section [" + section + "]");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw fail("expected 'key = value', got '" + line + "'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key.empty()) throw fail("missing key");
    if (value.empty()) throw fail("missing value for '" + key + "'");
    const std::string full = section.empty() ? key : section + "." + key;
    const auto it = setters().find(full);
    if (it == setters().end()) {
      throw fail("unknown key '" + key + "'" + (section.empty() ? "" : " in [" + section + "]"));
    }
    try {
      it->second(cfg, value);
    } catch (const std::invalid_argument& e) {
      throw fail(key + ": " + e.what());
    } catch (const Error& e) {
      throw fail(e.what());
    }
  }
  cfg.train.schedule.max_iter = cfg.train.iters;
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const Error& e) {
    throw Error(path + ": " + e.what());
  }
}

std::string serialize_config(const RunConfig& c) {
  std::ostringstream os;
  auto join4 = [](const std::array<StageConfig, 4>& s, int64_t StageConfig::*field) {
    std::string out;
    for (size_t i = 0; i < 4; ++i) out += (i ? ", " : "") + std::to_string(s[i].*field);
    return out;
  };
  os << "seed = " << c.seed << "\n";
  if (!c.out_dir.empty()) os << "out_dir = " << c.out_dir << "\n";
  os << "\n[model]\n";
  os << "channels = " << join4(c.model.stages, &StageConfig::channels) << "\n";
  os << "depths = " << join4(c.model.stages, &StageConfig::depth) << "\n";
  os << "expansions = " << join4(c.model.stages, &StageConfig::expansion) << "\n";
  os << "decoder_dim = " << c.model.decoder_dim << "\n";
  os << "num_classes = " << c.model.num_classes << "\n";
  os << "decoder = " << to_string(c.model.decoder) << "\n";
  os << "stage1_in_decoder = " << (c.model.stage1_in_decoder ? "true" : "false") << "\n";
  os << "ham_rank = " << c.model.ham_rank << "\n";
  os << "ham_iters = " << c.model.ham_iters << "\n";
  os << "attention = " << to_string(c.model.attention) << "\n";
  os << "drop_path = " << fmt_double(c.model.drop_path) << "\n";
  os << "\n[train]\n";
  os << "iters = " << c.train.iters << "\n";
  os << "batch = " << c.train.batch << "\n";
  os << "crop = " << c.train.crop << "\n";
  os << "lr = " << fmt_double(c.train.schedule.base_lr) << "\n";
  os << "power = " << fmt_double(c.train.schedule.power) << "\n";
  os << "warmup_iters = " << c.train.schedule.warmup_iters << "\n";
  os << "warmup_ratio = " << fmt_double(c.train.schedule.warmup_ratio) << "\n";
  os << "beta1 = " << fmt_double(c.train.adamw.beta1) << "\n";
  os << "beta2 = " << fmt_double(c.train.adamw.beta2) << "\n";
  os << "eps = " << fmt_double(c.train.adamw.eps) << "\n";
  os << "weight_decay = " << fmt_double(c.train.adamw.weight_decay) << "\n";
  os << "eval_interval = " << c.train.eval_interval << "\n";
  os << "checkpoint_interval = " << c.train.checkpoint_interval << "\n";
  os << "threads = " << c.train.threads << "\n";
  os << "\n[data]\n";
  os << "train_samples = " << c.data.train_samples << "\n";
  os << "val_samples = " << c.data.val_samples << "\n";
  os << "size = " << c.data.size << "\n";
  os << "\n[eval]\n";
  os << "scales = ";
  for (size_t i = 0; i < c.eval.scales.size(); ++i) os << (i ? ", " : "") << fmt_double(c.eval.scales[i]);
  os << "\nflip = " << (c.eval.flip ? "true" : "false") << "\n";
  return os.str();
}

}  // namespace segnext
