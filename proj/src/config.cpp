#include "apv/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>

#include "apv/errors.hpp"

namespace apv {

namespace {

struct Field {
  const char* name;
  std::function<std::string(const HarnessConfig&)> get;
  std::function<void(HarnessConfig&, const std::string&)> set;
};

std::string fmt_real(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

long to_long(const std::string& s) {
  long v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw ConfigError("expected an integer, got '" + s + "'");
  return v;
}

double to_real(const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("expected a number, got '" + s + "'");
  }
}

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("expected true/false, got '" + s + "'");
}

#define LONG_FIELD(key, expr)                                             \
  Field {                                                                 \
    key, [](const HarnessConfig& c) { return std::to_string(c.expr); },  \
        [](HarnessConfig& c, const std::string& s) { c.expr = to_long(s); } \
  }
#define REAL_FIELD(key, expr)                                        \
  Field {                                                            \
    key, [](const HarnessConfig& c) { return fmt_real(c.expr); },   \
        [](HarnessConfig& c, const std::string& s) { c.expr = to_real(s); } \
  }
#define BOOL_FIELD(key, expr)                                                        \
  Field {                                                                            \
    key, [](const HarnessConfig& c) { return c.expr ? "true" : "false"; },          \
        [](HarnessConfig& c, const std::string& s) { c.expr = to_bool(s); }          \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"preset", [](const HarnessConfig& c) { return c.preset; },
            [](HarnessConfig& c, const std::string& s) { c.preset = s; }},
      Field{"env", [](const HarnessConfig& c) { return c.env; },
            [](HarnessConfig& c, const std::string& s) {
              parse_env_name(s);  // validate
              c.env = s;
            }},
      LONG_FIELD("episode_length", episode_length),
      LONG_FIELD("action_dim", action_dim),
      Field{"seed", [](const HarnessConfig& c) { return std::to_string(c.seed); },
            [](HarnessConfig& c, const std::string& s) {
              c.seed = static_cast<std::uint64_t>(to_long(s));
            }},
      LONG_FIELD("image_size", af.image_size),
      LONG_FIELD("conv_depth", af.conv_depth),
      LONG_FIELD("deter_dim", af.deter_dim),
      LONG_FIELD("stoch_vars", af.stoch_vars),
      LONG_FIELD("stoch_classes", af.stoch_classes),
      LONG_FIELD("hidden_dim", af.hidden_dim),
      REAL_FIELD("beta_z", af.beta_z),
      REAL_FIELD("kl_balance_alpha", af.kl_balance_alpha),
      REAL_FIELD("free_nats", af.free_nats),
      LONG_FIELD("ac_deter_dim", ac.deter_dim),
      LONG_FIELD("ac_stoch_vars", ac.stoch_vars),
      LONG_FIELD("ac_stoch_classes", ac.stoch_classes),
      LONG_FIELD("ac_hidden_dim", ac.hidden_dim),
      REAL_FIELD("beta", ac.beta),
      REAL_FIELD("beta_z_finetune", ac.beta_z_finetune),
      BOOL_FIELD("concat_encoder_embed", ac.concat_encoder_embed),
      LONG_FIELD("freeze_af_initial_steps", ac.freeze_af_initial_steps),
      Field{"transfer_mode",
            [](const HarnessConfig& c) { return transfer_mode_string(c.ac.transfer_mode); },
            [](HarnessConfig& c, const std::string& s) {
              c.ac.transfer_mode = parse_transfer_mode(s);
            }},
      LONG_FIELD("horizon", behavior.horizon),
      REAL_FIELD("gamma", behavior.gamma),
      REAL_FIELD("lambda_ret", behavior.lambda_ret),
      REAL_FIELD("eta", behavior.eta),
      REAL_FIELD("actor_lr", behavior.actor_lr),
      REAL_FIELD("critic_lr", behavior.critic_lr),
      LONG_FIELD("target_update_every", behavior.target_update_every),
      REAL_FIELD("min_std", behavior.min_std),
      LONG_FIELD("imagine_starts", behavior.imagine_starts),
      REAL_FIELD("lambda_int", lambda_int),
      LONG_FIELD("pretrain_steps", pretrain_steps),
      LONG_FIELD("env_steps", env_steps),
      LONG_FIELD("train_every", train_every),
      LONG_FIELD("batch_B", batch_B),
      LONG_FIELD("batch_T", batch_T),
      LONG_FIELD("action_repeat", action_repeat),
      LONG_FIELD("buffer_capacity", buffer_capacity),
      LONG_FIELD("eval_episodes", eval_episodes),
      REAL_FIELD("model_lr", model_lr),
      REAL_FIELD("grad_clip", grad_clip),
      LONG_FIELD("queue_capacity", queue_capacity),
      LONG_FIELD("knn_k", knn_k),
      LONG_FIELD("bonus_tau", bonus_tau),
      LONG_FIELD("proj_dim", proj_dim),
      LONG_FIELD("prefill_episodes", prefill_episodes),
      LONG_FIELD("log_every", log_every),
      LONG_FIELD("probe_episodes", probe_episodes),
      LONG_FIELD("probe_steps", probe_steps),
  };
  return table;
}

#undef LONG_FIELD
#undef REAL_FIELD
#undef BOOL_FIELD

const Field& find_field(const std::string& key) {
  for (const Field& f : fields())
    if (key == f.name) return f;
  throw ConfigError("unknown config key: " + key);
}

}  // namespace

ToyEnvSpec HarnessConfig::env_spec() const {
  ToyEnvSpec spec = default_env_spec(parse_env_name(env));
  spec.image_size = af.image_size;
  spec.action_dim = action_dim;
  spec.episode_length = episode_length;
  spec.seed = seed;
  return spec;
}

void HarnessConfig::validate() const {
  af.validate();
  ac.validate();
  behavior.validate();
  env_spec().validate();
  if (lambda_int < 0) throw ConfigError("lambda_int must be >= 0");
  if (pretrain_steps < 1 || env_steps < 1 || train_every < 1 || batch_B < 1 || batch_T < 1 ||
      action_repeat < 1 || buffer_capacity < 1 || eval_episodes < 1)
    throw ConfigError("counts must be >= 1");
  if (batch_T > episode_length + 1)
    throw ConfigError("batch_T exceeds the stored episode length");
  if (lambda_int > 0 && batch_T < bonus_tau)
    throw ConfigError("intrinsic bonus needs batch_T >= bonus_tau");
}

HarnessConfig preset_config(const std::string& name) {
  HarnessConfig c;
  c.preset = name;
  if (name == "manipulation") {
    c.env = "dot-reacher";
    c.episode_length = 500;
    c.action_dim = 4;
    c.af.deter_dim = 1024;
    c.af.stoch_vars = 32;
    c.af.stoch_classes = 32;
    c.af.hidden_dim = 1024;
    c.af.conv_depth = 48;
    c.af.beta_z = 1.0;
    c.ac.deter_dim = 1024;
    c.ac.stoch_vars = 32;
    c.ac.stoch_classes = 32;
    c.ac.hidden_dim = 1024;
    c.ac.beta = 1.0;
    c.ac.beta_z_finetune = 0.0;
    c.ac.concat_encoder_embed = false;
    c.ac.freeze_af_initial_steps = 100;
    c.ac.transfer_mode = TransferMode::FULL;
    c.lambda_int = 0.1;
    c.batch_B = 16;
    c.batch_T = 25;
    c.action_repeat = 1;
    c.train_every = 5;
    c.pretrain_steps = 600000;
    c.env_steps = 250000;
  } else if (name == "locomotion") {
    c.env = "dot-reacher";
    c.episode_length = 1000;
    c.action_dim = 6;
    c.af.deter_dim = 1024;
    c.af.stoch_vars = 32;
    c.af.stoch_classes = 32;
    c.af.hidden_dim = 1024;
    c.af.conv_depth = 48;
    c.af.beta_z = 1.0;
    c.ac.deter_dim = 1024;
    c.ac.stoch_vars = 32;
    c.ac.stoch_classes = 32;
    c.ac.hidden_dim = 1024;
    c.ac.beta = 1.0;
    c.ac.beta_z_finetune = 0.0;
    c.ac.concat_encoder_embed = true;
    c.ac.freeze_af_initial_steps = 0;
    c.ac.transfer_mode = TransferMode::FULL;
    c.lambda_int = 1.0;
    c.batch_B = 16;
    c.batch_T = 50;
    c.action_repeat = 2;
    c.train_every = 5;
    c.pretrain_steps = 600000;
    c.env_steps = 1000000;
  } else if (name == "desk") {
    c.env = "shape-world";
    c.episode_length = 100;
    c.action_dim = 2;
    c.af.deter_dim = 192;
    c.af.stoch_vars = 16;
    c.af.stoch_classes = 16;
    c.af.hidden_dim = 192;
    c.af.conv_depth = 8;
    c.af.beta_z = 1.0;
    c.ac.deter_dim = 192;
    c.ac.stoch_vars = 16;
    c.ac.stoch_classes = 16;
    c.ac.hidden_dim = 192;
    c.ac.beta = 1.0;
    c.ac.beta_z_finetune = 0.0;
    c.ac.freeze_af_initial_steps = 0;
    c.ac.transfer_mode = TransferMode::FULL;
    c.lambda_int = 0.1;
    c.batch_B = 8;
    c.batch_T = 8;
    c.action_repeat = 1;
    c.train_every = 8;
    c.pretrain_steps = 2000;
    c.env_steps = 30000;
    c.buffer_capacity = 20000;
    c.behavior.imagine_starts = 32;
    c.behavior.horizon = 10;
    c.log_every = 20;
  } else {
    throw ConfigError("unknown preset: " + name);
  }
  return c;
}

HarnessConfig apply_overrides(HarnessConfig base,
                              const std::vector<std::pair<std::string, std::string>>& kv) {
  for (const auto& [key, value] : kv) {
    if (key == "preset") continue;  // the preset chose the base already
    find_field(key).set(base, value);
  }
  return base;
}

std::vector<std::pair<std::string, std::string>> config_to_pairs(const HarnessConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const Field& f : fields()) out.emplace_back(f.name, f.get(cfg));
  return out;
}

HarnessConfig config_from_pairs(const std::vector<std::pair<std::string, std::string>>& kv) {
  std::string preset = "desk";
  for (const auto& [k, v] : kv)
    if (k == "preset") preset = v;
  return apply_overrides(preset_config(preset), kv);
}

HarnessConfig parse_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::vector<std::pair<std::string, std::string>> kv;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    // trim
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      const auto b = s.find_last_not_of(" \t");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError("line " + std::to_string(lineno) + ": empty key or value");
    find_field(key);  // reject unknown keys eagerly
    kv.emplace_back(key, value);
  }
  return config_from_pairs(kv);
}

void write_config(const HarnessConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write config " + path.string());
  for (const auto& [k, v] : config_to_pairs(cfg)) out << k << " = " << v << "\n";
}

}  // namespace apv
