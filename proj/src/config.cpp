#include "config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace pctl {

const char* train_mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::Pctl: return "pctl";
    case TrainMode::TargetOnly: return "target_only";
    case TrainMode::FineTune: return "fine_tune";
  }
  return "?";
}

TrainMode parse_train_mode(const std::string& s) {
  if (s == "pctl") return TrainMode::Pctl;
  if (s == "target_only" || s == "target-only") return TrainMode::TargetOnly;
  if (s == "fine_tune" || s == "fine-tune") return TrainMode::FineTune;
  throw Error::config("unknown mode '" + s + "' (expected pctl|target-only|fine-tune)");
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw Error::config("run.batch_size must be >= 2");
  if (epochs == 0) throw Error::config("run.epochs must be >= 1");
  if (trials == 0) throw Error::config("run.trials must be >= 1");
  if (!(lambda >= 0.0)) throw Error::config("loss.lambda must be >= 0");
  if (r == 0 || r_prime == 0) throw Error::config("loss.r and loss.r_prime must be >= 1");
  if (k_schedule.empty()) throw Error::config("cluster.k_schedule must not be empty");
  for (std::size_t k : k_schedule) {
    if (k < r_prime + 1) {
      throw Error::config("cluster.k_schedule entry k = " + std::to_string(k) +
                          " cannot supply r' = " + std::to_string(r_prime) +
                          " negative prototypes plus one positive; the minimum k is " +
                          std::to_string(r_prime + 1));
    }
  }
  if (!(tau_prime > 0.0)) throw Error::config("cluster.tau_prime must be > 0");
  if (!(alpha > 0.0)) throw Error::config("cluster.alpha must be > 0");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw Error::config("encoder.gamma must be in [0, 1]");
  if (!(lr > 0.0) || !(lr_body > 0.0)) throw Error::config("optim learning rates must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error::config("optim.momentum must be in [0, 1)");
  data.validate();
}

EncoderConfig TrainConfig::encoder_config(const DatasetFile& ds) const {
  EncoderConfig e;
  e.d_inst = ds.d_inst;
  e.d_vis = ds.d_vis;
  e.n_det = ds.n_det;
  e.hidden = hidden;
  e.layers = layers;
  e.embed_dim = embed_dim;
  e.classifier_hidden = classifier_hidden;
  e.activation = activation;
  e.gamma = gamma;
  e.validate();
  return e;
}

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream in(trim(value));
  T out;
  in >> out;
  if (in.fail() || !in.eof()) {
    throw Error::config("config key '" + key + "': cannot parse '" + value + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  std::string v = trim(value);
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw Error::config("config key '" + key + "': cannot parse '" + value + "' as bool");
}

std::vector<std::size_t> parse_schedule(const std::string& key, const std::string& value) {
  std::vector<std::size_t> out;
  std::string item;
  std::istringstream in(trim(value));
  while (std::getline(in, item, ',')) {
    out.push_back(parse_number<std::size_t>(key, item));
  }
  if (out.empty()) throw Error::config("config key '" + key + "': empty schedule");
  return out;
}

std::string schedule_to_string(const std::vector<std::size_t>& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out;
}

// One entry per config key: getter and setter over a TrainConfig.
struct KeyHandler {
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

const std::map<std::string, KeyHandler>& key_table() {
  static const std::map<std::string, KeyHandler> table = [] {
    std::map<std::string, KeyHandler> t;
    auto num = [&t](const std::string& key, auto member) {
      using T = std::decay_t<decltype(std::declval<TrainConfig>().*member)>;
      t[key] = KeyHandler{
          [member](const TrainConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return format_double(c.*member);
            } else {
              return std::to_string(c.*member);
            }
          },
          [member, key](TrainConfig& c, const std::string& v) {
            c.*member = parse_number<T>(key, v);
          }};
    };
    auto gen_num = [&t](const std::string& key, auto member) {
      using T = std::decay_t<decltype(std::declval<GeneratorConfig>().*member)>;
      t[key] = KeyHandler{
          [member](const TrainConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return format_double(c.data.*member);
            } else {
              return std::to_string(c.data.*member);
            }
          },
          [member, key](TrainConfig& c, const std::string& v) {
            c.data.*member = parse_number<T>(key, v);
          }};
    };

    num("run.seed", &TrainConfig::seed);
    num("run.epochs", &TrainConfig::epochs);
    num("run.batch_size", &TrainConfig::batch_size);
    num("run.trials", &TrainConfig::trials);
    t["run.mode"] = KeyHandler{
        [](const TrainConfig& c) { return std::string(train_mode_name(c.mode)); },
        [](TrainConfig& c, const std::string& v) { c.mode = parse_train_mode(trim(v)); }};
    t["run.dump_prototypes"] = KeyHandler{
        [](const TrainConfig& c) { return std::string(c.dump_prototypes ? "true" : "false"); },
        [](TrainConfig& c, const std::string& v) {
          c.dump_prototypes = parse_bool("run.dump_prototypes", v);
        }};

    num("loss.lambda", &TrainConfig::lambda);
    num("loss.r", &TrainConfig::r);
    num("loss.r_prime", &TrainConfig::r_prime);

    t["cluster.k_schedule"] = KeyHandler{
        [](const TrainConfig& c) { return schedule_to_string(c.k_schedule); },
        [](TrainConfig& c, const std::string& v) {
          c.k_schedule = parse_schedule("cluster.k_schedule", v);
        }};
    num("cluster.tau_prime", &TrainConfig::tau_prime);
    num("cluster.alpha", &TrainConfig::alpha);

    num("encoder.gamma", &TrainConfig::gamma);
    num("encoder.hidden", &TrainConfig::hidden);
    num("encoder.layers", &TrainConfig::layers);
    num("encoder.embed_dim", &TrainConfig::embed_dim);
    num("encoder.classifier_hidden", &TrainConfig::classifier_hidden);
    t["encoder.activation"] = KeyHandler{
        [](const TrainConfig& c) { return c.activation; },
        [](TrainConfig& c, const std::string& v) {
          std::string a = trim(v);
          if (a != "tanh" && a != "relu") {
            throw Error::config("config key 'encoder.activation': expected tanh|relu");
          }
          c.activation = a;
        }};

    num("optim.lr", &TrainConfig::lr);
    num("optim.lr_body", &TrainConfig::lr_body);
    num("optim.momentum", &TrainConfig::momentum);

    num("fine_tune.pretrain_epochs", &TrainConfig::pretrain_epochs);

    gen_num("data.latent_clusters", &GeneratorConfig::latent_clusters);
    gen_num("data.latent_dim", &GeneratorConfig::latent_dim);
    gen_num("data.shift_scale", &GeneratorConfig::shift_scale);
    gen_num("data.noise_scale", &GeneratorConfig::noise_scale);
    gen_num("data.margin", &GeneratorConfig::margin);
    gen_num("data.d_inst", &GeneratorConfig::d_inst);
    gen_num("data.d_vis", &GeneratorConfig::d_vis);
    gen_num("data.n_det", &GeneratorConfig::n_det);
    gen_num("data.source_train", &GeneratorConfig::source_train);
    gen_num("data.source_validation", &GeneratorConfig::source_validation);
    gen_num("data.source_test", &GeneratorConfig::source_test);
    gen_num("data.target_train", &GeneratorConfig::target_train);
    gen_num("data.target_validation", &GeneratorConfig::target_validation);
    gen_num("data.target_test", &GeneratorConfig::target_test);
    gen_num("data.seed", &GeneratorConfig::seed);
    return t;
  }();
  return table;
}

}  // namespace

std::vector<std::string> TrainConfig::keys() const {
  std::vector<std::string> out;
  for (const auto& [key, handler] : key_table()) out.push_back(key);
  return out;
}

std::string TrainConfig::get(const std::string& key) const {
  auto it = key_table().find(key);
  if (it == key_table().end()) throw Error::config("unknown config key '" + key + "'");
  return it->second.get(*this);
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  auto it = key_table().find(key);
  if (it == key_table().end()) throw Error::config("unknown config key '" + key + "'");
  it->second.set(*this, value);
}

std::string TrainConfig::echo() const {
  std::ostringstream out;
  for (const auto& [key, handler] : key_table()) {
    out << key << " = " << handler.get(*this) << "\n";
  }
  return out.str();
}

TrainConfig TrainConfig::from_string(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos) {
      throw Error::config("config line " + std::to_string(line_no) +
                          ": expected 'section.key = value'");
    }
    cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return cfg;
}

TrainConfig TrainConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error::config("cannot open config '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_string(buf.str());
}

}  // namespace pctl
