#include "sbgru/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "sbgru/checkpoint.hpp"
#include "sbgru/compression.hpp"
#include "sbgru/errors.hpp"

namespace sbgru {

std::vector<LayerKind> RunConfig::resolved_kinds() const {
  if (!layer_kinds.empty()) return layer_kinds;
  return ModelConfig::last_encoder_kinds(model.enc_layers, model.dec_layers, layer_kind);
}

RunConfig preset_config(std::string_view name) {
  RunConfig c;
  c.preset = std::string(name);
  if (name == "desk") {
    c.model.enc_layers = 2;
    c.model.dec_layers = 2;
    c.model.hidden_units = 64;
    c.model.embed_dim = 64;
    c.model.dropout = 0.0;
    c.train.learning_rate = 1e-3;
    c.train.batch_size = 8;
    c.train.max_steps = 2000;
    c.train.eval_every = 250;
    c.train.patience = 0;
  } else if (name == "paper") {
    c.model.enc_layers = 4;
    c.model.dec_layers = 4;
    c.model.hidden_units = 1000;
    c.model.embed_dim = 1000;
    c.model.dropout = 0.2;
    c.train.learning_rate = 1e-5;
    c.train.batch_size = 128;
    c.train.max_steps = 1000000;
    c.train.eval_every = 1000;
    c.train.patience = 10;
  } else {
    throw ContractError("unknown preset '" + std::string(name) + "' (expected desk|paper)");
  }
  c.layer_kind = LayerKind::sb;
  return c;
}

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct Line {
  std::size_t number;
  std::string key;
  std::string value;
};

template <class T>
T parse_number(const Line& l, const std::string& origin) {
  T v{};
  const char* first = l.value.data();
  const char* last = first + l.value.size();
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last)
    throw ParseError(origin, l.number, "invalid value '" + l.value + "' for key '" + l.key + "'");
  return v;
}

}  // namespace

RunConfig parse_config(std::string_view text, const std::string& origin, const std::filesystem::path& base_dir) {
  std::vector<Line> lines;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t n = 0;
  while (std::getline(in, raw)) {
    ++n;
    std::string_view s = raw;
    if (const auto hash = s.find('#'); hash != std::string_view::npos) s = s.substr(0, hash);
    s = trim(s);
    if (s.empty()) continue;
    const auto eq = s.find('=');
    if (eq == std::string_view::npos) throw ParseError(origin, n, "expected 'key = value'");
    Line l{n, std::string(trim(s.substr(0, eq))), std::string(trim(s.substr(eq + 1)))};
    if (l.key.empty()) throw ParseError(origin, n, "empty key");
    lines.push_back(std::move(l));
  }

  RunConfig c = preset_config("desk");
  for (const auto& l : lines) {
    if (l.key != "preset") continue;
    try {
      c = preset_config(l.value);
    } catch (const ContractError& e) {
      throw ParseError(origin, l.number, e.what());
    }
  }

  auto path = [&](const std::string& v) {
    std::filesystem::path p(v);
    return p.is_absolute() ? p : base_dir / p;
  };
  using Setter = std::function<void(const Line&)>;
  auto num = [&]<class T>(T& dst) { return Setter([&dst, &origin](const Line& l) { dst = parse_number<T>(l, origin); }); };
  const std::map<std::string, Setter, std::less<>> setters{
      {"preset", [](const Line&) {}},
      {"train_corpus", [&](const Line& l) { c.train_corpus = path(l.value); }},
      {"dev_corpus", [&](const Line& l) { c.dev_corpus = path(l.value); }},
      {"out_dir", [&](const Line& l) { c.out_dir = path(l.value); }},
      {"metric_log", [&](const Line& l) { c.metric_log = path(l.value); }},
      {"min_freq", num(c.min_freq)},
      {"hidden_units", num(c.model.hidden_units)},
      {"enc_layers", num(c.model.enc_layers)},
      {"dec_layers", num(c.model.dec_layers)},
      {"embed_dim", [&](const Line& l) {
         c.model.embed_dim = parse_number<std::size_t>(l, origin);
         c.embed_dim_set = true;
       }},
      {"dropout", num(c.model.dropout)},
      {"alpha", num(c.model.alpha)},
      {"max_decode_len", num(c.model.max_decode_len)},
      {"init_sigma_scale", num(c.model.init_sigma_scale)},
      {"init_logit_pi", num(c.model.init_logit_pi)},
      {"layer_kind", [&](const Line& l) {
         try {
           c.layer_kind = parse_layer_kind(l.value);
         } catch (const std::exception& e) {
           throw ParseError(origin, l.number, e.what());
         }
       }},
      {"layer_kinds", [&](const Line& l) {
         c.layer_kinds.clear();
         std::string text = l.value, item;
         std::replace(text.begin(), text.end(), ',', ' ');
         std::istringstream is(text);
         try {
           while (is >> item) c.layer_kinds.push_back(parse_layer_kind(item));
         } catch (const std::exception& e) {
           throw ParseError(origin, l.number, e.what());
         }
       }},
      {"learning_rate", num(c.train.learning_rate)},
      {"batch_size", num(c.train.batch_size)},
      {"max_steps", num(c.train.max_steps)},
      {"epochs", num(c.train.epochs)},
      {"clip_norm", num(c.train.clip_norm)},
      {"seed", [&](const Line& l) {
         c.train.seed = parse_number<std::uint64_t>(l, origin);
         c.seed_set = true;
       }},
      {"eval_every", num(c.train.eval_every)},
      {"patience", num(c.train.patience)},
      {"tau", num(c.train.tau)},
      {"lambda0", num(c.train.schedule.lambda0)},
      {"lambda_min", num(c.train.schedule.lambda_min)},
      {"decay_rate", num(c.train.schedule.decay_rate)},
      {"update_every", num(c.train.schedule.update_every)},
      {"kl_mode", [&](const Line& l) {
         if (l.value == "closed-form")
           c.train.kl_mode = KlMode::closed_form;
         else if (l.value == "monte-carlo")
           c.train.kl_mode = KlMode::monte_carlo;
         else
           throw ParseError(origin, l.number, "kl_mode must be closed-form or monte-carlo");
       }},
  };
  for (const auto& l : lines) {
    const auto it = setters.find(l.key);
    if (it == setters.end()) throw ParseError(origin, l.number, "unknown config key '" + l.key + "'");
    it->second(l);
  }
  if (c.preset == "paper" && !c.embed_dim_set) c.model.embed_dim = c.model.hidden_units;
  c.out_dir = path(c.out_dir.string());
  if (c.metric_log.empty()) c.metric_log = c.out_dir / "metrics.tsv";
  c.train.out_dir = c.out_dir;
  c.train.log_path = c.metric_log;
  if (c.train.schedule.update_every == 0) throw ParseError(origin, 0, "update_every must be positive");
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string(), path.parent_path());
}

void apply_seed_env(RunConfig& cfg) {
  if (cfg.seed_set) return;
  const char* env = std::getenv(kSeedEnvVar);
  if (!env || !*env) return;
  std::uint64_t v = 0;
  const std::string_view s(env);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ContractError(std::string(kSeedEnvVar) + " must be a nonnegative integer, got '" + env + "'");
  cfg.train.seed = v;
}

std::string describe_hyperparameters(const RunConfig& cfg) {
  std::ostringstream os;
  os << "preset " << cfg.preset << ": enc_layers=" << cfg.model.enc_layers << " dec_layers=" << cfg.model.dec_layers
     << " hidden_units=" << cfg.model.hidden_units << " learning_rate=" << format_double(cfg.train.learning_rate)
     << " batch_size=" << cfg.train.batch_size << " dropout=" << format_double(cfg.model.dropout)
     << " optimizer=adam layer_kinds=";
  const auto kinds = cfg.resolved_kinds();
  for (std::size_t i = 0; i < kinds.size(); ++i) os << (i ? "," : "") << to_string(kinds[i]);
  return os.str();
}

}  // namespace sbgru
