// SPDX-License-Identifier: Apache-2.0

#include "divkd/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace divkd {

void DistillConfig::validate() const {
  if (beam_k < 1) throw ConfigError("beam_k must be >= 1");
  if (!(lambda > 0.0 && lambda <= 1.0)) {
    throw ConfigError("lambda must be in (0, 1]");
  }
  if (beta < 0.0) throw ConfigError("beta must be >= 0");
  if (gamma < 0.0) throw ConfigError("gamma must be >= 0");
  if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
}

void TrainConfig::validate() const {
  if (epochs <= 0) throw ConfigError("epochs must be positive");
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (lr_halving_period <= 0) {
    throw ConfigError("lr_halving_period must be positive");
  }
  if (hidden_dim <= 0) throw ConfigError("hidden_dim must be positive");
  if (embed_dim <= 0) throw ConfigError("embed_dim must be positive");
  if (latent_dim <= 0) throw ConfigError("latent_dim must be positive");
  if (kl_anneal_epochs <= 0) {
    throw ConfigError("kl_anneal_epochs must be positive");
  }
  if (max_decode_len < 1) throw ConfigError("max_decode_len must be >= 1");
  distill.validate();
}

namespace {

double parse_double(const std::string& key, const std::string& value) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError(key + ": expected a number, got '" + value + "'");
  }
  return v;
}

int parse_int(const std::string& key, const std::string& value) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError(key + ": expected an integer, got '" + value + "'");
  }
  return v;
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
  uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError(key + ": expected an unsigned integer, got '" + value +
                      "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true") return true;
  if (value == "0" || value == "false") return false;
  throw ConfigError(key + ": expected a boolean (0/1/true/false), got '" +
                    value + "'");
}

}  // namespace

void TrainConfig::set_key(const std::string& key, const std::string& value) {
  if (key == "epochs") epochs = parse_int(key, value);
  else if (key == "batch_size") batch_size = parse_int(key, value);
  else if (key == "lr") lr = parse_double(key, value);
  else if (key == "lr_halving_period") lr_halving_period = parse_int(key, value);
  else if (key == "hidden_dim") hidden_dim = parse_int(key, value);
  else if (key == "embed_dim") embed_dim = parse_int(key, value);
  else if (key == "latent_dim") latent_dim = parse_int(key, value);
  else if (key == "seed") seed = parse_u64(key, value);
  else if (key == "kl_anneal_epochs") kl_anneal_epochs = parse_int(key, value);
  else if (key == "max_decode_len") max_decode_len = parse_int(key, value);
  else if (key == "use_cvae") use_cvae = parse_bool(key, value);
  else if (key == "beam_k") distill.beam_k = parse_int(key, value);
  else if (key == "lambda") distill.lambda = parse_double(key, value);
  else if (key == "beta") distill.beta = parse_double(key, value);
  else if (key == "gamma") distill.gamma = parse_double(key, value);
  else if (key == "tau") distill.tau = parse_double(key, value);
  else if (key == "cache_beams") distill.cache_beams = parse_bool(key, value);
  else if (key == "soft_kl_teacher_first")
    distill.soft_kl_teacher_first = parse_bool(key, value);
  else throw ConfigError("unknown config key: " + key);
}

void TrainConfig::apply(const std::map<std::string, std::string>& overrides) {
  for (const auto& [key, value] : overrides) set_key(key, value);
}

std::string TrainConfig::to_string() const {
  std::ostringstream os;
  os << "batch_size=" << batch_size << '\n'
     << "beam_k=" << distill.beam_k << '\n'
     << "beta=" << format_double(distill.beta) << '\n'
     << "cache_beams=" << (distill.cache_beams ? 1 : 0) << '\n'
     << "embed_dim=" << embed_dim << '\n'
     << "epochs=" << epochs << '\n'
     << "gamma=" << format_double(distill.gamma) << '\n'
     << "hidden_dim=" << hidden_dim << '\n'
     << "kl_anneal_epochs=" << kl_anneal_epochs << '\n'
     << "lambda=" << format_double(distill.lambda) << '\n'
     << "latent_dim=" << latent_dim << '\n'
     << "lr=" << format_double(lr) << '\n'
     << "lr_halving_period=" << lr_halving_period << '\n'
     << "max_decode_len=" << max_decode_len << '\n'
     << "seed=" << seed << '\n'
     << "soft_kl_teacher_first=" << (distill.soft_kl_teacher_first ? 1 : 0)
     << '\n'
     << "tau=" << format_double(distill.tau) << '\n'
     << "use_cvae=" << (use_cvae ? 1 : 0) << '\n';
  return os.str();
}

std::string TrainConfig::config_hash() const {
  uint64_t h = fnv1a64(to_string());
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

double TrainConfig::lr_at_epoch(int epoch) const {
  int halvings = epoch / lr_halving_period;
  return lr * std::pow(0.5, halvings);
}

double TrainConfig::kl_weight_at_epoch(int epoch) const {
  if (epoch >= kl_anneal_epochs) return 1.0;
  return static_cast<double>(epoch) / static_cast<double>(kl_anneal_epochs);
}

std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open " + path);
  std::map<std::string, std::string> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    size_t begin = line.find_first_not_of(" \t\r");
    if (begin == std::string::npos) continue;
    size_t end = line.find_last_not_of(" \t\r");
    std::string body = line.substr(begin, end - begin + 1);
    size_t eq = body.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError(path + ":" + std::to_string(line_no) +
                        ": expected key=value");
    }
    auto trim = [](std::string s) {
      size_t b = s.find_first_not_of(" \t");
      size_t e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    out[trim(body.substr(0, eq))] = trim(body.substr(eq + 1));
  }
  return out;
}

TrainConfig load_train_config(const std::string& path) {
  TrainConfig cfg;
  cfg.apply(read_config_file(path));
  cfg.validate();
  return cfg;
}

}  // namespace divkd
