#include "annealprune/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "annealprune/error.hpp"

namespace annealprune {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const std::uint64_t out = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " expects an unsigned integer, got '" +
                      v + "'");
  }
}

double parse_f64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " expects a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError("config: " + key + " expects true/false, got '" + v + "'");
}

std::vector<std::size_t> parse_size_list(const std::string& key,
                                         const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(parse_u64(key, item));
  }
  if (out.empty()) throw ConfigError("config: " + key + " expects a list");
  return out;
}

void apply_key(ExperimentConfig& cfg, const std::string& section,
               const std::string& key, const std::string& value) {
  const std::string full = section + "." + key;
  if (section == "dataset") {
    if (key == "kind") {
      if (value == "cifar10") {
        cfg.dataset = DatasetKind::Cifar10;
      } else if (value == "mnist") {
        cfg.dataset = DatasetKind::Mnist;
      } else if (value == "synth") {
        cfg.dataset = DatasetKind::Synth;
      } else {
        throw ConfigError("config: unknown dataset kind '" + value + "'");
      }
    } else if (key == "dir") {
      cfg.data_dir = value;
    } else if (key == "train_images") {
      cfg.train_images = value;
    } else if (key == "train_labels") {
      cfg.train_labels = value;
    } else if (key == "test_images") {
      cfg.test_images = value;
    } else if (key == "test_labels") {
      cfg.test_labels = value;
    } else if (key == "classes") {
      cfg.synth_classes = parse_u64(full, value);
    } else if (key == "per_class") {
      cfg.synth_per_class = parse_u64(full, value);
    } else if (key == "test_per_class") {
      cfg.synth_test_per_class = parse_u64(full, value);
    } else if (key == "dim") {
      cfg.synth_dim = parse_u64(full, value);
    } else if (key == "spread") {
      cfg.synth_spread = parse_f64(full, value);
    } else if (key == "synth_seed") {
      cfg.synth_seed = parse_u64(full, value);
    } else if (key == "train_limit") {
      cfg.train_limit = parse_u64(full, value);
    } else if (key == "test_limit") {
      cfg.test_limit = parse_u64(full, value);
    } else {
      throw ConfigError("config: unknown key '" + full + "'");
    }
  } else if (section == "model") {
    if (key == "kind") {
      if (value == "baseline-cnn") {
        cfg.model = ModelKind::BaselineCnn;
      } else if (value == "mlp") {
        cfg.model = ModelKind::Mlp;
      } else {
        throw ConfigError("config: unknown model kind '" + value + "'");
      }
    } else if (key == "hidden") {
      cfg.hidden = parse_size_list(full, value);
    } else {
      throw ConfigError("config: unknown key '" + full + "'");
    }
  } else if (section == "regularizer") {
    if (key == "kind") {
      if (value == "none") {
        cfg.regularizer = RegularizerKind::None;
      } else if (value == "dropout") {
        cfg.regularizer = RegularizerKind::Dropout;
      } else if (value == "ap") {
        cfg.regularizer = RegularizerKind::Ap;
      } else {
        throw ConfigError("config: unknown regularizer '" + value + "'");
      }
    } else if (key == "q") {
      cfg.dropout_q = parse_f64(full, value);
    } else if (key == "p") {
      cfg.ap.keep_fraction = parse_f64(full, value);
    } else if (key == "mu") {
      cfg.ap.mu = parse_f64(full, value);
    } else if (key == "start") {
      cfg.ap.start = parse_u64(full, value);
    } else if (key == "post") {
      cfg.ap.post = parse_u64(full, value);
    } else if (key == "b0") {
      cfg.ap.reentry_b0 = parse_f64(full, value);
    } else if (key == "mode") {
      if (value == "prune-largest") {
        cfg.ap.mode = PruneMode::Largest;
      } else if (value == "prune-smallest") {
        cfg.ap.mode = PruneMode::Smallest;
      } else {
        throw ConfigError("config: unknown prune mode '" + value + "'");
      }
    } else {
      throw ConfigError("config: unknown key '" + full + "'");
    }
  } else if (section == "train") {
    if (key == "epochs") {
      cfg.epochs = parse_u64(full, value);
    } else if (key == "batch") {
      cfg.batch_size = parse_u64(full, value);
    } else if (key == "lr") {
      cfg.lr = parse_f64(full, value);
    } else if (key == "seed") {
      cfg.seed = parse_u64(full, value);
    } else if (key == "repeats") {
      cfg.repeats = parse_u64(full, value);
    } else if (key == "checkpoint_every") {
      cfg.checkpoint_every = parse_u64(full, value);
    } else if (key == "out") {
      cfg.out_dir = value;
    } else if (key == "timing") {
      cfg.timing = parse_bool(full, value);
    } else {
      throw ConfigError("config: unknown key '" + full + "'");
    }
  } else {
    throw ConfigError("config: unknown section '" + section + "'");
  }
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text,
                                   const std::string& origin) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::string section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[' && t.back() == ']') {
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": expected key = value");
    }
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (section.empty()) {
      throw ConfigError(origin + ":" + std::to_string(lineno) +
                        ": key outside any [section]");
    }
    apply_key(cfg, section, key, value);
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

void ExperimentConfig::validate() const {
  if (dataset == DatasetKind::Cifar10 && data_dir.empty()) {
    throw ConfigError("config: dataset.dir required for cifar10");
  }
  if (dataset == DatasetKind::Mnist &&
      (train_images.empty() || train_labels.empty() || test_images.empty() ||
       test_labels.empty())) {
    throw ConfigError("config: mnist needs train/test image and label paths");
  }
  if (dataset == DatasetKind::Synth) {
    if (synth_classes < 2) {
      throw ConfigError("config: dataset.classes must be >= 2");
    }
    if (synth_per_class == 0 || synth_dim == 0) {
      throw ConfigError("config: dataset.per_class and dataset.dim must be "
                        "positive");
    }
    if (synth_spread < 0.0) {
      throw ConfigError("config: dataset.spread must be >= 0");
    }
  }
  if (model == ModelKind::Mlp && hidden.empty()) {
    throw ConfigError("config: model.hidden must not be empty");
  }
  if (regularizer == RegularizerKind::Dropout &&
      !(dropout_q >= 0.0 && dropout_q < 1.0)) {
    throw ConfigError("config: regularizer.q must be in [0,1)");
  }
  if (regularizer == RegularizerKind::Ap) {
    try {
      ap.validate();
    } catch (const Error& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    if (epochs < ap.start + ap.post) {
      throw ConfigError("config: train.epochs must be >= start + post");
    }
  }
  if (epochs == 0) throw ConfigError("config: train.epochs must be positive");
  if (batch_size == 0) {
    throw ConfigError("config: train.batch must be positive");
  }
  if (!(lr >= 0.0)) throw ConfigError("config: train.lr must be >= 0");
  if (repeats == 0) {
    throw ConfigError("config: train.repeats must be positive");
  }
  if (out_dir.empty()) throw ConfigError("config: train.out must be set");
}

std::string render_config(const ExperimentConfig& cfg) {
  std::ostringstream os;
  os << "[dataset]\n";
  switch (cfg.dataset) {
    case DatasetKind::Cifar10:
      os << "kind = cifar10\n";
      os << "dir = " << cfg.data_dir << "\n";
      break;
    case DatasetKind::Mnist:
      os << "kind = mnist\n";
      os << "train_images = " << cfg.train_images << "\n";
      os << "train_labels = " << cfg.train_labels << "\n";
      os << "test_images = " << cfg.test_images << "\n";
      os << "test_labels = " << cfg.test_labels << "\n";
      break;
    case DatasetKind::Synth:
      os << "kind = synth\n";
      os << "classes = " << cfg.synth_classes << "\n";
      os << "per_class = " << cfg.synth_per_class << "\n";
      os << "test_per_class = " << cfg.synth_test_per_class << "\n";
      os << "dim = " << cfg.synth_dim << "\n";
      os << "spread = " << cfg.synth_spread << "\n";
      os << "synth_seed = " << cfg.synth_seed << "\n";
      break;
  }
  if (cfg.train_limit) os << "train_limit = " << cfg.train_limit << "\n";
  if (cfg.test_limit) os << "test_limit = " << cfg.test_limit << "\n";

  os << "\n[model]\n";
  os << "kind = "
     << (cfg.model == ModelKind::BaselineCnn ? "baseline-cnn" : "mlp") << "\n";
  if (cfg.model == ModelKind::Mlp) {
    os << "hidden = ";
    for (std::size_t i = 0; i < cfg.hidden.size(); ++i) {
      if (i) os << ",";
      os << cfg.hidden[i];
    }
    os << "\n";
  }

  os << "\n[regularizer]\n";
  switch (cfg.regularizer) {
    case RegularizerKind::None:
      os << "kind = none\n";
      break;
    case RegularizerKind::Dropout:
      os << "kind = dropout\n";
      os << "q = " << cfg.dropout_q << "\n";
      break;
    case RegularizerKind::Ap:
      os << "kind = ap\n";
      os << "p = " << cfg.ap.keep_fraction << "\n";
      os << "mu = " << cfg.ap.mu << "\n";
      os << "start = " << cfg.ap.start << "\n";
      os << "post = " << cfg.ap.post << "\n";
      os << "b0 = " << cfg.ap.reentry_b0 << "\n";
      os << "mode = "
         << (cfg.ap.mode == PruneMode::Largest ? "prune-largest"
                                               : "prune-smallest")
         << "\n";
      break;
  }

  os << "\n[train]\n";
  os << "epochs = " << cfg.epochs << "\n";
  os << "batch = " << cfg.batch_size << "\n";
  os << "lr = " << cfg.lr << "\n";
  os << "seed = " << cfg.seed << "\n";
  os << "repeats = " << cfg.repeats << "\n";
  if (cfg.checkpoint_every) {
    os << "checkpoint_every = " << cfg.checkpoint_every << "\n";
  }
  os << "out = " << cfg.out_dir << "\n";
  os << "timing = " << (cfg.timing ? "true" : "false") << "\n";
  return os.str();
}

}  // namespace annealprune
