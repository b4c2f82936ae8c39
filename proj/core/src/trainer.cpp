#include "dehaze/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace dehaze {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used == v.size()) return out;
  } catch (const std::exception&) {
  }
  throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long out = std::stoll(v, &used);
    if (used == v.size()) return out;
  } catch (const std::exception&) {
  }
  throw ConfigError("'" + key + "' expects an integer, got '" + v + "'");
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] != '-') {
      const unsigned long long out = std::stoull(v, &used);
      if (used == v.size()) return out;
    }
  } catch (const std::exception&) {
  }
  throw ConfigError("'" + key + "' expects a non-negative integer, got '" + v + "'");
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("'" + key + "' expects true or false, got '" + v + "'");
}

bool all_finite(const std::vector<NamedParam<float>>& params) {
  for (const auto& p : params) {
    for (float v : p.var.value().span()) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

// Decorrelated seeds for the networks and the loader from one user seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace

std::string to_string(Preset preset) {
  switch (preset) {
    case Preset::AP: return "A+P";
    case Preset::APFR: return "A+P+FR";
    case Preset::APFRS: return "A+P+FR+S";
  }
  return "?";
}

Preset parse_preset(const std::string& text) {
  if (text == "A+P") return Preset::AP;
  if (text == "A+P+FR") return Preset::APFR;
  if (text == "A+P+FR+S") return Preset::APFRS;
  throw ConfigError("unknown preset '" + text + "' (expected A+P, A+P+FR or A+P+FR+S)");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw ConfigError("weight_decay must be >= 0");
  if (!(lr_gamma > 0.0 && lr_gamma <= 1.0)) throw ConfigError("lr_gamma must lie in (0, 1]");
  if (lr_step < 1) throw ConfigError("lr_step must be >= 1");
  if (max_iterations < 1) throw ConfigError("max_iterations must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (patch_size < 0 || patch_size % 4 != 0) throw ConfigError("patch_size must be a non-negative multiple of 4");
  if (checkpoint_interval < 1) throw ConfigError("checkpoint_interval must be >= 1");
  if (feature_reg_layer < 1 || feature_reg_layer > kEncoderLayers) {
    throw ConfigError("feature_reg_layer must lie in [1, " + std::to_string(kEncoderLayers) + "]");
  }
  if (extractor.empty()) throw ConfigError("extractor must be 'random' or a path");
  weights.validate();
}

losses::LossWeights TrainConfig::effective_weights() const {
  losses::LossWeights w = weights;
  if (preset == Preset::AP || preset == Preset::APFR) w.gamma3 = 0.0;
  if (preset == Preset::AP) w.gamma4 = 0.0;
  return w;
}

double TrainConfig::lr_at(std::int64_t iteration) const {
  return learning_rate * std::pow(lr_gamma, static_cast<double>(iteration / lr_step));
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os << "learning_rate = " << fmt17(learning_rate) << "\n"
     << "weight_decay = " << fmt17(weight_decay) << "\n"
     << "lr_gamma = " << fmt17(lr_gamma) << "\n"
     << "lr_step = " << lr_step << "\n"
     << "max_iterations = " << max_iterations << "\n"
     << "batch_size = " << batch_size << "\n"
     << "seed = " << seed << "\n"
     << "gamma1 = " << fmt17(weights.gamma1) << "\n"
     << "gamma2 = " << fmt17(weights.gamma2) << "\n"
     << "gamma3 = " << fmt17(weights.gamma3) << "\n"
     << "gamma4 = " << fmt17(weights.gamma4) << "\n"
     << "preset = " << to_string(preset) << "\n"
     << "patch_size = " << patch_size << "\n"
     << "checkpoint_interval = " << checkpoint_interval << "\n"
     << "feature_reg_layer = " << feature_reg_layer << "\n"
     << "feature_reg_reduction = "
     << (feature_reg_reduction == losses::L1Reduction::SumPerSample ? "sum" : "mean") << "\n"
     << "adversarial_variant = "
     << (adversarial_variant == losses::AdversarialVariant::Saturating ? "saturating" : "non-saturating") << "\n"
     << "symmetric_feature_grad = " << (symmetric_feature_grad ? "true" : "false") << "\n"
     << "discriminator_updates = " << (discriminator_updates ? "true" : "false") << "\n"
     << "extractor = " << extractor << "\n"
     << "extractor_tap = " << extractor_tap << "\n"
     << "extractor_seed = " << extractor_seed << "\n";
  return os.str();
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  if (key == "learning_rate") learning_rate = parse_real(key, value);
  else if (key == "weight_decay") weight_decay = parse_real(key, value);
  else if (key == "lr_gamma") lr_gamma = parse_real(key, value);
  else if (key == "lr_step") lr_step = parse_int(key, value);
  else if (key == "max_iterations") max_iterations = parse_int(key, value);
  else if (key == "batch_size") batch_size = static_cast<int>(parse_int(key, value));
  else if (key == "seed") seed = parse_uint(key, value);
  else if (key == "gamma1") weights.gamma1 = parse_real(key, value);
  else if (key == "gamma2") weights.gamma2 = parse_real(key, value);
  else if (key == "gamma3") weights.gamma3 = parse_real(key, value);
  else if (key == "gamma4") weights.gamma4 = parse_real(key, value);
  else if (key == "preset") preset = parse_preset(value);
  else if (key == "patch_size") patch_size = static_cast<int>(parse_int(key, value));
  else if (key == "checkpoint_interval") checkpoint_interval = parse_int(key, value);
  else if (key == "feature_reg_layer") feature_reg_layer = static_cast<int>(parse_int(key, value));
  else if (key == "feature_reg_reduction") {
    if (value == "sum") feature_reg_reduction = losses::L1Reduction::SumPerSample;
    else if (value == "mean") feature_reg_reduction = losses::L1Reduction::MeanPerElement;
    else throw ConfigError("feature_reg_reduction must be sum or mean");
  } else if (key == "adversarial_variant") {
    if (value == "saturating") adversarial_variant = losses::AdversarialVariant::Saturating;
    else if (value == "non-saturating") adversarial_variant = losses::AdversarialVariant::NonSaturating;
    else throw ConfigError("adversarial_variant must be saturating or non-saturating");
  } else if (key == "symmetric_feature_grad") symmetric_feature_grad = parse_bool(key, value);
  else if (key == "discriminator_updates") discriminator_updates = parse_bool(key, value);
  else if (key == "extractor") extractor = value;
  else if (key == "extractor_tap") extractor_tap = value;
  else if (key == "extractor_seed") extractor_seed = parse_uint(key, value);
  else throw ConfigError("unknown config key '" + key + "'");
}

TrainConfig TrainConfig::parse(const std::string& text) {
  TrainConfig c;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    try {
      c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config " + path.string());
  std::ostringstream os;
  os << f.rdbuf();
  return parse(os.str());
}

FeatureExtractor<float> make_extractor(const TrainConfig& config) {
  if (config.extractor == "random") return FeatureExtractor<float>::random(config.extractor_seed, config.extractor_tap);
  return FeatureExtractor<float>::load(config.extractor, config.extractor_tap);
}

Trainer::Trainer(TrainConfig config, FeatureExtractor<float> extractor)
    : config_((config.validate(), std::move(config))),
      weights_(config_.effective_weights()),
      extractor_(std::move(extractor)),
      generator_(derive_seed(config_.seed, 0)),
      discriminator_(derive_seed(config_.seed, 1)),
      g_opt_(generator_.parameters(), AdamConfig{0.9, 0.999, 1e-8, config_.weight_decay}),
      d_opt_(discriminator_.parameters(), AdamConfig{0.9, 0.999, 1e-8, config_.weight_decay}) {}

std::uint64_t Trainer::config_fingerprint(const TrainConfig& config) {
  TrainConfig c = config;
  c.max_iterations = 1;
  c.checkpoint_interval = 1;
  return fnv1a64(c.to_text());
}

void Trainer::numerical_failure(const std::string& what, const dataset::Batch& batch,
                                const losses::LossBreakdown& partial) const {
  std::string dump;
  if (dump_dir_) {
    const fs::path path = *dump_dir_ / ("numerical_failure_iter" + std::to_string(iteration_ + 1) + ".txt");
    std::ofstream f(path);
    f << "what\t" << what << "\n"
      << "iteration\t" << iteration_ + 1 << "\n"
      << "epoch\t" << batch.epoch << "\n"
      << "batch\t" << batch.index << "\n"
      << "samples";
    for (const auto& n : batch.names) f << '\t' << n;
    f << "\nadversarial\t" << partial.adversarial << "\nperceptual\t" << partial.perceptual << "\nstyle\t"
      << partial.style << "\nfeature_reg\t" << partial.feature_reg << "\ntotal\t" << partial.total << "\n";
    dump = path.string();
  }
  throw NumericalError(what + " at iteration " + std::to_string(iteration_ + 1) + " (epoch " +
                           std::to_string(batch.epoch) + ", batch " + std::to_string(batch.index) + ")",
                       dump);
}

StepResult Trainer::step(const dataset::Batch& batch) {
  StepResult r;
  r.iteration = iteration_ + 1;
  r.lr = config_.lr_at(r.iteration);

  const Var<float> hazy(batch.hazy);
  const Var<float> clean(batch.clean);
  const Var<float> zero(Tensor<float>::scalar(0.0f));

  // ---- generator update ----
  const auto enc = generator_.encode(hazy);
  const Var<float> out = generator_.decode(enc);

  Var<float> adv = zero, perc = zero, style = zero, fr = zero;
  if (weights_.gamma1 > 0.0) {
    adv = losses::adversarial_loss(discriminator_.score(hazy, out), config_.adversarial_variant);
  }
  if (weights_.gamma2 > 0.0 || weights_.gamma3 > 0.0) {
    Var<float> target;
    {
      NoGradGuard ng;
      target = extractor_.features(clean);
    }
    const Var<float> feats = extractor_.features(out);
    if (weights_.gamma2 > 0.0) perc = losses::feature_mse(feats, target);
    if (weights_.gamma3 > 0.0) style = losses::style_from_features(feats, target);
  }
  if (weights_.gamma4 > 0.0) {
    const std::size_t k = static_cast<std::size_t>(config_.feature_reg_layer - 1);
    Var<float> clean_features;
    if (config_.symmetric_feature_grad) {
      clean_features = generator_.encode(clean).layers[k];
    } else {
      NoGradGuard ng;
      clean_features = generator_.encode(clean).layers[k];
    }
    fr = losses::feature_reg_loss(enc.layers[k], clean_features, config_.feature_reg_reduction);
  }
  const Var<float> total = losses::weighted_total(weights_, adv, perc, style, fr);
  r.generator = {adv.value().item(), perc.value().item(), style.value().item(), fr.value().item(),
                 total.value().item()};
  if (!std::isfinite(r.generator.total)) numerical_failure("non-finite generator loss", batch, r.generator);

  g_opt_.zero_grad();
  backward(total);
  g_opt_.step(r.lr);
  if (!all_finite(g_opt_.params())) numerical_failure("non-finite generator parameter", batch, r.generator);

  // ---- discriminator update ----
  if (config_.discriminator_updates) {
    const Var<float> fake_image = detach(out);
    const Var<float> dl = losses::discriminator_loss(discriminator_.score(hazy, fake_image),
                                                     discriminator_.score(hazy, clean));
    r.discriminator = dl.value().item();
    if (!std::isfinite(r.discriminator)) numerical_failure("non-finite discriminator loss", batch, r.generator);
    d_opt_.zero_grad();
    backward(dl);
    d_opt_.step(r.lr);
    if (!all_finite(d_opt_.params())) numerical_failure("non-finite discriminator parameter", batch, r.generator);
  }

  iteration_ = r.iteration;
  return r;
}

void Trainer::save(Archive& archive) const {
  generator_.save(archive);
  discriminator_.save(archive);
  g_opt_.save(archive, "adam.generator.");
  d_opt_.save(archive, "adam.discriminator.");
  archive.set_meta("trainer.iteration", std::to_string(iteration_));
  archive.set_meta("trainer.config", config_.to_text());
  archive.set_meta("trainer.config_fingerprint", to_hex(config_fingerprint(config_)));
  archive.set_meta("extractor.fingerprint", to_hex(extractor_.fingerprint()));
}

void Trainer::load(const Archive& archive) {
  const std::string want_cfg = to_hex(config_fingerprint(config_));
  if (archive.require_meta("trainer.config_fingerprint") != want_cfg) {
    throw FingerprintMismatch("checkpoint was written with a different training configuration");
  }
  if (archive.require_meta("extractor.fingerprint") != to_hex(extractor_.fingerprint())) {
    throw FingerprintMismatch("checkpoint was written with a different perceptual extractor");
  }
  generator_.load(archive);
  discriminator_.load(archive);
  g_opt_.load(archive, "adam.generator.");
  d_opt_.load(archive, "adam.discriminator.");
  iteration_ = std::stoll(archive.require_meta("trainer.iteration"));
}

namespace {

std::string metrics_row(const StepResult& r, double wall) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%lld\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.3f",
                static_cast<long long>(r.iteration), r.generator.adversarial, r.generator.perceptual,
                r.generator.style, r.generator.feature_reg, r.generator.total, r.discriminator, r.lr, wall);
  return buf;
}

// Keeps the header and the rows up to `iteration`, so a resumed run appends
// after the checkpoint it continues from.
void truncate_log(const fs::path& path, std::int64_t iteration) {
  std::vector<std::string> keep{kMetricsHeader};
  if (std::ifstream in(path); in) {
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (std::stoll(line.substr(0, line.find('\t'))) > iteration) break;
      keep.push_back(line);
    }
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& l : keep) out << l << '\n';
}

fs::path checkpoint_path(const fs::path& out_dir, std::int64_t iteration) {
  char name[64];
  std::snprintf(name, sizeof name, "iter_%08lld.dhz", static_cast<long long>(iteration));
  return out_dir / "checkpoints" / name;
}

}  // namespace

TrainResult train(const TrainConfig& config, const fs::path& dataset_root, const fs::path& out_dir,
                  const TrainOptions& options) {
  config.validate();
  std::error_code ec;
  fs::create_directories(out_dir / "checkpoints", ec);
  {
    const fs::path probe = out_dir / ".write_probe";
    std::ofstream f(probe);
    if (ec || !f) throw IoError("output directory is not writable: " + out_dir.string());
    f.close();
    fs::remove(probe, ec);
  }

  dataset::PairLoader loader(dataset_root, config.patch_size, config.batch_size, derive_seed(config.seed, 2));
  Trainer trainer(config, make_extractor(config));
  trainer.set_dump_dir(out_dir);

  if (options.resume) {
    const Archive ckpt = Archive::load(*options.resume);
    if (ckpt.require_meta("dataset.fingerprint") != to_hex(loader.fingerprint())) {
      throw FingerprintMismatch("checkpoint was written for a different dataset");
    }
    trainer.load(ckpt);
    loader.load_state(ckpt);
  }

  TrainResult result;
  result.metrics_log = out_dir / "metrics.tsv";
  truncate_log(result.metrics_log, trainer.iteration());
  std::ofstream log(result.metrics_log, std::ios::app);

  const auto save_checkpoint = [&](std::int64_t it) {
    Archive a;
    trainer.save(a);
    loader.save_state(a);
    a.set_meta("dataset.fingerprint", to_hex(loader.fingerprint()));
    const fs::path path = checkpoint_path(out_dir, it);
    a.save(path);
    return path;
  };

  const auto start = std::chrono::steady_clock::now();
  while (trainer.iteration() < config.max_iterations) {
    const dataset::Batch batch = loader.next();
    const StepResult r = trainer.step(batch);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log << metrics_row(r, wall) << '\n' << std::flush;
    result.last = r;
    if (r.iteration % config.checkpoint_interval == 0) result.final_checkpoint = save_checkpoint(r.iteration);
    if (options.on_step && !options.on_step(r)) break;
  }
  if (result.final_checkpoint != checkpoint_path(out_dir, trainer.iteration())) {
    result.final_checkpoint = save_checkpoint(trainer.iteration());
  }
  result.iterations = trainer.iteration();
  return result;
}

}  // namespace dehaze
