#include "vlp/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "vlp/errors.hpp"

namespace vlp {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

}  // namespace

ConfigFile ConfigFile::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path);
}

ConfigFile ConfigFile::parse(const std::string& text, const std::string& where) {
  ConfigFile cfg;
  cfg.where_ = where;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto split = line.find_first_of(" \t=");
    if (split == std::string::npos)
      throw ParseError(where + ":" + std::to_string(lineno) + ": key '" + line +
                       "' has no value");
    const std::string key = line.substr(0, split);
    std::string value = trim(line.substr(split + 1));
    if (!value.empty() && value.front() == '=') value = trim(value.substr(1));
    if (value.empty())
      throw ParseError(where + ":" + std::to_string(lineno) + ": key '" + key +
                       "' has no value");
    if (!cfg.values_.emplace(key, value).second)
      throw ParseError(where + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
  }
  return cfg;
}

bool ConfigFile::has(const std::string& key) const { return values_.count(key) != 0; }

const std::string& ConfigFile::raw(const std::string& key) const {
  consumed_.insert(key);
  return values_.at(key);
}

std::string ConfigFile::get_string(const std::string& key, const std::string& fallback) const {
  return has(key) ? raw(key) : fallback;
}

int64_t ConfigFile::get_int(const std::string& key, int64_t fallback) const {
  if (!has(key)) return fallback;
  try {
    size_t used = 0;
    const int64_t v = std::stoll(raw(key), &used);
    if (used != raw(key).size()) throw std::invalid_argument("trailing text");
    return v;
  } catch (const std::exception&) {
    throw ParseError(where_ + ": key '" + key + "' is not an integer: " + values_.at(key));
  }
}

uint64_t ConfigFile::get_uint(const std::string& key, uint64_t fallback) const {
  if (!has(key)) return fallback;
  try {
    size_t used = 0;
    const uint64_t v = std::stoull(raw(key), &used);
    if (used != raw(key).size()) throw std::invalid_argument("trailing text");
    return v;
  } catch (const std::exception&) {
    throw ParseError(where_ + ": key '" + key + "' is not an unsigned integer: " +
                     values_.at(key));
  }
}

double ConfigFile::get_double(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  try {
    size_t used = 0;
    const double v = std::stod(raw(key), &used);
    if (used != raw(key).size()) throw std::invalid_argument("trailing text");
    return v;
  } catch (const std::exception&) {
    throw ParseError(where_ + ": key '" + key + "' is not a number: " + values_.at(key));
  }
}

bool ConfigFile::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  std::string v = raw(key);
  std::transform(v.begin(), v.end(), v.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ParseError(where_ + ": key '" + key + "' is not a boolean: " + values_.at(key));
}

std::vector<std::string> ConfigFile::unused_keys() const {
  std::vector<std::string> out;
  for (const auto& [key, value] : values_)
    if (!consumed_.count(key)) out.push_back(key);
  return out;
}

std::string task_name(TaskKind task) {
  switch (task) {
    case TaskKind::Pretrain:
      return "pretrain";
    case TaskKind::FinetuneRetrieval:
      return "finetune-retrieval";
    default:
      return "finetune-vcr";
  }
}

TaskKind task_from_name(const std::string& name) {
  if (name == "pretrain") return TaskKind::Pretrain;
  if (name == "finetune-retrieval") return TaskKind::FinetuneRetrieval;
  if (name == "finetune-vcr") return TaskKind::FinetuneVcr;
  throw ValueError("unknown task '" + name +
                   "' (expected pretrain, finetune-retrieval or finetune-vcr)");
}

void TrainConfig::validate() const {
  encoder.validate();
  if (!(base_lr > 0)) throw ValueError("base_lr must be > 0");
  if (epochs < 1) throw ValueError("epochs must be >= 1");
  if (batch_size < 1) throw ValueError("batch_size must be >= 1");
  if (accumulation_steps < 1) throw ValueError("accumulation_steps must be >= 1");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0))
    throw ValueError("warmup_fraction must be in [0,1)");
  if (vcr_region_budget < 1) throw ValueError("vcr.region_budget must be >= 1");
  retrieval.validate();
}

void apply_config(TrainConfig& cfg, const ConfigFile& file) {
  if (file.has("task")) cfg.task = task_from_name(file.get_string("task", ""));
  cfg.base_lr = file.get_double("base_lr", cfg.base_lr);
  cfg.epochs = static_cast<int>(file.get_int("epochs", cfg.epochs));
  cfg.batch_size = static_cast<int>(file.get_int("batch_size", cfg.batch_size));
  cfg.accumulation_steps =
      static_cast<int>(file.get_int("accumulation_steps", cfg.accumulation_steps));
  cfg.warmup_fraction = file.get_double("warmup_fraction", cfg.warmup_fraction);
  if (file.has("decay")) {
    const std::string decay = file.get_string("decay", "linear");
    if (decay == "linear")
      cfg.decay = DecayStyle::LinearToZero;
    else if (decay == "constant")
      cfg.decay = DecayStyle::ConstantAfterWarmup;
    else
      throw ParseError("decay must be 'linear' or 'constant', got '" + decay + "'");
  }
  cfg.seed = file.get_uint("seed", cfg.seed);

  cfg.encoder.num_layers = static_cast<int>(file.get_int("encoder.num_layers",
                                                         cfg.encoder.num_layers));
  cfg.encoder.hidden_size = static_cast<int>(file.get_int("encoder.hidden_size",
                                                          cfg.encoder.hidden_size));
  cfg.encoder.num_heads = static_cast<int>(file.get_int("encoder.num_heads",
                                                        cfg.encoder.num_heads));
  cfg.encoder.ffn_size = static_cast<int>(file.get_int("encoder.ffn_size",
                                                       cfg.encoder.ffn_size));
  cfg.encoder.max_seq_len = static_cast<int>(file.get_int("encoder.max_seq_len",
                                                          cfg.encoder.max_seq_len));
  cfg.encoder.dropout_rate =
      static_cast<float>(file.get_double("encoder.dropout", cfg.encoder.dropout_rate));

  cfg.weights.mlm = file.get_double("weights.mlm", cfg.weights.mlm);
  cfg.weights.moc = file.get_double("weights.moc", cfg.weights.moc);
  cfg.weights.vlm = file.get_double("weights.vlm", cfg.weights.vlm);

  cfg.mask.text_mask_rate = file.get_double("mask.text_rate", cfg.mask.text_mask_rate);
  cfg.mask.region_mask_rate = file.get_double("mask.region_rate", cfg.mask.region_mask_rate);
  cfg.mask.region_zero_prob = file.get_double("mask.region_zero_prob",
                                              cfg.mask.region_zero_prob);
  cfg.mask.text_style.mask_prob = file.get_double("mask.mask_prob",
                                                  cfg.mask.text_style.mask_prob);
  cfg.mask.text_style.random_prob = file.get_double("mask.random_prob",
                                                    cfg.mask.text_style.random_prob);

  cfg.retrieval.margin = file.get_double("retrieval.margin", cfg.retrieval.margin);
  cfg.retrieval.lambda_text_to_image =
      file.get_double("retrieval.lambda_text_to_image", cfg.retrieval.lambda_text_to_image);
  cfg.retrieval.lambda_image_to_text =
      file.get_double("retrieval.lambda_image_to_text", cfg.retrieval.lambda_image_to_text);
  cfg.retrieval.negatives_per_positive = static_cast<int>(
      file.get_int("retrieval.negatives", cfg.retrieval.negatives_per_positive));
  cfg.retrieval.learning_rate =
      file.get_double("retrieval.learning_rate", cfg.retrieval.learning_rate);

  cfg.vcr_region_budget =
      static_cast<int>(file.get_int("vcr.region_budget", cfg.vcr_region_budget));
  cfg.validate();
}

SynthConfig synth_config(const ConfigFile& file) {
  SynthConfig cfg;
  cfg.num_concepts = static_cast<int>(file.get_int("synth.num_concepts", cfg.num_concepts));
  cfg.d_vis = static_cast<int>(file.get_int("synth.d_vis", cfg.d_vis));
  cfg.pairs = static_cast<int>(file.get_int("synth.pairs", cfg.pairs));
  cfg.holdout_pairs = static_cast<int>(file.get_int("synth.holdout_pairs", cfg.holdout_pairs));
  cfg.vcr_examples = static_cast<int>(file.get_int("synth.vcr_examples", cfg.vcr_examples));
  cfg.min_regions = static_cast<int>(file.get_int("synth.min_regions", cfg.min_regions));
  cfg.max_regions = static_cast<int>(file.get_int("synth.max_regions", cfg.max_regions));
  cfg.feature_noise = file.get_double("synth.feature_noise", cfg.feature_noise);
  cfg.image_width = file.get_double("synth.image_width", cfg.image_width);
  cfg.image_height = file.get_double("synth.image_height", cfg.image_height);
  cfg.seed = file.get_uint("synth.seed", cfg.seed);
  cfg.validate();
  return cfg;
}

}  // namespace vlp
