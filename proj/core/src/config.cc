#include "cdnz/config.h"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace cdnz {
namespace {

std::string Trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string FormatDouble(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

double ParseDouble(const std::string& key, const std::string& v) {
  double out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': '" + v + "' is not a number");
  }
  return out;
}

template <typename I>
I ParseInt(const std::string& key, const std::string& v) {
  I out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size()) {
    throw ConfigError("config key '" + key + "': '" + v + "' is not an integer");
  }
  return out;
}

bool ParseBool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "': '" + v + "' is not a boolean");
}

// Binding of one `section.key` to a config field.
struct Field {
  std::string section;
  std::string key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

void AddSchedule(std::vector<Field>& fields, const std::string& section, OptimizerSchedule& s) {
  const auto name = [section](const char* k) { return section + "." + k; };
  fields.push_back({section, "batch_size", [&s] { return std::to_string(s.batch_size); },
                    [&s, name](const std::string& v) { s.batch_size = ParseInt<int>(name("batch_size"), v); }});
  fields.push_back({section, "patch_size", [&s] { return std::to_string(s.patch_size); },
                    [&s, name](const std::string& v) { s.patch_size = ParseInt<int>(name("patch_size"), v); }});
  fields.push_back({section, "lr0", [&s] { return FormatDouble(s.lr0); },
                    [&s, name](const std::string& v) { s.lr0 = ParseDouble(name("lr0"), v); }});
  fields.push_back({section, "decay_every", [&s] { return std::to_string(s.decay_every); },
                    [&s, name](const std::string& v) { s.decay_every = ParseInt<int64_t>(name("decay_every"), v); }});
  fields.push_back({section, "iterations", [&s] { return std::to_string(s.iterations); },
                    [&s, name](const std::string& v) { s.iterations = ParseInt<int64_t>(name("iterations"), v); }});
  fields.push_back({section, "momentum", [&s] { return FormatDouble(s.momentum); },
                    [&s, name](const std::string& v) { s.momentum = ParseDouble(name("momentum"), v); }});
  fields.push_back({section, "weight_decay", [&s] { return FormatDouble(s.weight_decay); },
                    [&s, name](const std::string& v) { s.weight_decay = ParseDouble(name("weight_decay"), v); }});
}

template <typename E>
Field EnumField(const std::string& section, const std::string& key, E& target, std::string (*to)(E),
                E (*parse)(const std::string&)) {
  const std::string full = section + "." + key;
  return {section, key, [&target, to] { return to(target); },
          [&target, parse, full](const std::string& v) {
            try {
              target = parse(v);
            } catch (const InvalidArgument& e) {
              throw ConfigError("config key '" + full + "': " + e.what());
            }
          }};
}

Field StringField(const std::string& section, const std::string& key, std::string& target) {
  return {section, key, [&target] { return target; }, [&target](const std::string& v) { target = v; }};
}

Field DoubleField(const std::string& section, const std::string& key, double& target) {
  const std::string full = section + "." + key;
  return {section, key, [&target] { return FormatDouble(target); },
          [&target, full](const std::string& v) { target = ParseDouble(full, v); }};
}

template <typename I>
Field IntField(const std::string& section, const std::string& key, I& target) {
  const std::string full = section + "." + key;
  return {section, key, [&target] { return std::to_string(target); },
          [&target, full](const std::string& v) { target = ParseInt<I>(full, v); }};
}

Field BoolField(const std::string& section, const std::string& key, bool& target) {
  const std::string full = section + "." + key;
  return {section, key, [&target] { return std::string(target ? "true" : "false"); },
          [&target, full](const std::string& v) { target = ParseBool(full, v); }};
}

std::vector<Field> Bind(ExperimentConfig& c) {
  std::vector<Field> f;
  f.push_back(EnumField<Task>("experiment", "task", c.task, &ToString, &ParseTask));
  f.push_back(DoubleField("experiment", "sigma", c.sigma));
  f.push_back(DoubleField("experiment", "lambda", c.lambda));
  f.push_back(IntField("experiment", "seed", c.seed));
  f.push_back(IntField("experiment", "noise_seed", c.noise_seed));
  f.push_back(BoolField("experiment", "quantized_psnr", c.quantized_psnr));

  f.push_back(IntField("denoiser", "scales", c.denoiser.scales));
  f.push_back(EnumField<Fusion>("denoiser", "fusion", c.denoiser.fusion, &ToString, &ParseFusion));
  f.push_back(EnumField<Downsample>("denoiser", "downsample", c.denoiser.downsample, &ToString, &ParseDownsample));
  f.push_back(IntField("denoiser", "input_channels", c.denoiser.input_channels));
  f.push_back(IntField("denoiser", "width", c.denoiser.width));
  f.push_back(EnumField<SkipOrder>("denoiser", "skip_order", c.denoiser.skip_order, &ToString, &ParseSkipOrder));

  AddSchedule(f, "denoiser_schedule", c.denoiser_schedule);
  AddSchedule(f, "head_schedule", c.head_schedule);
  AddSchedule(f, "cascade_schedule", c.cascade_schedule);

  const std::string widths_key = "head.widths";
  f.push_back({"head", "widths",
               [&c] {
                 return std::to_string(c.head_widths[0]) + "," + std::to_string(c.head_widths[1]) + "," +
                        std::to_string(c.head_widths[2]);
               },
               [&c, widths_key](const std::string& v) {
                 std::istringstream is(v);
                 std::string part;
                 std::vector<int> w;
                 while (std::getline(is, part, ',')) w.push_back(ParseInt<int>(widths_key, Trim(part)));
                 if (w.size() != 3) throw ConfigError("config key 'head.widths' needs three comma-separated widths");
                 for (int i = 0; i < 3; ++i) c.head_widths[i] = w[i];
               }});
  f.push_back(DoubleField("head", "target_metric", c.head_target));

  f.push_back(BoolField("cascade", "warm_start", c.warm_start));
  f.push_back(BoolField("cascade", "fixed_noise", c.fixed_noise));

  f.push_back(StringField("data", "corpus_manifest", c.corpus_manifest));
  f.push_back(StringField("data", "train_manifest", c.train_manifest));
  f.push_back(StringField("data", "test_manifest", c.test_manifest));
  f.push_back(IntField("data", "toy_corpus", c.toy_corpus));
  f.push_back(IntField("data", "toy_train", c.toy_train));
  f.push_back(IntField("data", "toy_test", c.toy_test));
  f.push_back(IntField("data", "toy_seed", c.toy_seed));
  f.push_back(IntField("data", "toy_size", c.toy.size));
  f.push_back(IntField("data", "corpus_size", c.corpus_size));
  f.push_back(DoubleField("data", "texture_amplitude", c.toy.texture_amplitude));
  f.push_back(IntField("data", "texture_period", c.toy.texture_period));

  f.push_back(StringField("paths", "denoiser_checkpoint", c.denoiser_checkpoint));
  f.push_back(StringField("paths", "head_checkpoint", c.head_checkpoint));
  f.push_back(StringField("paths", "joint_checkpoint", c.joint_checkpoint));
  f.push_back(StringField("paths", "cross_checkpoint", c.cross_checkpoint));
  return f;
}

void ResolvePath(std::string& p, const std::filesystem::path& base) {
  if (p.empty() || base.empty()) return;
  const std::filesystem::path path(p);
  if (path.is_relative()) p = (base / path).lexically_normal().string();
}

}  // namespace

OptimizerSchedule DeskSchedule() {
  OptimizerSchedule s;
  s.batch_size = 8;
  s.patch_size = 32;
  s.lr0 = 1.0;
  s.decay_every = 8000;
  s.iterations = 20000;
  s.momentum = 0.9;
  return s;
}

OptimizerSchedule DeskHeadSchedule() {
  OptimizerSchedule s;
  s.batch_size = 16;
  s.patch_size = 32;
  s.lr0 = 0.1;
  s.decay_every = 600;
  s.iterations = 800;
  s.momentum = 0.9;
  return s;
}

OptimizerSchedule DeskCascadeSchedule() {
  OptimizerSchedule s = DeskSchedule();
  // Small step: the frozen head's gradient dominates L_D early on and drags
  // the denoiser away from faithful reconstruction at larger rates.
  s.lr0 = 0.01;
  s.decay_every = 375;
  s.iterations = 500;
  return s;
}

DenoiserConfig DeskDenoiser() {
  DenoiserConfig c;
  c.width = 16;
  return c;
}

CascadeConfig ExperimentConfig::Cascade() const {
  CascadeConfig c;
  c.lambda = lambda;
  c.sigma = sigma;
  c.task = task;
  c.schedule = cascade_schedule;
  c.seed = seed;
  c.warm_start = warm_start;
  c.fixed_noise = fixed_noise;
  return c;
}

ExperimentConfig ExperimentConfig::Parse(const std::string& text, const std::filesystem::path& base_dir) {
  ExperimentConfig config;
  std::map<std::string, Field*> by_name;
  std::set<std::string> sections;
  std::vector<Field> fields = Bind(config);
  for (Field& f : fields) {
    by_name[f.section + "." + f.key] = &f;
    sections.insert(f.section);
  }
  std::istringstream is(text);
  std::string line, section;
  std::set<std::string> seen;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = Trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": malformed section header");
      section = Trim(line.substr(1, line.size() - 2));
      if (!sections.count(section)) throw ConfigError("unknown config section '" + section + "'");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = Trim(line.substr(0, eq));
    const std::string value = Trim(line.substr(eq + 1));
    if (section.empty()) throw ConfigError("config key '" + key + "' appears before any [section]");
    const std::string full = section + "." + key;
    const auto it = by_name.find(full);
    if (it == by_name.end()) throw ConfigError("unknown config key '" + full + "'");
    if (!seen.insert(full).second) throw ConfigError("config key '" + full + "' set twice");
    it->second->set(value);
  }
  ResolvePath(config.corpus_manifest, base_dir);
  ResolvePath(config.train_manifest, base_dir);
  ResolvePath(config.test_manifest, base_dir);
  ResolvePath(config.denoiser_checkpoint, base_dir);
  ResolvePath(config.head_checkpoint, base_dir);
  ResolvePath(config.joint_checkpoint, base_dir);
  ResolvePath(config.cross_checkpoint, base_dir);
  config.Validate();
  return config;
}

ExperimentConfig ExperimentConfig::Load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FileNotFound("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return Parse(ss.str(), path.parent_path());
}

std::string ExperimentConfig::ToText() const {
  ExperimentConfig copy = *this;
  std::string out, section;
  for (const Field& f : Bind(copy)) {
    if (f.section != section) {
      if (!section.empty()) out += "\n";
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += f.key + " = " + f.get() + "\n";
  }
  return out;
}

void ExperimentConfig::Validate() const {
  try {
    denoiser.Validate();
    Cascade().Validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  for (const OptimizerSchedule* s : {&denoiser_schedule, &head_schedule, &cascade_schedule}) {
    if (s->batch_size < 1 || s->patch_size < 1) throw ConfigError("batch and patch sizes must be positive");
    if (s->iterations < 0 || s->decay_every < 1) throw ConfigError("iterations must be >= 0 and decay_every >= 1");
    if (!(s->lr0 > 0)) throw ConfigError("lr0 must be positive");
  }
  for (int w : head_widths) {
    if (w < 1) throw ConfigError("head widths must be positive");
  }
  if (toy_corpus < 1 || toy_train < 1 || toy_test < 1) throw ConfigError("toy dataset sizes must be positive");
  if (corpus_manifest.empty() && corpus_size < denoiser_schedule.patch_size) {
    throw ConfigError("data.corpus_size is smaller than denoiser_schedule.patch_size");
  }
}

std::vector<Image> LoadCorpus(const ExperimentConfig& config) {
  if (!config.corpus_manifest.empty()) return LoadImages(config.corpus_manifest);
  ToyOptions opt = config.toy;
  opt.size = config.corpus_size;
  return GenerateToyCorpus(config.toy_corpus, DeriveSeed(config.toy_seed, 1), opt);
}

namespace {

uint64_t TaskTag(Task task) { return task == Task::kClassification ? 0 : 100; }

}  // namespace

LabeledDataset LoadTrainSet(const ExperimentConfig& config) {
  if (!config.train_manifest.empty()) {
    return LoadLabeledDataset(config.train_manifest, config.task, config.NumClasses());
  }
  return GenerateToy(config.task, config.toy_train, DeriveSeed(config.toy_seed, 10 + TaskTag(config.task)),
                     config.toy);
}

LabeledDataset LoadHeldoutSet(const ExperimentConfig& config) {
  if (!config.test_manifest.empty()) {
    return LoadLabeledDataset(config.test_manifest, config.task, config.NumClasses());
  }
  return GenerateToy(config.task, config.toy_test, DeriveSeed(config.toy_seed, 11 + TaskTag(config.task)),
                     config.toy);
}

LabeledDataset LoadTestSet(const ExperimentConfig& config) {
  if (!config.test_manifest.empty()) {
    return LoadLabeledDataset(config.test_manifest, config.task, config.NumClasses());
  }
  return GenerateToy(config.task, config.toy_test, DeriveSeed(config.toy_seed, 12 + TaskTag(config.task)),
                     config.toy);
}

}  // namespace cdnz
