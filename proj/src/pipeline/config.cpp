#include "cmasge/pipeline/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace cmasge {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& want) {
  throw ValidationError("config key '" + key + "': expected " + want + ", got '" + value + "'");
}

template <typename T>
T parse_integer(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [p, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || p != end) bad_value(key, value, "an integer");
  return out;
}

double parse_real(const std::string& key, const std::string& value) {
  char* end = nullptr;
  const double v = std::strtod(value.c_str(), &end);
  if (value.empty() || end != value.c_str() + value.size() || !std::isfinite(v))
    bad_value(key, value, "a finite number");
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value, "true or false");
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& value) {
  std::vector<T> out;
  std::stringstream ss(value);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (tok.empty()) bad_value(key, value, "a comma-separated list");
    out.push_back(parse_integer<T>(key, tok));
  }
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Field {
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

template <typename T>
Field integer(const std::string& key, T& ref) {
  return {key, [&ref, key](const std::string& v) { ref = parse_integer<T>(key, v); },
          [&ref] { return std::to_string(ref); }};
}

Field real(const std::string& key, double& ref) {
  return {key, [&ref, key](const std::string& v) { ref = parse_real(key, v); },
          [&ref] { return fmt_double(ref); }};
}

Field boolean(const std::string& key, bool& ref) {
  return {key, [&ref, key](const std::string& v) { ref = parse_bool(key, v); },
          [&ref] { return std::string(ref ? "true" : "false"); }};
}

Field text(const std::string& key, std::string& ref) {
  return {key, [&ref](const std::string& v) { ref = v; }, [&ref] { return ref; }};
}

Field norm(const std::string& key, Norm& ref) {
  return {key,
          [&ref, key](const std::string& v) {
            try {
              ref = parse_norm(v);
            } catch (const std::exception&) {
              bad_value(key, v, "bn or none");
            }
          },
          [&ref] { return to_string(ref); }};
}

template <typename T>
Field list(const std::string& key, std::vector<T>& ref) {
  return {key, [&ref, key](const std::string& v) { ref = parse_list<T>(key, v); },
          [&ref] { return join(ref); }};
}

// The schema: one entry per accepted key, bound to `c`.
std::vector<Field> schema(RunConfig& c) {
  std::vector<Field> f;
  f.push_back({"task",
               [&c](const std::string& v) {
                 if (v == "image") c.task = Task::image;
                 else if (v == "video") c.task = Task::video;
                 else bad_value("task", v, "image or video");
               },
               [&c] { return to_string(c.task); }});
  f.push_back(integer("seed", c.seed));

  auto& s = c.synth;
  f.push_back(integer("synth.num_labels", s.num_labels));
  f.push_back(integer("synth.groups", s.groups));
  f.push_back(real("synth.q_in", s.q_in));
  f.push_back(real("synth.q_out", s.q_out));
  f.push_back(integer("synth.train_examples", s.train_examples));
  f.push_back(integer("synth.test_examples", s.test_examples));
  f.push_back(integer("synth.height", s.height));
  f.push_back(integer("synth.width", s.width));
  f.push_back(integer("synth.cell", s.cell));
  f.push_back(integer("synth.frames", s.frames));
  f.push_back(integer("synth.segment", s.segment));
  f.push_back(integer("synth.channels", s.channels));
  f.push_back(real("synth.signal", s.signal));
  f.push_back(real("synth.noise", s.noise));
  f.push_back(integer("synth.distractors", s.distractors));
  f.push_back(real("synth.objectness", s.objectness));

  auto& a = c.asge;
  f.push_back(list("asge.hidden", a.hidden));
  f.push_back(integer("asge.dim", a.dim));
  f.push_back(norm("asge.norm", a.norm));
  f.push_back(real("asge.lr", a.lr));
  f.push_back(real("asge.momentum", a.momentum));
  f.push_back(real("asge.weight_decay", a.weight_decay));
  f.push_back(integer("asge.epochs", a.epochs));
  f.push_back({"asge.alpha",
               [&a](const std::string& v) {
                 if (v == "none" || v.empty()) a.alpha.reset();
                 else a.alpha = parse_real("asge.alpha", v);
               },
               [&a] { return a.alpha ? fmt_double(*a.alpha) : std::string("none"); }});

  auto& m = c.model;
  f.push_back({"model.kind", [&m](const std::string& v) { m.kind = parse_head_kind(v); },
               [&m] { return to_string(m.kind); }});
  f.push_back(text("model.backbone", m.backbone));
  f.push_back(integer("model.stage_channels", m.stage_channels));
  f.push_back(integer("model.channels", m.channels));
  f.push_back(list("model.scales", m.scales));
  f.push_back(integer("model.cmt_layers", m.cmt_layers));
  f.push_back(norm("model.norm", m.norm));
  f.push_back(boolean("model.per_class_bias", m.per_class_bias));
  f.push_back(boolean("model.joint", m.joint));
  f.push_back(integer("model.snet_stages", m.snet_stages));
  f.push_back(integer("model.snet_kernel", m.snet_kernel));
  f.push_back(integer("model.snet_pool", m.snet_pool));

  auto& t = c.train;
  f.push_back(real("train.lr", t.lr));
  f.push_back(real("train.momentum", t.momentum));
  f.push_back(real("train.weight_decay", t.weight_decay));
  f.push_back(integer("train.epochs", t.epochs));
  f.push_back(integer("train.batch_size", t.batch_size));
  f.push_back(real("train.lr_decay", t.lr_decay));
  f.push_back(integer("train.lr_step", t.lr_step));

  f.push_back(real("loss.beta", c.loss.beta));
  f.push_back(real("eval.threshold", c.eval.threshold));
  f.push_back(integer("eval.top_k", c.eval.top_k));
  f.push_back(integer("eval.gap_top", c.eval.gap_top));
  f.push_back(integer("export.examples", c.export_.examples));

  f.push_back(text("paths.root", c.paths.root));
  f.push_back(text("paths.data", c.paths.data));
  f.push_back(text("paths.graph", c.paths.graph));
  f.push_back(text("paths.embeddings", c.paths.embeddings));
  f.push_back(text("paths.train", c.paths.train));
  return f;
}

bool starts_with(const std::string& s, const std::string& prefix) {
  return s.compare(0, prefix.size(), prefix) == 0;
}

std::string hashed_dump(const RunConfig& cfg, const std::function<bool(const std::string&)>& keep) {
  RunConfig copy = cfg;
  std::string out;
  for (const Field& f : schema(copy))
    if (keep(f.key)) out += f.key + " = " + f.get() + "\n";
  return out;
}

}  // namespace

std::string to_string(Task t) { return t == Task::image ? "image" : "video"; }

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  for (Field& f : schema(*this))
    if (f.key == key) {
      f.set(value);
      return;
    }
  throw ValidationError("unknown config key '" + key + "'");
}

std::vector<std::string> RunConfig::keys() const {
  RunConfig copy = *this;
  std::vector<std::string> out;
  for (const Field& f : schema(copy)) out.push_back(f.key);
  return out;
}

std::string RunConfig::dump() const {
  return hashed_dump(*this, [](const std::string&) { return true; });
}

std::uint64_t RunConfig::hash() const {
  return fnv1a(hashed_dump(*this, [](const std::string& k) { return !starts_with(k, "paths."); }));
}

std::uint64_t RunConfig::architecture_hash() const {
  return fnv1a(hashed_dump(*this, [](const std::string& k) {
    return k == "task" || starts_with(k, "model.") || k == "synth.num_labels" ||
           k == "synth.channels" || k == "asge.dim";
  }));
}

void RunConfig::validate() const {
  auto check = [](bool ok, const std::string& msg) {
    if (!ok) throw ValidationError("invalid config: " + msg);
  };
  const auto& s = synth;
  check(s.num_labels >= 1, "synth.num_labels must be >= 1");
  check(s.groups >= 1 && s.groups <= s.num_labels, "synth.groups must be in [1, num_labels]");
  check(s.q_in >= 0 && s.q_in <= 1 && s.q_out >= 0 && s.q_out <= 1,
        "synth.q_in and synth.q_out must be probabilities");
  check(s.q_in > s.q_out, "synth.q_in must exceed synth.q_out");
  check(s.train_examples >= 1 && s.test_examples >= 1, "example counts must be positive");
  check(s.channels >= 1, "synth.channels must be >= 1");
  check(s.noise >= 0, "synth.noise must be nonnegative");
  check(s.distractors >= 0, "synth.distractors must be nonnegative");
  check(s.objectness >= 0 && s.objectness < 1, "synth.objectness must be in [0, 1)");
  if (task == Task::image) {
    check(s.cell >= 1 && s.height % s.cell == 0 && s.width % s.cell == 0,
          "synth.cell must divide synth.height and synth.width");
    const Index cells = (s.height / s.cell) * (s.width / s.cell);
    check(s.num_labels + s.distractors <= cells,
          "synth grid has " + std::to_string(cells) + " cells, fewer than labels + distractors");
  } else {
    check(s.segment >= 1 && s.frames % s.segment == 0, "synth.segment must divide synth.frames");
    check(s.num_labels + s.distractors <= s.frames / s.segment,
          "synth.frames / synth.segment is smaller than labels + distractors");
  }
  asge.validate();
  const auto& m = model;
  check(m.backbone == "toy" || m.backbone == "snet" || m.backbone == "identity",
        "model.backbone must be toy, snet or identity");
  check(!(task == Task::image && m.backbone == "snet"), "snet backbone needs task = video");
  check(!(task == Task::video && m.backbone == "toy"), "toy backbone needs task = image");
  check(m.channels >= 1 && m.stage_channels >= 1, "model channel counts must be positive");
  check(!m.scales.empty(), "model.scales must list at least one scale");
  std::set<int> seen;
  for (int sc : m.scales) {
    check(sc >= 1 && seen.insert(sc).second, "model.scales must be distinct and >= 1");
    check(m.backbone == "toy" || sc == 1, "only the toy backbone has more than one scale");
  }
  check(m.cmt_layers >= 1, "model.cmt_layers must be >= 1");
  check(m.snet_stages >= 1 && m.snet_pool >= 1 && m.snet_kernel >= 1 && m.snet_kernel % 2 == 1,
        "snet stages/pool must be positive and kernel odd");
  check(!(m.joint && m.kind != HeadKind::cma), "model.joint only applies to the cma head");
  const auto& t = train;
  check(t.lr > 0, "train.lr must be positive");
  check(t.momentum >= 0 && t.momentum < 1, "train.momentum must be in [0, 1)");
  check(t.weight_decay >= 0, "train.weight_decay must be nonnegative");
  check(t.epochs >= 0, "train.epochs must be nonnegative");
  check(t.batch_size >= 1, "train.batch_size must be positive");
  check(t.lr_decay >= 1 && t.lr_step >= 1, "train.lr_decay >= 1 and train.lr_step >= 1");
  check(loss.beta >= 0, "loss.beta must be nonnegative");
  check(eval.top_k >= 1 && eval.gap_top >= 1, "eval.top_k and eval.gap_top must be positive");
  check(export_.examples >= 0, "export.examples must be nonnegative");
}

std::filesystem::path RunConfig::data_dir() const {
  return paths.data.empty() ? std::filesystem::path(paths.root) / "data" : std::filesystem::path(paths.data);
}
std::filesystem::path RunConfig::graph_dir() const {
  return paths.graph.empty() ? std::filesystem::path(paths.root) / "graph" : std::filesystem::path(paths.graph);
}
std::filesystem::path RunConfig::embeddings_dir() const {
  return paths.embeddings.empty() ? std::filesystem::path(paths.root) / "embeddings"
                                  : std::filesystem::path(paths.embeddings);
}
std::filesystem::path RunConfig::train_dir() const {
  return paths.train.empty() ? std::filesystem::path(paths.root) / "train" : std::filesystem::path(paths.train);
}

RunConfig parse_config(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(n) + ": ";
    if (eq == std::string::npos) throw ValidationError(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (starts_with(key, "manifest.")) continue;
    if (!seen.insert(key).second) throw ValidationError(where + "duplicate key '" + key + "'");
    try {
      cfg.set(key, trim(line.substr(eq + 1)));
    } catch (const ValidationError& e) {
      throw ValidationError(where + e.what());
    }
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ValidationError("override '" + assignment + "' must look like key=value");
  cfg.set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

}  // namespace cmasge
