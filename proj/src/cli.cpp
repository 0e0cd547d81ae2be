#include "hotcalib/cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "hotcalib/base_weights.hpp"
#include "hotcalib/calibration.hpp"
#include "hotcalib/episodes.hpp"
#include "hotcalib/error.hpp"
#include "hotcalib/features.hpp"
#include "hotcalib/linear_classifier.hpp"
#include "hotcalib/synthetic.hpp"
#include "json.hpp"

namespace hotcalib::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "0.1.0";

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Kind { Int, Real, Bool, Text };

struct Field {
  const char* key;
  Kind kind;
  const char* help;
};

// Every configurable value. Config-file keys are these names; flags are the
// kebab-case spelling.
const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"base", Kind::Text, "base-class feature CSV (.csv or .csv.gz)"},
      {"novel", Kind::Text, "novel-class feature CSV"},
      {"stats", Kind::Text, "base statistics JSON"},
      {"phi", Kind::Text, "base classifier model JSON"},
      {"weights", Kind::Text, "per-sample base weights JSON"},
      {"output", Kind::Text, "report / dump output path"},
      {"out_dir", Kind::Text, "output directory"},
      {"per_task_csv", Kind::Text, "write task_index,accuracy rows here"},
      {"reuse", Kind::Bool, "reuse existing cache files instead of recomputing"},
      {"f32_stats", Kind::Bool, "round stored statistics to single precision"},
      {"uniform_weights", Kind::Bool, "skip phi and weight base samples uniformly"},
      {"keep_low_level", Kind::Bool, "include per-class low-level plans in the dump"},
      {"n_way", Kind::Int, "classes per task"},
      {"k_shot", Kind::Int, "support samples per class"},
      {"n_query", Kind::Int, "query samples per class"},
      {"tasks", Kind::Int, "number of evaluation tasks"},
      {"task_index", Kind::Int, "task to dump"},
      {"seed", Kind::Int, "random seed"},
      {"threads", Kind::Int, "worker threads (falls back to HOTCALIB_THREADS)"},
      {"lambda", Kind::Real, "Tukey transform power (required)"},
      {"alpha", Kind::Real, "covariance inflation"},
      {"epsilon", Kind::Real, "entropic regularisation"},
      {"generated", Kind::Int, "generated features per class"},
      {"sinkhorn_max_iter", Kind::Int, "Sinkhorn iteration cap"},
      {"sinkhorn_tol", Kind::Real, "Sinkhorn marginal tolerance (L1)"},
      {"calibration_mode", Kind::Text, "paper | convex (required)"},
      {"method", Kind::Text,
       "hot | free_lunch | support_only | euclid_mean | euclid_weighted | cosine_mean | cosine_weighted"},
      {"rescale_cost", Kind::Bool, "divide the high-level cost by its maximum"},
      {"top_k", Kind::Int, "keep only the k cheapest base classes per support sample (0 keeps all)"},
      {"free_lunch_k", Kind::Int, "base classes selected by free_lunch"},
      {"l2", Kind::Real, "classifier L2 weight on the mean loss"},
      {"grad_tol", Kind::Real, "classifier gradient tolerance"},
      {"lr_max_iter", Kind::Int, "classifier iteration cap"},
      {"instances", Kind::Int, "toy instances"},
      {"toy_base_classes", Kind::Int, "toy base classes"},
      {"toy_dim", Kind::Int, "toy feature dimension"},
      {"toy_novel", Kind::Int, "toy novel samples"},
      {"base_samples", Kind::Int, "toy samples per base class"},
      {"base_noise", Kind::Real, "toy base sample spread"},
      {"base_classes", Kind::Int, "world base classes"},
      {"novel_classes", Kind::Int, "world novel classes"},
      {"dim", Kind::Int, "world feature dimension"},
      {"samples_per_class", Kind::Int, "world samples per class"},
      {"separation", Kind::Real, "world class separation in sd units"},
      {"mixing_active", Kind::Int, "base classes mixed into each novel mean (0 draws fresh means)"},
  };
  return table;
}

const Field& field(const std::string& key) {
  for (const auto& f : fields()) {
    if (key == f.key) return f;
  }
  throw std::logic_error("unknown field " + key);
}

std::string kebab(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return key;
}

struct Command {
  const char* name;
  const char* help;
  std::vector<const char*> keys;
  json defaults;
};

const std::vector<const char*> kEpisodeKeys = {
    "base", "novel", "stats", "weights", "uniform_weights", "n_way", "k_shot", "n_query", "seed",
    "lambda", "alpha", "epsilon", "generated", "sinkhorn_max_iter", "sinkhorn_tol", "calibration_mode",
    "method", "rescale_cost", "top_k", "free_lunch_k", "l2", "grad_tol", "lr_max_iter", "output"};

json hyper_defaults() {
  return {{"n_way", 5},          {"k_shot", 1},         {"n_query", 15},       {"seed", 0},
          {"alpha", 0.21},       {"epsilon", 0.01},     {"generated", 750},    {"sinkhorn_max_iter", 200},
          {"sinkhorn_tol", 1e-6}, {"method", "hot"},    {"rescale_cost", false}, {"top_k", 0},
          {"free_lunch_k", 2},   {"l2", 1.0},           {"grad_tol", 1e-4},    {"lr_max_iter", 1000},
          {"uniform_weights", false}};
}

std::vector<Command> commands() {
  std::vector<Command> out;
  out.push_back({"stats", "compute per-class base statistics",
                 {"base", "stats", "f32_stats", "reuse"},
                 {{"f32_stats", false}, {"reuse", false}}});
  out.push_back({"train-phi", "train the base classifier and per-sample weights",
                 {"base", "phi", "weights", "output", "l2", "grad_tol", "lr_max_iter", "reuse"},
                 {{"l2", 1.0}, {"grad_tol", 1e-4}, {"lr_max_iter", 1000}, {"reuse", false}}});

  auto eval_keys = kEpisodeKeys;
  eval_keys.insert(eval_keys.end(), {"tasks", "threads", "per_task_csv"});
  json eval_defaults = hyper_defaults();
  eval_defaults["tasks"] = 10000;
  out.push_back({"eval", "evaluate a method over sampled tasks", eval_keys, eval_defaults});

  auto plan_keys = kEpisodeKeys;
  plan_keys.insert(plan_keys.end(), {"task_index", "keep_low_level"});
  json plan_defaults = hyper_defaults();
  plan_defaults["task_index"] = 0;
  plan_defaults["keep_low_level"] = false;
  out.push_back({"plan", "dump the cost and transport plan of one task", plan_keys, plan_defaults});

  out.push_back({"toy", "weight-recovery experiment on synthetic mixtures",
                 {"output", "stats", "seed", "instances", "toy_base_classes", "toy_dim", "toy_novel", "base_samples",
                  "base_noise", "epsilon", "rescale_cost", "sinkhorn_max_iter", "sinkhorn_tol", "free_lunch_k", "l2",
                  "grad_tol", "lr_max_iter"},
                 {{"seed", 0}, {"instances", 100}, {"toy_base_classes", 20}, {"toy_dim", 16}, {"toy_novel", 5},
                  {"base_samples", 50}, {"base_noise", 0.5}, {"epsilon", 0.1}, {"rescale_cost", true},
                  {"sinkhorn_max_iter", 200}, {"sinkhorn_tol", 1e-6}, {"free_lunch_k", 2}, {"l2", 1.0},
                  {"grad_tol", 1e-4}, {"lr_max_iter", 1000}}});
  out.push_back({"world", "write a synthetic Gaussian base/novel world as CSV",
                 {"out_dir", "seed", "base_classes", "novel_classes", "dim", "samples_per_class", "separation",
                  "mixing_active"},
                 {{"seed", 0}, {"base_classes", 64}, {"novel_classes", 20}, {"dim", 32}, {"samples_per_class", 100},
                  {"separation", 2.0}, {"mixing_active", 3}}});
  return out;
}

json convert_text(const Field& f, const std::string& text) {
  const auto fail = [&]() -> json {
    throw UsageError("--" + kebab(f.key) + ": cannot read '" + text + "'");
  };
  const char* first = text.data();
  const char* last = first + text.size();
  switch (f.kind) {
    case Kind::Int: {
      long long v = 0;
      const auto [p, ec] = std::from_chars(first, last, v);
      if (ec != std::errc() || p != last) return fail();
      return v;
    }
    case Kind::Real: {
      double v = 0.0;
      const auto [p, ec] = std::from_chars(first, last, v);
      if (ec != std::errc() || p != last) return fail();
      return v;
    }
    case Kind::Bool:
      if (text == "true") return true;
      if (text == "false") return false;
      return fail();
    case Kind::Text:
      return text;
  }
  return fail();
}

void check_json_kind(const Field& f, const json& value) {
  bool ok = false;
  switch (f.kind) {
    case Kind::Int: ok = value.is_number_integer(); break;
    case Kind::Real: ok = value.is_number(); break;
    case Kind::Bool: ok = value.is_boolean(); break;
    case Kind::Text: ok = value.is_string(); break;
  }
  if (!ok) throw UsageError(std::string("config key '") + f.key + "' has the wrong type");
}

json read_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError("config " + path.string() + ": " + e.what());
  }
  if (!doc.is_object()) throw UsageError("config " + path.string() + " must be a JSON object");
  for (const auto& [key, value] : doc.items()) {
    const auto it = std::find_if(fields().begin(), fields().end(), [&](const Field& f) { return key == f.key; });
    if (it == fields().end()) throw UsageError("config " + path.string() + ": unknown key '" + key + "'");
    check_json_kind(*it, value);
  }
  return doc;
}

// Effective settings of one invocation: defaults < config file < flags.
class Settings {
 public:
  Settings(const Command& cmd, const json& file, const std::map<std::string, std::string>& flags) : cmd_(cmd) {
    values_ = cmd.defaults;
    for (const char* key : cmd.keys) {
      if (file.contains(key)) values_[key] = file.at(key);
    }
    for (const auto& [key, text] : flags) values_[key] = convert_text(field(key), text);
  }

  bool has(const char* key) const { return values_.contains(key); }

  std::string text(const char* key) const { return require(key).get<std::string>(); }
  std::optional<std::string> maybe_text(const char* key) const {
    return has(key) ? std::optional(text(key)) : std::nullopt;
  }
  bool flag(const char* key) const { return has(key) && values_.at(key).get<bool>(); }
  double real(const char* key) const { return require(key).get<double>(); }
  long long integer(const char* key) const { return require(key).get<long long>(); }

  int count(const char* key, long long min_value) const {
    const long long v = integer(key);
    if (v < min_value || v > 1'000'000'000) {
      throw UsageError("--" + kebab(key) + " must be at least " + std::to_string(min_value));
    }
    return static_cast<int>(v);
  }
  double real_at_least(const char* key, double min_value, bool strict) const {
    const double v = real(key);
    if (!std::isfinite(v) || v < min_value || (strict && v == min_value)) {
      throw UsageError("--" + kebab(key) + (strict ? " must be greater than " : " must be at least ") +
                       std::to_string(min_value));
    }
    return v;
  }

  void set(const char* key, json value) { values_[key] = std::move(value); }

  /// The settings that shape the primary outputs; execution-only knobs
  /// (thread count) are left to the metadata sidecar.
  json effective() const {
    json out = json::object();
    for (const auto& [key, value] : values_.items()) {
      if (key != "threads") out[key] = value;
    }
    out["command"] = cmd_.name;
    return out;
  }

 private:
  const json& require(const char* key) const {
    if (!has(key)) throw UsageError("--" + kebab(key) + " is required");
    return values_.at(key);
  }

  const Command& cmd_;
  json values_;
};

std::uint64_t seed_of(const Settings& s) {
  const long long v = s.integer("seed");
  if (v < 0) throw UsageError("--seed must be nonnegative");
  return static_cast<std::uint64_t>(v);
}

LRConfig classifier_config(const Settings& s) {
  LRConfig cfg;
  cfg.l2_weight = s.real_at_least("l2", 0.0, false);
  cfg.grad_tol = s.real_at_least("grad_tol", 0.0, true);
  cfg.max_iter = s.count("lr_max_iter", 1);
  return cfg;
}

HyperParams hyper_params(const Settings& s) {
  HyperParams h;
  h.lambda = s.real_at_least("lambda", 0.0, false);
  h.alpha = s.real_at_least("alpha", 0.0, false);
  h.epsilon = s.real_at_least("epsilon", 0.0, true);
  h.generated = s.count("generated", 0);
  h.sinkhorn_max_iter = s.count("sinkhorn_max_iter", 1);
  h.sinkhorn_tol = s.real_at_least("sinkhorn_tol", 0.0, true);
  const auto mode = s.text("calibration_mode");
  if (mode != "paper" && mode != "convex") throw UsageError("--calibration-mode must be paper or convex");
  h.mode = parse_calibration_mode(mode);
  h.rescale_cost = s.flag("rescale_cost");
  h.top_k = s.count("top_k", 0);
  h.free_lunch_k = s.count("free_lunch_k", 1);
  h.classifier = classifier_config(s);
  return h;
}

EpisodeSpec episode_spec(const Settings& s) {
  EpisodeSpec spec;
  spec.n_way = s.count("n_way", 2);
  spec.k_shot = s.count("k_shot", 1);
  spec.n_query = s.count("n_query", 1);
  spec.seed = seed_of(s);
  return spec;
}

int thread_count(const Settings& s) {
  if (s.has("threads")) return s.count("threads", 1);
  if (const char* env = std::getenv("HOTCALIB_THREADS"); env != nullptr && *env != '\0') {
    const json v = convert_text(field("threads"), env);
    if (v.get<long long>() < 1) throw UsageError("HOTCALIB_THREADS must be at least 1");
    return static_cast<int>(v.get<long long>());
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_json(const json& doc, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

json vector_json(const Vector& v) {
  json out = json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

struct Context {
  std::ostream& out;
  std::ostream& err;
  std::vector<fs::path> outputs;  // primary files, each gets a .meta.json sidecar
  json extra_meta = json::object();
};

// ---- stats ---------------------------------------------------------------

void cmd_stats(const Settings& s, Context& ctx) {
  const fs::path base_path = s.text("base");
  const fs::path stats_path = s.text("stats");
  const auto base = load_features(base_path);
  if (s.flag("reuse") && fs::exists(stats_path)) {
    const auto cached = load_stats(stats_path);
    check_stats_compatible(cached, base);
    ctx.out << "stats: reused " << stats_path.string() << " (" << cached.classes.size() << " classes)\n";
    return;
  }
  const auto stats = base_statistics(base);
  save_stats(stats, stats_path, s.flag("f32_stats"));
  ctx.outputs.push_back(stats_path);
  ctx.out << "stats: " << stats.classes.size() << " classes, dim " << stats.dim << " -> " << stats_path.string()
          << "\n";
}

// ---- train-phi -----------------------------------------------------------

double training_accuracy(const LinearModel& phi, const FeatureTable& base) {
  const auto predicted = predict_labels(phi, base.data());
  Index hits = 0;
  for (Index i = 0; i < base.rows(); ++i) hits += predicted[static_cast<std::size_t>(i)] == base.class_of(i);
  return base.rows() > 0 ? static_cast<double>(hits) / static_cast<double>(base.rows()) : 0.0;
}

void check_phi_compatible(const LinearModel& phi, const FeatureTable& base) {
  if (phi.dim() != base.dim() || phi.num_classes() != base.num_classes()) {
    throw Error(ErrorKind::SchemaMismatch, "cached phi does not match the base features (dim " +
                                               std::to_string(phi.dim()) + ", classes " +
                                               std::to_string(phi.num_classes()) + ")");
  }
}

void cmd_train_phi(const Settings& s, Context& ctx) {
  const fs::path phi_path = s.text("phi");
  const fs::path weights_path = s.text("weights");
  const auto base = load_features(s.text("base"));
  bool reused = false;
  LinearModel phi;
  if (s.flag("reuse") && fs::exists(phi_path) && fs::exists(weights_path)) {
    phi = load_model(phi_path);
    check_phi_compatible(phi, base);
    check_weights_compatible(load_sample_weights(weights_path), base);
    reused = true;
  } else {
    phi = train_phi(base, classifier_config(s));
    save_model(phi, phi_path);
    save_sample_weights(compute_sample_weights(phi, base), weights_path);
    ctx.outputs.push_back(phi_path);
    ctx.outputs.push_back(weights_path);
  }
  const double acc = training_accuracy(phi, base);
  json report = {{"config", s.effective()},
                 {"reused", reused},
                 {"training_accuracy", acc},
                 {"train_loss", phi.train_loss},
                 {"iterations", phi.iterations},
                 {"converged", phi.converged},
                 {"num_classes", phi.num_classes()},
                 {"dim", phi.dim()}};
  if (const auto output = s.maybe_text("output")) {
    write_json(report, *output);
    ctx.outputs.push_back(*output);
  }
  ctx.out << "phi: training accuracy " << std::fixed << std::setprecision(4) << acc << std::defaultfloat
          << (reused ? " (reused cache)" : "") << "\n";
}

// ---- shared episode inputs -----------------------------------------------

bool needs_weights(const MethodSpec& m) {
  return m.method == Method::Hot ||
         (m.method == Method::Variant &&
          (m.variant == VariantKind::EuclidWeighted || m.variant == VariantKind::CosineWeighted));
}

struct EpisodeInputs {
  FeatureTable novel;
  std::optional<FeatureTable> base;
  BaseKnowledge knowledge;
  MethodSpec method;
  HyperParams hyper;
};

EpisodeInputs load_episode_inputs(const Settings& s, Context& ctx) {
  EpisodeInputs in;
  in.hyper = hyper_params(s);
  in.method = MethodSpec::parse(s.text("method"));
  in.novel = load_features(s.text("novel"));
  if (const auto path = s.maybe_text("base")) in.base = load_features(*path);

  StatsSet stats;
  if (const auto path = s.maybe_text("stats")) {
    stats = load_stats(*path);
  } else if (in.base) {
    stats = base_statistics(*in.base);
  } else {
    throw UsageError("--stats or --base is required");
  }
  if (in.base) check_stats_compatible(stats, *in.base);
  if (stats.dim != in.novel.dim()) {
    throw Error(ErrorKind::SchemaMismatch, "base statistics have dim " + std::to_string(stats.dim) +
                                               " but novel features have dim " + std::to_string(in.novel.dim()));
  }

  std::optional<SampleWeights> weights;
  if (needs_weights(in.method)) {
    if (!in.base) throw UsageError("method " + in.method.name() + " needs --base");
    if (const auto path = s.maybe_text("weights")) {
      weights = load_sample_weights(*path);
      check_weights_compatible(*weights, *in.base);
    } else if (s.flag("uniform_weights")) {
      weights = uniform_sample_weights(*in.base);
    } else {
      ctx.err << "training phi on " << in.base->rows() << " base rows\n";
      weights = compute_sample_weights(train_phi(*in.base, in.hyper.classifier), *in.base);
    }
  }
  in.knowledge = prepare_knowledge(std::move(stats), in.base ? &*in.base : nullptr, weights ? &*weights : nullptr);
  return in;
}

// ---- eval ----------------------------------------------------------------

json task_json(const EpisodeResult& r) {
  json t = {{"task_index", r.task_index},
            {"accuracy", r.failed ? json(nullptr) : json(r.accuracy)},
            {"correct", r.correct},
            {"total", r.total},
            {"sinkhorn_converged_all", r.sinkhorn_converged_all},
            {"zero_norm_count", r.zero_norm_count},
            {"jitter_used", r.jitter_used}};
  if (r.failed) t["error"] = r.error;
  return t;
}

int cmd_eval(const Settings& s, Context& ctx) {
  auto in = load_episode_inputs(s, ctx);
  EvalOptions options;
  options.spec = episode_spec(s);
  options.num_tasks = s.count("tasks", 1);
  options.threads = thread_count(s);
  ctx.extra_meta["threads"] = options.threads;
  const int step = std::max(1, options.num_tasks / 10);
  options.progress = [&ctx, step](int done, int total) {
    if (done % step == 0 || done == total) ctx.err << "progress " << done << "/" << total << "\n" << std::flush;
  };

  const auto report = evaluate(in.knowledge, in.novel, options, in.hyper, in.method);

  json tasks = json::array();
  for (const auto& r : report.per_task) tasks.push_back(task_json(r));
  const json doc = {{"config", s.effective()},
                    {"method", in.method.name()},
                    {"calibration_mode", std::string(to_string(in.hyper.mode))},
                    {"mean_accuracy", report.mean_accuracy},
                    {"ci95_halfwidth", report.ci95_halfwidth},
                    {"num_tasks", report.num_tasks},
                    {"num_failed", report.num_failed},
                    {"num_nonconverged", report.num_nonconverged},
                    {"per_task", tasks}};
  if (const auto output = s.maybe_text("output")) {
    write_json(doc, *output);
    ctx.outputs.push_back(*output);
  }
  if (const auto csv = s.maybe_text("per_task_csv")) {
    write_per_task_csv(report, *csv);
    ctx.outputs.push_back(*csv);
  }
  ctx.out << "eval " << in.method.name() << " (" << to_string(in.hyper.mode) << "): " << std::fixed
          << std::setprecision(2) << 100.0 * report.mean_accuracy << " +- " << 100.0 * report.ci95_halfwidth
          << " % over " << report.num_tasks << " tasks" << std::defaultfloat;
  if (report.num_failed > 0) ctx.out << ", " << report.num_failed << " failed";
  if (report.num_nonconverged > 0) ctx.out << ", " << report.num_nonconverged << " with unconverged Sinkhorn";
  ctx.out << "\n";
  if (report.num_failed == report.num_tasks) {
    ctx.err << "every task failed; first error: " << report.per_task.front().error << "\n";
    return kExitNumerical;
  }
  return kExitOk;
}

// ---- plan ----------------------------------------------------------------

void cmd_plan(const Settings& s, Context& ctx) {
  auto in = load_episode_inputs(s, ctx);
  if (in.method.method == Method::SupportOnly) throw UsageError("method support_only has no transport plan");
  auto spec = episode_spec(s);
  const long long task = s.integer("task_index");
  if (task < 0) throw UsageError("--task-index must be nonnegative");
  spec.task_index = static_cast<std::uint64_t>(task);

  const auto episode = sample_episode(in.novel, spec);
  const auto support = build_support(episode.support, episode.support_labels, spec.n_way, spec.k_shot, in.hyper.lambda);
  const auto cal = calibrate_episode(support, in.knowledge, in.hyper, in.method);

  json classes = json::array();
  for (int c : episode.classes) classes.push_back(in.novel.class_labels()[static_cast<std::size_t>(c)]);
  json base_labels = json::array();
  for (const auto& c : in.knowledge.stats.classes) base_labels.push_back(c.label);

  json doc = {{"config", s.effective()},
              {"method", in.method.name()},
              {"task_index", spec.task_index},
              {"novel_classes", classes},
              {"support_rows", episode.support_rows},
              {"support_labels", support.labels},
              {"base_classes", base_labels},
              {"weights", matrix_json(cal.weights)}};
  if (in.method.method != Method::FreeLunch) {
    doc["cost"] = matrix_json(cal.cost.values);
    doc["plan"] = {{"values", matrix_json(cal.plan.values)},
                   {"row_marginal", vector_json(cal.plan.row_marginal)},
                   {"col_marginal", vector_json(cal.plan.col_marginal)},
                   {"objective", cal.plan.objective},
                   {"iterations", cal.plan.iterations},
                   {"converged", cal.plan.converged},
                   {"row_violation", cal.plan.row_violation},
                   {"col_violation", cal.plan.col_violation}};
    doc["zero_norm_count"] = cal.cost.zero_norm_count;
    doc["low_level_converged"] = cal.cost.all_converged;
  }
  if (s.flag("keep_low_level")) {
    if (in.method.method != Method::Hot) throw UsageError("--keep-low-level needs method hot");
    const auto full = low_level_cost(in.knowledge.distributions, support, in.hyper.sinkhorn(), true);
    json per_class = json::array();
    for (std::size_t b = 0; b < full.per_class_plans.size(); ++b) {
      per_class.push_back({{"base_class", base_labels[b]},
                           {"base_rows", in.knowledge.distributions.source_rows[b]},
                           {"plan", matrix_json(full.per_class_plans[b])}});
    }
    doc["low_level"] = per_class;
  }
  const fs::path output = s.text("output");
  write_json(doc, output);
  ctx.outputs.push_back(output);
  ctx.out << "plan: task " << spec.task_index << ", " << base_labels.size() << " base classes x " << support.size()
          << " support rows -> " << output.string() << "\n";
}

// ---- toy -----------------------------------------------------------------

void cmd_toy(const Settings& s, Context& ctx) {
  ToyConfig cfg;
  cfg.b = s.count("toy_base_classes", 2);
  cfg.v = s.count("toy_dim", 1);
  cfg.n = s.count("toy_novel", 1);
  cfg.base_samples = s.count("base_samples", 2);
  cfg.base_noise = s.real_at_least("base_noise", 0.0, false);
  cfg.epsilon = s.real_at_least("epsilon", 0.0, true);
  cfg.rescale_cost = s.flag("rescale_cost");
  cfg.sinkhorn_max_iter = s.count("sinkhorn_max_iter", 1);
  cfg.sinkhorn_tol = s.real_at_least("sinkhorn_tol", 0.0, true);
  cfg.free_lunch_k = s.count("free_lunch_k", 1);
  cfg.phi = classifier_config(s);
  const int instances = s.count("instances", 1);
  const auto seed = seed_of(s);

  std::optional<StatsSet> stats;
  if (const auto path = s.maybe_text("stats")) {
    stats = load_stats(*path);
    if (static_cast<int>(stats->classes.size()) < cfg.b) {
      throw UsageError("stats file has fewer classes than --toy-base-classes");
    }
    cfg.v = stats->dim;
  }

  std::map<std::string, std::pair<double, double>> totals;  // name -> (cosine sum, hit sum)
  std::vector<std::string> order;
  json runs = json::array();
  for (int i = 0; i < instances; ++i) {
    auto rng = make_task_rng(seed, static_cast<std::uint64_t>(i));
    const auto run = run_toy(cfg, rng, stats ? &*stats : nullptr);
    json methods = json::object();
    for (const auto& m : run.methods) {
      if (!totals.contains(m.name)) order.push_back(m.name);
      auto& [cos_sum, hit_sum] = totals[m.name];
      cos_sum += m.score.mean_cosine;
      hit_sum += m.score.hit_rate;
      methods[m.name] = {{"learned", matrix_json(m.learned)},
                         {"cosine", vector_json(m.score.cosine)},
                         {"mean_cosine", m.score.mean_cosine},
                         {"hit_rate", m.score.hit_rate}};
    }
    runs.push_back({{"instance", i}, {"w_true", matrix_json(run.instance.w)}, {"methods", methods}});
  }

  json summary = json::object();
  for (const auto& name : order) {
    summary[name] = {{"mean_cosine", totals[name].first / instances}, {"hit_rate", totals[name].second / instances}};
  }
  json margins = json::object();
  if (summary.contains("hot")) {
    for (const auto& name : order) {
      if (name != "hot") {
        margins["hot_minus_" + name] =
            summary["hot"]["mean_cosine"].get<double>() - summary[name]["mean_cosine"].get<double>();
      }
    }
  }
  const json doc = {{"config", s.effective()}, {"summary", summary}, {"margins", margins}, {"instances", runs}};
  if (const auto output = s.maybe_text("output")) {
    write_json(doc, *output);
    ctx.outputs.push_back(*output);
  }
  ctx.out << "toy: " << instances << " instances\n";
  for (const auto& name : order) {
    ctx.out << "  " << std::left << std::setw(18) << name << " cosine " << std::fixed << std::setprecision(4)
            << summary[name]["mean_cosine"].get<double>() << "  top2 " << summary[name]["hit_rate"].get<double>()
            << std::defaultfloat << "\n";
  }
}

// ---- world ---------------------------------------------------------------

void cmd_world(const Settings& s, Context& ctx) {
  const fs::path dir = s.text("out_dir");
  const int b = s.count("base_classes", 2);
  const int n = s.count("novel_classes", 1);
  const int v = s.count("dim", 1);
  const int spc = s.count("samples_per_class", 2);
  const double sep = s.real_at_least("separation", 0.0, false);
  const int active = s.count("mixing_active", 0);
  if (active > b) throw UsageError("--mixing-active exceeds --base-classes");
  auto rng = make_rng(seed_of(s));
  std::optional<Matrix> mixing;
  if (active > 0) mixing = sparse_mixing(n, b, active, rng);
  const auto world = make_gaussian_world(b, n, v, spc, sep, mixing, rng);

  fs::create_directories(dir);
  save_features(world.base, dir / "base.csv");
  save_features(world.novel, dir / "novel.csv");
  json doc = {{"config", s.effective()}, {"base_means", matrix_json(world.base_means)},
              {"novel_means", matrix_json(world.novel_means)}};
  if (mixing) doc["mixing"] = matrix_json(*mixing);
  write_json(doc, dir / "world.json");
  for (const char* name : {"base.csv", "novel.csv", "world.json"}) ctx.outputs.push_back(dir / name);
  ctx.out << "world: " << b << " base and " << n << " novel classes, dim " << v << " -> " << dir.string() << "\n";
}

int dispatch(const std::string& name, const Settings& s, Context& ctx) {
  if (name == "stats") cmd_stats(s, ctx);
  else if (name == "train-phi") cmd_train_phi(s, ctx);
  else if (name == "eval") return cmd_eval(s, ctx);
  else if (name == "plan") cmd_plan(s, ctx);
  else if (name == "toy") cmd_toy(s, ctx);
  else if (name == "world") cmd_world(s, ctx);
  return kExitOk;
}

void write_sidecars(const Context& ctx, const std::vector<std::string>& args, const std::string& started,
                    double seconds) {
  json meta = {{"tool", "hotcalib"},
               {"version", kToolVersion},
               {"arguments", args},
               {"started_utc", started},
               {"finished_utc", utc_now()},
               {"elapsed_seconds", seconds}};
  meta.update(ctx.extra_meta);
  for (const auto& path : ctx.outputs) {
    auto target = path;
    target += ".meta.json";
    write_json(meta, target);
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adaptive distribution calibration for few-shot classification", "hotcalib"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  const auto cmds = commands();
  std::map<std::string, std::string> flags;
  std::string config_path;
  for (const auto& cmd : cmds) {
    auto* sub = app.add_subcommand(cmd.name, cmd.help);
    sub->add_option("--config", config_path, "JSON config with snake_case keys; flags override it");
    for (const char* key : cmd.keys) {
      const auto& f = field(key);
      const std::string name = "--" + kebab(key);
      const std::string k = key;
      if (f.kind == Kind::Bool) {
        sub->add_flag_callback(name, [&flags, k] { flags[k] = "true"; }, f.help);
        sub->add_flag_callback("--no-" + kebab(key), [&flags, k] { flags[k] = "false"; });
      } else {
        sub->add_option_function<std::string>(name, [&flags, k](const std::string& v) { flags[k] = v; }, f.help);
      }
    }
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  const auto subs = app.get_subcommands();
  const std::string name = subs.front()->get_name();
  const auto& cmd = *std::find_if(cmds.begin(), cmds.end(), [&](const Command& c) { return name == c.name; });

  const std::string started = utc_now();
  const auto t0 = std::chrono::steady_clock::now();
  Context ctx{out, err, {}, json::object()};
  try {
    const json file = config_path.empty() ? json::object() : read_config_file(config_path);
    const Settings settings(cmd, file, flags);
    const int code = dispatch(name, settings, ctx);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_sidecars(ctx, args, started, seconds);
    return code;
  } catch (const UsageError& e) {
    err << "hotcalib " << name << ": " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "hotcalib " << name << ": " << e.what() << "\n";
    return is_numerical(e.kind()) ? kExitNumerical : kExitUsage;
  } catch (const fs::filesystem_error& e) {
    err << "hotcalib " << name << ": " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "hotcalib " << name << ": " << e.what() << "\n";
    return kExitNumerical;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace hotcalib::cli
