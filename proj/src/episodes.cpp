#include "hotcalib/episodes.hpp"

#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <thread>

#include "hotcalib/error.hpp"

namespace hotcalib {

namespace {

void check_spec(const FeatureTable& novel, const EpisodeSpec& spec) {
  if (spec.n_way < 2 || spec.k_shot < 1 || spec.n_query < 1) {
    throw Error(ErrorKind::InvalidArgument, "episodes need n_way >= 2, k_shot >= 1, n_query >= 1");
  }
  if (novel.num_classes() < spec.n_way) {
    throw Error(ErrorKind::NotEnoughClasses, "novel set has " + std::to_string(novel.num_classes()) +
                                                 " classes, episode needs " + std::to_string(spec.n_way));
  }
}

// First `count` entries of a uniformly random permutation of `items`.
template <typename T>
void partial_shuffle(std::vector<T>& items, std::size_t count, Rng& rng) {
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = i + static_cast<std::size_t>(uniform_index(rng, items.size() - i));
    std::swap(items[i], items[j]);
  }
}

}  // namespace

Episode sample_episode(const FeatureTable& novel, const EpisodeSpec& spec, Rng& rng) {
  check_spec(novel, spec);
  std::vector<int> classes(static_cast<std::size_t>(novel.num_classes()));
  std::iota(classes.begin(), classes.end(), 0);
  partial_shuffle(classes, static_cast<std::size_t>(spec.n_way), rng);
  classes.resize(static_cast<std::size_t>(spec.n_way));

  const auto per_class = static_cast<std::size_t>(spec.k_shot + spec.n_query);
  Episode ep;
  ep.classes = classes;
  for (int local = 0; local < spec.n_way; ++local) {
    const int c = classes[static_cast<std::size_t>(local)];
    auto rows = novel.rows_by_class()[static_cast<std::size_t>(c)];
    if (rows.size() < per_class) {
      throw Error(ErrorKind::NotEnoughSamples, "class '" + novel.class_labels()[static_cast<std::size_t>(c)] +
                                                   "' has " + std::to_string(rows.size()) + " samples, episode needs " +
                                                   std::to_string(per_class));
    }
    partial_shuffle(rows, per_class, rng);
    for (int s = 0; s < spec.k_shot; ++s) {
      ep.support_rows.push_back(rows[static_cast<std::size_t>(s)]);
      ep.support_labels.push_back(local);
    }
    for (int s = spec.k_shot; s < spec.k_shot + spec.n_query; ++s) {
      ep.query_rows.push_back(rows[static_cast<std::size_t>(s)]);
      ep.query_labels.push_back(local);
    }
  }
  auto gather = [&](const std::vector<Index>& idx) {
    RowMatrix m(static_cast<Index>(idx.size()), novel.dim());
    for (std::size_t r = 0; r < idx.size(); ++r) m.row(static_cast<Index>(r)) = novel.row(idx[r]);
    return m;
  };
  ep.support = gather(ep.support_rows);
  ep.query = gather(ep.query_rows);
  return ep;
}

Episode sample_episode(const FeatureTable& novel, const EpisodeSpec& spec) {
  Rng rng = make_task_rng(spec.seed, spec.task_index);
  return sample_episode(novel, spec, rng);
}

std::string MethodSpec::name() const {
  switch (method) {
    case Method::Hot: return "hot";
    case Method::FreeLunch: return "free_lunch";
    case Method::SupportOnly: return "support_only";
    case Method::Variant: return std::string(to_string(variant));
  }
  return "unknown";
}

MethodSpec MethodSpec::parse(std::string_view text) {
  if (text == "hot") return {Method::Hot, VariantKind::EuclidMean};
  if (text == "free_lunch") return {Method::FreeLunch, VariantKind::EuclidMean};
  if (text == "support_only") return {Method::SupportOnly, VariantKind::EuclidMean};
  if (auto kind = parse_variant_kind(text)) return {Method::Variant, *kind};
  throw Error(ErrorKind::InvalidArgument,
              "unknown method '" + std::string(text) +
                  "' (expected hot, free_lunch, support_only, euclid_mean, cosine_mean, euclid_weighted, cosine_weighted)");
}

BaseKnowledge prepare_knowledge(StatsSet stats, const FeatureTable* base, const SampleWeights* weights) {
  BaseKnowledge k;
  k.stats = std::move(stats);
  if (base != nullptr && weights != nullptr) {
    k.distributions = prepare_base(*base, *weights);
    k.weighted_means = weighted_means(*base, *weights);
    if (k.distributions.num_classes() != static_cast<int>(k.stats.classes.size())) {
      throw Error(ErrorKind::SchemaMismatch, "stats and sample weights disagree on the number of base classes");
    }
  }
  return k;
}

EpisodeCalibration calibrate_episode(const EpisodeSupport& support, const BaseKnowledge& base,
                                     const HyperParams& hyper, const MethodSpec& method) {
  EpisodeCalibration out;
  if (method.method == Method::SupportOnly) return out;
  if (method.method == Method::FreeLunch) {
    out.gaussians = free_lunch_calibrate(support, base.stats, hyper.free_lunch_k, hyper.alpha);
    out.weights = free_lunch_weights(support, base.stats, hyper.free_lunch_k);
    return out;
  }
  if (method.method == Method::Hot) {
    if (base.distributions.num_classes() == 0) {
      throw Error(ErrorKind::InvalidArgument, "method hot needs base features and sample weights");
    }
    out.cost = low_level_cost(base.distributions, support, hyper.sinkhorn());
  } else {
    const bool weighted = method.variant == VariantKind::EuclidWeighted || method.variant == VariantKind::CosineWeighted;
    if (weighted && base.weighted_means.empty()) {
      throw Error(ErrorKind::InvalidArgument, "weighted variants need base features and sample weights");
    }
    out.cost = variant_cost(support, base.stats, weighted ? &base.weighted_means : nullptr, method.variant);
  }
  const AdaptiveCost& cost = hyper.top_k > 0 ? (out.cost = top_k_mask(out.cost, hyper.top_k)) : out.cost;
  out.plan = high_level_plan(cost, hyper.sinkhorn(), hyper.rescale_cost);
  out.gaussians = calibrate(support, out.plan.values, base.stats, hyper.alpha, hyper.mode);
  out.weights = static_cast<double>(support.size()) * out.plan.values.transpose();
  return out;
}

EpisodeResult run_episode(const Episode& episode, const BaseKnowledge& base, const HyperParams& hyper,
                          const MethodSpec& method, Rng& rng) {
  const int n_way = static_cast<int>(episode.classes.size());
  if (n_way == 0 || episode.support.rows() % n_way != 0) {
    throw Error(ErrorKind::InvalidArgument, "support rows are not a multiple of the class count");
  }
  const int k_shot = static_cast<int>(episode.support.rows() / n_way);
  const auto support = build_support(episode.support, episode.support_labels, n_way, k_shot, hyper.lambda);

  EpisodeResult result;
  RowMatrix train = support.transformed;
  std::vector<int> labels = support.labels;
  if (method.method != Method::SupportOnly) {
    const auto cal = calibrate_episode(support, base, hyper, method);
    if (method.method == Method::Hot || method.method == Method::Variant) {
      result.sinkhorn_converged_all = cal.cost.all_converged && cal.plan.converged;
      result.zero_norm_count = cal.cost.zero_norm_count;
    }
    const auto generated = sample_features(build_calibrated_sets(cal.gaussians, support.labels), hyper.generated, rng);
    result.jitter_used = generated.jitter_used;
    Index extra = 0;
    for (const auto& [label, rows] : generated.per_class) extra += rows.rows();
    RowMatrix all(train.rows() + extra, train.cols());
    all.topRows(train.rows()) = train;
    Index at = train.rows();
    for (const auto& [label, rows] : generated.per_class) {
      all.middleRows(at, rows.rows()) = rows;
      at += rows.rows();
      labels.insert(labels.end(), static_cast<std::size_t>(rows.rows()), label);
    }
    train.swap(all);
  }

  const auto model = train_lr(train, labels, hyper.classifier);
  const RowMatrix query = tukey_transform(episode.query, hyper.lambda);
  const auto predicted = predict_labels(model, query);
  result.total = static_cast<int>(predicted.size());
  for (std::size_t i = 0; i < predicted.size(); ++i) result.correct += predicted[i] == episode.query_labels[i];
  result.accuracy = result.total > 0 ? static_cast<double>(result.correct) / result.total : 0.0;
  return result;
}

std::pair<double, double> summarize(const std::vector<double>& accuracies) {
  const auto t = accuracies.size();
  if (t == 0) return {0.0, 0.0};
  double sum = 0.0;
  for (double a : accuracies) sum += a;
  const double mean = sum / static_cast<double>(t);
  if (t == 1) return {mean, 0.0};
  double ss = 0.0;
  for (double a : accuracies) ss += (a - mean) * (a - mean);
  const double sd = std::sqrt(ss / static_cast<double>(t - 1));
  return {mean, 1.96 * sd / std::sqrt(static_cast<double>(t))};
}

EvalReport evaluate(const BaseKnowledge& base, const FeatureTable& novel, const EvalOptions& options,
                    const HyperParams& hyper, const MethodSpec& method) {
  check_spec(novel, options.spec);
  if (options.num_tasks < 1) throw Error(ErrorKind::InvalidArgument, "need at least one task");
  EvalReport report;
  report.num_tasks = options.num_tasks;
  report.per_task.resize(static_cast<std::size_t>(options.num_tasks));

  std::atomic<int> next{0};
  std::atomic<int> done{0};
  std::mutex progress_mutex;
  auto worker = [&] {
    for (int t = next++; t < options.num_tasks; t = next++) {
      EpisodeSpec spec = options.spec;
      spec.task_index = static_cast<std::uint64_t>(t);
      EpisodeResult r;
      try {
        Rng rng = make_task_rng(spec.seed, spec.task_index);
        const auto episode = sample_episode(novel, spec, rng);
        r = run_episode(episode, base, hyper, method, rng);
      } catch (const std::exception& e) {
        r = EpisodeResult{};
        r.failed = true;
        r.error = e.what();
      }
      r.task_index = spec.task_index;
      report.per_task[static_cast<std::size_t>(t)] = std::move(r);
      const int finished = ++done;
      if (options.progress) {
        std::lock_guard lock(progress_mutex);
        options.progress(finished, options.num_tasks);
      }
    }
  };
  const int threads = std::max(1, std::min(options.threads, options.num_tasks));
  std::vector<std::thread> pool;
  for (int i = 1; i < threads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  std::vector<double> accuracies;
  for (const auto& r : report.per_task) {
    if (r.failed) {
      ++report.num_failed;
      continue;
    }
    if (!r.sinkhorn_converged_all) ++report.num_nonconverged;
    accuracies.push_back(r.accuracy);
  }
  std::tie(report.mean_accuracy, report.ci95_halfwidth) = summarize(accuracies);
  return report;
}

void write_per_task_csv(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << "task_index,accuracy\n";
  out.precision(17);
  for (const auto& r : report.per_task) {
    out << r.task_index << ',';
    if (r.failed) {
      out << "nan\n";
    } else {
      out << r.accuracy << '\n';
    }
  }
  if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

}  // namespace hotcalib
