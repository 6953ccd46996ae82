#include "bodycomp/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "bodycomp/model_io.hpp"

namespace bodycomp {

void FeatureMatrix::add_row(const std::vector<double>& features,
                            double target) {
  if (cols == 0) cols = features.size();
  if (features.size() != cols) {
    throw std::runtime_error("FeatureMatrix: inconsistent row width");
  }
  x.insert(x.end(), features.begin(), features.end());
  y.push_back(target);
}

FeatureMatrix make_feature_matrix(const std::vector<SubjectRecord>& records,
                                  const NormStats& stats, bool pbf_task) {
  FeatureMatrix m;
  m.cols = 4;
  m.x.reserve(records.size() * 4);
  m.y.reserve(records.size());
  for (const auto& r : records) {
    m.x.push_back((r.height_cm - stats.height_mean) / stats.height_sd);
    m.x.push_back(gender_code(r.gender));
    m.x.push_back((r.age - stats.age_mean) / stats.age_sd);
    m.x.push_back((r.weight_kg - stats.weight_mean) / stats.weight_sd);
    m.y.push_back(pbf_task ? r.pbf_pct : r.smm_kg);
  }
  return m;
}

double DecisionTree::predict(const double* features) const {
  int node = 0;
  for (;;) {
    const TreeNode& n = nodes[node];
    if (n.feature < 0) return n.value;
    node = features[n.feature] <= n.threshold ? n.left : n.right;
  }
}

std::string baseline_kind_name(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::kSvr: return "svr";
    case BaselineKind::kRandomForest: return "random_forest";
    case BaselineKind::kGradientBoost: return "gradient_boost";
  }
  return "unknown";
}

BaselineKind parse_baseline_kind(const std::string& name) {
  if (name == "svr") return BaselineKind::kSvr;
  if (name == "random_forest") return BaselineKind::kRandomForest;
  if (name == "gradient_boost") return BaselineKind::kGradientBoost;
  throw std::runtime_error("unknown baseline kind '" + name +
                           "' (valid: svr, random_forest, gradient_boost)");
}

namespace {

struct SplitChoice {
  bool found = false;
  int feature = -1;
  double threshold = 0;
  double children_sse = 0;
};

// Canonical SSE of a row group: two passes in stored (ascending row index)
// order. Identical partitions always evaluate to identical floats, which is
// what makes the lowest-feature/lowest-threshold tie-break well defined.
double canonical_sse(const FeatureMatrix& data, const std::vector<int>& rows) {
  double sum = 0;
  for (int i : rows) sum += data.y[i];
  const double mean = sum / static_cast<double>(rows.size());
  double sse = 0;
  for (int i : rows) {
    const double e = data.y[i] - mean;
    sse += e * e;
  }
  return sse;
}

double canonical_children_sse(const FeatureMatrix& data,
                              const std::vector<int>& indices, int feature,
                              double threshold) {
  std::vector<int> left, right;
  left.reserve(indices.size());
  right.reserve(indices.size());
  for (int i : indices) {
    (data.row(i)[feature] <= threshold ? left : right).push_back(i);
  }
  return canonical_sse(data, left) + canonical_sse(data, right);
}

// Best (feature, threshold) minimizing canonical child SSE over candidate
// thresholds at midpoints of consecutive sorted unique values; ties break to
// the lowest feature index then the lowest threshold. A fast prefix-sum sweep
// preselects the near-optimal candidates, which are then re-scored with the
// canonical evaluation.
SplitChoice best_split(const FeatureMatrix& data,
                       const std::vector<int>& indices,
                       const std::vector<int>& features, int min_leaf,
                       double node_sse) {
  const std::size_t n = indices.size();

  struct Candidate {
    int feature;
    double threshold;
    double fast_sse;
  };
  std::vector<Candidate> candidates;
  std::vector<int> sorted(indices);
  std::vector<double> values(n), targets(n);
  double fast_best = std::numeric_limits<double>::infinity();

  for (int f : features) {
    std::sort(sorted.begin(), sorted.end(), [&](int a, int b) {
      const double va = data.row(a)[f];
      const double vb = data.row(b)[f];
      if (va != vb) return va < vb;
      return a < b;
    });
    for (std::size_t i = 0; i < n; ++i) {
      values[i] = data.row(sorted[i])[f];
      targets[i] = data.y[sorted[i]];
    }
    double total_sum = 0, total_sq = 0;
    for (std::size_t i = 0; i < n; ++i) {
      total_sum += targets[i];
      total_sq += targets[i] * targets[i];
    }
    double left_sum = 0, left_sq = 0;
    for (std::size_t i = 1; i < n; ++i) {
      left_sum += targets[i - 1];
      left_sq += targets[i - 1] * targets[i - 1];
      if (values[i - 1] == values[i]) continue;
      const double thr = 0.5 * (values[i - 1] + values[i]);
      if (!(thr >= values[i - 1]) || thr >= values[i]) continue;
      const std::size_t nl = i;
      const std::size_t nr = n - i;
      if (nl < static_cast<std::size_t>(min_leaf) ||
          nr < static_cast<std::size_t>(min_leaf)) {
        continue;
      }
      const double right_sum = total_sum - left_sum;
      const double right_sq = total_sq - left_sq;
      const double sse = (left_sq - left_sum * left_sum / static_cast<double>(nl)) +
                         (right_sq - right_sum * right_sum / static_cast<double>(nr));
      candidates.push_back({f, thr, sse});
      fast_best = std::min(fast_best, sse);
    }
  }

  SplitChoice best;
  best.children_sse = std::numeric_limits<double>::infinity();
  if (candidates.empty()) return best;

  const double tolerance = 1e-6 * (node_sse + 1e-12);
  for (const Candidate& c : candidates) {
    if (c.fast_sse > fast_best + tolerance) continue;
    const double sse =
        canonical_children_sse(data, indices, c.feature, c.threshold);
    if (sse < best.children_sse) {
      best.found = true;
      best.feature = c.feature;
      best.threshold = c.threshold;
      best.children_sse = sse;
    }
  }
  return best;
}

struct TreeBuilder {
  const FeatureMatrix& data;
  int max_depth;
  int min_leaf;
  Rng* rng;
  int feature_subsample;
  DecisionTree tree;

  std::vector<int> pick_features() {
    const int d = static_cast<int>(data.cols);
    std::vector<int> all(d);
    std::iota(all.begin(), all.end(), 0);
    if (rng == nullptr || feature_subsample <= 0 || feature_subsample >= d) {
      return all;
    }
    // Partial Fisher-Yates, then ascending order for the tie-break sweep.
    for (int i = 0; i < feature_subsample; ++i) {
      const int j = i + static_cast<int>(rng->below(static_cast<std::uint64_t>(d - i)));
      std::swap(all[i], all[j]);
    }
    all.resize(feature_subsample);
    std::sort(all.begin(), all.end());
    return all;
  }

  int build(const std::vector<int>& indices, int depth) {
    const std::size_t n = indices.size();
    double sum = 0;
    bool all_equal = true;
    for (std::size_t i = 0; i < n; ++i) {
      sum += data.y[indices[i]];
      if (data.y[indices[i]] != data.y[indices[0]]) all_equal = false;
    }
    const double mean = sum / static_cast<double>(n);

    const int node_id = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({});
    tree.nodes[node_id].value = mean;

    if (depth >= max_depth || n < 2 * static_cast<std::size_t>(min_leaf) ||
        all_equal) {
      return node_id;
    }
    const double node_sse = canonical_sse(data, indices);
    const SplitChoice split =
        best_split(data, indices, pick_features(), min_leaf, node_sse);
    if (!split.found || !(split.children_sse < node_sse)) {
      return node_id;
    }

    std::vector<int> left, right;
    left.reserve(n);
    right.reserve(n);
    for (int idx : indices) {
      (data.row(idx)[split.feature] <= split.threshold ? left : right)
          .push_back(idx);
    }
    tree.nodes[node_id].feature = split.feature;
    tree.nodes[node_id].threshold = split.threshold;
    const int l = build(left, depth + 1);
    tree.nodes[node_id].left = l;
    const int r = build(right, depth + 1);
    tree.nodes[node_id].right = r;
    return node_id;
  }
};

void require_rows(const FeatureMatrix& data, std::size_t minimum,
                  const char* who) {
  if (data.cols == 0 || data.rows() < minimum || data.y.size() != data.rows()) {
    throw std::runtime_error(std::string(who) + ": invalid or too-small data");
  }
}

}  // namespace

DecisionTree fit_tree(const FeatureMatrix& data, int max_depth, int min_leaf,
                      Rng* rng, int feature_subsample) {
  if (min_leaf < 1) throw std::runtime_error("fit_tree: min_leaf must be >= 1");
  require_rows(data, 1, "fit_tree");
  TreeBuilder builder{data, max_depth, min_leaf, rng, feature_subsample, {}};
  std::vector<int> indices(data.rows());
  std::iota(indices.begin(), indices.end(), 0);
  builder.build(indices, 0);
  return std::move(builder.tree);
}

BaselineModel fit_random_forest(const FeatureMatrix& data,
                                const ForestConfig& cfg) {
  require_rows(data, 2, "fit_random_forest");
  if (cfg.n_trees < 1) {
    throw std::runtime_error("fit_random_forest: n_trees must be >= 1");
  }
  const int subsample =
      cfg.feature_subsample
          ? static_cast<int>(std::llround(std::sqrt(static_cast<double>(data.cols))))
          : 0;
  BaselineModel model;
  model.kind = BaselineKind::kRandomForest;
  model.trees.reserve(cfg.n_trees);
  const std::size_t n = data.rows();
  for (int t = 0; t < cfg.n_trees; ++t) {
    Rng rng = Rng::substream(cfg.seed, static_cast<std::uint64_t>(t));
    if (cfg.bootstrap) {
      FeatureMatrix sample;
      sample.cols = data.cols;
      sample.x.reserve(n * data.cols);
      sample.y.reserve(n);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t pick = static_cast<std::size_t>(rng.below(n));
        const double* row = data.row(pick);
        sample.x.insert(sample.x.end(), row, row + data.cols);
        sample.y.push_back(data.y[pick]);
      }
      model.trees.push_back(
          fit_tree(sample, cfg.max_depth, cfg.min_leaf, &rng, subsample));
    } else {
      model.trees.push_back(
          fit_tree(data, cfg.max_depth, cfg.min_leaf, &rng, subsample));
    }
  }
  return model;
}

BaselineModel fit_gradient_boost(const FeatureMatrix& data,
                                 const BoostConfig& cfg) {
  require_rows(data, 2, "fit_gradient_boost");
  if (cfg.n_rounds < 0) {
    throw std::runtime_error("fit_gradient_boost: n_rounds must be >= 0");
  }
  BaselineModel model;
  model.kind = BaselineKind::kGradientBoost;
  model.boost_learning_rate = cfg.learning_rate;
  model.boost_f0 =
      std::accumulate(data.y.begin(), data.y.end(), 0.0) /
      static_cast<double>(data.y.size());

  std::vector<double> residual(data.y);
  for (auto& r : residual) r -= model.boost_f0;

  FeatureMatrix round_data;
  round_data.cols = data.cols;
  round_data.x = data.x;
  model.trees.reserve(cfg.n_rounds);
  for (int round = 0; round < cfg.n_rounds; ++round) {
    round_data.y = residual;
    DecisionTree tree = fit_tree(round_data, cfg.max_depth, cfg.min_leaf);
    for (std::size_t i = 0; i < residual.size(); ++i) {
      residual[i] -= cfg.learning_rate * tree.predict(data.row(i));
    }
    model.trees.push_back(std::move(tree));
  }
  return model;
}

BaselineModel fit_svr(const FeatureMatrix& data, const SvrConfig& cfg) {
  require_rows(data, 2, "fit_svr");
  if (cfg.epochs < 0) throw std::runtime_error("fit_svr: epochs must be >= 0");
  const std::size_t n = data.rows();
  const std::size_t d = data.cols;

  BaselineModel model;
  model.kind = BaselineKind::kSvr;
  {
    double mean = std::accumulate(data.y.begin(), data.y.end(), 0.0) /
                  static_cast<double>(n);
    double ss = 0;
    for (double y : data.y) ss += (y - mean) * (y - mean);
    const double sd = std::sqrt(ss / static_cast<double>(n - 1));
    model.target_mean = mean;
    model.target_sd = sd > 0 ? sd : 1.0;
  }
  std::vector<double> yz(n);
  for (std::size_t i = 0; i < n; ++i) {
    yz[i] = (data.y[i] - model.target_mean) / model.target_sd;
  }

  std::vector<double> w(d, 0.0);
  double b = 0.0;
  const double lambda = 1.0 / (cfg.c * static_cast<double>(n));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(cfg.seed);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    const double eta = cfg.learning_rate / (1.0 + epoch);
    for (std::size_t i : order) {
      const double* x = data.row(i);
      double r = b - yz[i];
      for (std::size_t j = 0; j < d; ++j) r += w[j] * x[j];
      const double g = std::fabs(r) > cfg.epsilon ? (r > 0 ? 1.0 : -1.0) : 0.0;
      const double shrink = 1.0 - eta * lambda;
      for (std::size_t j = 0; j < d; ++j) {
        w[j] = shrink * w[j] - eta * cfg.c * g * x[j];
      }
      b -= eta * cfg.c * g;
    }
  }
  for (double v : w) {
    if (!std::isfinite(v)) throw std::runtime_error("fit_svr: diverged");
  }
  if (!std::isfinite(b)) throw std::runtime_error("fit_svr: diverged");
  model.svr_weights = std::move(w);
  model.svr_bias = b;
  return model;
}

double predict(const BaselineModel& model, const double* features,
               std::size_t n_features) {
  switch (model.kind) {
    case BaselineKind::kSvr: {
      if (n_features != model.svr_weights.size()) {
        throw std::runtime_error("predict: feature count mismatch");
      }
      double z = model.svr_bias;
      for (std::size_t j = 0; j < n_features; ++j) {
        z += model.svr_weights[j] * features[j];
      }
      return z * model.target_sd + model.target_mean;
    }
    case BaselineKind::kRandomForest: {
      double sum = 0;
      for (const auto& tree : model.trees) sum += tree.predict(features);
      return sum / static_cast<double>(model.trees.size());
    }
    case BaselineKind::kGradientBoost: {
      double out = model.boost_f0;
      for (const auto& tree : model.trees) {
        out += model.boost_learning_rate * tree.predict(features);
      }
      return out;
    }
  }
  throw std::runtime_error("predict: unknown baseline kind");
}

double predict(const BaselineModel& model, const std::vector<double>& features) {
  return predict(model, features.data(), features.size());
}

void save_baseline(const BaselineModel& model,
                   const std::filesystem::path& path) {
  nlohmann::json manifest;
  manifest["format"] = "bodycomp-model";
  manifest["kind"] = "baseline";
  manifest["version"] = 1;
  manifest["baseline_kind"] = baseline_kind_name(model.kind);

  std::vector<double> blob;
  blob.push_back(model.target_mean);
  blob.push_back(model.target_sd);
  blob.push_back(model.feature_stats.height_mean);
  blob.push_back(model.feature_stats.height_sd);
  blob.push_back(model.feature_stats.age_mean);
  blob.push_back(model.feature_stats.age_sd);
  blob.push_back(model.feature_stats.weight_mean);
  blob.push_back(model.feature_stats.weight_sd);
  blob.push_back(model.boost_f0);
  blob.push_back(model.boost_learning_rate);
  blob.push_back(model.svr_bias);

  nlohmann::json trees = nlohmann::json::array();
  for (const auto& tree : model.trees) {
    nlohmann::json t;
    std::vector<int> features, left, right;
    features.reserve(tree.nodes.size());
    for (const auto& node : tree.nodes) {
      features.push_back(node.feature);
      left.push_back(node.left);
      right.push_back(node.right);
      blob.push_back(node.threshold);
      blob.push_back(node.value);
    }
    t["feature"] = std::move(features);
    t["left"] = std::move(left);
    t["right"] = std::move(right);
    trees.push_back(std::move(t));
  }
  manifest["trees"] = std::move(trees);
  manifest["svr_dim"] = model.svr_weights.size();
  blob.insert(blob.end(), model.svr_weights.begin(), model.svr_weights.end());

  model_io::write_container(path, std::move(manifest), blob);
}

BaselineModel load_baseline(const std::filesystem::path& path) {
  const model_io::Container c = model_io::read_container(path);
  const auto& m = c.manifest;
  if (m.value("kind", "") != "baseline") {
    throw std::runtime_error("load_baseline: " + path.string() +
                             " is not a baseline model file");
  }
  BaselineModel model;
  model.kind = parse_baseline_kind(m.at("baseline_kind").get<std::string>());

  std::size_t pos = 0;
  const auto take = [&]() {
    if (pos >= c.blob.size()) {
      throw std::runtime_error("load_baseline: blob too short");
    }
    return c.blob[pos++];
  };
  model.target_mean = take();
  model.target_sd = take();
  model.feature_stats.height_mean = take();
  model.feature_stats.height_sd = take();
  model.feature_stats.age_mean = take();
  model.feature_stats.age_sd = take();
  model.feature_stats.weight_mean = take();
  model.feature_stats.weight_sd = take();
  model.boost_f0 = take();
  model.boost_learning_rate = take();
  model.svr_bias = take();

  for (const auto& t : m.at("trees")) {
    const auto features = t.at("feature").get<std::vector<int>>();
    const auto left = t.at("left").get<std::vector<int>>();
    const auto right = t.at("right").get<std::vector<int>>();
    if (left.size() != features.size() || right.size() != features.size()) {
      throw std::runtime_error("load_baseline: malformed tree arrays");
    }
    DecisionTree tree;
    tree.nodes.resize(features.size());
    for (std::size_t i = 0; i < features.size(); ++i) {
      tree.nodes[i].feature = features[i];
      tree.nodes[i].left = left[i];
      tree.nodes[i].right = right[i];
      tree.nodes[i].threshold = take();
      tree.nodes[i].value = take();
    }
    model.trees.push_back(std::move(tree));
  }
  const std::size_t svr_dim = m.at("svr_dim").get<std::size_t>();
  model.svr_weights.resize(svr_dim);
  for (std::size_t i = 0; i < svr_dim; ++i) model.svr_weights[i] = take();
  if (pos != c.blob.size()) {
    throw std::runtime_error("load_baseline: blob length mismatch");
  }
  return model;
}

}  // namespace bodycomp
