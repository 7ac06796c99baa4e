#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "caltrend/learners.hpp"
#include "caltrend/parallel.hpp"
#include "caltrend/rng.hpp"

namespace caltrend {

/// Bagged ensemble of binary regression trees. Splits maximize sum-of-squares
/// reduction, which for 0/1 targets coincides with the Gini criterion, so one
/// tree code serves both regression and probability estimation. Per-tree
/// bootstrap rows and per-node feature subsampling (default floor(sqrt(p)))
/// follow the usual random-forest conventions; everything is seeded through
/// counter-derived streams, so fits are independent of thread scheduling.
class ForestModel final : public Predictor {
 public:
  struct Params {
    int num_trees = 500;
    int max_depth = 10;
    int min_leaf = 5;
    int mtry = 0;  // 0: floor(sqrt(p)), at least 1

    static Params from_spec(const LearnerSpec& spec, bool classification) {
      Params p;
      p.num_trees = static_cast<int>(spec.get("num_trees", 500));
      p.max_depth = static_cast<int>(spec.get("max_depth", 10));
      p.min_leaf = static_cast<int>(spec.get("min_leaf", classification ? 10 : 5));
      p.mtry = static_cast<int>(spec.get("mtry", 0));
      return p;
    }
  };

  static ForestModel fit(const RowMatrixXd& x, const Eigen::Ref<const Eigen::VectorXd>& y, const Params& params,
                         std::uint64_t seed, int threads = 0) {
    if (x.rows() == 0) throw Error("nuisance_learners", "forest", "no training rows");
    ForestModel model;
    model.trees_.resize(static_cast<std::size_t>(params.num_trees));
    const int p = static_cast<int>(x.cols());
    const int mtry = params.mtry > 0 ? std::min(params.mtry, p)
                                     : std::max(1, static_cast<int>(std::sqrt(static_cast<double>(p))));
    parallel_for(
        params.num_trees,
        [&](std::int64_t t) {
          Rng rng(mix_seed(seed, streams::kLearner, static_cast<std::uint64_t>(t)));
          model.trees_[static_cast<std::size_t>(t)] = grow_tree(x, y, params, mtry, rng);
        },
        threads);
    return model;
  }

  double predict(const double* x, int p) const override {
    (void)p;
    double sum = 0.0;
    for (const auto& tree : trees_) {
      int node = 0;
      for (;;) {
        const Node& nd = tree[static_cast<std::size_t>(node)];
        if (nd.left < 0) {
          sum += nd.value;
          break;
        }
        node = x[nd.feature] <= nd.threshold ? nd.left : nd.right;
      }
    }
    return sum / static_cast<double>(trees_.size());
  }

  int max_observed_depth() const {
    int deepest = 0;
    for (const auto& tree : trees_) deepest = std::max(deepest, depth_of(tree, 0));
    return deepest;
  }

  void serialize(std::vector<double>& out) const override {
    out.push_back(static_cast<double>(trees_.size()));
    for (const auto& tree : trees_) {
      out.push_back(static_cast<double>(tree.size()));
      for (const Node& nd : tree) {
        out.push_back(static_cast<double>(nd.feature));
        out.push_back(nd.threshold);
        out.push_back(static_cast<double>(nd.left));
        out.push_back(static_cast<double>(nd.right));
        out.push_back(nd.value);
      }
    }
  }

  static ForestModel deserialize(const double*& it) {
    ForestModel model;
    const auto n_trees = static_cast<std::size_t>(*it++);
    model.trees_.resize(n_trees);
    for (auto& tree : model.trees_) {
      tree.resize(static_cast<std::size_t>(*it++));
      for (Node& nd : tree) {
        nd.feature = static_cast<int>(*it++);
        nd.threshold = *it++;
        nd.left = static_cast<int>(*it++);
        nd.right = static_cast<int>(*it++);
        nd.value = *it++;
      }
    }
    return model;
  }

 private:
  struct Node {
    int feature = -1;
    double threshold = 0.0;
    int left = -1;  // < 0: leaf
    int right = -1;
    double value = 0.0;
  };
  using Tree = std::vector<Node>;

  static int depth_of(const Tree& tree, int node) {
    const Node& nd = tree[static_cast<std::size_t>(node)];
    if (nd.left < 0) return 0;
    return 1 + std::max(depth_of(tree, nd.left), depth_of(tree, nd.right));
  }

  static Tree grow_tree(const RowMatrixXd& x, const Eigen::Ref<const Eigen::VectorXd>& y, const Params& params,
                        int mtry, Rng& rng) {
    const auto n = static_cast<std::int64_t>(x.rows());
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
    for (auto& i : idx) i = static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(n)));
    Tree tree;
    std::vector<int> features(static_cast<std::size_t>(x.cols()));
    std::vector<std::pair<double, double>> scratch;
    build_node(tree, x, y, params, mtry, rng, idx, 0, static_cast<std::int64_t>(idx.size()), 0, features,
               scratch);
    return tree;
  }

  // Builds the subtree over idx[lo, hi) and returns its node index.
  static int build_node(Tree& tree, const RowMatrixXd& x, const Eigen::Ref<const Eigen::VectorXd>& y,
                        const Params& params, int mtry, Rng& rng, std::vector<std::int64_t>& idx,
                        std::int64_t lo, std::int64_t hi, int depth, std::vector<int>& features,
                        std::vector<std::pair<double, double>>& scratch) {
    const std::int64_t count = hi - lo;
    double sum = 0.0, sum2 = 0.0;
    for (std::int64_t i = lo; i < hi; ++i) {
      const double v = y[idx[static_cast<std::size_t>(i)]];
      sum += v;
      sum2 += v * v;
    }
    const double mean = sum / static_cast<double>(count);
    const int node = static_cast<int>(tree.size());
    tree.push_back(Node{-1, 0.0, -1, -1, mean});
    const double impurity = sum2 - sum * sum / static_cast<double>(count);
    if (depth >= params.max_depth || count < 2 * params.min_leaf || impurity <= 1e-12) return node;

    const int p = static_cast<int>(x.cols());
    features.resize(static_cast<std::size_t>(p));
    for (int f = 0; f < p; ++f) features[static_cast<std::size_t>(f)] = f;
    // Partial Fisher-Yates: the first mtry entries become the candidate set.
    for (int f = 0; f < mtry; ++f) {
      const int j = f + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(p - f)));
      std::swap(features[static_cast<std::size_t>(f)], features[static_cast<std::size_t>(j)]);
    }

    int best_feature = -1;
    double best_threshold = 0.0, best_score = -1.0;
    for (int fi = 0; fi < mtry; ++fi) {
      const int f = features[static_cast<std::size_t>(fi)];
      scratch.clear();
      for (std::int64_t i = lo; i < hi; ++i) {
        const auto r = idx[static_cast<std::size_t>(i)];
        scratch.emplace_back(x(r, f), y[r]);
      }
      std::sort(scratch.begin(), scratch.end(),
                [](const auto& a, const auto& b) { return a.first < b.first; });
      double left_sum = 0.0;
      for (std::int64_t i = 0; i + 1 < count; ++i) {
        left_sum += scratch[static_cast<std::size_t>(i)].second;
        if (scratch[static_cast<std::size_t>(i)].first == scratch[static_cast<std::size_t>(i + 1)].first)
          continue;
        const std::int64_t nl = i + 1, nr = count - nl;
        if (nl < params.min_leaf || nr < params.min_leaf) continue;
        const double right_sum = sum - left_sum;
        const double score = left_sum * left_sum / static_cast<double>(nl) +
                             right_sum * right_sum / static_cast<double>(nr);
        if (score > best_score) {
          best_score = score;
          best_feature = f;
          best_threshold = 0.5 * (scratch[static_cast<std::size_t>(i)].first +
                                  scratch[static_cast<std::size_t>(i + 1)].first);
        }
      }
    }
    if (best_feature < 0 || best_score <= sum * sum / static_cast<double>(count) + 1e-12) return node;

    const auto mid = std::partition(idx.begin() + lo, idx.begin() + hi, [&](std::int64_t r) {
      return x(r, best_feature) <= best_threshold;
    }) - idx.begin();
    if (mid == lo || mid == hi) return node;

    tree[static_cast<std::size_t>(node)].feature = best_feature;
    tree[static_cast<std::size_t>(node)].threshold = best_threshold;
    const int left = build_node(tree, x, y, params, mtry, rng, idx, lo, mid, depth + 1, features, scratch);
    const int right = build_node(tree, x, y, params, mtry, rng, idx, mid, hi, depth + 1, features, scratch);
    tree[static_cast<std::size_t>(node)].left = left;
    tree[static_cast<std::size_t>(node)].right = right;
    return node;
  }

  std::vector<Tree> trees_;
};

/// One-vs-rest multiclass wrapper with per-row renormalization back onto the
/// probability simplex. The base binary learner is any probability-capable
/// family (tree ensemble or logistic).
class OneVsRestModel final : public MulticlassPredictor {
 public:
  OneVsRestModel() = default;

  static OneVsRestModel fit(const LearnerSpec& spec, const RowMatrixXd& x, const std::vector<int>& labels,
                            int n_classes, std::uint64_t seed, int threads = 0) {
    OneVsRestModel model;
    model.trees_ = spec.family == LearnerSpec::Family::tree_ensemble ||
                   spec.family == LearnerSpec::Family::multinomial_tree_ensemble;
    model.members_.resize(static_cast<std::size_t>(n_classes));
    // Class fits are independent; forests keep their own inner parallelism.
    parallel_for(
        n_classes,
        [&](std::int64_t k) {
          Eigen::VectorXd target(x.rows());
          for (Eigen::Index i = 0; i < x.rows(); ++i)
            target[i] = labels[static_cast<std::size_t>(i)] == k ? 1.0 : 0.0;
          if (model.trees_) {
            model.members_[static_cast<std::size_t>(k)] = std::make_unique<ForestModel>(ForestModel::fit(
                x, target, ForestModel::Params::from_spec(spec, true),
                mix_seed(seed, streams::kLearner, static_cast<std::uint64_t>(k) + 101), 1));
          } else {
            model.members_[static_cast<std::size_t>(k)] =
                std::make_unique<LogisticModel>(LogisticModel::fit(x, target, spec.get("ridge", 0.0)));
          }
        },
        model.trees_ ? 1 : threads);
    return model;
  }

  int n_classes() const override { return static_cast<int>(members_.size()); }

  void predict(const double* x, int p, double* probs) const override {
    double total = 0.0;
    for (int k = 0; k < n_classes(); ++k) {
      const double v = std::max(0.0, members_[static_cast<std::size_t>(k)]->predict(x, p));
      probs[k] = v;
      total += v;
    }
    if (total <= 0.0) {
      for (int k = 0; k < n_classes(); ++k) probs[k] = 1.0 / n_classes();
      return;
    }
    for (int k = 0; k < n_classes(); ++k) probs[k] /= total;
  }

  void serialize(std::vector<double>& out) const override {
    out.push_back(static_cast<double>(members_.size()));
    out.push_back(trees_ ? 1.0 : 0.0);
    for (const auto& m : members_) m->serialize(out);
  }

  static OneVsRestModel deserialize(const double*& it) {
    OneVsRestModel model;
    const auto n = static_cast<std::size_t>(*it++);
    model.trees_ = *it++ != 0.0;
    model.members_.resize(n);
    for (auto& m : model.members_) {
      if (model.trees_)
        m = std::make_unique<ForestModel>(ForestModel::deserialize(it));
      else
        m = std::make_unique<LogisticModel>(LogisticModel::deserialize(it));
    }
    return model;
  }

 private:
  std::vector<std::unique_ptr<Predictor>> members_;
  bool trees_ = false;
};

}  // namespace caltrend
