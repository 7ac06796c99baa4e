#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "caltrend/common.hpp"
#include "caltrend/rng.hpp"
#include "caltrend/schema.hpp"

namespace caltrend {

/// Coarsened sequential-trial data. A subject-trial pair (i, m) either has a
/// complete eligible record (covariates, binary treatment, finite outcome)
/// or is absent, which encodes ineligibility. Immutable once built; readers
/// may share it across threads freely.
class TrialPanel {
 public:
  TrialPanel(CovariateSchema schema, int n_trials)
      : schema_(std::move(schema)), n_trials_(n_trials) {
    if (n_trials_ < 1) throw Error("trial_data", "panel", "need at least one trial");
  }

  /// Registers a subject and returns its index. Ids are opaque labels.
  int add_subject(std::string subject_id) {
    subject_ids_.push_back(std::move(subject_id));
    slot_.resize(slot_.size() + static_cast<std::size_t>(n_trials_), -1);
    return n_subjects() - 1;
  }

  /// Attach an eligible record for (subject, trial). Trial is 1-based.
  /// Values must already satisfy the schema; use CovariateSchema::valid_value
  /// upstream (ingestion coerces invalid rows to absent instead of calling this).
  void set_record(int subject, int trial1, const std::vector<double>& raw_covariates, int treatment,
                  double outcome) {
    check_trial(trial1);
    if (treatment != 0 && treatment != 1)
      throw Error("trial_data", "panel", "treatment must be 0 or 1");
    if (!std::isfinite(outcome)) throw Error("trial_data", "panel", "outcome must be finite");
    if (static_cast<int>(raw_covariates.size()) != schema_.size())
      throw Error("trial_data", "panel", "covariate vector does not match schema width");
    for (int c = 0; c < schema_.size(); ++c)
      if (!schema_.valid_value(c, raw_covariates[static_cast<std::size_t>(c)]))
        throw Error("trial_data", "panel",
                    "value out of domain for covariate '" + schema_.at(c).name + "'");
    std::int64_t& s = slot_[slot_index(subject, trial1)];
    if (s >= 0) throw Error("trial_data", "panel", "duplicate record for subject-trial");
    s = static_cast<std::int64_t>(treatment_.size());
    treatment_.push_back(static_cast<std::uint8_t>(treatment));
    outcome_.push_back(outcome);
    covariates_.insert(covariates_.end(), raw_covariates.begin(), raw_covariates.end());
  }

  int n_subjects() const { return static_cast<int>(subject_ids_.size()); }
  int n_trials() const { return n_trials_; }
  const CovariateSchema& schema() const { return schema_; }
  const std::vector<std::string>& subject_ids() const { return subject_ids_; }

  bool eligible(int subject, int trial1) const { return slot_[slot_index(subject, trial1)] >= 0; }

  /// Record handle; valid only when eligible(subject, trial1).
  std::int64_t record(int subject, int trial1) const { return slot_[slot_index(subject, trial1)]; }

  int treatment_at(std::int64_t rec) const { return treatment_[static_cast<std::size_t>(rec)]; }
  double outcome_at(std::int64_t rec) const { return outcome_[static_cast<std::size_t>(rec)]; }
  const double* covariates_at(std::int64_t rec) const {
    return covariates_.data() + static_cast<std::size_t>(rec) * static_cast<std::size_t>(schema_.size());
  }

  std::int64_t n_records() const { return static_cast<std::int64_t>(treatment_.size()); }

  int eligible_count(int trial1) const {
    check_trial(trial1);
    int count = 0;
    for (int i = 0; i < n_subjects(); ++i)
      if (eligible(i, trial1)) ++count;
    return count;
  }

 private:
  void check_trial(int trial1) const {
    if (trial1 < 1 || trial1 > n_trials_) throw Error("trial_data", "panel", "trial index out of range");
  }
  std::size_t slot_index(int subject, int trial1) const {
    return static_cast<std::size_t>(subject) * static_cast<std::size_t>(n_trials_) +
           static_cast<std::size_t>(trial1 - 1);
  }

  CovariateSchema schema_;
  int n_trials_;
  std::vector<std::string> subject_ids_;
  std::vector<std::int64_t> slot_;  // (subject, trial) -> record index, -1 if absent
  std::vector<std::uint8_t> treatment_;
  std::vector<double> outcome_;
  std::vector<double> covariates_;  // record-major, schema.size() values each
};

/// One eligible subject-trial in the pooled dataset.
struct PooledRow {
  int subject;        // panel subject index
  int trial1;         // 1-based trial tag
  std::int64_t rec;   // panel record handle
};

/// The union over trials of all eligible records, each tagged with its
/// trial, in subject-major then trial order. Holds a reference to the panel
/// that produced it.
struct PooledDataset {
  const TrialPanel* panel = nullptr;
  std::vector<PooledRow> rows;
  std::vector<int> eligible_count;  // per trial (0-based index)

  std::int64_t size() const { return static_cast<std::int64_t>(rows.size()); }
  double eligible_fraction(int trial1) const {
    return static_cast<double>(eligible_count[static_cast<std::size_t>(trial1 - 1)]) /
           static_cast<double>(panel->n_subjects());
  }
};

inline PooledDataset build_pooled(const TrialPanel& panel) {
  PooledDataset pooled;
  pooled.panel = &panel;
  pooled.eligible_count.assign(static_cast<std::size_t>(panel.n_trials()), 0);
  for (int i = 0; i < panel.n_subjects(); ++i) {
    for (int m = 1; m <= panel.n_trials(); ++m) {
      if (!panel.eligible(i, m)) continue;
      pooled.rows.push_back({i, m, panel.record(i, m)});
      ++pooled.eligible_count[static_cast<std::size_t>(m - 1)];
    }
  }
  return pooled;
}

/// Subject-level split into two near-equal halves. Splitting is always by
/// subject, never by subject-trial row, so one subject's rows share a fold.
/// Deterministic in (panel size, seed).
inline std::array<std::vector<int>, 2> split_subjects(const TrialPanel& panel, std::uint64_t seed) {
  const int n = panel.n_subjects();
  if (n < 2) throw Error("trial_data", "split_subjects", "need at least 2 subjects to split");
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(seed, streams::kFoldSplit));
  for (int i = n - 1; i > 0; --i) {
    const auto j = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(i) + 1));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  const int half = n / 2;
  std::array<std::vector<int>, 2> folds;
  folds[0].assign(order.begin(), order.begin() + half);
  folds[1].assign(order.begin() + half, order.end());
  std::sort(folds[0].begin(), folds[0].end());
  std::sort(folds[1].begin(), folds[1].end());
  return folds;
}

/// Fold membership lookup: fold_of[subject] in {0, 1}.
inline std::vector<std::uint8_t> fold_membership(const std::array<std::vector<int>, 2>& folds, int n_subjects) {
  std::vector<std::uint8_t> fold_of(static_cast<std::size_t>(n_subjects), 0);
  for (int s : folds[1]) fold_of[static_cast<std::size_t>(s)] = 1;
  return fold_of;
}

/// Copy of the panel restricted to the given subjects (order preserved as
/// passed). Trial count and schema are unchanged.
inline TrialPanel subset_panel(const TrialPanel& panel, const std::vector<int>& subjects) {
  TrialPanel out(panel.schema(), panel.n_trials());
  const int p = panel.schema().size();
  std::vector<double> cov(static_cast<std::size_t>(p));
  for (int s : subjects) {
    const int si = out.add_subject(panel.subject_ids()[static_cast<std::size_t>(s)]);
    for (int m = 1; m <= panel.n_trials(); ++m) {
      if (!panel.eligible(s, m)) continue;
      const auto rec = panel.record(s, m);
      const double* raw = panel.covariates_at(rec);
      cov.assign(raw, raw + p);
      out.set_record(si, m, cov, panel.treatment_at(rec), panel.outcome_at(rec));
    }
  }
  return out;
}

}  // namespace caltrend
