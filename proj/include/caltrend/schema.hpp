#pragma once

#include <cmath>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

#include "caltrend/common.hpp"

namespace caltrend {

enum class CovariateKind { numeric, binary, categorical };

struct Covariate {
  std::string name;
  CovariateKind kind = CovariateKind::numeric;
  std::vector<std::string> levels;  // categorical only; first level is the reference
};

/// Ordered covariate schema shared by every trial. Raw storage holds one
/// slot per covariate (categorical values as level indices); the encoded
/// design expands categoricals to reference-coded indicator columns.
class CovariateSchema {
 public:
  CovariateSchema() = default;

  explicit CovariateSchema(std::vector<Covariate> covariates) : covariates_(std::move(covariates)) {
    std::unordered_set<std::string> seen;
    encoded_width_ = 0;
    for (const auto& c : covariates_) {
      if (!seen.insert(c.name).second)
        throw Error("trial_data", "schema", "duplicate covariate name '" + c.name + "'");
      if (c.kind == CovariateKind::categorical) {
        if (c.levels.empty())
          throw Error("trial_data", "schema", "categorical covariate '" + c.name + "' has no levels");
        encoded_width_ += static_cast<int>(c.levels.size()) - 1;
      } else {
        encoded_width_ += 1;
      }
    }
  }

  int size() const { return static_cast<int>(covariates_.size()); }
  int encoded_width() const { return encoded_width_; }
  const std::vector<Covariate>& covariates() const { return covariates_; }
  const Covariate& at(int i) const { return covariates_[static_cast<std::size_t>(i)]; }

  int index_of(const std::string& name) const {
    for (int i = 0; i < size(); ++i)
      if (covariates_[static_cast<std::size_t>(i)].name == name) return i;
    return -1;
  }

  /// One-hot encode (first level = reference) a raw covariate vector into
  /// `out`, which must have encoded_width() slots.
  void encode(const double* raw, double* out) const {
    int o = 0;
    for (const auto& c : covariates_) {
      const double v = *raw++;
      if (c.kind == CovariateKind::categorical) {
        const int nlev = static_cast<int>(c.levels.size());
        const int level = static_cast<int>(v);
        for (int l = 1; l < nlev; ++l) out[o++] = (level == l) ? 1.0 : 0.0;
      } else {
        out[o++] = v;
      }
    }
  }

  Eigen::VectorXd encode(const Eigen::Ref<const Eigen::VectorXd>& raw) const {
    Eigen::VectorXd out(encoded_width());
    encode(raw.data(), out.data());
    return out;
  }

  /// Validate one raw value for covariate i; returns false when the value is
  /// outside the declared domain (bad level index, non-0/1 binary).
  bool valid_value(int i, double v) const {
    const Covariate& c = at(i);
    if (!std::isfinite(v)) return false;
    switch (c.kind) {
      case CovariateKind::numeric:
        return true;
      case CovariateKind::binary:
        return v == 0.0 || v == 1.0;
      case CovariateKind::categorical: {
        const int level = static_cast<int>(v);
        return static_cast<double>(level) == v && level >= 0 && level < static_cast<int>(c.levels.size());
      }
    }
    return false;
  }

 private:
  std::vector<Covariate> covariates_;
  int encoded_width_ = 0;
};

}  // namespace caltrend
