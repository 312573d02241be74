#pragma once

// Adapts a trained transformer to the shared Predictor interface so error
// curves and probes treat models and classical baselines identically.

#include <map>
#include <string>
#include <vector>

#include "icl/baselines.hpp"
#include "icl/model.hpp"

namespace icl {

template <class Real>
class ModelPredictor final : public Predictor {
 public:
  explicit ModelPredictor(const TransformerParams<Real>* params, std::string name = "transformer")
      : params_(params), name_(std::move(name)) {}

  std::string name() const override { return name_; }

  std::vector<double> predict(const std::vector<EvalCase>& cases) const override {
    // Group equal-length cases so each group runs as one batched forward.
    std::map<int, std::vector<size_t>> by_k;
    for (size_t i = 0; i < cases.size(); ++i) by_k[static_cast<int>(cases[i].X.rows())].push_back(i);
    std::vector<double> out(cases.size());
    for (const auto& [k, idxs] : by_k) {
      std::vector<Prompt> prompts(idxs.size());
      std::vector<const Prompt*> ptrs(idxs.size());
      for (size_t j = 0; j < idxs.size(); ++j) {
        const EvalCase& c = cases[idxs[j]];
        Prompt& p = prompts[j];
        p.inputs.resize(k + 1, c.X.cols());
        p.inputs.topRows(k) = c.X;
        p.inputs.row(k) = c.xq;
        p.targets = Vec::Zero(k + 1);
        p.targets.head(k) = c.y;  // the query target token is never read
        ptrs[j] = &p;
      }
      const Mat preds = model_forward_batch(*params_, ptrs);
      for (size_t j = 0; j < idxs.size(); ++j) out[idxs[j]] = preds(static_cast<Eigen::Index>(j), k);
    }
    return out;
  }

  // Gradient of the query prediction with respect to the query input, for
  // the alignment probe.
  Vec query_gradient(const Prompt& prompt) const { return input_gradient(*params_, prompt, prompt.m()); }

 private:
  const TransformerParams<Real>* params_;
  std::string name_;
};

}  // namespace icl
