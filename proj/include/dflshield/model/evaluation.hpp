#pragma once

#include <span>
#include <vector>

#include "dflshield/model/dataset.hpp"
#include "dflshield/model/params.hpp"

namespace dflshield {

struct EvalReport {
    double f1_macro = 0.0;
    double accuracy = 0.0;
    double loss = 0.0;
    std::vector<double> per_class_precision;
    std::vector<double> per_class_recall;
    std::vector<double> per_class_f1;
    /// Classes that appear among labels or predictions; only these enter the
    /// macro average.
    std::vector<bool> class_present;

    bool operator==(const EvalReport&) const = default;
};

/// Confusion-matrix metrics for hard predictions. `loss` is left at 0.
EvalReport score_predictions(std::span<const int> labels, std::span<const int> predictions,
                             std::size_t num_classes);

/// Macro-F1 and mean loss of `params` over a (non-empty) test split.
EvalReport evaluate(const ModelParams& params, const Dataset& test);

}  // namespace dflshield
