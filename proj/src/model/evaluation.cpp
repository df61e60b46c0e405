#include "dflshield/model/evaluation.hpp"

#include <stdexcept>

#include "dflshield/model/training.hpp"

namespace dflshield {

EvalReport score_predictions(std::span<const int> labels, std::span<const int> predictions,
                             std::size_t num_classes) {
    if (labels.size() != predictions.size()) throw ShapeError("labels/predictions length mismatch");
    std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
    std::vector<bool> present(num_classes, false);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto y = static_cast<std::size_t>(labels[i]);
        auto p = static_cast<std::size_t>(predictions[i]);
        if (y >= num_classes || p >= num_classes) throw ShapeError("class index out of range");
        present[y] = present[p] = true;
        if (y == p) {
            ++tp[y];
            ++correct;
        } else {
            ++fp[p];
            ++fn[y];
        }
    }
    EvalReport r;
    r.per_class_precision.assign(num_classes, 0.0);
    r.per_class_recall.assign(num_classes, 0.0);
    r.per_class_f1.assign(num_classes, 0.0);
    r.class_present = present;
    double f1_sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        double prec_den = static_cast<double>(tp[c] + fp[c]);
        double rec_den = static_cast<double>(tp[c] + fn[c]);
        double prec = prec_den > 0 ? static_cast<double>(tp[c]) / prec_den : 0.0;
        double rec = rec_den > 0 ? static_cast<double>(tp[c]) / rec_den : 0.0;
        double f1 = (prec + rec) > 0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
        r.per_class_precision[c] = prec;
        r.per_class_recall[c] = rec;
        r.per_class_f1[c] = f1;
        if (present[c]) {
            f1_sum += f1;
            ++counted;
        }
    }
    r.f1_macro = counted > 0 ? f1_sum / static_cast<double>(counted) : 0.0;
    r.accuracy = labels.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(labels.size());
    return r;
}

EvalReport evaluate(const ModelParams& params, const Dataset& test) {
    if (test.empty()) throw std::invalid_argument("evaluate on empty test split");
    std::vector<int> predictions(test.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        predictions[i] = predict_class(params, test.row(i));
        loss += example_loss(params, test.row(i), test.label(i));
    }
    auto r = score_predictions(test.labels(), predictions, params.architecture().class_count());
    r.loss = loss / static_cast<double>(test.size());
    return r;
}

}  // namespace dflshield
