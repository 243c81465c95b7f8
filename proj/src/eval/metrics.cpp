#include "latentfuse/eval/metrics.hpp"

#include <stdexcept>

namespace latentfuse::eval {

double recon_error(std::span<const double> reconstruction, std::span<const double> truth) {
    if (reconstruction.size() != truth.size()) throw std::invalid_argument("recon_error: length mismatch");
    if (truth.empty()) throw std::invalid_argument("recon_error: empty signal");
    double s = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double d = reconstruction[i] - truth[i];
        s += d * d;
    }
    return s / static_cast<double>(truth.size());
}

double f1_macro(std::span<const int> predictions, std::span<const int> truths, int n_classes) {
    if (predictions.size() != truths.size()) throw std::invalid_argument("f1_macro: length mismatch");
    if (n_classes <= 0) throw std::invalid_argument("f1_macro: n_classes must be positive");
    std::vector<double> tp(n_classes, 0.0), fp(n_classes, 0.0), fn(n_classes, 0.0);
    for (std::size_t i = 0; i < truths.size(); ++i) {
        const int p = predictions[i], t = truths[i];
        if (p < 0 || p >= n_classes || t < 0 || t >= n_classes) {
            throw std::out_of_range("f1_macro: label outside [0, n_classes)");
        }
        if (p == t) {
            tp[t] += 1.0;
        } else {
            fp[p] += 1.0;
            fn[t] += 1.0;
        }
    }
    double total = 0.0;
    for (int c = 0; c < n_classes; ++c) {
        const double precision = tp[c] + fp[c] > 0.0 ? tp[c] / (tp[c] + fp[c]) : 0.0;
        const double recall = tp[c] + fn[c] > 0.0 ? tp[c] / (tp[c] + fn[c]) : 0.0;
        if (precision + recall > 0.0) total += 2.0 * precision * recall / (precision + recall);
    }
    return total / static_cast<double>(n_classes);
}

MeanVar mean_var(std::span<const double> values) {
    if (values.empty()) throw std::invalid_argument("mean_var of empty range");
    MeanVar mv;
    for (double v : values) mv.mean += v;
    mv.mean /= static_cast<double>(values.size());
    for (double v : values) mv.variance += (v - mv.mean) * (v - mv.mean);
    mv.variance /= static_cast<double>(values.size());
    return mv;
}

}  // namespace latentfuse::eval
