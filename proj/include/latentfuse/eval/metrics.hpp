#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace latentfuse::eval {

/// Mean squared error per element.
double recon_error(std::span<const double> reconstruction, std::span<const double> truth);

/// Unweighted mean over classes of 2PR/(P+R); classes with P+R = 0 score 0.
double f1_macro(std::span<const int> predictions, std::span<const int> truths, int n_classes);

struct MeanVar {
    double mean = 0.0;
    double variance = 0.0;
};

/// Population mean and variance.
MeanVar mean_var(std::span<const double> values);

}  // namespace latentfuse::eval
