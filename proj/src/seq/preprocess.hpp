#pragma once

#include "seq/dataset.hpp"
#include "seq/split.hpp"

namespace evseq::seq {

// Sign-preserving log transform used for fat-tailed numerics.
double signed_log1p(double x);

// Fits the time rescaling on the `fit_on` sequences and applies the full
// pipeline (log transform, time rescale, imputation) to every sequence.
// A dataset that is already preprocessed is returned unchanged.
Dataset preprocess(const Dataset& ds, const IndexSet& fit_on);

// Applies the pipeline with a previously fitted time scale.
Dataset preprocess_with(const Dataset& ds, const TimeScale& scale);

}  // namespace evseq::seq
