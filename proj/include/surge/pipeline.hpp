#pragma once

#include "surge/data.hpp"
#include "surge/training.hpp"

namespace surge {

// Materializes standardized (B,T,H,W,C)/(B,T,1)/(B,T,1) batches from a
// windowed sample set. Copies per batch: windows overlap at stride < T and
// the grid stays float32 until here.
inline Dataset as_dataset(const SampleSet& samples, const Standardizer& st) {
  Dataset d;
  d.count = samples.count();
  // by-value capture keeps the underlying series alive with the dataset
  d.gather = [samples, st](const std::vector<std::int64_t>& indices) {
    const std::int64_t B = static_cast<std::int64_t>(indices.size());
    const std::int64_t T = samples.window_len;
    const std::int64_t R = GridSeries::kRows, C = GridSeries::kCols, Ch = GridSeries::kChannels;
    Batch batch;
    batch.atmos = Tensor::uninitialized({B, T, R, C, Ch});
    batch.tide = Tensor::uninitialized({B, T, 1});
    batch.target = Tensor::uninitialized({B, T, 1});
    double* ap = batch.atmos.mutable_data();
    double* tide = batch.tide.mutable_data();
    double* target = batch.target.mutable_data();
    for (std::int64_t b = 0; b < B; ++b) {
      const std::int64_t w = indices[static_cast<std::size_t>(b)];
      for (std::int64_t h = 0; h < T; ++h) {
        const float* f = samples.atmos_frame(w, h);
        for (std::int64_t i = 0; i < R * C; ++i) {
          ap[0] = st.standardize_atmos(f[i * 3 + 0], 0);
          ap[1] = st.standardize_atmos(f[i * 3 + 1], 1);
          ap[2] = st.standardize_atmos(f[i * 3 + 2], 2);
          ap += 3;
        }
        tide[b * T + h] = st.standardize_level(samples.tide_at(w, h));
        target[b * T + h] = st.standardize_level(samples.target_at(w, h));
      }
    }
    return batch;
  };
  return d;
}

}  // namespace surge
