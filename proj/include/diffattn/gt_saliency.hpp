#pragma once

#include <vector>

#include "diffattn/grid.hpp"

namespace diffattn {

/// Truncated 2-D Gaussian sampled on the integer lattice [-r, r]^2.
struct GaussianKernel {
  double sigma_x = 1.0;
  double sigma_y = 1.0;
  int radius = 1;
  Grid weights;  // (2r+1) x (2r+1), centre at (radius, radius)

  double weight(int dx, int dy) const { return weights.at(dy + radius, dx + radius); }
};

GaussianKernel gaussian_kernel(double sigma_x, double sigma_y, int radius);

/// Default truncation radius ceil(3 sigma).
int default_radius(double sigma);

/// Default blur width for a given map height (H / 24).
double default_sigma(int height);

/// Ground-truth saliency: binary fixations convolved with the truncated Gaussian
/// (zero padding), then min-max normalized. An empty fixation list yields an
/// all-zero map and a warning.
SaliencyMap make_gt(const FixationMap& fix, double sigma_x, double sigma_y, int radius,
                    Diagnostics* diag = nullptr);
SaliencyMap make_gt(const FixationMap& fix, double sigma, Diagnostics* diag = nullptr);

/// Unnormalized convolution used by make_gt.
Grid blur_fixations(const FixationMap& fix, double sigma_x, double sigma_y, int radius);

/// Area-average pooling by `factor` (a power of two) followed by min-max normalization.
SaliencyMap downsample_gt(const SaliencyMap& s_map, int factor, Diagnostics* diag = nullptr);

}  // namespace diffattn
