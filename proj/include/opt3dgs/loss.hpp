// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "opt3dgs/image.hpp"
#include "opt3dgs/renderer.hpp"
#include "opt3dgs/splat_model.hpp"

namespace opt3dgs {

enum class PhotometricMode { L1, L2 };
enum class Stage { Exploration, Exploitation };
/// How the per-primitive regularizers are reduced over the cloud.
enum class Reduction { Mean, Sum };

struct LossConfig {
  double lambda_ssim = 0.2;
  double lambda_o = 0.01;
  double lambda_sigma = 0.01;
  PhotometricMode photometric_mode = PhotometricMode::L1;
  int ssim_window = 11;
  double ssim_sigma = 1.5;
  double ssim_c1 = 0.01 * 0.01;
  double ssim_c2 = 0.03 * 0.03;
  Reduction regularizer_reduction = Reduction::Mean;

  void validate() const;
};

template <class T>
struct LossResult {
  double energy = 0.0;
  double photometric = 0.0;
  double ssim = 0.0;
  double opacity_reg = 0.0;
  double scale_reg = 0.0;
  ImageT<T> dL_dimage;
  /// Direct regularizer gradients w.r.t. unconstrained parameters.
  std::vector<ParamVec> dL_dparams;
};

/// Mean local SSIM over all pixels and channels. Border windows are
/// truncated and renormalized, so any image size >= 1x1 is accepted.
template <class T>
double ssim(const ImageT<T>& a, const ImageT<T>& b, const LossConfig& cfg = {});

template <class T>
LossResult<T> total_loss(const ImageT<T>& rendered, const ImageT<T>& target, const GaussianCloud& cloud,
                         const LossConfig& cfg);

/// L1 photometric term while exploring, L2 while exploiting.
LossConfig photometric_swap(LossConfig cfg, Stage stage);

}  // namespace opt3dgs
