#pragma once

#include <array>
#include <optional>
#include <type_traits>

#include "csunet/autodiff.hpp"

namespace csunet {

using Triple = std::array<std::int64_t, 3>;

struct ConvOptions {
  Triple stride{1, 1, 1};
  Triple padding{0, 0, 0};
  Triple dilation{1, 1, 1};
};

enum class UpsampleMode { nearest, trilinear };
enum class Mode { train, eval };

/// Cross-correlation with zero padding. weight is (Cout, Cin, kd, kh, kw).
template <typename T>
Var<T> conv3d(const Var<T>& input, const Var<T>& weight, const std::optional<std::type_identity_t<Var<T>>>& bias,
              const ConvOptions& opt = {});

/// Window max without padding; floor semantics on remainders. The gradient
/// goes to the first maximum in scan order.
template <typename T>
Var<T> maxpool3d(const Var<T>& input, Triple kernel, Triple stride);

/// Factor-2 spatial upsampling; trilinear uses the align_corners=false grid.
template <typename T>
Var<T> upsample3d(const Var<T>& input, UpsampleMode mode);

struct NormOptions {
  double eps = 1e-5;
  double momentum = 0.1;
};

/// Batch normalisation over (N, D, H, W) per channel. In train mode the batch
/// statistics are used and the running buffers are updated in place (running
/// variance uses the unbiased estimate); eval mode reads the buffers only.
template <typename T>
Var<T> batchnorm3d(const Var<T>& input, const Var<T>& gamma, const Var<T>& beta,
                   Tensor<T>& running_mean, Tensor<T>& running_var, Mode mode,
                   const NormOptions& opt = {});

/// Per-sample, per-channel normalisation over (D, H, W).
template <typename T>
Var<T> instancenorm3d(const Var<T>& input, const Var<T>& gamma, const Var<T>& beta,
                      const NormOptions& opt = {});

template <typename T>
Var<T> relu(const Var<T>& x);
template <typename T>
Var<T> sigmoid(const Var<T>& x);
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& x, T factor);

/// Channel-axis concatenation; a's channels come first.
template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b);

/// (N, C, ...) with a single channel c kept: (N, 1, ...).
template <typename T>
Var<T> select_channel(const Var<T>& x, std::int64_t c);

template <typename T>
Var<T> softmax_channels(const Var<T>& x);

/// (N, C, D, H, W) -> (N, C).
template <typename T>
Var<T> global_avg_pool(const Var<T>& x);

/// x (N, Fin), weight (Fout, Fin), bias (Fout).
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

/// Multiply every voxel of channel (n, c) by g(n, c).
template <typename T>
Var<T> scale_channels(const Var<T>& x, const Var<T>& g);

template <typename T>
Var<T> sum(const Var<T>& x);
template <typename T>
Var<T> mean(const Var<T>& x);

}  // namespace csunet
