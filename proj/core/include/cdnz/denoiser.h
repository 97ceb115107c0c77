#ifndef CDNZ_DENOISER_H_
#define CDNZ_DENOISER_H_

#include <cstdint>
#include <string>
#include <vector>

#include "cdnz/nn.h"

namespace cdnz {

enum class Fusion { kConcat, kSum };
enum class Downsample { kStridedConv, kMaxPool };
// Where batch norm + ReLU of a block's fourth convolution sit relative to the
// inner skip sum.
enum class SkipOrder { kNormBeforeSum, kNormAfterSum };

std::string ToString(Fusion f);
std::string ToString(Downsample d);
std::string ToString(SkipOrder s);
Fusion ParseFusion(const std::string& s);
Downsample ParseDownsample(const std::string& s);
SkipOrder ParseSkipOrder(const std::string& s);

struct DenoiserConfig {
  int scales = 3;
  Fusion fusion = Fusion::kConcat;
  Downsample downsample = Downsample::kStridedConv;
  int input_channels = 3;
  // Encoder width; blocks use (w, w/4, w/4, w) and decoders (2w, w/2, w/2, 2w).
  // 128 reproduces the published channel counts.
  int width = 128;
  SkipOrder skip_order = SkipOrder::kNormBeforeSum;

  // Throws InvalidArgument for unsupported values.
  void Validate() const;
  // One-line `key=value;...` form stored in checkpoint metadata.
  std::string Serialize() const;
  static DenoiserConfig Deserialize(const std::string& text);
  bool operator==(const DenoiserConfig&) const = default;
};

// Four-convolution bottleneck unit: 3x3 -> 1x1 -> 3x3 -> 1x1, each followed by
// batch norm + ReLU, with the first layer's output summed into the last's.
template <typename T>
struct ResidualBlock {
  ConvLayer<T> conv[4];
  BatchNormLayer<T> norm[4];
  SkipOrder skip_order = SkipOrder::kNormBeforeSum;

  Var<T> Forward(Tape<T>& tape, Var<T> x, Mode mode) const;
};

// Builds an encoding block (widths w, w/4, w/4, w) or decoding block.
template <typename T>
ResidualBlock<T> MakeResidualBlock(ParamStore<T>& store, const std::string& name, int in_channels, int width,
                                   SkipOrder skip_order, Rng& rng);

// Multi-scale encoder/decoder with a long skip from input to output.
//
// Wiring for S scales: encoder e0 runs on the image; for s >= 1 the previous
// encoder output is downsampled and encoded again (e_s). Going back up, the
// running feature (starting at e_{S-1}) is upsampled by a 4x4 deconvolution,
// fused with e_s and decoded. A 3x3 projection of the top decoder output is
// added to the input image.
template <typename T>
class Denoiser {
 public:
  Denoiser(const DenoiserConfig& config, uint64_t seed);
  Denoiser(Denoiser&&) noexcept = default;
  Denoiser& operator=(Denoiser&&) noexcept = default;

  const DenoiserConfig& config() const { return config_; }
  uint64_t seed() const { return seed_; }
  ParamStore<T>& store() { return store_; }
  const ParamStore<T>& store() const { return store_; }
  std::vector<Parameter<T>*> parameters() const { return store_.parameters(); }

  // Side length that H and W are padded to a multiple of.
  int64_t SizeMultiple() const { return int64_t{1} << (config_.scales - 1); }
  int num_downsamples() const { return static_cast<int>(encoders_.size()) - 1; }
  int num_upsamples() const { return static_cast<int>(upsample_.size()); }

  // Arbitrary H, W >= SizeMultiple(): reflection-padded to the next multiple
  // and cropped back. Output shape equals input shape.
  Var<T> Forward(Tape<T>& tape, Var<T> x, Mode mode) const;

  // Eval-mode inference without gradient recording.
  Tensor<T> Denoise(const Tensor<T>& noisy) const;

  // Zeroes the final projection, making Forward the identity.
  void ZeroProjection();

 private:
  Var<T> ForwardAligned(Tape<T>& tape, Var<T> x, Mode mode) const;

  DenoiserConfig config_;
  uint64_t seed_;
  ParamStore<T> store_;
  std::vector<ResidualBlock<T>> encoders_;
  std::vector<ConvLayer<T>> downsample_;
  std::vector<DeconvLayer<T>> upsample_;
  std::vector<ConvLayer<T>> adapters_;
  std::vector<bool> has_adapter_;
  std::vector<ResidualBlock<T>> decoders_;
  ConvLayer<T> projection_;
};

extern template class Denoiser<float>;
extern template class Denoiser<double>;

}  // namespace cdnz

#endif  // CDNZ_DENOISER_H_
