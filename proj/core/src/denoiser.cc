#include "cdnz/denoiser.h"

#include <map>
#include <sstream>

namespace cdnz {
namespace {

// Fixed gain on the projection input. The projection sees many correlated
// non-negative features, so without it its curvature caps the usable SGD step
// far below what the rest of the network tolerates.
constexpr double kProjectionInputGain = 0.1;

}  // namespace


std::string ToString(Fusion f) { return f == Fusion::kConcat ? "concat" : "sum"; }
std::string ToString(Downsample d) { return d == Downsample::kStridedConv ? "strided_conv" : "max_pool"; }
std::string ToString(SkipOrder s) { return s == SkipOrder::kNormBeforeSum ? "norm_before_sum" : "norm_after_sum"; }

Fusion ParseFusion(const std::string& s) {
  if (s == "concat") return Fusion::kConcat;
  if (s == "sum") return Fusion::kSum;
  throw InvalidArgument("unknown fusion scheme '" + s + "' (expected concat|sum)");
}

Downsample ParseDownsample(const std::string& s) {
  if (s == "strided_conv") return Downsample::kStridedConv;
  if (s == "max_pool") return Downsample::kMaxPool;
  throw InvalidArgument("unknown downsample scheme '" + s + "' (expected strided_conv|max_pool)");
}

SkipOrder ParseSkipOrder(const std::string& s) {
  if (s == "norm_before_sum") return SkipOrder::kNormBeforeSum;
  if (s == "norm_after_sum") return SkipOrder::kNormAfterSum;
  throw InvalidArgument("unknown skip order '" + s + "' (expected norm_before_sum|norm_after_sum)");
}

void DenoiserConfig::Validate() const {
  if (scales < 2) throw InvalidArgument("denoiser needs at least 2 scales, got " + std::to_string(scales));
  if (scales > 8) throw InvalidArgument("denoiser supports at most 8 scales, got " + std::to_string(scales));
  if (input_channels < 1) throw InvalidArgument("input_channels must be positive");
  if (width < 4 || width % 4 != 0) {
    throw InvalidArgument("denoiser width must be a positive multiple of 4, got " + std::to_string(width));
  }
}

std::string DenoiserConfig::Serialize() const {
  std::ostringstream os;
  os << "scales=" << scales << ";fusion=" << ToString(fusion) << ";downsample=" << ToString(downsample)
     << ";input_channels=" << input_channels << ";width=" << width << ";skip_order=" << ToString(skip_order);
  return os.str();
}

DenoiserConfig DenoiserConfig::Deserialize(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string item;
  while (std::getline(is, item, ';')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw InvalidArgument("malformed denoiser config entry '" + item + "'");
    kv[item.substr(0, eq)] = item.substr(eq + 1);
  }
  DenoiserConfig c;
  for (const auto& [k, v] : kv) {
    if (k == "scales") c.scales = std::stoi(v);
    else if (k == "fusion") c.fusion = ParseFusion(v);
    else if (k == "downsample") c.downsample = ParseDownsample(v);
    else if (k == "input_channels") c.input_channels = std::stoi(v);
    else if (k == "width") c.width = std::stoi(v);
    else if (k == "skip_order") c.skip_order = ParseSkipOrder(v);
    else throw InvalidArgument("unknown denoiser config key '" + k + "'");
  }
  c.Validate();
  return c;
}

template <typename T>
Var<T> ResidualBlock<T>::Forward(Tape<T>& tape, Var<T> x, Mode mode) const {
  Var<T> first = Relu(norm[0](tape, conv[0](tape, x), mode));
  Var<T> h = Relu(norm[1](tape, conv[1](tape, first), mode));
  h = Relu(norm[2](tape, conv[2](tape, h), mode));
  if (skip_order == SkipOrder::kNormBeforeSum) {
    h = Relu(norm[3](tape, conv[3](tape, h), mode));
    return Add(first, h);
  }
  return Relu(norm[3](tape, Add(conv[3](tape, h), first), mode));
}

template <typename T>
ResidualBlock<T> MakeResidualBlock(ParamStore<T>& store, const std::string& name, int in_channels, int width,
                                   SkipOrder skip_order, Rng& rng) {
  const int narrow = width / 4;
  const int ins[4] = {in_channels, width, narrow, narrow};
  const int outs[4] = {width, narrow, narrow, width};
  const int kernels[4] = {3, 1, 3, 1};
  ResidualBlock<T> block;
  block.skip_order = skip_order;
  for (int i = 0; i < 4; ++i) {
    const std::string layer = name + ".conv" + std::to_string(i);
    block.conv[i] = MakeConv(store, layer, ins[i], outs[i], kernels[i], 1, kernels[i] / 2, rng);
    block.norm[i] = MakeBatchNorm(store, name + ".bn" + std::to_string(i), outs[i]);
  }
  return block;
}

template <typename T>
Denoiser<T>::Denoiser(const DenoiserConfig& config, uint64_t seed) : config_(config), seed_(seed) {
  config_.Validate();
  Rng rng(seed);
  const int w = config_.width;
  const int scales = config_.scales;
  for (int s = 0; s < scales; ++s) {
    const std::string tag = "scale" + std::to_string(s);
    if (s > 0 && config_.downsample == Downsample::kStridedConv) {
      downsample_.push_back(MakeConv(store_, tag + ".down", w, w, 3, 2, 1, rng));
    }
    encoders_.push_back(
        MakeResidualBlock(store_, tag + ".encode", s == 0 ? config_.input_channels : w, w, config_.skip_order, rng));
  }
  // decoders_/upsample_ are indexed by the scale they produce.
  upsample_.resize(static_cast<size_t>(scales - 1));
  decoders_.resize(static_cast<size_t>(scales - 1));
  adapters_.resize(static_cast<size_t>(scales - 1));
  has_adapter_.assign(static_cast<size_t>(scales - 1), false);
  int channels = w;
  for (int s = scales - 2; s >= 0; --s) {
    const std::string tag = "scale" + std::to_string(s);
    upsample_[s] = MakeDeconv(store_, tag + ".up", channels, channels, rng);
    int fused = channels + w;
    if (config_.fusion == Fusion::kSum) {
      fused = channels;
      if (channels != w) {
        adapters_[s] = MakeConv(store_, tag + ".adapter", w, channels, 1, 1, 0, rng);
        has_adapter_[s] = true;
      }
    }
    decoders_[s] = MakeResidualBlock(store_, tag + ".decode", fused, 2 * w, config_.skip_order, rng);
    channels = 2 * w;
  }
  projection_ = MakeConv(store_, "projection", channels, config_.input_channels, 3, 1, 1, rng);
}

template <typename T>
Var<T> Denoiser<T>::ForwardAligned(Tape<T>& tape, Var<T> x, Mode mode) const {
  const int scales = config_.scales;
  std::vector<Var<T>> encoded;
  encoded.reserve(static_cast<size_t>(scales));
  Var<T> h = x;
  for (int s = 0; s < scales; ++s) {
    if (s > 0) {
      h = config_.downsample == Downsample::kStridedConv ? downsample_[s - 1](tape, h) : MaxPool2(h);
    }
    h = encoders_[s].Forward(tape, h, mode);
    encoded.push_back(h);
  }
  for (int s = scales - 2; s >= 0; --s) {
    Var<T> up = upsample_[s](tape, h);
    Var<T> skip = encoded[s];
    Var<T> fused;
    if (config_.fusion == Fusion::kConcat) {
      fused = ConcatChannels(skip, up);
    } else {
      if (has_adapter_[s]) skip = adapters_[s](tape, skip);
      fused = Add(skip, up);
    }
    h = decoders_[s].Forward(tape, fused, mode);
  }
  return Add(projection_(tape, Scale(h, T(kProjectionInputGain))), x);
}

template <typename T>
Var<T> Denoiser<T>::Forward(Tape<T>& tape, Var<T> x, Mode mode) const {
  const Shape& shape = x.shape();
  if (shape.size() != 4) throw ShapeError("denoiser input must be [N,C,H,W], got " + ShapeToString(shape));
  if (shape[1] != config_.input_channels) {
    throw ShapeError("denoiser expects " + std::to_string(config_.input_channels) + " channels, got " +
                     ShapeToString(shape));
  }
  const int64_t m = SizeMultiple();
  const int64_t h = shape[2], w = shape[3];
  if (h < m || w < m) {
    throw ShapeError("denoiser input " + ShapeToString(shape) + " smaller than " + std::to_string(m) +
                     " pixels per side");
  }
  const int64_t pad_h = (m - h % m) % m, pad_w = (m - w % m) % m;
  if (pad_h == 0 && pad_w == 0) return ForwardAligned(tape, x, mode);
  Var<T> padded = ReflectPad(x, static_cast<int>(pad_h), static_cast<int>(pad_w));
  return Crop(ForwardAligned(tape, padded, mode), 0, 0, h, w);
}

template <typename T>
Tensor<T> Denoiser<T>::Denoise(const Tensor<T>& noisy) const {
  Tape<T> tape(/*grad_enabled=*/false);
  return Forward(tape, tape.Constant(noisy), Mode::kEval).value();
}

template <typename T>
void Denoiser<T>::ZeroProjection() {
  projection_.weight->value.Fill(T(0));
  projection_.bias->value.Fill(T(0));
}

template class Denoiser<float>;
template class Denoiser<double>;
template struct ResidualBlock<float>;
template struct ResidualBlock<double>;

}  // namespace cdnz
