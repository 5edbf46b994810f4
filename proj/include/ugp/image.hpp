#pragma once

#include <torch/torch.h>

#include <cstdint>

namespace ugp {

/// C×H×W real-valued image. Values live in [0,1] whenever the image crosses a
/// module boundary; intermediate (pre-clip) images may leave that range.
class Image {
 public:
  Image() = default;
  /// Takes a 3-D floating tensor. Throws ShapeError on wrong rank or an empty
  /// dimension and NumericError on non-finite values.
  explicit Image(torch::Tensor chw);

  static Image zeros(int64_t channels, int64_t height, int64_t width);
  static Image constant(int64_t channels, int64_t height, int64_t width, double value);

  const torch::Tensor& tensor() const { return data_; }
  int64_t channels() const { return data_.size(0); }
  int64_t height() const { return data_.size(1); }
  int64_t width() const { return data_.size(2); }
  bool defined() const { return data_.defined(); }

  Image clipped() const;
  bool same_shape(const Image& other) const { return data_.sizes() == other.data_.sizes(); }

 private:
  torch::Tensor data_;
};

/// Stacks images into an N×C×H×W batch (float32, contiguous).
torch::Tensor stack_images(const std::vector<Image>& images);

/// Splits an N×C×H×W batch into images; values are clipped to [0,1].
std::vector<Image> unstack_images(const torch::Tensor& batch);

}  // namespace ugp
