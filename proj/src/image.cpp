#include "ugp/image.hpp"

#include "ugp/errors.hpp"

namespace ugp {

Image::Image(torch::Tensor chw) {
  if (chw.dim() != 3) {
    throw ShapeError("image tensor must be C×H×W, got rank " + std::to_string(chw.dim()));
  }
  if (chw.size(0) <= 0 || chw.size(1) <= 0 || chw.size(2) <= 0) {
    throw ShapeError("image dimensions must be positive");
  }
  if (!chw.is_floating_point()) {
    chw = chw.to(torch::kFloat32);
  }
  if (!torch::isfinite(chw).all().item<bool>()) {
    throw NumericError("image contains non-finite values");
  }
  data_ = chw.contiguous();
}

Image Image::zeros(int64_t channels, int64_t height, int64_t width) {
  return Image(torch::zeros({channels, height, width}));
}

Image Image::constant(int64_t channels, int64_t height, int64_t width, double value) {
  return Image(torch::full({channels, height, width}, value));
}

Image Image::clipped() const { return Image(data_.clamp(0.0, 1.0)); }

torch::Tensor stack_images(const std::vector<Image>& images) {
  if (images.empty()) {
    throw ShapeError("cannot stack an empty image list");
  }
  std::vector<torch::Tensor> parts;
  parts.reserve(images.size());
  for (const auto& img : images) {
    if (!img.same_shape(images.front())) {
      throw ShapeError("images in a batch must share one shape");
    }
    parts.push_back(img.tensor().to(torch::kFloat32));
  }
  return torch::stack(parts).contiguous();
}

std::vector<Image> unstack_images(const torch::Tensor& batch) {
  if (batch.dim() != 4) {
    throw ShapeError("expected an N×C×H×W batch");
  }
  std::vector<Image> out;
  out.reserve(static_cast<size_t>(batch.size(0)));
  for (int64_t i = 0; i < batch.size(0); ++i) {
    out.emplace_back(batch[i].detach().to(torch::kFloat32).clamp(0.0, 1.0).contiguous());
  }
  return out;
}

}  // namespace ugp
