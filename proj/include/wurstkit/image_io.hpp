#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <string_view>

namespace wurstkit {

// [3, H, W] float in [0,1] -> 8-bit RGB rows, rounding to nearest.
std::string to_rgb8(const torch::Tensor& image);
torch::Tensor from_rgb8(std::string_view pixels, int64_t height, int64_t width);

std::string encode_png(const torch::Tensor& image);
torch::Tensor decode_png(std::string_view bytes);
torch::Tensor decode_jpeg(std::string_view bytes);

// PNG or JPEG by content sniffing; returns [3, H, W] in [0,1].
torch::Tensor read_image(const std::filesystem::path& path);
// Atomic PNG write.
void write_png(const std::filesystem::path& path, const torch::Tensor& image);

}  // namespace wurstkit
