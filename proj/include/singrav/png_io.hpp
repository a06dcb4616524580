#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace singrav {

/// 8-bit RGB PNG from a [3, H, W] float image in [0, 1] (values are clamped
/// and rounded to the nearest code).
std::string encode_png_rgb8(const torch::Tensor& image);
void write_png_rgb8(const std::filesystem::path& path, const torch::Tensor& image);

/// [3, H, W] float image in [0, 1]; gray and alpha inputs are expanded/dropped.
torch::Tensor decode_png_rgb(const std::string& bytes);
torch::Tensor read_png_rgb(const std::filesystem::path& path);

/// 16-bit grayscale PNG from raw codes [H, W] (int32 tensor in [0, 65535]).
std::string encode_png_gray16(const torch::Tensor& codes);
void write_png_gray16(const std::filesystem::path& path, const torch::Tensor& codes);

/// Raw 16-bit codes as an int32 [H, W] tensor.
torch::Tensor decode_png_gray16(const std::string& bytes);
torch::Tensor read_png_gray16(const std::filesystem::path& path);

/// Quantizes a [3, H, W] image to 8-bit codes and back, as a PNG round trip does.
torch::Tensor quantize_rgb8(const torch::Tensor& image);

std::string read_file(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);

}  // namespace singrav
