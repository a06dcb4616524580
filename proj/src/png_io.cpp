#include "singrav/png_io.hpp"

#include <csetjmp>
#include <cstring>
#include <fstream>

#include <png.h>

#include "singrav/error.hpp"

namespace singrav {

namespace {

struct WriteBuffer {
  std::string data;
};

void write_to_buffer(png_structp png, png_bytep bytes, png_size_t size) {
  auto* buf = static_cast<WriteBuffer*>(png_get_io_ptr(png));
  buf->data.append(reinterpret_cast<const char*>(bytes), size);
}

void flush_noop(png_structp) {}

struct ReadBuffer {
  const std::string* data;
  size_t offset = 0;
};

void read_from_buffer(png_structp png, png_bytep out, png_size_t size) {
  auto* buf = static_cast<ReadBuffer*>(png_get_io_ptr(png));
  if (buf->offset + size > buf->data->size()) png_error(png, "truncated PNG data");
  std::memcpy(out, buf->data->data() + buf->offset, size);
  buf->offset += size;
}

void error_fn(png_structp png, png_const_charp msg) {
  auto* message = static_cast<std::string*>(png_get_error_ptr(png));
  if (message) *message = msg;
  png_longjmp(png, 1);
}

void warning_fn(png_structp, png_const_charp) {}

// Rows are passed as contiguous bytes, big-endian for 16-bit samples.
std::string encode(int64_t width, int64_t height, int color_type, int bit_depth,
                   const std::vector<uint8_t>& pixels) {
  std::string message;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, error_fn, warning_fn);
  require(png != nullptr, Errc::kIo, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  WriteBuffer buffer;
  const int channels = color_type == PNG_COLOR_TYPE_RGB ? 3 : 1;
  const size_t row_bytes = static_cast<size_t>(width) * channels * (bit_depth / 8);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(Errc::kIo, "PNG encode failed: " + message);
  }
  png_set_write_fn(png, &buffer, write_to_buffer, flush_noop);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
               bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int64_t r = 0; r < height; ++r) {
    png_write_row(png, const_cast<png_bytep>(pixels.data() + r * row_bytes));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return std::move(buffer.data);
}

struct Decoded {
  int64_t width = 0;
  int64_t height = 0;
  int channels = 0;
  int bit_depth = 0;
  std::vector<uint8_t> pixels;
};

Decoded decode(const std::string& bytes, bool want_rgb8) {
  require(bytes.size() >= 8 && png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) == 0,
          Errc::kFormat, "not a PNG file");
  std::string message;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, error_fn, warning_fn);
  require(png != nullptr, Errc::kIo, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  ReadBuffer buffer{&bytes, 0};
  Decoded out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(Errc::kFormat, "PNG decode failed: " + message);
  }
  png_set_read_fn(png, &buffer, read_from_buffer);
  png_read_info(png, info);
  const auto color_type = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  if (want_rgb8) {
    if (depth == 16) png_set_strip_16(png);
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA) {
      png_set_gray_to_rgb(png);
    }
    if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  } else {
    if (color_type != PNG_COLOR_TYPE_GRAY || depth != 16) {
      png_destroy_read_struct(&png, &info, nullptr);
      fail(Errc::kFormat, "depth PNG must be 16-bit grayscale");
    }
  }
  png_read_update_info(png, info);
  out.width = png_get_image_width(png, info);
  out.height = png_get_image_height(png, info);
  out.channels = png_get_channels(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  const size_t row_bytes = png_get_rowbytes(png, info);
  out.pixels.resize(row_bytes * out.height);
  std::vector<png_bytep> rows(out.height);
  for (int64_t r = 0; r < out.height; ++r) rows[r] = out.pixels.data() + r * row_bytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace

torch::Tensor quantize_rgb8(const torch::Tensor& image) {
  auto codes = (image.detach().to(torch::kFloat32).clamp(0.0, 1.0) * 255.0).round();
  return codes / 255.0f;
}

std::string encode_png_rgb8(const torch::Tensor& image) {
  require(image.dim() == 3 && image.size(0) == 3, Errc::kInvalidArgument,
          "encode_png_rgb8 expects a [3, H, W] image");
  auto codes = (image.detach().to(torch::kFloat32).clamp(0.0, 1.0) * 255.0)
                   .round()
                   .to(torch::kUInt8)
                   .permute({1, 2, 0})
                   .contiguous();
  std::vector<uint8_t> pixels(codes.data_ptr<uint8_t>(), codes.data_ptr<uint8_t>() + codes.numel());
  return encode(image.size(2), image.size(1), PNG_COLOR_TYPE_RGB, 8, pixels);
}

void write_png_rgb8(const std::filesystem::path& path, const torch::Tensor& image) {
  write_file_atomic(path, encode_png_rgb8(image));
}

torch::Tensor decode_png_rgb(const std::string& bytes) {
  auto d = decode(bytes, true);
  require(d.channels == 3 && d.bit_depth == 8, Errc::kFormat, "unexpected PNG layout");
  auto t = torch::from_blob(d.pixels.data(), {d.height, d.width, 3}, torch::kUInt8).clone();
  return t.permute({2, 0, 1}).to(torch::kFloat32).div(255.0f).contiguous();
}

torch::Tensor read_png_rgb(const std::filesystem::path& path) { return decode_png_rgb(read_file(path)); }

std::string encode_png_gray16(const torch::Tensor& codes) {
  require(codes.dim() == 2, Errc::kInvalidArgument, "encode_png_gray16 expects [H, W]");
  auto c = codes.to(torch::kInt32).contiguous();
  require(c.min().item<int32_t>() >= 0 && c.max().item<int32_t>() <= 65535, Errc::kInvalidArgument,
          "16-bit codes out of range");
  const int32_t* src = c.data_ptr<int32_t>();
  std::vector<uint8_t> pixels(static_cast<size_t>(c.numel()) * 2);
  for (int64_t i = 0; i < c.numel(); ++i) {
    pixels[2 * i] = static_cast<uint8_t>(src[i] >> 8);
    pixels[2 * i + 1] = static_cast<uint8_t>(src[i] & 0xff);
  }
  return encode(codes.size(1), codes.size(0), PNG_COLOR_TYPE_GRAY, 16, pixels);
}

void write_png_gray16(const std::filesystem::path& path, const torch::Tensor& codes) {
  write_file_atomic(path, encode_png_gray16(codes));
}

torch::Tensor decode_png_gray16(const std::string& bytes) {
  auto d = decode(bytes, false);
  auto out = torch::empty({d.height, d.width}, torch::kInt32);
  int32_t* dst = out.data_ptr<int32_t>();
  for (int64_t i = 0; i < d.height * d.width; ++i) {
    dst[i] = (static_cast<int32_t>(d.pixels[2 * i]) << 8) | d.pixels[2 * i + 1];
  }
  return out;
}

torch::Tensor read_png_gray16(const std::filesystem::path& path) {
  return decode_png_gray16(read_file(path));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), Errc::kIo, "cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    require(static_cast<bool>(out), Errc::kIo, "cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), Errc::kIo, "write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace singrav
