#include "visage/image.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>

#include <jpeglib.h>
#include <png.h>

#include "visage/errors.hpp"

namespace visage {
namespace {

struct JpegErrorMgr {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

void jpeg_silence(j_common_ptr, int) {}

// C-style body so that no C++ object with a destructor lives in the
// setjmp frame; the caller owns `out` and throws on failure.
bool decode_jpeg_impl(std::FILE* f, Image& out, std::string& err) {
  jpeg_decompress_struct cinfo;
  JpegErrorMgr jerr;
  cinfo.err = jpeg_std_error(&jerr.pub);
  jerr.pub.error_exit = jpeg_error_exit;
  jerr.pub.emit_message = jpeg_silence;
  if (setjmp(jerr.jump)) {
    jpeg_destroy_decompress(&cinfo);
    err = jerr.message;
    return false;
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f);
  jpeg_read_header(&cinfo, TRUE);
  jpeg_start_decompress(&cinfo);
  out.width = static_cast<int>(cinfo.output_width);
  out.height = static_cast<int>(cinfo.output_height);
  out.channels = cinfo.output_components;
  out.pixels.resize(static_cast<std::size_t>(out.width) * out.height * out.channels);
  const std::size_t stride = static_cast<std::size_t>(out.width) * out.channels;
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.pixels.data() + cinfo.output_scanline * stride;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return true;
}

void png_error_fn(png_structp png, png_const_charp msg) {
  *static_cast<std::string*>(png_get_error_ptr(png)) = msg;
  png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

bool decode_png_impl(std::FILE* f, Image& out, std::string& err) {
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  if (png == nullptr) {
    err = "png_create_read_struct failed";
    return false;
  }
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    err = "png_create_info_struct failed";
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    if (err.empty()) err = "corrupt PNG stream";
    return false;
  }
  png_init_io(png, f);
  png_read_info(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  const int color_type = png_get_color_type(png, info);
  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  const int passes = png_set_interlace_handling(png);
  png_read_update_info(png, info);
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = png_get_channels(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  out.pixels.resize(stride * out.height);
  for (int pass = 0; pass < passes; ++pass)
    for (int y = 0; y < out.height; ++y)
      png_read_row(png, out.pixels.data() + static_cast<std::size_t>(y) * stride, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

}  // namespace

Image decode_image(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (f == nullptr) throw ImageDecodeError(path, "cannot open file");
  unsigned char magic[8] = {};
  const std::size_t got = std::fread(magic, 1, sizeof magic, f);
  std::rewind(f);

  Image img;
  std::string err;
  bool ok = false;
  if (got >= 3 && magic[0] == 0xFF && magic[1] == 0xD8 && magic[2] == 0xFF) {
    ok = decode_jpeg_impl(f, img, err);
  } else if (got >= 8 && png_sig_cmp(magic, 0, 8) == 0) {
    ok = decode_png_impl(f, img, err);
  } else {
    err = "not a JPEG or PNG file";
  }
  std::fclose(f);
  if (!ok) throw ImageDecodeError(path, err);
  return img;
}

void encode_png(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3)
    throw IoError("png encode supports 1 or 3 channels, got " + std::to_string(img.channels));
  if (img.width <= 0 || img.height <= 0 ||
      img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * img.channels)
    throw IoError("png encode: pixel buffer does not match " + std::to_string(img.width) + "x" +
                  std::to_string(img.height) + "x" + std::to_string(img.channels));
  png_image pi = {};
  pi.version = PNG_IMAGE_VERSION;
  pi.width = static_cast<png_uint_32>(img.width);
  pi.height = static_cast<png_uint_32>(img.height);
  pi.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (png_image_write_to_file(&pi, path.c_str(), 0, img.pixels.data(), 0, nullptr) == 0)
    throw IoError("cannot write PNG '" + path + "': " + pi.message);
}

Tensor image_to_chw(const Image& img) {
  if (img.width <= 0 || img.height <= 0 || img.channels < 1 || img.channels > 4)
    throw DomainError("image_to_chw: invalid image " + std::to_string(img.width) + "x" +
                      std::to_string(img.height) + "x" + std::to_string(img.channels));
  const int h = img.height, w = img.width, c = img.channels;
  Tensor t({3, h, w});
  for (int k = 0; k < 3; ++k) {
    const int src = c >= 3 ? k : 0;  // gray (and gray+alpha) replicate
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        t[(static_cast<std::size_t>(k) * h + y) * w + x] =
            static_cast<float>(img.pixels[(static_cast<std::size_t>(y) * w + x) * c + src]);
  }
  return t;
}

Tensor resize_bilinear(const Tensor& chw, int out_h, int out_w) {
  if (chw.rank() != 3)
    throw ShapeError("resize_bilinear expects [c x h x w], got " + shape_str(chw.shape()));
  if (out_h < 1 || out_w < 1)
    throw DomainError("resize_bilinear: non-positive output size " + std::to_string(out_h) + "x" +
                      std::to_string(out_w));
  const int c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
  if (out_h == h && out_w == w) return chw;
  Tensor out({c, out_h, out_w});
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (int ch = 0; ch < c; ++ch) {
    const float* plane = chw.data() + static_cast<std::size_t>(ch) * h * w;
    for (int oy = 0; oy < out_h; ++oy) {
      const double fy = (oy + 0.5) * sy - 0.5;
      const int y0 = static_cast<int>(std::floor(fy));
      const double wy = fy - y0;
      const int ya = std::clamp(y0, 0, h - 1);
      const int yb = std::clamp(y0 + 1, 0, h - 1);
      for (int ox = 0; ox < out_w; ++ox) {
        const double fx = (ox + 0.5) * sx - 0.5;
        const int x0 = static_cast<int>(std::floor(fx));
        const double wx = fx - x0;
        const int xa = std::clamp(x0, 0, w - 1);
        const int xb = std::clamp(x0 + 1, 0, w - 1);
        const double top = (1.0 - wx) * plane[static_cast<std::size_t>(ya) * w + xa] +
                           wx * plane[static_cast<std::size_t>(ya) * w + xb];
        const double bot = (1.0 - wx) * plane[static_cast<std::size_t>(yb) * w + xa] +
                           wx * plane[static_cast<std::size_t>(yb) * w + xb];
        out[(static_cast<std::size_t>(ch) * out_h + oy) * out_w + ox] =
            static_cast<float>((1.0 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

}  // namespace visage
