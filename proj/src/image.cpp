#include "sra/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "sra/errors.hpp"

namespace sra {

namespace {

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

// Next whitespace-separated header token, skipping '#' comments.
std::string pnm_token(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string rest;
      std::getline(in, rest);
      if (!tok.empty()) break;
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok += c;
  }
  return tok;
}

Index header_int(std::istream& in, const char* what) {
  const std::string t = pnm_token(in);
  try {
    std::size_t used = 0;
    const long long v = std::stoll(t, &used);
    if (used == t.size() && v > 0) return static_cast<Index>(v);
  } catch (const std::logic_error&) {
  }
  throw FormatError(std::string("bad ") + what + " in image header: '" + t + "'");
}

float bilinear(const float* plane, Index h, Index w, double y, double x) {
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const Index y0 = static_cast<Index>(std::floor(y)), x0 = static_cast<Index>(std::floor(x));
  const Index y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
  const double top = plane[y0 * w + x0] * (1 - fx) + plane[y0 * w + x1] * fx;
  const double bot = plane[y1 * w + x0] * (1 - fx) + plane[y1 * w + x1] * fx;
  return static_cast<float>(top * (1 - fy) + bot * fy);
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string magic = pnm_token(in);
  Index width = 0, height = 0, depth = 0, maxval = 0;
  bool has_alpha = false;
  if (magic == "P5" || magic == "P6") {
    width = header_int(in, "width");
    height = header_int(in, "height");
    maxval = header_int(in, "maxval");
    depth = magic == "P5" ? 1 : 3;
  } else if (magic == "P7") {
    std::string tupltype;
    for (;;) {
      const std::string key = pnm_token(in);
      if (key.empty()) throw TruncatedFileError("PAM header not terminated");
      if (key == "ENDHDR") break;
      if (key == "WIDTH") width = header_int(in, "width");
      else if (key == "HEIGHT") height = header_int(in, "height");
      else if (key == "DEPTH") depth = header_int(in, "depth");
      else if (key == "MAXVAL") maxval = header_int(in, "maxval");
      else if (key == "TUPLTYPE") tupltype = pnm_token(in);
      else throw FormatError("unknown PAM header key " + key);
    }
    has_alpha = tupltype.ends_with("_ALPHA");
    if (width == 0 || height == 0 || depth == 0 || maxval == 0) throw FormatError("incomplete PAM header");
  } else {
    throw BadMagicError("unsupported image format in " + path.string() + " (expected PGM, PPM or PAM)");
  }
  if (maxval > 255) throw FormatError("only 8-bit images are supported");
  const Index channels = has_alpha ? depth - 1 : depth;
  if (channels != 1 && channels != 3) throw FormatError("images must have 1 or 3 colour channels");

  std::vector<std::uint8_t> raw(static_cast<std::size_t>(width * height * depth));
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw TruncatedFileError("image data truncated in " + path.string());

  Image img;
  img.pixels = Tensor<float>({channels, height, width});
  if (has_alpha) img.alpha = Tensor<float>({height, width});
  const float scale = static_cast<float>(maxval);
  for (Index p = 0; p < height * width; ++p) {
    for (Index c = 0; c < channels; ++c) img.pixels[c * height * width + p] = raw[static_cast<std::size_t>(p * depth + c)] / scale;
    if (has_alpha) (*img.alpha)[p] = raw[static_cast<std::size_t>(p * depth + channels)] / scale;
  }
  return img;
}

void write_image(const std::filesystem::path& path, const Tensor<float>& pixels, const Tensor<float>* alpha) {
  if (pixels.rank() != 3 || (pixels.dim(0) != 1 && pixels.dim(0) != 3)) {
    throw ShapeError("image must be (1|3, H, W), got " + shape_string(pixels.shape()));
  }
  const Index c = pixels.dim(0), h = pixels.dim(1), w = pixels.dim(2);
  if (alpha && alpha->shape() != Shape{h, w}) throw ShapeError("alpha plane does not match image size");
  std::ostringstream header;
  const Index depth = c + (alpha ? 1 : 0);
  if (alpha) {
    header << "P7\nWIDTH " << w << "\nHEIGHT " << h << "\nDEPTH " << depth << "\nMAXVAL 255\nTUPLTYPE "
           << (c == 1 ? "GRAYSCALE_ALPHA" : "RGB_ALPHA") << "\nENDHDR\n";
  } else {
    header << (c == 1 ? "P5" : "P6") << "\n" << w << " " << h << "\n255\n";
  }
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(h * w * depth));
  for (Index p = 0; p < h * w; ++p) {
    for (Index k = 0; k < c; ++k) raw[static_cast<std::size_t>(p * depth + k)] = to_byte(pixels[k * h * w + p]);
    if (alpha) raw[static_cast<std::size_t>(p * depth + c)] = to_byte((*alpha)[p]);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const std::string hs = header.str();
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Tensor<float> resize(const Tensor<float>& image, Index height, Index width) {
  if (image.rank() != 2 && image.rank() != 3) throw ShapeError("resize expects (H,W) or (C,H,W)");
  if (height <= 0 || width <= 0) throw ShapeError("resize target must be positive");
  const bool planar = image.rank() == 3;
  const Index c = planar ? image.dim(0) : 1;
  const Index h = image.dim(planar ? 1 : 0), w = image.dim(planar ? 2 : 1);
  if (h == height && w == width) return image;
  Tensor<float> out(planar ? Shape{c, height, width} : Shape{height, width});
  const double sy = static_cast<double>(h) / static_cast<double>(height);
  const double sx = static_cast<double>(w) / static_cast<double>(width);
  const Index ny = std::max<Index>(1, static_cast<Index>(std::ceil(sy)));
  const Index nx = std::max<Index>(1, static_cast<Index>(std::ceil(sx)));
  for (Index k = 0; k < c; ++k) {
    const float* src = image.data() + k * h * w;
    float* dst = out.data() + k * height * width;
    for (Index i = 0; i < height; ++i) {
      for (Index j = 0; j < width; ++j) {
        double acc = 0;
        for (Index a = 0; a < ny; ++a) {
          for (Index b = 0; b < nx; ++b) {
            const double y = (static_cast<double>(i) + (static_cast<double>(a) + 0.5) / static_cast<double>(ny)) * sy - 0.5;
            const double x = (static_cast<double>(j) + (static_cast<double>(b) + 0.5) / static_cast<double>(nx)) * sx - 0.5;
            acc += bilinear(src, h, w, y, x);
          }
        }
        dst[i * width + j] = static_cast<float>(acc / static_cast<double>(ny * nx));
      }
    }
  }
  return out;
}

}  // namespace sra
