#include "w4p/image.hpp"

#include <openssl/evp.h>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "w4p/error.hpp"

namespace w4p {

namespace {

Image from_mat(const cv::Mat& bgr) {
  cv::Mat rgb;
  if (bgr.channels() == 1)
    cv::cvtColor(bgr, rgb, cv::COLOR_GRAY2RGB);
  else if (bgr.channels() == 4)
    cv::cvtColor(bgr, rgb, cv::COLOR_BGRA2RGB);
  else
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  cv::Mat f;
  rgb.convertTo(f, CV_32FC3, bgr.depth() == CV_16U ? 1.0 / 65535.0 : 1.0 / 255.0);
  Image out = make_image(f.rows, f.cols);
  for (int y = 0; y < f.rows; ++y) {
    const auto* row = f.ptr<float>(y);
    std::copy(row, row + static_cast<std::ptrdiff_t>(f.cols) * 3,
              out.pixels.begin() + static_cast<std::ptrdiff_t>(y) * f.cols * 3);
  }
  return out;
}

cv::Mat to_mat(const Image& image) {
  cv::Mat f(image.height, image.width, CV_32FC3, const_cast<float*>(image.pixels.data()));
  return f.clone();
}

}  // namespace

Image make_image(int height, int width, float fill) {
  require(height > 0 && width > 0, ErrorKind::InvalidArgument, "image: non-positive size");
  Image img;
  img.height = height;
  img.width = width;
  img.pixels.assign(static_cast<std::size_t>(height) * width * 3, fill);
  return img;
}

Image load_image(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) fail(ErrorKind::Io, "cannot decode image " + path.string());
  return from_mat(m);
}

Image decode_image(std::span<const std::uint8_t> bytes) {
  cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
  cv::Mat m = cv::imdecode(buf, cv::IMREAD_UNCHANGED);
  if (m.empty()) fail(ErrorKind::InvalidArgument, "undecodable image bytes");
  return from_mat(m);
}

std::vector<std::uint8_t> encode_png(const Image& image) {
  cv::Mat rgb8, bgr8;
  to_mat(image).convertTo(rgb8, CV_8UC3, 255.0);
  cv::cvtColor(rgb8, bgr8, cv::COLOR_RGB2BGR);
  std::vector<std::uint8_t> out;
  if (!cv::imencode(".png", bgr8, out)) fail(ErrorKind::Io, "png encoding failed");
  return out;
}

void save_image(const Image& image, const std::filesystem::path& path) {
  cv::Mat rgb8, bgr8;
  to_mat(image).convertTo(rgb8, CV_8UC3, 255.0);
  cv::cvtColor(rgb8, bgr8, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), bgr8)) fail(ErrorKind::Io, "cannot write image " + path.string());
}

Image resize_image(const Image& image, int height, int width) {
  require(!image.empty(), ErrorKind::InvalidArgument, "resize: empty image");
  if (image.height == height && image.width == width) return image;
  cv::Mat dst;
  cv::resize(to_mat(image), dst, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
  Image out = make_image(height, width);
  for (int y = 0; y < height; ++y) {
    const auto* row = dst.ptr<float>(y);
    std::copy(row, row + static_cast<std::ptrdiff_t>(width) * 3,
              out.pixels.begin() + static_cast<std::ptrdiff_t>(y) * width * 3);
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  std::string clean;
  for (char c : text)
    if (!std::isspace(static_cast<unsigned char>(c))) clean.push_back(c);
  require(clean.size() % 4 == 0, ErrorKind::InvalidArgument, "base64: length not a multiple of 4");
  std::vector<std::uint8_t> out(clean.size() / 4 * 3);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(clean.data()),
                                static_cast<int>(clean.size()));
  require(n >= 0, ErrorKind::InvalidArgument, "base64: invalid input");
  std::size_t pad = 0;
  if (!clean.empty() && clean.back() == '=') ++pad;
  if (clean.size() > 1 && clean[clean.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

}  // namespace w4p
