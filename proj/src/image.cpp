#include "rft/image.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "rft/error.hpp"

namespace rft {
namespace {

cv::Mat to_mat8(const Image& image) {
  const int type = image.channels == 1 ? CV_8UC1 : CV_8UC3;
  cv::Mat mat(image.height, image.width, type);
  for (int y = 0; y < image.height; ++y) {
    auto* row = mat.ptr<unsigned char>(y);
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < image.channels; ++c) {
        // OpenCV stores BGR.
        const int src_c = image.channels == 3 ? 2 - c : c;
        const float v = std::clamp(image.at(x, y, src_c), 0.0f, 1.0f);
        row[x * image.channels + c] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    }
  }
  return mat;
}

Image from_mat8(const cv::Mat& mat) {
  if (mat.empty()) throw IoError("empty image");
  cv::Mat bgr;
  if (mat.channels() == 1) {
    cv::Mat planes[] = {mat, mat, mat};
    cv::merge(planes, 3, bgr);
  } else if (mat.channels() == 4) {
    cv::Mat planes[4];
    cv::split(mat, planes);
    cv::merge(planes, 3, bgr);
  } else {
    bgr = mat;
  }
  cv::Mat bgr8;
  if (bgr.depth() == CV_16U) {
    bgr.convertTo(bgr8, CV_8U, 1.0 / 257.0);
  } else {
    bgr8 = bgr;
  }
  Image out(bgr8.cols, bgr8.rows, 3);
  for (int y = 0; y < out.height; ++y) {
    const auto* row = bgr8.ptr<unsigned char>(y);
    for (int x = 0; x < out.width; ++x) {
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = row[x * 3 + (2 - c)] / 255.0f;
    }
  }
  return out;
}

}  // namespace

Image load_image(const std::filesystem::path& path) {
  cv::Mat mat = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (mat.empty()) throw IoError("cannot read image: " + path.string());
  return from_mat8(mat);
}

void save_image(const Image& image, const std::filesystem::path& path) {
  if (image.channels != 1 && image.channels != 3) throw IoError("save_image: unsupported channel count");
  if (!cv::imwrite(path.string(), to_mat8(image))) throw IoError("cannot write image: " + path.string());
}

Image jpeg_recompress(const Image& image, int quality) {
  std::vector<unsigned char> buffer;
  const std::vector<int> params = {cv::IMWRITE_JPEG_QUALITY, std::clamp(quality, 1, 100)};
  if (!cv::imencode(".jpg", to_mat8(image), buffer, params)) throw IoError("jpeg encode failed");
  return from_mat8(cv::imdecode(buffer, cv::IMREAD_COLOR));
}

Image resize_bilinear(const Image& image, int new_width, int new_height) {
  if (new_width == image.width && new_height == image.height) return image;
  Image out(new_width, new_height, image.channels);
  const double sx = static_cast<double>(image.width) / new_width;
  const double sy = static_cast<double>(image.height) / new_height;
  for (int y = 0; y < new_height; ++y) {
    const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
    const int y0 = std::min(static_cast<int>(fy), image.height - 1);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < new_width; ++x) {
      const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
      const int x0 = std::min(static_cast<int>(fx), image.width - 1);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < image.channels; ++c) {
        const double top = (1 - wx) * image.at(x0, y0, c) + wx * image.at(x1, y0, c);
        const double bottom = (1 - wx) * image.at(x0, y1, c) + wx * image.at(x1, y1, c);
        out.at(x, y, c) = static_cast<float>((1 - wy) * top + wy * bottom);
      }
    }
  }
  return out;
}

Image limit_max_dim(const Image& image, int max_dim) {
  const int longest = std::max(image.width, image.height);
  if (longest <= max_dim) return image;
  const double s = static_cast<double>(max_dim) / longest;
  return resize_bilinear(image, std::max(1, static_cast<int>(std::lround(image.width * s))),
                         std::max(1, static_cast<int>(std::lround(image.height * s))));
}

float sample_bilinear(const Image& image, double x, double y, int c) {
  x = std::clamp(x, 0.0, static_cast<double>(image.width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(image.height - 1));
  const int x0 = static_cast<int>(x);
  const int y0 = static_cast<int>(y);
  const int x1 = std::min(x0 + 1, image.width - 1);
  const int y1 = std::min(y0 + 1, image.height - 1);
  const double wx = x - x0;
  const double wy = y - y0;
  const double top = (1 - wx) * image.at(x0, y0, c) + wx * image.at(x1, y0, c);
  const double bottom = (1 - wx) * image.at(x0, y1, c) + wx * image.at(x1, y1, c);
  return static_cast<float>((1 - wy) * top + wy * bottom);
}

Image clamp01(Image image) {
  for (auto& v : image.data) v = std::isfinite(v) ? std::clamp(v, 0.0f, 1.0f) : 0.0f;
  return image;
}

}  // namespace rft
