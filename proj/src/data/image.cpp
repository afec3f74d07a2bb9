#include "ecvd/data/image.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace ecvd::data {

ImageTensor read_image(const std::filesystem::path& path) {
  cv::Mat raw;
  try {
    raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED | cv::IMREAD_ANYDEPTH);
  } catch (const cv::Exception& e) {
    throw Error("cannot decode image " + path.string() + ": " + e.what());
  }
  if (raw.empty()) throw Error("cannot read image " + path.string());

  double scale = 1.0;
  switch (raw.depth()) {
    case CV_8U: scale = 1.0 / 255.0; break;
    case CV_16U: scale = 1.0 / 65535.0; break;
    case CV_32F: break;
    default: throw Error("unsupported pixel depth in " + path.string());
  }
  cv::Mat f;
  raw.convertTo(f, CV_32F, scale);

  const int channels = f.channels();
  if (channels != 1 && channels != 2 && channels != 3 && channels != 4) {
    throw Error("unsupported channel count " + std::to_string(channels) + " in " + path.string());
  }
  ImageTensor img({1, 3, f.rows, f.cols});
  for (int y = 0; y < f.rows; ++y) {
    const float* row = f.ptr<float>(y);
    for (int x = 0; x < f.cols; ++x) {
      const float* px = row + x * channels;
      if (channels <= 2) {
        img(0, 0, y, x) = img(0, 1, y, x) = img(0, 2, y, x) = px[0];
      } else {
        img(0, 0, y, x) = px[2];  // OpenCV stores BGR
        img(0, 1, y, x) = px[1];
        img(0, 2, y, x) = px[0];
      }
    }
  }
  return img;
}

void write_png(const std::filesystem::path& path, const ImageTensor& rgb) {
  const Shape& s = rgb.shape();
  if (s.n != 1 || s.c != 3) throw Error("write_png: expected 1x3xHxW, got " + s.str());
  cv::Mat out(int(s.h), int(s.w), CV_8UC3);
  for (Index y = 0; y < s.h; ++y) {
    auto* row = out.ptr<unsigned char>(int(y));
    for (Index x = 0; x < s.w; ++x) {
      for (Index c = 0; c < 3; ++c) {
        const float v = std::clamp(rgb(0, c, y, x), 0.0f, 1.0f);
        row[x * 3 + (2 - c)] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), out)) throw Error("cannot write PNG " + path.string());
}

ImageTensor preprocess(const ImageTensor& rgb, Index target, const Normalization& norm) {
  return normalize(resize_bilinear(rgb, target, target), norm);
}

ImageTensor load_and_preprocess(const std::filesystem::path& path, Index target, const Normalization& norm) {
  return preprocess(read_image(path), target, norm);
}

}  // namespace ecvd::data
