#pragma once

// Grayscale PNG reading/writing (8- and 16-bit) via OpenCV imgcodecs.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "gvs/core/tensor.hpp"

namespace gvs {

struct RawImage {
    Tensor<float> pixels;  // raw sample values, not rescaled
    double max_value = 255.0;  // full-scale value of the source bit depth
};

inline RawImage read_gray(const std::filesystem::path& path) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED | cv::IMREAD_ANYDEPTH);
    if (m.empty()) throw std::runtime_error("cannot read image: " + path.string());
    if (m.channels() != 1) {
        cv::Mat gray;
        cv::Mat channels[4];
        cv::split(m, channels);
        m = channels[0];  // layout-defined first channel; masks/images are expected gray
    }
    RawImage out;
    out.pixels = Tensor<float>({m.rows, m.cols});
    if (m.depth() == CV_8U) {
        out.max_value = 255.0;
        for (int r = 0; r < m.rows; ++r)
            for (int c = 0; c < m.cols; ++c)
                out.pixels[static_cast<std::size_t>(r) * m.cols + c] = m.at<std::uint8_t>(r, c);
    } else if (m.depth() == CV_16U) {
        out.max_value = 65535.0;
        for (int r = 0; r < m.rows; ++r)
            for (int c = 0; c < m.cols; ++c)
                out.pixels[static_cast<std::size_t>(r) * m.cols + c] = m.at<std::uint16_t>(r, c);
    } else {
        throw std::runtime_error("unsupported image depth (want 8- or 16-bit gray): " +
                                 path.string());
    }
    return out;
}

/// Writes values in [0,1] as a 16-bit grayscale PNG.
inline void write_gray16(const std::filesystem::path& path, const Tensor<float>& img) {
    cv::Mat m(static_cast<int>(img.dim(0)), static_cast<int>(img.dim(1)), CV_16UC1);
    for (int r = 0; r < m.rows; ++r)
        for (int c = 0; c < m.cols; ++c) {
            float v = img[static_cast<std::size_t>(r) * m.cols + c];
            v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
            m.at<std::uint16_t>(r, c) = static_cast<std::uint16_t>(std::lround(v * 65535.0f));
        }
    if (!cv::imwrite(path.string(), m))
        throw std::runtime_error("cannot write image: " + path.string());
}

/// Writes values in [0,1] as an 8-bit grayscale PNG.
inline void write_gray8(const std::filesystem::path& path, const Tensor<float>& img) {
    cv::Mat m(static_cast<int>(img.dim(0)), static_cast<int>(img.dim(1)), CV_8UC1);
    for (int r = 0; r < m.rows; ++r)
        for (int c = 0; c < m.cols; ++c) {
            float v = img[static_cast<std::size_t>(r) * m.cols + c];
            v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
            m.at<std::uint8_t>(r, c) = static_cast<std::uint8_t>(std::lround(v * 255.0f));
        }
    if (!cv::imwrite(path.string(), m))
        throw std::runtime_error("cannot write image: " + path.string());
}

/// 1 x k tile panel with 2px white separators, all tiles equal shape.
inline void write_panel8(const std::filesystem::path& path,
                         const std::vector<Tensor<float>>& tiles) {
    if (tiles.empty()) throw std::invalid_argument("write_panel8: no tiles");
    const auto H = tiles[0].dim(0), W = tiles[0].dim(1);
    const int sep = 2;
    const int total_w = static_cast<int>(W) * static_cast<int>(tiles.size()) +
                        sep * (static_cast<int>(tiles.size()) - 1);
    cv::Mat m(static_cast<int>(H), total_w, CV_8UC1, cv::Scalar(255));
    for (std::size_t t = 0; t < tiles.size(); ++t) {
        if (tiles[t].dim(0) != H || tiles[t].dim(1) != W)
            throw std::invalid_argument("write_panel8: mixed tile shapes");
        const int x0 = static_cast<int>(t) * (static_cast<int>(W) + sep);
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c) {
                float v = tiles[t][static_cast<std::size_t>(r) * W + c];
                v = v < 0.f ? 0.f : (v > 1.f ? 1.f : v);
                m.at<std::uint8_t>(r, x0 + c) = static_cast<std::uint8_t>(std::lround(v * 255.0f));
            }
    }
    if (!cv::imwrite(path.string(), m))
        throw std::runtime_error("cannot write panel: " + path.string());
}

}  // namespace gvs
