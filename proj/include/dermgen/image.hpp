#pragma once

#include <opencv2/core.hpp>

#include <string>
#include <vector>

namespace dermgen {

// Images are held as 8-bit RGB cv::Mat throughout the pipeline; conversion
// to and from OpenCV's BGR convention happens only at the codec boundary.

/// Decode an encoded image buffer to CV_8UC3 RGB. Throws DecodeError.
cv::Mat decode_image(const std::vector<unsigned char>& bytes);

/// Encode an RGB image as PNG bytes.
std::vector<unsigned char> encode_png(const cv::Mat& rgb);

/// Read an image file as CV_8UC3 RGB. Throws UnreadableImage.
cv::Mat load_image(const std::string& path);

/// Write an RGB image as PNG. Throws IoError.
void save_png(const std::string& path, const cv::Mat& rgb);

std::vector<unsigned char> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<unsigned char>& bytes);

} // namespace dermgen
