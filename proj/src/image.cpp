#include "dermgen/image.hpp"

#include "dermgen/error.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <fstream>

namespace dermgen {

cv::Mat decode_image(const std::vector<unsigned char>& bytes) {
    if (bytes.empty()) raise(Errc::decode_error, "empty image buffer");
    cv::Mat raw = cv::imdecode(bytes, cv::IMREAD_COLOR);
    if (raw.empty()) raise(Errc::decode_error, "image buffer could not be decoded");
    cv::Mat rgb;
    cv::cvtColor(raw, rgb, cv::COLOR_BGR2RGB);
    return rgb;
}

std::vector<unsigned char> encode_png(const cv::Mat& rgb) {
    CV_Assert(rgb.type() == CV_8UC3);
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    std::vector<unsigned char> bytes;
    if (!cv::imencode(".png", bgr, bytes)) raise(Errc::io_error, "png encoding failed");
    return bytes;
}

cv::Mat load_image(const std::string& path) {
    cv::Mat raw = cv::imread(path, cv::IMREAD_COLOR);
    if (raw.empty()) raise(Errc::unreadable_image, path);
    cv::Mat rgb;
    cv::cvtColor(raw, rgb, cv::COLOR_BGR2RGB);
    return rgb;
}

void save_png(const std::string& path, const cv::Mat& rgb) {
    write_file_bytes(path, encode_png(rgb));
}

std::vector<unsigned char> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(Errc::io_error, "cannot open file: " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (in.bad()) raise(Errc::io_error, "read failed: " + path);
    return bytes;
}

void write_file_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) raise(Errc::io_error, "cannot open file for writing: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) raise(Errc::io_error, "write failed: " + path);
}

} // namespace dermgen
