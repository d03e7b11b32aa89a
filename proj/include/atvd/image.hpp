#pragma once

#include <string>
#include <vector>

#include "atvd/common.hpp"
#include "atvd/tensor.hpp"

namespace atvd {

// RGB image in the model's [-1, 1] intensity convention, CHW layout.
struct Image {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> data; // channels * height * width

    size_t numel() const { return data.size(); }
    float& at(int c, int y, int x) {
        return data[(static_cast<size_t>(c) * height + y) * width + x];
    }
    float at(int c, int y, int x) const {
        return data[(static_cast<size_t>(c) * height + y) * width + x];
    }
};

Image make_image(int channels, int height, int width, float fill = 0.0f);

// 8-bit PNG I/O. Grayscale files are expanded to 3 channels on read; writes
// clip to [-1, 1] and quantize to 8-bit RGB.
Image read_png(const std::string& path);
void write_png(const std::string& path, const Image& img);

// batch slot <-> image conversion for the model path
template <typename T>
void image_into_tensor(const Image& img, TensorT<T>& t, int batch_index) {
    const Shape& s = t.shape();
    require(s.size() == 4 && s[1] == img.channels && s[2] == img.height && s[3] == img.width,
            cat("image_into_tensor: tensor ", shape_str(s), " vs image ", img.channels, "x",
                img.height, "x", img.width));
    require(batch_index >= 0 && batch_index < s[0],
            cat("image_into_tensor: batch index ", batch_index, " out of ", s[0]));
    T* dst = t.data() + static_cast<size_t>(batch_index) * img.numel();
    for (size_t i = 0; i < img.numel(); ++i) dst[i] = static_cast<T>(img.data[i]);
}

template <typename T>
Image image_from_tensor(const TensorT<T>& t, int batch_index) {
    const Shape& s = t.shape();
    require(s.size() == 4, cat("image_from_tensor: want NCHW, got ", shape_str(s)));
    require(batch_index >= 0 && batch_index < s[0],
            cat("image_from_tensor: batch index ", batch_index, " out of ", s[0]));
    Image img = make_image(s[1], s[2], s[3]);
    const T* src = t.data() + static_cast<size_t>(batch_index) * img.numel();
    for (size_t i = 0; i < img.numel(); ++i) img.data[i] = static_cast<float>(src[i]);
    return img;
}

} // namespace atvd
