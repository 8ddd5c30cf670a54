#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

namespace advdef {

// A batch of float32 images with every element in [0, 1].
//
// Storage is (batch, channels, height, width), the layout the convolution
// layers consume. Construction validates rank, dtype and range, so any
// ImageTensor that exists satisfies the range invariant.
class ImageTensor {
public:
    ImageTensor() = default;

    // Throws ContractError unless `data` is a 4-D float tensor within [0, 1].
    explicit ImageTensor(torch::Tensor data);

    // Clamps into [0, 1] first; used at the end of attacks and defenses.
    static ImageTensor clamped(const torch::Tensor& data);

    const torch::Tensor& tensor() const { return data_; }
    bool defined() const { return data_.defined(); }

    int64_t batch() const { return data_.size(0); }
    int64_t channels() const { return data_.size(1); }
    int64_t height() const { return data_.size(2); }
    int64_t width() const { return data_.size(3); }

    // Shape of a single image: {channels, height, width}.
    std::vector<int64_t> image_shape() const;
    bool same_shape(const ImageTensor& other) const;

    ImageTensor slice(int64_t begin, int64_t end) const;
    ImageTensor select(const torch::Tensor& indices) const;
    ImageTensor at(int64_t index) const { return slice(index, index + 1); }

    static ImageTensor concat(const std::vector<ImageTensor>& parts);

private:
    torch::Tensor data_;
};

// Throws ContractError with `what` when shapes differ.
void require_same_shape(const ImageTensor& a, const ImageTensor& b, const std::string& what);

}  // namespace advdef
