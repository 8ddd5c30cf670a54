#include "advdef/core/image_tensor.hpp"

#include "advdef/core/errors.hpp"

#include <sstream>

namespace advdef {

namespace {

std::string shape_string(const torch::Tensor& t) {
    std::ostringstream os;
    os << t.sizes();
    return os.str();
}

}  // namespace

ImageTensor::ImageTensor(torch::Tensor data) : data_(std::move(data)) {
    if (!data_.defined()) {
        throw ContractError("ImageTensor: undefined tensor");
    }
    if (data_.dim() != 4) {
        throw ContractError("ImageTensor: expected (batch, channels, height, width), got " + shape_string(data_));
    }
    if (data_.scalar_type() != torch::kFloat32) {
        throw ContractError("ImageTensor: expected float32 data");
    }
    if (data_.requires_grad()) {
        data_ = data_.detach();
    }
    if (data_.numel() > 0) {
        const auto lo = data_.min().item<float>();
        const auto hi = data_.max().item<float>();
        if (!(lo >= 0.0f && hi <= 1.0f)) {
            std::ostringstream os;
            os << "ImageTensor: values outside [0,1] (min " << lo << ", max " << hi << ")";
            throw ContractError(os.str());
        }
    }
}

ImageTensor ImageTensor::clamped(const torch::Tensor& data) {
    return ImageTensor(data.detach().to(torch::kFloat32).clamp(0.0, 1.0).contiguous());
}

std::vector<int64_t> ImageTensor::image_shape() const {
    return {channels(), height(), width()};
}

bool ImageTensor::same_shape(const ImageTensor& other) const {
    return data_.sizes() == other.data_.sizes();
}

ImageTensor ImageTensor::slice(int64_t begin, int64_t end) const {
    ImageTensor out;
    out.data_ = data_.slice(0, begin, end);
    return out;
}

ImageTensor ImageTensor::select(const torch::Tensor& indices) const {
    ImageTensor out;
    out.data_ = data_.index_select(0, indices.to(torch::kLong));
    return out;
}

ImageTensor ImageTensor::concat(const std::vector<ImageTensor>& parts) {
    if (parts.empty()) {
        throw ContractError("ImageTensor::concat: nothing to concatenate");
    }
    std::vector<torch::Tensor> raw;
    raw.reserve(parts.size());
    for (const auto& p : parts) {
        raw.push_back(p.tensor());
    }
    ImageTensor out;
    out.data_ = torch::cat(raw, 0);
    return out;
}

void require_same_shape(const ImageTensor& a, const ImageTensor& b, const std::string& what) {
    if (!a.same_shape(b)) {
        throw ContractError(what + ": shape mismatch " + shape_string(a.tensor()) + " vs " +
                            shape_string(b.tensor()));
    }
}

}  // namespace advdef
