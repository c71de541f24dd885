#include "convpred/tensor.hpp"

namespace convpred::nn {

std::string shape_to_string(const std::vector<int>& s) {
    std::string out = "(";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    out += ")";
    return out;
}

std::string Tensor::shape_str() const { return shape_to_string(shape); }

}  // namespace convpred::nn
