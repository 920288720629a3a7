#pragma once

#include <vector>

#include "patchcert/errors.hpp"
#include "patchcert/tensor.hpp"

namespace patchcert {

struct LabeledSet {
    std::vector<Tensor> images;
    std::vector<int> labels;

    std::size_t size() const { return images.size(); }
    bool empty() const { return images.empty(); }

    void push(Tensor image, int label) {
        images.push_back(std::move(image));
        labels.push_back(label);
    }

    void validate(int class_count) const {
        if (images.size() != labels.size()) throw DataError("image/label count mismatch");
        for (int l : labels)
            if (l < 0 || l >= class_count) throw DataError("label out of range");
    }
};

}  // namespace patchcert
