#pragma once

#include <string>

#include "hybridseg/tensor.hpp"

namespace hseg::detail {

inline Node& cnode(const Tensor& t, const char* op) {
    if (!t.defined()) throw UsageError(std::string(op) + ": undefined tensor");
    return *t.node();
}

}  // namespace hseg::detail
