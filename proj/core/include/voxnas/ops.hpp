#pragma once

#include <string>

#include "voxnas/errors.hpp"

namespace voxnas {

enum class PoolKind { kMax, kAvg };
enum class ActKind { kRelu, kLeakyRelu, kElu };

constexpr double kLeakySlope = 0.01;
constexpr double kEluAlpha = 1.0;

inline const char* to_string(PoolKind k) { return k == PoolKind::kMax ? "max" : "avg"; }

inline const char* to_string(ActKind k) {
    switch (k) {
        case ActKind::kRelu: return "relu";
        case ActKind::kLeakyRelu: return "leaky_relu";
        default: return "elu";
    }
}

inline PoolKind pool_kind_from_string(const std::string& s) {
    if (s == "max") return PoolKind::kMax;
    if (s == "avg") return PoolKind::kAvg;
    throw ArgumentError("unknown pool kind: " + s);
}

inline ActKind act_kind_from_string(const std::string& s) {
    if (s == "relu") return ActKind::kRelu;
    if (s == "leaky_relu") return ActKind::kLeakyRelu;
    if (s == "elu") return ActKind::kElu;
    throw ArgumentError("unknown activation kind: " + s);
}

}  // namespace voxnas
