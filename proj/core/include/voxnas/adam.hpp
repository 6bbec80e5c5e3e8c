#pragma once

// Adam with decoupled weight decay. Each parameter slot owns its moments and
// step counter, so stepping only the parameters that were active in a pass
// leaves every other slot byte-identical (moments included).

#include <cstdint>
#include <vector>

#include "voxnas/tensor.hpp"

namespace voxnas {

struct AdamConfig {
    double lr = 1e-3;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
struct AdamSlot {
    std::vector<T> m, v;
    int64_t t = 0;
};

template <typename T>
class Adam {
  public:
    Adam() = default;
    explicit Adam(AdamConfig cfg, size_t slots = 0) : cfg_(cfg), slots_(slots) {}

    const AdamConfig& config() const { return cfg_; }
    void resize(size_t slots) { slots_.resize(slots); }
    size_t size() const { return slots_.size(); }

    // One update of a single parameter: decoupled decay, then bias-corrected
    // moment step. Moments are allocated on first use.
    void step(size_t slot, Tensor5<T>& param, const Tensor5<T>& grad);

    std::vector<AdamSlot<T>>& slots() { return slots_; }
    const std::vector<AdamSlot<T>>& slots() const { return slots_; }

  private:
    AdamConfig cfg_;
    std::vector<AdamSlot<T>> slots_;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace voxnas
