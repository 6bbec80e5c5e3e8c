#include "voxnas/adam.hpp"

#include <cmath>

#include "voxnas/errors.hpp"

namespace voxnas {

template <typename T>
void Adam<T>::step(size_t slot, Tensor5<T>& param, const Tensor5<T>& grad) {
    if (slot >= slots_.size()) throw ArgumentError("adam: slot " + std::to_string(slot) + " out of range");
    require_shape(grad.shape, param.shape, "adam");

    AdamSlot<T>& s = slots_[slot];
    const size_t n = param.data.size();
    if (s.m.empty()) {
        s.m.assign(n, T(0));
        s.v.assign(n, T(0));
    } else if (s.m.size() != n) {
        throw ArgumentError("adam: slot " + std::to_string(slot) + " sized for a different parameter");
    }

    s.t += 1;
    const T lr = static_cast<T>(cfg_.lr);
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T eps = static_cast<T>(cfg_.eps);
    const T corr1 = static_cast<T>(1.0 - std::pow(cfg_.beta1, static_cast<double>(s.t)));
    const T corr2 = static_cast<T>(1.0 - std::pow(cfg_.beta2, static_cast<double>(s.t)));
    const T decay = static_cast<T>(1.0 - cfg_.lr * cfg_.weight_decay);

    for (size_t i = 0; i < n; ++i) {
        const T g = grad.data[i];
        param.data[i] *= decay;
        s.m[i] = b1 * s.m[i] + (T(1) - b1) * g;
        s.v[i] = b2 * s.v[i] + (T(1) - b2) * g * g;
        const T mhat = s.m[i] / corr1;
        const T vhat = s.v[i] / corr2;
        param.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace voxnas
