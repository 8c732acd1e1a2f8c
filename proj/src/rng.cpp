#include "vqamoe/rng.hpp"

#include <algorithm>
#include <stdexcept>

namespace vqamoe {

std::vector<std::size_t> Rng::sample_indices(std::size_t n, std::size_t count) {
    if (count > n) {
        throw std::invalid_argument("sample_indices: count " + std::to_string(count) +
                                    " exceeds population " + std::to_string(n));
    }
    // Floyd's algorithm keeps the draw count at `count` regardless of n.
    std::vector<std::size_t> picked;
    picked.reserve(count);
    for (std::size_t j = n - count; j < n; ++j) {
        std::size_t t = static_cast<std::size_t>(randint(0, static_cast<std::int64_t>(j)));
        if (std::find(picked.begin(), picked.end(), t) != picked.end()) {
            picked.push_back(j);
        } else {
            picked.push_back(t);
        }
    }
    std::sort(picked.begin(), picked.end());
    return picked;
}

} // namespace vqamoe
