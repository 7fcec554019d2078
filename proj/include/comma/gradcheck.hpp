#pragma once

#include <functional>

#include "comma/tensor.hpp"

namespace comma {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::int64_t coords_checked = 0;

    bool ok(double tol) const { return max_rel_err < tol; }
};

// Central finite differences against the tape. `forward` must rebuild the
// graph from the current contents of `leaves` and return a scalar loss.
// Coordinates are sampled (without replacement would be overkill; duplicates
// are harmless) when a leaf is larger than max_coords_per_leaf.
template <class T>
GradCheckReport gradcheck(const std::function<Tensor<T>()>& forward,
                          std::vector<Tensor<T>> leaves, double step = 1e-6,
                          std::int64_t max_coords_per_leaf = 1 << 30, Rng* rng = nullptr) {
    auto loss = forward();
    check(loss.size() == 1, "gradcheck: forward() must return a scalar");
    for (auto& l : leaves) l.zero_grad();
    loss.backward();

    std::vector<std::vector<T>> analytic;
    for (auto& l : leaves) {
        check(l.requires_grad(), "gradcheck: leaf without requires_grad");
        check(static_cast<std::int64_t>(l.grad().size()) == l.size(),
              "gradcheck: missing gradient after backward");
        analytic.emplace_back(l.grad().begin(), l.grad().end());
    }

    GradCheckReport rep;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto& leaf = leaves[li];
        std::vector<std::int64_t> coords;
        if (leaf.size() <= max_coords_per_leaf) {
            coords.resize(static_cast<std::size_t>(leaf.size()));
            for (std::int64_t i = 0; i < leaf.size(); ++i) coords[static_cast<std::size_t>(i)] = i;
        } else {
            check(rng != nullptr, "gradcheck: rng required for sampled coordinates");
            for (std::int64_t i = 0; i < max_coords_per_leaf; ++i)
                coords.push_back(rng->uniform_int(leaf.size()));
        }
        auto data = leaf.mutable_data();
        for (auto c : coords) {
            T saved = data[static_cast<std::size_t>(c)];
            data[static_cast<std::size_t>(c)] = saved + static_cast<T>(step);
            double fp = static_cast<double>(forward().item());
            data[static_cast<std::size_t>(c)] = saved - static_cast<T>(step);
            double fm = static_cast<double>(forward().item());
            data[static_cast<std::size_t>(c)] = saved;
            double numeric = (fp - fm) / (2.0 * step);
            double a = static_cast<double>(analytic[li][static_cast<std::size_t>(c)]);
            double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
            rep.max_rel_err = std::max(rep.max_rel_err, std::abs(a - numeric) / denom);
            ++rep.coords_checked;
        }
    }
    return rep;
}

}  // namespace comma
