#include "dflshield/model/fedavg.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace dflshield {

ModelParams aggregate_fedavg(const ModelParams& own, std::span<const ModelParams> received) {
    if (received.empty()) return own;
    for (const auto& r : received) {
        if (!own.same_shape(r)) throw ShapeError("aggregate_fedavg: architecture mismatch");
    }
    ModelParams out(own.architecture());
    auto dst = out.values();
    const std::size_t k = received.size() + 1;
    std::vector<double> column(k);
    for (std::size_t i = 0; i < dst.size(); ++i) {
        column[0] = own.values()[i];
        for (std::size_t j = 0; j < received.size(); ++j) column[j + 1] = received[j].values()[i];
        std::sort(column.begin(), column.end());
        if (column.front() == column.back()) {
            dst[i] = column.front();
            continue;
        }
        // Neumaier-compensated sum over the sorted column.
        double sum = 0.0;
        double comp = 0.0;
        for (double v : column) {
            double t = sum + v;
            if (std::abs(sum) >= std::abs(v)) {
                comp += (sum - t) + v;
            } else {
                comp += (v - t) + sum;
            }
            sum = t;
        }
        dst[i] = (sum + comp) / static_cast<double>(k);
    }
    return out;
}

}  // namespace dflshield
