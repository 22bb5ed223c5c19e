#pragma once

#include <cstdint>
#include <vector>

namespace splitguard {

// One intermediate representation crossing the split boundary.
// `poison_truth` is attack bookkeeping for evaluation only; defense logic
// never reads it.
struct SmashedRecord {
    std::uint64_t uid = 0;  // unique within one round's pool
    std::size_t sample_id = 0;
    int client_id = 0;
    std::vector<double> z;
    int label = 0;
    bool poison_truth = false;
};

}  // namespace splitguard
