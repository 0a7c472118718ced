#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace fbsim {

struct ClassCounts {
    std::uint64_t tp = 0, fp = 0, fn = 0;
};

struct F1Scores {
    double micro = 0.0; // percent, pooled counts
    double macro = 0.0; // percent, unweighted class mean; 0/0 class counts as 0
};

F1Scores f1_from_counts(std::span<const ClassCounts> counts);

// predictions/labels: n x P, 0/1.
F1Scores f1_scores(std::span<const std::uint8_t> predictions,
                   std::span<const std::uint8_t> labels, std::size_t n, std::size_t num_classes);

} // namespace fbsim
