#include "fbsim/metrics.hpp"

#include "fbsim/errors.hpp"

namespace fbsim {

F1Scores f1_from_counts(std::span<const ClassCounts> counts) {
    if (counts.empty()) throw InvalidArgument("f1_from_counts: no classes");
    std::uint64_t tp = 0, fp = 0, fn = 0;
    double macro_sum = 0.0;
    for (const ClassCounts& c : counts) {
        tp += c.tp;
        fp += c.fp;
        fn += c.fn;
        std::uint64_t denom = 2 * c.tp + c.fp + c.fn;
        macro_sum += denom ? 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom) : 0.0;
    }
    F1Scores out;
    std::uint64_t denom = 2 * tp + fp + fn;
    out.micro = denom ? 100.0 * 2.0 * static_cast<double>(tp) / static_cast<double>(denom) : 0.0;
    out.macro = 100.0 * macro_sum / static_cast<double>(counts.size());
    return out;
}

F1Scores f1_scores(std::span<const std::uint8_t> predictions,
                   std::span<const std::uint8_t> labels, std::size_t n, std::size_t num_classes) {
    if (predictions.size() != n * num_classes || labels.size() != n * num_classes)
        throw InvalidArgument("f1_scores: size mismatch");
    std::vector<ClassCounts> counts(num_classes);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < num_classes; ++p) {
            bool pred = predictions[i * num_classes + p] != 0;
            bool truth = labels[i * num_classes + p] != 0;
            if (pred && truth) counts[p].tp++;
            else if (pred && !truth) counts[p].fp++;
            else if (!pred && truth) counts[p].fn++;
        }
    }
    return f1_from_counts(counts);
}

} // namespace fbsim
