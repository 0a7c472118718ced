#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fbsim/errors.hpp"

namespace fbsim {

enum class SegmentKind {
    weight,
    bias,
    bn_gamma,
    bn_beta,
    bn_running_mean,
    bn_running_var,
};

// Running statistics are carried in the parameter vector (they ship with the
// model) but are never gradient-updated.
inline bool is_trainable(SegmentKind k) {
    return k != SegmentKind::bn_running_mean && k != SegmentKind::bn_running_var;
}

// True for every batch-norm-owned segment, trainable or not. FedBN excludes
// all of these from aggregation.
inline bool is_batch_norm(SegmentKind k) {
    switch (k) {
        case SegmentKind::bn_gamma:
        case SegmentKind::bn_beta:
        case SegmentKind::bn_running_mean:
        case SegmentKind::bn_running_var:
            return true;
        default:
            return false;
    }
}

const char* segment_kind_name(SegmentKind k);
SegmentKind segment_kind_from_name(const std::string& s);

struct Segment {
    std::string name;
    SegmentKind kind;
    std::size_t offset = 0;
    std::size_t length = 0;
};

using SegmentMap = std::vector<Segment>;

// Segments must tile [0, total) exactly: contiguous, non-overlapping,
// in offset order. Throws InvalidArgument otherwise.
void validate_segment_map(const SegmentMap& segments, std::size_t total);

// Flat f64 parameter vector plus a shared, immutable segment map. Copies of
// a ParamVector share the map, so layout-compatibility checks are a pointer
// compare in the common case.
class ParamVector {
public:
    ParamVector() = default;

    explicit ParamVector(std::shared_ptr<const SegmentMap> segments);
    ParamVector(std::shared_ptr<const SegmentMap> segments, std::vector<double> values);

    static ParamVector zeros_like(const ParamVector& other) {
        return ParamVector(other.segments_ptr());
    }

    std::size_t size() const { return values_.size(); }
    bool empty() const { return values_.empty(); }

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }
    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    const SegmentMap& segments() const;
    std::shared_ptr<const SegmentMap> segments_ptr() const { return segments_; }

    std::span<double> segment(const Segment& s) {
        return std::span<double>(values_).subspan(s.offset, s.length);
    }
    std::span<const double> segment(const Segment& s) const {
        return std::span<const double>(values_).subspan(s.offset, s.length);
    }

    // Throws InvalidArgument when the name is absent.
    const Segment& find_segment(const std::string& name) const;
    bool has_segment(const std::string& name) const;

    std::span<double> segment(const std::string& name) { return segment(find_segment(name)); }
    std::span<const double> segment(const std::string& name) const { return segment(find_segment(name)); }

    bool same_layout(const ParamVector& other) const;

    void fill(double v) {
        for (double& x : values_) x = v;
    }

private:
    std::shared_ptr<const SegmentMap> segments_;
    std::vector<double> values_;
};

// Throws InvalidArgument when layouts differ.
void check_same_layout(const ParamVector& a, const ParamVector& b, const char* where);

// Number of coordinates belonging to batch-norm segments.
std::size_t batch_norm_param_count(const SegmentMap& segments);

template <typename F>
void for_each_trainable(const SegmentMap& segments, F&& f) {
    for (const Segment& s : segments)
        if (is_trainable(s.kind)) f(s);
}

// y += a * x over trainable coordinates only.
void axpy_trainable(double a, const ParamVector& x, ParamVector& y);

// Squared L2 distance over trainable coordinates (prox/drift penalties).
double sq_dist_trainable(const ParamVector& a, const ParamVector& b);

} // namespace fbsim
