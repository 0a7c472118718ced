#include "fbsim/param_vector.hpp"

namespace fbsim {

const char* segment_kind_name(SegmentKind k) {
    switch (k) {
        case SegmentKind::weight: return "weight";
        case SegmentKind::bias: return "bias";
        case SegmentKind::bn_gamma: return "bn_gamma";
        case SegmentKind::bn_beta: return "bn_beta";
        case SegmentKind::bn_running_mean: return "bn_running_mean";
        case SegmentKind::bn_running_var: return "bn_running_var";
    }
    return "?";
}

SegmentKind segment_kind_from_name(const std::string& s) {
    if (s == "weight") return SegmentKind::weight;
    if (s == "bias") return SegmentKind::bias;
    if (s == "bn_gamma") return SegmentKind::bn_gamma;
    if (s == "bn_beta") return SegmentKind::bn_beta;
    if (s == "bn_running_mean") return SegmentKind::bn_running_mean;
    if (s == "bn_running_var") return SegmentKind::bn_running_var;
    throw InvalidArgument("unknown segment kind: " + s);
}

void validate_segment_map(const SegmentMap& segments, std::size_t total) {
    std::size_t cursor = 0;
    for (const Segment& s : segments) {
        if (s.length == 0)
            throw InvalidArgument("segment '" + s.name + "' has zero length");
        if (s.offset != cursor)
            throw InvalidArgument("segment '" + s.name + "' does not start at offset " +
                                  std::to_string(cursor));
        cursor += s.length;
    }
    if (cursor != total)
        throw InvalidArgument("segments cover " + std::to_string(cursor) + " of " +
                              std::to_string(total) + " parameters");
}

ParamVector::ParamVector(std::shared_ptr<const SegmentMap> segments)
    : segments_(std::move(segments)) {
    if (!segments_) throw InvalidArgument("ParamVector: null segment map");
    std::size_t total = 0;
    for (const Segment& s : *segments_) total += s.length;
    validate_segment_map(*segments_, total);
    values_.assign(total, 0.0);
}

ParamVector::ParamVector(std::shared_ptr<const SegmentMap> segments, std::vector<double> values)
    : segments_(std::move(segments)), values_(std::move(values)) {
    if (!segments_) throw InvalidArgument("ParamVector: null segment map");
    validate_segment_map(*segments_, values_.size());
}

const SegmentMap& ParamVector::segments() const {
    static const SegmentMap empty;
    return segments_ ? *segments_ : empty;
}

const Segment& ParamVector::find_segment(const std::string& name) const {
    for (const Segment& s : segments())
        if (s.name == name) return s;
    throw InvalidArgument("no segment named '" + name + "'");
}

bool ParamVector::has_segment(const std::string& name) const {
    for (const Segment& s : segments())
        if (s.name == name) return true;
    return false;
}

bool ParamVector::same_layout(const ParamVector& other) const {
    if (segments_ == other.segments_) return values_.size() == other.values_.size();
    if (values_.size() != other.values_.size()) return false;
    const SegmentMap& a = segments();
    const SegmentMap& b = other.segments();
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].name != b[i].name || a[i].kind != b[i].kind || a[i].offset != b[i].offset ||
            a[i].length != b[i].length)
            return false;
    }
    return true;
}

void check_same_layout(const ParamVector& a, const ParamVector& b, const char* where) {
    if (!a.same_layout(b))
        throw InvalidArgument(std::string(where) + ": parameter vectors have different layouts");
}

std::size_t batch_norm_param_count(const SegmentMap& segments) {
    std::size_t n = 0;
    for (const Segment& s : segments)
        if (is_batch_norm(s.kind)) n += s.length;
    return n;
}

void axpy_trainable(double a, const ParamVector& x, ParamVector& y) {
    check_same_layout(x, y, "axpy_trainable");
    const double* xs = x.values().data();
    double* ys = y.values().data();
    for_each_trainable(x.segments(), [&](const Segment& s) {
        for (std::size_t i = s.offset; i < s.offset + s.length; ++i) ys[i] += a * xs[i];
    });
}

double sq_dist_trainable(const ParamVector& a, const ParamVector& b) {
    check_same_layout(a, b, "sq_dist_trainable");
    const double* as = a.values().data();
    const double* bs = b.values().data();
    double acc = 0.0;
    for_each_trainable(a.segments(), [&](const Segment& s) {
        for (std::size_t i = s.offset; i < s.offset + s.length; ++i) {
            double d = as[i] - bs[i];
            acc += d * d;
        }
    });
    return acc;
}

} // namespace fbsim
